//! Single-block cross-attention and its per-concept low-rank adapters.
//!
//! The block computes, for condition tokens `X` (one column per token) and
//! query features `Z` (one column per query),
//!
//! ```text
//! O = W_o · W_v · X · softmax_cols((W_k X)^T W_q Z / sqrt(d_e))
//! ```
//!
//! An adapter perturbs a subset of the four projections with rank-`r`
//! factors, `W' = W + scale * B A`. The default adapted set is `{v, o}`:
//! with queries and keys untouched the attention map is input-determined,
//! which is exactly the regime where the weight-space orthogonality
//! condition (see [`crate::ortho`]) is equivalent to output-shift
//! orthogonality.
//!
//! Taped twins of the forward routines record the *same* primitive calls in
//! the same order, so their values are bit-identical to the untaped ones.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand::Rng;
use std::io::{Read, Write};

/// Index of a concept in the world's vocabulary.
pub type ConceptId = usize;

/// One of the four attention projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Proj {
    Q,
    K,
    V,
    O,
}

impl Proj {
    /// Fixed serialization and iteration order.
    pub const ALL: [Proj; 4] = [Proj::Q, Proj::K, Proj::V, Proj::O];

    /// Slot in per-projection arrays.
    pub fn index(self) -> usize {
        match self {
            Proj::Q => 0,
            Proj::K => 1,
            Proj::V => 2,
            Proj::O => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Proj::Q => "q",
            Proj::K => "k",
            Proj::V => "v",
            Proj::O => "o",
        }
    }
}

/// Set of adapted projections, stored as a 4-bit mask in q,k,v,o order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjSet(u8);

impl ProjSet {
    pub const EMPTY: ProjSet = ProjSet(0);

    /// The default adapted set `{v, o}`.
    pub fn vo() -> Self {
        ProjSet::EMPTY.with(Proj::V).with(Proj::O)
    }

    /// All four projections.
    pub fn qkvo() -> Self {
        Proj::ALL.iter().fold(ProjSet::EMPTY, |s, &p| s.with(p))
    }

    pub fn with(self, p: Proj) -> Self {
        ProjSet(self.0 | (1 << p.index()))
    }

    pub fn contains(self, p: Proj) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    /// True when neither queries nor keys are adapted, so the attention map
    /// is unchanged by the adapter.
    pub fn is_vo_only(self) -> bool {
        !self.contains(Proj::Q) && !self.contains(Proj::K)
    }

    /// Members in the fixed q,k,v,o order.
    pub fn iter(self) -> impl Iterator<Item = Proj> {
        Proj::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits & !0b1111 != 0 {
            return Err(Error::BadArtifact {
                what: "adapter",
                reason: format!("projection bitmask {bits:#x} has unknown bits"),
            });
        }
        Ok(ProjSet(bits))
    }
}

/// Letters of the members in q,k,v,o order, e.g. `"vo"`.
impl std::fmt::Display for ProjSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in self.iter() {
            f.write_str(p.name())?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ProjSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = ProjSet::EMPTY;
        for ch in s.chars() {
            let p = match ch {
                'q' => Proj::Q,
                'k' => Proj::K,
                'v' => Proj::V,
                'o' => Proj::O,
                other => {
                    return Err(Error::InvalidRequest {
                        reason: format!("unknown projection letter {other:?} in {s:?}"),
                    })
                }
            };
            set = set.with(p);
        }
        Ok(set)
    }
}

impl serde::Serialize for ProjSet {
    fn serialize<Sr: serde::Serializer>(&self, serializer: Sr) -> std::result::Result<Sr::Ok, Sr::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for ProjSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The four projection weights of one cross-attention block.
///
/// Shapes: `w_q: d_e x d_z`, `w_k: d_e x d_x`, `w_v: d_v x d_x`,
/// `w_o: d_o x d_v`, where `d_x` is the token embedding width, `d_z` the
/// query feature width, `d_e` the matching space, `d_v`/`d_o` the value and
/// output widths.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<S: Scalar> {
    w_q: Matrix<S>,
    w_k: Matrix<S>,
    w_v: Matrix<S>,
    w_o: Matrix<S>,
}

impl<S: Scalar> AttentionWeights<S> {
    /// Validates the two coupling constraints: `w_q` and `w_k` must map into
    /// the same matching space, and `w_o` must consume `w_v`'s output.
    pub fn new(w_q: Matrix<S>, w_k: Matrix<S>, w_v: Matrix<S>, w_o: Matrix<S>) -> Result<Self> {
        if w_q.rows() != w_k.rows() {
            return Err(Error::DimMismatch {
                op: "attention weights (w_q rows vs w_k rows)",
                lhs_rows: w_q.rows(),
                lhs_cols: w_q.cols(),
                rhs_rows: w_k.rows(),
                rhs_cols: w_k.cols(),
            });
        }
        if w_o.cols() != w_v.rows() {
            return Err(Error::DimMismatch {
                op: "attention weights (w_o cols vs w_v rows)",
                lhs_rows: w_o.rows(),
                lhs_cols: w_o.cols(),
                rhs_rows: w_v.rows(),
                rhs_cols: w_v.cols(),
            });
        }
        Ok(Self { w_q, w_k, w_v, w_o })
    }

    /// Matching-space width used in the softmax temperature.
    pub fn d_e(&self) -> usize {
        self.w_q.rows()
    }

    pub fn proj(&self, p: Proj) -> &Matrix<S> {
        match p {
            Proj::Q => &self.w_q,
            Proj::K => &self.w_k,
            Proj::V => &self.w_v,
            Proj::O => &self.w_o,
        }
    }

    /// Softmax temperature, computed once so taped and untaped paths share
    /// the identical scalar.
    pub fn inv_sqrt_de(&self) -> S {
        S::from_f64(1.0 / (self.d_e() as f64).sqrt())
    }
}

/// Rank-`r` factor pair; the weight delta is `scale * b * a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactors<S: Scalar> {
    /// `out x r`, initialized to zero so a fresh adapter is a no-op.
    pub b: Matrix<S>,
    /// `r x in`, initialized from a small Gaussian.
    pub a: Matrix<S>,
}

/// Per-concept low-rank adapter over a subset of the projections.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<S: Scalar> {
    concept: ConceptId,
    rank: usize,
    scale: S,
    factors: [Option<LoraFactors<S>>; 4],
}

impl<S: Scalar> LoraAdapter<S> {
    /// Adapter with zero `B` and zero `A` for each projection in `adapted`,
    /// shaped against `base`.
    pub fn zeros(
        concept: ConceptId,
        rank: usize,
        scale: S,
        adapted: ProjSet,
        base: &AttentionWeights<S>,
    ) -> Result<Self> {
        let mut factors: [Option<LoraFactors<S>>; 4] = [None, None, None, None];
        for p in adapted.iter() {
            let w = base.proj(p);
            if rank == 0 || rank > w.rows().min(w.cols()) {
                return Err(Error::BadRank { rank, rows: w.rows(), cols: w.cols() });
            }
            factors[p.index()] = Some(LoraFactors {
                b: Matrix::zeros(w.rows(), rank),
                a: Matrix::zeros(rank, w.cols()),
            });
        }
        Ok(Self { concept, rank, scale, factors })
    }

    /// Standard initialization: `B = 0`, `A ~ N(0, std_a^2)`, so the initial
    /// delta is exactly zero and the adapted model starts equal to the base.
    pub fn init<R: Rng + ?Sized>(
        concept: ConceptId,
        rank: usize,
        scale: S,
        adapted: ProjSet,
        base: &AttentionWeights<S>,
        std_a: S,
        rng: &mut R,
    ) -> Result<Self> {
        let mut ad = Self::zeros(concept, rank, scale, adapted, base)?;
        for p in adapted.iter() {
            let f = ad.factors[p.index()].as_mut().expect("just created");
            f.a = Matrix::gaussian(rank, f.a.cols(), std_a, rng);
        }
        Ok(ad)
    }

    pub fn concept(&self) -> ConceptId {
        self.concept
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn scale(&self) -> S {
        self.scale
    }

    /// Which projections this adapter carries factors for.
    pub fn adapted(&self) -> ProjSet {
        Proj::ALL
            .iter()
            .fold(ProjSet::EMPTY, |s, &p| if self.factors[p.index()].is_some() { s.with(p) } else { s })
    }

    pub fn factors(&self, p: Proj) -> Result<&LoraFactors<S>> {
        self.factors[p.index()].as_ref().ok_or(Error::NotAdapted { proj: p.name() })
    }

    pub fn factors_mut(&mut self, p: Proj) -> Result<&mut LoraFactors<S>> {
        self.factors[p.index()].as_mut().ok_or(Error::NotAdapted { proj: p.name() })
    }

    /// The weight delta `scale * B A` for an adapted projection.
    pub fn delta_w(&self, p: Proj) -> Result<Matrix<S>> {
        let f = self.factors(p)?;
        Ok(f.b.matmul(&f.a)?.scale(self.scale))
    }

    /// Same adapter with `B` negated, so merged deltas cancel exactly.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        for slot in out.factors.iter_mut().flatten() {
            slot.b = slot.b.scale(-S::one());
        }
        out
    }
}

impl LoraAdapter<f64> {
    /// Header (concept, rank, scale, adapted bitmask) then `B` and `A` for
    /// each adapted projection in q,k,v,o order, in the matrix binary layout.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.concept as u64).to_le_bytes())?;
        w.write_all(&(self.rank as u64).to_le_bytes())?;
        w.write_all(&self.scale.to_le_bytes())?;
        w.write_all(&(self.adapted().bits() as u64).to_le_bytes())?;
        for p in self.adapted().iter() {
            let f = self.factors(p)?;
            f.b.write_binary(w)?;
            f.a.write_binary(w)?;
        }
        Ok(())
    }

    /// Inverse of [`write_binary`](Self::write_binary), with shape checks.
    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let concept = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let rank = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let scale = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let bits = u64::from_le_bytes(b8);
        if bits > u8::MAX as u64 {
            return Err(Error::BadArtifact { what: "adapter", reason: "oversized bitmask".into() });
        }
        let adapted = ProjSet::from_bits(bits as u8)?;
        if rank == 0 {
            return Err(Error::BadArtifact { what: "adapter", reason: "zero rank".into() });
        }
        if !scale.is_finite() {
            return Err(Error::BadArtifact { what: "adapter", reason: "non-finite scale".into() });
        }
        let mut factors: [Option<LoraFactors<f64>>; 4] = [None, None, None, None];
        for p in adapted.iter() {
            let b = Matrix::read_binary(r)?;
            let a = Matrix::read_binary(r)?;
            if b.cols() != rank || a.rows() != rank {
                return Err(Error::BadArtifact {
                    what: "adapter",
                    reason: format!(
                        "factor shapes {}x{} / {}x{} disagree with rank {rank} for projection {}",
                        b.rows(),
                        b.cols(),
                        a.rows(),
                        a.cols(),
                        p.name()
                    ),
                });
            }
            factors[p.index()] = Some(LoraFactors { b, a });
        }
        Ok(Self { concept, rank, scale, factors })
    }
}

/// Base weights plus the summed deltas of `adapters`, as a new weight set.
///
/// This is the single canonical way any number of adapters modify the block;
/// composition strategies and training both route through it, which is what
/// makes their singleton cases coincide bit-for-bit.
pub fn effective_weights<S: Scalar>(
    base: &AttentionWeights<S>,
    adapters: &[&LoraAdapter<S>],
) -> Result<AttentionWeights<S>> {
    let mut per_proj: [Matrix<S>; 4] = [
        base.proj(Proj::Q).clone(),
        base.proj(Proj::K).clone(),
        base.proj(Proj::V).clone(),
        base.proj(Proj::O).clone(),
    ];
    for ad in adapters {
        for p in ad.adapted().iter() {
            per_proj[p.index()] = per_proj[p.index()].add(&ad.delta_w(p)?)?;
        }
    }
    let [q, k, v, o] = per_proj;
    AttentionWeights::new(q, k, v, o)
}

/// Cross-attention output for tokens `X` and queries `Z` under `weights`.
pub fn attention_output<S: Scalar>(
    weights: &AttentionWeights<S>,
    x: &Matrix<S>,
    z: &Matrix<S>,
) -> Result<Matrix<S>> {
    let kx = weights.proj(Proj::K).matmul(x)?;
    let qz = weights.proj(Proj::Q).matmul(z)?;
    let logits = kx.transpose().matmul(&qz)?.scale(weights.inv_sqrt_de());
    let attn = logits.softmax_columns();
    let vx = weights.proj(Proj::V).matmul(x)?;
    weights.proj(Proj::O).matmul(&vx.matmul(&attn)?)
}

/// The attention map `softmax_cols((W_k X)^T W_q Z / sqrt(d_e))` alone.
pub fn attention_map<S: Scalar>(
    weights: &AttentionWeights<S>,
    x: &Matrix<S>,
    z: &Matrix<S>,
) -> Result<Matrix<S>> {
    let kx = weights.proj(Proj::K).matmul(x)?;
    let qz = weights.proj(Proj::Q).matmul(z)?;
    Ok(kx.transpose().matmul(&qz)?.scale(weights.inv_sqrt_de()).softmax_columns())
}

/// [`attention_output`] under base weights modified by `adapters`.
pub fn adapted_attention_output<S: Scalar>(
    base: &AttentionWeights<S>,
    adapters: &[&LoraAdapter<S>],
    x: &Matrix<S>,
    z: &Matrix<S>,
) -> Result<Matrix<S>> {
    attention_output(&effective_weights(base, adapters)?, x, z)
}

/// Output shift an adapter induces: `O(with) - O(without)`, same `X`, `Z`.
pub fn induced_shift<S: Scalar>(
    base: &AttentionWeights<S>,
    adapter: &LoraAdapter<S>,
    x: &Matrix<S>,
    z: &Matrix<S>,
) -> Result<Matrix<S>> {
    adapted_attention_output(base, &[adapter], x, z)?.sub(&attention_output(base, x, z)?)
}

/// Taped effective projections for one adapter over the base block.
///
/// Returns the adapter's `(B, A)` leaf pairs (in the adapted set's q,k,v,o
/// order) for gradient extraction, plus per-projection weight vars.
pub struct TapedAdapter {
    /// `(b, a)` leaves in adapted-set order.
    pub leaves: Vec<(Var, Var)>,
    /// `scale * B A` per projection where adapted, q,k,v,o order.
    pub deltas: [Option<Var>; 4],
    /// Effective `W + scale * B A` per projection, q,k,v,o order.
    pub weights: [Var; 4],
}

/// Record `W' = W + scale * B A` for each projection onto `tape`.
///
/// Projections outside the adapted set are recorded as constants of the base
/// weights. The op sequence per adapted projection mirrors
/// [`LoraAdapter::delta_w`] plus the add in [`effective_weights`], keeping
/// taped values bit-identical to untaped ones.
pub fn tape_adapter<S: Scalar>(
    tape: &mut Tape<S>,
    base: &AttentionWeights<S>,
    adapter: &LoraAdapter<S>,
) -> Result<TapedAdapter> {
    let mut leaves = Vec::new();
    let mut deltas = [None; 4];
    let mut weights = Vec::with_capacity(4);
    for p in Proj::ALL {
        let w = tape.constant(base.proj(p).clone());
        weights.push(if adapter.adapted().contains(p) {
            let f = adapter.factors(p)?;
            let b = tape.constant(f.b.clone());
            let a = tape.constant(f.a.clone());
            leaves.push((b, a));
            let ba = tape.matmul(b, a)?;
            let delta = tape.scale(ba, adapter.scale())?;
            deltas[p.index()] = Some(delta);
            tape.add(w, delta)?
        } else {
            w
        });
    }
    let weights: [Var; 4] = weights.try_into().expect("four projections");
    Ok(TapedAdapter { leaves, deltas, weights })
}

/// Taped twin of [`attention_output`] over per-projection weight vars.
pub fn attention_output_taped<S: Scalar>(
    tape: &mut Tape<S>,
    weights: &[Var; 4],
    inv_sqrt_de: S,
    x: Var,
    z: Var,
) -> Result<Var> {
    let kx = tape.matmul(weights[Proj::K.index()], x)?;
    let qz = tape.matmul(weights[Proj::Q.index()], z)?;
    let kxt = tape.transpose(kx)?;
    let raw = tape.matmul(kxt, qz)?;
    let logits = tape.scale(raw, inv_sqrt_de)?;
    let attn = tape.softmax_columns(logits)?;
    let vx = tape.matmul(weights[Proj::V.index()], x)?;
    let vxa = tape.matmul(vx, attn)?;
    tape.matmul(weights[Proj::O.index()], vxa)
}
