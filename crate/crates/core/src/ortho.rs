//! Orthogonality between adapters: scores, training losses, and the
//! weight-space oracle.
//!
//! Two adapters interfere when their induced output shifts correlate. This
//! module measures that three ways:
//!
//! - **Input-aware**: the orthogonality score `OS = 1 - cos(dO_i, dO_j)` on
//!   sampled inputs, turned into a loss that *maximizes* the mean score
//!   (perfect orthogonality sits at `OS = 1`, so the loss's minimum is -1
//!   per pair at exact orthogonality and -2 in the anti-aligned limit).
//! - **Input-agnostic**: for adapters confined to the value/output
//!   projections, the shift factors as `dO = M X A` with
//!   `M = W_o dW_v + dW_o W_v + dW_o dW_v` and `A` the (input-determined)
//!   attention map. If `M_i^T M_j + M_j^T M_i = 0`, the shifts are
//!   orthogonal for *every* shared input — so the loss penalizes the
//!   squared Frobenius norm of that symmetrized residual. (As a bilinear
//!   identity it needs both shifts evaluated on the same `X`, `Z`; all
//!   callers here do that.)
//! - **Parameter-space** (ablation): penalize `||B_i^T B_j||_F^2` directly.
//!
//! [`theorem1_oracle`] is the numerical witness tying the second to the
//! first: pairs constructed to satisfy the residual condition must show
//! near-zero shift cosines on random inputs, and random pairs must not.

use crate::attention::{
    attention_output, attention_output_taped, tape_adapter, AttentionWeights, ConceptId,
    LoraAdapter, Proj, ProjSet, TapedAdapter,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::seeds::rng_at;
use crate::tape::{Tape, Var};

/// Frobenius norms below this are treated as vanished shifts; cosine-based
/// quantities skip such pairs rather than divide by noise.
pub const EPS_NORM: f64 = 1e-12;

/// Orthogonality score `1 - <a,b>_F / (||a|| ||b||)`, in `[0, 2]`.
///
/// `0` means aligned, `1` orthogonal, `2` anti-aligned. Errors when either
/// norm is below [`EPS_NORM`]; callers treat that pair as degenerate.
pub fn orthogonality_score<S: Scalar>(d_i: &Matrix<S>, d_j: &Matrix<S>) -> Result<f64> {
    let ni = d_i.frobenius_norm().to_f64();
    let nj = d_j.frobenius_norm().to_f64();
    if ni < EPS_NORM || nj < EPS_NORM {
        return Err(Error::DegenerateShift { i: 0, j: 1, eps: EPS_NORM });
    }
    let inner = d_i.frobenius_inner(d_j)?.to_f64();
    Ok(1.0 - inner / (ni * nj))
}

/// Bookkeeping from one input-aware loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AwareStats {
    /// (pair, batch-item) terms that produced a score.
    pub evaluated: usize,
    /// Terms skipped because a shift was degenerate; they contribute 0 to
    /// the loss sum but stay in its denominator.
    pub skipped: usize,
    /// Mean orthogonality score over the evaluated terms (0 if none).
    pub mean_os: f64,
}

fn validate_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Empty { what: "pair list" });
    }
    for &(i, j) in pairs {
        if i == j || i >= n || j >= n {
            return Err(Error::InvalidRequest {
                reason: format!("pair ({i}, {j}) invalid for {n} adapters"),
            });
        }
    }
    Ok(())
}

/// Record the input-aware orthogonality loss on `tape`:
/// `-(1/total) * sum over pairs and batch items of OS(dO_i, dO_j)`,
/// where both shifts in a pair are evaluated on the same `(X, Z)`.
///
/// `taped` must hold one [`TapedAdapter`] per adapter, indexed as `pairs`
/// indexes them. Degenerate terms are skipped (see [`AwareStats`]).
pub fn loss_input_aware_taped<S: Scalar>(
    tape: &mut Tape<S>,
    base: &AttentionWeights<S>,
    taped: &[TapedAdapter],
    pairs: &[(usize, usize)],
    batch: &[(Matrix<S>, Matrix<S>)],
) -> Result<(Var, AwareStats)> {
    validate_pairs(taped.len(), pairs)?;
    if batch.is_empty() {
        return Err(Error::Empty { what: "input batch" });
    }
    let inv = base.inv_sqrt_de();
    let mut sum: Option<Var> = None;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    let mut os_sum = 0.0f64;

    for (x, z) in batch {
        let o0 = tape.constant(attention_output(base, x, z)?);
        let vx = tape.constant(x.clone());
        let vz = tape.constant(z.clone());
        // shift node and its current norm, computed once per adapter
        let mut shifts: Vec<Option<(Var, f64)>> = vec![None; taped.len()];
        for &(i, j) in pairs {
            for idx in [i, j] {
                if shifts[idx].is_none() {
                    let oi = attention_output_taped(tape, &taped[idx].weights, inv, vx, vz)?;
                    let d = tape.sub(oi, o0)?;
                    let norm = tape.value(d)?.frobenius_norm().to_f64();
                    shifts[idx] = Some((d, norm));
                }
            }
            let (di, ni) = shifts[i].expect("computed above");
            let (dj, nj) = shifts[j].expect("computed above");
            if ni < EPS_NORM || nj < EPS_NORM {
                skipped += 1;
                continue;
            }
            let inner = tape.frobenius_inner(di, dj)?;
            let norm_i = tape.frobenius_norm(di)?;
            let norm_j = tape.frobenius_norm(dj)?;
            let den = tape.hadamard(norm_i, norm_j)?;
            let cos = tape.div(inner, den)?;
            let os = tape.affine(cos, -S::one(), S::one())?;
            os_sum += tape.value(os)?.scalar()?.to_f64();
            evaluated += 1;
            sum = Some(match sum {
                Some(s) => tape.add(s, os)?,
                None => os,
            });
        }
    }

    let total = pairs.len() * batch.len();
    debug_assert_eq!(total, evaluated + skipped);
    let loss = match sum {
        Some(s) => tape.affine(s, S::from_f64(-1.0 / total as f64), S::zero())?,
        // every term degenerate: the loss is the constant 0
        None => tape.constant(Matrix::scalar_mat(S::zero())),
    };
    let mean_os = if evaluated > 0 { os_sum / evaluated as f64 } else { 0.0 };
    Ok((loss, AwareStats { evaluated, skipped, mean_os }))
}

/// Value-level input-aware loss; see [`loss_input_aware_taped`].
pub fn loss_input_aware<S: Scalar>(
    base: &AttentionWeights<S>,
    adapters: &[LoraAdapter<S>],
    pairs: &[(usize, usize)],
    batch: &[(Matrix<S>, Matrix<S>)],
) -> Result<(f64, AwareStats)> {
    let mut tape = Tape::new();
    let taped: Vec<TapedAdapter> =
        adapters.iter().map(|a| tape_adapter(&mut tape, base, a)).collect::<Result<_>>()?;
    let (loss, stats) = loss_input_aware_taped(&mut tape, base, &taped, pairs, batch)?;
    Ok((tape.value(loss)?.scalar()?.to_f64(), stats))
}

/// The weight-space shift matrix `M = W_o dW_v + dW_o W_v + dW_o dW_v`,
/// with zero deltas for projections outside the adapter's adapted set.
pub fn build_m<S: Scalar>(
    base: &AttentionWeights<S>,
    adapter: &LoraAdapter<S>,
) -> Result<Matrix<S>> {
    let wo = base.proj(Proj::O);
    let wv = base.proj(Proj::V);
    let dv = adapter.adapted().contains(Proj::V).then(|| adapter.delta_w(Proj::V)).transpose()?;
    let dov = adapter.adapted().contains(Proj::O).then(|| adapter.delta_w(Proj::O)).transpose()?;
    let mut m = Matrix::zeros(wo.rows(), wv.cols());
    if let Some(dv) = &dv {
        m = m.add(&wo.matmul(dv)?)?;
    }
    if let Some(dov) = &dov {
        m = m.add(&dov.matmul(wv)?)?;
    }
    if let (Some(dv), Some(dov)) = (&dv, &dov) {
        m = m.add(&dov.matmul(dv)?)?;
    }
    Ok(m)
}

/// Taped twin of [`build_m`], mirroring its term order.
pub fn build_m_taped<S: Scalar>(
    tape: &mut Tape<S>,
    base: &AttentionWeights<S>,
    taped: &TapedAdapter,
) -> Result<Var> {
    let wo = tape.constant(base.proj(Proj::O).clone());
    let wv = tape.constant(base.proj(Proj::V).clone());
    let dv = taped.deltas[Proj::V.index()];
    let dov = taped.deltas[Proj::O.index()];
    let mut m =
        tape.constant(Matrix::zeros(base.proj(Proj::O).rows(), base.proj(Proj::V).cols()));
    if let Some(dv) = dv {
        let t = tape.matmul(wo, dv)?;
        m = tape.add(m, t)?;
    }
    if let Some(dov) = dov {
        let t = tape.matmul(dov, wv)?;
        m = tape.add(m, t)?;
    }
    if let (Some(dv), Some(dov)) = (dv, dov) {
        let t = tape.matmul(dov, dv)?;
        m = tape.add(m, t)?;
    }
    Ok(m)
}

/// Symmetrized cross-Gram residual `(M_i^T M_j + M_j^T M_i) / 2`.
/// Zero exactly when the pair satisfies the weight-space orthogonality
/// condition.
pub fn skew_residual<S: Scalar>(m_i: &Matrix<S>, m_j: &Matrix<S>) -> Result<Matrix<S>> {
    let ij = m_i.transpose().matmul(m_j)?;
    let ji = m_j.transpose().matmul(m_i)?;
    Ok(ij.add(&ji)?.scale(S::from_f64(0.5)))
}

/// Taped twin of [`skew_residual`].
pub fn skew_residual_taped<S: Scalar>(tape: &mut Tape<S>, m_i: Var, m_j: Var) -> Result<Var> {
    let mit = tape.transpose(m_i)?;
    let ij = tape.matmul(mit, m_j)?;
    let mjt = tape.transpose(m_j)?;
    let ji = tape.matmul(mjt, m_i)?;
    let s = tape.add(ij, ji)?;
    tape.scale(s, S::from_f64(0.5))
}

/// Record the input-agnostic loss on `tape`: mean over pairs of
/// `||skew_residual(M_i, M_j)||_F^2`. Non-negative; zero exactly at the
/// weight-space orthogonality condition.
pub fn loss_input_agnostic_taped<S: Scalar>(
    tape: &mut Tape<S>,
    base: &AttentionWeights<S>,
    taped: &[TapedAdapter],
    pairs: &[(usize, usize)],
) -> Result<Var> {
    validate_pairs(taped.len(), pairs)?;
    let mut ms: Vec<Option<Var>> = vec![None; taped.len()];
    let mut sum: Option<Var> = None;
    for &(i, j) in pairs {
        for idx in [i, j] {
            if ms[idx].is_none() {
                ms[idx] = Some(build_m_taped(tape, base, &taped[idx])?);
            }
        }
        let res = skew_residual_taped(tape, ms[i].expect("set"), ms[j].expect("set"))?;
        let sq = tape.frobenius_inner(res, res)?;
        sum = Some(match sum {
            Some(s) => tape.add(s, sq)?,
            None => sq,
        });
    }
    tape.affine(sum.expect("pairs non-empty"), S::from_f64(1.0 / pairs.len() as f64), S::zero())
}

/// Value-level input-agnostic loss; see [`loss_input_agnostic_taped`].
pub fn loss_input_agnostic<S: Scalar>(
    base: &AttentionWeights<S>,
    adapters: &[LoraAdapter<S>],
    pairs: &[(usize, usize)],
) -> Result<f64> {
    let mut tape = Tape::new();
    let taped: Vec<TapedAdapter> =
        adapters.iter().map(|a| tape_adapter(&mut tape, base, a)).collect::<Result<_>>()?;
    let loss = loss_input_agnostic_taped(&mut tape, base, &taped, pairs)?;
    Ok(tape.value(loss)?.scalar()?.to_f64())
}

/// Record the parameter-space orthogonality penalty on `tape`: mean over
/// pairs and adapted projections of `||B_i^T B_j||_F^2`.
///
/// Requires every paired adapter to share the adapted set and rank — the
/// penalty compares factor spaces, which is meaningless otherwise.
pub fn pbo_loss_taped<S: Scalar>(
    tape: &mut Tape<S>,
    adapters: &[LoraAdapter<S>],
    taped: &[TapedAdapter],
    pairs: &[(usize, usize)],
) -> Result<Var> {
    validate_pairs(adapters.len(), pairs)?;
    let mut sum: Option<Var> = None;
    let mut terms = 0usize;
    for &(i, j) in pairs {
        if adapters[i].adapted() != adapters[j].adapted() {
            return Err(Error::InvalidRequest {
                reason: format!("pair ({i}, {j}) adapts different projection sets"),
            });
        }
        if adapters[i].rank() != adapters[j].rank() {
            return Err(Error::InvalidRequest {
                reason: format!(
                    "pair ({i}, {j}) has mismatched ranks {} and {}",
                    adapters[i].rank(),
                    adapters[j].rank()
                ),
            });
        }
        for (slot, p) in adapters[i].adapted().iter().enumerate() {
            debug_assert_eq!(adapters[i].adapted().iter().nth(slot), Some(p));
            let (bi, _) = taped[i].leaves[slot];
            let (bj, _) = taped[j].leaves[slot];
            let bit = tape.transpose(bi)?;
            let cross = tape.matmul(bit, bj)?;
            let sq = tape.frobenius_inner(cross, cross)?;
            terms += 1;
            sum = Some(match sum {
                Some(s) => tape.add(s, sq)?,
                None => sq,
            });
        }
    }
    tape.affine(sum.expect("pairs validated non-empty"), S::from_f64(1.0 / terms as f64), S::zero())
}

/// Value-level parameter-space penalty; see [`pbo_loss_taped`].
pub fn pbo_loss<S: Scalar>(
    base: &AttentionWeights<S>,
    adapters: &[LoraAdapter<S>],
    pairs: &[(usize, usize)],
) -> Result<f64> {
    let mut tape = Tape::new();
    let taped: Vec<TapedAdapter> =
        adapters.iter().map(|a| tape_adapter(&mut tape, base, a)).collect::<Result<_>>()?;
    let loss = pbo_loss_taped(&mut tape, adapters, &taped, pairs)?;
    Ok(tape.value(loss)?.scalar()?.to_f64())
}

/// Outcome of [`theorem1_oracle`] on one adapter pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremReport {
    /// Random input draws examined.
    pub trials: usize,
    /// Max over trials of `|<dO_i, dO_j>| / (||dO_i|| ||dO_j|| + eps)`.
    pub max_abs_cosine: f64,
    /// `||skew_residual(M_i, M_j)||_F` for the pair.
    pub skew_residual_norm: f64,
    /// Trials where either shift's norm fell below [`EPS_NORM`].
    pub degenerate_trials: usize,
}

impl TheoremReport {
    /// True when any trial had a vanished shift (e.g. a zero adapter).
    pub fn degenerate(&self) -> bool {
        self.degenerate_trials > 0
    }

    /// The quantitative claim: residual below `1e-10` forces max cosine
    /// below `1e-8`.
    pub fn consistent(&self) -> bool {
        self.skew_residual_norm > 1e-10 || self.max_abs_cosine <= 1e-8
    }
}

/// Numerical witness for the weight-space orthogonality condition: sample
/// `trials` random `(X, Z)`, compare both adapters' induced shifts on each.
///
/// Both adapters must be confined to `{v, o}` — with adapted queries or keys
/// the attention map itself moves and the factorization behind the
/// condition does not hold.
pub fn theorem1_oracle(
    base: &AttentionWeights<f64>,
    adapter_i: &LoraAdapter<f64>,
    adapter_j: &LoraAdapter<f64>,
    trials: usize,
    seed: u64,
) -> Result<TheoremReport> {
    for ad in [adapter_i, adapter_j] {
        if !ad.adapted().is_vo_only() {
            return Err(Error::TheoremAssumption { concept: ad.concept() });
        }
    }
    if trials == 0 {
        return Err(Error::Empty { what: "trials" });
    }
    let m_i = build_m(base, adapter_i)?;
    let m_j = build_m(base, adapter_j)?;
    let skew_residual_norm = skew_residual(&m_i, &m_j)?.frobenius_norm();

    let d_x = base.proj(Proj::K).cols();
    let d_z = base.proj(Proj::Q).cols();
    let (tokens, queries) = (3, 2);
    let mut rng = rng_at(seed, &["theorem1-oracle"], &[trials as u64]);
    let mut max_abs_cosine = 0.0f64;
    let mut degenerate_trials = 0usize;
    for _ in 0..trials {
        let x = Matrix::gaussian(d_x, tokens, 1.0, &mut rng);
        let z = Matrix::gaussian(d_z, queries, 1.0, &mut rng);
        let o0 = attention_output(base, &x, &z)?;
        let di = crate::attention::adapted_attention_output(base, &[adapter_i], &x, &z)?.sub(&o0)?;
        let dj = crate::attention::adapted_attention_output(base, &[adapter_j], &x, &z)?.sub(&o0)?;
        let (ni, nj) = (di.frobenius_norm(), dj.frobenius_norm());
        if ni < EPS_NORM || nj < EPS_NORM {
            degenerate_trials += 1;
        }
        let cosine = di.frobenius_inner(&dj)?.abs() / (ni * nj + EPS_NORM);
        if cosine > max_abs_cosine {
            max_abs_cosine = cosine;
        }
    }
    Ok(TheoremReport { trials, max_abs_cosine, skew_residual_norm, degenerate_trials })
}

/// Random attention block whose output projection is square orthogonal —
/// the shape [`skew_pair`] needs to realize arbitrary target `M` matrices
/// through value-projection factors.
pub fn orthogonal_wo_block(
    d_x: usize,
    d_z: usize,
    d_e: usize,
    d_vo: usize,
    seed: u64,
) -> Result<AttentionWeights<f64>> {
    let mut rng = rng_at(seed, &["orthogonal-wo-block"], &[]);
    AttentionWeights::new(
        Matrix::gaussian(d_e, d_z, 0.5, &mut rng),
        Matrix::gaussian(d_e, d_x, 0.5, &mut rng),
        Matrix::gaussian(d_vo, d_x, 0.5, &mut rng),
        Matrix::random_orthogonal(d_vo, &mut rng),
    )
}

/// Construct a v-only adapter pair that satisfies the weight-space
/// orthogonality condition exactly (up to rounding): `M_i` has orthonormal
/// columns `Q` selecting the first `rank` input coordinates and
/// `M_j = Q S` for a random skew-symmetric `S`, realized through
/// `dW_v = W_o^T M` (valid because `W_o` is orthogonal).
///
/// Requires `rank >= 2` — the only 1x1 skew-symmetric matrix is zero, which
/// would make the second adapter degenerate.
pub fn skew_pair(
    base: &AttentionWeights<f64>,
    concept_i: ConceptId,
    concept_j: ConceptId,
    rank: usize,
    seed: u64,
) -> Result<(LoraAdapter<f64>, LoraAdapter<f64>)> {
    let wo = base.proj(Proj::O);
    if wo.rows() != wo.cols() {
        return Err(Error::InvalidRequest {
            reason: format!("skew construction needs square w_o, got {}x{}", wo.rows(), wo.cols()),
        });
    }
    let gram_err = wo
        .transpose()
        .matmul(wo)?
        .max_abs_diff(&Matrix::identity(wo.rows()))?;
    if gram_err > 1e-10 {
        return Err(Error::InvalidRequest {
            reason: format!("skew construction needs orthogonal w_o (gram error {gram_err:.2e})"),
        });
    }
    let d = wo.rows();
    let d_x = base.proj(Proj::V).cols();
    if rank < 2 || rank > d.min(d_x) {
        return Err(Error::BadRank { rank, rows: d, cols: d_x });
    }

    let mut rng = rng_at(seed, &["skew-pair"], &[concept_i as u64, concept_j as u64]);
    let u = Matrix::random_orthogonal(d, &mut rng);
    let q = Matrix::from_fn(d, rank, |r, c| u.get(r, c));
    let g = Matrix::gaussian(rank, rank, 1.0, &mut rng);
    let s = g.sub(&g.transpose())?.scale(0.5);
    // A = [I_r | 0] so dW_v's column space is exactly M's
    let a = Matrix::from_fn(rank, d_x, |r, c| if r == c { 1.0 } else { 0.0 });
    let b_i = wo.transpose().matmul(&q)?;
    let b_j = wo.transpose().matmul(&q.matmul(&s)?)?;

    let vonly = ProjSet::EMPTY.with(Proj::V);
    let mut ad_i = LoraAdapter::zeros(concept_i, rank, 1.0, vonly, base)?;
    let mut ad_j = LoraAdapter::zeros(concept_j, rank, 1.0, vonly, base)?;
    let fi = ad_i.factors_mut(Proj::V)?;
    fi.b = b_i;
    fi.a = a.clone();
    let fj = ad_j.factors_mut(Proj::V)?;
    fj.b = b_j;
    fj.a = a;
    Ok((ad_i, ad_j))
}

/// Symmetric matrix of mean pairwise shift cosines over a batch, with
/// missing entries where a pair never produced two usable shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct CrosstalkHeatmap {
    concepts: Vec<ConceptId>,
    /// Row-major `n x n`; `None` marks a degenerate (unmeasurable) pair.
    values: Vec<Option<f64>>,
}

impl CrosstalkHeatmap {
    pub fn n(&self) -> usize {
        self.concepts.len()
    }

    pub fn concepts(&self) -> &[ConceptId] {
        &self.concepts
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.concepts.len() + j]
    }

    /// CSV with a leading header row and column of concept ids; missing
    /// entries are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("concept");
        for c in &self.concepts {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (i, c) in self.concepts.iter().enumerate() {
            out.push_str(&c.to_string());
            for j in 0..self.concepts.len() {
                match self.get(i, j) {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Mean cosine over the given index set's internal pairs, skipping
    /// missing entries; `None` if nothing was measurable.
    pub fn mean_over_pairs(&self, idx: &[usize]) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                if let Some(v) = self.get(i, j) {
                    sum += v;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Mean cosine between two disjoint index sets, skipping missing entries.
    pub fn mean_between(&self, left: &[usize], right: &[usize]) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for &i in left {
            for &j in right {
                if let Some(v) = self.get(i, j) {
                    sum += v;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Mean pairwise cosine similarity (`1 - OS`) of induced shifts over a
/// shared input batch. Diagonal is 1 by definition.
pub fn crosstalk_heatmap(
    base: &AttentionWeights<f64>,
    adapters: &[LoraAdapter<f64>],
    batch: &[(Matrix<f64>, Matrix<f64>)],
) -> Result<CrosstalkHeatmap> {
    if adapters.len() < 2 {
        return Err(Error::Empty { what: "adapters (heatmap needs at least two)" });
    }
    if batch.is_empty() {
        return Err(Error::Empty { what: "input batch" });
    }
    let n = adapters.len();
    // shifts[k][item]
    let mut shifts: Vec<Vec<Matrix<f64>>> = Vec::with_capacity(n);
    for ad in adapters {
        let mut per_item = Vec::with_capacity(batch.len());
        for (x, z) in batch {
            per_item.push(crate::attention::induced_shift(base, ad, x, z)?);
        }
        shifts.push(per_item);
    }
    let mut values = vec![None; n * n];
    for i in 0..n {
        values[i * n + i] = Some(1.0);
        for j in i + 1..n {
            let mut sum = 0.0;
            let mut count = 0usize;
            for item in 0..batch.len() {
                let (di, dj) = (&shifts[i][item], &shifts[j][item]);
                let (ni, nj) = (di.frobenius_norm(), dj.frobenius_norm());
                if ni < EPS_NORM || nj < EPS_NORM {
                    continue;
                }
                sum += di.frobenius_inner(dj)? / (ni * nj);
                count += 1;
            }
            let entry = (count > 0).then(|| sum / count as f64);
            values[i * n + j] = entry;
            values[j * n + i] = entry;
        }
    }
    Ok(CrosstalkHeatmap { concepts: adapters.iter().map(|a| a.concept()).collect(), values })
}
