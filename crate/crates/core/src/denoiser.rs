//! Toy conditional denoiser: one cross-attention block plus small readout
//! heads predicting the noise in a 2-D diffusion process.
//!
//! The query packs the noisy point with smooth features of the signal level,
//! `z = [x_t; u(t)]`; condition tokens enter as attention inputs `X`. The
//! prediction is bilinear in the attention output `o` and the time features:
//!
//! ```text
//! eps_hat = (p u + (g o)(h u)) * x_t + (q1 u)(R1 o) + (q2 u)(R2 o)
//! ```
//!
//! The feature basis `u` includes the exact time profiles of the per-mode
//! optimal predictor for the world's two mode widths, so a well-trained
//! denoiser can match it closely. Every op is a [`Matrix`] primitive with a
//! taped twin, keeping taped and untaped predictions bit-identical.

use std::io::{Read, Write};

use crate::attention::{
    adapted_attention_output, attention_output_taped, AttentionWeights, LoraAdapter,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::schedule::NoiseSchedule;
use crate::seeds::rng_at;
use crate::tape::{Tape, Var};
use crate::world::{ConceptWorld, Condition, WorldSpec, EMBED_DIM};

/// Latent (sample) dimensionality.
pub const LATENT_DIM: usize = 2;
/// Number of smooth time features in `u(t)`.
pub const N_TIME_FEATURES: usize = 6;
/// Query dimensionality: `[x_t; u(t)]`.
pub const QUERY_DIM: usize = LATENT_DIM + N_TIME_FEATURES;
/// Attention embedding / value / output dimensionality.
pub const MODEL_DIM: usize = 16;

/// Readout parameters combining the attention output with time features.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    /// 1 x 6: condition-free scaling of `x_t`.
    pub p: Matrix<f64>,
    /// 1 x d_o: condition gate for the `x_t` scaling.
    pub g: Matrix<f64>,
    /// 1 x 6: time profile of the gated scaling.
    pub h: Matrix<f64>,
    /// 1 x 6 and 2 x d_o: first drift head.
    pub q1: Matrix<f64>,
    pub r1: Matrix<f64>,
    /// 1 x 6 and 2 x d_o: second drift head.
    pub q2: Matrix<f64>,
    pub r2: Matrix<f64>,
}

/// The toy denoiser: frozen world, one attention block, readout heads.
#[derive(Debug, Clone)]
pub struct Denoiser {
    world: ConceptWorld,
    weights: AttentionWeights<f64>,
    heads: Heads,
    frozen: bool,
}

/// Tape leaves for all trainable parameters.
#[derive(Clone, Copy)]
pub struct TapedHeads {
    pub p: Var,
    pub g: Var,
    pub h: Var,
    pub q1: Var,
    pub r1: Var,
    pub q2: Var,
    pub r2: Var,
}

/// Per-projection weight vars plus head vars; swap `weights` for an
/// adapter's effective projections to predict through adapters on tape.
#[derive(Clone, Copy)]
pub struct TapedDenoiser {
    pub weights: [Var; 4],
    pub heads: TapedHeads,
}

impl TapedDenoiser {
    /// All parameter leaves in [`Denoiser::params`] order.
    pub fn leaves(&self) -> [Var; 11] {
        let h = &self.heads;
        [
            self.weights[0],
            self.weights[1],
            self.weights[2],
            self.weights[3],
            h.p,
            h.g,
            h.h,
            h.q1,
            h.r1,
            h.q2,
            h.r2,
        ]
    }
}

impl Denoiser {
    /// Fresh random denoiser over `world`, deterministic in `seed`.
    pub fn new(world: ConceptWorld, seed: u64) -> Result<Self> {
        let mut rng = rng_at(seed, &["denoiser-init"], &[]);
        let std_w = 0.25;
        let std_h = 0.3;
        let w_q = Matrix::gaussian(MODEL_DIM, QUERY_DIM, std_w, &mut rng);
        let w_k = Matrix::gaussian(MODEL_DIM, EMBED_DIM, std_w, &mut rng);
        let w_v = Matrix::gaussian(MODEL_DIM, EMBED_DIM, std_w, &mut rng);
        let w_o = Matrix::gaussian(MODEL_DIM, MODEL_DIM, std_w, &mut rng);
        let weights = AttentionWeights::new(w_q, w_k, w_v, w_o)?;
        let heads = Heads {
            p: Matrix::gaussian(1, N_TIME_FEATURES, std_h, &mut rng),
            g: Matrix::gaussian(1, MODEL_DIM, std_h, &mut rng),
            h: Matrix::gaussian(1, N_TIME_FEATURES, std_h, &mut rng),
            q1: Matrix::gaussian(1, N_TIME_FEATURES, std_h, &mut rng),
            r1: Matrix::gaussian(LATENT_DIM, MODEL_DIM, std_h, &mut rng),
            q2: Matrix::gaussian(1, N_TIME_FEATURES, std_h, &mut rng),
            r2: Matrix::gaussian(LATENT_DIM, MODEL_DIM, std_h, &mut rng),
        };
        Ok(Self { world, weights, heads, frozen: false })
    }

    pub fn world(&self) -> &ConceptWorld {
        &self.world
    }

    pub fn weights(&self) -> &AttentionWeights<f64> {
        &self.weights
    }

    pub fn heads(&self) -> &Heads {
        &self.heads
    }

    /// Marks the base model immutable; adapter training requires this.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// All trainable parameters in a fixed order:
    /// `[w_q, w_k, w_v, w_o, p, g, h, q1, r1, q2, r2]`.
    pub fn params(&self) -> Vec<&Matrix<f64>> {
        use crate::attention::Proj;
        vec![
            self.weights.proj(Proj::Q),
            self.weights.proj(Proj::K),
            self.weights.proj(Proj::V),
            self.weights.proj(Proj::O),
            &self.heads.p,
            &self.heads.g,
            &self.heads.h,
            &self.heads.q1,
            &self.heads.r1,
            &self.heads.q2,
            &self.heads.r2,
        ]
    }

    /// Replaces all parameters (same order and shapes as [`Self::params`]).
    /// Rejected once frozen.
    pub fn set_params(&mut self, params: Vec<Matrix<f64>>) -> Result<()> {
        if self.frozen {
            return Err(Error::InvalidRequest {
                reason: "cannot mutate a frozen denoiser".into(),
            });
        }
        if params.len() != 11 {
            return Err(Error::InvalidRequest {
                reason: format!("expected 11 parameter matrices, got {}", params.len()),
            });
        }
        for (new, old) in params.iter().zip(self.params()) {
            if new.shape() != old.shape() {
                return Err(Error::BadShape {
                    op: "set_params",
                    rows: new.rows(),
                    cols: new.cols(),
                    expected: format!("{}x{}", old.rows(), old.cols()),
                });
            }
            if !new.all_finite() {
                return Err(Error::NonFinite { context: "denoiser parameter update".into() });
            }
        }
        let mut it = params.into_iter();
        let (q, k, v, o) =
            (it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        self.weights = AttentionWeights::new(q, k, v, o)?;
        self.heads.p = it.next().unwrap();
        self.heads.g = it.next().unwrap();
        self.heads.h = it.next().unwrap();
        self.heads.q1 = it.next().unwrap();
        self.heads.r1 = it.next().unwrap();
        self.heads.q2 = it.next().unwrap();
        self.heads.r2 = it.next().unwrap();
        Ok(())
    }

    /// Smooth features of the signal level `a = alpha_bar_t`.
    ///
    /// Features 2..=5 are the exact time profiles of the optimal per-mode
    /// predictor for the world's concept and neutral mode widths:
    /// `sqrt(1-a) / (a s^2 + 1 - a)` scales `x_t`, and the same with an
    /// extra `sqrt(a)` scales the mode-center drift.
    pub fn time_features(&self, alpha_bar: f64) -> Matrix<f64> {
        let sc = self.world.sigma();
        let sn = self.world.neutral_sigma();
        let kc = 1.0 - sc * sc;
        let kn = 1.0 - sn * sn;
        let a = alpha_bar;
        let som = (1.0 - a).sqrt();
        let sa = a.sqrt();
        let dc = 1.0 - kc * a;
        let dn = 1.0 - kn * a;
        Matrix::from_vec(
            N_TIME_FEATURES,
            1,
            vec![1.0, som, som / dc, som / dn, sa * som / dc, sa * som / dn],
        )
        .expect("time features are finite")
    }

    /// Query column `z = [x_t; u]`.
    fn make_z(x_t: &Matrix<f64>, u: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(QUERY_DIM, 1, |r, _| {
            if r < LATENT_DIM {
                x_t.get(r, 0)
            } else {
                u.get(r - LATENT_DIM, 0)
            }
        })
    }

    /// The attention query `z = [x_t; u(t)]` the denoiser uses at `t`;
    /// exposed so orthogonality losses can evaluate shifts on the exact
    /// queries training sees.
    pub fn query(&self, x_t: &Matrix<f64>, t: usize, sched: &NoiseSchedule) -> Result<Matrix<f64>> {
        Self::check_x_t(x_t)?;
        let u = self.time_features(sched.alpha_bar(t)?);
        Ok(Self::make_z(x_t, &u))
    }

    fn check_x_t(x_t: &Matrix<f64>) -> Result<()> {
        if x_t.shape() != (LATENT_DIM, 1) {
            return Err(Error::BadShape {
                op: "denoiser input",
                rows: x_t.rows(),
                cols: x_t.cols(),
                expected: format!("{LATENT_DIM}x1"),
            });
        }
        Ok(())
    }

    /// Noise prediction for `x_t` at timestep `t` under `cond`, with any
    /// number of adapters applied to the attention block.
    pub fn predict(
        &self,
        x_t: &Matrix<f64>,
        t: usize,
        cond: &Condition,
        sched: &NoiseSchedule,
        adapters: &[&LoraAdapter<f64>],
    ) -> Result<Matrix<f64>> {
        Self::check_x_t(x_t)?;
        let u = self.time_features(sched.alpha_bar(t)?);
        let z = Self::make_z(x_t, &u);
        let x = self.world.condition_tokens(cond)?;
        let o = adapted_attention_output(&self.weights, adapters, &x, &z)?;
        self.head_eps(x_t, &u, &o)
    }

    fn head_eps(&self, x_t: &Matrix<f64>, u: &Matrix<f64>, o: &Matrix<f64>) -> Result<Matrix<f64>> {
        let pu = self.heads.p.matmul(u)?;
        let go = self.heads.g.matmul(o)?;
        let hu = self.heads.h.matmul(u)?;
        let s = pu.add(&go.matmul(&hu)?)?;
        let scaled = x_t.matmul(&s)?;
        let q1u = self.heads.q1.matmul(u)?;
        let r1o = self.heads.r1.matmul(o)?;
        let d1 = r1o.matmul(&q1u)?;
        let q2u = self.heads.q2.matmul(u)?;
        let r2o = self.heads.r2.matmul(o)?;
        let d2 = r2o.matmul(&q2u)?;
        scaled.add(&d1)?.add(&d2)
    }

    /// Records every parameter as a tape leaf.
    pub fn tape_params(&self, tape: &mut Tape<f64>) -> TapedDenoiser {
        use crate::attention::Proj;
        let weights = [
            tape.constant(self.weights.proj(Proj::Q).clone()),
            tape.constant(self.weights.proj(Proj::K).clone()),
            tape.constant(self.weights.proj(Proj::V).clone()),
            tape.constant(self.weights.proj(Proj::O).clone()),
        ];
        let heads = TapedHeads {
            p: tape.constant(self.heads.p.clone()),
            g: tape.constant(self.heads.g.clone()),
            h: tape.constant(self.heads.h.clone()),
            q1: tape.constant(self.heads.q1.clone()),
            r1: tape.constant(self.heads.r1.clone()),
            q2: tape.constant(self.heads.q2.clone()),
            r2: tape.constant(self.heads.r2.clone()),
        };
        TapedDenoiser { weights, heads }
    }

    /// Taped twin of [`Self::predict`] over explicit parameter vars; pass an
    /// adapter's effective weight vars to differentiate through adapters.
    pub fn predict_taped(
        &self,
        tape: &mut Tape<f64>,
        params: &TapedDenoiser,
        x_t: &Matrix<f64>,
        t: usize,
        cond: &Condition,
        sched: &NoiseSchedule,
    ) -> Result<Var> {
        Self::check_x_t(x_t)?;
        let u = self.time_features(sched.alpha_bar(t)?);
        let z = Self::make_z(x_t, &u);
        let x = self.world.condition_tokens(cond)?;
        let xv = tape.constant(x);
        let zv = tape.constant(z);
        let o = attention_output_taped(tape, &params.weights, self.weights.inv_sqrt_de(), xv, zv)?;
        let xtv = tape.constant(x_t.clone());
        let uv = tape.constant(u);
        Self::head_eps_taped(tape, &params.heads, xtv, uv, o)
    }

    fn head_eps_taped(
        tape: &mut Tape<f64>,
        heads: &TapedHeads,
        x_t: Var,
        u: Var,
        o: Var,
    ) -> Result<Var> {
        let pu = tape.matmul(heads.p, u)?;
        let go = tape.matmul(heads.g, o)?;
        let hu = tape.matmul(heads.h, u)?;
        let gohu = tape.matmul(go, hu)?;
        let s = tape.add(pu, gohu)?;
        let scaled = tape.matmul(x_t, s)?;
        let q1u = tape.matmul(heads.q1, u)?;
        let r1o = tape.matmul(heads.r1, o)?;
        let d1 = tape.matmul(r1o, q1u)?;
        let q2u = tape.matmul(heads.q2, u)?;
        let r2o = tape.matmul(heads.r2, o)?;
        let d2 = tape.matmul(r2o, q2u)?;
        let partial = tape.add(scaled, d1)?;
        tape.add(partial, d2)
    }

    /// Serializes world spec, frozen flag, and all parameters.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        let spec = serde_json::to_vec(self.world.spec())?;
        w.write_all(&(spec.len() as u64).to_le_bytes())?;
        w.write_all(&spec)?;
        w.write_all(&[self.frozen as u8])?;
        for m in self.params() {
            m.write_binary(w)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8);
        if len > 1 << 20 {
            return Err(Error::BadArtifact {
                what: "denoiser",
                reason: format!("world spec length {len} implausible"),
            });
        }
        let mut spec_bytes = vec![0u8; len as usize];
        r.read_exact(&mut spec_bytes)?;
        let spec: WorldSpec = serde_json::from_slice(&spec_bytes)?;
        let world = spec.build()?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut mats = Vec::with_capacity(11);
        for _ in 0..11 {
            mats.push(Matrix::<f64>::read_binary(r)?);
        }
        let mut den = Denoiser::new(world, 0)?;
        den.set_params(mats)?;
        den.frozen = flag[0] != 0;
        Ok(den)
    }
}

/// Flat guided prediction used by samplers:
/// `eps_null + w * (eps_cond - eps_null)`, with `w = 0` and `w = 1`
/// short-circuited to the exact unconditional/conditional predictions.
pub fn guided_eps(
    den: &Denoiser,
    x_t: &Matrix<f64>,
    t: usize,
    cond: &Condition,
    sched: &NoiseSchedule,
    adapters: &[&LoraAdapter<f64>],
    w: f64,
) -> Result<Matrix<f64>> {
    if !w.is_finite() {
        return Err(Error::InvalidRequest { reason: format!("guidance weight {w}") });
    }
    if w == 0.0 || matches!(cond, Condition::Null) {
        return den.predict(x_t, t, &Condition::Null, sched, adapters);
    }
    if w == 1.0 {
        return den.predict(x_t, t, cond, sched, adapters);
    }
    let e_null = den.predict(x_t, t, &Condition::Null, sched, adapters)?;
    let e_cond = den.predict(x_t, t, cond, sched, adapters)?;
    e_null.add(&e_cond.sub(&e_null)?.scale(w))
}
