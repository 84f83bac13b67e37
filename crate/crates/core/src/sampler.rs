//! Deterministic DDIM sampling (no stochastic reinjection) with
//! classifier-free guidance.
//!
//! The reverse pass walks an evenly spaced timestep grid from `T` to 0; at
//! each step it reconstructs `x0_hat` from the predicted noise and re-noises
//! to the next level. [`ddim_drive`] exposes the per-step noise prediction as
//! a closure so composition strategies can supply their own predictor while
//! sharing the exact same integrator.

use crate::attention::LoraAdapter;
use crate::denoiser::{guided_eps, Denoiser};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::schedule::NoiseSchedule;
use crate::seeds::rng_at;
use crate::world::{to_point, Condition};

/// Default number of reverse steps.
pub const DEFAULT_STEPS: usize = 50;
/// Default guidance weight.
pub const DEFAULT_GUIDANCE: f64 = 3.0;

/// Evenly spaced timestep grid `[t_max, ..., 0]` with `steps + 1` entries.
pub fn tau_grid(t_max: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_max {
        return Err(Error::InvalidRequest {
            reason: format!("{steps} reverse steps over {t_max} timesteps"),
        });
    }
    let taus: Vec<usize> = (0..=steps)
        .map(|k| ((t_max as f64) * ((steps - k) as f64) / steps as f64).round() as usize)
        .collect();
    if taus.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidRequest {
            reason: format!("degenerate timestep grid for {steps} steps over {t_max}"),
        });
    }
    Ok(taus)
}

/// Runs the DDIM reverse pass with an arbitrary per-step noise predictor
/// `eps_fn(x_t, t, step_index)`. The initial `x_T` is drawn from the seed;
/// everything after is deterministic.
pub fn ddim_drive(
    sched: &NoiseSchedule,
    steps: usize,
    seed: u64,
    mut eps_fn: impl FnMut(&Matrix<f64>, usize, usize) -> Result<Matrix<f64>>,
) -> Result<[f64; 2]> {
    let taus = tau_grid(sched.t_max(), steps)?;
    let mut rng = rng_at(seed, &["ddim-init"], &[]);
    let mut x = Matrix::<f64>::gaussian(2, 1, 1.0, &mut rng);
    for k in 0..steps {
        let t = taus[k];
        let t_next = taus[k + 1];
        let eps = eps_fn(&x, t, k)?;
        if eps.shape() != (2, 1) || !eps.all_finite() {
            return Err(Error::NonFinite { context: format!("noise prediction at t={t}") });
        }
        let ab = sched.alpha_bar(t)?;
        let ab_next = sched.alpha_bar(t_next)?;
        let x0_hat = x.sub(&eps.scale((1.0 - ab).sqrt()))?.scale(1.0 / ab.sqrt());
        x = x0_hat.scale(ab_next.sqrt()).add(&eps.scale((1.0 - ab_next).sqrt()))?;
    }
    to_point(&x)
}

/// Standard guided sample: CFG noise prediction with `adapters` applied to
/// the attention block on both branches.
pub fn ddim_sample(
    den: &Denoiser,
    sched: &NoiseSchedule,
    cond: &Condition,
    adapters: &[&LoraAdapter<f64>],
    steps: usize,
    guidance: f64,
    seed: u64,
) -> Result<[f64; 2]> {
    cond.validate(den.world().n_concepts())?;
    ddim_drive(sched, steps, seed, |x, t, _| {
        guided_eps(den, x, t, cond, sched, adapters, guidance)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{vec2, ConceptWorld};

    #[test]
    fn tau_grid_is_the_even_fifty_step_ladder() {
        let taus = tau_grid(100, 50).unwrap();
        assert_eq!(taus.len(), 51);
        assert_eq!(taus[0], 100);
        assert_eq!(taus[1], 98);
        assert_eq!(taus[50], 0);
        assert!(taus.windows(2).all(|w| w[0] - w[1] == 2));
        assert!(tau_grid(100, 0).is_err());
        assert!(tau_grid(100, 101).is_err());
        // Uneven division still yields a strict grid.
        let t7 = tau_grid(10, 7).unwrap();
        assert_eq!(t7, vec![10, 9, 7, 6, 4, 3, 1, 0]);
    }

    /// With the exact posterior-mean predictor for one Gaussian mode, DDIM
    /// must transport standard-normal starts into that mode. This checks the
    /// integrator + schedule numerics independently of any trained model.
    #[test]
    fn optimal_predictor_lands_in_the_mode() {
        let sched = NoiseSchedule::cosine(100).unwrap();
        let (mu, sigma) = ([4.0, 0.0], 0.3);
        let opt_eps = |x: &Matrix<f64>, t: usize, _k: usize| -> Result<Matrix<f64>> {
            let a = sched.alpha_bar(t)?;
            let denom = a * sigma * sigma + 1.0 - a;
            let centered = x.sub(&vec2(mu[0], mu[1]).scale(a.sqrt()))?;
            Ok(centered.scale((1.0 - a).sqrt() / denom))
        };
        let n = 100;
        let mut pts = Vec::with_capacity(n);
        for seed in 0..n as u64 {
            pts.push(ddim_drive(&sched, 50, seed, opt_eps).unwrap());
        }
        let mean = pts.iter().fold([0.0, 0.0], |m, p| [m[0] + p[0], m[1] + p[1]]);
        let mean = [mean[0] / n as f64, mean[1] / n as f64];
        assert!((mean[0] - mu[0]).abs() < 0.15, "mean x {:?}", mean);
        assert!((mean[1] - mu[1]).abs() < 0.15, "mean y {:?}", mean);
        let var = pts
            .iter()
            .fold(0.0, |v, p| v + (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2))
            / (2.0 * n as f64);
        let std = var.sqrt();
        assert!((0.1..0.6).contains(&std), "spread {std}");
        for p in &pts {
            let d = ((p[0] - mu[0]).powi(2) + (p[1] - mu[1]).powi(2)).sqrt();
            assert!(d < 4.0 * sigma, "sample {p:?} too far from mode");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let world = ConceptWorld::default_world(3);
        let sched = NoiseSchedule::cosine(100).unwrap();
        let den = Denoiser::new(world, 11).unwrap();
        let cond = Condition::Single(2);
        let a = ddim_sample(&den, &sched, &cond, &[], 50, 3.0, 42).unwrap();
        let b = ddim_sample(&den, &sched, &cond, &[], 50, 3.0, 42).unwrap();
        assert_eq!(a, b);
        let c = ddim_sample(&den, &sched, &cond, &[], 50, 3.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_guidance_equals_unconditional_trajectory() {
        let world = ConceptWorld::default_world(3);
        let sched = NoiseSchedule::cosine(100).unwrap();
        let den = Denoiser::new(world, 11).unwrap();
        let w0 = ddim_sample(&den, &sched, &Condition::Single(4), &[], 50, 0.0, 7).unwrap();
        let null = ddim_sample(&den, &sched, &Condition::Null, &[], 50, 3.0, 7).unwrap();
        assert_eq!(w0, null);
    }

    #[test]
    fn bad_condition_rejected() {
        let world = ConceptWorld::default_world(3);
        let sched = NoiseSchedule::cosine(100).unwrap();
        let den = Denoiser::new(world, 11).unwrap();
        assert!(ddim_sample(&den, &sched, &Condition::Single(99), &[], 50, 3.0, 1).is_err());
    }
}
