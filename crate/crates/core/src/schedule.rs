//! Forward-noise schedule for the toy diffusion model.
//!
//! The schedule stores cumulative signal levels `alpha_bar_t` for
//! `t = 0..=T`, starting at exactly 1 (no noise) and decaying strictly to
//! ~0. The forward process is the usual interpolation
//! `x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Terminal signal floor for the cosine schedule; keeps `sqrt(alpha_bar_T)`
/// around 1e-2 so reverse steps stay well-conditioned.
pub const ALPHA_BAR_FLOOR: f64 = 1e-4;

/// Cumulative `alpha_bar` levels indexed by timestep `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Validated schedule from explicit levels (`alpha_bars[t]` for t=0..=T).
    pub fn from_alpha_bars(alpha_bars: Vec<f64>) -> Result<Self> {
        if alpha_bars.len() < 2 {
            return Err(Error::BadSchedule { reason: "need at least two levels".into() });
        }
        if alpha_bars.iter().any(|a| !a.is_finite() || !(0.0..=1.0).contains(a)) {
            return Err(Error::BadSchedule { reason: "levels must lie in [0, 1]".into() });
        }
        if alpha_bars.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::BadSchedule { reason: "levels must strictly decrease".into() });
        }
        if alpha_bars[0] < 0.99 {
            return Err(Error::BadSchedule {
                reason: format!("first level {} should be ~1", alpha_bars[0]),
            });
        }
        if *alpha_bars.last().expect("non-empty") > 0.01 {
            return Err(Error::BadSchedule {
                reason: format!("last level {} should be ~0", alpha_bars.last().unwrap()),
            });
        }
        Ok(Self { alpha_bars })
    }

    /// Cosine schedule over `t_steps` steps: squared-cosine signal decay,
    /// normalized so `alpha_bar_0 = 1` exactly.
    ///
    /// The tail is floored near [`ALPHA_BAR_FLOOR`] (with a strict geometric
    /// taper) so the terminal signal level stays far enough from zero that
    /// the reverse update's `1/sqrt(alpha_bar)` does not amplify prediction
    /// error catastrophically.
    pub fn cosine(t_steps: usize) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::BadSchedule { reason: "need at least one step".into() });
        }
        let s = 0.008;
        let f = |t: f64| {
            let arg = ((t / t_steps as f64 + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
            arg.cos().powi(2)
        };
        let f0 = f(0.0);
        let raw: Vec<f64> = (0..=t_steps).map(|t| f(t as f64) / f0).collect();
        let mut alpha_bars = Vec::with_capacity(raw.len());
        alpha_bars.push(raw[0]);
        for &r in &raw[1..] {
            let prev = *alpha_bars.last().expect("non-empty");
            alpha_bars.push(r.max(ALPHA_BAR_FLOOR.min(prev * 0.9)));
        }
        Self::from_alpha_bars(alpha_bars)
    }

    /// Largest timestep `T`.
    pub fn t_max(&self) -> usize {
        self.alpha_bars.len() - 1
    }

    /// Signal level `alpha_bar_t`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or(Error::BadTimestep { t, t_max: self.t_max() })
    }

    /// Noise level `sigma_t = sqrt(1 - alpha_bar_t)`.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok((1.0 - self.alpha_bar(t)?).sqrt())
    }
}

/// Forward noising `sqrt(ab) x0 + sqrt(1 - ab) eps` at timestep `t`.
pub fn forward_noise(
    x0: &Matrix<f64>,
    t: usize,
    eps: &Matrix<f64>,
    sched: &NoiseSchedule,
) -> Result<Matrix<f64>> {
    let ab = sched.alpha_bar(t)?;
    x0.scale(ab.sqrt()).add(&eps.scale((1.0 - ab).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat;

    fn hand_schedule() -> NoiseSchedule {
        NoiseSchedule::from_alpha_bars(vec![1.0, 0.25, 0.0]).unwrap()
    }

    #[test]
    fn endpoints_are_exact() {
        let s = hand_schedule();
        let x0 = Mat::from_vec(2, 1, vec![2.0, 0.0]).unwrap();
        let eps = Mat::from_vec(2, 1, vec![0.0, 2.0]).unwrap();
        assert_eq!(forward_noise(&x0, 0, &eps, &s).unwrap(), x0); // alpha_bar = 1
        assert_eq!(forward_noise(&x0, 2, &eps, &s).unwrap(), eps); // alpha_bar = 0
    }

    #[test]
    fn quarter_signal_hand_value() {
        let s = hand_schedule();
        let x0 = Mat::from_vec(2, 1, vec![2.0, 0.0]).unwrap();
        let eps = Mat::from_vec(2, 1, vec![0.0, 2.0]).unwrap();
        let x = forward_noise(&x0, 1, &eps, &s).unwrap();
        assert!((x.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((x.get(1, 0) - 3.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_timestep_errors() {
        let s = hand_schedule();
        let v = Mat::zeros(2, 1);
        assert!(matches!(
            forward_noise(&v, 3, &v, &s),
            Err(Error::BadTimestep { t: 3, t_max: 2 })
        ));
    }

    #[test]
    fn cosine_schedule_shape() {
        let s = NoiseSchedule::cosine(100).unwrap();
        assert_eq!(s.t_max(), 100);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        // Tail reaches the floor region but never collapses to true zero.
        let tail = s.alpha_bar(100).unwrap();
        assert!(tail <= ALPHA_BAR_FLOOR && tail > ALPHA_BAR_FLOOR / 100.0);
        for t in 0..100 {
            assert!(s.alpha_bar(t + 1).unwrap() < s.alpha_bar(t).unwrap());
        }
        assert!((s.sigma(100).unwrap() - 1.0).abs() < 1e-3);
        assert_eq!(s.sigma(0).unwrap(), 0.0);
        // Away from the tail the floor leaves the pure cosine untouched.
        let mid = s.alpha_bar(50).unwrap();
        assert!(mid > 0.2 && mid < 0.8);
    }

    #[test]
    fn cosine_floor_keeps_long_schedules_strict() {
        // T = 1000 pushes several raw tail values below the floor; the taper
        // must keep the sequence strictly decreasing.
        let s = NoiseSchedule::cosine(1000).unwrap();
        for t in 0..1000 {
            assert!(s.alpha_bar(t + 1).unwrap() < s.alpha_bar(t).unwrap());
        }
    }

    #[test]
    fn validation_rejects_bad_schedules() {
        assert!(NoiseSchedule::from_alpha_bars(vec![1.0]).is_err());
        assert!(NoiseSchedule::from_alpha_bars(vec![1.0, 0.5, 0.5, 0.0]).is_err()); // not strict
        assert!(NoiseSchedule::from_alpha_bars(vec![0.5, 0.0]).is_err()); // bad start
        assert!(NoiseSchedule::from_alpha_bars(vec![1.0, 0.5]).is_err()); // bad end
        assert!(NoiseSchedule::from_alpha_bars(vec![1.0, 1.5, 0.0]).is_err()); // out of range
    }
}
