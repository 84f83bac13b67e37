//! Erasure metrics: likelihood classification, the two accuracy rates and
//! their harmonic combination, and a closed-form Gaussian transport
//! distance standing in for a learned distributional score.
//!
//! The classifier ranks the world's modes (plus the neutral background) by
//! exact Gaussian log-likelihood, so metric noise reflects only the
//! generator under test, never classifier error. Erasure effectiveness
//! counts samples that still land on a target mode (lower is better);
//! utility preservation counts prompts whose samples keep ranking every
//! prompted concept on top (higher is better).

use serde::{Deserialize, Serialize};

use crate::attention::ConceptId;
use crate::error::{Error, Result};
use crate::world::ConceptWorld;

/// What a sample is classified as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassLabel {
    /// One of the world's concept modes.
    Concept(ConceptId),
    /// The neutral background mode at the origin.
    Neutral,
}

impl ClassLabel {
    // Tie order: concepts by ascending id, neutral after every concept.
    fn tie_key(self) -> (u8, usize) {
        match self {
            ClassLabel::Concept(c) => (0, c),
            ClassLabel::Neutral => (1, 0),
        }
    }
}

/// Log-density of `point` under the isotropic Gaussian of `label`.
pub fn log_likelihood(world: &ConceptWorld, label: ClassLabel, point: [f64; 2]) -> Result<f64> {
    let (center, sigma) = match label {
        ClassLabel::Concept(c) => (world.center(c)?, world.sigma()),
        ClassLabel::Neutral => ([0.0, 0.0], world.neutral_sigma()),
    };
    let dx = point[0] - center[0];
    let dy = point[1] - center[1];
    let var = sigma * sigma;
    Ok(-(2.0 * std::f64::consts::PI * var).ln() - (dx * dx + dy * dy) / (2.0 * var))
}

/// Sorts labeled scores descending; exact ties rank lower concept ids
/// first and the neutral label last.
pub fn rank(mut scored: Vec<(ClassLabel, f64)>) -> Vec<(ClassLabel, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.tie_key().cmp(&b.0.tie_key())));
    scored
}

/// Every label ranked by log-likelihood of `point`, best first.
pub fn classify(world: &ConceptWorld, point: [f64; 2]) -> Result<Vec<(ClassLabel, f64)>> {
    let mut scored = Vec::with_capacity(world.n_concepts() + 1);
    for c in 0..world.n_concepts() {
        scored.push((ClassLabel::Concept(c), log_likelihood(world, ClassLabel::Concept(c), point)?));
    }
    scored.push((ClassLabel::Neutral, log_likelihood(world, ClassLabel::Neutral, point)?));
    Ok(rank(scored))
}

/// Best-ranked label for `point`.
pub fn top1(world: &ConceptWorld, point: [f64; 2]) -> Result<ClassLabel> {
    Ok(classify(world, point)?[0].0)
}

/// Whether every prompted concept appears in the top-N ranks of the
/// sample's classification, N being the number of prompted concepts.
pub fn up_preserved(world: &ConceptWorld, point: [f64; 2], prompted: &[ConceptId]) -> Result<bool> {
    let ranked = classify(world, point)?;
    let top: Vec<ClassLabel> = ranked.iter().take(prompted.len()).map(|r| r.0).collect();
    Ok(prompted.iter().all(|&c| top.contains(&ClassLabel::Concept(c))))
}

/// Fraction of samples whose top-1 label is any of their target concepts.
pub fn acc_ee(world: &ConceptWorld, items: &[([f64; 2], Vec<ConceptId>)]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty { what: "erasure-effectiveness sample set" });
    }
    let mut hits = 0usize;
    for (point, targets) in items {
        if let ClassLabel::Concept(c) = top1(world, *point)? {
            if targets.contains(&c) {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / items.len() as f64)
}

/// Fraction of non-target prompts whose sample still ranks every prompted
/// concept in its top-N labels.
pub fn acc_up(world: &ConceptWorld, items: &[([f64; 2], Vec<ConceptId>)]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty { what: "utility-preservation sample set" });
    }
    let mut hits = 0usize;
    for (point, prompted) in items {
        if prompted.is_empty() {
            return Err(Error::Empty { what: "prompted concept set" });
        }
        if up_preserved(world, *point, prompted)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / items.len() as f64)
}

/// `2 / (1/(1-acc_ee) + 1/acc_up)`, the harmonic combination of erasure
/// and preservation; the degenerate corners `acc_ee == 1` and
/// `acc_up == 0` score 0 by convention.
pub fn harmonic_accuracy(acc_ee: f64, acc_up: f64) -> f64 {
    if acc_ee >= 1.0 || acc_up <= 0.0 {
        return 0.0;
    }
    2.0 / (1.0 / (1.0 - acc_ee) + 1.0 / acc_up)
}

/// Mean and population covariance of a 2-D sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: [f64; 2],
    /// Row-major 2x2 covariance.
    pub cov: [[f64; 2]; 2],
}

impl GaussianFit {
    /// Fits `samples`; needs at least two points.
    pub fn fit(samples: &[[f64; 2]]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidRequest {
                reason: format!("Gaussian fit needs at least 2 samples, got {}", samples.len()),
            });
        }
        let n = samples.len() as f64;
        let mut mean = [0.0, 0.0];
        for s in samples {
            mean[0] += s[0];
            mean[1] += s[1];
        }
        mean[0] /= n;
        mean[1] /= n;
        let mut cov = [[0.0; 2]; 2];
        for s in samples {
            let d = [s[0] - mean[0], s[1] - mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += d[i] * d[j];
                }
            }
        }
        for row in &mut cov {
            for v in row {
                *v /= n;
            }
        }
        Ok(GaussianFit { mean, cov })
    }
}

/// 2-Wasserstein distance between Gaussian fits of two 2-D sample sets.
///
/// Uses the 2x2 closed form: with `m = tr(S1 S2) + 2 sqrt(det S1 det S2)`,
/// `W2^2 = |mu1-mu2|^2 + tr S1 + tr S2 - 2 sqrt(m)`.
pub fn distribution_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    let fa = GaussianFit::fit(a)?;
    let fb = GaussianFit::fit(b)?;
    let dmu = [fa.mean[0] - fb.mean[0], fa.mean[1] - fb.mean[1]];
    let tr1 = fa.cov[0][0] + fa.cov[1][1];
    let tr2 = fb.cov[0][0] + fb.cov[1][1];
    let det1 = (fa.cov[0][0] * fa.cov[1][1] - fa.cov[0][1] * fa.cov[1][0]).max(0.0);
    let det2 = (fb.cov[0][0] * fb.cov[1][1] - fb.cov[0][1] * fb.cov[1][0]).max(0.0);
    let tr12 = fa.cov[0][0] * fb.cov[0][0]
        + fa.cov[0][1] * fb.cov[1][0]
        + fa.cov[1][0] * fb.cov[0][1]
        + fa.cov[1][1] * fb.cov[1][1];
    let cross = (tr12 + 2.0 * (det1 * det2).sqrt()).max(0.0);
    let w2_sq = (dmu[0] * dmu[0] + dmu[1] * dmu[1] + tr1 + tr2 - 2.0 * cross.sqrt()).max(0.0);
    Ok(w2_sq.sqrt())
}

/// One evaluation cell's metrics, with per-concept breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc_ee: f64,
    pub acc_up: f64,
    pub acc_harmonic: f64,
    /// Transport distance of all this cell's samples from base samples on
    /// the same prompt/seed schedule.
    pub w2: f64,
    pub n_ee: usize,
    pub n_up: usize,
    /// Erasure hit rate among items targeting each concept, id-ascending.
    pub per_concept_ee: Vec<(ConceptId, f64)>,
    /// Preservation rate among items prompting each concept, id-ascending.
    pub per_concept_up: Vec<(ConceptId, f64)>,
}

impl MetricsReport {
    /// Computes all rates from annotated samples; `w2` is supplied by the
    /// caller, which owns the base reference samples.
    pub fn compute(
        world: &ConceptWorld,
        ee_items: &[([f64; 2], Vec<ConceptId>)],
        up_items: &[([f64; 2], Vec<ConceptId>)],
        w2: f64,
    ) -> Result<Self> {
        let acc_ee_v = acc_ee(world, ee_items)?;
        let acc_up_v = acc_up(world, up_items)?;
        let per_concept_ee = per_concept_rate(world, ee_items, |w, p, ids| {
            Ok(matches!(top1(w, p)?, ClassLabel::Concept(c) if ids.contains(&c)))
        })?;
        let per_concept_up = per_concept_rate(world, up_items, |w, p, ids| up_preserved(w, p, ids))?;
        Ok(MetricsReport {
            acc_ee: acc_ee_v,
            acc_up: acc_up_v,
            acc_harmonic: harmonic_accuracy(acc_ee_v, acc_up_v),
            w2,
            n_ee: ee_items.len(),
            n_up: up_items.len(),
            per_concept_ee,
            per_concept_up,
        })
    }
}

// Per-concept rate of `hit` among the items annotated with that concept.
pub(crate) fn per_concept_rate(
    world: &ConceptWorld,
    items: &[([f64; 2], Vec<ConceptId>)],
    hit: impl Fn(&ConceptWorld, [f64; 2], &[ConceptId]) -> Result<bool>,
) -> Result<Vec<(ConceptId, f64)>> {
    let mut hits = vec![0usize; world.n_concepts()];
    let mut totals = vec![0usize; world.n_concepts()];
    for (point, ids) in items {
        let h = hit(world, *point, ids)?;
        for &c in ids {
            if c >= world.n_concepts() {
                return Err(Error::UnknownConcept { id: c, n: world.n_concepts() });
            }
            totals[c] += 1;
            if h {
                hits[c] += 1;
            }
        }
    }
    Ok((0..world.n_concepts())
        .filter(|&c| totals[c] > 0)
        .map(|c| (c, hits[c] as f64 / totals[c] as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::ConceptWorld;
    use rand::Rng;

    fn world() -> ConceptWorld {
        ConceptWorld::default_world(0)
    }

    #[test]
    fn mode_centers_classify_to_their_concept() {
        let w = world();
        for c in 0..w.n_concepts() {
            assert_eq!(top1(&w, w.center(c).unwrap()).unwrap(), ClassLabel::Concept(c));
        }
    }

    #[test]
    fn origin_classifies_neutral_and_ties_rank_by_id() {
        // With 4 equally spaced modes, all four squared distances from the
        // origin evaluate to exactly 16, so ranks 2..=5 are a pure tie.
        let spec = crate::world::WorldSpec { n_concepts: 4, n_clusters: 1, ..Default::default() };
        let w = spec.build().unwrap();
        let ranked = classify(&w, [0.0, 0.0]).unwrap();
        assert_eq!(ranked[0].0, ClassLabel::Neutral);
        let tail: Vec<ClassLabel> = ranked[1..].iter().map(|r| r.0).collect();
        assert_eq!(
            tail,
            vec![
                ClassLabel::Concept(0),
                ClassLabel::Concept(1),
                ClassLabel::Concept(2),
                ClassLabel::Concept(3)
            ]
        );
        assert!(ranked[1..].windows(2).all(|p| p[0].1 == p[1].1), "expected an exact tie");
    }

    #[test]
    fn rank_breaks_exact_ties_toward_lower_ids_then_neutral() {
        let scored = vec![
            (ClassLabel::Neutral, -1.0),
            (ClassLabel::Concept(5), -1.0),
            (ClassLabel::Concept(2), -1.0),
            (ClassLabel::Concept(3), -0.5),
        ];
        let ranked = rank(scored);
        let labels: Vec<ClassLabel> = ranked.iter().map(|r| r.0).collect();
        assert_eq!(
            labels,
            vec![
                ClassLabel::Concept(3),
                ClassLabel::Concept(2),
                ClassLabel::Concept(5),
                ClassLabel::Neutral
            ]
        );
    }

    #[test]
    fn erasure_rate_counts_target_hits() {
        let w = world();
        let mut items = Vec::new();
        // 3 of 10 samples sit on target modes; the rest sit at the origin.
        for i in 0..10 {
            let point = if i < 3 { w.center(i).unwrap() } else { [0.0, 0.0] };
            items.push((point, vec![i % 4]));
        }
        assert!((acc_ee(&w, &items).unwrap() - 0.3).abs() < 1e-15);
        assert!(acc_ee(&w, &[]).is_err());
        let all_neutral = vec![([0.0, 0.0], vec![0]); 4];
        assert_eq!(acc_ee(&w, &all_neutral).unwrap(), 0.0);
        let all_hit = vec![(w.center(2).unwrap(), vec![2]); 4];
        assert_eq!(acc_ee(&w, &all_hit).unwrap(), 1.0);
    }

    #[test]
    fn preservation_rate_checks_topn_containment() {
        let w = world();
        // Single prompts: on-mode preserved, neutral-landing not.
        let items = vec![
            (w.center(1).unwrap(), vec![1]),
            (w.center(2).unwrap(), vec![2]),
            ([0.0, 0.0], vec![3]),
            (w.center(5).unwrap(), vec![4]),
        ];
        assert!((acc_up(&w, &items).unwrap() - 0.5).abs() < 1e-15);
        // Conjunction prompt: midpoint of adjacent modes ranks both first.
        let c0 = w.center(0).unwrap();
        let c1 = w.center(1).unwrap();
        let mid = [(c0[0] + c1[0]) / 2.0, (c0[1] + c1[1]) / 2.0];
        assert!(up_preserved(&w, mid, &[0, 1]).unwrap());
        assert!(!up_preserved(&w, mid, &[0, 4]).unwrap());
        // A degenerate sample at the origin preserves nothing.
        assert!(!up_preserved(&w, [0.0, 0.0], &[0, 1]).unwrap());
        assert!(acc_up(&w, &[([0.0, 0.0], vec![])]).is_err());
    }

    #[test]
    fn harmonic_formula_and_conventions() {
        assert_eq!(harmonic_accuracy(0.0, 1.0), 1.0);
        assert_eq!(harmonic_accuracy(1.0, 0.9), 0.0);
        assert_eq!(harmonic_accuracy(0.2, 0.0), 0.0);
        let h = harmonic_accuracy(0.02, 0.705);
        assert!((h - 0.820059).abs() < 1e-6, "got {h}");
        let h2 = harmonic_accuracy(0.075, 0.6713);
        assert!((100.0 * h2 - 77.80).abs() < 0.01, "got {h2}");
    }

    #[test]
    fn transport_distance_closed_form_cases() {
        // Exactly unit-covariance four-point sets, offset by (3, 4).
        let a = vec![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        assert_eq!(distribution_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(distribution_distance(&a, &a).unwrap(), 0.0);
        assert!(distribution_distance(&a, &[[0.0, 0.0]]).is_err());
        let fit = GaussianFit::fit(&a).unwrap();
        assert_eq!(fit.mean, [0.0, 0.0]);
        assert_eq!(fit.cov, [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn transport_distance_matches_spectral_oracle() {
        use nalgebra::Matrix2;
        let mut rng = crate::seeds::rng_at(7, &["w2-oracle"], &[]);
        for trial in 0..20u64 {
            let a: Vec<[f64; 2]> = (0..40)
                .map(|_| [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0])
                .collect();
            let b: Vec<[f64; 2]> = (0..40)
                .map(|_| [rng.random::<f64>() * 6.0 - 1.0, rng.random::<f64>() * 2.0 + 1.0])
                .collect();
            let got = distribution_distance(&a, &b).unwrap();
            // Independent route: eigendecompose to take real matrix roots.
            let fa = GaussianFit::fit(&a).unwrap();
            let fb = GaussianFit::fit(&b).unwrap();
            let s1 = Matrix2::new(fa.cov[0][0], fa.cov[0][1], fa.cov[1][0], fa.cov[1][1]);
            let s2 = Matrix2::new(fb.cov[0][0], fb.cov[0][1], fb.cov[1][0], fb.cov[1][1]);
            let sqrt2 = spd_sqrt(s2);
            let inner = spd_sqrt(sqrt2 * s1 * sqrt2);
            let dmu = [fa.mean[0] - fb.mean[0], fa.mean[1] - fb.mean[1]];
            let want = (dmu[0] * dmu[0]
                + dmu[1] * dmu[1]
                + (s1 + s2 - 2.0 * inner).trace())
            .max(0.0)
            .sqrt();
            assert!((got - want).abs() < 1e-8, "trial {trial}: {got} vs {want}");
            let sym = distribution_distance(&b, &a).unwrap();
            assert!((got - sym).abs() < 1e-12);
        }
    }

    #[cfg(test)]
    fn spd_sqrt(m: nalgebra::Matrix2<f64>) -> nalgebra::Matrix2<f64> {
        let eig = nalgebra::SymmetricEigen::new(m);
        let d = nalgebra::Matrix2::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
        eig.eigenvectors * d * eig.eigenvectors.transpose()
    }

    #[test]
    fn report_is_internally_consistent() {
        let w = world();
        let ee_items = vec![
            (w.center(0).unwrap(), vec![0]),
            ([0.0, 0.0], vec![0]),
            ([0.0, 0.0], vec![1]),
            (w.center(1).unwrap(), vec![1]),
        ];
        let up_items = vec![
            (w.center(2).unwrap(), vec![2]),
            (w.center(3).unwrap(), vec![3]),
            ([0.0, 0.0], vec![2]),
        ];
        let report = MetricsReport::compute(&w, &ee_items, &up_items, 0.25).unwrap();
        assert_eq!(report.n_ee, 4);
        assert_eq!(report.n_up, 3);
        assert!((report.acc_ee - 0.5).abs() < 1e-15);
        assert!((report.acc_up - 2.0 / 3.0).abs() < 1e-15);
        let h = harmonic_accuracy(report.acc_ee, report.acc_up);
        assert!((report.acc_harmonic - h).abs() <= 1e-12);
        assert_eq!(report.per_concept_ee, vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(report.per_concept_up, vec![(2, 0.5), (3, 1.0)]);
        let text = serde_json::to_string(&report).unwrap();
        let back: MetricsReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report, back);
    }
}
