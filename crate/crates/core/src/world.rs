//! Synthetic 2-D concept world: Gaussian modes on a circle plus a neutral
//! mode at the origin.
//!
//! Each concept is an isotropic Gaussian in the plane. Concepts are grouped
//! into contiguous clusters (arcs of the circle), and each concept gets a
//! frozen embedding vector that mixes a shared per-cluster direction with a
//! concept-private direction, so embeddings within a cluster correlate while
//! different clusters stay orthogonal. The unconditional (null) condition
//! attends over the whole token vocabulary, so an unconditional prediction
//! can track whichever mode a trajectory commits to; the neutral-substitute
//! condition is the reserved zero token alone.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attention::ConceptId;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeds::rng_at;

/// What a sample or prediction is conditioned on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    /// Unconditional: attends over the full token vocabulary.
    Null,
    /// The neutral substitute (the reserved zero token).
    Neutral,
    /// A single concept token.
    Single(ConceptId),
    /// A multi-token conjunction of concepts.
    Multi(Vec<ConceptId>),
}

impl Condition {
    /// Concepts this condition mentions (empty for `Null` and `Neutral`).
    pub fn concepts(&self) -> &[ConceptId] {
        match self {
            Condition::Null | Condition::Neutral => &[],
            Condition::Single(c) => std::slice::from_ref(c),
            Condition::Multi(cs) => cs,
        }
    }

    /// Checks ids against the number of known concepts; `Multi` must be
    /// non-empty and duplicate-free.
    pub fn validate(&self, n_concepts: usize) -> Result<()> {
        if let Condition::Multi(cs) = self {
            if cs.is_empty() {
                return Err(Error::InvalidRequest {
                    reason: "multi-token condition needs at least one concept".into(),
                });
            }
            let mut seen = vec![false; n_concepts];
            for &c in cs {
                if c < n_concepts && seen[c] {
                    return Err(Error::InvalidRequest {
                        reason: format!("condition repeats concept {c}"),
                    });
                }
                if c < n_concepts {
                    seen[c] = true;
                }
            }
        }
        match self.concepts().iter().find(|&&c| c >= n_concepts) {
            Some(&c) => Err(Error::UnknownConcept { id: c, n: n_concepts }),
            None => Ok(()),
        }
    }
}

// Compact forms: `Null` <-> null, `Neutral` <-> "neutral", `Single(c)` <-> c,
// `Multi(cs)` <-> [c, ...]. Written by hand because two unit variants cannot
// share an untagged representation.
impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Condition::Null => ser.serialize_unit(),
            Condition::Neutral => ser.serialize_str("neutral"),
            Condition::Single(c) => ser.serialize_u64(*c as u64),
            Condition::Multi(cs) => cs.serialize(ser),
        }
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> serde::de::Visitor<'de> for V {
            type Value = Condition;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("null, \"neutral\", a concept id, or a list of concept ids")
            }

            fn visit_unit<E: serde::de::Error>(self) -> std::result::Result<Condition, E> {
                Ok(Condition::Null)
            }

            fn visit_str<E: serde::de::Error>(self, s: &str) -> std::result::Result<Condition, E> {
                if s == "neutral" {
                    Ok(Condition::Neutral)
                } else {
                    Err(E::invalid_value(serde::de::Unexpected::Str(s), &self))
                }
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<Condition, E> {
                Ok(Condition::Single(v as ConceptId))
            }

            fn visit_seq<A: serde::de::SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<Condition, A::Error> {
                let mut cs = Vec::new();
                while let Some(c) = seq.next_element::<ConceptId>()? {
                    cs.push(c);
                }
                Ok(Condition::Multi(cs))
            }
        }
        de.deserialize_any(V)
    }
}

/// Build parameters for a [`ConceptWorld`]; serializable so artifacts can
/// reconstruct the exact world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub n_concepts: usize,
    pub radius: f64,
    pub sigma: f64,
    pub n_clusters: usize,
    pub neutral_sigma: f64,
    /// Weight of the shared cluster direction inside each embedding, [0, 1).
    pub embed_mix: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            n_concepts: 8,
            radius: 4.0,
            sigma: 0.3,
            n_clusters: 2,
            neutral_sigma: 0.5,
            embed_mix: 0.5,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn build(&self) -> Result<ConceptWorld> {
        ConceptWorld::from_spec(self.clone())
    }
}

/// Gaussian mixture world with frozen concept embeddings.
#[derive(Debug, Clone)]
pub struct ConceptWorld {
    spec: WorldSpec,
    centers: Vec<[f64; 2]>,
    clusters: Vec<usize>,
    /// d_x x (n_concepts + 1); last column is the null token and stays zero.
    embeddings: Matrix<f64>,
}

/// Embedding dimensionality of condition tokens.
pub const EMBED_DIM: usize = 16;

impl ConceptWorld {
    /// Concepts evenly spaced on a circle, grouped into `n_clusters`
    /// contiguous arcs. `embed_mix` in [0, 1) is the weight of the shared
    /// cluster direction inside each unit-norm embedding.
    pub fn circle(
        n_concepts: usize,
        radius: f64,
        sigma: f64,
        n_clusters: usize,
        neutral_sigma: f64,
        embed_mix: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::from_spec(WorldSpec {
            n_concepts,
            radius,
            sigma,
            n_clusters,
            neutral_sigma,
            embed_mix,
            seed,
        })
    }

    pub fn from_spec(spec: WorldSpec) -> Result<Self> {
        let WorldSpec { n_concepts, radius, sigma, n_clusters, neutral_sigma, embed_mix, seed } =
            spec;
        if n_concepts == 0 {
            return Err(Error::Empty { what: "concept set" });
        }
        if n_clusters == 0 || n_clusters > n_concepts {
            return Err(Error::InvalidRequest {
                reason: format!("{n_clusters} clusters for {n_concepts} concepts"),
            });
        }
        if n_clusters + n_concepts > EMBED_DIM {
            return Err(Error::InvalidRequest {
                reason: format!(
                    "embedding basis needs {} orthogonal directions, have {EMBED_DIM}",
                    n_clusters + n_concepts
                ),
            });
        }
        if !(radius > 0.0) || !(sigma > 0.0) || !(neutral_sigma > 0.0) {
            return Err(Error::InvalidRequest {
                reason: "radius and mode widths must be positive".into(),
            });
        }
        if !(0.0..1.0).contains(&embed_mix) {
            return Err(Error::InvalidRequest {
                reason: format!("embed_mix {embed_mix} outside [0, 1)"),
            });
        }
        let centers: Vec<[f64; 2]> = (0..n_concepts)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / n_concepts as f64;
                [radius * angle.cos(), radius * angle.sin()]
            })
            .collect();
        // Contiguous arcs: concept c belongs to cluster floor(c * k / n).
        let clusters: Vec<usize> =
            (0..n_concepts).map(|c| c * n_clusters / n_concepts).collect();

        // Orthonormal basis: first n_clusters columns are shared cluster
        // directions, the next n_concepts columns are private directions.
        let mut rng = rng_at(seed, &["world-embeddings"], &[]);
        let basis = Matrix::<f64>::random_orthogonal(EMBED_DIM, &mut rng);
        let private_w = (1.0 - embed_mix * embed_mix).sqrt();
        let embeddings = Matrix::from_fn(EMBED_DIM, n_concepts + 1, |r, c| {
            if c == n_concepts {
                0.0 // null token
            } else {
                embed_mix * basis.get(r, clusters[c])
                    + private_w * basis.get(r, n_clusters + c)
            }
        });

        Ok(Self { spec: WorldSpec { n_concepts, radius, sigma, n_clusters, neutral_sigma, embed_mix, seed }, centers, clusters, embeddings })
    }

    /// The default eight-concept world used throughout the bench.
    pub fn default_world(seed: u64) -> Self {
        Self::from_spec(WorldSpec { seed, ..WorldSpec::default() })
            .expect("default world parameters are valid")
    }

    /// The parameters this world was built from.
    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn n_concepts(&self) -> usize {
        self.centers.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.spec.n_clusters
    }

    pub fn center(&self, c: ConceptId) -> Result<[f64; 2]> {
        self.centers
            .get(c)
            .copied()
            .ok_or(Error::UnknownConcept { id: c, n: self.n_concepts() })
    }

    /// Mode width shared by all concept modes.
    pub fn sigma(&self) -> f64 {
        self.spec.sigma
    }

    pub fn neutral_sigma(&self) -> f64 {
        self.spec.neutral_sigma
    }

    pub fn cluster(&self, c: ConceptId) -> Result<usize> {
        self.clusters
            .get(c)
            .copied()
            .ok_or(Error::UnknownConcept { id: c, n: self.n_concepts() })
    }

    /// Frozen token embeddings, d_x x (n_concepts + 1); the trailing column
    /// is the zero null token.
    pub fn embeddings(&self) -> &Matrix<f64> {
        &self.embeddings
    }

    /// A concept's embedding as a d_x x 1 column.
    pub fn embedding(&self, c: ConceptId) -> Result<Matrix<f64>> {
        if c >= self.n_concepts() {
            return Err(Error::UnknownConcept { id: c, n: self.n_concepts() });
        }
        Ok(Matrix::from_fn(EMBED_DIM, 1, |r, _| self.embeddings.get(r, c)))
    }

    /// Token matrix for a condition. `Null` attends over the whole
    /// vocabulary (every concept token plus the reserved zero token),
    /// `Neutral` is the reserved zero token alone, and concept conditions
    /// get one column per mentioned concept.
    pub fn condition_tokens(&self, cond: &Condition) -> Result<Matrix<f64>> {
        cond.validate(self.n_concepts())?;
        match cond {
            Condition::Null => Ok(self.embeddings.clone()),
            Condition::Neutral => Ok(Matrix::zeros(EMBED_DIM, 1)),
            Condition::Single(c) => self.embedding(*c),
            Condition::Multi(cs) => Ok(Matrix::from_fn(EMBED_DIM, cs.len(), |r, j| {
                self.embeddings.get(r, cs[j])
            })),
        }
    }

    /// Draw a clean point from concept `c`'s mode.
    pub fn sample_concept<R: rand::Rng>(&self, c: ConceptId, rng: &mut R) -> Result<[f64; 2]> {
        let center = self.center(c)?;
        let n0: f64 = StandardNormal.sample(rng);
        let n1: f64 = StandardNormal.sample(rng);
        Ok([center[0] + self.sigma() * n0, center[1] + self.sigma() * n1])
    }

    /// Draw a clean point from the neutral mode at the origin.
    pub fn sample_neutral<R: rand::Rng>(&self, rng: &mut R) -> [f64; 2] {
        let n0: f64 = StandardNormal.sample(rng);
        let n1: f64 = StandardNormal.sample(rng);
        [self.neutral_sigma() * n0, self.neutral_sigma() * n1]
    }
}

/// A 2-D point as a 2x1 column matrix.
pub fn vec2(x: f64, y: f64) -> Matrix<f64> {
    Matrix::from_fn(2, 1, |r, _| if r == 0 { x } else { y })
}

/// Reads a 2x1 column back into a point.
pub fn to_point(m: &Matrix<f64>) -> Result<[f64; 2]> {
    if m.shape() != (2, 1) {
        return Err(Error::BadShape {
            op: "to_point",
            rows: m.rows(),
            cols: m.cols(),
            expected: "2x1".into(),
        });
    }
    Ok([m.get(0, 0), m.get(1, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> ConceptWorld {
        ConceptWorld::default_world(7)
    }

    #[test]
    fn circle_layout_and_clusters() {
        let w = world();
        assert_eq!(w.n_concepts(), 8);
        assert_eq!(w.center(0).unwrap(), [4.0, 0.0]);
        let c2 = w.center(2).unwrap();
        assert!((c2[0]).abs() < 1e-12 && (c2[1] - 4.0).abs() < 1e-12);
        // Two contiguous arcs of four.
        assert_eq!((0..8).map(|c| w.cluster(c).unwrap()).collect::<Vec<_>>(), vec![
            0, 0, 0, 0, 1, 1, 1, 1
        ]);
        assert!(matches!(w.center(8), Err(Error::UnknownConcept { id: 8, n: 8 })));
    }

    #[test]
    fn embeddings_unit_norm_and_cluster_correlated() {
        let w = world();
        let dot = |a: &Matrix<f64>, b: &Matrix<f64>| a.frobenius_inner(b).unwrap();
        for c in 0..8 {
            let e = w.embedding(c).unwrap();
            assert!((dot(&e, &e) - 1.0).abs() < 1e-10, "embedding {c} not unit norm");
        }
        // Same cluster: cosine = embed_mix^2; different cluster: 0.
        let (e0, e1, e4) =
            (w.embedding(0).unwrap(), w.embedding(1).unwrap(), w.embedding(4).unwrap());
        assert!((dot(&e0, &e1) - 0.25).abs() < 1e-10);
        assert!(dot(&e0, &e4).abs() < 1e-10);
    }

    #[test]
    fn neutral_is_the_zero_token_and_null_spans_the_vocabulary() {
        let w = world();
        let x = w.condition_tokens(&Condition::Neutral).unwrap();
        assert_eq!(x.shape(), (EMBED_DIM, 1));
        assert!(x.as_slice().iter().all(|&v| v == 0.0));
        // Trailing embedding column is the same reserved zero token.
        assert!((0..EMBED_DIM).all(|r| w.embeddings().get(r, 8) == 0.0));
        let v = w.condition_tokens(&Condition::Null).unwrap();
        assert_eq!(v.shape(), (EMBED_DIM, 9));
        let e5 = w.embedding(5).unwrap();
        assert!((0..EMBED_DIM).all(|r| v.get(r, 5) == e5.get(r, 0)));
    }

    #[test]
    fn multi_condition_stacks_columns() {
        let w = world();
        let x = w.condition_tokens(&Condition::Multi(vec![3, 5])).unwrap();
        assert_eq!(x.shape(), (EMBED_DIM, 2));
        let e3 = w.embedding(3).unwrap();
        for r in 0..EMBED_DIM {
            assert_eq!(x.get(r, 0), e3.get(r, 0));
        }
    }

    #[test]
    fn condition_validation() {
        let w = world();
        assert!(w.condition_tokens(&Condition::Single(9)).is_err());
        assert!(w.condition_tokens(&Condition::Multi(vec![])).is_err());
        assert!(w.condition_tokens(&Condition::Multi(vec![1, 1])).is_err());
        assert!(Condition::Null.validate(0).is_ok());
    }

    #[test]
    fn condition_serde_shapes() {
        let null: Condition = serde_json::from_str("null").unwrap();
        assert_eq!(null, Condition::Null);
        let neutral: Condition = serde_json::from_str("\"neutral\"").unwrap();
        assert_eq!(neutral, Condition::Neutral);
        let single: Condition = serde_json::from_str("5").unwrap();
        assert_eq!(single, Condition::Single(5));
        let multi: Condition = serde_json::from_str("[1,2]").unwrap();
        assert_eq!(multi, Condition::Multi(vec![1, 2]));
        assert_eq!(serde_json::to_string(&Condition::Null).unwrap(), "null");
        assert_eq!(serde_json::to_string(&Condition::Neutral).unwrap(), "\"neutral\"");
        assert_eq!(serde_json::to_string(&Condition::Single(3)).unwrap(), "3");
        assert!(serde_json::from_str::<Condition>("\"blue\"").is_err());
    }

    #[test]
    fn sampling_lands_near_modes() {
        let w = world();
        let mut rng = rng_at(1, &["test-world"], &[]);
        for c in 0..8 {
            let center = w.center(c).unwrap();
            let p = w.sample_concept(c, &mut rng).unwrap();
            let d = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt();
            assert!(d < 5.0 * 0.3, "sample for {c} too far: {d}");
        }
        let p = w.sample_neutral(&mut rng);
        assert!((p[0].powi(2) + p[1].powi(2)).sqrt() < 5.0 * 0.5);
    }

    #[test]
    fn world_construction_is_deterministic() {
        let a = ConceptWorld::default_world(7);
        let b = ConceptWorld::default_world(7);
        assert_eq!(a.embeddings(), b.embeddings());
        let c = ConceptWorld::default_world(8);
        assert_ne!(a.embeddings(), c.embeddings());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let w = world();
        let js = serde_json::to_string(w.spec()).unwrap();
        let spec: WorldSpec = serde_json::from_str(&js).unwrap();
        let rebuilt = spec.build().unwrap();
        assert_eq!(w.embeddings(), rebuilt.embeddings());
        assert_eq!(w.center(3).unwrap(), rebuilt.center(3).unwrap());
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(ConceptWorld::circle(0, 4.0, 0.3, 1, 0.5, 0.5, 1).is_err());
        assert!(ConceptWorld::circle(8, 4.0, 0.3, 0, 0.5, 0.5, 1).is_err());
        assert!(ConceptWorld::circle(8, 4.0, 0.3, 9, 0.5, 0.5, 1).is_err());
        assert!(ConceptWorld::circle(15, 4.0, 0.3, 2, 0.5, 0.5, 1).is_err()); // basis overflow
        assert!(ConceptWorld::circle(8, -1.0, 0.3, 2, 0.5, 0.5, 1).is_err());
        assert!(ConceptWorld::circle(8, 4.0, 0.3, 2, 0.5, 1.0, 1).is_err());
    }

    #[test]
    fn point_round_trip() {
        let m = vec2(1.5, -2.0);
        assert_eq!(to_point(&m).unwrap(), [1.5, -2.0]);
        assert!(to_point(&Matrix::zeros(3, 1)).is_err());
    }
}
