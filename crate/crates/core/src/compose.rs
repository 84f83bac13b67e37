//! Inference-time composition of per-concept adapters.
//!
//! A generation request names an erasure subset; only those concepts'
//! adapters are activated for that one sample, and prompts outside the
//! subset bypass the adapters entirely, so unrelated outputs are
//! bit-identical to the base model. Three combination strategies are
//! provided: `Composite` averages per-adapter guided predictions, `Merge`
//! sums weight deltas into a single modified block, and `Switch`
//! round-robins one adapter per denoising step. Nothing here mutates the
//! base model or the adapters; every strategy applies deltas transiently.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionWeights, ConceptId, LoraAdapter, Proj};
use crate::denoiser::{guided_eps, Denoiser};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sampler::{ddim_drive, ddim_sample};
use crate::schedule::NoiseSchedule;
use crate::world::Condition;

/// How the active adapters are combined during one sampling run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Mean of the per-adapter guided noise predictions.
    Composite,
    /// All weight deltas applied at once to the attention block.
    Merge,
    /// Adapter `step_index mod n` alone guides each step.
    Switch,
}

impl Strategy {
    /// Lowercase name, matching the serialized form.
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Composite => "composite",
            Strategy::Merge => "merge",
            Strategy::Switch => "switch",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composite" => Ok(Strategy::Composite),
            "merge" => Ok(Strategy::Merge),
            "switch" => Ok(Strategy::Switch),
            other => Err(Error::InvalidRequest {
                reason: format!("unknown strategy {other:?}, expected composite|merge|switch"),
            }),
        }
    }
}

/// One erasure-aware generation request.
///
/// `scope` names the concepts the adapter set was trained to erase;
/// `subset` selects which of those are suppressed for this sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErasureRequest {
    pub scope: Vec<ConceptId>,
    pub subset: Vec<ConceptId>,
    pub condition: Condition,
    pub strategy: Strategy,
    pub guidance: f64,
    pub seed: u64,
}

impl ErasureRequest {
    /// Checks `subset ⊆ scope ⊆ universe`, duplicate-freeness, the
    /// condition, and the guidance weight.
    pub fn validate(&self, n_concepts: usize) -> Result<()> {
        for set in [(&self.scope, "scope"), (&self.subset, "subset")] {
            let (ids, name) = set;
            for (i, &id) in ids.iter().enumerate() {
                if id >= n_concepts {
                    return Err(Error::UnknownConcept { id, n: n_concepts });
                }
                if ids[..i].contains(&id) {
                    return Err(Error::InvalidRequest {
                        reason: format!("concept {id} repeats in {name}"),
                    });
                }
            }
        }
        if let Some(&id) = self.subset.iter().find(|id| !self.scope.contains(id)) {
            return Err(Error::InvalidRequest {
                reason: format!("subset concept {id} is outside the scope"),
            });
        }
        self.condition.validate(n_concepts)?;
        if !self.guidance.is_finite() {
            return Err(Error::InvalidRequest {
                reason: format!("guidance weight {}", self.guidance),
            });
        }
        Ok(())
    }
}

/// Mean of the per-adapter classifier-free-guided noise predictions.
pub fn composite_predict(
    den: &Denoiser,
    x_t: &Matrix<f64>,
    t: usize,
    cond: &Condition,
    sched: &NoiseSchedule,
    active: &[&LoraAdapter<f64>],
    w: f64,
) -> Result<Matrix<f64>> {
    if active.is_empty() {
        return Err(Error::Empty { what: "active adapter set" });
    }
    let mut acc = guided_eps(den, x_t, t, cond, sched, &active[..1], w)?;
    for ad in &active[1..] {
        acc = acc.add(&guided_eps(den, x_t, t, cond, sched, std::slice::from_ref(ad), w)?)?;
    }
    Ok(acc.scale(1.0 / active.len() as f64))
}

/// Per-projection weight deltas summed across `active`, zero where no
/// adapter touches a projection. Shapes follow `base`.
pub fn merge_adapters(
    active: &[&LoraAdapter<f64>],
    base: &AttentionWeights<f64>,
) -> Result<[Matrix<f64>; 4]> {
    let mut deltas = Proj::ALL.map(|p| {
        let (r, c) = base.proj(p).shape();
        Matrix::<f64>::zeros(r, c)
    });
    for ad in active {
        for p in ad.adapted().iter() {
            deltas[p.index()] = deltas[p.index()].add(&ad.delta_w(p)?)?;
        }
    }
    Ok(deltas)
}

/// Guided prediction of the single adapter selected by `step_index mod n`.
pub fn switch_predict(
    den: &Denoiser,
    x_t: &Matrix<f64>,
    t: usize,
    cond: &Condition,
    sched: &NoiseSchedule,
    active: &[&LoraAdapter<f64>],
    w: f64,
    step_index: usize,
) -> Result<Matrix<f64>> {
    if active.is_empty() {
        return Err(Error::Empty { what: "active adapter set" });
    }
    let sel = &active[step_index % active.len()];
    guided_eps(den, x_t, t, cond, sched, std::slice::from_ref(sel), w)
}

/// Serves one request: routes non-subset prompts to the untouched base
/// model and subset prompts through the requested strategy.
pub fn erase_sample(
    den: &Denoiser,
    sched: &NoiseSchedule,
    adapters: &[LoraAdapter<f64>],
    req: &ErasureRequest,
    steps: usize,
) -> Result<[f64; 2]> {
    req.validate(den.world().n_concepts())?;
    let prompted = req.condition.concepts();
    let touches = prompted.iter().any(|c| req.subset.contains(c));
    if !touches {
        // The utility-preservation guarantee: same call the base serves.
        return ddim_sample(den, sched, &req.condition, &[], steps, req.guidance, req.seed);
    }
    let active = req
        .subset
        .iter()
        .map(|&id| {
            adapters.iter().find(|ad| ad.concept() == id).ok_or_else(|| Error::InvalidRequest {
                reason: format!("no adapter supplied for subset concept {id}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let w = req.guidance;
    match req.strategy {
        Strategy::Composite => ddim_drive(sched, steps, req.seed, |x, t, _| {
            composite_predict(den, x, t, &req.condition, sched, &active, w)
        }),
        Strategy::Merge => ddim_drive(sched, steps, req.seed, |x, t, _| {
            guided_eps(den, x, t, &req.condition, sched, &active, w)
        }),
        Strategy::Switch => ddim_drive(sched, steps, req.seed, |x, t, k| {
            switch_predict(den, x, t, &req.condition, sched, &active, w, k)
        }),
    }
}
