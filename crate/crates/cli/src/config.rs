//! Flat TOML run configuration: every knob is a top-level key so sweep
//! files stay hand-editable, and parsing reports all offending keys at
//! once rather than failing on the first.

use std::fmt::Write as _;

use erasure_core::compose::Strategy;
use erasure_core::attention::ProjSet;
use erasure_core::protocol::{ExperimentSpec, Method, ProtocolSpec};
use erasure_core::training::{BaseTrainConfig, TrainingConfig};
use erasure_core::world::WorldSpec;

/// Resolved run configuration; [`Default`] mirrors the library defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // world
    pub n_concepts: usize,
    pub radius: f64,
    pub sigma: f64,
    pub n_clusters: usize,
    pub neutral_sigma: f64,
    pub embed_mix: f64,
    // diffusion schedule
    pub timesteps: usize,
    // base-model training
    pub base_steps: usize,
    pub base_batch: usize,
    pub base_learning_rate: f64,
    pub neutral_prob: f64,
    // adapter training
    pub rank: usize,
    pub adapted: ProjSet,
    pub scale: f64,
    pub std_a: f64,
    pub lambda_aware: f64,
    pub lambda_agnostic: f64,
    pub lambda_pbo: f64,
    pub epochs: usize,
    pub steps_per_concept_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pair_threshold: usize,
    pub pair_sample_count: usize,
    // evaluation
    pub samples_per_cell: usize,
    pub ddim_steps: usize,
    pub guidance: f64,
    pub strategy: Strategy,
    pub seed: u64,
    pub gate_seeds: usize,
    pub gate_threshold: f64,
    pub scope_sizes: Vec<usize>,
    pub subset_sizes: Vec<usize>,
    pub methods: Vec<Method>,
    // lambda sweep (paired by index; empty = single run)
    pub sweep_lambda_aware: Vec<f64>,
    pub sweep_lambda_agnostic: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = WorldSpec::default();
        let base = BaseTrainConfig::default();
        let train = TrainingConfig::default();
        let exp = ExperimentSpec::new(ProtocolSpec::ScopeScaling { scope_sizes: vec![] }, 0);
        Self {
            n_concepts: world.n_concepts,
            radius: world.radius,
            sigma: world.sigma,
            n_clusters: world.n_clusters,
            neutral_sigma: world.neutral_sigma,
            embed_mix: world.embed_mix,
            timesteps: 100,
            base_steps: base.steps,
            base_batch: base.batch_size,
            base_learning_rate: base.learning_rate,
            neutral_prob: base.neutral_prob,
            rank: train.rank,
            adapted: train.adapted,
            scale: train.scale,
            std_a: train.std_a,
            lambda_aware: train.lambda_aware,
            lambda_agnostic: train.lambda_agnostic,
            lambda_pbo: train.lambda_pbo,
            epochs: train.epochs,
            steps_per_concept_per_epoch: train.steps_per_concept_per_epoch,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            pair_threshold: train.pair_threshold,
            pair_sample_count: train.pair_sample_count,
            samples_per_cell: exp.samples_per_cell,
            ddim_steps: exp.steps,
            guidance: exp.guidance,
            strategy: exp.strategy,
            seed: exp.seed,
            gate_seeds: exp.gate_seeds,
            gate_threshold: exp.gate_threshold,
            scope_sizes: vec![5, 8],
            subset_sizes: vec![2, 3, 4, 5],
            methods: Method::ALL.to_vec(),
            sweep_lambda_aware: vec![],
            sweep_lambda_agnostic: vec![],
        }
    }
}

impl RunConfig {
    /// Parses flat TOML over the defaults; collects every offending key.
    pub fn parse(text: &str) -> Result<Self, String> {
        let table: toml::Table =
            text.parse().map_err(|e| format!("config is not valid TOML: {e}"))?;
        let mut cfg = RunConfig::default();
        let mut errs: Vec<String> = Vec::new();
        for (key, value) in &table {
            match key.as_str() {
                "n_concepts" => set_usize(&mut cfg.n_concepts, key, value, &mut errs),
                "radius" => set_f64(&mut cfg.radius, key, value, &mut errs),
                "sigma" => set_f64(&mut cfg.sigma, key, value, &mut errs),
                "n_clusters" => set_usize(&mut cfg.n_clusters, key, value, &mut errs),
                "neutral_sigma" => set_f64(&mut cfg.neutral_sigma, key, value, &mut errs),
                "embed_mix" => set_f64(&mut cfg.embed_mix, key, value, &mut errs),
                "timesteps" => set_usize(&mut cfg.timesteps, key, value, &mut errs),
                "base_steps" => set_usize(&mut cfg.base_steps, key, value, &mut errs),
                "base_batch" => set_usize(&mut cfg.base_batch, key, value, &mut errs),
                "base_learning_rate" => set_f64(&mut cfg.base_learning_rate, key, value, &mut errs),
                "neutral_prob" => set_f64(&mut cfg.neutral_prob, key, value, &mut errs),
                "rank" => set_usize(&mut cfg.rank, key, value, &mut errs),
                "adapted" => match value.clone().try_into::<ProjSet>() {
                    Ok(p) => cfg.adapted = p,
                    Err(e) => errs.push(format!("key `{key}`: {e}")),
                },
                "scale" => set_f64(&mut cfg.scale, key, value, &mut errs),
                "std_a" => set_f64(&mut cfg.std_a, key, value, &mut errs),
                "lambda_aware" => set_f64(&mut cfg.lambda_aware, key, value, &mut errs),
                "lambda_agnostic" => set_f64(&mut cfg.lambda_agnostic, key, value, &mut errs),
                "lambda_pbo" => set_f64(&mut cfg.lambda_pbo, key, value, &mut errs),
                "epochs" => set_usize(&mut cfg.epochs, key, value, &mut errs),
                "steps_per_concept_per_epoch" => {
                    set_usize(&mut cfg.steps_per_concept_per_epoch, key, value, &mut errs)
                }
                "batch_size" => set_usize(&mut cfg.batch_size, key, value, &mut errs),
                "learning_rate" => set_f64(&mut cfg.learning_rate, key, value, &mut errs),
                "pair_threshold" => set_usize(&mut cfg.pair_threshold, key, value, &mut errs),
                "pair_sample_count" => {
                    set_usize(&mut cfg.pair_sample_count, key, value, &mut errs)
                }
                "samples_per_cell" => set_usize(&mut cfg.samples_per_cell, key, value, &mut errs),
                "ddim_steps" => set_usize(&mut cfg.ddim_steps, key, value, &mut errs),
                "guidance" => set_f64(&mut cfg.guidance, key, value, &mut errs),
                "strategy" => match value.as_str().map(str::parse::<Strategy>) {
                    Some(Ok(s)) => cfg.strategy = s,
                    Some(Err(e)) => errs.push(format!("key `{key}`: {e}")),
                    None => errs.push(format!("key `{key}`: expected a string")),
                },
                "seed" => set_u64(&mut cfg.seed, key, value, &mut errs),
                "gate_seeds" => set_usize(&mut cfg.gate_seeds, key, value, &mut errs),
                "gate_threshold" => set_f64(&mut cfg.gate_threshold, key, value, &mut errs),
                "scope_sizes" => set_usize_list(&mut cfg.scope_sizes, key, value, &mut errs),
                "subset_sizes" => set_usize_list(&mut cfg.subset_sizes, key, value, &mut errs),
                "methods" => match str_list(value) {
                    Some(names) => {
                        let mut parsed = Vec::new();
                        for n in &names {
                            match n.parse::<Method>() {
                                Ok(m) => parsed.push(m),
                                Err(e) => errs.push(format!("key `{key}`: {e}")),
                            }
                        }
                        if parsed.len() == names.len() {
                            cfg.methods = parsed;
                        }
                    }
                    None => errs.push(format!("key `{key}`: expected a list of strings")),
                },
                "sweep_lambda_aware" => {
                    set_f64_list(&mut cfg.sweep_lambda_aware, key, value, &mut errs)
                }
                "sweep_lambda_agnostic" => {
                    set_f64_list(&mut cfg.sweep_lambda_agnostic, key, value, &mut errs)
                }
                _ => errs.push(format!("unknown key `{key}`")),
            }
        }
        if cfg.sweep_lambda_aware.len() != cfg.sweep_lambda_agnostic.len() {
            errs.push(format!(
                "keys `sweep_lambda_aware`/`sweep_lambda_agnostic`: lengths differ ({} vs {})",
                cfg.sweep_lambda_aware.len(),
                cfg.sweep_lambda_agnostic.len()
            ));
        }
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(format!("invalid config:\n  {}", errs.join("\n  ")))
        }
    }

    /// Full snapshot: every key explicit, reproducing this run exactly.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# world");
        let _ = writeln!(s, "n_concepts = {}", self.n_concepts);
        let _ = writeln!(s, "radius = {}", fl(self.radius));
        let _ = writeln!(s, "sigma = {}", fl(self.sigma));
        let _ = writeln!(s, "n_clusters = {}", self.n_clusters);
        let _ = writeln!(s, "neutral_sigma = {}", fl(self.neutral_sigma));
        let _ = writeln!(s, "embed_mix = {}", fl(self.embed_mix));
        let _ = writeln!(s, "\n# diffusion schedule");
        let _ = writeln!(s, "timesteps = {}", self.timesteps);
        let _ = writeln!(s, "\n# base-model training");
        let _ = writeln!(s, "base_steps = {}", self.base_steps);
        let _ = writeln!(s, "base_batch = {}", self.base_batch);
        let _ = writeln!(s, "base_learning_rate = {}", fl(self.base_learning_rate));
        let _ = writeln!(s, "neutral_prob = {}", fl(self.neutral_prob));
        let _ = writeln!(s, "\n# adapter training");
        let _ = writeln!(s, "rank = {}", self.rank);
        let _ = writeln!(s, "adapted = \"{}\"", self.adapted);
        let _ = writeln!(s, "scale = {}", fl(self.scale));
        let _ = writeln!(s, "std_a = {}", fl(self.std_a));
        let _ = writeln!(s, "lambda_aware = {}", fl(self.lambda_aware));
        let _ = writeln!(s, "lambda_agnostic = {}", fl(self.lambda_agnostic));
        let _ = writeln!(s, "lambda_pbo = {}", fl(self.lambda_pbo));
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "steps_per_concept_per_epoch = {}", self.steps_per_concept_per_epoch);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {}", fl(self.learning_rate));
        let _ = writeln!(s, "pair_threshold = {}", self.pair_threshold);
        let _ = writeln!(s, "pair_sample_count = {}", self.pair_sample_count);
        let _ = writeln!(s, "\n# evaluation");
        let _ = writeln!(s, "samples_per_cell = {}", self.samples_per_cell);
        let _ = writeln!(s, "ddim_steps = {}", self.ddim_steps);
        let _ = writeln!(s, "guidance = {}", fl(self.guidance));
        let _ = writeln!(s, "strategy = \"{}\"", self.strategy);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "gate_seeds = {}", self.gate_seeds);
        let _ = writeln!(s, "gate_threshold = {}", fl(self.gate_threshold));
        let _ = writeln!(s, "scope_sizes = {:?}", self.scope_sizes);
        let _ = writeln!(s, "subset_sizes = {:?}", self.subset_sizes);
        let _ = writeln!(
            s,
            "methods = [{}]",
            self.methods.iter().map(|m| format!("\"{m}\"")).collect::<Vec<_>>().join(", ")
        );
        let _ = writeln!(s, "\n# lambda sweep");
        let _ = writeln!(s, "sweep_lambda_aware = {:?}", self.sweep_lambda_aware);
        let _ = writeln!(s, "sweep_lambda_agnostic = {:?}", self.sweep_lambda_agnostic);
        s
    }

    pub fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            n_concepts: self.n_concepts,
            radius: self.radius,
            sigma: self.sigma,
            n_clusters: self.n_clusters,
            neutral_sigma: self.neutral_sigma,
            embed_mix: self.embed_mix,
            seed: self.seed,
        }
    }

    pub fn base_config(&self) -> BaseTrainConfig {
        BaseTrainConfig {
            steps: self.base_steps,
            batch_size: self.base_batch,
            learning_rate: self.base_learning_rate,
            neutral_prob: self.neutral_prob,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            rank: self.rank,
            adapted: self.adapted,
            scale: self.scale,
            std_a: self.std_a,
            lambda_aware: self.lambda_aware,
            lambda_agnostic: self.lambda_agnostic,
            lambda_pbo: self.lambda_pbo,
            epochs: self.epochs,
            steps_per_concept_per_epoch: self.steps_per_concept_per_epoch,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            pair_threshold: self.pair_threshold,
            pair_sample_count: self.pair_sample_count,
        }
    }

    pub fn experiment_spec(&self, protocol: ProtocolSpec) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(protocol, self.seed);
        spec.samples_per_cell = self.samples_per_cell;
        spec.steps = self.ddim_steps;
        spec.guidance = self.guidance;
        spec.strategy = self.strategy;
        spec.train = self.training_config();
        spec.gate_seeds = self.gate_seeds;
        spec.gate_threshold = self.gate_threshold;
        spec
    }

    /// Lambda sweep pairs, or `None` for a single-run config.
    pub fn sweep_pairs(&self) -> Option<Vec<(f64, f64)>> {
        if self.sweep_lambda_aware.is_empty() {
            None
        } else {
            Some(
                self.sweep_lambda_aware
                    .iter()
                    .copied()
                    .zip(self.sweep_lambda_agnostic.iter().copied())
                    .collect(),
            )
        }
    }
}

// TOML prints bare integers for whole floats; keep a `.0` so the snapshot
// round-trips as a float-typed value.
fn fl(v: f64) -> String {
    if v == v.trunc() && v.is_finite() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

fn set_usize(slot: &mut usize, key: &str, v: &toml::Value, errs: &mut Vec<String>) {
    match v.as_integer() {
        Some(i) if i >= 0 => *slot = i as usize,
        _ => errs.push(format!("key `{key}`: expected a non-negative integer, got {v}")),
    }
}

fn set_u64(slot: &mut u64, key: &str, v: &toml::Value, errs: &mut Vec<String>) {
    match v.as_integer() {
        Some(i) if i >= 0 => *slot = i as u64,
        _ => errs.push(format!("key `{key}`: expected a non-negative integer, got {v}")),
    }
}

fn set_f64(slot: &mut f64, key: &str, v: &toml::Value, errs: &mut Vec<String>) {
    match v.as_float().or_else(|| v.as_integer().map(|i| i as f64)) {
        Some(f) => *slot = f,
        None => errs.push(format!("key `{key}`: expected a number, got {v}")),
    }
}

fn set_usize_list(slot: &mut Vec<usize>, key: &str, v: &toml::Value, errs: &mut Vec<String>) {
    let Some(arr) = v.as_array() else {
        errs.push(format!("key `{key}`: expected a list of integers, got {v}"));
        return;
    };
    let mut out = Vec::with_capacity(arr.len());
    for item in arr {
        match item.as_integer() {
            Some(i) if i >= 0 => out.push(i as usize),
            _ => {
                errs.push(format!("key `{key}`: expected non-negative integers, got {item}"));
                return;
            }
        }
    }
    *slot = out;
}

fn set_f64_list(slot: &mut Vec<f64>, key: &str, v: &toml::Value, errs: &mut Vec<String>) {
    let Some(arr) = v.as_array() else {
        errs.push(format!("key `{key}`: expected a list of numbers, got {v}"));
        return;
    };
    let mut out = Vec::with_capacity(arr.len());
    for item in arr {
        match item.as_float().or_else(|| item.as_integer().map(|i| i as f64)) {
            Some(f) => out.push(f),
            None => {
                errs.push(format!("key `{key}`: expected numbers, got {item}"));
                return;
            }
        }
    }
    *slot = out;
}

fn str_list(v: &toml::Value) -> Option<Vec<String>> {
    v.as_array()?.iter().map(|i| i.as_str().map(String::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_snapshot() {
        let cfg = RunConfig::default();
        let snap = cfg.to_toml();
        let back = RunConfig::parse(&snap).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parse_overrides_only_named_keys() {
        let cfg = RunConfig::parse("n_concepts = 3\nlambda_aware = 0.25\nstrategy = \"merge\"\n")
            .unwrap();
        assert_eq!(cfg.n_concepts, 3);
        assert_eq!(cfg.lambda_aware, 0.25);
        assert_eq!(cfg.strategy, Strategy::Merge);
        assert_eq!(cfg.rank, RunConfig::default().rank);
    }

    #[test]
    fn all_offending_keys_are_listed_together() {
        let err = RunConfig::parse(
            "n_concepts = \"eight\"\nbogus_key = 1\nmethods = [\"nope\"]\nsweep_lambda_aware = [0.1]\n",
        )
        .unwrap_err();
        assert!(err.contains("`n_concepts`"), "{err}");
        assert!(err.contains("unknown key `bogus_key`"), "{err}");
        assert!(err.contains("unknown method"), "{err}");
        assert!(err.contains("lengths differ"), "{err}");
    }

    #[test]
    fn sweep_pairs_zip_in_order() {
        let cfg = RunConfig::parse(
            "sweep_lambda_aware = [0.1, 0.0]\nsweep_lambda_agnostic = [0.2, 0.0]\n",
        )
        .unwrap();
        assert_eq!(cfg.sweep_pairs(), Some(vec![(0.1, 0.2), (0.0, 0.0)]));
        assert_eq!(RunConfig::default().sweep_pairs(), None);
    }

    #[test]
    fn conversions_carry_every_field() {
        let cfg = RunConfig::parse("seed = 7\nrank = 3\ntimesteps = 50\nguidance = 2.5\n").unwrap();
        assert_eq!(cfg.world_spec().seed, 7);
        assert_eq!(cfg.training_config().rank, 3);
        let spec = cfg.experiment_spec(ProtocolSpec::Conjunction { subset_sizes: vec![2] });
        assert_eq!(spec.seed, 7);
        assert_eq!(spec.guidance, 2.5);
        assert_eq!(spec.train.rank, 3);
    }
}
