//! Evaluation protocols: scope scaling, conjunction subset scaling, and
//! hierarchical scope expansion.
//!
//! An experiment trains adapters as each protocol requires, serves every
//! evaluation prompt through the composition engine, and scores each cell
//! into a [`MetricsReport`]. Cells are isolated: one cell's failure is
//! recorded as a diagnostic and the remaining cells still run. All
//! randomness derives from the experiment's root seed via tagged child
//! streams that never include the trained scope size, so cells that claim
//! to be scope-invariant can be compared bit-for-bit.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::attention::{ConceptId, LoraAdapter};
use crate::compose::{erase_sample, ErasureRequest, Strategy};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::metrics::{self, harmonic_accuracy, ClassLabel, MetricsReport};
use crate::sampler::{ddim_sample, DEFAULT_GUIDANCE, DEFAULT_STEPS};
use crate::schedule::NoiseSchedule;
use crate::seeds::{child_seed, rng_at};
use crate::taxonomy::{tertile_buckets, toy_taxonomy, Level, Taxonomy};
use crate::training::{base_quality, train_scope, TrainingConfig};
use crate::world::Condition;

/// How many samples each evaluation cell draws per metric by default.
pub const DEFAULT_SAMPLES_PER_CELL: usize = 200;

/// Erasure pipelines the protocols compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Jointly trained adapters with orthogonality penalties, activated
    /// per request.
    DynamicOrtho,
    /// Same pipeline with both orthogonality penalties at zero.
    DynamicNoOrtho,
    /// The ortho-trained adapters of the whole scope merged into the
    /// weights for every prompt, subset ignored.
    StaticMerged,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DynamicOrtho => "dynamic-ortho",
            Method::DynamicNoOrtho => "dynamic-no-ortho",
            Method::StaticMerged => "static-merged",
        }
    }

    /// All methods, in canonical comparison order.
    pub const ALL: [Method; 3] =
        [Method::DynamicOrtho, Method::DynamicNoOrtho, Method::StaticMerged];

    // Training config actually used: the no-ortho ablation zeroes every
    // penalty; the static baseline reuses the ortho training.
    fn train_config(self, cfg: &TrainingConfig) -> TrainingConfig {
        match self {
            Method::DynamicOrtho | Method::StaticMerged => cfg.clone(),
            Method::DynamicNoOrtho => TrainingConfig {
                lambda_aware: 0.0,
                lambda_agnostic: 0.0,
                lambda_pbo: 0.0,
                ..cfg.clone()
            },
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic-ortho" => Ok(Method::DynamicOrtho),
            "dynamic-no-ortho" => Ok(Method::DynamicNoOrtho),
            "static-merged" => Ok(Method::StaticMerged),
            other => Err(Error::InvalidRequest {
                reason: format!(
                    "unknown method {other:?}; expected dynamic-ortho, dynamic-no-ortho, or static-merged"
                ),
            }),
        }
    }
}

/// Which protocol an experiment executes.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolSpec {
    /// Train scopes of the listed sizes; evaluate singleton subsets.
    ScopeScaling { scope_sizes: Vec<usize> },
    /// Full-scope training; conjunction subsets of the listed sizes.
    Conjunction { subset_sizes: Vec<usize> },
    /// Full-scope training; subsets follow taxonomy nodes (the toy
    /// cluster taxonomy when none is supplied).
    Hierarchy { taxonomy: Option<Taxonomy> },
}

impl ProtocolSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolSpec::ScopeScaling { .. } => "scope-scaling",
            ProtocolSpec::Conjunction { .. } => "conjunction",
            ProtocolSpec::Hierarchy { .. } => "hierarchy",
        }
    }
}

/// Everything an experiment run needs besides the trained base model.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub protocol: ProtocolSpec,
    pub samples_per_cell: usize,
    pub steps: usize,
    pub guidance: f64,
    pub strategy: Strategy,
    pub seed: u64,
    pub train: TrainingConfig,
    /// Conditional-sampling quality check before any cell runs; 0 skips.
    pub gate_seeds: usize,
    pub gate_threshold: f64,
}

impl ExperimentSpec {
    /// Defaults everything but the protocol and root seed.
    pub fn new(protocol: ProtocolSpec, seed: u64) -> Self {
        Self {
            protocol,
            samples_per_cell: DEFAULT_SAMPLES_PER_CELL,
            steps: DEFAULT_STEPS,
            guidance: DEFAULT_GUIDANCE,
            strategy: Strategy::Composite,
            seed,
            train: TrainingConfig::default(),
            gate_seeds: 200,
            gate_threshold: 0.9,
        }
    }
}

/// One scored evaluation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRow {
    pub method: &'static str,
    pub protocol: &'static str,
    /// Human-readable cell identity (concept, conjunction size, bucket).
    pub cell: String,
    pub scope_size: usize,
    pub subset_size: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// A cell that could not be evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub cell: String,
    pub reason: String,
}

/// All rows and diagnostics of one experiment run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<CellRow>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentReport {
    /// Report CSV: one line per cell.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,protocol,scope_size,subset_size,acc_ee,acc_up,acc_harmonic,w2,seed\n");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.method,
                r.protocol,
                r.scope_size,
                r.subset_size,
                m.acc_ee,
                m.acc_up,
                m.acc_harmonic,
                m.w2,
                r.seed
            );
        }
        out
    }
}

/// Contiguous complete 5-tuples of `classes`, each truncated to its first
/// `n` members, so target sets for different `n` are nested prefixes.
pub fn make_conjunction_targets(classes: &[ConceptId], n: usize) -> Result<Vec<Vec<ConceptId>>> {
    if !(2..=5).contains(&n) {
        return Err(Error::InvalidRequest {
            reason: format!("conjunction size must be in 2..=5, got {n}"),
        });
    }
    if classes.len() < 5 {
        return Err(Error::InvalidRequest {
            reason: format!("conjunction targets need at least 5 classes, got {}", classes.len()),
        });
    }
    Ok(classes.chunks_exact(5).map(|tuple| tuple[..n].to_vec()).collect())
}

// One prompt of a cell: condition, annotation concepts, sample seed.
type PromptPlan = Vec<(Condition, Vec<ConceptId>, u64)>;

// How a cell decides utility preservation.
#[derive(Clone, Copy, PartialEq)]
enum UpMode {
    // Every prompted concept must rank in the sample's top-N.
    TopN,
    // The sample's top-1 must be a concept outside the subset.
    ComplementMembership,
}

struct CellPlan {
    cell: String,
    scope: Vec<ConceptId>,
    subset: Vec<ConceptId>,
    subset_size: usize,
    ee: PromptPlan,
    up: PromptPlan,
    up_mode: UpMode,
}

/// Runs `spec` once per method over a shared training cache.
///
/// The base model must be frozen and should have passed the quality gate;
/// the gate reruns here unless `gate_seeds` is zero.
pub fn run_experiment(
    base: &Denoiser,
    sched: &NoiseSchedule,
    spec: &ExperimentSpec,
    methods: &[Method],
) -> Result<ExperimentReport> {
    if methods.is_empty() {
        return Err(Error::Empty { what: "method list" });
    }
    if spec.samples_per_cell == 0 {
        return Err(Error::Empty { what: "cell sample budget" });
    }
    if spec.gate_seeds > 0 {
        let rate = base_quality(base, sched, spec.gate_seeds, spec.steps, spec.guidance, spec.seed)?;
        if rate < spec.gate_threshold {
            return Err(Error::QualityGate { rate, required: spec.gate_threshold });
        }
    }
    let n = base.world().n_concepts();
    let plans = match &spec.protocol {
        ProtocolSpec::ScopeScaling { scope_sizes } => scope_scaling_plans(spec, n, scope_sizes)?,
        ProtocolSpec::Conjunction { subset_sizes } => conjunction_plans(spec, n, subset_sizes),
        ProtocolSpec::Hierarchy { taxonomy } => hierarchy_plans(base, spec, taxonomy)?,
    };
    let mut report = ExperimentReport::default();
    // Adapter sets keyed by (scope length, penalties zeroed?).
    let mut cache: HashMap<(usize, bool), Vec<LoraAdapter<f64>>> = HashMap::new();
    let train_seed = child_seed(spec.seed, &["train-adapters"], &[]);
    for &method in methods {
        let cfg = method.train_config(&spec.train);
        for plan in flatten_plans(&plans) {
            let key = (plan.scope.len(), method == Method::DynamicNoOrtho);
            if !cache.contains_key(&key) {
                match train_scope(base, sched, &plan.scope, &cfg, train_seed) {
                    Ok((adapters, _)) => {
                        cache.insert(key, adapters);
                    }
                    Err(e) => {
                        report.failures.push(CellFailure {
                            cell: format!("{}/{}", method.name(), plan.cell),
                            reason: e.to_string(),
                        });
                        continue;
                    }
                }
            }
            let adapters = &cache[&key];
            match run_cell(base, sched, adapters, plan, spec, method) {
                Ok(metrics) => report.rows.push(CellRow {
                    method: method.name(),
                    protocol: spec.protocol.name(),
                    cell: plan.cell.clone(),
                    scope_size: plan.scope.len(),
                    subset_size: plan.subset_size,
                    seed: spec.seed,
                    metrics,
                }),
                Err(e) => report.failures.push(CellFailure {
                    cell: format!("{}/{}", method.name(), plan.cell),
                    reason: e.to_string(),
                }),
            }
        }
    }
    // Planning failures (recorded before methods run) apply method-free.
    for plan_err in planning_failures(&plans) {
        report.failures.push(plan_err.clone());
    }
    Ok(report)
}

// Plans plus the planning-stage failures that should surface once.
struct Plans {
    cells: Vec<CellPlan>,
    failures: Vec<CellFailure>,
}

fn flatten_plans(plans: &Plans) -> impl Iterator<Item = &CellPlan> {
    plans.cells.iter()
}

fn planning_failures(plans: &Plans) -> impl Iterator<Item = &CellFailure> {
    plans.failures.iter()
}

// Singleton subsets over every trained scope size; prompt seeds never
// involve the scope, so equal cells across scopes stay comparable.
fn scope_scaling_plans(spec: &ExperimentSpec, n: usize, scope_sizes: &[usize]) -> Result<Plans> {
    if scope_sizes.is_empty() {
        return Err(Error::Empty { what: "scope size list" });
    }
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &len in scope_sizes {
        if len == 0 || len > n {
            failures.push(CellFailure {
                cell: format!("scope{len}"),
                reason: format!("scope size {len} outside 1..={n}"),
            });
            continue;
        }
        let scope: Vec<ConceptId> = (0..len).collect();
        for c in 0..len {
            let mut ee = Vec::new();
            let mut up = Vec::new();
            for i in 0..spec.samples_per_cell {
                let idx = [c as u64, i as u64];
                ee.push((
                    Condition::Single(c),
                    vec![c],
                    child_seed(spec.seed, &["cell-ee"], &idx),
                ));
                let mut rng = rng_at(spec.seed, &["cell-up-pick"], &idx);
                let other = (c + 1 + rng.random_range(0..n - 1)) % n;
                up.push((
                    Condition::Single(other),
                    vec![other],
                    child_seed(spec.seed, &["cell-up"], &idx),
                ));
            }
            cells.push(CellPlan {
                cell: format!("scope{len}-concept{c}"),
                scope: scope.clone(),
                subset: vec![c],
                subset_size: 1,
                ee,
                up,
                up_mode: UpMode::TopN,
            });
        }
    }
    Ok(Plans { cells, failures })
}

// Full-scope training; each cell erases the first-N prefix of a complete
// 5-tuple and checks preservation on N fresh non-targets per sample.
fn conjunction_plans(spec: &ExperimentSpec, n: usize, subset_sizes: &[usize]) -> Plans {
    let scope: Vec<ConceptId> = (0..n).collect();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    if subset_sizes.is_empty() {
        failures.push(CellFailure {
            cell: "conjunction".into(),
            reason: "no subset sizes requested".into(),
        });
    }
    for &size in subset_sizes {
        let targets = match make_conjunction_targets(&scope, size) {
            Ok(t) => t,
            Err(e) => {
                failures.push(CellFailure {
                    cell: format!("conjunction-n{size}"),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        for (tuple_idx, subset) in targets.into_iter().enumerate() {
            let complement: Vec<ConceptId> =
                (0..n).filter(|c| !subset.contains(c)).collect();
            if complement.len() < size {
                failures.push(CellFailure {
                    cell: format!("conjunction-n{size}-tuple{tuple_idx}"),
                    reason: format!(
                        "cannot draw {size} distinct non-targets from {} concepts",
                        complement.len()
                    ),
                });
                continue;
            }
            let mut ee = Vec::new();
            let mut up = Vec::new();
            for i in 0..spec.samples_per_cell {
                let idx = [size as u64, tuple_idx as u64, i as u64];
                ee.push((
                    Condition::Multi(subset.clone()),
                    subset.clone(),
                    child_seed(spec.seed, &["cell-ee"], &idx),
                ));
                let mut rng = rng_at(spec.seed, &["cell-up-pick"], &idx);
                let mut pool = complement.clone();
                // Partial Fisher-Yates: the first `size` entries.
                for k in 0..size {
                    let j = k + rng.random_range(0..pool.len() - k);
                    pool.swap(k, j);
                }
                let picked: Vec<ConceptId> = pool[..size].to_vec();
                up.push((
                    Condition::Multi(picked.clone()),
                    picked,
                    child_seed(spec.seed, &["cell-up"], &idx),
                ));
            }
            cells.push(CellPlan {
                cell: format!("conjunction-n{size}-tuple{tuple_idx}"),
                scope: scope.clone(),
                subset: subset.clone(),
                subset_size: size,
                ee,
                up,
                up_mode: UpMode::TopN,
            });
        }
    }
    Plans { cells, failures }
}

// Character / series / brand cells driven by taxonomy nodes; higher
// levels erase every unit concept beneath the node at once.
fn hierarchy_plans(
    base: &Denoiser,
    spec: &ExperimentSpec,
    taxonomy: &Option<Taxonomy>,
) -> Result<Plans> {
    let world = base.world();
    let n = world.n_concepts();
    let tax = match taxonomy {
        Some(t) => t.clone(),
        None => toy_taxonomy(world)?,
    };
    if tax.n_characters() != n {
        return Err(Error::InvalidRequest {
            reason: format!(
                "taxonomy has {} characters but the world has {n} concepts",
                tax.n_characters()
            ),
        });
    }
    let scope: Vec<ConceptId> = (0..n).collect();
    let mut cells = Vec::new();
    let mut failures = Vec::new();

    // Character level: one pooled cell cycling through every character.
    let mut ee = Vec::new();
    let mut up = Vec::new();
    for i in 0..spec.samples_per_cell {
        let c = i % n;
        let idx = [i as u64];
        ee.push((Condition::Single(c), vec![c], child_seed(spec.seed, &["hier-char-ee"], &idx)));
        let mut rng = rng_at(spec.seed, &["hier-char-up-pick"], &idx);
        let other = (c + 1 + rng.random_range(0..n - 1)) % n;
        up.push((
            Condition::Single(other),
            vec![other],
            child_seed(spec.seed, &["hier-char-up"], &idx),
        ));
    }
    // Character-level "subset" rotates per sample; run_cell handles the
    // singleton case by deriving the subset from each prompt.
    cells.push(CellPlan {
        cell: "character-all".into(),
        scope: scope.clone(),
        subset: Vec::new(),
        subset_size: 1,
        ee,
        up,
        up_mode: UpMode::TopN,
    });

    for (level, label) in [(Level::Series, "series"), (Level::Brand, "brand")] {
        let buckets = match tertile_buckets(&tax, level) {
            Ok(b) => b,
            Err(e) => {
                failures.push(CellFailure {
                    cell: format!("{label}-tertiles"),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        for (bucket, names) in
            [("small", &buckets.small), ("medium", &buckets.medium), ("large", &buckets.large)]
        {
            match hierarchy_bucket_plan(&tax, spec, &scope, label, bucket, names) {
                Ok(Some(plan)) => cells.push(plan),
                Ok(None) => failures.push(CellFailure {
                    cell: format!("{label}-{bucket}"),
                    reason: "bucket is empty".into(),
                }),
                Err(e) => failures.push(CellFailure {
                    cell: format!("{label}-{bucket}"),
                    reason: e.to_string(),
                }),
            }
        }
    }
    Ok(Plans { cells, failures })
}

// One pooled cell for a tertile bucket: each node contributes an equal
// share of prompts; the subset is the node's unit-concept set.
fn hierarchy_bucket_plan(
    tax: &Taxonomy,
    spec: &ExperimentSpec,
    scope: &[ConceptId],
    label: &str,
    bucket: &str,
    names: &[String],
) -> Result<Option<CellPlan>> {
    if names.is_empty() {
        return Ok(None);
    }
    let n = scope.len();
    let per_node = (spec.samples_per_cell / names.len()).max(1);
    let mut ee = Vec::new();
    let mut up = Vec::new();
    let mut max_scope = 0usize;
    // The pooled cell's subset is not fixed; prompts carry their units.
    for (node_idx, name) in names.iter().enumerate() {
        let units = tax.characters_under(name)?;
        max_scope = max_scope.max(units.len());
        let complement: Vec<ConceptId> = (0..n).filter(|c| !units.contains(c)).collect();
        if complement.is_empty() {
            return Err(Error::InvalidRequest {
                reason: format!("node {name:?} covers every concept; no non-targets remain"),
            });
        }
        for j in 0..per_node {
            let idx = [level_tag(label), node_idx as u64, j as u64];
            ee.push((
                Condition::Single(units[j % units.len()]),
                units.clone(),
                child_seed(spec.seed, &["hier-ee"], &idx),
            ));
            let mut rng = rng_at(spec.seed, &["hier-up-pick"], &idx);
            let other = complement[rng.random_range(0..complement.len())];
            up.push((
                Condition::Single(other),
                units.clone(),
                child_seed(spec.seed, &["hier-up"], &idx),
            ));
        }
    }
    Ok(Some(CellPlan {
        cell: format!("{label}-{bucket}"),
        scope: scope.to_vec(),
        subset: Vec::new(),
        subset_size: max_scope,
        ee,
        up,
        up_mode: UpMode::ComplementMembership,
    }))
}

fn level_tag(label: &str) -> u64 {
    match label {
        "series" => 0,
        _ => 1,
    }
}

// Serves every planned prompt and scores the cell. EE prompts use their
// annotation as the erasure subset; UP prompts leave it (non-targets stay
// outside, so dynamic methods route them to the base model).
fn run_cell(
    base: &Denoiser,
    sched: &NoiseSchedule,
    adapters: &[LoraAdapter<f64>],
    plan: &CellPlan,
    spec: &ExperimentSpec,
    method: Method,
) -> Result<MetricsReport> {
    let world = base.world();
    let all_refs: Vec<&LoraAdapter<f64>> = adapters.iter().collect();
    let mut method_points = Vec::new();
    let mut ref_points = Vec::new();
    let mut ee_items = Vec::new();
    let mut up_items = Vec::new();

    let mut serve = |cond: &Condition, subset: &[ConceptId], seed: u64| -> Result<[f64; 2]> {
        let point = if method == Method::StaticMerged {
            // Whole-scope deltas applied no matter what is prompted.
            ddim_sample(base, sched, cond, &all_refs, spec.steps, spec.guidance, seed)?
        } else {
            let req = ErasureRequest {
                scope: plan.scope.clone(),
                subset: subset.to_vec(),
                condition: cond.clone(),
                strategy: spec.strategy,
                guidance: spec.guidance,
                seed,
            };
            erase_sample(base, sched, adapters, &req, spec.steps)?
        };
        method_points.push(point);
        ref_points.push(ddim_sample(base, sched, cond, &[], spec.steps, spec.guidance, seed)?);
        Ok(point)
    };

    for (cond, targets, seed) in &plan.ee {
        // EE prompts erase their own annotation (the active subset).
        let subset = if plan.subset.is_empty() { targets.clone() } else { plan.subset.clone() };
        let point = serve(cond, &subset, *seed)?;
        ee_items.push((point, targets.clone()));
    }
    for (cond, annotated, seed) in &plan.up {
        // UP prompts never touch the subset; any subset works for
        // dynamic methods, and the static baseline ignores it anyway.
        let point = serve(cond, &plan.subset, *seed)?;
        up_items.push((point, annotated.clone()));
    }

    let w2 = metrics::distribution_distance(&method_points, &ref_points)?;
    match plan.up_mode {
        UpMode::TopN => MetricsReport::compute(world, &ee_items, &up_items, w2),
        UpMode::ComplementMembership => {
            let acc_ee_v = metrics::acc_ee(world, &ee_items)?;
            // Preserved: top-1 is a concept the prompt's node does not cover.
            let preserved = |w: &crate::world::ConceptWorld,
                             p: [f64; 2],
                             units: &[ConceptId]|
             -> Result<bool> {
                Ok(matches!(metrics::top1(w, p)?, ClassLabel::Concept(c) if !units.contains(&c)))
            };
            let mut hits = 0usize;
            for (point, units) in &up_items {
                if preserved(world, *point, units)? {
                    hits += 1;
                }
            }
            let acc_up_v = hits as f64 / up_items.len().max(1) as f64;
            let per_concept_ee = metrics::per_concept_rate(world, &ee_items, |w, p, ids| {
                Ok(matches!(metrics::top1(w, p)?, ClassLabel::Concept(c) if ids.contains(&c)))
            })?;
            let per_concept_up = metrics::per_concept_rate(world, &up_items, preserved)?;
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
}
