//! `erasure`: trains the toy diffusion base and its per-concept erasure
//! adapters, evaluates them under the scope/subset protocols, runs the
//! self-check suite, and exports crosstalk heatmaps.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, config, or
//! artifacts), 2 check failure (self-checks or the base quality gate).

mod artifact;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::Rng as _;

use erasure_core::compose::Strategy;
use erasure_core::denoiser::Denoiser;
use erasure_core::matrix::Matrix;
use erasure_core::ortho::crosstalk_heatmap;
use erasure_core::protocol::{run_experiment, ProtocolSpec};
use erasure_core::schedule::NoiseSchedule;
use erasure_core::seeds::{child_seed, rng_at};
use erasure_core::taxonomy::load_taxonomy;
use erasure_core::training::{train_base, train_scope};
use erasure_core::verify::{run_all_checks, CheckStatus};
use erasure_core::world::{ConceptWorld, Condition};
use erasure_core::Error as CoreError;

use config::RunConfig;

type Mat = Matrix<f64>;

#[derive(Parser)]
#[command(
    name = "erasure",
    version,
    about = "Dynamic multi-concept erasure on a toy conditional diffusion model"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the base model (if absent) and the full adapter set.
    Train {
        /// TOML run configuration; library defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Artifact directory to create or reuse.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate trained artifacts under a protocol; writes report CSVs.
    Eval {
        /// TOML run configuration; defaults to the artifact's snapshot.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Artifact directory holding base.json and adapters/.
        #[arg(long)]
        out: PathBuf,
        /// One of: scope-scaling, conjunction, hierarchy.
        #[arg(long)]
        protocol: String,
        /// Taxonomy CSV for the hierarchy protocol.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Composition strategy override: composite, merge, or switch.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Run the self-check suite: shift-orthogonality oracle, gradient
    /// fidelity, published-metric audit, and an optional taxonomy audit.
    Verify {
        /// Taxonomy CSV to audit; the check is skipped when omitted.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export the adapter crosstalk heatmap CSV from trained artifacts.
    Heatmap {
        /// Artifact directory holding base.json and adapters/.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Failures split by exit code: validation (1) vs. check failure (2).
enum CmdError {
    Validation(String),
    Check(String),
}

impl From<String> for CmdError {
    fn from(msg: String) -> Self {
        CmdError::Validation(msg)
    }
}

/// Core errors are validation problems except the quality gate, which is
/// a check verdict about the trained model.
fn core_err(e: CoreError) -> CmdError {
    match e {
        CoreError::QualityGate { .. } => CmdError::Check(e.to_string()),
        other => CmdError::Validation(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.cmd {
        Cmd::Train { config, out, seed } => cmd_train(config.as_deref(), &out, seed),
        Cmd::Eval { config, out, protocol, taxonomy, seed, strategy } => cmd_eval(
            config.as_deref(),
            &out,
            &protocol,
            taxonomy.as_deref(),
            seed,
            strategy.as_deref(),
        ),
        Cmd::Verify { taxonomy, seed } => cmd_verify(taxonomy.as_deref(), seed),
        Cmd::Heatmap { out, seed } => cmd_heatmap(&out, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CmdError::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Loads the run config: explicit path, else the artifact snapshot, else
/// library defaults; then applies flag overrides.
fn load_config(
    path: Option<&Path>,
    snapshot_dir: Option<&Path>,
    seed: Option<u64>,
) -> Result<RunConfig, CmdError> {
    let text = match path {
        Some(p) => Some(
            fs::read_to_string(p)
                .map_err(|e| format!("cannot read config {}: {e}", p.display()))?,
        ),
        None => snapshot_dir
            .map(|d| d.join(artifact::CONFIG_FILE))
            .filter(|p| p.exists())
            .map(|p| {
                fs::read_to_string(&p)
                    .map_err(|e| format!("cannot read config {}: {e}", p.display()))
            })
            .transpose()?,
    };
    let mut cfg = match text {
        Some(t) => RunConfig::parse(&t)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_train(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), CmdError> {
    let cfg = load_config(config, Some(out), seed)?;
    match cfg.sweep_pairs() {
        None => train_single(&cfg, out),
        Some(pairs) => {
            for (aware, agnostic) in pairs {
                let mut sub_cfg = cfg.clone();
                sub_cfg.lambda_aware = aware;
                sub_cfg.lambda_agnostic = agnostic;
                sub_cfg.sweep_lambda_aware.clear();
                sub_cfg.sweep_lambda_agnostic.clear();
                let sub_dir = out.join(format!("lambda-{aware}-{agnostic}"));
                println!("== sweep point lambda_aware={aware} lambda_agnostic={agnostic} ==");
                train_single(&sub_cfg, &sub_dir)?;
            }
            Ok(())
        }
    }
}

/// Trains (or reuses) the base, trains the full adapter scope, and writes
/// the artifacts plus a config snapshot into `dir`.
fn train_single(cfg: &RunConfig, dir: &Path) -> Result<(), CmdError> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;

    let (den, sched) = if dir.join(artifact::BASE_FILE).exists() {
        let (den, sched, base) = artifact::load_base(dir)?;
        if base.world != cfg.world_spec() || base.timesteps != cfg.timesteps {
            return Err(CmdError::Validation(format!(
                "existing {} was trained under a different world or schedule; \
                 use a fresh --out directory",
                dir.join(artifact::BASE_FILE).display()
            )));
        }
        println!("base model: reused from {}", dir.join(artifact::BASE_FILE).display());
        (den, sched)
    } else {
        let world = ConceptWorld::from_spec(cfg.world_spec()).map_err(core_err)?;
        let sched = NoiseSchedule::cosine(cfg.timesteps).map_err(core_err)?;
        let base_seed = child_seed(cfg.seed, &["train-base"], &[]);
        let (den, losses) =
            train_base(&world, &sched, &cfg.base_config(), base_seed).map_err(core_err)?;
        artifact::save_base(dir, &den, cfg.timesteps, base_seed, &losses)?;
        println!(
            "base model: trained {} steps, final loss {:.4}",
            losses.len(),
            losses.last().copied().unwrap_or(f64::NAN)
        );
        (den, sched)
    };

    let scope: Vec<usize> = (0..den.world().n_concepts()).collect();
    let adapter_seed = child_seed(cfg.seed, &["train-adapters"], &[]);
    let (adapters, log) =
        train_scope(&den, &sched, &scope, &cfg.training_config(), adapter_seed).map_err(core_err)?;
    artifact::save_adapters(dir, &adapters)?;
    artifact::save_train_log(dir, &log)?;
    fs::write(dir.join(artifact::CONFIG_FILE), cfg.to_toml())
        .map_err(|e| format!("cannot write config snapshot: {e}"))?;
    println!(
        "adapters: trained {} over {} steps -> {}",
        adapters.len(),
        log.len(),
        dir.join(artifact::ADAPTER_DIR).display()
    );
    Ok(())
}

fn cmd_eval(
    config: Option<&Path>,
    out: &Path,
    protocol: &str,
    taxonomy: Option<&Path>,
    seed: Option<u64>,
    strategy: Option<&str>,
) -> Result<(), CmdError> {
    let mut cfg = load_config(config, Some(out), seed)?;
    if let Some(name) = strategy {
        cfg.strategy = name.parse::<Strategy>().map_err(core_err)?;
    }

    let (den, sched, _) = artifact::load_base(out)?;
    let adapters = artifact::load_adapters(out, den.weights(), den.world().n_concepts())?;

    let proto = match protocol {
        "scope-scaling" => ProtocolSpec::ScopeScaling { scope_sizes: cfg.scope_sizes.clone() },
        "conjunction" => ProtocolSpec::Conjunction { subset_sizes: cfg.subset_sizes.clone() },
        "hierarchy" => {
            let taxonomy = taxonomy
                .map(|p| {
                    let text = fs::read_to_string(p)
                        .map_err(|e| format!("cannot read taxonomy {}: {e}", p.display()))?;
                    load_taxonomy(&text).map_err(|e| e.to_string())
                })
                .transpose()?;
            ProtocolSpec::Hierarchy { taxonomy }
        }
        other => {
            return Err(CmdError::Validation(format!(
                "unknown protocol {other:?}; expected scope-scaling, conjunction, or hierarchy"
            )))
        }
    };
    let name = proto.name();
    let spec = cfg.experiment_spec(proto);

    let report = run_experiment(&den, &sched, &spec, &cfg.methods).map_err(core_err)?;
    let report_path = out.join(format!("report-{name}.csv"));
    fs::write(&report_path, report.to_csv())
        .map_err(|e| format!("cannot write {}: {e}", report_path.display()))?;
    println!("report: {} rows -> {}", report.rows.len(), report_path.display());
    if !report.failures.is_empty() {
        let mut text = String::new();
        for f in &report.failures {
            eprintln!("cell skipped: {}: {}", f.cell, f.reason);
            text.push_str(&format!("{}: {}\n", f.cell, f.reason));
        }
        let fail_path = out.join(format!("failures-{name}.txt"));
        fs::write(&fail_path, text)
            .map_err(|e| format!("cannot write {}: {e}", fail_path.display()))?;
        println!("skipped cells: {} -> {}", report.failures.len(), fail_path.display());
    }

    let heatmap_path = out.join("heatmap.csv");
    write_heatmap(&den, &sched, &adapters, cfg.seed, &heatmap_path)?;
    println!("heatmap: {}", heatmap_path.display());

    let snap_path = out.join(format!("config-eval-{name}.toml"));
    fs::write(&snap_path, cfg.to_toml())
        .map_err(|e| format!("cannot write config snapshot: {e}"))?;
    Ok(())
}

fn cmd_verify(taxonomy: Option<&Path>, seed: u64) -> Result<(), CmdError> {
    let tax_text = taxonomy
        .map(|p| {
            fs::read_to_string(p)
                .map_err(|e| format!("cannot read taxonomy {}: {e}", p.display()))
        })
        .transpose()?;
    let outcomes = run_all_checks(tax_text.as_deref(), seed).map_err(core_err)?;
    let mut failed = 0usize;
    for o in &outcomes {
        let tag = match o.status {
            CheckStatus::Passed => "pass",
            CheckStatus::Failed => "FAIL",
            CheckStatus::Skipped => "skip",
        };
        println!("[{tag}] {} — {}", o.name, o.detail);
        if !o.ok() {
            failed += 1;
        }
    }
    if failed > 0 {
        Err(CmdError::Check(format!("{failed} self-check(s) failed")))
    } else {
        println!("all {} self-checks passed or were skipped", outcomes.len());
        Ok(())
    }
}

fn cmd_heatmap(out: &Path, seed: u64) -> Result<(), CmdError> {
    let (den, sched, _) = artifact::load_base(out)?;
    let adapters = artifact::load_adapters(out, den.weights(), den.world().n_concepts())?;
    let path = out.join("heatmap.csv");
    write_heatmap(&den, &sched, &adapters, seed, &path)?;
    println!("heatmap: {} adapters -> {}", adapters.len(), path.display());
    Ok(())
}

/// Shared probe batch: two seeded noisy states per concept, paired with
/// that concept's condition tokens.
fn write_heatmap(
    den: &Denoiser,
    sched: &NoiseSchedule,
    adapters: &[erasure_core::attention::LoraAdapter<f64>],
    seed: u64,
    path: &Path,
) -> Result<(), CmdError> {
    let world = den.world();
    let mut rng = rng_at(seed, &["heatmap-batch"], &[]);
    let mut batch = Vec::with_capacity(world.n_concepts() * 2);
    for c in 0..world.n_concepts() {
        let x = world.condition_tokens(&Condition::Single(c)).map_err(core_err)?;
        for _ in 0..2 {
            let x_t = Mat::gaussian(2, 1, 1.0, &mut rng);
            let t = rng.random_range(1..=sched.t_max());
            let z = den.query(&x_t, t, sched).map_err(core_err)?;
            batch.push((x.clone(), z));
        }
    }
    let hm = crosstalk_heatmap(den.weights(), adapters, &batch).map_err(core_err)?;
    fs::write(path, hm.to_csv()).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(())
}
