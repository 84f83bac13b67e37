//! End-to-end tests of the `erasure` binary: artifact layout, exit
//! codes, reproducibility, and report formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_erasure");

const REPORT_HEADER: &str =
    "method,protocol,scope_size,subset_size,acc_ee,acc_up,acc_harmonic,w2,seed";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Small-but-real run config: three concepts, short trainings.
fn write_cfg(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let base = "n_concepts = 3\n\
                n_clusters = 1\n\
                timesteps = 30\n\
                base_steps = 60\n\
                base_batch = 2\n\
                rank = 2\n\
                epochs = 1\n\
                steps_per_concept_per_epoch = 2\n\
                batch_size = 1\n\
                samples_per_cell = 3\n\
                ddim_steps = 5\n\
                gate_seeds = 0\n\
                scope_sizes = [2, 3]\n\
                methods = [\"dynamic-ortho\"]\n\
                seed = 11\n";
    fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

fn train_into(cfg: &Path, out: &Path) -> Output {
    run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn train_writes_reproducible_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "");
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");

    let first = train_into(&cfg, &out_a);
    assert!(first.status.success(), "{}", stderr_of(&first));
    for name in ["base.json", "config.toml", "train-log.jsonl"] {
        assert!(out_a.join(name).exists(), "missing {name}");
    }
    for c in 0..3 {
        assert!(out_a.join("adapters").join(format!("adapter-0{c}.json")).exists());
    }

    // Same config and seed into a fresh directory: byte-identical files.
    let second = train_into(&cfg, &out_b);
    assert!(second.status.success(), "{}", stderr_of(&second));
    for rel in [
        "base.json",
        "config.toml",
        "train-log.jsonl",
        "adapters/adapter-00.json",
        "adapters/adapter-01.json",
        "adapters/adapter-02.json",
    ] {
        let a = fs::read(out_a.join(rel)).unwrap();
        let b = fs::read(out_b.join(rel)).unwrap();
        assert_eq!(a, b, "{rel} differs between identical runs");
    }

    // Rerun into the same directory: base is reused, artifacts unchanged.
    let before = fs::read(out_a.join("adapters/adapter-02.json")).unwrap();
    let rerun = train_into(&cfg, &out_a);
    assert!(rerun.status.success(), "{}", stderr_of(&rerun));
    assert!(stdout_of(&rerun).contains("reused"), "{}", stdout_of(&rerun));
    assert_eq!(fs::read(out_a.join("adapters/adapter-02.json")).unwrap(), before);
}

#[test]
fn eval_writes_reports_heatmap_and_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "");
    let out = tmp.path().join("run");
    assert!(train_into(&cfg, &out).status.success());

    let eval = run(&[
        "eval",
        "--out",
        out.to_str().unwrap(),
        "--protocol",
        "scope-scaling",
    ]);
    assert!(eval.status.success(), "{}", stderr_of(&eval));
    let report = fs::read_to_string(out.join("report-scope-scaling.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some(REPORT_HEADER));
    // One row per erased concept per scope size (2 + 3), same seed column.
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5, "{report}");
    for row in &rows {
        assert!(row.starts_with("dynamic-ortho,scope-scaling,"), "{row}");
        assert!(row.ends_with(",11"), "{row}");
    }

    let heatmap = fs::read_to_string(out.join("heatmap.csv")).unwrap();
    assert!(heatmap.starts_with("concept,"), "{heatmap}");
    assert_eq!(heatmap.lines().count(), 4, "{heatmap}");
    assert!(out.join("config-eval-scope-scaling.toml").exists());

    // Hierarchy protocol against a taxonomy matching the three concepts.
    let tax = tmp.path().join("tax.csv");
    fs::write(
        &tax,
        "brand,series,character\n\
         north,frost,yuki\n\
         north,gale,kaze\n\
         south,ember,homura\n",
    )
    .unwrap();
    let hier = run(&[
        "eval",
        "--out",
        out.to_str().unwrap(),
        "--protocol",
        "hierarchy",
        "--taxonomy",
        tax.to_str().unwrap(),
    ]);
    assert!(hier.status.success(), "{}", stderr_of(&hier));
    let report = fs::read_to_string(out.join("report-hierarchy.csv")).unwrap();
    assert!(report.starts_with(REPORT_HEADER), "{report}");
    // Pooled character cell plus one cell per series tertile.
    assert_eq!(report.lines().count(), 5, "{report}");
    assert!(report.contains("dynamic-ortho,hierarchy,"), "{report}");
    // Two brands cannot fill three tertiles on this world; the cell is
    // recorded as skipped rather than failing the run.
    let failures = fs::read_to_string(out.join("failures-hierarchy.txt")).unwrap();
    assert!(failures.contains("brand"), "{failures}");
}

#[test]
fn heatmap_subcommand_exports_from_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "");
    let out = tmp.path().join("run");
    assert!(train_into(&cfg, &out).status.success());

    let hm = run(&["heatmap", "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(hm.status.success(), "{}", stderr_of(&hm));
    let text = fs::read_to_string(out.join("heatmap.csv")).unwrap();
    assert!(text.starts_with("concept,"), "{text}");
}

#[test]
fn eval_requires_trained_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "eval",
        "--out",
        tmp.path().to_str().unwrap(),
        "--protocol",
        "scope-scaling",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("base.json"), "{err}");
    assert!(err.contains("erasure train"), "{err}");
}

#[test]
fn invalid_config_lists_every_offending_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "n_concepts = \"three\"\nbogus_key = 1\nguidance = \"high\"\n").unwrap();
    let out = train_into(&cfg, &tmp.path().join("run"));
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("`n_concepts`"), "{err}");
    assert!(err.contains("bogus_key"), "{err}");
    assert!(err.contains("`guidance`"), "{err}");
}

#[test]
fn unknown_protocol_and_strategy_are_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "");
    let out = tmp.path().join("run");
    assert!(train_into(&cfg, &out).status.success());

    let bad_proto = run(&["eval", "--out", out.to_str().unwrap(), "--protocol", "scopes"]);
    assert_eq!(bad_proto.status.code(), Some(1));
    assert!(stderr_of(&bad_proto).contains("unknown protocol"), "{}", stderr_of(&bad_proto));

    let bad_strat = run(&[
        "eval",
        "--out",
        out.to_str().unwrap(),
        "--protocol",
        "scope-scaling",
        "--strategy",
        "blend",
    ]);
    assert_eq!(bad_strat.status.code(), Some(1));
    assert!(stderr_of(&bad_strat).contains("unknown strategy"), "{}", stderr_of(&bad_strat));
}

#[test]
fn lambda_sweep_writes_one_directory_per_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "sweep_lambda_aware = [0.0, 0.1]\nsweep_lambda_agnostic = [0.0, 0.2]\n",
    );
    let out = tmp.path().join("sweep");
    let res = train_into(&cfg, &out);
    assert!(res.status.success(), "{}", stderr_of(&res));

    for (dir, aware, agnostic) in
        [("lambda-0-0", "0.0", "0.0"), ("lambda-0.1-0.2", "0.1", "0.2")]
    {
        let sub = out.join(dir);
        assert!(sub.join("base.json").exists(), "missing {dir}/base.json");
        assert!(sub.join("adapters/adapter-00.json").exists());
        let snap = fs::read_to_string(sub.join("config.toml")).unwrap();
        assert!(snap.contains(&format!("lambda_aware = {aware}")), "{snap}");
        assert!(snap.contains(&format!("lambda_agnostic = {agnostic}")), "{snap}");
        assert!(snap.contains("sweep_lambda_aware = []"), "{snap}");
    }
}

#[test]
fn verify_prints_one_line_per_check_and_flags_bad_taxonomy() {
    let plain = run(&["verify"]);
    assert!(plain.status.success(), "{}", stderr_of(&plain));
    let text = stdout_of(&plain);
    for name in [
        "theorem-constructed",
        "theorem-random",
        "gradient-reconstruction",
        "gradient-input-aware",
        "gradient-input-agnostic",
        "gradient-factor-orthogonality",
        "reference-triples",
        "taxonomy",
    ] {
        assert!(text.contains(name), "missing {name} in:\n{text}");
    }
    assert!(text.contains("[skip] taxonomy"), "{text}");
    assert!(!text.contains("[FAIL]"), "{text}");

    // A malformed taxonomy is a check failure: exit code 2.
    let tmp = tempfile::tempdir().unwrap();
    let tax = tmp.path().join("bad.csv");
    fs::write(&tax, "brand,show,character\nx,y,z\n").unwrap();
    let bad = run(&["verify", "--taxonomy", tax.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2), "{}", stdout_of(&bad));
    assert!(stdout_of(&bad).contains("[FAIL] taxonomy"), "{}", stdout_of(&bad));
}
