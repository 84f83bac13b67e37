//! On-disk artifact layout: the trained base model and per-concept
//! adapters persist as raw JSON matrices so a rerun reloads bit-exact
//! state, and every load error names the file it came from.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use erasure_core::attention::{AttentionWeights, LoraAdapter, Proj, ProjSet};
use erasure_core::denoiser::Denoiser;
use erasure_core::matrix::Matrix;
use erasure_core::schedule::NoiseSchedule;
use erasure_core::training::LogRecord;
use erasure_core::world::{ConceptWorld, WorldSpec};

type Mat = Matrix<f64>;

pub const BASE_FILE: &str = "base.json";
pub const ADAPTER_DIR: &str = "adapters";
pub const TRAIN_LOG_FILE: &str = "train-log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

/// Raw row-major matrix payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    pub fn from_matrix(m: &Mat) -> Self {
        Self { rows: m.rows(), cols: m.cols(), data: m.as_slice().to_vec() }
    }

    pub fn to_matrix(&self) -> Result<Mat, String> {
        Mat::from_vec(self.rows, self.cols, self.data.clone()).map_err(|e| e.to_string())
    }
}

/// Serialized trained base model: world recipe plus all parameters.
#[derive(Debug, Serialize, Deserialize)]
pub struct BaseArtifact {
    pub world: WorldSpec,
    pub timesteps: usize,
    pub seed: u64,
    pub params: Vec<MatrixData>,
    pub losses: Vec<f64>,
}

/// Serialized adapter: identity plus per-projection factor pairs.
#[derive(Debug, Serialize, Deserialize)]
pub struct AdapterArtifact {
    pub concept: usize,
    pub rank: usize,
    pub scale: f64,
    pub adapted: ProjSet,
    pub factors: Vec<FactorData>,
}

/// One projection's low-rank pair.
#[derive(Debug, Serialize, Deserialize)]
pub struct FactorData {
    pub proj: String,
    pub b: MatrixData,
    pub a: MatrixData,
}

fn proj_name(p: Proj) -> &'static str {
    match p {
        Proj::Q => "q",
        Proj::K => "k",
        Proj::V => "v",
        Proj::O => "o",
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let text = serde_json::to_string(value)
        .map_err(|e| format!("cannot serialize {}: {e}", path.display()))?;
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| {
        format!("cannot read {}: {e}; run `erasure train` into this directory first", path.display())
    })?;
    serde_json::from_str(&text).map_err(|e| format!("malformed artifact {}: {e}", path.display()))
}

/// Persists a frozen base model with its recipe and loss history.
pub fn save_base(
    dir: &Path,
    den: &Denoiser,
    timesteps: usize,
    seed: u64,
    losses: &[f64],
) -> Result<(), String> {
    let artifact = BaseArtifact {
        world: den.world().spec().clone(),
        timesteps,
        seed,
        params: den.params().into_iter().map(MatrixData::from_matrix).collect(),
        losses: losses.to_vec(),
    };
    write_json(&dir.join(BASE_FILE), &artifact)
}

/// Reloads a frozen base model and its schedule from `dir/base.json`.
pub fn load_base(dir: &Path) -> Result<(Denoiser, NoiseSchedule, BaseArtifact), String> {
    let artifact: BaseArtifact = read_json(&dir.join(BASE_FILE))?;
    let world = ConceptWorld::from_spec(artifact.world.clone()).map_err(|e| e.to_string())?;
    let mut den = Denoiser::new(world, artifact.seed).map_err(|e| e.to_string())?;
    let params: Result<Vec<Mat>, String> =
        artifact.params.iter().map(MatrixData::to_matrix).collect();
    den.set_params(params?)
        .map_err(|e| format!("base parameters do not fit the declared world: {e}"))?;
    den.freeze();
    let sched = NoiseSchedule::cosine(artifact.timesteps).map_err(|e| e.to_string())?;
    Ok((den, sched, artifact))
}

fn adapter_path(dir: &Path, concept: usize) -> PathBuf {
    dir.join(ADAPTER_DIR).join(format!("adapter-{concept:02}.json"))
}

/// Persists each adapter under `dir/adapters/adapter-{concept}.json`.
pub fn save_adapters(dir: &Path, adapters: &[LoraAdapter<f64>]) -> Result<(), String> {
    let sub = dir.join(ADAPTER_DIR);
    fs::create_dir_all(&sub).map_err(|e| format!("cannot create {}: {e}", sub.display()))?;
    for ad in adapters {
        let factors = ad
            .adapted()
            .iter()
            .map(|p| {
                let f = ad.factors(p).expect("adapted projection has factors");
                FactorData {
                    proj: proj_name(p).into(),
                    b: MatrixData::from_matrix(&f.b),
                    a: MatrixData::from_matrix(&f.a),
                }
            })
            .collect();
        let artifact = AdapterArtifact {
            concept: ad.concept(),
            rank: ad.rank(),
            scale: ad.scale(),
            adapted: ad.adapted(),
            factors,
        };
        write_json(&adapter_path(dir, ad.concept()), &artifact)?;
    }
    Ok(())
}

/// Reloads every adapter for concepts `0..n` against the given base block.
pub fn load_adapters(
    dir: &Path,
    base: &AttentionWeights<f64>,
    n_concepts: usize,
) -> Result<Vec<LoraAdapter<f64>>, String> {
    let mut out = Vec::with_capacity(n_concepts);
    for c in 0..n_concepts {
        let path = adapter_path(dir, c);
        let artifact: AdapterArtifact = read_json(&path)?;
        if artifact.concept != c {
            return Err(format!(
                "adapter file {} declares concept {}, expected {c}",
                path.display(),
                artifact.concept
            ));
        }
        let mut ad =
            LoraAdapter::zeros(c, artifact.rank, artifact.scale, artifact.adapted, base)
                .map_err(|e| format!("adapter {} does not fit the base block: {e}", path.display()))?;
        for fd in &artifact.factors {
            let proj = Proj::ALL
                .into_iter()
                .find(|p| proj_name(*p) == fd.proj)
                .ok_or_else(|| format!("adapter {}: unknown projection {:?}", path.display(), fd.proj))?;
            let slot = ad
                .factors_mut(proj)
                .map_err(|e| format!("adapter {}: {e}", path.display()))?;
            let (b, a) = (fd.b.to_matrix()?, fd.a.to_matrix()?);
            if b.shape() != slot.b.shape() || a.shape() != slot.a.shape() {
                return Err(format!(
                    "adapter {}: factor shapes for {:?} do not match the base block",
                    path.display(),
                    fd.proj
                ));
            }
            slot.b = b;
            slot.a = a;
        }
        out.push(ad);
    }
    Ok(out)
}

/// Appends training records as one JSON object per line.
pub fn save_train_log(dir: &Path, log: &[LogRecord]) -> Result<(), String> {
    let path = dir.join(TRAIN_LOG_FILE);
    let mut text = String::new();
    for rec in log {
        text.push_str(
            &serde_json::to_string(rec).map_err(|e| format!("cannot serialize log: {e}"))?,
        );
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use erasure_core::training::{train_base, train_scope, BaseTrainConfig, TrainingConfig};
    use erasure_core::world::Condition;

    fn tiny_base(dir: &Path) -> (Denoiser, NoiseSchedule, Vec<f64>) {
        let spec = WorldSpec { n_concepts: 3, n_clusters: 1, seed: 5, ..WorldSpec::default() };
        let world = ConceptWorld::from_spec(spec).unwrap();
        let sched = NoiseSchedule::cosine(30).unwrap();
        let cfg = BaseTrainConfig { steps: 40, batch_size: 2, ..BaseTrainConfig::default() };
        let (den, losses) = train_base(&world, &sched, &cfg, 5).unwrap();
        save_base(dir, &den, 30, 5, &losses).unwrap();
        (den, sched, losses)
    }

    #[test]
    fn base_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (den, sched, losses) = tiny_base(dir.path());
        let (back, sched2, artifact) = load_base(dir.path()).unwrap();
        assert!(back.is_frozen());
        assert_eq!(artifact.losses, losses);
        assert_eq!(sched2.t_max(), sched.t_max());
        for (a, b) in den.params().iter().zip(back.params()) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
        // Identical predictions on a shared probe.
        let x = Mat::from_vec(2, 1, vec![0.3, -0.8]).unwrap();
        let cond = Condition::Single(1);
        let p1 = den.predict(&x, 7, &cond, &sched, &[]).unwrap();
        let p2 = back.predict(&x, 7, &cond, &sched2, &[]).unwrap();
        assert_eq!(p1.as_slice(), p2.as_slice());
    }

    #[test]
    fn adapters_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (den, sched, _) = tiny_base(dir.path());
        let cfg = TrainingConfig {
            rank: 2,
            epochs: 1,
            steps_per_concept_per_epoch: 1,
            batch_size: 1,
            ..TrainingConfig::default()
        };
        let (adapters, log) = train_scope(&den, &sched, &[0, 1, 2], &cfg, 9).unwrap();
        save_adapters(dir.path(), &adapters).unwrap();
        save_train_log(dir.path(), &log).unwrap();
        let back = load_adapters(dir.path(), den.weights(), 3).unwrap();
        assert_eq!(back.len(), 3);
        for (orig, re) in adapters.iter().zip(&back) {
            assert_eq!(orig.concept(), re.concept());
            assert_eq!(orig.rank(), re.rank());
            for p in orig.adapted().iter() {
                let (f1, f2) = (orig.factors(p).unwrap(), re.factors(p).unwrap());
                assert_eq!(f1.b.as_slice(), f2.b.as_slice());
                assert_eq!(f1.a.as_slice(), f2.a.as_slice());
            }
        }
        let lines = fs::read_to_string(dir.path().join(TRAIN_LOG_FILE)).unwrap();
        assert_eq!(lines.lines().count(), log.len());
    }

    #[test]
    fn missing_and_malformed_files_name_themselves() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_base(dir.path()).unwrap_err();
        assert!(err.contains("base.json"), "{err}");
        assert!(err.contains("erasure train"), "{err}");

        let (den, _, _) = tiny_base(dir.path());
        let err = load_adapters(dir.path(), den.weights(), 2).unwrap_err();
        assert!(err.contains("adapter-00.json"), "{err}");

        fs::create_dir_all(dir.path().join(ADAPTER_DIR)).unwrap();
        fs::write(dir.path().join(ADAPTER_DIR).join("adapter-00.json"), "{not json").unwrap();
        let err = load_adapters(dir.path(), den.weights(), 1).unwrap_err();
        assert!(err.contains("malformed artifact"), "{err}");
    }
}
