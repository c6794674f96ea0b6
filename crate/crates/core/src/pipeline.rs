//! End-to-end workflows composed from the library: dataset generation, the
//! two training stages, sampling, evaluation and the ablation grid.
//!
//! Every workflow takes a [`RunConfig`] and writes the resolved config with
//! its hash next to its outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::dataio::{read_container, write_container, ConfigError, ContainerError, RunConfig};
use crate::hcaa::FusionMode;
use crate::metrics::{fgd, fid, pd, smoothness_set, wgd, MetricError, MetricReport, MotionEmbedder};
use crate::networks::{
    CheckpointError, Component, DualModel, GestureSequence, Hand, ModelConfig, NetworkError, PositionSequence,
};
use crate::numkit::{RngStream, Tensor};
use crate::sampler::{generate_motion, Generated, SamplerError};
use crate::schedule::{DiffusionSchedule, ScheduleError};
use crate::synthdata::{make_dataset, ClipSample, DataParams, Dataset, DatasetError, Split};
use crate::trainer::{train_motion_stage, train_position_stage, AdamConfig, LossLog, Stage, TrainConfig, TrainError};

pub const RUN_CONFIG_FILE: &str = "run.cfg";
pub const EMBEDDER_FILE: &str = "embedder.s2c";
pub const POSITION_CHECKPOINT: &str = "position.s2c";
pub const MODEL_CHECKPOINT: &str = "model.s2c";
pub const POSITION_LOSS_FILE: &str = "position_loss.csv";
pub const MOTION_LOSS_FILE: &str = "motion_loss.csv";
pub const SAMPLES_FILE: &str = "samples.s2c";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_SUMMARY_FILE: &str = "ablation_summary.csv";

/// Hidden width of the metric embedder's convolutions.
pub const EMBED_HIDDEN: usize = 32;
const EMBED_BATCH: usize = 16;
const EMBED_LEARNING_RATE: f64 = 1e-3;
/// RNG stream deriving per-clip sampling seeds.
const SAMPLE_SEED_STREAM: u64 = 0x5EED;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("missing asset {}", .0.display())]
    Missing(PathBuf),
    #[error("{0}")]
    Invalid(String),
}

impl PipelineError {
    /// Missing or unreadable inputs, as opposed to failures of a run.
    pub fn is_asset_error(&self) -> bool {
        matches!(
            self,
            PipelineError::Missing(_)
                | PipelineError::Container(_)
                | PipelineError::Dataset(_)
                | PipelineError::Checkpoint(_)
                | PipelineError::Config(_)
                | PipelineError::Metric(MetricError::Asset(_))
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn require(path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Missing(path.to_path_buf()))
    }
}

/// Create `dir` and write the resolved config into it.
pub fn write_run_config(cfg: &RunConfig, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(RUN_CONFIG_FILE);
    cfg.write(&path).map_err(io_err(&path))
}

pub fn schedule(cfg: &RunConfig) -> Result<DiffusionSchedule, PipelineError> {
    Ok(DiffusionSchedule::linear(cfg.usize("diffusion-steps"), cfg.f64("beta-start"), cfg.f64("beta-end"))?)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, PipelineError> {
    require(dir)?;
    Ok(Dataset::read(dir)?)
}

/// Check that the model config agrees with the dataset's shapes.
fn check_compatible(cfg: &RunConfig, data: &Dataset) -> Result<(), PipelineError> {
    let p = &data.params;
    for (key, have) in [("frames", p.frames), ("joints", p.joints), ("pitches", p.pitches)] {
        if cfg.usize(key) != have {
            return Err(PipelineError::Invalid(format!("config {key}={} but the dataset has {have}", cfg.usize(key))));
        }
    }
    Ok(())
}

fn gestures_of(clips: &[ClipSample]) -> Vec<[GestureSequence; 2]> {
    clips.iter().map(|c| c.gestures.clone()).collect()
}

/// Train the metric embedder on the training split's ground truth.
pub fn train_embedder(cfg: &RunConfig, data: &Dataset) -> Result<MotionEmbedder, PipelineError> {
    let seed = cfg.u64("metric-seed");
    let mut e = MotionEmbedder::new(data.params.joints, EMBED_HIDDEN, cfg.usize("embed-width"), seed);
    let adam = AdamConfig { learning_rate: EMBED_LEARNING_RATE, beta1: 0.9, beta2: 0.999, eps: 1e-8, grad_clip: 0.0 };
    let losses = e.train(&gestures_of(data.split(Split::Train)), cfg.usize("embedder-steps"), EMBED_BATCH, adam, seed)?;
    if let Some(last) = losses.last() {
        log::info!("embedder trained: final loss {last:.5}");
    }
    Ok(e)
}

/// Generate the synthetic dataset and its metric embedder into `out`.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Dataset, PipelineError> {
    let data = make_dataset(&DataParams::from_run(cfg));
    data.write(out)?;
    train_embedder(cfg, &data)?.save(&out.join(EMBEDDER_FILE))?;
    write_run_config(cfg, out)?;
    Ok(data)
}

pub fn load_embedder(data_dir: &Path) -> Result<MotionEmbedder, PipelineError> {
    let path = data_dir.join(EMBEDDER_FILE);
    require(&path)?;
    Ok(MotionEmbedder::load(&path)?)
}

/// Fresh model and stage-one training on the training split.
pub fn train_position(cfg: &RunConfig, data: &Dataset) -> Result<(DualModel, LossLog), PipelineError> {
    check_compatible(cfg, data)?;
    let mut model = DualModel::new(&ModelConfig::from_run(cfg)?, cfg.u64("seed"));
    let log = train_position_stage(&mut model, data.split(Split::Train), &TrainConfig::from_run(cfg, Stage::Position))?;
    Ok((model, log))
}

/// Stage-two training of a model whose predictors are already trained.
pub fn train_motion(cfg: &RunConfig, model: &mut DualModel, data: &Dataset) -> Result<LossLog, PipelineError> {
    check_compatible(cfg, data)?;
    let sched = schedule(cfg)?;
    Ok(train_motion_stage(model, data.split(Split::Train), &TrainConfig::from_run(cfg, Stage::Motion), &sched)?)
}

/// Model built from `cfg` with weights from a checkpoint.
pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<DualModel, PipelineError> {
    require(path)?;
    let mut model = DualModel::new(&ModelConfig::from_run(cfg)?, cfg.u64("seed"));
    model.load_weights(path)?;
    Ok(model)
}

/// Copy the trained predictors of `from` into `into`.
pub fn copy_predictors(from: &DualModel, into: &mut DualModel) -> Result<(), PipelineError> {
    for hand in Hand::BOTH {
        for id in from.ids(Component::Predictor, hand) {
            let name = from.ps.name(id);
            let target = into
                .ps
                .id(name)
                .ok_or_else(|| PipelineError::Invalid(format!("model lacks predictor tensor {name}")))?;
            *into.ps.value_mut(target) = from.ps.value(id).clone();
        }
    }
    Ok(())
}

/// Sampled motion for a list of dataset clips.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub clip_index: Vec<usize>,
    pub generated: Vec<Generated>,
}

impl SampleSet {
    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let c = self.generated.len();
        if c == 0 {
            return Err(PipelineError::Invalid("no samples to write".into()));
        }
        let g0 = &self.generated[0].gestures[0];
        let (n, j) = (g0.frames(), g0.joints());
        let stack = |shape: Vec<usize>, part: &dyn Fn(&Generated) -> &Tensor| {
            let mut data = Vec::with_capacity(shape.iter().product());
            for g in &self.generated {
                data.extend_from_slice(part(g).data());
            }
            Tensor::new(shape, data)
        };
        let ges = [0, 1].map(|h| stack(vec![c, n, j, 3], &move |g| g.gestures[h].values()));
        let pos = [0, 1].map(|h| stack(vec![c, n, 3], &move |g| g.positions[h].values()));
        let index = Tensor::new(vec![c], self.clip_index.iter().map(|&i| i as f64).collect());
        let entries = [
            ("clip_index", &index),
            ("gestures.L", &ges[0]),
            ("gestures.R", &ges[1]),
            ("positions.L", &pos[0]),
            ("positions.R", &pos[1]),
        ];
        Ok(write_container(path, entries)?)
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        require(path)?;
        let entries = read_container(path)?;
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| PipelineError::Invalid(format!("samples lack {name}")))
        };
        let index = find("clip_index")?;
        let c = index.numel();
        let slab = |t: &Tensor, i: usize| {
            let per = t.numel() / c;
            Tensor::new(t.shape()[1..].to_vec(), t.data()[i * per..(i + 1) * per].to_vec())
        };
        let (gl, gr, pl, pr) = (find("gestures.L")?, find("gestures.R")?, find("positions.L")?, find("positions.R")?);
        let mut generated = Vec::with_capacity(c);
        for i in 0..c {
            generated.push(Generated {
                gestures: [GestureSequence::new(slab(gl, i))?, GestureSequence::new(slab(gr, i))?],
                positions: [PositionSequence::new(slab(pl, i))?, PositionSequence::new(slab(pr, i))?],
                exchanges: 0,
            });
        }
        Ok(Self { clip_index: index.data().iter().map(|&x| x as usize).collect(), generated })
    }
}

/// Dataset indices of the clips a run evaluates: the split, truncated to
/// `eval-clips` when that is nonzero.
pub fn eval_indices(cfg: &RunConfig, data: &Dataset, split: Split) -> Vec<usize> {
    let start = match split {
        Split::Train => 0,
        Split::Val => data.splits.train,
        Split::Test => data.splits.train + data.splits.val,
    };
    let len = data.split(split).len();
    let limit = cfg.usize("eval-clips");
    let take = if limit == 0 { len } else { limit.min(len) };
    (start..start + take).collect()
}

/// Per-clip sampling seeds for both streams.
pub fn clip_seeds(seed: u64, clip: usize) -> (u64, u64) {
    let r = RngStream::new(seed, SAMPLE_SEED_STREAM);
    (r.u64_at(2 * clip as u64), r.u64_at(2 * clip as u64 + 1))
}

/// Sample every listed clip. `on_clip` receives the clip index and its
/// wall-clock seconds.
pub fn sample_clips(
    cfg: &RunConfig,
    model: &DualModel,
    data: &Dataset,
    indices: &[usize],
    mut on_clip: impl FnMut(usize, f64),
) -> Result<SampleSet, PipelineError> {
    let sched = schedule(cfg)?;
    let seed = cfg.u64("seed");
    let mut generated = Vec::with_capacity(indices.len());
    for &i in indices {
        let start = Instant::now();
        generated.push(generate_motion(model, &sched, &data.clips[i].features, clip_seeds(seed, i))?);
        on_clip(i, start.elapsed().as_secs_f64());
    }
    Ok(SampleSet { clip_index: indices.to_vec(), generated })
}

/// FGD, WGD and smoothness per hand, PD and FID over both hands.
pub fn evaluate(
    cfg: &RunConfig,
    samples: &SampleSet,
    data: &Dataset,
    embedder: &MotionEmbedder,
) -> Result<MetricReport, PipelineError> {
    if samples.generated.is_empty() {
        return Err(PipelineError::Invalid("no samples to evaluate".into()));
    }
    let gt: Vec<&ClipSample> = samples
        .clip_index
        .iter()
        .map(|&i| data.clips.get(i).ok_or_else(|| PipelineError::Invalid(format!("clip {i} not in dataset"))))
        .collect::<Result<_, _>>()?;
    let k = cfg.usize("wgd-components");
    let seed = cfg.u64("metric-seed");
    let mut report = MetricReport::default();
    for hand in Hand::BOTH {
        let h = hand.index();
        let pred: Vec<GestureSequence> = samples.generated.iter().map(|g| g.gestures[h].clone()).collect();
        let truth: Vec<GestureSequence> = gt.iter().map(|c| c.gestures[h].clone()).collect();
        report.push("fgd", hand.tag(), fgd(&pred, &truth)?);
        report.push("wgd", hand.tag(), wgd(&pred, &truth, k, seed)?);
        report.push("smoothness", hand.tag(), smoothness_set(&pred, &truth)?);
    }
    let pred_pos: Vec<[PositionSequence; 2]> = samples.generated.iter().map(|g| g.positions.clone()).collect();
    let gt_pos: Vec<[PositionSequence; 2]> = gt.iter().map(|c| c.positions.clone()).collect();
    report.push("pd", "both", pd(&pred_pos, &gt_pos)?);
    let pred_pairs: Vec<[GestureSequence; 2]> = samples.generated.iter().map(|g| g.gestures.clone()).collect();
    let gt_pairs: Vec<[GestureSequence; 2]> = gt.iter().map(|c| c.gestures.clone()).collect();
    report.push("fid", "both", fid(&pred_pairs, &gt_pairs, embedder)?);
    Ok(report)
}

/// One ablation setting: noise decoupling, position sharing, fusion mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationCell {
    pub decoupled_noise: bool,
    pub position_sharing: bool,
    pub fusion_mode: FusionMode,
}

impl AblationCell {
    pub const fn new(decoupled_noise: bool, position_sharing: bool, fusion_mode: FusionMode) -> Self {
        Self { decoupled_noise, position_sharing, fusion_mode }
    }

    pub fn label(&self) -> String {
        format!(
            "dn={} ps={} fi={}",
            if self.decoupled_noise { "on" } else { "off" },
            if self.position_sharing { "on" } else { "off" },
            self.fusion_mode.as_str()
        )
    }

    pub fn apply(&self, cfg: &RunConfig) -> Result<RunConfig, PipelineError> {
        Ok(cfg
            .clone()
            .with("decoupled-noise", &self.decoupled_noise.to_string())?
            .with("position-sharing", &self.position_sharing.to_string())?
            .with("fusion-mode", self.fusion_mode.as_str())?)
    }
}

/// The six rows of the module ablation: the full model with one component
/// removed at a time, and each fusion mode with both other components on.
pub const ABLATION_CELLS: [AblationCell; 6] = [
    AblationCell::new(false, true, FusionMode::Hcaa),
    AblationCell::new(true, false, FusionMode::None),
    AblationCell::new(true, true, FusionMode::None),
    AblationCell::new(true, true, FusionMode::Concat),
    AblationCell::new(true, true, FusionMode::CrossAttention),
    AblationCell::new(true, true, FusionMode::Hcaa),
];

/// Parse `dn,ps,mode` triples separated by `;`, e.g. `on,on,hcaa;off,on,none`.
pub fn parse_cells(text: &str) -> Result<Vec<AblationCell>, PipelineError> {
    let flag = |s: &str| match s.trim() {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(PipelineError::Invalid(format!("expected on/off, got {other:?}"))),
    };
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|cell| {
            let parts: Vec<&str> = cell.split(',').collect();
            if parts.len() != 3 {
                return Err(PipelineError::Invalid(format!("cell {cell:?} is not dn,ps,mode")));
            }
            let mode = parts[2].trim().parse::<FusionMode>().map_err(PipelineError::Invalid)?;
            Ok(AblationCell::new(flag(parts[0])?, flag(parts[1])?, mode))
        })
        .collect()
}

/// Train, sample and evaluate one configuration. When `stage_one` is given
/// its trained predictors are reused instead of retraining stage one; stage
/// one does not depend on any ablation switch, so the result is identical.
pub fn run_cell(
    cfg: &RunConfig,
    data: &Dataset,
    embedder: &MotionEmbedder,
    stage_one: Option<&DualModel>,
) -> Result<MetricReport, PipelineError> {
    let mut model = match stage_one {
        Some(trained) => {
            check_compatible(cfg, data)?;
            let mut m = DualModel::new(&ModelConfig::from_run(cfg)?, cfg.u64("seed"));
            copy_predictors(trained, &mut m)?;
            m
        }
        None => train_position(cfg, data)?.0,
    };
    train_motion(cfg, &mut model, data)?;
    let indices = eval_indices(cfg, data, Split::Test);
    let samples = sample_clips(cfg, &model, data, &indices, |_, _| {})?;
    evaluate(cfg, &samples, data, embedder)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub seed: u64,
    pub config_hash: String,
    pub outcome: Result<MetricReport, String>,
}

/// Columns of the ablation table as `(metric, hand)`.
pub const ABLATION_COLUMNS: [(&str, &str); 8] = [
    ("fgd", "L"),
    ("fgd", "R"),
    ("wgd", "L"),
    ("wgd", "R"),
    ("pd", "both"),
    ("smoothness", "L"),
    ("smoothness", "R"),
    ("fid", "both"),
];

fn column_header() -> String {
    ABLATION_COLUMNS.iter().map(|(m, h)| format!("{m}_{h}")).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Debug, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// One line per cell and seed; failed cells carry their error.
    pub fn to_csv(&self) -> String {
        let mut out = format!("decoupled_noise,position_sharing,fusion_mode,seed,config_hash,status,{}\n", column_header());
        for r in &self.rows {
            let values = match &r.outcome {
                Ok(rep) => ABLATION_COLUMNS
                    .iter()
                    .map(|(m, h)| rep.get(m, h).map_or("nan".into(), |v| format!("{v:.9e}")))
                    .collect::<Vec<_>>()
                    .join(","),
                Err(_) => vec!["nan"; ABLATION_COLUMNS.len()].join(","),
            };
            let status = match &r.outcome {
                Ok(_) => "ok".to_string(),
                Err(e) => format!("\"failed: {}\"", e.replace('"', "'")),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{status},{values}\n",
                r.cell.decoupled_noise,
                r.cell.position_sharing,
                r.cell.fusion_mode.as_str(),
                r.seed,
                r.config_hash
            ));
        }
        out
    }

    /// Cells in first-seen order with mean and sample standard deviation
    /// of each column over successful seeds.
    pub fn summary(&self) -> Vec<(AblationCell, usize, Vec<(f64, f64)>)> {
        let mut cells: Vec<AblationCell> = Vec::new();
        for r in &self.rows {
            if !cells.contains(&r.cell) {
                cells.push(r.cell);
            }
        }
        cells
            .into_iter()
            .map(|cell| {
                let reports: Vec<&MetricReport> =
                    self.rows.iter().filter(|r| r.cell == cell).filter_map(|r| r.outcome.as_ref().ok()).collect();
                let stats = ABLATION_COLUMNS
                    .iter()
                    .map(|(m, h)| {
                        let xs: Vec<f64> = reports.iter().filter_map(|r| r.get(m, h)).collect();
                        mean_and_spread(&xs)
                    })
                    .collect();
                (cell, reports.len(), stats)
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("decoupled_noise,position_sharing,fusion_mode,seeds");
        for (m, h) in ABLATION_COLUMNS {
            out.push_str(&format!(",{m}_{h}_mean,{m}_{h}_std"));
        }
        out.push('\n');
        for (cell, n, stats) in self.summary() {
            out.push_str(&format!("{},{},{},{n}", cell.decoupled_noise, cell.position_sharing, cell.fusion_mode.as_str()));
            for (mean, std) in stats {
                out.push_str(&format!(",{mean:.9e},{std:.9e}"));
            }
            out.push('\n');
        }
        out
    }

    /// Mean FID per fusion mode among cells with both other switches on,
    /// sorted best first.
    pub fn fusion_ordering(&self) -> Vec<(FusionMode, f64)> {
        let fid_col = ABLATION_COLUMNS.iter().position(|c| *c == ("fid", "both")).expect("fid column");
        let mut out: Vec<(FusionMode, f64)> = self
            .summary()
            .into_iter()
            .filter(|(c, n, _)| c.decoupled_noise && c.position_sharing && *n > 0)
            .map(|(c, _, stats)| (c.fusion_mode, stats[fid_col].0))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| matches!(&r.outcome, Ok(rep) if rep.all_finite()))
    }
}

/// Mean and sample standard deviation; the spread of a single value is 0.
pub fn mean_and_spread(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run every cell under every seed. Stage one is trained once per seed and
/// shared across that seed's cells. A failing cell is recorded and the grid
/// continues.
pub fn ablate(
    base: &RunConfig,
    data: &Dataset,
    embedder: &MotionEmbedder,
    cells: &[AblationCell],
    seeds: &[u64],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable, PipelineError> {
    let mut table = AblationTable::default();
    for &seed in seeds {
        let seeded = base.clone().with("seed", &seed.to_string())?;
        let stage_one = train_position(&seeded, data).map(|(m, _)| m);
        for cell in cells {
            let cfg = cell.apply(&seeded)?;
            let outcome = match &stage_one {
                Ok(m) => run_cell(&cfg, data, embedder, Some(m)).map_err(|e| e.to_string()),
                Err(e) => Err(format!("position stage: {e}")),
            };
            let row = AblationRow { cell: *cell, seed, config_hash: cfg.hash_hex(), outcome };
            on_row(&row);
            table.rows.push(row);
        }
    }
    Ok(table)
}
