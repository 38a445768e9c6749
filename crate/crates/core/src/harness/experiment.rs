//! The pipeline behind every subcommand: ingest, label, bootstrap, refine,
//! evaluate, write results. Each failure names the stage it came from.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bootstrap::{augment_labels, pretrain, BootstrapError, LabeledImage, Pretrained};
use crate::epipolar_transfer::{backproject, distributions_to_grid, transfer_heatmap, BinnedPencil, TransferError};
use crate::geometry::{GeometryError, View};
use crate::grid::{Grid, GridError};
use crate::harness::config::{ExperimentConfig, Row};
use crate::harness::io::{format_annotations, Dataset, IoError};
use crate::harness::train::{checkpoint_paths, evaluate, refine, EvalReport, PencilTable, RefineOptions, TrainError, TrainingSet};
use crate::heatmap::{Annotation, Heatmap};
use crate::model::{forward, ModelError, OptimizerState, PredictorConfig, PredictorWeights};
use crate::supervise::LossBreakdown;
use crate::synth::{generate, SynthError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Labels,
    Bootstrap,
    Refine,
    Eval,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Labels => "labels",
            Stage::Bootstrap => "bootstrap",
            Stage::Refine => "refine",
            Stage::Eval => "eval",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
#[error("stage {stage}: {source}")]
pub struct ExperimentError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, ExperimentError>;
}

impl<T, E: Into<StageError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, ExperimentError> {
        self.map_err(|e| ExperimentError { stage, source: e.into() })
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| StageError::File { path: parent.to_path_buf(), source }).at(Stage::Output)?;
    }
    fs::write(path, text).map_err(|source| StageError::File { path: path.to_path_buf(), source }).at(Stage::Output)
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(|source| StageError::File { path: path.to_path_buf(), source }).at(Stage::Output)
}

/// Loads `config.scene_dir` when set, otherwise generates the scene for `seed`.
pub fn ingest(config: &ExperimentConfig, seed: u64) -> Result<Dataset, ExperimentError> {
    match &config.scene_dir {
        Some(dir) => {
            let data = Dataset::load(dir).at(Stage::Ingest)?;
            if data.channels() != config.scene.channels {
                return Err(StageError::Invalid(format!(
                    "scene has {} channels, config expects {}",
                    data.channels(),
                    config.scene.channels
                )))
                .at(Stage::Ingest);
            }
            Ok(data)
        }
        None => {
            let scene = generate(&config.scene, seed).at(Stage::Ingest)?;
            Ok(Dataset::from_scene(&scene, &config.flow.strides, config.flow.noise))
        }
    }
}

/// Renders an independent scene for the unseen-data evaluation.
pub fn unseen_scene(config: &ExperimentConfig, seed: u64) -> Result<Dataset, ExperimentError> {
    let scene = generate(&config.scene, seed.wrapping_add(config.experiment.unseen_seed_offset)).at(Stage::Eval)?;
    Ok(Dataset::from_scene(&scene, &[], 0.0))
}

/// Labels spread by reprojection plus the pretrained predictor.
#[derive(Debug, Clone)]
pub struct Bootstrapped {
    /// `(frame, view, annotation)` after augmentation.
    pub labeled: Vec<(usize, usize, Annotation)>,
    /// Channels that failed to triangulate, per labeled frame.
    pub failures: Vec<(usize, usize)>,
    pub pretrained: Pretrained,
}

pub fn bootstrap(config: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<Bootstrapped, ExperimentError> {
    let frames = config.labeled_frames();
    let views = config.labeled_views();
    if frames.iter().any(|&t| t >= data.frames()) || views.iter().any(|&v| v >= data.views()) {
        return Err(StageError::Invalid("label subset lies outside the scene".into())).at(Stage::Labels);
    }
    let mut labeled = Vec::new();
    let mut failures = Vec::new();
    for &t in &frames {
        let human: Vec<(usize, &Annotation)> = views.iter().map(|&v| (v, &data.annotations[t][v])).collect();
        let aug = augment_labels(&human, &data.cameras, &data.occluders[t], &config.augment_options(seed ^ t as u64)).at(Stage::Bootstrap)?;
        failures.extend(aug.failures.iter().map(|(c, _)| (t, *c)));
        for (v, ann) in aug.annotations.into_iter().enumerate() {
            if ann.labeled_count() > 0 {
                labeled.push((t, v, ann));
            }
        }
    }
    if labeled.is_empty() {
        return Err(StageError::Invalid("no labels survived augmentation".into())).at(Stage::Labels);
    }
    let set: Vec<LabeledImage> =
        labeled.iter().map(|(t, v, a)| LabeledImage { image: data.images[*t][*v].clone(), annotation: a.clone() }).collect();
    let init = PredictorWeights::init(PredictorConfig::new(data.channels()), seed);
    let pretrained = pretrain(init, &set, &config.pretrain_options(seed)).at(Stage::Bootstrap)?;
    Ok(Bootstrapped { labeled, failures, pretrained })
}

fn unlabeled_frames(config: &ExperimentConfig, data: &Dataset) -> Vec<usize> {
    let labeled = config.labeled_frames();
    (0..data.frames()).filter(|t| !labeled.contains(t)).collect()
}

/// Highest-step refinement checkpoint in `dir`, if any.
fn latest_checkpoint(dir: &Path, steps: usize) -> Option<(PathBuf, PathBuf)> {
    (1..=steps).rev().map(|s| checkpoint_paths(dir, s)).find(|(w, o)| w.exists() && o.exists())
}

/// Semi-supervised refinement of the bootstrapped weights under a row mask.
/// With `checkpoint_dir` set, an existing checkpoint there is resumed from.
pub fn refine_row(
    config: &ExperimentConfig,
    data: &Dataset,
    pencils: &PencilTable,
    boot: &Bootstrapped,
    row: Row,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<(PredictorWeights, Vec<(usize, LossBreakdown)>), ExperimentError> {
    let set = TrainingSet { dataset: data, labeled: boot.labeled.clone(), unlabeled_frames: unlabeled_frames(config, data), pencils };
    let options = RefineOptions {
        steps: config.train.steps,
        unlabeled_per_step: config.train.unlabeled_per_step,
        strides: config.flow.strides.clone(),
        weights: row.apply(&config.losses),
        temporal: config.temporal,
        seed,
        checkpoint_every: config.train.checkpoint_every,
        checkpoint_dir: checkpoint_dir.map(Path::to_path_buf),
    };
    let start = checkpoint_dir.and_then(|d| latest_checkpoint(d, config.train.steps));
    let (weights, optimizer) = match start {
        Some((wp, op)) => {
            let w = PredictorWeights::load(&wp, boot.pretrained.weights.config).at(Stage::Refine)?;
            (w, OptimizerState::load(&op).at(Stage::Refine)?)
        }
        None => {
            let w = boot.pretrained.weights.clone();
            let o = OptimizerState::new(&w, config.train.learning_rate);
            (w, o)
        }
    };
    let out = refine(weights, optimizer, &set, &options).at(Stage::Refine)?;
    Ok((out.weights, out.losses))
}

/// Held-out unlabeled frames of the training scene plus all of an unseen scene.
#[derive(Debug, Clone)]
pub struct EvalSets {
    pub held_out: Dataset,
    pub held_out_frames: Vec<usize>,
    pub unseen: Dataset,
}

impl EvalSets {
    pub fn new(config: &ExperimentConfig, data: Dataset, seed: u64) -> Result<Self, ExperimentError> {
        let held_out_frames = unlabeled_frames(config, &data);
        Ok(Self { held_out: data, held_out_frames, unseen: unseen_scene(config, seed)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub held_out: EvalReport,
    pub unseen: EvalReport,
}

pub fn evaluate_weights(config: &ExperimentConfig, weights: &PredictorWeights, sets: &EvalSets) -> Result<Evaluation, ExperimentError> {
    fn items<'a>(data: &'a Dataset, frames: &[usize]) -> Vec<(&'a Grid, &'a Annotation)> {
        frames.iter().flat_map(|&t| (0..data.views()).map(move |v| (&data.images[t][v], &data.annotations[t][v]))).collect()
    }
    let all: Vec<usize> = (0..sets.unseen.frames()).collect();
    Ok(Evaluation {
        held_out: evaluate(weights, &items(&sets.held_out, &sets.held_out_frames), &config.eval).at(Stage::Eval)?,
        unseen: evaluate(weights, &items(&sets.unseen, &all), &config.eval).at(Stage::Eval)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowResult {
    pub seed: u64,
    pub row: Row,
    pub eval: Evaluation,
    pub losses: Vec<(usize, LossBreakdown)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub results: Vec<RowResult>,
}

pub const METRICS_HEADER: &str = "seed,row,split,images,pck,pckh,auc";

impl ExperimentReport {
    pub fn metrics_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for r in &self.results {
            for (split, e) in [("held-out", r.eval.held_out), ("unseen", r.eval.unseen)] {
                writeln!(s, "{},{},{split},{},{:.6},{:.6},{:.6}", r.seed, r.row.name(), e.images, e.pck, e.pckh, e.auc).unwrap();
            }
        }
        s
    }

    pub fn losses_csv(&self) -> String {
        let mut s = format!("seed,row,{}\n", LossBreakdown::CSV_HEADER);
        for r in &self.results {
            for (step, l) in &r.losses {
                writeln!(s, "{},{},{}", r.seed, r.row.name(), l.csv_row(*step)).unwrap();
            }
        }
        s
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.results.iter().map(|r| r.seed).collect();
        v.dedup();
        v
    }

    pub fn get(&self, seed: u64, row: Row) -> Option<&RowResult> {
        self.results.iter().find(|r| r.seed == seed && r.row == row)
    }

    /// Seeds where `a` beats `b` by at least `margin` in PCK on a split.
    pub fn wins(&self, a: Row, b: Row, margin: f64, unseen: bool) -> (usize, usize) {
        let pick = |r: &RowResult| if unseen { r.eval.unseen.pck } else { r.eval.held_out.pck };
        let seeds = self.seeds();
        let wins = seeds
            .iter()
            .filter(|&&s| matches!((self.get(s, a), self.get(s, b)), (Some(x), Some(y)) if pick(x) - pick(y) >= margin))
            .count();
        (wins, seeds.len())
    }

    pub fn summary(&self) -> String {
        let mut rows: Vec<Row> = Vec::new();
        for r in &self.results {
            if !rows.contains(&r.row) {
                rows.push(r.row);
            }
        }
        let mut s = String::from("mean over seeds\n");
        writeln!(s, "{:<22}{:>10}{:>10}{:>10}{:>12}", "row", "PCK@0.2", "PCKh@0.5", "AUC", "unseen PCK").unwrap();
        for row in &rows {
            let sel: Vec<&RowResult> = self.results.iter().filter(|r| r.row == *row).collect();
            let mean = |f: &dyn Fn(&RowResult) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / sel.len() as f64;
            writeln!(
                s,
                "{:<22}{:>10.4}{:>10.4}{:>10.4}{:>12.4}",
                row.name(),
                mean(&|r| r.eval.held_out.pck),
                mean(&|r| r.eval.held_out.pckh),
                mean(&|r| r.eval.held_out.auc),
                mean(&|r| r.eval.unseen.pck)
            )
            .unwrap();
        }
        if rows.contains(&Row::Full) && rows.contains(&Row::Supervised) {
            let (w, n) = self.wins(Row::Full, Row::Supervised, 0.05, false);
            writeln!(s, "full beats supervised by >= 5 PCK points on held-out frames in {w}/{n} seeds").unwrap();
            let (w, n) = self.wins(Row::Full, Row::Supervised, 0.03, true);
            writeln!(s, "full beats supervised by >= 3 PCK points on the unseen scene in {w}/{n} seeds").unwrap();
        }
        s
    }

    pub fn write(&self, out: &Path) -> Result<(), ExperimentError> {
        write_file(&out.join("metrics.csv"), &self.metrics_csv())?;
        write_file(&out.join("losses.csv"), &self.losses_csv())?;
        write_file(&out.join("summary.txt"), &self.summary())
    }
}

/// Runs every configured row for every seed. With `out` set, checkpoints land
/// under `out/checkpoints/seed<N>/<row>/` and are resumed from when present.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport, ExperimentError> {
    config.validate().map_err(|e| StageError::Invalid(e.to_string())).at(Stage::Ingest)?;
    let mut report = ExperimentReport::default();
    for k in 0..config.experiment.seeds {
        let seed = config.experiment.seed + k as u64;
        let data = ingest(config, seed)?;
        let pencils = PencilTable::new(&data.cameras, config.losses.eps_c).at(Stage::Ingest)?;
        let boot = bootstrap(config, &data, seed)?;
        let seed_dir = out.map(|o| o.join("checkpoints").join(format!("seed{seed}")));
        if let Some(dir) = &seed_dir {
            create_dir(dir)?;
            boot.pretrained.weights.save(&dir.join("bootstrap.weights")).at(Stage::Output)?;
        }
        let mut trained = Vec::new();
        for &row in &config.experiment.rows {
            let dir = seed_dir.as_ref().map(|d| d.join(row.name()));
            let (weights, losses) = refine_row(config, &data, &pencils, &boot, row, seed, dir.as_deref())?;
            trained.push((row, weights, losses));
        }
        let sets = EvalSets::new(config, data, seed)?;
        for (row, weights, losses) in trained {
            let eval = evaluate_weights(config, &weights, &sets)?;
            report.results.push(RowResult { seed, row, eval, losses });
        }
    }
    if let Some(out) = out {
        report.write(out)?;
    }
    Ok(report)
}

/// Writes the bootstrap products for one seed: weights, optimizer state,
/// augmented annotations, and per-epoch pretraining loss.
pub fn write_bootstrap(config: &ExperimentConfig, boot: &Bootstrapped, data: &Dataset, out: &Path) -> Result<(), ExperimentError> {
    create_dir(out)?;
    boot.pretrained.weights.save(&out.join("bootstrap.weights")).at(Stage::Output)?;
    boot.pretrained.optimizer.save(&out.join("bootstrap.adam")).at(Stage::Output)?;
    let mut grid = vec![vec![Annotation::empty(data.dims(), data.channels()); data.views()]; data.frames()];
    for (t, v, a) in &boot.labeled {
        grid[*t][*v] = a.clone();
    }
    let labeled: Vec<Vec<Annotation>> = config.labeled_frames().iter().map(|&t| grid[t].clone()).collect();
    write_file(&out.join("bootstrap_annotations.txt"), &format_annotations(&labeled))?;
    let mut s = String::from("epoch,L_L\n");
    for (e, l) in boot.pretrained.epoch_losses.iter().enumerate() {
        writeln!(s, "{e},{l:.6}").unwrap();
    }
    write_file(&out.join("losses.csv"), &s)
}

/// Plane distributions of frame `t` in views `i` and `j`, and each one spread
/// back over the other view's image. Uses the predictor when `weights` is
/// given and ground truth otherwise.
pub fn transfer_viz(
    data: &Dataset,
    weights: Option<&PredictorWeights>,
    t: usize,
    i: usize,
    j: usize,
    sigma: f64,
    out: &Path,
) -> Result<(), ExperimentError> {
    if t >= data.frames() || i >= data.views() || j >= data.views() || i == j {
        return Err(StageError::Invalid(format!("frame {t} views {i},{j} not available"))).at(Stage::Ingest);
    }
    let heatmap = |v: usize| -> Result<Heatmap, ExperimentError> {
        match weights {
            Some(w) => Ok(forward(w, &data.images[t][v]).at(Stage::Eval)?.heatmap),
            None => {
                let ann = &data.annotations[t][v];
                let planes: Vec<Vec<f64>> = ann
                    .keypoints
                    .iter()
                    .map(|k| match k {
                        Some(k) => crate::heatmap::render_gaussian(k.position, sigma, ann.dims.width, ann.dims.height).channel(0).to_vec(),
                        None => vec![1.0 / ann.dims.len() as f64; ann.dims.len()],
                    })
                    .collect();
                let refs: Vec<&[f64]> = planes.iter().map(|p| p.as_slice()).collect();
                Heatmap::from_channels(ann.dims, &refs).at(Stage::Eval)
            }
        }
    };
    let (p_i, p_j) = (heatmap(i)?, heatmap(j)?);
    let pencil = BinnedPencil::from_cameras(&data.cameras[i], &data.cameras[j], None).at(Stage::Eval)?;
    let q_i = transfer_heatmap(&p_i, &pencil, View::I).at(Stage::Eval)?;
    let q_j = transfer_heatmap(&p_j, &pencil, View::J).at(Stage::Eval)?;
    create_dir(out)?;
    let save = |name: String, g: &Grid| g.save(&out.join(name)).at(Stage::Output);
    save(format!("q_t{t:04}_v{i}.grid"), &distributions_to_grid(&q_i))?;
    save(format!("q_t{t:04}_v{j}.grid"), &distributions_to_grid(&q_j))?;
    for (q, from, to, cam) in [(&q_i, i, j, &data.cameras[j]), (&q_j, j, i, &data.cameras[i])] {
        let maps: Vec<Heatmap> = q.iter().map(|d| backproject(d, &pencil.pencil, cam)).collect::<Result<_, _>>().at(Stage::Eval)?;
        let planes: Vec<&[f64]> = maps.iter().map(|m| m.channel(0)).collect();
        let grid = Grid::from_planes(maps[0].dims(), &planes).at(Stage::Eval)?;
        save(format!("backproject_t{t:04}_v{from}_to_v{to}.grid"), &grid)?;
        save(format!("heatmap_t{t:04}_v{to}.grid"), if to == j { p_j.grid() } else { p_i.grid() })?;
    }
    Ok(())
}

/// Evaluation of a saved checkpoint on the held-out and unseen splits.
pub fn evaluate_checkpoint(config: &ExperimentConfig, weights_path: &Path, seed: u64) -> Result<Evaluation, ExperimentError> {
    let data = ingest(config, seed)?;
    let weights = PredictorWeights::load(weights_path, PredictorConfig::new(data.channels())).at(Stage::Ingest)?;
    let sets = EvalSets::new(config, data, seed)?;
    evaluate_weights(config, &weights, &sets)
}

impl Evaluation {
    pub const CSV_HEADER: &'static str = "seed,split,images,pck,pckh,auc";

    pub fn csv(&self, seed: u64) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for (split, e) in [("held-out", self.held_out), ("unseen", self.unseen)] {
            writeln!(s, "{seed},{split},{},{:.6},{:.6},{:.6}", e.images, e.pck, e.pckh, e.auc).unwrap();
        }
        s
    }

    pub fn write(&self, seed: u64, out: &Path) -> Result<(), ExperimentError> {
        write_file(&out.join("metrics.csv"), &self.csv(seed))?;
        let mut summary = String::new();
        for (split, e) in [("held-out", self.held_out), ("unseen", self.unseen)] {
            writeln!(summary, "{split:<9} images {:>4}  PCK@0.2 {:.4}  PCKh@0.5 {:.4}  AUC {:.4}", e.images, e.pck, e.pckh, e.auc).unwrap();
        }
        write_file(&out.join("summary.txt"), &summary)
    }
}

/// Generates the scene for `seed` and writes it as a scene directory.
pub fn write_scene(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<Dataset, ExperimentError> {
    let scene = generate(&config.scene, seed).at(Stage::Ingest)?;
    let data = Dataset::from_scene(&scene, &config.flow.strides, config.flow.noise);
    data.save(out).at(Stage::Output)?;
    Ok(data)
}
