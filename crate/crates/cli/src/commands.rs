//! The five subcommands as library functions.
//!
//! Every artifact carries the run configuration and seeds: as `#` header
//! lines in text tables and as fields in JSON documents.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use pose_cvae::cvae::{train_from, LossRecord};
use pose_cvae::eval::{
    evaluate_query, kde_marginal, median_errors, mode_coverage, point_estimate, recall_aggregate,
    uniform_grid, write_recall_report, Axis,
};
use pose_cvae::geometry::Pose;
use pose_cvae::scenes::{
    build_tricolor_scene, generate_dataset, read_dataset, true_mode_set, write_dataset, Dataset,
    Observation, Record, SceneSpec, Split,
};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Model};
use crate::config::{RunConfig, Seeds};
use crate::error::{CliError, CliResult};
use crate::plot::density_svg;

pub const TRAIN_FILE: &str = "dataset_train.txt";
pub const TEST_FILE: &str = "dataset_test.txt";
pub const SCENE_FILE: &str = "scene.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COVERAGE_FILE: &str = "mode_coverage.csv";
pub const SAMPLES_FILE: &str = "samples.txt";
pub const KDE_DATA_FILE: &str = "kde.dat";
pub const KDE_PLOT_FILE: &str = "kde.svg";

/// Minimum share of samples for a mode to count as covered.
pub const COVERAGE_GAMMA: f64 = 0.05;
/// Share of samples an unambiguous query must put on its mode.
pub const CONCENTRATION: f64 = 0.9;

/// Configuration plus the directory artifacts are written to.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Workspace {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> CliResult<Self> {
        config.validate()?;
        let out = out.into();
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        Ok(Workspace { config, out })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn header(&self) -> Vec<String> {
        vec![
            format!("config={}", self.config.header_json()),
            format!("seeds={}", serde_json::to_string(&self.config.seeds()).expect("seeds serialize")),
        ]
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_dataset(BufReader::new(file))?)
}

/// Scene description stored next to generated datasets; evaluation uses it
/// as the mode oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene: SceneSpec,
    pub seeds: Seeds,
    pub config: RunConfig,
}

impl SceneManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutput {
    pub train: PathBuf,
    pub test: PathBuf,
    pub manifest: PathBuf,
}

/// Builds the scene and writes the train and test splits plus the manifest.
pub fn cmd_generate(ws: &Workspace) -> CliResult<GenerateOutput> {
    let c = &ws.config;
    let scene = build_tricolor_scene(c.scene_seed, &c.scene_options())?;
    let out = GenerateOutput {
        train: ws.path(TRAIN_FILE),
        test: ws.path(TEST_FILE),
        manifest: ws.path(SCENE_FILE),
    };
    for (split, n, path) in [
        (Split::Train, c.n_train, &out.train),
        (Split::Test, c.n_test, &out.test),
    ] {
        let data = generate_dataset(&scene, n, None, c.scene_seed, split)?;
        let mut w = create(path)?;
        write_dataset(&mut w, &data, &ws.header())
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(path, e))?;
    }
    write_json(
        &out.manifest,
        &SceneManifest {
            scene,
            seeds: c.seeds(),
            config: c.clone(),
        },
    )?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub last: Option<LossRecord>,
}

/// Trains on a dataset file; writes the checkpoint and the loss log.
/// `progress` receives every log record.
pub fn cmd_train(
    ws: &Workspace,
    data: &Path,
    mut progress: impl FnMut(&LossRecord),
) -> CliResult<TrainOutput> {
    let dataset = load_dataset(data)?;
    let examples = dataset.examples();
    let obs_dim = examples.first().map(|e| e.features.len()).ok_or(pose_cvae::Error::EmptySamples)?;
    let cfg = ws.config.train_config();
    let arch = cfg.architecture(obs_dim);
    let (model, log) = match Model::init(arch, cfg.init_seed, ws.config.precision) {
        Model::F32(m) => train_from(m, &examples, &cfg, &mut progress).map(|(m, l)| (Model::F32(m), l)),
        Model::F64(m) => train_from(m, &examples, &cfg, &mut progress).map(|(m, l)| (Model::F64(m), l)),
    }?;

    let out = TrainOutput {
        checkpoint: ws.path(CHECKPOINT_FILE),
        loss_log: ws.path(LOSS_LOG_FILE),
        last: log.last().copied(),
    };
    Checkpoint::new(&model, &ws.config, log.len()).save(&out.checkpoint)?;
    let mut w = create(&out.loss_log)?;
    let io = |e| CliError::io(&out.loss_log, e);
    for h in ws.header() {
        writeln!(w, "# {h}").map_err(io)?;
    }
    writeln!(w, "iteration,beta,kl,reconstruction,total").map_err(io)?;
    for r in &log {
        writeln!(w, "{},{},{},{},{}", r.iteration, r.beta, r.kl, r.reconstruction, r.total).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(out)
}

/// Seed of the posterior draw for query `index`.
pub fn query_seed(eval_seed: u64, index: usize) -> u64 {
    eval_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    /// Queries with two or more true modes.
    pub ambiguous_queries: usize,
    /// Of those, queries with every mode covered.
    pub ambiguous_all_covered: usize,
    pub unambiguous_queries: usize,
    /// Of those, queries with at least [`CONCENTRATION`] of the mass on the mode.
    pub unambiguous_concentrated: usize,
}

impl CoverageSummary {
    pub fn ambiguous_rate(&self) -> f64 {
        self.ambiguous_all_covered as f64 / self.ambiguous_queries.max(1) as f64
    }

    pub fn unambiguous_rate(&self) -> f64 {
        self.unambiguous_concentrated as f64 / self.unambiguous_queries.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub queries: usize,
    pub samples_per_query: usize,
    pub gamma: f64,
    pub thresholds: Vec<[f64; 2]>,
    pub recall: Vec<f64>,
    pub recall_monotone: bool,
    pub median_translation: Option<f64>,
    pub median_rotation_deg: Option<f64>,
    /// Queries whose sample rotations had no well-defined chordal mean.
    pub degenerate_means: usize,
    pub coverage: Option<CoverageSummary>,
    pub seeds: Seeds,
    pub config: RunConfig,
}

/// Scores a checkpoint on a dataset. With a scene manifest, also scores
/// mode coverage against the scene's ground-truth modes.
pub fn cmd_evaluate(
    ws: &Workspace,
    checkpoint: &Path,
    data: &Path,
    scene: Option<&Path>,
) -> CliResult<EvalSummary> {
    let model = Checkpoint::load(checkpoint)?.model()?;
    let dataset = load_dataset(data)?;
    if let Some(r) = dataset.records.iter().find(|r| r.observation.features.len() != model.arch().obs_dim) {
        return Err(pose_cvae::Error::ArchitectureMismatch(format!(
            "model expects {} observation features, dataset has {}",
            model.arch().obs_dim,
            r.observation.features.len()
        ))
        .into());
    }
    let scene = scene.map(SceneManifest::load).transpose()?.map(|m| m.scene);
    let spec = ws.config.recall_spec();
    let near = spec.thresholds[0];
    let m = ws.config.samples;

    let mut results = Vec::new();
    let mut estimates = Vec::new();
    let mut truths = Vec::new();
    let mut degenerate_means = 0;
    let mut coverage_rows = Vec::new();
    let mut coverage = scene.as_ref().map(|_| CoverageSummary {
        ambiguous_queries: 0,
        ambiguous_all_covered: 0,
        unambiguous_queries: 0,
        unambiguous_concentrated: 0,
    });

    for (i, rec) in dataset.records.iter().enumerate() {
        let samples = model.sample(&rec.observation.features, m, query_seed(ws.config.eval_seed, i))?;
        results.push(evaluate_query(i, &samples.poses, &rec.pose, &spec));
        match point_estimate(&samples.poses) {
            Ok(p) => {
                estimates.push(p);
                truths.push(rec.pose);
            }
            Err(pose_cvae::Error::DegenerateMean { .. }) => degenerate_means += 1,
            Err(e) => return Err(e.into()),
        }
        if let (Some(scene), Some(summary)) = (&scene, coverage.as_mut()) {
            let modes = true_mode_set(scene, &rec.observation)?;
            let c = mode_coverage(&samples.poses, &scene.trajectory, &modes, near, COVERAGE_GAMMA);
            if modes.regions.len() >= 2 {
                summary.ambiguous_queries += 1;
                summary.ambiguous_all_covered += usize::from(c.covered == modes.regions.len());
            } else {
                summary.unambiguous_queries += 1;
                summary.unambiguous_concentrated += usize::from(c.masses[0] >= CONCENTRATION);
            }
            coverage_rows.push((i, rec.coordinate, modes.regions.len(), c));
        }
    }

    let recall = recall_aggregate(&results);
    let (median_translation, median_rotation_deg) = match median_errors(&estimates, &truths) {
        Ok((t, r)) => (Some(t), Some(r)),
        Err(_) => (None, None),
    };
    let summary = EvalSummary {
        queries: results.len(),
        samples_per_query: m,
        gamma: spec.gamma,
        thresholds: ws.config.thresholds.clone(),
        recall_monotone: recall.windows(2).all(|w| w[0] <= w[1]),
        recall,
        median_translation,
        median_rotation_deg,
        degenerate_means,
        coverage,
        seeds: ws.config.seeds(),
        config: ws.config.clone(),
    };

    let report = ws.path(REPORT_FILE);
    let mut w = create(&report)?;
    let io = |e| CliError::io(&report, e);
    for h in ws.header() {
        writeln!(w, "# {h}").map_err(io)?;
    }
    write_recall_report(&mut w, &results, &spec).map_err(io)?;
    w.flush().map_err(io)?;

    if scene.is_some() {
        let path = ws.path(COVERAGE_FILE);
        let mut w = create(&path)?;
        let io = |e| CliError::io(&path, e);
        for h in ws.header() {
            writeln!(w, "# {h}").map_err(io)?;
        }
        writeln!(w, "query_id,coordinate,modes,covered,masses").map_err(io)?;
        for (i, s, n, c) in &coverage_rows {
            let masses: Vec<String> = c.masses.iter().map(|v| format!("{v:.3}")).collect();
            writeln!(w, "{i},{s},{n},{},{}", c.covered, masses.join(";")).map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    write_json(&ws.path(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// What to condition on when sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    /// A record of a dataset file; its pose is the ground truth.
    Index { data: PathBuf, index: usize },
    Features(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRequest {
    pub query: Query,
    pub m: usize,
    pub seed: u64,
    /// Translation component to plot the marginal density of.
    pub plot_axis: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub samples: PathBuf,
    pub degenerate: usize,
    pub kde_data: Option<PathBuf>,
    pub kde_plot: Option<PathBuf>,
    /// Local maxima of the plotted density.
    pub density_maxima: Vec<f64>,
}

/// Draws posterior samples for one query and writes them in the dataset
/// format (the coordinate column holds the translation's `x`).
pub fn cmd_sample(ws: &Workspace, checkpoint: &Path, req: &SampleRequest) -> CliResult<SampleOutput> {
    let model = Checkpoint::load(checkpoint)?.model()?;
    let (features, truth, query_desc) = match &req.query {
        Query::Index { data, index } => {
            let ds = load_dataset(data)?;
            let rec = ds.records.get(*index).ok_or_else(|| {
                CliError::Usage(format!("query index {index} out of range ({} records)", ds.len()))
            })?;
            (
                rec.observation.features.clone(),
                Some(rec.pose),
                format!("query=index:{index} data={}", data.display()),
            )
        }
        Query::Features(f) => (f.clone(), None, format!("query=features:{f:?}")),
    };
    if features.len() != model.arch().obs_dim {
        return Err(pose_cvae::Error::ArchitectureMismatch(format!(
            "model expects {} observation features, query has {}",
            model.arch().obs_dim,
            features.len()
        ))
        .into());
    }
    let drawn = model.sample(&features, req.m, req.seed)?;
    let records = drawn
        .poses
        .iter()
        .map(|p| Record {
            coordinate: p.translation.x,
            pose: *p,
            observation: Observation {
                features: features.clone(),
            },
        })
        .collect();
    let dataset = Dataset {
        split: Split::Sample,
        seed: req.seed,
        records,
    };
    let samples = ws.path(SAMPLES_FILE);
    let mut header = ws.header();
    header.push(format!("{query_desc} m={} degenerate={}", req.m, drawn.degenerate));
    let mut w = create(&samples)?;
    write_dataset(&mut w, &dataset, &header)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&samples, e))?;

    let mut out = SampleOutput {
        samples,
        degenerate: drawn.degenerate,
        kde_data: None,
        kde_plot: None,
        density_maxima: Vec::new(),
    };
    if let Some(axis) = req.plot_axis {
        if axis > 2 {
            return Err(CliError::Usage(format!("plot axis {axis} is not 0, 1 or 2")));
        }
        let curve = marginal_curve(&drawn.poses, axis, truth.as_ref())?;
        out.density_maxima = significant_maxima(&curve);
        let data_path = ws.path(KDE_DATA_FILE);
        let mut w = create(&data_path)?;
        curve
            .write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&data_path, e))?;
        let plot_path = ws.path(KDE_PLOT_FILE);
        let label = ["x", "y", "z"][axis];
        std::fs::write(
            &plot_path,
            density_svg(&curve, truth.map(|p| p.translation[axis]), label),
        )
        .map_err(|e| CliError::io(&plot_path, e))?;
        out.kde_data = Some(data_path);
        out.kde_plot = Some(plot_path);
    }
    Ok(out)
}

fn marginal_curve(
    poses: &[Pose],
    axis: usize,
    truth: Option<&Pose>,
) -> pose_cvae::Result<pose_cvae::eval::DensityCurve> {
    let values = poses.iter().map(|p| p.translation[axis]).chain(truth.map(|t| t.translation[axis]));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = 0.1 * (hi - lo).max(1.0);
    kde_marginal(poses, Axis::Translation(axis), &uniform_grid(lo - pad, hi + pad, 400), None)
}

/// Local maxima at least 5% as high as the tallest peak.
fn significant_maxima(curve: &pose_cvae::eval::DensityCurve) -> Vec<f64> {
    let top = curve.density.iter().copied().fold(0.0, f64::max);
    curve
        .local_maxima()
        .into_iter()
        .filter(|&i| curve.density[i] >= 0.05 * top)
        .map(|i| curve.grid[i])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub samples: usize,
    pub repetitions: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Wall time of drawing `m` posterior samples, over `repetitions` runs.
pub fn cmd_bench(ws: &Workspace, checkpoint: &Path, m: usize, repetitions: usize) -> CliResult<BenchStats> {
    if repetitions == 0 {
        return Err(CliError::Usage("repetitions must be at least 1".into()));
    }
    let model = Checkpoint::load(checkpoint)?.model()?;
    let features = vec![1.0; model.arch().obs_dim];
    let times: Vec<f64> = (0..repetitions)
        .map(|r| {
            let start = Instant::now();
            model.sample(&features, m, query_seed(ws.config.eval_seed, r))?;
            Ok(start.elapsed().as_secs_f64() * 1e3)
        })
        .collect::<CliResult<_>>()?;
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(BenchStats {
        samples: m,
        repetitions,
        mean_ms: mean,
        std_ms: std,
    })
}
