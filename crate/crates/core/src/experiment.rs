//! End-to-end experiments on the synthetic benchmark: the loss/architecture
//! table, score heatmaps, the theory report, a toy multi-label comparison of
//! bag objectives and a bag-size sweep.
//!
//! Runs are seeded end to end; the same configuration reproduces every
//! artifact bit for bit. Each run writes into its own directory.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bag::{Origin, UnpackedDataset};
use crate::error::{MilError, Result};
use crate::metrics::{average_precision, bag_max_score, map_over_labels, MapReport};
use crate::model::{Architecture, Mlp};
use crate::objectives::{BagObjective, InstanceLoss, NoiseRates};
use crate::scalar::Scalar;
use crate::synth::{densities, generate, generate_bags, SynthSpec};
use crate::theory::{mixing_optimum, mixing_tolerance, SegmentVerdict, TheoremSolution};
use crate::train::{par_forward, train, train_bags, BagSet, RunRecord, TrainConfig, TrainedModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Si,
    Uc,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Si => "si",
            LossKind::Uc => "uc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Linear,
    TwoLayer,
}

impl ArchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Linear => "linear",
            ArchKind::TwoLayer => "two_layer",
        }
    }

    pub fn build(self, inputs: usize) -> Architecture {
        match self {
            ArchKind::Linear => Architecture::linear(inputs),
            ArchKind::TwoLayer => Architecture::two_layer(inputs),
        }
    }
}

/// Floating-point type used for training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub spec: SynthSpec,
    #[serde(default = "all_losses")]
    pub losses: Vec<LossKind>,
    #[serde(default = "all_archs")]
    pub archs: Vec<ArchKind>,
    #[serde(default = "TrainConfig::acceptance")]
    pub train: TrainConfig,
    /// Each seed drives both data generation and weight initialization.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Rates for the unbiased cost; defaults to treating `P'-` as flipped negatives.
    #[serde(default)]
    pub noise_rates: Option<NoiseRates>,
    #[serde(default)]
    pub precision: Precision,
}

fn all_losses() -> Vec<LossKind> {
    vec![LossKind::Si, LossKind::Uc]
}
fn all_archs() -> Vec<ArchKind> {
    vec![ArchKind::Linear, ArchKind::TwoLayer]
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            losses: all_losses(),
            archs: all_archs(),
            train: TrainConfig::acceptance(),
            seeds: default_seeds(),
            output_dir: None,
            noise_rates: None,
            precision: Precision::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.train.validate()?;
        if self.losses.is_empty() || self.archs.is_empty() {
            return Err(MilError::Config("the loss x architecture grid is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(MilError::Config("at least one seed is required".into()));
        }
        if let Some(r) = self.noise_rates {
            r.validate()?;
        }
        Ok(())
    }

    pub fn noise_rates(&self) -> NoiseRates {
        self.noise_rates.unwrap_or_else(|| NoiseRates::si_default(&self.spec.config))
    }

    pub fn instance_loss(&self, kind: LossKind) -> InstanceLoss {
        match kind {
            LossKind::Si => InstanceLoss::Si,
            LossKind::Uc => InstanceLoss::Uc(self.noise_rates()),
        }
    }

    /// Spec for one seed.
    pub fn spec_for(&self, seed: u64) -> SynthSpec {
        SynthSpec { seed, ..self.spec.clone() }
    }

    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }

    /// SHA-256 of the canonical JSON encoding, output directory excluded.
    pub fn digest(&self) -> String {
        let canonical = Self { output_dir: None, ..self.clone() };
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Mean score per vertical line over the negative region, plus the margin
/// between the weakest positive and the strongest negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub right_mean: f64,
    pub left_mean: f64,
    pub right_count: usize,
    pub left_count: usize,
    pub positive_mean: f64,
    pub positive_min: f64,
    pub negative_max: f64,
}

impl RegionStats {
    pub fn compute<T: Scalar>(spec: &SynthSpec, ds: &UnpackedDataset<T>, scores: &[T]) -> Result<Self> {
        crate::error::ensure_len(ds.len(), scores.len())?;
        let [left, right] = spec.line_abscissas;
        let mut s = Self {
            right_mean: 0.0,
            left_mean: 0.0,
            right_count: 0,
            left_count: 0,
            positive_mean: 0.0,
            positive_min: f64::INFINITY,
            negative_max: f64::NEG_INFINITY,
        };
        let mut pos_count = 0usize;
        for (inst, &score) in ds.iter().zip(scores) {
            let v = score.as_f64();
            if inst.origin == Origin::PplusPrime {
                s.positive_mean += v;
                s.positive_min = s.positive_min.min(v);
                pos_count += 1;
                continue;
            }
            s.negative_max = s.negative_max.max(v);
            let x = inst.features[0].as_f64();
            if (x - right).abs() < (x - left).abs() {
                s.right_mean += v;
                s.right_count += 1;
            } else {
                s.left_mean += v;
                s.left_count += 1;
            }
        }
        s.right_mean /= s.right_count.max(1) as f64;
        s.left_mean /= s.left_count.max(1) as f64;
        s.positive_mean /= pos_count.max(1) as f64;
        Ok(s)
    }
}

/// Ground-truth errors of the rule `score > threshold`.
pub fn threshold_errors<T: Scalar>(scores: &[T], truth: &[bool], threshold: f64) -> usize {
    scores.iter().zip(truth).filter(|(s, &t)| (s.as_f64() > threshold) != t).count()
}

/// Outcome of one (loss, architecture, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub ap: Option<f64>,
    pub chosen_lr: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub runs: Vec<RunRecord>,
    pub region: Option<RegionStats>,
    pub threshold_errors: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Cell {
    pub loss: LossKind,
    pub arch: ArchKind,
    pub seeds: Vec<SeedResult>,
    /// Mean AP over the seeds that trained successfully.
    pub mean_ap: Option<f64>,
    pub min_ap: Option<f64>,
    pub max_ap: Option<f64>,
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub config_digest: String,
    pub cells: Vec<Table1Cell>,
}

impl Table1 {
    pub fn cell(&self, loss: LossKind, arch: ArchKind) -> Option<&Table1Cell> {
        self.cells.iter().find(|c| c.loss == loss && c.arch == arch)
    }

    /// Plain-text rendering: mean AP per cell, min/max across seeds below.
    pub fn render(&self) -> String {
        let mut archs: Vec<ArchKind> = Vec::new();
        let mut losses: Vec<LossKind> = Vec::new();
        for c in &self.cells {
            if !archs.contains(&c.arch) {
                archs.push(c.arch);
            }
            if !losses.contains(&c.loss) {
                losses.push(c.loss);
            }
        }
        let mut out = String::new();
        let _ = write!(out, "{:<6}", "loss");
        for a in &archs {
            let _ = write!(out, "{:>24}", a.as_str());
        }
        out.push('\n');
        for l in &losses {
            let _ = write!(out, "{:<6}", l.as_str());
            for a in &archs {
                let text = match self.cell(*l, *a) {
                    Some(c) if c.mean_ap.is_some() => format!(
                        "{:.4} [{:.4}, {:.4}]{}",
                        c.mean_ap.unwrap_or(f64::NAN),
                        c.min_ap.unwrap_or(f64::NAN),
                        c.max_ap.unwrap_or(f64::NAN),
                        if c.failed { "*" } else { "" }
                    ),
                    Some(_) => "failed".to_string(),
                    None => "-".to_string(),
                };
                let _ = write!(out, "{text:>24}");
            }
            out.push('\n');
        }
        out.push_str("AP against ground truth: mean [min, max] over seeds; * = some seeds failed\n");
        out
    }
}

/// A trained model kept alongside its cell, for follow-up analysis.
pub struct CellModel<T> {
    pub loss: LossKind,
    pub arch: ArchKind,
    pub seed: u64,
    pub trained: TrainedModel<T>,
}

/// Reproducibility record written next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub crate_version: String,
    pub precision: Precision,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C, digest: String, seeds: Vec<u64>, precision: Precision) -> Self {
        Self {
            command: command.to_string(),
            config_digest: digest,
            config: serde_json::to_value(config).expect("config serializes"),
            seeds,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            precision,
            files: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

/// Reads a JSON input file; a missing or malformed file is a configuration error.
pub fn read_json<V: serde::de::DeserializeOwned>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| MilError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| MilError::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Trains every (loss, architecture, seed) combination and scores it
/// against ground truth; writes artifacts if `output_dir` is set.
pub fn run_table1(config: &ExperimentConfig) -> Result<Table1> {
    match config.precision {
        Precision::F32 => run_table1_with::<f32>(config).map(|(t, _)| t),
        Precision::F64 => run_table1_with::<f64>(config).map(|(t, _)| t),
    }
}

/// [`run_table1`] at a fixed precision, also returning the trained models.
pub fn run_table1_with<T: Scalar>(config: &ExperimentConfig) -> Result<(Table1, Vec<CellModel<T>>)> {
    config.validate()?;
    let datasets: Vec<(u64, UnpackedDataset<T>)> =
        config.seeds.iter().map(|&s| Ok((s, generate::<T>(&config.spec_for(s))?))).collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for &loss in &config.losses {
        for &arch in &config.archs {
            for (i, _) in datasets.iter().enumerate() {
                jobs.push((loss, arch, i));
            }
        }
    }
    let outcomes: Vec<(SeedResult, Option<TrainedModel<T>>)> = jobs
        .par_iter()
        .map(|&(loss, arch, i)| {
            let (seed, ds) = (&datasets[i].0, &datasets[i].1);
            run_cell(config, loss, arch, *seed, ds)
        })
        .collect();

    let mut cells = Vec::new();
    let mut models = Vec::new();
    let mut it = jobs.iter().zip(outcomes);
    for &loss in &config.losses {
        for &arch in &config.archs {
            let mut seeds = Vec::new();
            for _ in 0..datasets.len() {
                let (_, (result, model)) = it.next().expect("one outcome per job");
                if let Some(trained) = model {
                    models.push(CellModel { loss, arch, seed: result.seed, trained });
                }
                seeds.push(result);
            }
            let aps: Vec<f64> = seeds.iter().filter_map(|s| s.ap).collect();
            cells.push(Table1Cell {
                loss,
                arch,
                mean_ap: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
                min_ap: aps.iter().copied().reduce(f64::min),
                max_ap: aps.iter().copied().reduce(f64::max),
                failed: aps.len() < seeds.len(),
                seeds,
            });
        }
    }
    let table = Table1 { config_digest: config.digest(), cells };
    if let Some(dir) = &config.output_dir {
        write_table1(config, &table, &models, &datasets, dir)?;
    }
    Ok((table, models))
}

fn run_cell<T: Scalar>(
    config: &ExperimentConfig,
    loss: LossKind,
    arch: ArchKind,
    seed: u64,
    ds: &UnpackedDataset<T>,
) -> (SeedResult, Option<TrainedModel<T>>) {
    let mut result = SeedResult {
        seed,
        ap: None,
        chosen_lr: None,
        final_train_loss: None,
        runs: Vec::new(),
        region: None,
        threshold_errors: None,
        error: None,
    };
    let trained = match train(&ds.training_view(), config.instance_loss(loss), arch.build(ds.dim()), &config.train_for(seed)) {
        Ok(t) => t,
        Err(e) => {
            result.error = Some(e.to_string());
            return (result, None);
        }
    };
    result.chosen_lr = Some(trained.chosen_lr);
    result.final_train_loss = Some(trained.final_train_loss.as_f64());
    result.runs = trained.runs.clone();
    let eval = par_forward(&trained.model, ds.features()).and_then(|scores| {
        let curve = average_precision(&scores, ds.truth_labels())?;
        let region = RegionStats::compute(&config.spec_for(seed), ds, &scores)?;
        Ok((curve.ap, region, threshold_errors(&scores, ds.truth_labels(), 0.5)))
    });
    match eval {
        Ok((ap, region, errors)) => {
            result.ap = Some(ap);
            result.region = Some(region);
            result.threshold_errors = Some(errors);
        }
        Err(e) => result.error = Some(e.to_string()),
    }
    (result, Some(trained))
}

fn write_table1<T: Scalar>(
    config: &ExperimentConfig,
    table: &Table1,
    models: &[CellModel<T>],
    datasets: &[(u64, UnpackedDataset<T>)],
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest::new("table1", config, table.config_digest.clone(), config.seeds.clone(), config.precision);
    write_json(&dir.join("table1.json"), table)?;
    fs::write(dir.join("table1.txt"), table.render())?;
    manifest.files.extend(["table1.json".to_string(), "table1.txt".to_string()]);
    for m in models {
        let name = format!("{}_{}_seed{}", m.loss.as_str(), m.arch.as_str(), m.seed);
        let run_dir = dir.join("runs").join(&name);
        fs::create_dir_all(&run_dir)?;
        let checkpoint = m.trained.checkpoint(m.loss.as_str(), &config.train_for(m.seed));
        write_json(&run_dir.join("checkpoint.json"), &checkpoint)?;
        let ds = &datasets.iter().find(|(s, _)| *s == m.seed).expect("dataset per seed").1;
        let scores = par_forward(&m.trained.model, ds.features())?;
        average_precision(&scores, ds.truth_labels())?.write_csv(run_dir.join("pr.csv"))?;
        let heat = render_heatmap(&m.trained.model, &HeatmapSpec::default())?;
        heat.write(&run_dir, "heatmap")?;
        for f in ["checkpoint.json", "pr.csv", "heatmap.csv", "heatmap.pgm"] {
            manifest.files.push(format!("runs/{name}/{f}"));
        }
    }
    manifest.write(dir)
}

/// Window and resolution of a score heatmap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// `(nx, ny)`.
    pub resolution: (usize, usize),
}

impl Default for HeatmapSpec {
    /// 200 x 200 over `[-2.5, 2.5] x [-1, 5.5]`, covering the default data.
    fn default() -> Self {
        Self { x_range: [-2.5, 2.5], y_range: [-1.0, 5.5], resolution: (200, 200) }
    }
}

impl HeatmapSpec {
    pub fn validate(&self) -> Result<()> {
        let (nx, ny) = self.resolution;
        if nx < 2 || ny < 2 {
            return Err(MilError::Config("heatmap needs at least 2 x 2 cells".into()));
        }
        for r in [self.x_range, self.y_range] {
            if !(r[0] < r[1] && r[0].is_finite() && r[1].is_finite()) {
                return Err(MilError::Config(format!("empty heatmap range {r:?}")));
            }
        }
        Ok(())
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_range[0] + (self.x_range[1] - self.x_range[0]) * i as f64 / (self.resolution.0 - 1) as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_range[0] + (self.y_range[1] - self.y_range[0]) * j as f64 / (self.resolution.1 - 1) as f64
    }
}

/// Model scores on a regular grid; `values[j * nx + i]` is the score at
/// `(x(i), y(j))`, `j = 0` at the bottom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub spec: HeatmapSpec,
    pub values: Vec<f64>,
}

impl HeatmapGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.spec.resolution.0 + i]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "score"])?;
        let (nx, ny) = self.spec.resolution;
        for j in 0..ny {
            for i in 0..nx {
                w.serialize((self.spec.x(i), self.spec.y(j), self.at(i, j)))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Binary greyscale PGM, top row = largest `y`, 255 = score 1.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (nx, ny) = self.spec.resolution;
        let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
        for j in (0..ny).rev() {
            for i in 0..nx {
                out.push((self.at(i, j).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.pgm` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        self.write_csv(&dir.join(format!("{stem}.csv")))?;
        fs::write(dir.join(format!("{stem}.pgm")), self.to_pgm())?;
        Ok(())
    }
}

/// Evaluates a two-input, single-output model on the grid.
pub fn render_heatmap<T: Scalar>(model: &Mlp<T>, spec: &HeatmapSpec) -> Result<HeatmapGrid> {
    spec.validate()?;
    if model.arch.inputs() != 2 || model.arch.outputs() != 1 {
        return Err(MilError::Config("heatmaps need a model with 2 inputs and 1 output".into()));
    }
    let (nx, ny) = spec.resolution;
    let mut features = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            features.push(T::lit(spec.x(i)));
            features.push(T::lit(spec.y(j)));
        }
    }
    let values = par_forward(model, &features)?.into_iter().map(|v| v.as_f64()).collect();
    Ok(HeatmapGrid { spec: spec.clone(), values })
}

/// Closed-form quantities for one synthetic specification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub spec: SynthSpec,
    pub mixing_optimum: f64,
    /// The large-`M` approximation `1 / (B + 1)`.
    pub mixing_optimum_approx: f64,
    pub value_on_positive: f64,
    pub segments: Vec<SegmentOptimum>,
    pub tolerance: Vec<ToleranceAt>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptimum {
    pub abscissa: f64,
    pub y_range: [f64; 2],
    pub optimum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceAt {
    pub threshold: f64,
    pub segments: Vec<SegmentVerdict>,
}

pub const REPORT_THRESHOLDS: [f64; 3] = [0.1, 0.25, 0.5];

pub fn run_theory_report(spec: &SynthSpec) -> Result<TheoryReport> {
    spec.validate()?;
    let solution = TheoremSolution::new(spec)?;
    let (mu_p, mu_n) = densities::<f64>(spec)?;
    let segments = mu_n
        .segments
        .iter()
        .map(|s| {
            Ok(SegmentOptimum {
                abscissa: s.abscissa,
                y_range: [s.y_lo, s.y_hi],
                optimum: solution.value_on_negative([s.abscissa, 0.5 * (s.y_lo + s.y_hi)])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tolerance = REPORT_THRESHOLDS
        .iter()
        .map(|&t| Ok(ToleranceAt { threshold: t, segments: mixing_tolerance(&spec.config, &mu_p, &mu_n, t)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(TheoryReport {
        spec: spec.clone(),
        mixing_optimum: mixing_optimum(&spec.config),
        mixing_optimum_approx: 1.0 / (spec.config.b + 1.0),
        value_on_positive: solution.value_on_positive,
        segments,
        tolerance,
    })
}

/// Toy multi-label benchmark: each label is an independent copy of the
/// synthetic problem on its own pair of feature dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    /// Per-label generator; its seed is offset by the label index.
    pub spec: SynthSpec,
    pub n_labels: usize,
    /// Hidden width of the shared trunk. Two units per label is too narrow
    /// for the SI objective to separate every label within budget.
    #[serde(default = "default_toy_hidden")]
    pub hidden: usize,
    pub train: TrainConfig,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub precision: Precision,
}

fn default_toy_hidden() -> usize {
    64
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            spec: SynthSpec::new(crate::bag::MilConfig { m: 10, l: 1, b: 20.0, p: 10 }, 0.8, 0),
            n_labels: 5,
            hidden: default_toy_hidden(),
            train: TrainConfig { epochs: 10_000, learning_rates: vec![1e-2, 1e-3], ..TrainConfig::default() },
            seed: 0,
            output_dir: None,
            precision: Precision::default(),
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.train.validate()?;
        if self.n_labels == 0 {
            return Err(MilError::Config("toy benchmark needs at least one label".into()));
        }
        if self.hidden == 0 {
            return Err(MilError::Config("toy trunk needs at least one hidden unit".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let canonical = Self { output_dir: None, ..self.clone() };
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }
}

/// Bags of a toy multi-label dataset in the layout [`train_bags`] expects.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyData<T> {
    pub features: Vec<T>,
    pub dim: usize,
    pub labels: Vec<bool>,
    pub bag_size: usize,
    pub n_labels: usize,
}

impl<T: Scalar> ToyData<T> {
    pub fn bag_set(&self) -> BagSet<'_, T> {
        BagSet { features: &self.features, dim: self.dim, labels: &self.labels, bag_size: self.bag_size, n_labels: self.n_labels }
    }

    pub fn n_bags(&self) -> usize {
        self.labels.len() / self.n_labels
    }
}

/// Builds the toy dataset: label `z` draws its bags from `spec` with seed
/// `seed + z`, shuffles them, and places its features in dimensions
/// `2z, 2z + 1`. Bag `i` combines the `i`-th shuffled bag of every label.
pub fn toy_dataset<T: Scalar>(config: &ToyConfig) -> Result<ToyData<T>> {
    config.validate()?;
    let k = config.n_labels;
    let m = config.spec.config.m;
    let mut per_label = Vec::with_capacity(k);
    for z in 0..k {
        let spec = SynthSpec { seed: config.seed.wrapping_add(z as u64), ..config.spec.clone() };
        let mut bags = generate_bags::<T>(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(4);
        bags.shuffle(&mut rng);
        per_label.push(bags);
    }
    let n_bags = per_label[0].len();
    let dim = 2 * k;
    let mut features = Vec::with_capacity(n_bags * m * dim);
    let mut labels = Vec::with_capacity(n_bags * k);
    for i in 0..n_bags {
        for j in 0..m {
            for bags in &per_label {
                features.extend_from_slice(&bags[i].features[j]);
            }
        }
        labels.extend(per_label.iter().map(|bags| bags[i].label));
    }
    Ok(ToyData { features, dim, labels, bag_size: m, n_labels: k })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveResult {
    pub objective: String,
    pub chosen_lr: f64,
    pub final_train_loss: f64,
    pub report: MapReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub config_digest: String,
    pub si: ObjectiveResult,
    pub soft_nor: ObjectiveResult,
    /// `|mAP(si) - mAP(soft_nor)|`.
    pub gap: f64,
}

pub fn run_toy_multilabel(config: &ToyConfig) -> Result<ToyReport> {
    match config.precision {
        Precision::F32 => run_toy_with::<f32>(config),
        Precision::F64 => run_toy_with::<f64>(config),
    }
}

fn run_toy_with<T: Scalar>(config: &ToyConfig) -> Result<ToyReport> {
    let data = toy_dataset::<T>(config)?;
    let arch = Architecture::TwoLayer { inputs: data.dim, hidden: config.hidden, outputs: data.n_labels };
    let results = [BagObjective::Si, BagObjective::SoftNor]
        .par_iter()
        .map(|&obj| {
            let trained = train_bags(&data.bag_set(), obj, arch, &config.train)?;
            let report = bag_level_map(&trained.model, &data)?;
            Ok(ObjectiveResult {
                objective: obj.name().to_string(),
                chosen_lr: trained.chosen_lr,
                final_train_loss: trained.final_train_loss.as_f64(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let [si, soft_nor]: [ObjectiveResult; 2] = results.try_into().expect("two objectives");
    let report = ToyReport { config_digest: config.digest(), gap: (si.report.map - soft_nor.report.map).abs(), si, soft_nor };
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("toy_multilabel.json"), &report)?;
        let mut manifest = Manifest::new("toy-multilabel", config, report.config_digest.clone(), vec![config.seed], config.precision);
        manifest.files.push("toy_multilabel.json".into());
        manifest.write(dir)?;
    }
    Ok(report)
}

/// Bag score per label is the largest instance score; AP is taken against
/// the bag labels.
pub fn bag_level_map<T: Scalar>(model: &Mlp<T>, data: &ToyData<T>) -> Result<MapReport> {
    let scores = par_forward(model, &data.features)?;
    let (k, m) = (data.n_labels, data.bag_size);
    let curves: Vec<_> = (0..k)
        .map(|z| {
            let bag_scores = (0..data.n_bags())
                .map(|b| {
                    let inst: Vec<T> = (0..m).map(|j| scores[(b * m + j) * k + z]).collect();
                    bag_max_score(&inst)
                })
                .collect::<Result<Vec<T>>>()?;
            let truth: Vec<bool> = (0..data.n_bags()).map(|b| data.labels[b * k + z]).collect();
            average_precision(&bag_scores, &truth)
        })
        .collect();
    map_over_labels(&curves)
}

/// Instance-level AP of the SI two-layer model for each bag size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagSizePoint {
    pub b: f64,
    pub ap: Vec<f64>,
    pub mean_ap: f64,
}

pub fn run_bag_size_sweep<T: Scalar>(spec: &SynthSpec, sizes: &[f64], train_cfg: &TrainConfig, seeds: &[u64]) -> Result<Vec<BagSizePoint>> {
    sizes
        .iter()
        .map(|&b| {
            let mut ap = Vec::new();
            for &seed in seeds {
                let spec_b =
                    SynthSpec { config: crate::bag::MilConfig::new(spec.config.m, spec.config.l, b, spec.config.p)?, seed, ..spec.clone() };
                let ds = generate::<T>(&spec_b)?;
                let cfg = TrainConfig { seed, ..train_cfg.clone() };
                let trained = train(&ds.training_view(), InstanceLoss::Si, Architecture::two_layer(2), &cfg)?;
                let scores = par_forward(&trained.model, ds.features())?;
                ap.push(average_precision(&scores, ds.truth_labels())?.ap);
            }
            let mean_ap = ap.iter().sum::<f64>() / ap.len() as f64;
            Ok(BagSizePoint { b, ap, mean_ap })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bag::MilConfig;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            spec: SynthSpec::new(MilConfig::new(10, 1, 2.0, 5).unwrap(), 0.8, 0),
            train: TrainConfig { epochs: 200, learning_rates: vec![1e-2], trace_points: 5, ..TrainConfig::default() },
            seeds: vec![0, 1],
            precision: Precision::F64,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn table_has_every_cell_and_seed() {
        let (t, models) = run_table1_with::<f64>(&tiny()).unwrap();
        assert_eq!(t.cells.len(), 4);
        assert_eq!(models.len(), 8);
        for c in &t.cells {
            assert_eq!(c.seeds.len(), 2);
            assert!(!c.failed);
            let ap = c.mean_ap.unwrap();
            assert!((0.0..=1.0).contains(&ap));
        }
        let text = t.render();
        assert!(text.contains("two_layer") && text.lines().count() == 4);
    }

    #[test]
    fn table_is_deterministic() {
        let a = run_table1(&tiny()).unwrap();
        let b = run_table1(&tiny()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failed_cell_is_recorded() {
        let mut cfg = tiny();
        cfg.losses = vec![LossKind::Si];
        cfg.archs = vec![ArchKind::Linear];
        cfg.train.learning_rates = vec![f64::MAX];
        let (t, _) = run_table1_with::<f64>(&cfg).unwrap();
        let c = &t.cells[0];
        assert!(c.failed && c.mean_ap.is_none());
        assert!(c.seeds[0].error.as_deref().unwrap().contains("diverged"));
        assert!(t.render().lines().nth(1).unwrap().trim_end().ends_with("failed"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny();
        cfg.archs.clear();
        assert!(matches!(cfg.validate(), Err(MilError::Config(_))));
        let mut cfg = tiny();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let json = r#"{"seeds":[4]}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.train.epochs, 20_000);
        assert_eq!(cfg.spec, SynthSpec::default());
        assert_eq!(cfg.seeds, vec![4]);
    }

    #[test]
    fn digest_ignores_output_dir() {
        let a = tiny();
        let mut b = tiny();
        b.output_dir = Some("/tmp/x".into());
        assert_eq!(a.digest(), b.digest());
        b.seeds = vec![9];
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn zero_model_heatmap_is_flat() {
        let g = render_heatmap(&Mlp::<f64>::zeros(Architecture::two_layer(2)), &HeatmapSpec::default()).unwrap();
        assert_eq!(g.values.len(), 40_000);
        assert!(g.values.iter().all(|&v| v == 0.5));
        let pgm = g.to_pgm();
        assert!(pgm.starts_with(b"P5\n200 200\n255\n"));
        assert_eq!(pgm.len(), b"P5\n200 200\n255\n".len() + 40_000);
        assert!(pgm[pgm.len() - 1] == 128);
    }

    #[test]
    fn heatmap_orientation() {
        // Score rises with y: top PGM row must be brightest.
        let m = Mlp::from_params(Architecture::linear(2), vec![0.0, 3.0, 0.0]).unwrap();
        let spec = HeatmapSpec { resolution: (3, 4), ..HeatmapSpec::default() };
        let g = render_heatmap(&m, &spec).unwrap();
        assert!(g.at(0, 3) > g.at(0, 0));
        let pgm = g.to_pgm();
        let body = &pgm[pgm.len() - 12..];
        assert!(body[0] > body[11]);
        assert!(render_heatmap(&Mlp::<f64>::zeros(Architecture::linear(3)), &spec).is_err());
    }

    #[test]
    fn region_stats_and_threshold_errors() {
        let spec = SynthSpec::new(MilConfig::new(10, 1, 2.0, 5).unwrap(), 0.8, 0);
        let ds = generate::<f64>(&spec).unwrap();
        let scores: Vec<f64> = ds
            .iter()
            .map(|i| match i.origin {
                Origin::PplusPrime => 0.9,
                _ if i.features[0] > 0.0 => 0.2,
                _ => 0.1,
            })
            .collect();
        let r = RegionStats::compute(&spec, &ds, &scores).unwrap();
        assert!((r.right_mean - 0.2).abs() < 1e-12 && (r.left_mean - 0.1).abs() < 1e-12);
        assert_eq!((r.positive_min, r.negative_max), (0.9, 0.2));
        assert_eq!(r.right_count + r.left_count, ds.len() - 5);
        assert_eq!(threshold_errors(&scores, ds.truth_labels(), 0.5), 0);
        assert_eq!(threshold_errors(&scores, ds.truth_labels(), 0.15), r.right_count);
    }

    #[test]
    fn theory_report_values() {
        let r = run_theory_report(&SynthSpec::default()).unwrap();
        assert_eq!(r.mixing_optimum, 99.0 / 2099.0);
        let right = r.segments.iter().find(|s| s.abscissa == 1.0).unwrap();
        assert!((right.optimum - 1584.0 / 21584.0).abs() < 1e-15);
        assert_eq!(r.tolerance.len(), 3);
        let spec = SynthSpec { skew: 0.5, ..SynthSpec::default() };
        let r = run_theory_report(&spec).unwrap();
        assert!(r.segments.iter().all(|s| (s.optimum - r.mixing_optimum).abs() < 1e-15));
    }

    #[test]
    fn toy_dataset_layout() {
        let cfg = ToyConfig { n_labels: 3, ..ToyConfig::default() };
        let d = toy_dataset::<f64>(&cfg).unwrap();
        let c = cfg.spec.config;
        assert_eq!(d.n_bags(), c.p + c.negative_bags());
        assert_eq!(d.features.len(), d.n_bags() * c.m * 6);
        for z in 0..3 {
            let pos = (0..d.n_bags()).filter(|&b| d.labels[b * 3 + z]).count();
            assert_eq!(pos, c.p);
        }
        // Labels are shuffled independently.
        let col = |z: usize| (0..d.n_bags()).map(|b| d.labels[b * 3 + z]).collect::<Vec<_>>();
        assert_ne!(col(0), col(1));
        d.bag_set().validate().unwrap();
    }
}
