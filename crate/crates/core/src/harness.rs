//! Experiment drivers behind the command-line tool.
//!
//! Every driver computes its full result in memory before anything is
//! written, so a failing run leaves no partial output behind. Independent
//! jobs run on the rayon pool and are collected in index order, which keeps
//! CSV output byte-identical across thread counts.

use std::fmt::Write as _;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{RunConfig, SegmentationMode};
use crate::error::{ConfigError, PgmError, SegmentError, SimError};
use crate::frequency::{FrequencyMap, NodeStatus};
use crate::image::{add_gaussian_noise, generate_quadrant_image, generate_two_region_image, read_pgm, write_pgm, GrayImage, NoiseSpec};
use crate::network::{simulate, SimOutcome};
use crate::segmentation::{cluster_by_gap, matched_accuracy, mislabel_rate, segment_binary, segment_otsu, LabelMap};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("segmentation error: {0}")]
    Segment(#[from] SegmentError),
    #[error("numerical failure: {0}")]
    Numerical(SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Pgm { path: PathBuf, source: PgmError },
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => HarnessError::Config(c),
            other => HarnessError::Numerical(other),
        }
    }
}

impl HarnessError {
    /// Process exit code: 2 configuration, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Segment(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io { .. } | HarnessError::Pgm { .. } => 4,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

pub fn load_image(path: &Path) -> Result<GrayImage, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    read_pgm(&bytes).map_err(|source| HarnessError::Pgm { path: path.to_path_buf(), source })
}

/// Loads a reference mask; each distinct gray level is one region.
pub fn load_labels(path: &Path) -> Result<LabelMap, HarnessError> {
    Ok(LabelMap::from_image(&load_image(path)?))
}

fn zeros(dims: (usize, usize)) -> LabelMap {
    LabelMap::new(dims.0, dims.1, vec![0; dims.0 * dims.1]).expect("single-label map")
}

/// Applies `mode` to a frequency map. Returns the labels and the absolute
/// threshold or gap that was used. Maps with nothing to split (no
/// oscillating nodes, or all frequencies equal) get a single label.
pub fn segment_frequencies(map: &FrequencyMap, mode: SegmentationMode, bins: usize) -> (LabelMap, Option<f64>) {
    let gap = |g: f64| match cluster_by_gap(map, g) {
        Ok(labels) => (labels, Some(g)),
        Err(_) => (zeros(map.dims()), Some(g)),
    };
    match mode {
        SegmentationMode::OtsuBinary => match segment_otsu(map, bins) {
            Ok((t, labels)) => (labels, Some(t)),
            Err(_) => (zeros(map.dims()), None),
        },
        SegmentationMode::Threshold(t) => (segment_binary(map, t), Some(t)),
        SegmentationMode::Gap(g) => gap(g),
        SegmentationMode::RelativeGap(frac) => match map.mean_frequency() {
            Some(mean) if mean > 0.0 => gap(frac * mean),
            _ => (zeros(map.dims()), None),
        },
    }
}

/// Otsu on raw intensities; a flat image yields a single label.
pub fn segment_intensity(image: &GrayImage, bins: usize) -> (LabelMap, Option<f64>) {
    match segment_otsu(image, bins) {
        Ok((t, labels)) => (labels, Some(t)),
        Err(_) => (zeros(image.dims()), None),
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub outcome: SimOutcome,
    pub labels: LabelMap,
    pub threshold: Option<f64>,
}

/// Image → simulated frequency map → labels.
pub fn run_pipeline(image: &GrayImage, cfg: &RunConfig) -> Result<PipelineOutput, HarnessError> {
    cfg.validate()?;
    let outcome = simulate(image, cfg.model, &cfg.coupling, &cfg.sim)?;
    let (labels, threshold) = segment_frequencies(&outcome.map, cfg.mode, cfg.otsu_bins);
    Ok(PipelineOutput { outcome, labels, threshold })
}

/// One way of segmenting an image: an oscillator network or the Otsu
/// intensity baseline.
#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    Oscillator(Box<RunConfig>),
    Otsu { bins: usize },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Oscillator(cfg) => cfg.model.kind().name(),
            Method::Otsu { .. } => "otsu",
        }
    }

    pub fn segment(&self, image: &GrayImage) -> Result<LabelMap, HarnessError> {
        match self {
            Method::Oscillator(cfg) => Ok(run_pipeline(image, cfg)?.labels),
            Method::Otsu { bins } => Ok(segment_intensity(image, *bins).0),
        }
    }
}

/// Collects per-job results in index order, returning the first error.
fn par_collect<T: Send, E: Send>(n: usize, job: impl Fn(usize) -> Result<T, E> + Sync + Send) -> Result<Vec<T>, E> {
    (0..n).into_par_iter().map(job).collect::<Vec<_>>().into_iter().collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// FNV-1a over the map's CSV serialisation.
pub fn map_hash(map: &FrequencyMap) -> u64 {
    let mut h = FnvHasher::default();
    h.write(map.to_csv().as_bytes());
    h.finish()
}

// ---------------------------------------------------------------- segment

/// Reproducibility record written next to the outputs of `segment`.
#[derive(Clone, Debug, Serialize)]
pub struct SegmentReport {
    pub input: String,
    pub reference: Option<String>,
    pub config: RunConfig,
    pub width: usize,
    pub height: usize,
    pub converged: bool,
    pub last_change: Option<f64>,
    pub end_time: f64,
    pub threshold: Option<f64>,
    pub clusters: usize,
    pub nodes_ok: usize,
    pub nodes_low_confidence: usize,
    pub nodes_non_oscillating: usize,
    pub mean_frequency: Option<f64>,
    pub mislabeled_fraction: Option<f64>,
    pub matched_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SegmentResult {
    pub report: SegmentReport,
    pub output: PipelineOutput,
}

impl SegmentResult {
    /// Writes `labels.pgm`, `labels.csv`, `frequencies.csv` and
    /// `report.json` into `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<(), HarnessError> {
        let report = serde_json::to_string_pretty(&self.report).expect("report serialises");
        create_dir(out_dir)?;
        write_file(&out_dir.join("labels.pgm"), &self.output.labels.to_pgm())?;
        write_file(&out_dir.join("labels.csv"), self.output.labels.to_csv().as_bytes())?;
        write_file(&out_dir.join("frequencies.csv"), self.output.outcome.map.to_csv().as_bytes())?;
        write_file(&out_dir.join("report.json"), format!("{report}\n").as_bytes())
    }
}

/// Runs the pipeline on one image, optionally scoring it against a
/// reference mask.
pub fn segment_image(
    image: &GrayImage,
    reference: Option<&LabelMap>,
    cfg: &RunConfig,
    input: &str,
    reference_name: Option<&str>,
) -> Result<SegmentResult, HarnessError> {
    if let Some(r) = reference {
        if r.dims() != image.dims() {
            return Err(SegmentError::DimensionMismatch { left: image.dims(), right: r.dims() }.into());
        }
    }
    let output = run_pipeline(image, cfg)?;
    let map = &output.outcome.map;
    let scores = reference
        .map(|r| -> Result<_, SegmentError> {
            Ok((mislabel_rate(&output.labels, r)?.mislabeled_fraction, matched_accuracy(&output.labels, r).ok()))
        })
        .transpose()?;
    let report = SegmentReport {
        input: input.to_string(),
        reference: reference_name.map(str::to_string),
        config: cfg.clone(),
        width: image.width(),
        height: image.height(),
        converged: output.outcome.converged,
        last_change: output.outcome.last_change,
        end_time: output.outcome.end_time,
        threshold: output.threshold,
        clusters: output.labels.num_labels(),
        nodes_ok: map.count(NodeStatus::Ok),
        nodes_low_confidence: map.count(NodeStatus::LowConfidence),
        nodes_non_oscillating: map.count(NodeStatus::NonOscillating),
        mean_frequency: map.mean_frequency(),
        mislabeled_fraction: scores.map(|s| s.0),
        matched_accuracy: scores.and_then(|s| s.1),
    };
    Ok(SegmentResult { report, output })
}

pub fn cmd_segment(
    cfg: &RunConfig,
    input: &Path,
    reference: Option<&Path>,
    out_dir: &Path,
) -> Result<SegmentResult, HarnessError> {
    cfg.validate()?;
    let image = load_image(input)?;
    let reference_map = reference.map(load_labels).transpose()?;
    let result = segment_image(
        &image,
        reference_map.as_ref(),
        cfg,
        &input.display().to_string(),
        reference.map(|p| p.display().to_string()).as_deref(),
    )?;
    result.write(out_dir)?;
    Ok(result)
}

// ------------------------------------------------------------------ sweep

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub couplings: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Thresholds are fractions of the mean frequency rather than absolute
    /// gaps.
    pub relative: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub coupling: f64,
    pub threshold: f64,
    pub abs_threshold: Option<f64>,
    pub labels: Option<LabelMap>,
    pub map_hash: Option<u64>,
    /// `ok` or a diagnostic.
    pub status: String,
}

impl SweepCell {
    pub fn clusters(&self) -> Option<usize> {
        self.labels.as_ref().map(LabelMap::num_labels)
    }
}

/// Gap clustering over a coupling × threshold grid. One simulation per
/// coupling; all thresholds for that coupling reuse its frequency map.
/// Cells whose simulation fails are reported with a diagnostic status.
pub fn sweep(image: &GrayImage, cfg: &RunConfig, spec: &SweepSpec) -> Result<Vec<SweepCell>, HarnessError> {
    if spec.couplings.is_empty() || spec.thresholds.is_empty() {
        return Err(ConfigError::invalid("sweep", "coupling and threshold lists must be nonempty").into());
    }
    for &t in &spec.thresholds {
        let mode = if spec.relative { SegmentationMode::RelativeGap(t) } else { SegmentationMode::Gap(t) };
        mode.validate()?;
    }
    let configs: Vec<RunConfig> = spec
        .couplings
        .iter()
        .map(|&c| {
            let mut run = cfg.clone();
            run.coupling.coefficient = c;
            run.validate().map(|_| run)
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<SweepCell>> = par_collect(configs.len(), |i| -> Result<_, HarnessError> {
        let coupling = spec.couplings[i];
        let outcome = simulate(image, configs[i].model, &configs[i].coupling, &configs[i].sim);
        Ok(spec
            .thresholds
            .iter()
            .map(|&threshold| match &outcome {
                Ok(out) => {
                    let mode =
                        if spec.relative { SegmentationMode::RelativeGap(threshold) } else { SegmentationMode::Gap(threshold) };
                    let (labels, abs_threshold) = segment_frequencies(&out.map, mode, cfg.otsu_bins);
                    SweepCell {
                        coupling,
                        threshold,
                        abs_threshold,
                        labels: Some(labels),
                        map_hash: Some(map_hash(&out.map)),
                        status: "ok".into(),
                    }
                }
                Err(e) => SweepCell {
                    coupling,
                    threshold,
                    abs_threshold: None,
                    labels: None,
                    map_hash: None,
                    status: e.to_string().replace([',', '\n'], ";"),
                },
            })
            .collect())
    })?;
    Ok(rows.into_iter().flatten().collect())
}

fn mask_name(index: usize) -> String {
    format!("mask_{index:04}.pgm")
}

/// Columns: `coupling, threshold, abs_threshold, clusters, map_hash, mask,
/// status`. Cells are in coupling-major order; `mask` names the label PGM
/// written for the cell, empty on failure.
pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("coupling,threshold,abs_threshold,clusters,map_hash,mask,status\n");
    for (i, c) in cells.iter().enumerate() {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.coupling,
            c.threshold,
            opt(c.abs_threshold.map(|v| v.to_string())),
            opt(c.clusters().map(|v| v.to_string())),
            opt(c.map_hash.map(|h| format!("{h:016x}"))),
            if c.labels.is_some() { mask_name(i) } else { String::new() },
            c.status
        );
    }
    out
}

pub fn cmd_sweep(cfg: &RunConfig, input: &Path, spec: &SweepSpec, out_dir: &Path) -> Result<Vec<SweepCell>, HarnessError> {
    cfg.validate()?;
    let image = load_image(input)?;
    let cells = sweep(&image, cfg, spec)?;
    create_dir(out_dir)?;
    for (i, cell) in cells.iter().enumerate() {
        if let Some(labels) = &cell.labels {
            write_file(&out_dir.join(mask_name(i)), &labels.to_pgm())?;
        }
    }
    write_file(&out_dir.join("sweep.csv"), sweep_csv(&cells).as_bytes())?;
    Ok(cells)
}

// ------------------------------------------------------------ noise study

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseStudySpec {
    pub variances: Vec<f64>,
    pub trials: usize,
    /// Noise seed per trial; defaults to `base_seed + trial`.
    pub seeds: Option<Vec<u64>>,
    pub base_seed: u64,
}

impl NoiseStudySpec {
    fn seed(&self, trial: usize) -> u64 {
        match &self.seeds {
            Some(s) => s[trial],
            None => self.base_seed.wrapping_add(trial as u64),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.trials == 0 {
            return Err(ConfigError::invalid("trials", "must be >= 1"));
        }
        if self.variances.is_empty() {
            return Err(ConfigError::invalid("variances", "must be nonempty"));
        }
        if self.variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ConfigError::invalid("variances", "must be finite and >= 0"));
        }
        if let Some(s) = &self.seeds {
            if s.len() != self.trials {
                return Err(ConfigError::invalid("seeds", "need exactly one seed per trial"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTrial {
    pub method: &'static str,
    pub variance: f64,
    pub trial: usize,
    pub seed: u64,
    /// Mislabel rate against the method's own noise-free segmentation.
    pub vs_clean: f64,
    /// Mislabel rate against the ground truth, when one is given.
    pub vs_truth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSummary {
    pub method: &'static str,
    pub variance: f64,
    pub trials: usize,
    pub mean_vs_clean: f64,
    pub mean_vs_truth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseStudy {
    /// Method-major, then variance, then trial.
    pub trials: Vec<NoiseTrial>,
}

impl NoiseStudy {
    pub fn summary(&self) -> Vec<NoiseSummary> {
        let mut out: Vec<NoiseSummary> = Vec::new();
        for t in &self.trials {
            match out.last_mut() {
                Some(s) if s.method == t.method && s.variance == t.variance => {
                    s.trials += 1;
                    s.mean_vs_clean += t.vs_clean;
                    s.mean_vs_truth = s.mean_vs_truth.zip(t.vs_truth).map(|(a, b)| a + b);
                }
                _ => out.push(NoiseSummary {
                    method: t.method,
                    variance: t.variance,
                    trials: 1,
                    mean_vs_clean: t.vs_clean,
                    mean_vs_truth: t.vs_truth,
                }),
            }
        }
        for s in &mut out {
            s.mean_vs_clean /= s.trials as f64;
            s.mean_vs_truth = s.mean_vs_truth.map(|v| v / s.trials as f64);
        }
        out
    }

    /// Columns: `method, variance, trial, seed, vs_clean, vs_truth`.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from("method,variance,trial,seed,vs_clean,vs_truth\n");
        for t in &self.trials {
            let truth = t.vs_truth.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", t.method, t.variance, t.trial, t.seed, t.vs_clean, truth);
        }
        out
    }

    /// Columns: `method, variance, trials, mean_vs_clean, mean_vs_truth`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,variance,trials,mean_vs_clean,mean_vs_truth\n");
        for s in self.summary() {
            let truth = s.mean_vs_truth.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", s.method, s.variance, s.trials, s.mean_vs_clean, truth);
        }
        out
    }
}

/// Adds seeded Gaussian noise at each variance and scores every method
/// against its own segmentation of the clean image (and against `truth`).
pub fn noise_study(
    image: &GrayImage,
    truth: Option<&LabelMap>,
    methods: &[Method],
    spec: &NoiseStudySpec,
) -> Result<NoiseStudy, HarnessError> {
    spec.validate()?;
    if methods.is_empty() {
        return Err(ConfigError::invalid("methods", "must be nonempty").into());
    }
    if let Some(t) = truth {
        if t.dims() != image.dims() {
            return Err(SegmentError::DimensionMismatch { left: image.dims(), right: t.dims() }.into());
        }
    }
    let clean: Vec<LabelMap> = par_collect(methods.len(), |m| methods[m].segment(image))?;
    let per_method = spec.variances.len() * spec.trials;
    let trials = par_collect(methods.len() * per_method, |job| -> Result<NoiseTrial, HarnessError> {
        let (m, rest) = (job / per_method, job % per_method);
        let (v, trial) = (rest / spec.trials, rest % spec.trials);
        let (variance, seed) = (spec.variances[v], spec.seed(trial));
        let noisy = add_gaussian_noise(image, &NoiseSpec { variance, seed });
        let labels = methods[m].segment(&noisy)?;
        Ok(NoiseTrial {
            method: methods[m].name(),
            variance,
            trial,
            seed,
            vs_clean: mislabel_rate(&labels, &clean[m])?.mislabeled_fraction,
            vs_truth: truth.map(|t| mislabel_rate(&labels, t)).transpose()?.map(|s| s.mislabeled_fraction),
        })
    })?;
    Ok(NoiseStudy { trials })
}

pub fn cmd_noise_study(
    methods: &[Method],
    input: &Path,
    truth: Option<&Path>,
    spec: &NoiseStudySpec,
    out_dir: &Path,
) -> Result<NoiseStudy, HarnessError> {
    let image = load_image(input)?;
    let truth = truth.map(load_labels).transpose()?;
    let study = noise_study(&image, truth.as_ref(), methods, spec)?;
    create_dir(out_dir)?;
    write_file(&out_dir.join("noise_trials.csv"), study.trials_csv().as_bytes())?;
    write_file(&out_dir.join("noise_summary.csv"), study.summary_csv().as_bytes())?;
    Ok(study)
}

// ---------------------------------------------------------------- compare

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub image: String,
    pub method: &'static str,
    pub mislabeled_fraction: f64,
    pub clusters: usize,
}

/// Scores every method on every `(name, image, reference)` triple.
pub fn compare(cases: &[(String, GrayImage, LabelMap)], methods: &[Method]) -> Result<Vec<CompareRow>, HarnessError> {
    if cases.is_empty() {
        return Err(ConfigError::invalid("images", "at least one image is required").into());
    }
    if methods.is_empty() {
        return Err(ConfigError::invalid("methods", "must be nonempty").into());
    }
    par_collect(cases.len() * methods.len(), |job| -> Result<CompareRow, HarnessError> {
        let ((name, image, reference), method) = (&cases[job / methods.len()], &methods[job % methods.len()]);
        let labels = method.segment(image)?;
        Ok(CompareRow {
            image: name.clone(),
            method: method.name(),
            mislabeled_fraction: mislabel_rate(&labels, reference)?.mislabeled_fraction,
            clusters: labels.num_labels(),
        })
    })
}

/// Columns: `image, method, mislabeled_fraction, clusters`.
pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("image,method,mislabeled_fraction,clusters\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.image.replace(',', "_"), r.method, r.mislabeled_fraction, r.clusters);
    }
    out
}

pub fn cmd_compare(
    methods: &[Method],
    images: &[PathBuf],
    references: &[PathBuf],
    out_dir: &Path,
) -> Result<Vec<CompareRow>, HarnessError> {
    if images.is_empty() {
        return Err(ConfigError::invalid("images", "at least one image is required").into());
    }
    if images.len() != references.len() {
        return Err(ConfigError::invalid("references", "need exactly one reference per image").into());
    }
    let cases = images
        .iter()
        .zip(references)
        .map(|(i, r)| {
            let image = load_image(i)?;
            let reference = load_labels(r)?;
            if reference.dims() != image.dims() {
                return Err(SegmentError::DimensionMismatch { left: image.dims(), right: reference.dims() }.into());
            }
            Ok((i.display().to_string(), image, reference))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let rows = compare(&cases, methods)?;
    create_dir(out_dir)?;
    write_file(&out_dir.join("compare.csv"), compare_csv(&rows).as_bytes())?;
    Ok(rows)
}

// -------------------------------------------------------------- synthetic

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Synthetic {
    Quadrant { side: usize, levels_per_quadrant: usize, seed: u64 },
    TwoRegion { side: usize, a: f64, b: f64 },
}

/// Generates a synthetic image and its ground truth, optionally noisy.
pub fn generate(kind: Synthetic, noise: Option<NoiseSpec>) -> Result<(GrayImage, LabelMap), HarnessError> {
    let (image, truth) = match kind {
        Synthetic::Quadrant { side, levels_per_quadrant, seed } => generate_quadrant_image(side, levels_per_quadrant, seed)?,
        Synthetic::TwoRegion { side, a, b } => {
            if !((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)) {
                return Err(ConfigError::invalid("intensity", "must lie in [0, 1]").into());
            }
            generate_two_region_image(side, a, b)?
        }
    };
    let image = match noise {
        Some(spec) if !(spec.variance.is_finite() && spec.variance >= 0.0) => {
            return Err(ConfigError::invalid("noise_variance", "must be finite and >= 0").into())
        }
        Some(spec) => add_gaussian_noise(&image, &spec),
        None => image,
    };
    Ok((image, truth))
}

/// Writes `image.pgm` and `reference.pgm` into `out_dir`.
pub fn cmd_gen_synthetic(kind: Synthetic, noise: Option<NoiseSpec>, out_dir: &Path) -> Result<(), HarnessError> {
    let (image, truth) = generate(kind, noise)?;
    create_dir(out_dir)?;
    write_file(&out_dir.join("image.pgm"), &write_pgm(&image))?;
    write_file(&out_dir.join("reference.pgm"), &truth.to_pgm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    fn quick(kind: ModelKind) -> RunConfig {
        let mut cfg = RunConfig::for_model(kind);
        cfg.sim.total_time /= 4.0;
        cfg.sim.window /= 4.0;
        cfg
    }

    #[test]
    fn relative_gap_scales_with_mean() {
        let map = FrequencyMap::new(4, 1, vec![1.0, 1.05, 2.0, 0.0], {
            use NodeStatus::*;
            vec![Ok, Ok, Ok, NonOscillating]
        })
        .unwrap();
        let (labels, gap) = segment_frequencies(&map, SegmentationMode::RelativeGap(0.1), 256);
        assert!((gap.unwrap() - 0.1 * 4.05 / 3.0).abs() < 1e-15);
        assert_eq!(labels.labels(), &[0, 0, 1, 0]);
    }

    #[test]
    fn degenerate_maps_get_one_label() {
        let flat = FrequencyMap::new(3, 1, vec![0.5; 3], vec![NodeStatus::Ok; 3]).unwrap();
        assert_eq!(segment_frequencies(&flat, SegmentationMode::OtsuBinary, 256), (zeros((3, 1)), None));
        let silent = FrequencyMap::new(2, 1, vec![0.0; 2], vec![NodeStatus::NonOscillating; 2]).unwrap();
        for mode in [SegmentationMode::Gap(0.1), SegmentationMode::RelativeGap(0.1), SegmentationMode::OtsuBinary] {
            assert_eq!(segment_frequencies(&silent, mode, 256).0, zeros((2, 1)));
        }
    }

    #[test]
    fn error_codes() {
        assert_eq!(HarnessError::from(ConfigError::invalid("x", "y")).exit_code(), 2);
        assert_eq!(HarnessError::from(SimError::NumericalBlowup { row: 0, col: 0, time: 1.0 }).exit_code(), 3);
        assert_eq!(HarnessError::from(SimError::Config(ConfigError::invalid("x", "y"))).exit_code(), 2);
        let io = HarnessError::io(Path::new("a"), std::io::Error::other("boom"));
        assert_eq!(io.exit_code(), 4);
    }

    #[test]
    fn sweep_shares_map_per_coupling() {
        let (image, _) = generate_quadrant_image(8, 16, 0).unwrap();
        let spec = SweepSpec { couplings: vec![0.0, 0.2], thresholds: vec![0.01, 0.05, 0.2], relative: false };
        let cells = sweep(&image, &quick(ModelKind::Bz), &spec).unwrap();
        assert_eq!(cells.len(), 6);
        for row in cells.chunks(3) {
            assert!(row.iter().all(|c| c.map_hash == row[0].map_hash && c.status == "ok"));
            assert!(row.windows(2).all(|w| w[0].clusters() >= w[1].clusters()));
        }
        assert_ne!(cells[0].map_hash, cells[3].map_hash);
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let (image, _) = generate_two_region_image(4, 0.2, 0.8).unwrap();
        let mut cfg = quick(ModelKind::Mems);
        cfg.model = crate::models::ModelConfig::Mems(crate::models::MemsParams {
            damping_c: -1.0,
            nonlinear_d: 1.0,
            ..crate::models::MemsParams::experiment()
        });
        let spec = SweepSpec { couplings: vec![0.0, 50.0], thresholds: vec![0.01], relative: false };
        let cells = sweep(&image, &cfg, &spec).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].status, "ok");
        assert!(cells[1].status.contains("blowup"), "{}", cells[1].status);
        let csv = sweep_csv(&cells);
        assert_eq!(csv.lines().nth(2).unwrap().split(',').count(), 7);
    }

    #[test]
    fn sweep_rejects_empty_lists() {
        let (image, _) = generate_two_region_image(4, 0.2, 0.8).unwrap();
        let spec = SweepSpec { couplings: vec![], thresholds: vec![0.1], relative: false };
        assert_eq!(sweep(&image, &quick(ModelKind::Bz), &spec).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn noise_study_zero_variance_and_repeat_seeds() {
        let (image, truth) = generate_two_region_image(8, 0.3, 0.7).unwrap();
        let methods = [Method::Oscillator(Box::new(quick(ModelKind::Mems))), Method::Otsu { bins: 256 }];
        let spec = NoiseStudySpec { variances: vec![0.0, 0.02], trials: 2, seeds: Some(vec![9, 9]), base_seed: 0 };
        let study = noise_study(&image, Some(&truth), &methods, &spec).unwrap();
        assert_eq!(study.trials.len(), 8);
        for t in study.trials.iter().filter(|t| t.variance == 0.0) {
            assert_eq!(t.vs_clean, 0.0);
        }
        for pair in study.trials.chunks(2) {
            assert_eq!((pair[0].vs_clean, pair[0].vs_truth), (pair[1].vs_clean, pair[1].vs_truth));
        }
        let summary = study.summary();
        assert_eq!(summary.len(), 4);
        assert!(summary.iter().all(|s| s.trials == 2));
        assert_eq!(study.summary_csv().lines().count(), 5);
    }

    #[test]
    fn noise_study_validates() {
        let (image, _) = generate_two_region_image(4, 0.3, 0.7).unwrap();
        let methods = [Method::Otsu { bins: 256 }];
        let bad = [
            NoiseStudySpec { variances: vec![0.01], trials: 0, seeds: None, base_seed: 0 },
            NoiseStudySpec { variances: vec![], trials: 1, seeds: None, base_seed: 0 },
            NoiseStudySpec { variances: vec![-0.1], trials: 1, seeds: None, base_seed: 0 },
            NoiseStudySpec { variances: vec![0.01], trials: 2, seeds: Some(vec![1]), base_seed: 0 },
        ];
        for spec in bad {
            assert!(noise_study(&image, None, &methods, &spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn compare_otsu_self_consistency() {
        let (image, _) = generate_quadrant_image(8, 16, 3).unwrap();
        let (reference, _) = segment_intensity(&image, 256);
        let rows = compare(&[("q".into(), image, reference)], &[Method::Otsu { bins: 256 }]).unwrap();
        assert_eq!(rows[0].mislabeled_fraction, 0.0);
        assert!(compare(&[], &[Method::Otsu { bins: 256 }]).is_err());
    }
}
