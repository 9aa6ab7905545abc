//! Precision-recall evaluation over 256 thresholds, PR/ROC area, F-measure,
//! dataset runs and connectivity benchmarks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{NerdError, Result};
use crate::imaging::{load_image, Image};
use crate::neural::MacCount;
use crate::pipeline::{Detector, PipelineConfig, StageTimings};
use crate::salience::SaliencyMap;

pub const THRESHOLDS: usize = 256;
pub const DEFAULT_BETA2: f64 = 0.3;

/// Binary ground truth, 1 = salient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl GroundTruthMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(NerdError::DimensionMismatch(format!(
                "{} labels for {width}x{height}",
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(NerdError::InvalidArgument(
                "mask labels must be 0 or 1".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(u8::from(f(x, y)));
            }
        }
        Self {
            width,
            height,
            labels,
        }
    }

    /// Loads a mask image; any pixel at or above half intensity (first
    /// channel) is positive.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = load_image(path)?;
        let c = img.channels();
        let labels = img
            .data()
            .chunks_exact(c)
            .map(|p| u8::from(p[0] >= 0.5))
            .collect();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            labels,
        })
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: u32,
    pub precision: f64,
    pub recall: f64,
}

/// One point per integer threshold `0..=255`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// Per-threshold confusion counts `(tp, fp)`; index `t` counts pixels with
/// `map * 255 >= t`.
fn cumulative_counts(map: &SaliencyMap, gt: &GroundTruthMask) -> Vec<(u64, u64)> {
    let mut pos = [0u64; THRESHOLDS];
    let mut neg = [0u64; THRESHOLDS];
    for (&v, &l) in map.values.iter().zip(&gt.labels) {
        // floor(v * 255) >= t  <=>  v * 255 >= t for integer t.
        let bucket = ((v * 255.0).floor().clamp(0.0, 255.0)) as usize;
        if l == 1 {
            pos[bucket] += 1;
        } else {
            neg[bucket] += 1;
        }
    }
    let mut out = vec![(0, 0); THRESHOLDS];
    let (mut tp, mut fp) = (0, 0);
    for t in (0..THRESHOLDS).rev() {
        tp += pos[t];
        fp += neg[t];
        out[t] = (tp, fp);
    }
    out
}

fn check_pair(map: &SaliencyMap, gt: &GroundTruthMask) -> Result<()> {
    if map.width != gt.width || map.height != gt.height {
        return Err(NerdError::DimensionMismatch(format!(
            "map {}x{} vs ground truth {}x{}",
            map.width, map.height, gt.width, gt.height
        )));
    }
    if gt.positives() == 0 {
        return Err(NerdError::EmptyGroundTruth);
    }
    Ok(())
}

/// Binarizes at `map * 255 >= t` for every `t` in `0..=255`. Precision is 1
/// when nothing is predicted positive.
pub fn pr_curve(map: &SaliencyMap, gt: &GroundTruthMask) -> Result<PrCurve> {
    check_pair(map, gt)?;
    let total_pos = gt.positives() as f64;
    let points = cumulative_counts(map, gt)
        .into_iter()
        .enumerate()
        .map(|(t, (tp, fp))| PrPoint {
            threshold: t as u32,
            precision: if tp + fp == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp) as f64
            },
            recall: tp as f64 / total_pos,
        })
        .collect();
    Ok(PrCurve { points })
}

/// Trapezoidal area under precision(recall). Points are sorted by recall and
/// the curve is extended to recall 0 at its maximum precision. Thresholds
/// that predict nothing (recall 0, conventional precision 1) carry no
/// measurement and are left out, so a constant map scores its positive
/// fraction whatever its level.
pub fn auc(curve: &PrCurve) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter(|p| !(p.recall == 0.0 && p.precision == 1.0))
        .map(|p| (p.recall, p.precision))
        .collect();
    if pts.is_empty() {
        // Only empty predictions: a flat curve at precision 1.
        return if curve.points.is_empty() { 0.0 } else { 1.0 };
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let max_p = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut area = 0.0;
    let mut prev = (0.0, max_p);
    for &(r, p) in &pts {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    area.clamp(0.0, 1.0)
}

/// Area under the ROC curve over the same 256 thresholds, anchored at (0,0)
/// and (1,1). 1 when the ground truth has no negatives.
pub fn roc_auc(map: &SaliencyMap, gt: &GroundTruthMask) -> Result<f64> {
    check_pair(map, gt)?;
    let pos = gt.positives() as f64;
    let neg = (gt.labels.len() - gt.positives()) as f64;
    if neg == 0.0 {
        return Ok(1.0);
    }
    let mut pts: Vec<(f64, f64)> = cumulative_counts(map, gt)
        .into_iter()
        .map(|(tp, fp)| (fp as f64 / neg, tp as f64 / pos))
        .collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

/// `(1 + b2) P R / (b2 P + R)`, or 0 when the denominator vanishes.
pub fn f_measure(precision: f64, recall: f64, beta2: f64) -> f64 {
    let denom = beta2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / denom
    }
}

pub fn max_f_measure(curve: &PrCurve, beta2: f64) -> f64 {
    curve
        .points
        .iter()
        .map(|p| f_measure(p.precision, p.recall, beta2))
        .fold(0.0, f64::max)
}

/// Pointwise mean of several curves over the shared thresholds.
pub fn mean_curve(curves: &[PrCurve]) -> PrCurve {
    let n = curves.len().max(1) as f64;
    let points = (0..THRESHOLDS)
        .map(|t| PrPoint {
            threshold: t as u32,
            precision: curves.iter().map(|c| c.points[t].precision).sum::<f64>() / n,
            recall: curves.iter().map(|c| c.points[t].recall).sum::<f64>() / n,
        })
        .collect();
    PrCurve { points }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub file: String,
    pub auc_pr: f64,
    pub auc_roc: f64,
    pub max_f: f64,
    pub seconds: f64,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by file name.
    pub images: Vec<ImageResult>,
    /// `(file, reason)` for pairs that could not be evaluated.
    pub failures: Vec<(String, String)>,
    pub mean_curve: PrCurve,
}

impl EvalReport {
    pub fn mean_auc(&self) -> f64 {
        mean(self.images.iter().map(|r| r.auc_pr))
    }

    /// Per-image rows plus a final `MEAN` row. With `timing = false` the
    /// seconds column is left empty so the file depends only on the inputs.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("file,auc_pr,auc_roc,max_f,seconds\n");
        let secs = |s: f64| {
            if timing {
                format!("{s:.6}")
            } else {
                String::new()
            }
        };
        for r in &self.images {
            writeln!(
                out,
                "{},{:.9},{:.9},{:.9},{}",
                r.file,
                r.auc_pr,
                r.auc_roc,
                r.max_f,
                secs(r.seconds)
            )
            .unwrap();
        }
        writeln!(
            out,
            "MEAN,{:.9},{:.9},{:.9},{}",
            self.mean_auc(),
            mean(self.images.iter().map(|r| r.auc_roc)),
            mean(self.images.iter().map(|r| r.max_f)),
            secs(mean(self.images.iter().map(|r| r.seconds)))
        )
        .unwrap();
        out
    }
}

pub fn curve_csv(curve: &PrCurve) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in &curve.points {
        writeln!(out, "{},{:.9},{:.9}", p.threshold, p.precision, p.recall).unwrap();
    }
    out
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    Ok(files)
}

fn find_mask(gt_dir: &Path, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .flat_map(|e| [e.to_string(), e.to_ascii_uppercase()])
        .map(|e| gt_dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

fn evaluate_one<F>(image_path: &Path, gt_dir: &Path, detect: &F) -> Result<ImageResult>
where
    F: Fn(&Image) -> Result<SaliencyMap>,
{
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let mask_path = find_mask(gt_dir, stem)
        .ok_or_else(|| NerdError::MissingFile(gt_dir.join(format!("{stem}.*"))))?;
    let image = load_image(image_path)?;
    let gt = GroundTruthMask::load(&mask_path)?;
    if gt.width != image.width() || gt.height != image.height() {
        return Err(NerdError::DimensionMismatch(format!(
            "image {}x{} vs mask {}x{}",
            image.width(),
            image.height(),
            gt.width,
            gt.height
        )));
    }
    let t = Instant::now();
    let map = detect(&image)?;
    let seconds = t.elapsed().as_secs_f64();
    let curve = pr_curve(&map, &gt)?;
    Ok(ImageResult {
        file: image_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        auc_pr: auc(&curve),
        auc_roc: roc_auc(&map, &gt)?,
        max_f: max_f_measure(&curve, DEFAULT_BETA2),
        seconds,
        curve,
    })
}

/// Runs `detect` on every image in `images` paired with a same-stem mask in
/// `gts`. Per-file failures are collected and the run continues. Results are
/// ordered by file name regardless of `jobs`.
pub fn evaluate_with<F>(images: &Path, gts: &Path, jobs: usize, detect: F) -> Result<EvalReport>
where
    F: Fn(&Image) -> Result<SaliencyMap> + Sync,
{
    let files = list_images(images)?;
    if !gts.is_dir() {
        return Err(NerdError::MissingFile(gts.to_path_buf()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| NerdError::InvalidArgument(e.to_string()))?;
    let results: Vec<(String, Result<ImageResult>)> = pool.install(|| {
        files
            .par_iter()
            .map(|p| {
                let name = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                (name, evaluate_one(p, gts, &detect))
            })
            .collect()
    });
    let mut report = EvalReport {
        images: Vec::new(),
        failures: Vec::new(),
        mean_curve: PrCurve { points: Vec::new() },
    };
    for (name, r) in results {
        match r {
            Ok(res) => report.images.push(res),
            Err(e) => report.failures.push((name, e.to_string())),
        }
    }
    let curves: Vec<PrCurve> = report.images.iter().map(|r| r.curve.clone()).collect();
    report.mean_curve = mean_curve(&curves);
    Ok(report)
}

/// [`evaluate_with`] using the full pipeline.
pub fn evaluate_dataset(
    images: &Path,
    gts: &Path,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<EvalReport> {
    let detector = Detector::new(cfg.clone())?;
    evaluate_with(images, gts, jobs, |img| Ok(detector.detect(img)?.map))
}

/// Median stage timings and MAC counts at one connectivity level.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub image_id: String,
    pub connectivity: f64,
    pub macs: MacCount,
    pub stages: Vec<(&'static str, f64)>,
}

impl BenchReport {
    pub fn stage_seconds(&self, stage: &str) -> Option<f64> {
        self.stages
            .iter()
            .find(|(s, _)| *s == stage)
            .map(|(_, t)| *t)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

pub const MIN_BENCH_REPETITIONS: usize = 5;

/// Times the pipeline at each connectivity level with the same weights and
/// mask seed. One untimed warm-up run precedes `repetitions` (at least 5)
/// timed runs; medians are reported. Runs are strictly sequential.
pub fn bench_pipeline(
    image: &Image,
    image_id: &str,
    cfg: &PipelineConfig,
    connectivities: &[f64],
    repetitions: usize,
) -> Result<Vec<BenchReport>> {
    if connectivities.is_empty() {
        return Err(NerdError::InvalidArgument(
            "no connectivity levels given".into(),
        ));
    }
    let reps = repetitions.max(MIN_BENCH_REPETITIONS);
    let base = cfg.build_bank()?;
    let mut reports = Vec::with_capacity(connectivities.len());
    for &p in connectivities {
        let bank = base.with_connectivity(p, cfg.bank_seed())?;
        let detector = Detector::with_bank(
            PipelineConfig {
                connectivity: p,
                ..cfg.clone()
            },
            bank,
        )?;
        let warm = detector.detect(image)?;
        let mut samples: Vec<StageTimings> = Vec::with_capacity(reps);
        for _ in 0..reps {
            samples.push(detector.detect(image)?.timings);
        }
        let stages = StageTimings::default()
            .named()
            .iter()
            .enumerate()
            .map(|(i, (name, _))| {
                let xs = samples
                    .iter()
                    .map(|s| s.named()[i].1.as_secs_f64())
                    .collect();
                (*name, median(xs))
            })
            .collect();
        reports.push(BenchReport {
            image_id: image_id.to_string(),
            connectivity: p,
            macs: warm.macs,
            stages,
        });
    }
    Ok(reports)
}

pub fn bench_csv(reports: &[BenchReport]) -> String {
    let mut out = String::from("p,stage,macs_actual,macs_dense,seconds_median\n");
    for r in reports {
        for (stage, secs) in &r.stages {
            writeln!(
                out,
                "{},{},{},{},{:.6}",
                r.connectivity, stage, r.macs.actual, r.macs.dense, secs
            )
            .unwrap();
        }
    }
    out
}
