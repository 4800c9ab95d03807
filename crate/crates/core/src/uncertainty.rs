//! Entropy maps, entropy histograms, primary-peak thresholding, and global
//! aleatoric uncertainty aggregation (GAUA).
//!
//! A slice's score is the mean pixel entropy over pixels whose entropy lies
//! strictly above the centre of the histogram's primary (lowest-entropy)
//! local peak. The confident background mass sits in that peak, so it is
//! excluded rather than allowed to drag the whole-image mean towards zero.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{ensemble_predict, AugConfig};
use crate::error::{Error, Result};
use crate::scalar::{xlnx, Scalar};
use crate::segmenter::ProbModel;
use crate::tensorio::{write_tensor, DatasetManifest, SliceEntry, Tensor};

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Per-pixel entropy in nats; values lie in `[0, ln C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap<T> {
    pub values: Tensor<T>,
    pub max_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyHistogram {
    pub bin_count: usize,
    pub counts: Vec<u64>,
    /// `bin_count + 1` ascending edges spanning `[0, ln C]`.
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl EntropyHistogram {
    pub fn bin_center(&self, bin: usize) -> f64 {
        0.5 * (self.bin_edges[bin] + self.bin_edges[bin + 1])
    }

    /// Builds a histogram directly from densities (edges over `[0, max]`).
    pub fn from_densities(densities: Vec<f64>, max_entropy: f64) -> Self {
        let n = densities.len();
        Self {
            bin_count: n,
            counts: vec![0; n],
            bin_edges: edges(n, max_entropy),
            densities,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakThreshold {
    pub threshold_entropy: f64,
    pub peak_bin: usize,
    pub delta_used: f64,
    /// No interior peak satisfied both difference conditions; the global
    /// density maximum was used instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceUncertainty {
    pub slice_id: String,
    /// GAUA score in nats.
    pub u: f64,
    pub threshold: PeakThreshold,
    pub pixels_above: usize,
    /// Whole-image mean entropy (the naive aggregate).
    pub mean_entropy: f64,
    /// Mean over pixels of the max-class probability, when the probability
    /// map was available.
    pub mean_confidence: Option<f64>,
}

pub fn entropy_map<T: Scalar>(p: &Tensor<T>) -> Result<EntropyMap<T>> {
    let (c, h, w) = match *p.dims() {
        [c, h, w] if c >= 2 => (c, h, w),
        _ => return Err(Error::Shape(format!("expected C×H×W probabilities, got {:?}", p.dims()))),
    };
    let hw = h * w;
    let d = p.data();
    let values = Tensor::from_fn(vec![h, w], |j| {
        let s: T = (0..c).map(|ci| xlnx(d[ci * hw + j])).sum();
        // -0.0 from a single zero term would be harmless, but keep the map non-negative
        (-s).max(T::zero())
    })?;
    Ok(EntropyMap {
        values,
        max_entropy: (c as f64).ln(),
    })
}

fn edges(bins: usize, max: f64) -> Vec<f64> {
    (0..=bins).map(|i| max * i as f64 / bins as f64).collect()
}

/// Bin of `v` among uniform bins over `[0, max]`; an interior edge belongs
/// to the bin above it and `max` to the last bin.
fn bin_of(v: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    let max = edges[bins];
    if v <= 0.0 {
        return 0;
    }
    if v >= max {
        return bins - 1;
    }
    let mut i = ((v / max) * bins as f64).floor() as usize;
    i = i.min(bins - 1);
    while i + 1 < bins && v >= edges[i + 1] {
        i += 1;
    }
    while i > 0 && v < edges[i] {
        i -= 1;
    }
    i
}

pub fn histogram<T: Scalar>(e: &EntropyMap<T>, bins: usize) -> Result<EntropyHistogram> {
    if bins < 2 {
        return Err(Error::Config(format!("histogram needs >= 2 bins, got {bins}")));
    }
    let bin_edges = edges(bins, e.max_entropy);
    let mut counts = vec![0u64; bins];
    for &v in e.values.data() {
        counts[bin_of(v.as_f64(), &bin_edges)] += 1;
    }
    let total = e.values.len() as f64;
    let densities = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(EntropyHistogram {
        bin_count: bins,
        counts,
        bin_edges,
        densities,
    })
}

/// Locates the primary local peak of the entropy density.
///
/// With `d` the densities, `Δd[n] = d[n+1] - d[n]` and
/// `Δ²d[n] = d[n+1] - 2d[n] + d[n-1]`, a bin `n` in `1..=N-2` is a candidate
/// when `|Δd[n]| < δ` and `Δ²d[n] < 0`, where `δ = epsilon · max|Δd|`. The
/// lowest candidate wins; without candidates the first density maximum is
/// used and `fallback` is set.
pub fn primary_peak_threshold(h: &EntropyHistogram, epsilon: f64) -> PeakThreshold {
    let d = &h.densities;
    let n = d.len();
    let first_diff: Vec<f64> = d.windows(2).map(|w| w[1] - w[0]).collect();
    let delta = epsilon * first_diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let candidate = (1..n.saturating_sub(1))
        .find(|&i| first_diff[i].abs() < delta && d[i + 1] - 2.0 * d[i] + d[i - 1] < 0.0);
    let (peak_bin, fallback) = match candidate {
        Some(i) => (i, false),
        None => {
            let mut best = 0;
            for (i, &v) in d.iter().enumerate() {
                if v > d[best] {
                    best = i;
                }
            }
            (best, true)
        }
    };
    PeakThreshold {
        threshold_entropy: h.bin_center(peak_bin),
        peak_bin,
        delta_used: delta,
        fallback,
    }
}

/// Mean entropy over pixels strictly above the threshold, falling back to
/// the whole-image mean when no pixel qualifies.
pub fn gaua<T: Scalar>(slice_id: &str, e: &EntropyMap<T>, t: PeakThreshold) -> SliceUncertainty {
    // summing in sorted order makes the score independent of pixel order
    let mut values: Vec<f64> = e.values.data().iter().map(|v| v.as_f64()).collect();
    values.sort_by(f64::total_cmp);
    let sum_all: f64 = values.iter().sum();
    let first_above = values.partition_point(|&v| v <= t.threshold_entropy);
    let n_above = values.len() - first_above;
    let sum_above: f64 = values[first_above..].iter().sum();
    let mean_entropy = sum_all / values.len() as f64;
    let u = if n_above > 0 {
        sum_above / n_above as f64
    } else {
        mean_entropy
    };
    SliceUncertainty {
        slice_id: slice_id.to_string(),
        u: u.clamp(0.0, e.max_entropy),
        threshold: t,
        pixels_above: n_above,
        mean_entropy,
        mean_confidence: None,
    }
}

/// Mean over pixels of the largest class probability.
pub fn mean_confidence<T: Scalar>(p: &Tensor<T>) -> f64 {
    let c = p.dims()[0];
    let hw = p.len() / c;
    let d = p.data();
    (0..hw)
        .map(|j| (0..c).map(|ci| d[ci * hw + j].as_f64()).fold(f64::MIN, f64::max))
        .sum::<f64>()
        / hw as f64
}

/// Score settings: ensemble augmentation plus histogram parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub aug: AugConfig,
    pub bins: usize,
    pub epsilon: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            aug: AugConfig::default(),
            bins: DEFAULT_BINS,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Full uncertainty pipeline on one ensemble probability map.
pub fn score_prob<T: Scalar>(
    slice_id: &str,
    prob: &Tensor<T>,
    bins: usize,
    epsilon: f64,
) -> Result<SliceUncertainty> {
    let e = entropy_map(prob)?;
    let h = histogram(&e, bins)?;
    let t = primary_peak_threshold(&h, epsilon);
    let mut s = gaua(slice_id, &e, t);
    s.mean_confidence = Some(mean_confidence(prob));
    Ok(s)
}

/// Test-time-augmentation ensemble for one manifest slice (image only).
pub fn ensemble_slice<T: Scalar, M: ProbModel<T> + ?Sized>(
    model: &M,
    manifest: &DatasetManifest,
    entry: &SliceEntry,
    aug: &AugConfig,
) -> Result<Tensor<T>> {
    let image: Tensor<T> = manifest.load_image(entry)?.cast();
    let plan = aug.plan_for(&entry.id)?;
    ensemble_predict(model, &image, &plan).map_err(|e| e.in_slice(&entry.id))
}

#[derive(Debug, Clone)]
pub struct ScoredDataset<T> {
    pub records: Vec<SliceUncertainty>,
    /// Ensemble probabilities, in manifest order.
    pub probs: Vec<Tensor<T>>,
}

/// Scores every slice of `manifest` in manifest order.
pub fn score_dataset<T: Scalar, M: ProbModel<T> + ?Sized>(
    model: &M,
    manifest: &DatasetManifest,
    cfg: &ScoringConfig,
) -> Result<ScoredDataset<T>> {
    cfg.aug.validate()?;
    if model.num_classes() != manifest.num_classes {
        return Err(Error::Model(format!(
            "model has {} classes, manifest {}",
            model.num_classes(),
            manifest.num_classes
        )));
    }
    let mut records = Vec::with_capacity(manifest.len());
    let mut probs = Vec::with_capacity(manifest.len());
    for entry in &manifest.slices {
        let prob = ensemble_slice(model, manifest, entry, &cfg.aug)?;
        records.push(score_prob(&entry.id, &prob, cfg.bins, cfg.epsilon).map_err(|e| e.in_slice(&entry.id))?);
        probs.push(prob);
    }
    Ok(ScoredDataset { records, probs })
}

/// Writes `<slice_id>.prob.ugts` for each probability map.
pub fn persist_probs<T: Scalar>(dir: impl AsRef<Path>, ids: &[String], probs: &[Tensor<T>]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, p) in ids.iter().zip(probs) {
        write_tensor(dir.join(format!("{id}.prob.ugts")), &p.map(|v| v.as_f32()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    slice_id: &'a str,
    u: f64,
    threshold_entropy: f64,
    peak_bin: usize,
    fallback: bool,
    pixels_above: usize,
}

/// Audit CSV: `slice_id,u,threshold_entropy,peak_bin,fallback,pixels_above`.
pub fn write_scores_csv(path: impl AsRef<Path>, records: &[SliceUncertainty]) -> Result<()> {
    let path = path.as_ref();
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in records {
        w.serialize(ScoreRow {
            slice_id: &r.slice_id,
            u: r.u,
            threshold_entropy: r.threshold.threshold_entropy,
            peak_bin: r.threshold.peak_bin,
            fallback: r.threshold.fallback,
            pixels_above: r.pixels_above,
        })
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
