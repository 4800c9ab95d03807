//! Segmentation metrics: Dice, pooled 95th-percentile Hausdorff distance,
//! largest-connected-component filtering, and per-case evaluation.
//!
//! Masks are `Tensor<u8>` of rank 2 or 3; any non-zero voxel is foreground.
//! Spacing is isotropic and unitless.

use std::collections::VecDeque;
use std::marker::PhantomData;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{ensemble_predict, AugConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segmenter::{argmax_labels, ProbModel};
use crate::tensorio::{DatasetManifest, SliceEntry, Tensor};

pub const HD_PERCENTILE: f64 = 0.95;

fn check_dims(a: &Tensor<u8>, b: &Tensor<u8>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("mask dims differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    if !(2..=3).contains(&a.rank()) {
        return Err(Error::Shape(format!("masks must be 2D or 3D, got {:?}", a.dims())));
    }
    Ok(())
}

/// `2|P∩G| / (|P|+|G|)`, or 1 when both masks are empty.
pub fn dsc(pred: &Tensor<u8>, gt: &Tensor<u8>) -> Result<f64> {
    check_dims(pred, gt)?;
    let (mut p, mut g, mut both) = (0u64, 0u64, 0u64);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        let (a, b) = (a != 0, b != 0);
        p += a as u64;
        g += b as u64;
        both += (a && b) as u64;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

/// Dims padded to `(D, H, W)`.
fn dhw(m: &Tensor<u8>) -> [usize; 3] {
    match *m.dims() {
        [h, w] => [1, h, w],
        [d, h, w] => [d, h, w],
        _ => unreachable!("rank checked by callers"),
    }
}

fn neighbours(dims: [usize; 3], planar: bool, idx: usize) -> impl Iterator<Item = Option<usize>> {
    let [d, h, w] = dims;
    let (z, y, x) = (idx / (h * w), (idx / w) % h, idx % w);
    let steps: &[(isize, isize, isize)] = if planar {
        &[(0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
    } else {
        &[(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
    };
    steps.iter().map(move |&(dz, dy, dx)| {
        let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
        if nz < 0 || ny < 0 || nx < 0 || nz >= d as isize || ny >= h as isize || nx >= w as isize {
            None
        } else {
            Some((nz as usize * h + ny as usize) * w + nx as usize)
        }
    })
}

/// Foreground voxels with a background (or out-of-image) face neighbour.
fn boundary(m: &Tensor<u8>) -> Vec<[f64; 3]> {
    let dims = dhw(m);
    let planar = m.rank() == 2;
    let [_, h, w] = dims;
    let d = m.data();
    (0..d.len())
        .filter(|&i| d[i] != 0 && neighbours(dims, planar, i).any(|n| n.is_none_or(|j| d[j] == 0)))
        .map(|i| [(i / (h * w)) as f64, ((i / w) % h) as f64, (i % w) as f64])
        .collect()
}

fn directed(from: &[[f64; 3]], to: &[[f64; 3]], pool: &mut Vec<f64>) {
    for a in from {
        let best = to
            .iter()
            .map(|b| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2))
            .fold(f64::INFINITY, f64::min);
        pool.push(best.sqrt());
    }
}

/// Linear interpolation between order statistics at `q·(n−1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hd95 {
    pub value: f64,
    /// Set when exactly one mask is empty; `value` is then the image diagonal.
    pub is_sentinel: bool,
}

/// Pooled symmetric 95th-percentile boundary distance.
pub fn hd95(pred: &Tensor<u8>, gt: &Tensor<u8>) -> Result<Hd95> {
    check_dims(pred, gt)?;
    let bp = boundary(pred);
    let bg = boundary(gt);
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => Ok(Hd95 {
            value: 0.0,
            is_sentinel: false,
        }),
        (true, false) | (false, true) => Ok(Hd95 {
            value: pred.dims().iter().map(|&n| (n * n) as f64).sum::<f64>().sqrt(),
            is_sentinel: true,
        }),
        (false, false) => {
            let mut pool = Vec::with_capacity(bp.len() + bg.len());
            directed(&bp, &bg, &mut pool);
            directed(&bg, &bp, &mut pool);
            pool.sort_by(f64::total_cmp);
            Ok(Hd95 {
                value: percentile(&pool, HD_PERCENTILE),
                is_sentinel: false,
            })
        }
    }
}

/// Keeps only the largest face-connected foreground component (4-connected in
/// 2D, 6-connected in 3D). Ties go to the component met first in raster order.
pub fn largest_component(mask: &Tensor<u8>) -> Result<Tensor<u8>> {
    if !(2..=3).contains(&mask.rank()) {
        return Err(Error::Shape(format!("masks must be 2D or 3D, got {:?}", mask.dims())));
    }
    let dims = dhw(mask);
    let planar = mask.rank() == 2;
    let d = mask.data();
    let mut label = vec![0u32; d.len()];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..d.len() {
        if d[start] == 0 || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for j in neighbours(dims, planar, i).flatten() {
                if d[j] != 0 && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    let out = label.iter().map(|&l| (l != 0 && l == best.0) as u8).collect();
    Tensor::new(mask.dims().to_vec(), out)
}

/// Produces a hard label map for one evaluation slice.
pub trait SlicePredictor {
    fn predict_labels(&self, manifest: &DatasetManifest, entry: &SliceEntry) -> Result<Tensor<u8>>;
}

/// Model predictions, through the test-time ensemble or a single pass.
pub struct ModelPredictor<'a, M, T = f32> {
    model: &'a M,
    aug: Option<AugConfig>,
    _scalar: PhantomData<T>,
}

impl<'a, M, T> ModelPredictor<'a, M, T> {
    /// `aug = None` evaluates with a single forward pass.
    pub fn new(model: &'a M, aug: Option<AugConfig>) -> Self {
        Self {
            model,
            aug,
            _scalar: PhantomData,
        }
    }
}

impl<M: ProbModel<T>, T: Scalar> SlicePredictor for ModelPredictor<'_, M, T> {
    fn predict_labels(&self, manifest: &DatasetManifest, entry: &SliceEntry) -> Result<Tensor<u8>> {
        let image: Tensor<T> = manifest.load_image(entry)?.cast();
        let prob = match &self.aug {
            Some(aug) => ensemble_predict(self.model, &image, &aug.plan_for(&entry.id)?)?,
            None => self.model.predict(&image)?,
        };
        argmax_labels(&prob)
    }
}

/// Labels read from another manifest, matched by slice id.
pub struct ManifestPredictor<'a>(pub &'a DatasetManifest);

impl SlicePredictor for ManifestPredictor<'_> {
    fn predict_labels(&self, _: &DatasetManifest, entry: &SliceEntry) -> Result<Tensor<u8>> {
        let pos = self
            .0
            .position(&entry.id)
            .ok_or_else(|| Error::Manifest(format!("no prediction for slice {}", entry.id)))?;
        self.0.load_label(&self.0.slices[pos])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub case_id: String,
    pub dsc: f64,
    pub hd95: f64,
    pub hd95_is_sentinel: bool,
    pub num_slices: usize,
    /// 2D Dice per slice (before 3D component filtering), in slice order.
    pub slice_dsc: Vec<f64>,
}

fn stack(slices: &[Tensor<u8>]) -> Result<Tensor<u8>> {
    let (h, w) = slices[0].plane();
    let mut data = Vec::with_capacity(slices.len() * h * w);
    for s in slices {
        if s.plane() != (h, w) {
            return Err(Error::Shape("slices of a case differ in size".into()));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(vec![slices.len(), h, w], data)
}

fn foreground(m: &Tensor<u8>) -> Tensor<u8> {
    m.map(|&v| (v != 0) as u8)
}

/// Per-case 3D evaluation: predict each slice, stack in slice order, keep the
/// largest 6-connected component, then score Dice and HD95.
pub fn evaluate_cases<P: SlicePredictor + ?Sized>(predictor: &P, manifest: &DatasetManifest) -> Result<Vec<EvalResult>> {
    let mut out = Vec::new();
    for (case_id, idx) in manifest.cases() {
        let mut preds = Vec::with_capacity(idx.len());
        let mut gts = Vec::with_capacity(idx.len());
        let mut slice_dsc = Vec::with_capacity(idx.len());
        for &i in &idx {
            let entry = &manifest.slices[i];
            if entry.label.is_none() {
                return Err(Error::Manifest(format!("evaluation slice {} has no label", entry.id)));
            }
            let gt = foreground(&manifest.load_label(entry)?);
            let pred = foreground(&predictor.predict_labels(manifest, entry).map_err(|e| e.in_slice(&entry.id))?);
            slice_dsc.push(dsc(&pred, &gt).map_err(|e| e.in_slice(&entry.id))?);
            preds.push(pred);
            gts.push(gt);
        }
        let pred = largest_component(&stack(&preds)?)?;
        let gt = stack(&gts)?;
        let h = hd95(&pred, &gt)?;
        out.push(EvalResult {
            case_id,
            dsc: dsc(&pred, &gt)?,
            hd95: h.value,
            hd95_is_sentinel: h.is_sentinel,
            num_slices: idx.len(),
            slice_dsc,
        });
    }
    Ok(out)
}

/// Mean case Dice and HD95.
pub fn summarize(results: &[EvalResult]) -> (f64, f64) {
    let n = results.len().max(1) as f64;
    (
        results.iter().map(|r| r.dsc).sum::<f64>() / n,
        results.iter().map(|r| r.hd95).sum::<f64>() / n,
    )
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    case_id: &'a str,
    dsc: f64,
    hd95: f64,
    hd95_is_sentinel: bool,
    num_slices: usize,
}

/// Metrics CSV: `case_id,dsc,hd95,hd95_is_sentinel,num_slices`.
pub fn write_metrics_csv(path: impl AsRef<Path>, results: &[EvalResult]) -> Result<()> {
    let path = path.as_ref();
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in results {
        w.serialize(MetricsRow {
            case_id: &r.case_id,
            dsc: r.dsc,
            hd95: r.hd95,
            hd95_is_sentinel: r.hd95_is_sentinel,
            num_slices: r.num_slices,
        })
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
