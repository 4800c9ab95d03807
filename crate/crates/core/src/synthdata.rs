//! Synthetic ellipse phantoms with a controllable intensity shift.
//!
//! Each case is a stack of slices through one ellipse whose radii follow a
//! z-profile: large in the middle, small and low-contrast at both ends. Images
//! are a two-level class map times a linear bias field, plus Gaussian noise,
//! gamma-mapped and min-max normalised per slice.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{write_manifest, write_tensor, DatasetManifest, SliceEntry, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    /// Maximum centre offset from the image centre, in pixels.
    pub center_jitter: f64,
    /// Mid-slice semi-axis range as a fraction of `min(H, W)`.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Radius factor at the first and last slice.
    pub end_scale: f64,
    /// Contrast factor at the first and last slice.
    pub end_contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySpec {
    pub fg_mean: f64,
    pub bg_mean: f64,
    pub noise_sigma: f64,
    pub gamma: f64,
    pub bias_field_strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub num_cases: usize,
    pub slices_per_case: usize,
    pub image_size: (usize, usize),
    pub shape: ShapeSpec,
    pub intensity: IntensitySpec,
    pub seed: u64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            num_cases: 8,
            slices_per_case: 8,
            image_size: (32, 32),
            shape: ShapeSpec {
                center_jitter: 3.0,
                radius_min: 0.18,
                radius_max: 0.3,
                end_scale: 0.3,
                end_contrast: 0.4,
            },
            intensity: IntensitySpec {
                fg_mean: 0.85,
                bg_mean: 0.15,
                noise_sigma: 0.03,
                gamma: 1.0,
                bias_field_strength: 0.1,
            },
            seed: 0,
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        let s = &self.shape;
        let i = &self.intensity;
        let bad = |m: String| Err(Error::Config(m));
        if self.num_cases == 0 || self.slices_per_case == 0 {
            return bad("a domain needs at least one case and one slice".into());
        }
        if h < 3 || w < 3 {
            return bad(format!("image size {h}×{w} is below 3×3"));
        }
        if !(0.0 < s.radius_min && s.radius_min <= s.radius_max) {
            return bad("radius range must satisfy 0 < min <= max".into());
        }
        let half = h.min(w) as f64 / 2.0;
        if s.radius_max * h.min(w) as f64 + s.center_jitter >= half {
            return bad("ellipse does not fit inside the image".into());
        }
        if !(0.0..=1.0).contains(&s.end_scale) || !(0.0..=1.0).contains(&s.end_contrast) {
            return bad("end_scale and end_contrast must be in [0, 1]".into());
        }
        if i.fg_mean == i.bg_mean {
            return bad("fg_mean must differ from bg_mean".into());
        }
        if !(0.0..=1.0).contains(&i.fg_mean) || !(0.0..=1.0).contains(&i.bg_mean) {
            return bad("class means must be in [0, 1]".into());
        }
        if i.noise_sigma < 0.0 || i.gamma <= 0.0 || !(0.0..1.0).contains(&i.bias_field_strength) {
            return bad("need noise_sigma >= 0, gamma > 0, bias strength in [0, 1)".into());
        }
        Ok(())
    }
}

/// Ellipse cross-section of one slice, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    pub theta: f64,
}

impl Ellipse {
    /// Whether the centre of pixel `(y, x)` lies inside.
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (dy, dx) = (y as f64 - self.cy, x as f64 - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

/// Per-case anatomy and bias-field direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseGeometry {
    pub mid: Ellipse,
    pub bias_dir: (f64, f64),
}

/// `sqrt(1 − t²)` with `t` the slice position mapped into (−1, 1).
fn profile(s: usize, n: usize) -> f64 {
    let t = 2.0 * (s as f64 + 0.5) / n as f64 - 1.0;
    (1.0 - t * t).max(0.0).sqrt()
}

impl CaseGeometry {
    fn sample(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = spec.image_size;
        let s = &spec.shape;
        let side = h.min(w) as f64;
        let j = s.center_jitter;
        let mut off = || if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
        let (oy, ox) = (off(), off());
        let mut rad = || side * rng.random_range(s.radius_min..=s.radius_max);
        let (ry, rx) = (rad(), rad());
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        Self {
            mid: Ellipse {
                cy: (h as f64 - 1.0) / 2.0 + oy,
                cx: (w as f64 - 1.0) / 2.0 + ox,
                ry,
                rx,
                theta,
            },
            bias_dir: phi.sin_cos(),
        }
    }

    pub fn slice_ellipse(&self, spec: &DomainSpec, s: usize) -> Ellipse {
        let f = spec.shape.end_scale + (1.0 - spec.shape.end_scale) * profile(s, spec.slices_per_case);
        Ellipse {
            ry: self.mid.ry * f,
            rx: self.mid.rx * f,
            ..self.mid
        }
    }
}

/// Case geometries for a spec. Only `seed`, shape and size fields matter, so
/// specs that differ in intensity share their anatomy.
pub fn case_geometries(spec: &DomainSpec) -> Vec<CaseGeometry> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.num_cases).map(|_| CaseGeometry::sample(spec, &mut rng)).collect()
}

pub fn rasterize(e: &Ellipse, h: usize, w: usize) -> Tensor<u8> {
    Tensor::from_fn(vec![h, w], |i| e.contains(i / w, i % w) as u8).expect("non-zero size")
}

/// Image before min-max normalisation, clamped to [0, 1] and gamma-mapped.
pub fn render_raw(
    spec: &DomainSpec,
    geom: &CaseGeometry,
    s: usize,
    label: &Tensor<u8>,
    noise: &mut ChaCha8Rng,
) -> Vec<f64> {
    let (h, w) = spec.image_size;
    let it = &spec.intensity;
    let c = spec.shape.end_contrast + (1.0 - spec.shape.end_contrast) * profile(s, spec.slices_per_case);
    let fg = it.bg_mean + c * (it.fg_mean - it.bg_mean);
    let normal = (it.noise_sigma > 0.0).then(|| Normal::new(0.0, it.noise_sigma).expect("sigma is positive"));
    let (by, bx) = geom.bias_dir;
    label
        .data()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let v = 2.0 * (i / w) as f64 / (h - 1) as f64 - 1.0;
            let u = 2.0 * (i % w) as f64 / (w - 1) as f64 - 1.0;
            let bias = 1.0 + it.bias_field_strength * (by * v + bx * u) / std::f64::consts::SQRT_2;
            let mean = if l != 0 { fg } else { it.bg_mean };
            let n = normal.map_or(0.0, |d| d.sample(noise));
            (mean * bias + n).clamp(0.0, 1.0).powf(it.gamma)
        })
        .collect()
}

fn normalize(raw: &[f64]) -> Vec<f32> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        raw.iter().map(|&v| ((v - lo) / (hi - lo)) as f32).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

/// One generated slice held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSlice {
    pub id: String,
    pub case_id: String,
    pub index_in_case: u32,
    pub image: Tensor<f32>,
    pub label: Tensor<u8>,
}

/// Generates every slice of a domain in case then slice order.
pub fn render(spec: &DomainSpec, tag: &str) -> Result<Vec<SynthSlice>> {
    spec.validate()?;
    let (h, w) = spec.image_size;
    let geoms = case_geometries(spec);
    let mut noise = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut out = Vec::with_capacity(spec.num_cases * spec.slices_per_case);
    for (c, g) in geoms.iter().enumerate() {
        for s in 0..spec.slices_per_case {
            let label = rasterize(&g.slice_ellipse(spec, s), h, w);
            let raw = render_raw(spec, g, s, &label, &mut noise);
            let case_id = format!("{tag}_c{c:02}");
            out.push(SynthSlice {
                id: format!("{case_id}_s{s:02}"),
                case_id,
                index_in_case: s as u32,
                image: Tensor::new(vec![h, w], normalize(&raw))?,
                label,
            });
        }
    }
    Ok(out)
}

/// Writes images, labels, `manifest.json` and `spec.json` under `out_dir`.
pub fn generate(spec: &DomainSpec, tag: &str, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let slices = render(spec, tag)?;
    for sub in ["images", "labels"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(slices.len());
    for s in &slices {
        let image = format!("images/{}.ugts", s.id);
        let label = format!("labels/{}.ugts", s.id);
        write_tensor(out_dir.join(&image), &s.image)?;
        write_tensor(out_dir.join(&label), &s.label)?;
        entries.push(SliceEntry {
            id: s.id.clone(),
            case_id: s.case_id.clone(),
            index_in_case: s.index_in_case,
            image,
            label: Some(label),
        });
    }
    let manifest = DatasetManifest::new(format!("synth-{tag}"), tag, 2, entries, out_dir);
    write_manifest(out_dir.join("manifest.json"), &manifest)?;
    let spec_path = out_dir.join("spec.json");
    let json = serde_json::to_string_pretty(spec).expect("spec serialises");
    fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Source and target specs that differ only in intensity. At `magnitude = 1`
/// the target has gamma 0.6, half the class gap, twice the noise and a
/// stronger bias field; at 0 the two specs are equal.
pub fn default_shift_pair(seed: u64, magnitude: f64) -> (DomainSpec, DomainSpec) {
    let source = DomainSpec {
        seed,
        ..DomainSpec::default()
    };
    let si = &source.intensity;
    let mid = (si.fg_mean + si.bg_mean) / 2.0;
    let half_gap = (si.fg_mean - si.bg_mean) / 4.0;
    let shifted = IntensitySpec {
        fg_mean: lerp(si.fg_mean, mid + half_gap, magnitude),
        bg_mean: lerp(si.bg_mean, mid - half_gap, magnitude),
        noise_sigma: lerp(si.noise_sigma, 2.0 * si.noise_sigma, magnitude),
        gamma: lerp(si.gamma, 0.6, magnitude),
        bias_field_strength: lerp(si.bias_field_strength, 0.3, magnitude),
    };
    let target = DomainSpec {
        intensity: shifted,
        ..source.clone()
    };
    (source, target)
}

/// Mean normalised intensity inside minus outside the foreground, over all
/// slices that have both classes.
pub fn mean_contrast(slices: &[SynthSlice]) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for s in slices {
        let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0, 0.0, 0);
        for (&v, &l) in s.image.data().iter().zip(s.label.data()) {
            if l != 0 {
                fg += v as f64;
                nf += 1;
            } else {
                bg += v as f64;
                nb += 1;
            }
        }
        if nf > 0 && nb > 0 {
            total += fg / nf as f64 - bg / nb as f64;
            n += 1;
        }
    }
    total / n.max(1) as f64
}
