//! Invertible spatial transforms, intensity perturbations, and the
//! test-time-augmentation ensemble.
//!
//! The ensemble for an image `x` under a plan of `K` pairs `(I_k, T_k)` is
//! `p = (1/K) Σ_k T_k⁻¹(model(I_k(T_k(x))))`, the inverse being applied to the
//! `C×H×W` probability map before averaging.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segmenter::ProbModel;
use crate::tensorio::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialTransform {
    Identity,
    HFlip,
    VFlip,
    Rot90,
    Rot180,
    Rot270,
}

impl SpatialTransform {
    pub const ALL: [SpatialTransform; 6] = [
        SpatialTransform::Identity,
        SpatialTransform::HFlip,
        SpatialTransform::VFlip,
        SpatialTransform::Rot90,
        SpatialTransform::Rot180,
        SpatialTransform::Rot270,
    ];

    pub fn inverse(self) -> Self {
        match self {
            SpatialTransform::Rot90 => SpatialTransform::Rot270,
            SpatialTransform::Rot270 => SpatialTransform::Rot90,
            other => other,
        }
    }

    fn swaps_axes(self) -> bool {
        matches!(self, SpatialTransform::Rot90 | SpatialTransform::Rot270)
    }

    /// Source pixel `(r, c)` in an `h×w` input for output pixel `(i, j)`.
    /// Rot90 sends input `(r, c)` to output `(c, h-1-r)` (clockwise).
    #[inline]
    fn source(self, i: usize, j: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            SpatialTransform::Identity => (i, j),
            SpatialTransform::HFlip => (i, w - 1 - j),
            SpatialTransform::VFlip => (h - 1 - i, j),
            SpatialTransform::Rot90 => (h - 1 - j, i),
            SpatialTransform::Rot180 => (h - 1 - i, w - 1 - j),
            SpatialTransform::Rot270 => (j, w - 1 - i),
        }
    }
}

/// Applies a spatial transform to an `H×W` or channel-major `C×H×W` tensor.
pub fn apply_spatial<T: Copy>(t: SpatialTransform, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (channels, h, w) = match *x.dims() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::Shape(format!(
                "spatial transforms need rank 2 or 3, got {:?}",
                x.dims()
            )))
        }
    };
    let (oh, ow) = if t.swaps_axes() { (w, h) } else { (h, w) };
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..channels {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let (r, c) = t.source(i, j, h, w);
                out.push(plane[r * w + c]);
            }
        }
    }
    let dims = if x.rank() == 2 {
        vec![oh, ow]
    } else {
        vec![channels, oh, ow]
    };
    Tensor::new(dims, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntensityTransform {
    Identity,
    Gamma { gamma: f64 },
    /// Scale deviations from the image mean.
    Contrast { scale: f64 },
    GaussianNoise { sigma: f64, seed: u64 },
    /// 3×3 normalised Gaussian kernel, edge replication.
    GaussianBlur { sigma: f64 },
}

fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Applies an intensity transform; output keeps dims and lies in `[0, 1]`.
pub fn apply_intensity<T: Scalar>(t: &IntensityTransform, x: &Tensor<T>) -> Tensor<T> {
    match *t {
        IntensityTransform::Identity => x.clone(),
        IntensityTransform::Gamma { gamma } if gamma == 1.0 => x.map(|&v| clamp01(v)),
        IntensityTransform::Gamma { gamma } => {
            let g = T::lit(gamma);
            x.map(|&v| clamp01(clamp01(v).powf(g)))
        }
        IntensityTransform::Contrast { scale } => {
            let mean = x.mean();
            let s = T::lit(scale);
            x.map(|&v| clamp01(mean + s * (v - mean)))
        }
        IntensityTransform::GaussianNoise { sigma, seed } => {
            if sigma <= 0.0 {
                return x.map(|&v| clamp01(v));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, sigma).expect("sigma validated positive");
            x.map(|&v| clamp01(v + T::lit(normal.sample(&mut rng))))
        }
        IntensityTransform::GaussianBlur { sigma } => blur3(x, sigma),
    }
}

fn blur3<T: Scalar>(x: &Tensor<T>, sigma: f64) -> Tensor<T> {
    let side = (-1.0 / (2.0 * sigma * sigma)).exp();
    let norm = 1.0 + 2.0 * side;
    let (a, b) = (T::lit(side / norm), T::lit(1.0 / norm));
    let (h, w) = x.plane();
    let planes = x.len() / (h * w);
    let mut out = x.clone();
    let mut tmp = vec![T::zero(); h * w];
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for c in 0..w {
                let l = src[y * w + c.saturating_sub(1)];
                let r = src[y * w + (c + 1).min(w - 1)];
                tmp[y * w + c] = a * l + b * src[y * w + c] + a * r;
            }
        }
        let dst = &mut out.data_mut()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let up = y.saturating_sub(1);
            let dn = (y + 1).min(h - 1);
            for c in 0..w {
                dst[y * w + c] = clamp01(a * tmp[up * w + c] + b * tmp[y * w + c] + a * tmp[dn * w + c]);
            }
        }
    }
    out
}

/// Ensemble size, seeding, and parameter ranges for sampled intensity
/// transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugConfig {
    pub k: usize,
    pub seed: u64,
    /// Draw a fresh plan per slice from `seed ⊕ fnv1a(slice id)` instead of
    /// sharing one plan across the dataset.
    pub per_slice: bool,
    pub gamma_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub noise_sigma_max: f64,
    pub blur_sigma_range: (f64, f64),
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            k: 8,
            seed: 0,
            per_slice: true,
            gamma_range: (0.7, 1.5),
            contrast_range: (0.7, 1.3),
            noise_sigma_max: 0.05,
            blur_sigma_range: (0.5, 1.0),
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if self.k == 0 {
            return Err(Error::Config("aug.k must be >= 1".into()));
        }
        if !range_ok(self.gamma_range) || !range_ok(self.contrast_range) || !range_ok(self.blur_sigma_range) {
            return Err(Error::Config("augmentation ranges must satisfy 0 < lo <= hi".into()));
        }
        if !(self.noise_sigma_max >= 0.0 && self.noise_sigma_max.is_finite()) {
            return Err(Error::Config("aug.noise_sigma_max must be >= 0".into()));
        }
        Ok(())
    }

    /// The plan used for one slice.
    pub fn plan_for(&self, slice_id: &str) -> Result<AugmentationPlan> {
        let seed = if self.per_slice {
            slice_seed(self.seed, slice_id)
        } else {
            self.seed
        };
        AugmentationPlan::sample(self, seed)
    }
}

/// `K` sampled `(intensity, spatial)` pairs; a pure function of `(cfg, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub seed: u64,
    pub pairs: Vec<(IntensityTransform, SpatialTransform)>,
}

fn sample_in<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

impl AugmentationPlan {
    pub fn sample(cfg: &AugConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = (0..cfg.k)
            .map(|_| {
                let spatial = SpatialTransform::ALL[rng.random_range(0..SpatialTransform::ALL.len())];
                let intensity = match rng.random_range(0..4) {
                    0 => IntensityTransform::Gamma {
                        gamma: sample_in(&mut rng, cfg.gamma_range),
                    },
                    1 => IntensityTransform::Contrast {
                        scale: sample_in(&mut rng, cfg.contrast_range),
                    },
                    2 => IntensityTransform::GaussianNoise {
                        sigma: sample_in(&mut rng, (0.0, cfg.noise_sigma_max)),
                        seed: rng.random(),
                    },
                    _ => IntensityTransform::GaussianBlur {
                        sigma: sample_in(&mut rng, cfg.blur_sigma_range),
                    },
                };
                (intensity, spatial)
            })
            .collect();
        Ok(Self { seed, pairs })
    }

    pub fn from_pairs(pairs: Vec<(IntensityTransform, SpatialTransform)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Config("augmentation plan needs at least one pair".into()));
        }
        Ok(Self { seed: 0, pairs })
    }

    /// Single identity pair: the ensemble reduces to one forward pass.
    pub fn identity() -> Self {
        Self {
            seed: 0,
            pairs: vec![(IntensityTransform::Identity, SpatialTransform::Identity)],
        }
    }

    pub fn k(&self) -> usize {
        self.pairs.len()
    }
}

/// 64-bit FNV-1a, used to derive per-slice seeds from slice ids.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for a slice's own plan: `base ⊕ fnv1a(id)`.
pub fn slice_seed(base: u64, slice_id: &str) -> u64 {
    base ^ fnv1a(slice_id)
}

/// Test-time-augmentation ensemble of `model` on an `H×W` image.
pub fn ensemble_predict<T: Scalar, M: ProbModel<T> + ?Sized>(
    model: &M,
    image: &Tensor<T>,
    plan: &AugmentationPlan,
) -> Result<Tensor<T>> {
    if image.rank() != 2 {
        return Err(Error::Shape(format!("expected an H×W image, got {:?}", image.dims())));
    }
    let (h, w) = (image.dims()[0], image.dims()[1]);
    let expected = [model.num_classes(), h, w];
    let mut acc: Option<Tensor<T>> = None;
    for (intensity, spatial) in &plan.pairs {
        let moved = apply_spatial(*spatial, image)?;
        let perturbed = apply_intensity(intensity, &moved);
        let prob = model.predict(&perturbed)?;
        let back = apply_spatial(spatial.inverse(), &prob)?;
        if back.dims() != expected {
            return Err(Error::Shape(format!(
                "inverse-mapped prediction has dims {:?}, expected {expected:?}",
                back.dims()
            )));
        }
        match acc.as_mut() {
            None => acc = Some(back),
            Some(sum) => {
                for (a, b) in sum.data_mut().iter_mut().zip(back.data()) {
                    *a += *b;
                }
            }
        }
    }
    let mut sum = acc.ok_or_else(|| Error::Config("empty augmentation plan".into()))?;
    if plan.k() > 1 {
        let k = T::from_usize_lossy(plan.k());
        for v in sum.data_mut() {
            *v /= k;
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::Segmenter;
    use proptest::prelude::*;

    fn t2(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(vec![h, w], |i| i as f32).unwrap()
    }

    #[test]
    fn hflip_example() {
        let x = Tensor::new(vec![2, 2], vec![1, 2, 3, 4]).unwrap();
        let y = apply_spatial(SpatialTransform::HFlip, &x).unwrap();
        assert_eq!(y.data(), &[2, 1, 4, 3]);
    }

    #[test]
    fn rot90_index_oracle() {
        let (h, w) = (2, 3);
        let x = t2(h, w);
        let y = apply_spatial(SpatialTransform::Rot90, &x).unwrap();
        assert_eq!(y.dims(), &[3, 2]);
        for r in 0..h {
            for c in 0..w {
                assert_eq!(y.at2(c, h - 1 - r), x.at2(r, c));
            }
        }
        let back = apply_spatial(SpatialTransform::Rot270, &y).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn rank_checked() {
        let x = Tensor::new(vec![2, 2, 2, 2], vec![0u8; 16]).unwrap();
        assert!(apply_spatial(SpatialTransform::HFlip, &x).is_err());
    }

    #[test]
    fn gamma_examples() {
        let x = Tensor::new(vec![1, 3], vec![0.5f32, 0.1, 0.9]).unwrap();
        assert_eq!(apply_intensity(&IntensityTransform::Gamma { gamma: 1.0 }, &x), x);
        let y = apply_intensity(&IntensityTransform::Gamma { gamma: 2.0 }, &x);
        assert_eq!(y.data()[0], 0.25);
    }

    #[test]
    fn blur_keeps_constant_image() {
        let x = Tensor::filled(vec![5, 6], 0.3f64).unwrap();
        for sigma in [0.5, 0.75, 1.0] {
            let y = apply_intensity(&IntensityTransform::GaussianBlur { sigma }, &x);
            assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
        }
    }

    #[test]
    fn blur_matches_direct_convolution() {
        let x = Tensor::from_fn(vec![4, 5], |i| ((i * 7) % 11) as f64 / 11.0).unwrap();
        let sigma = 0.8;
        let y = apply_intensity(&IntensityTransform::GaussianBlur { sigma }, &x);
        let g = |d: i64| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-1..=1).flat_map(|a| (-1..=1).map(move |b| g(a) * g(b))).sum();
        for r in 0..4i64 {
            for c in 0..5i64 {
                let mut s = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (rr, cc) = ((r + dy).clamp(0, 3), (c + dx).clamp(0, 4));
                        s += g(dy) * g(dx) * x.at2(rr as usize, cc as usize);
                    }
                }
                assert!((y.at2(r as usize, c as usize) - s / norm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contrast_and_noise_stay_in_range() {
        let x = Tensor::from_fn(vec![8, 8], |i| i as f32 / 63.0).unwrap();
        for t in [
            IntensityTransform::Contrast { scale: 1.3 },
            IntensityTransform::GaussianNoise { sigma: 0.05, seed: 3 },
        ] {
            let y = apply_intensity(&t, &x);
            assert_eq!(y.dims(), x.dims());
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let n = IntensityTransform::GaussianNoise { sigma: 0.05, seed: 3 };
        assert_eq!(apply_intensity(&n, &x), apply_intensity(&n, &x));
    }

    #[test]
    fn plan_is_pure_function_of_seed() {
        let cfg = AugConfig::default();
        let a = AugmentationPlan::sample(&cfg, 99).unwrap();
        assert_eq!(a, AugmentationPlan::sample(&cfg, 99).unwrap());
        assert_ne!(a, AugmentationPlan::sample(&cfg, 100).unwrap());
        assert_eq!(a.k(), 8);
        for (i, _) in &a.pairs {
            match *i {
                IntensityTransform::Gamma { gamma } => assert!((0.7..=1.5).contains(&gamma)),
                IntensityTransform::Contrast { scale } => assert!((0.7..=1.3).contains(&scale)),
                IntensityTransform::GaussianNoise { sigma, .. } => assert!((0.0..=0.05).contains(&sigma)),
                IntensityTransform::GaussianBlur { sigma } => assert!((0.5..=1.0).contains(&sigma)),
                IntensityTransform::Identity => panic!("identity is not sampled"),
            }
        }
    }

    #[test]
    fn identity_plan_equals_single_pass() {
        let m = Segmenter::<f32>::init(2, 5).unwrap();
        let x = Tensor::from_fn(vec![6, 7], |i| (i % 5) as f32 / 4.0).unwrap();
        let e = ensemble_predict(&m, &x, &AugmentationPlan::identity()).unwrap();
        assert_eq!(e, m.forward(&x).unwrap().prob);
    }

    struct Constant;
    impl ProbModel<f64> for Constant {
        fn num_classes(&self) -> usize {
            2
        }
        fn predict(&self, image: &Tensor<f64>) -> Result<Tensor<f64>> {
            let (h, w) = image.plane();
            Tensor::from_fn(vec![2, h, w], |i| if i < h * w { 0.3 } else { 0.7 })
        }
    }

    #[test]
    fn symmetric_plan_with_constant_model() {
        let x = Tensor::new(vec![2, 2], vec![0.1, 0.1, 0.9, 0.9]).unwrap();
        let plan = AugmentationPlan::from_pairs(vec![
            (IntensityTransform::Identity, SpatialTransform::Identity),
            (IntensityTransform::Identity, SpatialTransform::HFlip),
        ])
        .unwrap();
        let e = ensemble_predict(&Constant, &x, &plan).unwrap();
        assert_eq!(e, Constant.predict(&x).unwrap());
    }

    #[test]
    fn random_plan_matches_term_by_term_oracle() {
        let m = Segmenter::<f64>::init(2, 8).unwrap();
        let x = Tensor::from_fn(vec![5, 7], |i| ((i * 13) % 17) as f64 / 16.0).unwrap();
        let cfg = AugConfig { k: 4, ..AugConfig::default() };
        let plan = AugmentationPlan::sample(&cfg, 2024).unwrap();
        let e = ensemble_predict(&m, &x, &plan).unwrap();
        // direct evaluation of the ensemble with explicit index arithmetic
        let (h, w) = (5, 7);
        let mut oracle = vec![0.0; 2 * h * w];
        for (intensity, spatial) in &plan.pairs {
            let moved = apply_spatial(*spatial, &x).unwrap();
            let p = m.forward(&apply_intensity(intensity, &moved)).unwrap().prob;
            let (ph, pw) = (p.dims()[1], p.dims()[2]);
            for c in 0..2 {
                for r in 0..h {
                    for col in 0..w {
                        // locate where (r, col) went under the forward transform
                        let (i, j) = (0..ph)
                            .flat_map(|i| (0..pw).map(move |j| (i, j)))
                            .find(|&(i, j)| spatial.source(i, j, h, w) == (r, col))
                            .unwrap();
                        oracle[(c * h + r) * w + col] += p.at3(c, i, j) / 4.0;
                    }
                }
            }
        }
        for (a, b) in e.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6);
        }
        for j in 0..h * w {
            assert!((e.data()[j] + e.data()[h * w + j] - 1.0).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn inverse_restores_bit_exact(h in 1usize..9, w in 1usize..9, c in 1usize..4, seed in any::<u32>()) {
            let x = Tensor::from_fn(vec![c, h, w], |i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32) & 0x3f7f_ffff)).unwrap();
            for t in SpatialTransform::ALL {
                let y = apply_spatial(t, &x).unwrap();
                let back = apply_spatial(t.inverse(), &y).unwrap();
                prop_assert_eq!(&back, &x);
            }
        }
    }
}
