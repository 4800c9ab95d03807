//! Flat run configuration shared by every pipeline stage.
//!
//! The on-disk form is a single JSON object with dotted keys such as
//! `"select.budget_fraction"`. Missing keys take defaults, unknown keys are an
//! error. Every seed is derived from `master_seed`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{fnv1a, AugConfig};
use crate::error::{Error, Result};
use crate::segmenter::TrainConfig;
use crate::select::{SelectionConfig, Strategy};
use crate::synthdata::{default_shift_pair, DomainSpec};
use crate::uncertainty::ScoringConfig;

/// SplitMix64 finaliser over `master ⊕ fnv1a(tag)`.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut z = (master ^ fnv1a(tag)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,

    #[serde(rename = "aug.k")]
    pub aug_k: usize,
    #[serde(rename = "aug.per_slice")]
    pub aug_per_slice: bool,
    #[serde(rename = "aug.gamma_range")]
    pub aug_gamma_range: (f64, f64),
    #[serde(rename = "aug.contrast_range")]
    pub aug_contrast_range: (f64, f64),
    #[serde(rename = "aug.noise_sigma_max")]
    pub aug_noise_sigma_max: f64,
    #[serde(rename = "aug.blur_sigma_range")]
    pub aug_blur_sigma_range: (f64, f64),

    #[serde(rename = "unc.bins")]
    pub unc_bins: usize,
    #[serde(rename = "unc.epsilon")]
    pub unc_epsilon: f64,

    #[serde(rename = "select.budget_fraction")]
    pub select_budget_fraction: f64,
    #[serde(rename = "select.capacity_multiplier")]
    pub select_capacity_multiplier: usize,
    #[serde(rename = "select.strategy")]
    pub select_strategy: Strategy,

    #[serde(rename = "source.epochs")]
    pub source_epochs: usize,
    #[serde(rename = "source.batch_size")]
    pub source_batch_size: usize,
    #[serde(rename = "source.lr0")]
    pub source_lr0: f64,
    #[serde(rename = "source.momentum")]
    pub source_momentum: f64,

    #[serde(rename = "stage1.epochs")]
    pub stage1_epochs: usize,
    #[serde(rename = "stage1.batch_size")]
    pub stage1_batch_size: usize,
    #[serde(rename = "stage1.lr0")]
    pub stage1_lr0: f64,
    #[serde(rename = "stage1.momentum")]
    pub stage1_momentum: f64,

    #[serde(rename = "stage2.epochs")]
    pub stage2_epochs: usize,
    #[serde(rename = "stage2.batch_size")]
    pub stage2_batch_size: usize,
    #[serde(rename = "stage2.lr0")]
    pub stage2_lr0: f64,
    #[serde(rename = "stage2.momentum")]
    pub stage2_momentum: f64,

    #[serde(rename = "eval.tta")]
    pub eval_tta: bool,

    #[serde(rename = "synth.num_cases")]
    pub synth_num_cases: usize,
    #[serde(rename = "synth.slices_per_case")]
    pub synth_slices_per_case: usize,
    #[serde(rename = "synth.image_size")]
    pub synth_image_size: usize,
    #[serde(rename = "synth.shift_magnitude")]
    pub synth_shift_magnitude: f64,
    #[serde(rename = "synth.eval_cases")]
    pub synth_eval_cases: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let aug = AugConfig::default();
        let sel = SelectionConfig::default();
        let src = TrainConfig::source(30, 4, 0);
        let ada = TrainConfig::adaptation(10, 4, 0);
        Self {
            master_seed: 0,
            aug_k: aug.k,
            aug_per_slice: aug.per_slice,
            aug_gamma_range: aug.gamma_range,
            aug_contrast_range: aug.contrast_range,
            aug_noise_sigma_max: aug.noise_sigma_max,
            aug_blur_sigma_range: aug.blur_sigma_range,
            unc_bins: crate::uncertainty::DEFAULT_BINS,
            unc_epsilon: crate::uncertainty::DEFAULT_EPSILON,
            select_budget_fraction: sel.budget_fraction,
            select_capacity_multiplier: sel.capacity_multiplier,
            select_strategy: sel.strategy,
            source_epochs: src.epochs,
            source_batch_size: src.batch_size,
            source_lr0: src.lr0,
            source_momentum: src.momentum,
            stage1_epochs: ada.epochs,
            stage1_batch_size: ada.batch_size,
            stage1_lr0: ada.lr0,
            stage1_momentum: ada.momentum,
            stage2_epochs: ada.epochs,
            stage2_batch_size: ada.batch_size,
            stage2_lr0: ada.lr0,
            stage2_momentum: ada.momentum,
            eval_tta: true,
            synth_num_cases: 8,
            synth_slices_per_case: 8,
            synth_image_size: 32,
            synth_shift_magnitude: 1.0,
            synth_eval_cases: 8,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn seed(&self, tag: &str) -> u64 {
        derive_seed(self.master_seed, tag)
    }

    pub fn validate(&self) -> Result<()> {
        self.aug().validate()?;
        self.selection().validate()?;
        self.source_train().validate()?;
        self.stage1_train().validate()?;
        self.stage2_train().validate()?;
        if self.unc_bins < 3 {
            return Err(Error::Config("unc.bins must be >= 3".into()));
        }
        if !(self.unc_epsilon > 0.0 && self.unc_epsilon < 1.0) {
            return Err(Error::Config("unc.epsilon must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.synth_shift_magnitude) {
            return Err(Error::Config("synth.shift_magnitude must be in [0, 1]".into()));
        }
        let (s, t, e) = self.synth_specs();
        s.validate()?;
        t.validate()?;
        e.validate()
    }

    pub fn aug(&self) -> AugConfig {
        AugConfig {
            k: self.aug_k,
            seed: self.seed("aug"),
            per_slice: self.aug_per_slice,
            gamma_range: self.aug_gamma_range,
            contrast_range: self.aug_contrast_range,
            noise_sigma_max: self.aug_noise_sigma_max,
            blur_sigma_range: self.aug_blur_sigma_range,
        }
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            aug: self.aug(),
            bins: self.unc_bins,
            epsilon: self.unc_epsilon,
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            budget_fraction: self.select_budget_fraction,
            capacity_multiplier: self.select_capacity_multiplier,
            seed: self.seed("select"),
            strategy: self.select_strategy,
        }
    }

    pub fn source_train(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.source_lr0,
            epochs: self.source_epochs,
            batch_size: self.source_batch_size,
            momentum: self.source_momentum,
            seed: self.seed("source"),
        }
    }

    pub fn stage1_train(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.stage1_lr0,
            epochs: self.stage1_epochs,
            batch_size: self.stage1_batch_size,
            momentum: self.stage1_momentum,
            seed: self.seed("stage1"),
        }
    }

    pub fn stage2_train(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.stage2_lr0,
            epochs: self.stage2_epochs,
            batch_size: self.stage2_batch_size,
            momentum: self.stage2_momentum,
            seed: self.seed("stage2"),
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.seed("init")
    }

    /// Source, target and held-out target-evaluation domains.
    pub fn synth_specs(&self) -> (DomainSpec, DomainSpec, DomainSpec) {
        let (mut s, mut t) = default_shift_pair(self.seed("synth"), self.synth_shift_magnitude);
        for d in [&mut s, &mut t] {
            d.num_cases = self.synth_num_cases;
            d.slices_per_case = self.synth_slices_per_case;
            d.image_size = (self.synth_image_size, self.synth_image_size);
        }
        let e = DomainSpec {
            num_cases: self.synth_eval_cases,
            seed: self.seed("synth_eval"),
            ..t.clone()
        };
        (s, t, e)
    }
}
