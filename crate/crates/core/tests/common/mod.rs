#![allow(dead_code)]

use std::path::Path;

use ugtst_core::adapt::pretrain;
use ugtst_core::config::RunConfig;
use ugtst_core::synthdata::generate;
use ugtst_core::tensorio::DatasetManifest;
use ugtst_core::SegmenterF32;

/// 4 cases × 5 slices of 16×16, with short schedules.
pub fn small_config(seed: u64) -> RunConfig {
    RunConfig {
        master_seed: seed,
        aug_k: 2,
        source_epochs: 4,
        stage1_epochs: 1,
        stage2_epochs: 1,
        synth_num_cases: 4,
        synth_slices_per_case: 5,
        synth_image_size: 16,
        synth_eval_cases: 2,
        ..RunConfig::default()
    }
}

pub struct Fixture {
    pub target: DatasetManifest,
    pub eval: DatasetManifest,
    pub source_model: SegmenterF32,
}

/// Generates the three domains under `dir`, trains the source model, then
/// deletes the source domain so later stages cannot touch it.
pub fn fixture(cfg: &RunConfig, dir: &Path) -> Fixture {
    let (s, t, e) = cfg.synth_specs();
    let source = generate(&s, "source", dir.join("source")).unwrap();
    let target = generate(&t, "target", dir.join("target")).unwrap();
    let eval = generate(&e, "target_eval", dir.join("target_eval")).unwrap();
    let source_model = pretrain::<f32>(&source, cfg).unwrap().model;
    std::fs::remove_dir_all(dir.join("source")).unwrap();
    Fixture { target, eval, source_model }
}
