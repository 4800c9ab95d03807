//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`) so the lines
//! always reach stdout.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ugtst_core::adapt::{pretrain, run_ugtst};
use ugtst_core::augment::{apply_spatial, ensemble_predict, AugmentationPlan, SpatialTransform};
use ugtst_core::config::RunConfig;
use ugtst_core::metrics::{dsc, evaluate_cases, hd95, largest_component, summarize, ModelPredictor};
use ugtst_core::segmenter::gradcheck::finite_difference_check;
use ugtst_core::segmenter::Segmenter;
use ugtst_core::select::{kmeans_pp, select, SelectionConfig, Strategy};
use ugtst_core::synthdata::{generate, DomainSpec};
use ugtst_core::uncertainty::{
    entropy_map, gaua, histogram, primary_peak_threshold, EntropyHistogram, EntropyMap, PeakThreshold,
    SliceUncertainty,
};
use ugtst_core::Tensor;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "entropy exactness", limit: Duration::from_secs(1), run: entropy_exactness },
        Criterion { id: 2, name: "transform algebra", limit: Duration::from_secs(5), run: transform_algebra },
        Criterion { id: 3, name: "GAUA bias resistance", limit: Duration::from_secs(1), run: gaua_bias_resistance },
        Criterion { id: 4, name: "peak threshold oracle", limit: Duration::from_secs(5), run: peak_threshold_oracle },
        Criterion { id: 5, name: "gradient correctness", limit: Duration::from_secs(30), run: gradient_correctness },
        Criterion { id: 6, name: "clustering oracle", limit: Duration::from_secs(5), run: clustering_oracle },
        Criterion { id: 7, name: "metric oracles", limit: Duration::from_secs(5), run: metric_oracles },
        Criterion { id: 8, name: "budget honesty and tier structure", limit: Duration::from_secs(120), run: budget_and_tiers },
        Criterion { id: 9, name: "domain-shift end-to-end ordering", limit: Duration::from_secs(900), run: shift_ordering },
        Criterion { id: 10, name: "capacity sweep harness", limit: Duration::from_secs(600), run: capacity_sweep },
        Criterion { id: 11, name: "determinism", limit: Duration::from_secs(300), run: determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let t0 = Instant::now();
        let outcome = (c.run)();
        let took = t0.elapsed();
        let outcome = match outcome {
            Ok(d) if took > c.limit => Err(format!("{d}; over time limit {:?}", c.limit)),
            o => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:>2}. {}: {detail} ({:.2}s)", c.id, c.name, took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2}. {}: {why} ({:.2}s)", c.id, c.name, took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// 1 ------------------------------------------------------------------------

fn entropy_exactness() -> Outcome {
    let half = Tensor::new(vec![2, 1, 1], vec![0.5f64, 0.5]).unwrap();
    let h = entropy_map(&half).unwrap().values.data()[0];
    let err = (h - std::f64::consts::LN_2).abs();
    ensure!(err <= 1e-9, "H(0.5, 0.5) off ln 2 by {err:e}");
    for c in 2..=5 {
        for hot in 0..c {
            let p = Tensor::from_fn(vec![c, 1, 1], |i| if i == hot { 1.0f64 } else { 0.0 }).unwrap();
            let v = entropy_map(&p).unwrap().values.data()[0];
            ensure!(v == 0.0, "one-hot C={c} gives {v}");
        }
    }
    Ok(format!("|H(0.5,0.5) - ln 2| = {err:e}, one-hot = 0 for C in 2..=5"))
}

// 2 ------------------------------------------------------------------------

fn transform_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 0..100 {
        let (h, w) = (rng.random_range(1..17), rng.random_range(1..17));
        let dims = if n % 2 == 0 { vec![h, w] } else { vec![rng.random_range(1..4), h, w] };
        let len: usize = dims.iter().product();
        let x = Tensor::new(dims, (0..len).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff)).collect()).unwrap();
        for t in SpatialTransform::ALL {
            let back = apply_spatial(t.inverse(), &apply_spatial(t, &x).unwrap()).unwrap();
            let same = back.dims() == x.dims() && back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure!(same, "tensor {n}, {t:?}: inverse does not restore input");
        }
    }
    for seed in 0..10 {
        let model = Segmenter::<f32>::init(2 + seed as usize % 3, seed).unwrap();
        let x = Tensor::from_fn(vec![9, 7], |_| rng.random::<f32>()).unwrap();
        let single = model.forward(&x).unwrap().prob;
        let ens = ensemble_predict(&model, &x, &AugmentationPlan::identity()).unwrap();
        ensure!(
            single.data().iter().zip(ens.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "identity K=1 ensemble differs from a forward pass (model {seed})"
        );
    }
    Ok("600 inverse round trips bit-exact; K=1 identity ensemble = forward on 10 models".into())
}

// 3 ------------------------------------------------------------------------

fn entropy_values(values: Vec<f64>) -> EntropyMap<f64> {
    let n = values.len();
    EntropyMap {
        values: Tensor::new(vec![1, n], values).unwrap(),
        max_entropy: std::f64::consts::LN_2,
    }
}

fn gaua_bias_resistance() -> Outcome {
    let width = std::f64::consts::LN_2 / 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..50 {
        // flat-topped background peak over bins 3-4, uncertain tail above it
        let mut v = vec![2.5 * width; 500];
        v.extend(vec![3.5 * width; 1000]);
        v.extend(vec![4.5 * width; 1020]);
        v.extend((0..rng.random_range(5..60)).map(|_| rng.random_range(0.2..0.69)));
        let before = entropy_values(v.clone());
        let tb = primary_peak_threshold(&histogram(&before, 100).unwrap(), 0.05);
        let sb = gaua("x", &before, tb);
        let extra = rng.random_range(1..=60);
        v.extend(vec![rng.random_range(3.0..3.49) * width; extra]);
        let after = entropy_values(v);
        let ta = primary_peak_threshold(&histogram(&after, 100).unwrap(), 0.05);
        ensure!(tb.peak_bin == 3 && ta.peak_bin == 3, "case {case}: construction moved the peak");
        let sa = gaua("x", &after, ta);
        let du = (sa.u - sb.u).abs();
        worst = worst.max(du);
        ensure!(du < 1e-6, "case {case}: U moved by {du:e}");
        ensure!(sa.mean_entropy < sb.mean_entropy, "case {case}: whole-image mean did not decrease");
    }
    Ok(format!("50 maps, max |dU| = {worst:e}, whole-image mean always decreased"))
}

// 4 ------------------------------------------------------------------------

/// Direct scan of the two difference conditions.
fn peak_oracle(d: &[f64], eps: f64) -> (usize, bool) {
    let n = d.len();
    let mut max_abs = 0.0f64;
    for i in 0..n - 1 {
        max_abs = max_abs.max((d[i + 1] - d[i]).abs());
    }
    let delta = eps * max_abs;
    for i in 1..n - 1 {
        let first = d[i + 1] - d[i];
        let second = d[i + 1] - 2.0 * d[i] + d[i - 1];
        if first.abs() < delta && second < 0.0 {
            return (i, false);
        }
    }
    let mut arg = 0;
    for i in 1..n {
        if d[i] > d[arg] {
            arg = i;
        }
    }
    (arg, true)
}

fn random_densities(rng: &mut ChaCha8Rng, kind: usize) -> Vec<f64> {
    let n = 100;
    let raw: Vec<f64> = match kind {
        0 => (0..n).map(|_| rng.random::<f64>()).collect(),
        1 => {
            let bumps: Vec<(f64, f64, f64)> = (0..rng.random_range(1..4))
                .map(|_| (rng.random_range(0.0..100.0), rng.random_range(1.0..15.0), rng.random_range(0.2..1.0)))
                .collect();
            (0..n)
                .map(|i| bumps.iter().map(|&(c, s, a)| a * (-(i as f64 - c).powi(2) / (2.0 * s * s)).exp()).sum::<f64>())
                .collect()
        }
        2 => {
            let r: f64 = rng.random_range(0.5..0.95);
            (0..n).map(|i| r.powi(i as i32)).collect()
        }
        _ => {
            let start = rng.random_range(1..90);
            let len = rng.random_range(2..10);
            (0..n)
                .map(|i| if (start..start + len).contains(&i) { 1.0 } else { rng.random::<f64>() * 0.05 })
                .collect()
        }
    };
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn peak_threshold_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut fallbacks, mut found) = (0, 0);
    for case in 0..1000 {
        let d = random_densities(&mut rng, case % 4);
        let h = EntropyHistogram::from_densities(d.clone(), std::f64::consts::LN_2);
        let got: PeakThreshold = primary_peak_threshold(&h, 0.05);
        let (bin, fallback) = peak_oracle(&d, 0.05);
        ensure!(
            got.peak_bin == bin && got.fallback == fallback,
            "histogram {case}: got bin {} fallback {}, oracle bin {bin} fallback {fallback}",
            got.peak_bin,
            got.fallback
        );
        let centre = (bin as f64 + 0.5) * std::f64::consts::LN_2 / 100.0;
        ensure!((got.threshold_entropy - centre).abs() < 1e-12, "histogram {case}: threshold is not the bin centre");
        if fallback {
            fallbacks += 1;
        } else {
            found += 1;
        }
    }
    ensure!(fallbacks > 0 && found > 0, "sample did not cover both branches");
    Ok(format!("1000 histograms agree ({found} interior peaks, {fallbacks} fallbacks)"))
}

// 5 ------------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let (mut accepted, mut skipped, mut worst, mut seed) = (0, 0, 0.0f64, 0u64);
    while accepted < 20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.random_range(2..=3);
        let mut model = Segmenter::<f64>::init(classes, seed).unwrap();
        for b in model.conv1_bias_mut() {
            *b = rng.random_range(-0.2..0.2);
        }
        for b in model.conv2_bias_mut() {
            *b = rng.random_range(-0.2..0.2);
        }
        for b in model.head_bias_mut() {
            *b = rng.random_range(-0.2..0.2);
        }
        let image = Tensor::from_fn(vec![6, 6], |_| rng.random_range(0.0..1.0)).unwrap();
        let target = Tensor::from_fn(vec![6, 6], |_| rng.random_range(0..classes as u8)).unwrap();
        let weight = rng.random_range(0.5..2.0);
        match finite_difference_check(&model, &image, &target, weight, 1e-3, 1e-5).unwrap() {
            Some(e) => {
                accepted += 1;
                worst = worst.max(e);
            }
            None => skipped += 1,
        }
        seed += 1;
        ensure!(seed < 2000, "too few kink-free cases");
    }
    ensure!(worst < 1e-4, "max relative error {worst:e}");
    Ok(format!("{accepted} cases on 6x6 ({skipped} redrawn at ReLU kinks), max relative error {worst:e}"))
}

// 6 ------------------------------------------------------------------------

fn clustering_oracle() -> Outcome {
    let mut runs = 0;
    for m in [2usize, 3, 5] {
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + m as u64);
            let mut pts = Vec::new();
            let mut blob = Vec::new();
            for b in 0..m {
                let centre: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0) + 50.0 * b as f64).collect();
                for _ in 0..rng.random_range(2..10) {
                    pts.push(centre.iter().map(|c| c + rng.random_range(-0.5..0.5)).collect::<Vec<f64>>());
                    blob.push(b);
                }
            }
            // blobs are 50 apart with radius < 1, so generated membership is the truth
            let ids: Vec<String> = (0..pts.len()).map(|i| format!("s{i:03}")).collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let c = kmeans_pp(&pts, &refs, m, seed).unwrap();
            ensure!(c.picked.len() == m, "M={m} seed={seed}: picked {}", c.picked.len());
            let hit: BTreeSet<usize> = c.picked.iter().map(|&i| blob[i]).collect();
            ensure!(hit.len() == m, "M={m} seed={seed}: blobs hit {hit:?}");
            runs += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in 1..60 {
        let scores: Vec<SliceUncertainty> = (0..n).map(|i| score(i, rng.random())).collect();
        let feats = scores.iter().map(|s| (s.slice_id.clone(), vec![rng.random::<f64>(), rng.random()])).collect();
        let cfg = SelectionConfig { budget_fraction: rng.random_range(0.01..1.0), ..SelectionConfig::default() };
        let p = select(&scores, &feats, &cfg).unwrap();
        ensure!(p.d_ta.len() == cfg.budget(n), "N={n}: |d_ta| = {} != M = {}", p.d_ta.len(), cfg.budget(n));
    }
    Ok(format!("{runs} blob layouts, one pick per blob; |d_ta| = M for N in 1..60"))
}

fn score(i: usize, u: f64) -> SliceUncertainty {
    SliceUncertainty {
        slice_id: format!("s{i:03}"),
        u,
        threshold: PeakThreshold { threshold_entropy: 0.0, peak_bin: 0, delta_used: 0.0, fallback: true },
        pixels_above: 0,
        mean_entropy: u,
        mean_confidence: Some(1.0 - u),
    }
}

// 7 ------------------------------------------------------------------------

fn metric_oracles() -> Outcome {
    let mut p = Tensor::filled(vec![20, 20], 0u8).unwrap();
    let mut g = p.clone();
    for i in 0..100 {
        p.data_mut()[i] = 1;
        g.data_mut()[i + 50] = 1;
    }
    let d = dsc(&p, &g).unwrap();
    ensure!(d == 0.5, "half-overlap dsc = {d}");
    let mut a = Tensor::filled(vec![5, 5], 0u8).unwrap();
    let mut b = a.clone();
    a.data_mut()[12] = 1;
    b.data_mut()[13] = 1;
    let h = hd95(&a, &b).unwrap();
    ensure!(h.value == 1.0 && !h.is_sentinel, "single-pixel offset hd95 = {}", h.value);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 0..100 {
        let dims = if n % 2 == 0 {
            vec![rng.random_range(1..16), rng.random_range(1..16)]
        } else {
            vec![rng.random_range(1..6), rng.random_range(1..10), rng.random_range(1..10)]
        };
        let len = dims.iter().product();
        let fill = rng.random_range(0.1..0.7);
        let m = Tensor::new(dims, (0..len).map(|_| rng.random_bool(fill) as u8).collect()).unwrap();
        let once = largest_component(&m).unwrap();
        ensure!(largest_component(&once).unwrap() == once, "mask {n}: not idempotent");
    }
    Ok("dsc = 0.5, hd95 = 1.0, largest_component idempotent on 100 masks".into())
}

// 8 ------------------------------------------------------------------------

fn budget_and_tiers() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { synth_num_cases: 4, synth_slices_per_case: 5, ..RunConfig::default() };
    let (s, t, _) = cfg.synth_specs();
    let source = generate(&s, "source", dir.path().join("source")).unwrap();
    let target = generate(&t, "target", dir.path().join("target")).unwrap();
    let model = pretrain::<f32>(&source, &cfg).unwrap().model;
    let run = run_ugtst(&model, &target, &cfg, None, None).map_err(|e| e.to_string())?;
    let p = &run.partition;
    ensure!(run.report.label_reads == p.m, "read {} labels for M = {}", run.report.label_reads, p.m);
    let s1: BTreeSet<&String> = run.stage1_ids.iter().collect();
    let expect: BTreeSet<&String> = p.d_ta.iter().chain(&p.d_ts).collect();
    ensure!(s1 == expect, "stage-1 set differs from d_ta ∪ d_ts");
    let all: BTreeSet<String> = target.ids().into_iter().collect();
    let s2: BTreeSet<String> = run.stage2_ids.iter().cloned().collect();
    ensure!(s2 == all, "stage-2 set differs from the target set");
    Ok(format!(
        "N={} M={} N_tu={}: {} label reads, stage 1 = {} slices, stage 2 = {}",
        target.len(),
        p.m,
        p.n_tu,
        run.report.label_reads,
        s1.len(),
        s2.len()
    ))
}

// 9 ------------------------------------------------------------------------

fn shift_ordering() -> Outcome {
    const SEEDS: u64 = 5;
    let (mut src_dom, mut tgt_src, mut s1, mut s2, mut rnd, mut gap) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut lines = Vec::new();
    for seed in 0..SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { master_seed: seed, ..RunConfig::default() };
        let (s, t, e) = cfg.synth_specs();
        let source_eval = DomainSpec { seed: e.seed, num_cases: e.num_cases, ..s.clone() };
        let source = generate(&s, "source", dir.path().join("source")).unwrap();
        let source_held_out = generate(&source_eval, "source_eval", dir.path().join("source_eval")).unwrap();
        let target = generate(&t, "target", dir.path().join("target")).unwrap();
        let target_eval = generate(&e, "target_eval", dir.path().join("target_eval")).unwrap();
        let model = pretrain::<f32>(&source, &cfg).unwrap().model;
        let aug = cfg.eval_tta.then(|| cfg.aug());
        let (sd, _) = summarize(&evaluate_cases(&ModelPredictor::<_, f32>::new(&model, aug), &source_held_out).unwrap());
        let dice = |strategy| -> Result<(f64, f64, f64), String> {
            let c = RunConfig { select_strategy: strategy, ..cfg.clone() };
            let r = run_ugtst(&model, &target, &c, None, Some(&target_eval)).map_err(|e| e.to_string())?;
            let ev = r.report.eval.unwrap();
            Ok((ev.source.mean_dsc, ev.stage1.mean_dsc, ev.stage2.mean_dsc))
        };
        let (ts, u1, u2) = dice(Strategy::Ugtst)?;
        let (_, _, r2) = dice(Strategy::Random)?;
        lines.push(format!("seed {seed}: src {sd:.3} tgt {ts:.3} ugtst {u1:.3}/{u2:.3} random {r2:.3}"));
        src_dom += sd;
        tgt_src += ts;
        s1 += u1;
        s2 += u2;
        rnd += r2;
        gap += u2 - r2;
    }
    for l in &lines {
        println!("      {l}");
    }
    let n = SEEDS as f64;
    let (src_dom, tgt_src, s1, s2, rnd, gap) = (src_dom / n, tgt_src / n, s1 / n, s2 / n, rnd / n, gap / n);
    let summary = format!(
        "{SEEDS} seeds: source-domain {src_dom:.3}, source-only target {tgt_src:.3}, ugtst stage1 {s1:.3} stage2 {s2:.3}, random stage2 {rnd:.3}, paired gap {gap:+.4}"
    );
    ensure!(tgt_src < src_dom, "(a) shift not real: {summary}");
    ensure!(gap > 0.0, "(b) ugtst not above random: {summary}");
    ensure!(s2 >= s1, "(c) stage 2 below stage 1: {summary}");
    Ok(summary)
}

// 10 -----------------------------------------------------------------------

fn ugtst(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ugtst")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("ugtst {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// gen-synth + pretrain for one seed; returns (data dir, source model path).
fn prepare(root: &Path, seed: u64, config: Option<&Path>) -> Result<(PathBuf, PathBuf), String> {
    let data = root.join("data");
    let src = root.join("source");
    let seed_s = seed.to_string();
    let mut base = vec!["--seed", &seed_s];
    if let Some(c) = config {
        base.extend(["--config", p(c)]);
    }
    let with = |extra: &[&str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    let run = |v: Vec<String>| ugtst(&v.iter().map(String::as_str).collect::<Vec<_>>());
    run(with(&["gen-synth", "--out", p(&data)]))?;
    run(with(&["pretrain", "--manifest", p(&data.join("source/manifest.json")), "--out", p(&src)]))?;
    Ok((data, src.join("source.model")))
}

fn capacity_sweep() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    let seeds = [0u64, 1];
    for seed in seeds {
        let sd = root.path().join(format!("seed{seed}"));
        let (data, model) = prepare(&sd, seed, None)?;
        for mult in [1, 2, 4, 8] {
            let cfg = sd.join(format!("cap{mult}.json"));
            fs::write(&cfg, format!("{{\"select.capacity_multiplier\": {mult}}}")).unwrap();
            let out = sd.join(format!("run_cap{mult}"));
            ugtst(&[
                "--config", p(&cfg), "--seed", &seed.to_string(), "adapt",
                "--manifest", p(&data.join("target/manifest.json")),
                "--source-model", p(&model),
                "--eval-manifest", p(&data.join("target_eval/manifest.json")),
                "--out", p(&out),
            ])?;
            runs.push(out);
        }
    }
    let rep = root.path().join("report");
    let mut args = vec!["report", "--out", p(&rep)];
    args.extend(runs.iter().map(|r| p(r)));
    ugtst(&args)?;

    let mut per_seed = std::collections::BTreeMap::<u64, Vec<usize>>::new();
    let mut rdr = csv::Reader::from_path(rep.join("runs.csv")).map_err(|e| e.to_string())?;
    let hdr = rdr.headers().unwrap().clone();
    let col = |name: &str| hdr.iter().position(|h| h == name).unwrap();
    let (seed_col, ntu_col, m_col) = (col("master_seed"), col("n_tu"), col("m"));
    let mut m = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        m = rec[m_col].parse().unwrap();
        per_seed.entry(rec[seed_col].parse().unwrap()).or_default().push(rec[ntu_col].parse().unwrap());
    }
    for (seed, ntu) in &per_seed {
        ensure!(ntu.len() == 4, "seed {seed}: {} rows", ntu.len());
        let got: BTreeSet<usize> = ntu.iter().copied().collect();
        let want: BTreeSet<usize> = [m, 2 * m, 4 * m, 8 * m].into_iter().collect();
        ensure!(got == want, "seed {seed}: N_tu values {got:?}, expected {want:?}");
    }
    ensure!(per_seed.len() == seeds.len(), "runs.csv covers {} seeds", per_seed.len());
    let curve = fs::read_to_string(rep.join("comparison.csv")).unwrap();
    ensure!(curve.lines().count() == 5, "comparison.csv has {} data rows", curve.lines().count() - 1);
    for l in curve.lines() {
        println!("      {l}");
    }
    Ok(format!("{} seeds x 4 rows, N_tu = M,2M,4M,8M with M = {m}", per_seed.len()))
}

// 11 -----------------------------------------------------------------------

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("config.json");
    fs::write(&cfg, "{\"master_seed\": 3, \"select.strategy\": \"ugtst\"}\n").unwrap();
    let mut dirs = Vec::new();
    for k in 0..2 {
        let d = root.path().join(format!("exec{k}"));
        let (data, model) = prepare(&d, 3, Some(&cfg))?;
        ugtst(&[
            "--config", p(&cfg), "adapt",
            "--manifest", p(&data.join("target/manifest.json")),
            "--source-model", p(&model),
            "--eval-manifest", p(&data.join("target_eval/manifest.json")),
            "--out", p(&d.join("run")),
        ])?;
        dirs.push(d);
    }
    let files = ["run/report.json", "run/selection.csv", "source/source.model", "run/stage1.model", "run/stage2.model"];
    for f in files {
        let a = fs::read(dirs[0].join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = fs::read(dirs[1].join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure!(a == b, "{f} differs between executions");
    }
    Ok(format!("{} artifacts byte-identical across two executions", files.len()))
}
