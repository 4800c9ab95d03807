//! One-round annotation-set selection.
//!
//! The target set is split by GAUA score into an uncertainty-candidate set
//! (`d_tu`, the `N_tu` highest scores) and an assumed-stable remainder
//! (`d_ts`). k-means++ then clusters the encoder features of `d_tu` into `M`
//! groups and the slice nearest each centroid is sent for annotation
//! (`d_ta`). Baseline strategies replace one or both steps.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segmenter::Segmenter;
use crate::tensorio::DatasetManifest;
use crate::uncertainty::SliceUncertainty;

pub const LLOYD_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ugtst,
    Random,
    LeastConfidence,
    MeanEntropy,
    Centroid,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Ugtst,
        Strategy::Random,
        Strategy::LeastConfidence,
        Strategy::MeanEntropy,
        Strategy::Centroid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ugtst => "ugtst",
            Strategy::Random => "random",
            Strategy::LeastConfidence => "least_confidence",
            Strategy::MeanEntropy => "mean_entropy",
            Strategy::Centroid => "centroid",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown selection strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub budget_fraction: f64,
    pub capacity_multiplier: usize,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            budget_fraction: 0.05,
            capacity_multiplier: 4,
            seed: 0,
            strategy: Strategy::Ugtst,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "budget fraction must be in (0, 1], got {}",
                self.budget_fraction
            )));
        }
        if self.capacity_multiplier == 0 {
            return Err(Error::Config("capacity multiplier must be >= 1".into()));
        }
        Ok(())
    }

    /// Annotation budget `M = max(1, round(fraction · N_t))`.
    pub fn budget(&self, n_t: usize) -> usize {
        ((self.budget_fraction * n_t as f64).round() as usize).clamp(1, n_t.max(1))
    }

    /// Candidate-set capacity `N_tu = min(N_t, multiplier · M)`.
    pub fn capacity(&self, n_t: usize) -> usize {
        (self.capacity_multiplier * self.budget(n_t)).min(n_t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetTag {
    /// Selected for annotation.
    Ta,
    /// Uncertain but not selected.
    Tu,
    /// Assumed stable.
    Ts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub slice_id: String,
    pub u: f64,
    pub set: SetTag,
    pub cluster_id: Option<usize>,
    pub distance_to_centroid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPartition {
    pub strategy: Strategy,
    pub seed: u64,
    pub m: usize,
    pub n_tu: usize,
    pub d_ta: Vec<String>,
    pub d_tu: Vec<String>,
    pub d_ts: Vec<String>,
    /// One record per slice, in score order.
    pub records: Vec<SelectionRecord>,
}

impl SelectionPartition {
    pub fn is_annotated(&self, id: &str) -> bool {
        self.d_ta.iter().any(|x| x == id)
    }
}

/// Descending score, ties by ascending id.
fn rank_desc(keyed: &mut [(f64, &str, usize)]) {
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
}

fn top_indices(scores: &[SliceUncertainty], n: usize, key: impl Fn(&SliceUncertainty) -> f64) -> Vec<usize> {
    let mut keyed: Vec<(f64, &str, usize)> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| (key(s), s.slice_id.as_str(), i))
        .collect();
    rank_desc(&mut keyed);
    keyed.into_iter().take(n).map(|k| k.2).collect()
}

fn ids_in_order(scores: &[SliceUncertainty], pick: &BTreeSet<usize>) -> Vec<String> {
    pick.iter().map(|&i| scores[i].slice_id.clone()).collect()
}

/// Splits slices into the `n_tu` highest-`u` candidates and the rest. Both
/// lists keep the input order.
pub fn partition_by_uncertainty(scores: &[SliceUncertainty], n_tu: usize) -> Result<(Vec<String>, Vec<String>)> {
    if scores.is_empty() {
        return Err(Error::Config("no scores to partition".into()));
    }
    if n_tu > scores.len() {
        return Err(Error::Config(format!("capacity {n_tu} exceeds {} slices", scores.len())));
    }
    let top: BTreeSet<usize> = top_indices(scores, n_tu, |s| s.u).into_iter().collect();
    let rest: BTreeSet<usize> = (0..scores.len()).filter(|i| !top.contains(i)).collect();
    Ok((ids_in_order(scores, &top), ids_in_order(scores, &rest)))
}

/// Encoder features (channel-wise global average pooling) for the given slices.
pub fn extract_features<T: Scalar>(
    model: &Segmenter<T>,
    manifest: &DatasetManifest,
    ids: &[String],
) -> Result<BTreeMap<String, Vec<T>>> {
    let mut out = BTreeMap::new();
    for id in ids {
        let pos = manifest
            .position(id)
            .ok_or_else(|| Error::Manifest(format!("unknown slice {id}")))?;
        let entry = &manifest.slices[pos];
        let image: crate::Tensor<T> = manifest.load_image(entry)?.cast();
        out.insert(id.clone(), model.features(&image).map_err(|e| e.in_slice(id))?);
    }
    Ok(out)
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Result of clustering a point set with k-means++ and picking the point
/// nearest each centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<T> {
    /// Index of the picked point for each centroid, in centroid order.
    pub picked: Vec<usize>,
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    pub iterations: usize,
}

fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (k, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// k-means++ seeding, Lloyd iterations, and nearest-to-centroid picks.
///
/// `ids` break distance ties (ascending) and must align with `points`.
pub fn kmeans_pp<T: Scalar>(points: &[Vec<T>], ids: &[&str], m: usize, seed: u64) -> Result<Clustering<T>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::Config(format!("cannot pick {m} of {n} points")));
    }
    if ids.len() != n {
        return Err(Error::Shape("ids and points differ in length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]]).as_f64()).collect();
    while chosen.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > r {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]).as_f64());
        }
    }

    let dim = points[0].len();
    let mut centroids: Vec<Vec<T>> = chosen.iter().map(|&i| points[i].clone()).collect();
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < LLOYD_MAX_ITERS {
        iterations += 1;
        let mut changed = false;
        let mut dist = vec![T::zero(); n];
        for (i, p) in points.iter().enumerate() {
            let (k, d) = nearest(p, &centroids);
            dist[i] = d;
            if assignment[i] != k {
                assignment[i] = k;
                changed = true;
            }
        }
        // empty-cluster repair: move the point farthest from its centroid
        for k in 0..m {
            let mut sizes = vec![0usize; m];
            for &a in &assignment {
                sizes[a] += 1;
            }
            if sizes[k] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[assignment[i]] > 1)
                .max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap_or(Ordering::Equal).then(b.cmp(&a)))
                .expect("m <= n leaves a cluster with spare points");
            assignment[far] = k;
            dist[far] = T::zero();
            centroids[k] = points[far].clone();
            changed = true;
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![T::zero(); dim]; m];
        let mut counts = vec![0usize; m];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for k in 0..m {
            let c = T::from_usize_lossy(counts[k]);
            centroids[k] = sums[k].iter().map(|&s| s / c).collect();
        }
    }

    let mut taken = vec![false; n];
    let mut picked = Vec::with_capacity(m);
    for c in &centroids {
        let mut order: Vec<(T, &str, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (sq_dist(p, c), ids[i], i))
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1)));
        let i = order
            .iter()
            .map(|o| o.2)
            .find(|&i| !taken[i])
            .expect("m <= n leaves an unpicked point");
        taken[i] = true;
        picked.push(i);
    }
    Ok(Clustering {
        picked,
        assignment,
        centroids,
        iterations,
    })
}

/// Selects `m` ids from `features` via k-means++ clustering.
pub fn kmeanspp_select<T: Scalar>(features: &BTreeMap<String, Vec<T>>, m: usize, seed: u64) -> Result<Vec<String>> {
    let ids: Vec<&str> = features.keys().map(String::as_str).collect();
    let points: Vec<Vec<T>> = features.values().cloned().collect();
    let c = kmeans_pp(&points, &ids, m, seed)?;
    Ok(c.picked.iter().map(|&i| ids[i].to_string()).collect())
}

fn cluster_by_ids<T: Scalar>(
    features: &BTreeMap<String, Vec<T>>,
    ids: &[String],
    m: usize,
    seed: u64,
) -> Result<(Vec<String>, BTreeMap<String, (usize, f64)>)> {
    let points = ids
        .iter()
        .map(|id| {
            features
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no feature vector for slice {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let c = kmeans_pp(&points, &refs, m, seed)?;
    let info = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let k = c.assignment[i];
            (id.clone(), (k, sq_dist(&points[i], &c.centroids[k]).as_f64().sqrt()))
        })
        .collect();
    Ok((c.picked.iter().map(|&i| ids[i].clone()).collect(), info))
}

/// Runs the configured strategy. `features` must cover the slices the
/// strategy clusters (`d_tu` for ugtst, every slice for centroid).
pub fn select<T: Scalar>(
    scores: &[SliceUncertainty],
    features: &BTreeMap<String, Vec<T>>,
    cfg: &SelectionConfig,
) -> Result<SelectionPartition> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(Error::Config("no slices to select from".into()));
    }
    let n = scores.len();
    let m = cfg.budget(n);
    let n_tu = cfg.capacity(n);
    let all_ids: Vec<String> = scores.iter().map(|s| s.slice_id.clone()).collect();
    let mut cluster_info = BTreeMap::new();

    let (d_ta, d_tu): (Vec<String>, Vec<String>) = match cfg.strategy {
        Strategy::Ugtst => {
            let (d_tu, _) = partition_by_uncertainty(scores, n_tu)?;
            let (ta, info) = cluster_by_ids(features, &d_tu, m, cfg.seed)?;
            cluster_info = info;
            (ta, d_tu)
        }
        Strategy::Random => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
            let ta = order[..m].iter().map(|&i| all_ids[i].clone()).collect();
            let tu: BTreeSet<usize> = order[..n_tu].iter().copied().collect();
            (ta, ids_in_order(scores, &tu))
        }
        Strategy::LeastConfidence | Strategy::MeanEntropy => {
            let key = |s: &SliceUncertainty| -> Result<f64> {
                match cfg.strategy {
                    Strategy::LeastConfidence => s.mean_confidence.map(|c| -c).ok_or_else(|| {
                        Error::Config(format!("slice {} has no confidence score", s.slice_id))
                    }),
                    _ => Ok(s.mean_entropy),
                }
            };
            let keys = scores.iter().map(key).collect::<Result<Vec<f64>>>()?;
            let mut keyed: Vec<(f64, &str, usize)> = keys
                .iter()
                .zip(scores)
                .enumerate()
                .map(|(i, (&k, s))| (k, s.slice_id.as_str(), i))
                .collect();
            rank_desc(&mut keyed);
            let ta = keyed[..m].iter().map(|k| all_ids[k.2].clone()).collect();
            let tu: BTreeSet<usize> = keyed[..n_tu].iter().map(|k| k.2).collect();
            (ta, ids_in_order(scores, &tu))
        }
        Strategy::Centroid => {
            let (ta, info) = cluster_by_ids(features, &all_ids, m, cfg.seed)?;
            cluster_info = info;
            let ta_set: BTreeSet<&String> = ta.iter().collect();
            let mut tu: BTreeSet<usize> = (0..n).filter(|&i| ta_set.contains(&all_ids[i])).collect();
            let fill = top_indices(scores, n, |s| s.u)
                .into_iter()
                .filter(|i| !tu.contains(i))
                .take(n_tu - m)
                .collect::<Vec<_>>();
            tu.extend(fill);
            (ta, ids_in_order(scores, &tu))
        }
    };

    let ta_set: BTreeSet<&str> = d_ta.iter().map(String::as_str).collect();
    let tu_set: BTreeSet<&str> = d_tu.iter().map(String::as_str).collect();
    let d_ts: Vec<String> = all_ids.iter().filter(|id| !tu_set.contains(id.as_str())).cloned().collect();
    let records = scores
        .iter()
        .map(|s| {
            let id = s.slice_id.as_str();
            let set = if ta_set.contains(id) {
                SetTag::Ta
            } else if tu_set.contains(id) {
                SetTag::Tu
            } else {
                SetTag::Ts
            };
            let info = cluster_info.get(id);
            SelectionRecord {
                slice_id: s.slice_id.clone(),
                u: s.u,
                set,
                cluster_id: info.map(|i| i.0),
                distance_to_centroid: info.map(|i| i.1),
            }
        })
        .collect();
    let mut d_ta_ordered: Vec<String> = all_ids.iter().filter(|id| ta_set.contains(id.as_str())).cloned().collect();
    d_ta_ordered.dedup();
    Ok(SelectionPartition {
        strategy: cfg.strategy,
        seed: cfg.seed,
        m,
        n_tu,
        d_ta: d_ta_ordered,
        d_tu,
        d_ts,
        records,
    })
}

#[derive(Serialize)]
struct SelectionRow<'a> {
    slice_id: &'a str,
    u: f64,
    set: SetTag,
    cluster_id: Option<usize>,
    distance_to_centroid: Option<f64>,
    strategy: Strategy,
    seed: u64,
}

/// Selection report CSV: `slice_id,u,set,cluster_id,distance_to_centroid,strategy,seed`.
pub fn write_selection_csv(path: impl AsRef<Path>, p: &SelectionPartition) -> Result<()> {
    let path = path.as_ref();
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in &p.records {
        w.serialize(SelectionRow {
            slice_id: &r.slice_id,
            u: r.u,
            set: r.set,
            cluster_id: r.cluster_id,
            distance_to_centroid: r.distance_to_centroid,
            strategy: p.strategy,
            seed: p.seed,
        })
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
