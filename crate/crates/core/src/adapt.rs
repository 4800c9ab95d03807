//! Tiered self-training on the target domain.
//!
//! Stage 1 fine-tunes the source model on the annotated slices plus
//! source-model pseudo-labels for the stable set; the uncertain-but-unlabelled
//! slices are left out. The stage-1 model then relabels every unannotated
//! slice and stage 2 fine-tunes on the whole target set.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugConfig;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_cases, summarize, write_metrics_csv, EvalResult, ModelPredictor};
use crate::scalar::Scalar;
use crate::segmenter::{argmax_labels, save_model, train, write_trace_csv, Segmenter, TraceRow, TrainConfig, TrainOutcome, TrainSample};
use crate::select::{extract_features, select, write_selection_csv, SelectionPartition};
use crate::tensorio::{write_tensor, DatasetManifest, Tensor};
use crate::uncertainty::{ensemble_slice, persist_probs, score_dataset, write_scores_csv};

/// Ground-truth access restricted to an allowed id set, with a read counter.
pub struct LabelOracle<'a> {
    manifest: &'a DatasetManifest,
    allowed: BTreeSet<String>,
    reads: Cell<usize>,
}

impl<'a> LabelOracle<'a> {
    pub fn new(manifest: &'a DatasetManifest, allowed: impl IntoIterator<Item = String>) -> Self {
        Self {
            manifest,
            allowed: allowed.into_iter().collect(),
            reads: Cell::new(0),
        }
    }

    pub fn annotate(&self, id: &str) -> Result<Tensor<u8>> {
        if !self.allowed.contains(id) {
            return Err(Error::Manifest(format!("label of {id} requested outside the annotation set")));
        }
        let pos = self
            .manifest
            .position(id)
            .ok_or_else(|| Error::Manifest(format!("unknown slice {id}")))?;
        let label = self.manifest.load_label(&self.manifest.slices[pos])?;
        self.reads.set(self.reads.get() + 1);
        Ok(label)
    }

    pub fn reads(&self) -> usize {
        self.reads.get()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationStage {
    Source,
    Stage1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub stage: GenerationStage,
    pub model_tag: String,
    pub labels: BTreeMap<String, Tensor<u8>>,
}

/// Hard labels from ensemble probabilities (argmax, ties to the lowest class).
pub fn make_pseudo_labels<T: Scalar>(
    probs: &BTreeMap<String, Tensor<T>>,
    stage: GenerationStage,
    model_tag: &str,
) -> Result<PseudoLabelSet> {
    let labels = probs
        .iter()
        .map(|(id, p)| Ok((id.clone(), argmax_labels(p).map_err(|e| e.in_slice(id))?)))
        .collect::<Result<_>>()?;
    Ok(PseudoLabelSet {
        stage,
        model_tag: model_tag.to_string(),
        labels,
    })
}

/// Selection result, the annotations it paid for, and the two stage configs.
#[derive(Debug, Clone)]
pub struct AdaptationPlan {
    pub partition: SelectionPartition,
    pub annotations: BTreeMap<String, Tensor<u8>>,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
}

impl AdaptationPlan {
    pub fn validate(&self) -> Result<()> {
        let ta: BTreeSet<&String> = self.partition.d_ta.iter().collect();
        let ann: BTreeSet<&String> = self.annotations.keys().collect();
        if ta != ann {
            return Err(Error::Config("annotations must cover exactly the selected slices".into()));
        }
        self.stage1.validate()?;
        self.stage2.validate()
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome<T> {
    pub model: Segmenter<T>,
    pub trace: Vec<TraceRow>,
    /// Training slices in manifest order.
    pub training_ids: Vec<String>,
    pub from_annotations: usize,
    pub from_pseudo: usize,
}

fn fine_tune<T: Scalar>(
    init: &Segmenter<T>,
    manifest: &DatasetManifest,
    plan: &AdaptationPlan,
    pseudo: &PseudoLabelSet,
    include: impl Fn(&str) -> bool,
    cfg: &TrainConfig,
) -> Result<StageOutcome<T>> {
    let mut data = Vec::new();
    let (mut from_annotations, mut from_pseudo) = (0, 0);
    for entry in manifest.slices.iter().filter(|e| include(&e.id)) {
        let target = if let Some(l) = plan.annotations.get(&entry.id) {
            from_annotations += 1;
            l.clone()
        } else if let Some(l) = pseudo.labels.get(&entry.id) {
            from_pseudo += 1;
            l.clone()
        } else {
            return Err(Error::Manifest(format!("no label or pseudo-label for slice {}", entry.id)));
        };
        data.push(TrainSample {
            id: entry.id.clone(),
            image: manifest.load_image(entry)?.cast(),
            target,
            weight: 1.0,
        });
    }
    let out = train(init, &data, cfg)?;
    Ok(StageOutcome {
        model: out.model,
        trace: out.trace,
        training_ids: data.into_iter().map(|s| s.id).collect(),
        from_annotations,
        from_pseudo,
    })
}

/// Stage 1: `d_ta` with true labels plus `d_ts` with source pseudo-labels,
/// initialised from the source weights.
pub fn stage1<T: Scalar>(
    source: &Segmenter<T>,
    manifest: &DatasetManifest,
    plan: &AdaptationPlan,
    pseudo: &PseudoLabelSet,
) -> Result<StageOutcome<T>> {
    plan.validate()?;
    let p = &plan.partition;
    let keep: BTreeSet<&str> = p.d_ta.iter().chain(&p.d_ts).map(String::as_str).collect();
    fine_tune(source, manifest, plan, pseudo, |id| keep.contains(id), &plan.stage1)
}

/// Pseudo-labels from the stage-1 ensemble for every slice outside `d_ta`.
pub fn regenerate<T: Scalar>(
    m_t1: &Segmenter<T>,
    manifest: &DatasetManifest,
    plan: &AdaptationPlan,
    aug: &AugConfig,
) -> Result<(PseudoLabelSet, BTreeMap<String, Tensor<T>>)> {
    let mut probs = BTreeMap::new();
    for entry in &manifest.slices {
        if !plan.partition.is_annotated(&entry.id) {
            probs.insert(entry.id.clone(), ensemble_slice(m_t1, manifest, entry, aug)?);
        }
    }
    Ok((make_pseudo_labels(&probs, GenerationStage::Stage1, "stage1")?, probs))
}

/// Stage 2: every target slice, initialised from the stage-1 weights.
pub fn stage2<T: Scalar>(
    m_t1: &Segmenter<T>,
    manifest: &DatasetManifest,
    plan: &AdaptationPlan,
    regenerated: &PseudoLabelSet,
) -> Result<StageOutcome<T>> {
    plan.validate()?;
    fine_tune(m_t1, manifest, plan, regenerated, |_| true, &plan.stage2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub train_size: usize,
    pub from_annotations: usize,
    pub from_pseudo: usize,
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

impl StageReport {
    fn from_outcome<T>(o: &StageOutcome<T>) -> Self {
        Self {
            train_size: o.training_ids.len(),
            from_annotations: o.from_annotations,
            from_pseudo: o.from_pseudo,
            final_loss: o.trace.last().map_or(f64::NAN, |r| r.loss),
            losses: o.trace.iter().map(|r| r.loss).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_dsc: f64,
    pub mean_hd95: f64,
    pub cases: Vec<EvalResult>,
}

impl EvalSummary {
    pub fn new(cases: Vec<EvalResult>) -> Self {
        let (mean_dsc, mean_hd95) = summarize(&cases);
        Self {
            mean_dsc,
            mean_hd95,
            cases,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEval {
    pub source: EvalSummary,
    pub stage1: EvalSummary,
    pub stage2: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub strategy: String,
    pub master_seed: u64,
    pub n_t: usize,
    pub m: usize,
    pub n_tu: usize,
    pub d_ta: Vec<String>,
    pub label_reads: usize,
    pub stage1: StageReport,
    pub stage2: StageReport,
    pub eval: Option<RunEval>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub m_t1: Segmenter<T>,
    pub m_t2: Segmenter<T>,
    pub partition: SelectionPartition,
    pub stage1_ids: Vec<String>,
    pub stage2_ids: Vec<String>,
    pub report: RunReport,
}

fn write_labels(dir: &Path, labels: &BTreeMap<String, Tensor<u8>>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, l) in labels {
        write_tensor(dir.join(format!("{id}.ugts")), l)?;
    }
    Ok(())
}

fn evaluate_models<T: Scalar>(
    models: &[&Segmenter<T>; 3],
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<RunEval> {
    let aug = cfg.eval_tta.then(|| cfg.aug());
    let mut out = Vec::with_capacity(3);
    for (m, name) in models.iter().zip(["source", "stage1", "stage2"]) {
        let cases = evaluate_cases(&ModelPredictor::<_, T>::new(*m, aug.clone()), manifest)?;
        if let Some(d) = out_dir {
            write_metrics_csv(d.join(format!("eval_{name}.csv")), &cases)?;
        }
        out.push(EvalSummary::new(cases));
    }
    let [source, stage1, stage2] = <[EvalSummary; 3]>::try_from(out).expect("three models");
    Ok(RunEval { source, stage1, stage2 })
}

/// Trains a freshly initialised segmenter on every labelled slice of a
/// source manifest.
pub fn pretrain<T: Scalar>(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let data = manifest
        .slices
        .iter()
        .map(|entry| {
            Ok(TrainSample {
                id: entry.id.clone(),
                image: manifest.load_image(entry)?.cast(),
                target: manifest.load_label(entry)?,
                weight: 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let init = Segmenter::init(manifest.num_classes, cfg.init_seed())?;
    train(&init, &data, &cfg.source_train())
}

/// Scores the target set, selects and annotates `d_ta`, then runs both
/// stages. When `out_dir` is given every intermediate artifact is written
/// there; when `eval` is given the source, stage-1 and stage-2 models are
/// scored on it.
pub fn run_ugtst<T: Scalar>(
    source: &Segmenter<T>,
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
    eval: Option<&DatasetManifest>,
) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    if let Some(d) = out_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let scoring = cfg.scoring();

    let scored = score_dataset(source, manifest, &scoring).map_err(|e| e.in_stage("score"))?;
    let ids = manifest.ids();
    if let Some(d) = out_dir {
        write_scores_csv(d.join("scores.csv"), &scored.records)?;
        persist_probs(d.join("source_probs"), &ids, &scored.probs)?;
    }

    let features = extract_features(source, manifest, &ids).map_err(|e| e.in_stage("select"))?;
    let partition = select(&scored.records, &features, &cfg.selection()).map_err(|e| e.in_stage("select"))?;
    if let Some(d) = out_dir {
        write_selection_csv(d.join("selection.csv"), &partition)?;
    }

    let oracle = LabelOracle::new(manifest, partition.d_ta.iter().cloned());
    let annotations = partition
        .d_ta
        .iter()
        .map(|id| Ok((id.clone(), oracle.annotate(id)?)))
        .collect::<Result<BTreeMap<_, _>>>()
        .map_err(|e| e.in_stage("annotate"))?;
    let plan = AdaptationPlan {
        partition,
        annotations,
        stage1: cfg.stage1_train(),
        stage2: cfg.stage2_train(),
    };

    let stable: BTreeSet<&str> = plan.partition.d_ts.iter().map(String::as_str).collect();
    let source_probs: BTreeMap<String, Tensor<T>> = ids
        .iter()
        .zip(&scored.probs)
        .filter(|(id, _)| stable.contains(id.as_str()))
        .map(|(id, p)| (id.clone(), p.clone()))
        .collect();
    let pseudo0 = make_pseudo_labels(&source_probs, GenerationStage::Source, "source")?;
    let s1 = stage1(source, manifest, &plan, &pseudo0).map_err(|e| e.in_stage("stage1"))?;
    if let Some(d) = out_dir {
        save_model(d.join("stage1.model"), &s1.model)?;
        write_trace_csv(d.join("stage1_trace.csv"), &s1.trace)?;
    }

    let (pseudo1, _) = regenerate(&s1.model, manifest, &plan, &scoring.aug).map_err(|e| e.in_stage("regenerate"))?;
    if let Some(d) = out_dir {
        write_labels(&d.join("pseudo_stage1"), &pseudo1.labels)?;
    }

    let s2 = stage2(&s1.model, manifest, &plan, &pseudo1).map_err(|e| e.in_stage("stage2"))?;
    if let Some(d) = out_dir {
        save_model(d.join("stage2.model"), &s2.model)?;
        write_trace_csv(d.join("stage2_trace.csv"), &s2.trace)?;
    }

    let eval = eval
        .map(|em| evaluate_models(&[source, &s1.model, &s2.model], em, cfg, out_dir))
        .transpose()
        .map_err(|e| e.in_stage("evaluate"))?;

    let report = RunReport {
        config: cfg.clone(),
        strategy: plan.partition.strategy.to_string(),
        master_seed: cfg.master_seed,
        n_t: manifest.len(),
        m: plan.partition.m,
        n_tu: plan.partition.n_tu,
        d_ta: plan.partition.d_ta.clone(),
        label_reads: oracle.reads(),
        stage1: StageReport::from_outcome(&s1),
        stage2: StageReport::from_outcome(&s2),
        eval,
    };
    if let Some(d) = out_dir {
        write_report(d.join("report.json"), &report)?;
    }
    Ok(RunOutcome {
        m_t1: s1.model,
        m_t2: s2.model,
        partition: plan.partition,
        stage1_ids: s1.training_ids,
        stage2_ids: s2.training_ids,
        report,
    })
}

pub fn write_report(path: impl AsRef<Path>, report: &RunReport) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(report).expect("report serialises");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
