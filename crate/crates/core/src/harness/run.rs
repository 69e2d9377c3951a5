use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{DatasetSource, ExperimentConfig, Method, Mode, ProviderSettings};
use super::engineer::{engineering_base, engineering_part};
use super::nominate::{nominate_features, Nomination};
use super::provider::build_provider;
use super::report::{
    summarize, Artifacts, CacheProvenance, Provenance, RunReport, ScoreRow, SelectionArtifact, TaskSeed,
};
use super::synthetic::{generate_synthetic, SyntheticTruth};
use super::HarnessError;
use crate::baselines::{gini_select, lasso_select, pca_select};
use crate::dataset::{
    load_dataset, load_gene_map, sample_few_shot, write_dataset, DatasetError, GenotypeDataset, LabeledMatrix,
};
use crate::llm::LlmProvider;
use crate::models::{auroc, fit_model, grid_search_cv, AurocAverage, ClassifierKind, Hyper, ModelError, TrainedModel};
use crate::seeding::{derive_seed, rng_for};
use crate::selection::{hierarchical_select, relevance_filter, sequential_forward_select, SelectionResult};

/// A loaded dataset plus what is known about how it was made.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub dataset: GenotypeDataset,
    pub truth: Option<SyntheticTruth>,
    pub dataset_sha256: String,
    pub gene_map: Option<BTreeMap<String, String>>,
}

impl ExperimentData {
    pub fn from_dataset(dataset: GenotypeDataset, truth: Option<SyntheticTruth>) -> Self {
        let mut bytes = Vec::new();
        write_dataset(&dataset, &mut bytes).expect("in-memory write");
        Self {
            dataset,
            truth,
            dataset_sha256: hex::encode(Sha256::digest(&bytes)),
            gene_map: None,
        }
    }
}

pub fn load_experiment_data(cfg: &ExperimentConfig) -> Result<ExperimentData, HarnessError> {
    match &cfg.dataset {
        DatasetSource::Synthetic(spec) => {
            let (ds, truth) = generate_synthetic(spec)?;
            Ok(ExperimentData::from_dataset(ds, Some(truth)))
        }
        DatasetSource::Csv {
            path,
            label_column,
            gene_map,
        } => {
            let bytes = std::fs::read(path).map_err(|e| DatasetError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let dataset = load_dataset(path, label_column)?;
            let gene_map = gene_map.as_ref().map(load_gene_map).transpose()?;
            Ok(ExperimentData {
                dataset,
                truth: None,
                dataset_sha256: hex::encode(Sha256::digest(&bytes)),
                gene_map,
            })
        }
    }
}

/// One (shot count, repeat) unit of work with its own seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Task {
    pub shots: usize,
    pub repeat: usize,
    pub seed: u64,
}

pub fn task_plan(cfg: &ExperimentConfig) -> Vec<Task> {
    cfg.shot_counts
        .iter()
        .flat_map(|&shots| {
            (0..cfg.repeats).map(move |repeat| Task {
                shots,
                repeat,
                seed: derive_seed(cfg.seed, &[0x7A5C, shots as u64, repeat as u64]),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Few-shot training rows and every remaining row as the test set.
pub fn split_rows(ds: &GenotypeDataset, shots: usize, seed: u64) -> Result<Split, HarnessError> {
    let train = sample_few_shot(ds, shots, seed)?.indices;
    let mut in_train = vec![false; ds.n_samples()];
    for &i in &train {
        in_train[i] = true;
    }
    let test: Vec<usize> = (0..ds.n_samples()).filter(|&i| !in_train[i]).collect();
    if test.is_empty() {
        return Err(HarnessError::Data(format!(
            "{shots} shots leave no test rows out of {}",
            ds.n_samples()
        )));
    }
    let distinct: BTreeSet<usize> = train.iter().copied().collect();
    if distinct.len() != train.len() || test.iter().any(|i| distinct.contains(i)) {
        return Err(HarnessError::Data("training and test rows overlap".into()));
    }
    Ok(Split { train, test })
}

/// Results of a batch of tasks, merged in task order.
#[derive(Clone, Debug, Default)]
pub(crate) struct Part {
    pub rows: Vec<ScoreRow>,
    pub artifacts: Artifacts,
}

impl Part {
    pub(crate) fn absorb(&mut self, other: Part) {
        self.rows.extend(other.rows);
        let a = other.artifacts;
        self.artifacts.selections.extend(a.selections);
        self.artifacts.feature_sets.extend(a.feature_sets);
        self.artifacts.model_files.extend(a.model_files);
        self.artifacts.warnings.extend(a.warnings);
        if a.nomination.is_some() {
            self.artifacts.nomination = a.nomination;
        }
    }
}

/// A failed run keeps whatever finished before the first failing task.
pub(crate) struct Failure {
    pub partial: Part,
    pub error: HarnessError,
}

impl From<HarnessError> for Failure {
    fn from(error: HarnessError) -> Self {
        Failure {
            partial: Part::default(),
            error,
        }
    }
}

/// Runs `f` over every task on a pool of `cfg.workers` threads. Outputs are
/// merged in task order regardless of completion order.
pub(crate) fn fan_out<F>(cfg: &ExperimentConfig, tasks: &[Task], f: F) -> Result<Part, Failure>
where
    F: Fn(&Task) -> Result<Part, HarnessError> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<Part, HarnessError>> = pool.install(|| tasks.par_iter().map(&f).collect());
    let mut merged = Part::default();
    for r in results {
        match r {
            Ok(p) => merged.absorb(p),
            Err(error) => return Err(Failure { partial: merged, error }),
        }
    }
    Ok(merged)
}

pub(crate) struct Fitted {
    pub model: TrainedModel,
    pub hyper: Hyper,
    pub warnings: Vec<String>,
}

/// Cross-validated hyperparameter choice followed by a refit on all of
/// `train`. When the split cannot support cross-validation the default grid
/// point is used and a warning recorded.
pub(crate) fn fit_tuned(
    train: &LabeledMatrix,
    kind: ClassifierKind,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Fitted, HarnessError> {
    let grid = cfg.grid.points(kind);
    let mut warnings = Vec::new();
    let hyper = match grid_search_cv(train, &grid, cfg.cv_folds, seed) {
        Ok(r) => {
            warnings.extend(r.warnings);
            r.best
        }
        Err(ModelError::Dataset(DatasetError::DegenerateSplit(msg))) | Err(ModelError::DegenerateLabels(msg)) => {
            warnings.push(format!(
                "{} search skipped ({msg}); default hyperparameters used",
                kind.name()
            ));
            cfg.grid.default_point(kind)
        }
        Err(e) => return Err(e.into()),
    };
    let model = fit_model(train, &hyper, seed)?;
    Ok(Fitted { model, hyper, warnings })
}

pub(crate) fn score(model: &TrainedModel, test: &LabeledMatrix) -> Result<f64, HarnessError> {
    Ok(auroc(
        &model.predict_proba(test.x.view()),
        &test.y,
        AurocAverage::Macro,
    )?)
}

pub(crate) fn model_seed(task: &Task) -> u64 {
    derive_seed(task.seed, &[0xF17])
}

pub(crate) fn tag(method: &str, task: &Task, msg: &str) -> String {
    format!("[{method} shots={} repeat={}] {msg}", task.shots, task.repeat)
}

/// Writes `value` under `<output_dir>/models/` when model saving is on and
/// returns the relative path.
pub(crate) fn save_model<T: Serialize>(
    cfg: &ExperimentConfig,
    file: &str,
    value: &T,
) -> Result<Option<String>, HarnessError> {
    let Some(dir) = cfg.output_dir.as_ref().filter(|_| cfg.save_models) else {
        return Ok(None);
    };
    let models = dir.join("models");
    std::fs::create_dir_all(&models).map_err(|e| HarnessError::io(&models, e))?;
    let path = models.join(file);
    let json = serde_json::to_string(value).expect("model serializes");
    std::fs::write(&path, json).map_err(|e| HarnessError::io(&path, e))?;
    Ok(Some(format!("models/{file}")))
}

fn artifact(method: Method, r: &SelectionResult) -> SelectionArtifact {
    SelectionArtifact {
        method: method.name().into(),
        shots: None,
        repeat: None,
        selected: r.selected.clone(),
        scores: r.votes.iter().map(|(k, v)| (k.clone(), *v as f64)).collect(),
        notes: Vec::new(),
    }
}

/// The candidate pool for knowledge-driven selection, optionally narrowed by
/// the relevance filter.
pub(crate) fn candidate_pool(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    llm: &dyn LlmProvider,
    warnings: &mut Vec<String>,
) -> Result<Vec<String>, HarnessError> {
    let all = data.dataset.variant_names().to_vec();
    if !cfg.prefilter {
        return Ok(all);
    }
    let outcome = relevance_filter(&all, &cfg.selection, llm)?;
    if outcome.kept.len() < cfg.selection.d_prime {
        warnings.push(format!(
            "relevance filter kept {} variants, fewer than d'={}; selecting from all variants",
            outcome.kept.len(),
            cfg.selection.d_prime
        ));
        return Ok(all);
    }
    Ok(outcome.kept)
}

/// Data-independent selections for every knowledge-driven method in
/// `methods`, computed once. Also returns the nomination when one was made.
pub fn llm_selections(
    cfg: &ExperimentConfig,
    methods: &[Method],
    data: &ExperimentData,
    llm: &dyn LlmProvider,
) -> Result<(BTreeMap<Method, SelectionArtifact>, Option<Nomination>, Vec<String>), HarnessError> {
    let mut out = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut nomination = None;
    let needs_pool = methods
        .iter()
        .any(|m| matches!(m, Method::Hierarchical | Method::Sequential));
    let pool = if needs_pool {
        candidate_pool(cfg, data, llm, &mut warnings)?
    } else {
        Vec::new()
    };
    for &m in methods {
        match m {
            Method::Hierarchical => {
                out.insert(m, artifact(m, &hierarchical_select(&pool, &cfg.selection, llm)?));
            }
            Method::Sequential => {
                out.insert(m, artifact(m, &sequential_forward_select(&pool, &cfg.selection, llm)?));
            }
            Method::Nominated => {
                let nom = nominate_features(&cfg.phenotype, cfg.nominate_n, llm, Some(data.dataset.variant_names()))?;
                if nom.present.is_empty() {
                    return Err(HarnessError::Data(format!(
                        "none of the {} nominated variants occur in the dataset",
                        nom.nominated.len()
                    )));
                }
                if nom.short_by > 0 || !nom.novel.is_empty() {
                    warnings.push(format!(
                        "nomination returned {} of {} requested; {} not in the dataset",
                        nom.nominated.len(),
                        nom.requested,
                        nom.novel.len()
                    ));
                }
                out.insert(
                    m,
                    SelectionArtifact {
                        method: m.name().into(),
                        shots: None,
                        repeat: None,
                        selected: nom.present.clone(),
                        scores: BTreeMap::new(),
                        notes: Vec::new(),
                    },
                );
                nomination = Some(nom);
            }
            _ => {}
        }
    }
    Ok((out, nomination, warnings))
}

fn data_driven(
    method: Method,
    train: &LabeledMatrix,
    cfg: &ExperimentConfig,
    task: &Task,
) -> Result<SelectionArtifact, HarnessError> {
    let d = cfg.selection.d_prime;
    let seed = derive_seed(task.seed, &[0xBA5E]);
    let (selected, scores, notes) = match method {
        Method::Lasso => {
            let s = lasso_select(train, d, seed)?;
            (s.selected, s.scores, s.notes)
        }
        Method::Pca => {
            let s = pca_select(train, d)?;
            (s.selected, s.scores, s.notes)
        }
        Method::Gini => {
            let s = gini_select(train, d, seed)?;
            (s.selected, s.scores, s.notes)
        }
        Method::Random => {
            if train.columns.len() < d {
                return Err(HarnessError::Config(format!(
                    "d'={d} exceeds the {} available variants",
                    train.columns.len()
                )));
            }
            let mut rng = rng_for(task.seed, &[0x4A4D]);
            let picked = train.columns.choose_multiple(&mut rng, d).cloned().collect();
            (picked, BTreeMap::new(), Vec::new())
        }
        _ => unreachable!("knowledge-driven methods are precomputed"),
    };
    Ok(SelectionArtifact {
        method: method.name().into(),
        shots: Some(task.shots),
        repeat: Some(task.repeat),
        selected,
        scores,
        notes,
    })
}

fn compare_task(
    cfg: &ExperimentConfig,
    methods: &[Method],
    data: &ExperimentData,
    shared: &BTreeMap<Method, SelectionArtifact>,
    task: &Task,
) -> Result<Part, HarnessError> {
    let ds = &data.dataset;
    let split = split_rows(ds, task.shots, task.seed)?;
    let full = ds.to_matrix();
    let train_all = full.subset_rows(&split.train);
    let test_all = full.subset_rows(&split.test);
    let seed = model_seed(task);
    let mut part = Part::default();
    for &method in methods {
        let selected = if method.is_llm() {
            shared
                .get(&method)
                .map(|a| a.selected.clone())
                .ok_or_else(|| HarnessError::Config(format!("no shared selection for {}", method.name())))?
        } else {
            let a = data_driven(method, &train_all, cfg, task)?;
            part.artifacts
                .warnings
                .extend(a.notes.iter().map(|n| tag(method.name(), task, n)));
            let sel = a.selected.clone();
            part.artifacts.selections.push(a);
            sel
        };
        let train = train_all.select_columns(&selected)?;
        let test = test_all.select_columns(&selected)?;
        for &kind in &cfg.classifiers {
            let fitted = fit_tuned(&train, kind, cfg, seed)?;
            part.artifacts
                .warnings
                .extend(fitted.warnings.iter().map(|w| tag(method.name(), task, w)));
            let file = format!("{}_{}_{}_{}.json", method.name(), task.shots, task.repeat, kind.name());
            if let Some(p) = save_model(cfg, &file, &fitted.model)? {
                part.artifacts.model_files.push(p);
            }
            log::debug!("{} {:?} -> {:?}", method.name(), task, fitted.hyper);
            part.rows.push(ScoreRow {
                method: method.name().into(),
                shots: task.shots,
                repeat: task.repeat,
                classifier: kind.name().into(),
                auroc: score(&fitted.model, &test)?,
            });
        }
    }
    Ok(part)
}

fn compare_part(
    cfg: &ExperimentConfig,
    methods: &[Method],
    data: &ExperimentData,
    llm: &dyn LlmProvider,
) -> Result<Part, Failure> {
    let (shared, nomination, warnings) = llm_selections(cfg, methods, data, llm)?;
    let mut part = Part::default();
    part.artifacts.selections.extend(shared.values().cloned());
    part.artifacts.nomination = nomination;
    part.artifacts.warnings = warnings;
    let tasks = task_plan(cfg);
    match fan_out(cfg, &tasks, |t| compare_task(cfg, methods, data, &shared, t)) {
        Ok(p) => {
            part.absorb(p);
            Ok(part)
        }
        Err(f) => {
            part.absorb(f.partial);
            Err(Failure {
                partial: part,
                error: f.error,
            })
        }
    }
}

fn cache_provenance(cfg: &ExperimentConfig) -> Option<CacheProvenance> {
    let path = match &cfg.provider {
        ProviderSettings::Replay(r) => r.cache.clone(),
        _ => cfg.cache.clone()?,
    };
    let bytes = std::fs::read(&path).ok();
    Some(CacheProvenance {
        path: path.display().to_string(),
        sha256: bytes.as_ref().map(|b| hex::encode(Sha256::digest(b))),
        records: bytes.map_or(0, |b| {
            String::from_utf8_lossy(&b)
                .lines()
                .filter(|l| !l.trim().is_empty())
                .count()
        }),
    })
}

fn finalize(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    mode: Mode,
    part: Part,
    cache: Option<CacheProvenance>,
) -> RunReport {
    let summary = summarize(&part.rows);
    RunReport {
        mode,
        rows: part.rows,
        summary,
        artifacts: part.artifacts,
        provenance: Provenance {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            task_seeds: task_plan(cfg)
                .into_iter()
                .map(|t| TaskSeed {
                    shots: t.shots,
                    repeat: t.repeat,
                    seed: t.seed,
                })
                .collect(),
            dataset_sha256: data.dataset_sha256.clone(),
            cache,
            config: cfg.clone(),
        },
    }
}

/// Finishes a run: on failure the partial report is flushed to
/// `<output_dir>/partial_report.{json,csv}` before the error is returned.
fn conclude(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    mode: Mode,
    result: Result<Part, Failure>,
    cache: Option<CacheProvenance>,
) -> Result<RunReport, HarnessError> {
    match result {
        Ok(part) => Ok(finalize(cfg, data, mode, part, cache)),
        Err(Failure { partial, error }) => {
            if let Some(dir) = &cfg.output_dir {
                let report = finalize(cfg, data, mode, partial, cache);
                if let Err(e) = report.write(dir, "partial_report") {
                    log::error!("could not flush partial results: {e}");
                }
            }
            Err(error)
        }
    }
}

/// Few-shot comparison of every configured selection method.
pub fn run_selection_compare(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    llm: &dyn LlmProvider,
) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let cache = cache_provenance(cfg);
    let result = compare_part(cfg, &cfg.methods, data, llm);
    conclude(cfg, data, Mode::SelectCompare, result, cache)
}

/// Nominated variants evaluated against the configured data-driven methods.
pub fn run_nomination(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    llm: &dyn LlmProvider,
) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let cache = cache_provenance(cfg);
    let methods: Vec<Method> = std::iter::once(Method::Nominated)
        .chain(cfg.methods.iter().copied().filter(|m| !m.is_llm()))
        .collect();
    let result = compare_part(cfg, &methods, data, llm);
    conclude(cfg, data, Mode::Nominate, result, cache)
}

/// Selection comparison followed by engineering on the hierarchical
/// selection.
pub fn run_full_pipeline(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    llm: &dyn LlmProvider,
) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let cache = cache_provenance(cfg);
    let result = (|| {
        let mut part = compare_part(cfg, &cfg.methods, data, llm)?;
        let shared = part
            .artifacts
            .selections
            .iter()
            .find(|a| a.method == Method::Hierarchical.name() && a.shots.is_none())
            .map(|a| a.selected.clone());
        let (base, base_artifact) = engineering_base(cfg, data, llm, shared)?;
        if let Some(a) = base_artifact {
            part.artifacts.selections.push(a);
        }
        match engineering_part(cfg, data, llm, &base) {
            Ok(p) => {
                part.absorb(p);
                Ok(part)
            }
            Err(f) => {
                part.absorb(f.partial);
                Err(Failure {
                    partial: part,
                    error: f.error,
                })
            }
        }
    })();
    conclude(cfg, data, Mode::FullPipeline, result, cache)
}

pub(crate) fn run_engineering_inner(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    llm: &dyn LlmProvider,
) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let cache = cache_provenance(cfg);
    let result = (|| {
        let (base, base_artifact) = engineering_base(cfg, data, llm, None)?;
        let mut part = Part::default();
        part.artifacts.selections.extend(base_artifact);
        match engineering_part(cfg, data, llm, &base) {
            Ok(p) => {
                part.absorb(p);
                Ok(part)
            }
            Err(f) => {
                part.absorb(f.partial);
                Err(Failure {
                    partial: part,
                    error: f.error,
                })
            }
        }
    })();
    conclude(cfg, data, Mode::Engineer, result, cache)
}

/// Loads data, builds the provider and runs `cfg.mode`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let data = load_experiment_data(cfg)?;
    let llm = build_provider(cfg, data.truth.as_ref())?;
    match cfg.mode {
        Mode::SelectCompare => run_selection_compare(cfg, &data, &*llm),
        Mode::Engineer => run_engineering_inner(cfg, &data, &*llm),
        Mode::Nominate => run_nomination(cfg, &data, &*llm),
        Mode::FullPipeline => run_full_pipeline(cfg, &data, &*llm),
    }
}
