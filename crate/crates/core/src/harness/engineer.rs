use super::config::{ExperimentConfig, Method};
use super::report::{FeatureSetArtifact, RunReport, ScoreRow, SelectionArtifact};
use super::run::{
    candidate_pool, fan_out, fit_tuned, model_seed, run_engineering_inner, save_model, score, split_rows, tag,
    task_plan, ExperimentData, Failure, Part, Task,
};
use super::HarnessError;
use crate::dataset::DatasetError;
use crate::engineering::{generate_feature_sets, transform_matrix};
use crate::llm::LlmProvider;
use crate::models::{auroc, AurocAverage, EnsembleMember, EnsembleModel};
use crate::seeding::derive_seed;
use crate::selection::hierarchical_select;

/// Method label for the model trained on the base variants alone.
pub const RAW: &str = "raw";
/// Method label for the first ensemble member on its own.
pub const SINGLE: &str = "single_member";
/// Method label for the probability-averaging ensemble.
pub const ENSEMBLE: &str = "ensemble";

/// K engineered feature sets per (shots, repeat), scored as an ensemble
/// against the first member alone and against the raw base variants.
pub fn run_engineering(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    llm: &dyn LlmProvider,
) -> Result<RunReport, HarnessError> {
    run_engineering_inner(cfg, data, llm)
}

/// Base variants for engineering: configured explicitly, reused from an
/// earlier hierarchical selection, or selected now.
pub(crate) fn engineering_base(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    llm: &dyn LlmProvider,
    shared: Option<Vec<String>>,
) -> Result<(Vec<String>, Option<SelectionArtifact>), HarnessError> {
    if let Some(features) = &cfg.engineering_features {
        if features.is_empty() {
            return Err(HarnessError::Config("engineering_features is empty".into()));
        }
        for f in features {
            if data.dataset.variant_index(f).is_none() {
                return Err(DatasetError::UnknownVariant(f.clone()).into());
            }
        }
        return Ok((features.clone(), None));
    }
    if let Some(selected) = shared {
        return Ok((selected, None));
    }
    let mut warnings = Vec::new();
    let pool = candidate_pool(cfg, data, llm, &mut warnings)?;
    let result = hierarchical_select(&pool, &cfg.selection, llm)?;
    let artifact = SelectionArtifact {
        method: Method::Hierarchical.name().into(),
        shots: None,
        repeat: None,
        selected: result.selected.clone(),
        scores: result.votes.iter().map(|(k, v)| (k.clone(), *v as f64)).collect(),
        notes: warnings,
    };
    Ok((result.selected, Some(artifact)))
}

fn engineering_task(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    llm: &dyn LlmProvider,
    base: &[String],
    task: &Task,
) -> Result<Part, HarnessError> {
    let ds = &data.dataset;
    let split = split_rows(ds, task.shots, task.seed)?;
    let train_ds = ds.subset_rows(&split.train).restrict(base)?;
    let test = ds.subset_rows(&split.test).restrict(base)?.to_matrix();
    let train = train_ds.to_matrix();

    let mut ecfg = cfg.engineering.clone();
    ecfg.seed = derive_seed(task.seed, &[0xE0]);
    if ecfg.template.gene_map.is_none() {
        ecfg.template.gene_map = data.gene_map.clone();
    }
    let sets = generate_feature_sets(&train_ds, &ecfg, llm)?;

    let mut part = Part::default();
    for (k, fs) in sets.iter().enumerate() {
        part.artifacts.feature_sets.push(FeatureSetArtifact {
            shots: task.shots,
            repeat: task.repeat,
            member: k,
            features: fs.expressions.iter().map(|(n, e)| (n.clone(), e.to_string())).collect(),
            example_indices: fs.example_indices.clone(),
        });
    }
    if sets.iter().all(|s| s.is_empty()) {
        part.artifacts.warnings.push(tag(
            ENSEMBLE,
            task,
            "every feature set is empty; the ensemble reduces to the raw model",
        ));
    }

    let seed = model_seed(task);
    let row = |method: &str, classifier: &str, auroc: f64| ScoreRow {
        method: method.into(),
        shots: task.shots,
        repeat: task.repeat,
        classifier: classifier.into(),
        auroc,
    };
    for &kind in &cfg.classifiers {
        let raw = fit_tuned(&train, kind, cfg, seed)?;
        part.artifacts
            .warnings
            .extend(raw.warnings.iter().map(|w| tag(RAW, task, w)));
        let raw_auroc = score(&raw.model, &test)?;

        let mut members = Vec::with_capacity(sets.len());
        for fs in &sets {
            let fitted = fit_tuned(&transform_matrix(&train, fs)?, kind, cfg, seed)?;
            members.push(EnsembleMember {
                feature_set: fs.clone(),
                model: fitted.model,
            });
        }
        let ensemble = EnsembleModel::new(members)?;
        let probs = ensemble.predict_proba(&test)?;
        let ens_auroc = auroc(&probs, &test.y, AurocAverage::Macro)?;
        let first = &ensemble.members[0];
        let single_auroc = score(&first.model, &transform_matrix(&test, &first.feature_set)?)?;

        let stem = format!("{}_{}_{}", task.shots, task.repeat, kind.name());
        if let Some(p) = save_model(cfg, &format!("{RAW}_{stem}.json"), &raw.model)? {
            part.artifacts.model_files.push(p);
        }
        if let Some(p) = save_model(cfg, &format!("{ENSEMBLE}_{stem}.json"), &ensemble)? {
            part.artifacts.model_files.push(p);
        }
        part.rows.push(row(RAW, kind.name(), raw_auroc));
        part.rows.push(row(SINGLE, kind.name(), single_auroc));
        part.rows.push(row(ENSEMBLE, kind.name(), ens_auroc));
    }
    Ok(part)
}

pub(crate) fn engineering_part(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    llm: &dyn LlmProvider,
    base: &[String],
) -> Result<Part, Failure> {
    let tasks = task_plan(cfg);
    fan_out(cfg, &tasks, |t| engineering_task(cfg, data, llm, base, t))
}
