//! LLM-driven construction of interaction features.
//!
//! One feature set is produced per ensemble member `k`:
//!
//! 1. bag up to `max_examples` training rows (seeded by `k`) and shuffle them,
//! 2. ask the reasoning model for new features in free text,
//! 3. have the routine model extract one `name: expression` line per feature,
//! 4. compile each expression to a [`FeatureExpr`]; lines that fail are sent
//!    back for a rewrite a few times and dropped if they still fail.
//!
//! Variants are only ever referred to through aliases `x1..x{d'}` so that
//! variant names containing `>` or `:` cannot collide with the expression
//! syntax.

mod dsl;
mod prompt;

use std::collections::HashSet;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dsl::{compile_expression, CmpOp, DslError, FeatureExpr, MAX_DEPTH};
pub use prompt::{build_engineering_prompt, NO_EXAMPLES, SYSTEM_TEXT};

use crate::dataset::{sample_few_shot, serialize_example, GenotypeDataset, LabeledMatrix, SerializationTemplate};
use crate::llm::{LlmError, LlmProvider};
use crate::seeding::{derive_seed, rng_for};

#[derive(Debug, Error)]
pub enum EngineeringError {
    #[error("{given} examples exceed the cap of {cap}")]
    TooManyExamples { given: usize, cap: usize },
    #[error("no features to engineer from")]
    NoFeatures,
    #[error("no feature lines could be extracted")]
    NothingExtracted,
    #[error("invalid engineering config: {0}")]
    Config(String),
    #[error("feature set references x{alias} but only {n_features} base features are present")]
    AliasOutOfRange { alias: usize, n_features: usize },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineeringConfig {
    /// Number of feature sets (ensemble members).
    pub k: usize,
    /// Cap on serialized examples shown per prompt.
    pub max_examples: usize,
    pub temperature: f64,
    pub max_parse_attempts: usize,
    pub template: SerializationTemplate,
    pub task_description: String,
    pub seed: u64,
}

impl Default for EngineeringConfig {
    fn default() -> Self {
        Self {
            k: 20,
            max_examples: 16,
            temperature: 1.0,
            max_parse_attempts: 3,
            template: SerializationTemplate::default(),
            task_description: "Predict the phenotype of a person from their genotype.".into(),
            seed: 0,
        }
    }
}

impl EngineeringConfig {
    pub fn validate(&self) -> Result<(), EngineeringError> {
        if self.k == 0 {
            return Err(EngineeringError::Config("K must be at least 1".into()));
        }
        if self.max_examples == 0 {
            return Err(EngineeringError::Config("max_examples must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(EngineeringError::Config("temperature must lie in [0, 2]".into()));
        }
        Ok(())
    }
}

/// One LLM exchange recorded while building a feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub stage: String,
    pub prompt: String,
    pub response: String,
}

/// Engineered features for one ensemble member. Empty sets are valid and
/// leave the data unchanged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub expressions: Vec<(String, FeatureExpr)>,
    #[serde(default)]
    pub source_transcript: Vec<TranscriptEntry>,
    #[serde(default)]
    pub example_indices: Vec<usize>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.expressions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expressions.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.expressions.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn max_alias(&self) -> usize {
        self.expressions.iter().map(|(_, e)| e.max_alias()).max().unwrap_or(0)
    }
}

/// Splits `name: expression`; a line without a usable name gets `None`.
fn split_feature_line(line: &str) -> (Option<String>, String) {
    match line.split_once(':') {
        Some((name, expr)) => {
            let name = name.trim().trim_start_matches(['-', '*', ' ']).trim().trim_matches('`');
            let valid = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            (
                valid.then(|| name.to_string()),
                expr.trim().trim_matches('`').to_string(),
            )
        }
        None => (None, line.trim().to_string()),
    }
}

fn mentions_alias(s: &str) -> bool {
    let b = s.as_bytes();
    b.windows(2).enumerate().any(|(i, w)| {
        (w[0] == b'x' || w[0] == b'X') && w[1].is_ascii_digit() && (i == 0 || !b[i - 1].is_ascii_alphanumeric())
    })
}

/// Routine-tier extraction of feature lines from a free-text proposal.
/// Commentary lines (no alias) are dropped; duplicates are removed keeping
/// first occurrences.
pub fn extract_features(
    free_text: &str,
    llm: &dyn LlmProvider,
) -> Result<(Vec<String>, TranscriptEntry), EngineeringError> {
    if free_text.trim().is_empty() {
        return Err(EngineeringError::NothingExtracted);
    }
    let req = prompt::parse_prompt(free_text);
    let response = llm.complete(&req)?.text;
    let entry = TranscriptEntry {
        stage: "parse".into(),
        prompt: req.user_text.clone(),
        response: response.clone(),
    };
    let mut seen = HashSet::new();
    let lines: Vec<String> = response
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("```"))
        .filter(|l| mentions_alias(&split_feature_line(l).1))
        .filter(|l| seen.insert(l.to_string()))
        .map(str::to_string)
        .collect();
    if lines.is_empty() {
        return Err(EngineeringError::NothingExtracted);
    }
    Ok((lines, entry))
}

/// Compiles one extracted line, asking the routine model to repair it after
/// each failure. Returns `None` once `max_attempts` compilations have failed.
fn compile_with_feedback(
    line: &str,
    n_features: usize,
    cfg: &EngineeringConfig,
    llm: &dyn LlmProvider,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<Option<(Option<String>, FeatureExpr)>, EngineeringError> {
    let mut current = line.to_string();
    for attempt in 1..=cfg.max_parse_attempts.max(1) {
        let (name, expr) = split_feature_line(&current);
        let result = compile_expression(&expr, n_features);
        transcript.push(TranscriptEntry {
            stage: format!("compile attempt {attempt}"),
            prompt: current.clone(),
            response: match &result {
                Ok(e) => e.to_string(),
                Err(err) => err.to_string(),
            },
        });
        match result {
            Ok(e) if e.uses_alias() => return Ok(Some((name, e))),
            Ok(_) => return Ok(None),
            Err(err) if attempt < cfg.max_parse_attempts => {
                let req = prompt::rewrite_prompt(&current, &err.to_string(), n_features);
                let fixed = llm.complete(&req)?.text;
                transcript.push(TranscriptEntry {
                    stage: "rewrite".into(),
                    prompt: req.user_text,
                    response: fixed.clone(),
                });
                current = fixed
                    .lines()
                    .map(str::trim)
                    .find(|l| !l.is_empty())
                    .unwrap_or("")
                    .to_string();
            }
            Err(_) => {}
        }
    }
    log::debug!(
        "dropping feature line after {} attempts: {line}",
        cfg.max_parse_attempts
    );
    Ok(None)
}

/// Builds the `k_index`-th feature set from a training table whose columns
/// are exactly the selected variants, in alias order.
///
/// Provider failures are the only errors; unusable model output yields an
/// empty set.
pub fn generate_feature_set(
    train: &GenotypeDataset,
    cfg: &EngineeringConfig,
    llm: &dyn LlmProvider,
    k_index: usize,
) -> Result<FeatureSet, EngineeringError> {
    cfg.validate()?;
    let features = train.variant_names().to_vec();
    let d = features.len();
    if d == 0 {
        return Err(EngineeringError::NoFeatures);
    }
    let member_seed = derive_seed(cfg.seed, &[0xE49, k_index as u64]);
    let n = train.n_samples().min(cfg.max_examples);
    let mut indices = match sample_few_shot(train, n, member_seed) {
        Ok(s) => s.indices,
        Err(_) => {
            let mut all: Vec<usize> = (0..train.n_samples()).collect();
            all.shuffle(&mut rng_for(member_seed, &[1]));
            all.truncate(n);
            all
        }
    };
    indices.shuffle(&mut rng_for(member_seed, &[0x0DE]));
    let examples = indices
        .iter()
        .map(|&r| serialize_example(train, r, &features, &cfg.template, true))
        .collect::<Result<Vec<_>, _>>()?;

    let req = build_engineering_prompt(&features, &examples, cfg)?.with_seed_hint(member_seed);
    let free_text = llm.complete(&req)?.text;
    let mut set = FeatureSet {
        expressions: Vec::new(),
        source_transcript: vec![TranscriptEntry {
            stage: "generate".into(),
            prompt: req.user_text.clone(),
            response: free_text.clone(),
        }],
        example_indices: indices,
    };

    let lines = match extract_features(&free_text, llm) {
        Ok((lines, entry)) => {
            set.source_transcript.push(entry);
            lines
        }
        Err(EngineeringError::NothingExtracted) => return Ok(set),
        Err(e) => return Err(e),
    };

    let base: HashSet<&str> = features.iter().map(String::as_str).collect();
    let mut names: HashSet<String> = HashSet::new();
    let mut exprs: HashSet<String> = HashSet::new();
    for line in lines {
        let Some((name, expr)) = compile_with_feedback(&line, d, cfg, llm, &mut set.source_transcript)? else {
            continue;
        };
        if !exprs.insert(expr.to_string()) {
            continue;
        }
        let mut name = name.unwrap_or_else(|| format!("feature_{}", set.expressions.len() + 1));
        if base.contains(name.as_str()) || names.contains(&name) {
            let stem = name.clone();
            let mut i = 2;
            while base.contains(name.as_str()) || names.contains(&name) {
                name = format!("{stem}_{i}");
                i += 1;
            }
        }
        names.insert(name.clone());
        set.expressions.push((name, expr));
    }
    Ok(set)
}

/// Generates `cfg.k` feature sets in parallel. Each member has its own seed,
/// example bag and transcript, so the result does not depend on scheduling.
pub fn generate_feature_sets(
    train: &GenotypeDataset,
    cfg: &EngineeringConfig,
    llm: &dyn LlmProvider,
) -> Result<Vec<FeatureSet>, EngineeringError> {
    (0..cfg.k)
        .into_par_iter()
        .map(|k| generate_feature_set(train, cfg, llm, k))
        .collect()
}

/// Appends the engineered columns of `fs` to `base`, whose columns must be
/// the selected variants in alias order.
pub fn transform_matrix(base: &LabeledMatrix, fs: &FeatureSet) -> Result<LabeledMatrix, EngineeringError> {
    let d = base.columns.len();
    if fs.max_alias() > d {
        return Err(EngineeringError::AliasOutOfRange {
            alias: fs.max_alias(),
            n_features: d,
        });
    }
    if fs.is_empty() {
        return Ok(base.clone());
    }
    let n = base.x.nrows();
    let mut x = Array2::zeros((n, d + fs.len()));
    x.slice_mut(ndarray::s![.., ..d]).assign(&base.x);
    for (i, row) in base.x.axis_iter(Axis(0)).enumerate() {
        let values: Vec<f64> = row.to_vec();
        for (j, (_, e)) in fs.expressions.iter().enumerate() {
            x[[i, d + j]] = e.evaluate(&values);
        }
    }
    let mut columns = base.columns.clone();
    columns.extend(fs.names());
    Ok(LabeledMatrix {
        columns,
        x,
        y: base.y.clone(),
        class_names: base.class_names.clone(),
    })
}

pub fn transform_dataset(ds: &GenotypeDataset, fs: &FeatureSet) -> Result<LabeledMatrix, EngineeringError> {
    transform_matrix(&ds.to_matrix(), fs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{oracle_provider, protocol, MockProvider, PromptTag};
    use ndarray::array;

    fn toy() -> GenotypeDataset {
        let names: Vec<String> = (1..=4).map(|i| format!("rs{i}")).collect();
        let values = Array2::from_shape_fn((24, 4), |(i, j)| ((i * (j + 1) + j) % 3) as u8);
        let labels: Vec<String> = (0..24)
            .map(|i| if i % 3 == 0 { "Yes" } else { "No" }.to_string())
            .collect();
        let ids = (0..24).map(|i| format!("s{i}")).collect();
        GenotypeDataset::new(ids, names, values, labels).unwrap()
    }

    #[test]
    fn prompt_has_six_sections_in_order() {
        let features: Vec<String> = (1..=15).map(|i| format!("rs{i}")).collect();
        let examples: Vec<String> = (0..16).map(|i| format!("example {i}")).collect();
        let req = build_engineering_prompt(&features, &examples, &EngineeringConfig::default()).unwrap();
        let t = &req.user_text;
        let order = [
            "## Instructions",
            "## Task",
            "## Features",
            "## Examples",
            "## Detailed instructions",
            "## Solution",
        ];
        let positions: Vec<usize> = order.iter().map(|h| t.find(h).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let aliases = protocol::parse_alias_block(t);
        assert_eq!(aliases.len(), 15);
        for (i, name) in aliases {
            assert_eq!(name, format!("rs{i}"));
        }
        assert!(t.contains("x3 * x7"));
        assert!(t.contains("step by step"));
        assert_eq!(req.tag, PromptTag::Engineer);
        assert_eq!(req.temperature, 1.0);
    }

    #[test]
    fn prompt_without_examples() {
        let req = build_engineering_prompt(&["rs1".into()], &[], &EngineeringConfig::default()).unwrap();
        assert!(req.user_text.contains(NO_EXAMPLES));
        assert!(req.validate().is_ok());
        let too_many = vec!["e".to_string(); 17];
        assert!(matches!(
            build_engineering_prompt(&["rs1".into()], &too_many, &EngineeringConfig::default()),
            Err(EngineeringError::TooManyExamples { given: 17, cap: 16 })
        ));
    }

    #[test]
    fn extraction_drops_commentary_and_duplicates() {
        let mock = MockProvider::constant(
            "Here are the features:\na: x1 * x2\nb: x2 + x3\n\na: x1 * x2\nc: (x1 > 0) and (x3 == 2)\n",
        );
        let (lines, _) = extract_features("some prose", &mock).unwrap();
        assert_eq!(lines, vec!["a: x1 * x2", "b: x2 + x3", "c: (x1 > 0) and (x3 == 2)"]);
        let none = MockProvider::constant("No features were proposed.");
        assert!(matches!(
            extract_features("prose", &none),
            Err(EngineeringError::NothingExtracted)
        ));
    }

    #[test]
    fn compile_example_ast() {
        use FeatureExpr::*;
        let e = compile_expression("(x1 > 0) and (x3 == 2)", 3).unwrap();
        let expect = And(
            Box::new(Cmp(CmpOp::Gt, Box::new(Alias(1)), Box::new(Const(0.0)))),
            Box::new(Cmp(CmpOp::Eq, Box::new(Alias(3)), Box::new(Const(2.0)))),
        );
        assert_eq!(e, expect);
        for a in 0..3 {
            for c in 0..3 {
                let want = if a > 0 && c == 2 { 1.0 } else { 0.0 };
                assert_eq!(e.evaluate(&[a as f64, 0.0, c as f64]), want);
            }
        }
    }

    #[test]
    fn oracle_pipeline_yields_four_features() {
        let ds = toy();
        let scores = ds
            .variant_names()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), 9.0 - i as f64))
            .collect();
        let o = oracle_provider(scores, 1).unwrap().with_temperature(0.0);
        let fs = generate_feature_set(&ds, &EngineeringConfig::default(), &o, 0).unwrap();
        assert_eq!(fs.len(), 4, "{:?}", fs.expressions);
        assert_eq!(fs.expressions[0].1.to_string(), "x1 * x2");
        assert_eq!(fs.example_indices.len(), 16);
        assert!(fs.max_alias() <= 4);
    }

    #[test]
    fn bad_line_repaired_on_second_attempt() {
        let mock = MockProvider::new(|req, _| {
            Ok(match req.tag {
                PromptTag::Engineer => "Feature: f = x1 ** x2".into(),
                PromptTag::Parse => "f: x1 ** x2".into(),
                PromptTag::FunctionWrite => "f: x1 * x2".into(),
                _ => String::new(),
            })
        });
        let fs = generate_feature_set(&toy(), &EngineeringConfig::default(), &mock, 0).unwrap();
        assert_eq!(fs.len(), 1);
        let attempts = fs
            .source_transcript
            .iter()
            .filter(|t| t.stage.starts_with("compile attempt"))
            .count();
        assert_eq!(attempts, 2);
    }

    #[test]
    fn hopeless_output_gives_empty_set() {
        let mock = MockProvider::constant("I would rather not.");
        let fs = generate_feature_set(&toy(), &EngineeringConfig::default(), &mock, 0).unwrap();
        assert!(fs.is_empty());
        let broken = MockProvider::constant("f: x1 ** x2");
        let cfg = EngineeringConfig::default();
        let fs = generate_feature_set(&toy(), &cfg, &broken, 0).unwrap();
        assert!(fs.is_empty());
        let attempts = fs
            .source_transcript
            .iter()
            .filter(|t| t.stage.starts_with("compile attempt"))
            .count();
        assert_eq!(attempts, cfg.max_parse_attempts);
    }

    #[test]
    fn names_avoid_base_variants_and_each_other() {
        let mock = MockProvider::new(|req, _| {
            Ok(match req.tag {
                PromptTag::Parse => "rs1: x1 * x2\nrs1: x1 + x2\nx3 * x4".into(),
                _ => "Feature: ...".into(),
            })
        });
        let fs = generate_feature_set(&toy(), &EngineeringConfig::default(), &mock, 0).unwrap();
        let names = fs.names();
        assert_eq!(names.len(), 3);
        assert!(!names.contains(&"rs1".to_string()));
        assert_eq!(names.iter().collect::<HashSet<_>>().len(), 3);
    }

    #[test]
    fn bagging_isolation() {
        let ds = toy();
        let scores = ds.variant_names().iter().map(|n| (n.clone(), 6.0)).collect();
        let o = oracle_provider(scores, 1).unwrap().with_temperature(0.0);
        let cfg = EngineeringConfig {
            max_examples: 8,
            ..Default::default()
        };
        let a = generate_feature_set(&ds, &cfg, &o, 0).unwrap();
        let b = generate_feature_set(&ds, &cfg, &o, 1).unwrap();
        assert_ne!(a.example_indices, b.example_indices);
        assert_eq!(a.expressions, b.expressions);
        assert_eq!(generate_feature_set(&ds, &cfg, &o, 0).unwrap(), a);
    }

    #[test]
    fn transform_appends_columns() {
        let base = LabeledMatrix {
            columns: vec!["a".into(), "b".into(), "c".into()],
            x: array![[2.0, 1.0, 0.0], [1.0, 1.0, 2.0], [0.0, 2.0, 1.0]],
            y: vec![0, 1, 0],
            class_names: vec!["n".into(), "y".into()],
        };
        let empty = FeatureSet::default();
        assert_eq!(transform_matrix(&base, &empty).unwrap(), base);
        let fs = FeatureSet {
            expressions: vec![("ab".into(), compile_expression("x1 * x2", 3).unwrap())],
            ..Default::default()
        };
        let out = transform_matrix(&base, &fs).unwrap();
        assert_eq!(out.columns, vec!["a", "b", "c", "ab"]);
        assert_eq!(out.x.column(3).to_vec(), vec![2.0, 1.0, 0.0]);
        let test = base.subset_rows(&[2]);
        assert_eq!(transform_matrix(&test, &fs).unwrap().columns, out.columns);
        let narrow = base.select_columns(&["a".into()]).unwrap();
        assert!(matches!(
            transform_matrix(&narrow, &fs),
            Err(EngineeringError::AliasOutOfRange { .. })
        ));
    }

    #[test]
    fn feature_set_json_round_trip() {
        let fs = FeatureSet {
            expressions: vec![("p".into(), compile_expression("(x1 > 0) and x2 >= 1", 2).unwrap())],
            source_transcript: vec![],
            example_indices: vec![3, 1],
        };
        let json = serde_json::to_string(&fs).unwrap();
        assert!(json.contains("x1 > 0 and x2 >= 1"));
        let back: FeatureSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fs);
    }
}
