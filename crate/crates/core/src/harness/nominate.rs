use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::llm::protocol::{answer_segment, render_count, split_items};
use crate::llm::{LlmProvider, PromptRequest, PromptTag};

pub const NOMINATION_TEMPERATURE: f64 = 0.0;

const SYSTEM_TEXT: &str = "You are an expert in human genetics and bioinformatics.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nomination {
    pub phenotype: String,
    pub requested: usize,
    /// De-duplicated identifiers in answer order, at most `requested`.
    pub nominated: Vec<String>,
    /// Nominated identifiers found in the known universe.
    pub present: Vec<String>,
    /// Nominated identifiers absent from the known universe.
    pub novel: Vec<String>,
    /// How many fewer than `requested` distinct identifiers came back.
    pub short_by: usize,
    pub raw_text: String,
}

pub fn nomination_prompt(phenotype: &str, n: usize) -> PromptRequest {
    let text = format!(
        "Phenotype: {phenotype}\n\n\
         Suggest {n} single nucleotide polymorphisms, identified by rsID, that are the most useful \
         genetic markers for predicting this phenotype.\n\
         {}\n\n\
         Think step by step about the known biology first. Then end with one line of the form \
         `Answer: rsA, rsB, ...` listing exactly {n} distinct identifiers.",
        render_count(n)
    );
    PromptRequest::new(PromptTag::Nominate, text)
        .with_system(SYSTEM_TEXT)
        .with_temperature(NOMINATION_TEMPERATURE)
}

/// First token of a list item with surrounding punctuation removed, so
/// `rs671 (ALDH2)` yields `rs671`.
fn identifier(item: &str) -> Option<String> {
    let token = item.split_whitespace().next()?;
    let token = token.trim_matches(|c: char| "()[]{},;:.\"'`*".contains(c));
    (!token.is_empty()).then(|| token.to_string())
}

/// Asks for `n` variants relevant to `phenotype` from prior knowledge alone.
///
/// With a `known_universe`, nominations are split into those present in it
/// and novel ones; without one every nomination counts as present.
pub fn nominate_features(
    phenotype: &str,
    n: usize,
    llm: &dyn LlmProvider,
    known_universe: Option<&[String]>,
) -> Result<Nomination, HarnessError> {
    if n == 0 {
        return Err(HarnessError::Config("nomination count must be at least 1".into()));
    }
    let raw_text = llm.complete(&nomination_prompt(phenotype, n))?.text;
    let mut seen = HashSet::new();
    let mut nominated: Vec<String> = split_items(answer_segment(&raw_text))
        .iter()
        .filter_map(|item| identifier(item))
        .filter(|id| seen.insert(id.clone()))
        .collect();
    if nominated.is_empty() {
        return Err(HarnessError::NothingParsed);
    }
    nominated.truncate(n);
    let (present, novel) = match known_universe {
        Some(universe) => {
            let known: HashSet<&str> = universe.iter().map(String::as_str).collect();
            nominated.iter().cloned().partition(|id| known.contains(id.as_str()))
        }
        None => (nominated.clone(), Vec::new()),
    };
    Ok(Nomination {
        phenotype: phenotype.to_string(),
        requested: n,
        short_by: n - nominated.len(),
        nominated,
        present,
        novel,
        raw_text,
    })
}
