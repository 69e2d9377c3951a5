//! Knowledge-driven feature selection.
//!
//! Three steps, each a sequence of LLM rounds:
//!
//! 1. [`relevance_filter`] asks for a Yes/No verdict per variant, in batches.
//! 2. [`hierarchical_select`] partitions the survivors into buckets, keeps the
//!    `d'` most-voted variants of each bucket over several shuffled rounds,
//!    merges and repeats until one bucket remains, then runs a final
//!    chain-of-thought vote at a higher temperature.
//! 3. [`sequential_forward_select`] instead picks one variant at a time, with
//!    majority voting that grows as the remaining choices get harder.
//!
//! Every round draws its presentation order and seed from
//! `(cfg.seed, level, bucket, iteration)`, so results do not depend on the
//! order in which concurrent rounds complete.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::protocol::{self, render_count, render_variant_block};
use crate::llm::{LlmError, LlmProvider, PromptRequest, PromptTag};
use crate::seeding::{derive_seed, rng_for};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("invalid selection config: {0}")]
    Config(String),
    #[error("need at least {needed} variants, got {got}")]
    TooFewVariants { needed: usize, got: usize },
    #[error("every round for a bucket of {bucket_size} variants was unparsable")]
    AllRoundsUnparsable { bucket_size: usize },
    #[error("sequential selection stalled at pick {pick}: no valid candidate after retries")]
    SelectionStalled { pick: usize },
}

const SYSTEM_TEXT: &str = "You are an expert in human genetics and bioinformatics.";

/// How many self-consistency rounds each sequential pick gets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequentialSchedule {
    /// `(last pick number, rounds)` steps, ascending by pick number. Picks
    /// beyond the last step reuse its round count.
    pub steps: Vec<(usize, usize)>,
    /// Extra rounds allowed per pick when answers repeat or are invalid.
    pub max_retries: usize,
}

impl Default for SequentialSchedule {
    fn default() -> Self {
        Self {
            steps: vec![(3, 1), (8, 3), (usize::MAX, 5)],
            max_retries: 5,
        }
    }
}

impl SequentialSchedule {
    pub fn rounds_for(&self, pick: usize) -> usize {
        self.steps
            .iter()
            .find(|(upto, _)| pick <= *upto)
            .or(self.steps.last())
            .map_or(1, |(_, r)| *r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub d_prime: usize,
    pub bucket_min: usize,
    pub bucket_max: usize,
    pub intermediate_iters: usize,
    pub final_iters: usize,
    pub temp_intermediate: f64,
    pub temp_final: f64,
    pub filter_batch_size: usize,
    pub filter_temperature: f64,
    /// Yes-rate above which a filter batch is re-asked with stricter wording.
    pub filter_escalation_rate: f64,
    pub sequential: SequentialSchedule,
    pub task_description: String,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            d_prime: 15,
            bucket_min: 50,
            bucket_max: 100,
            intermediate_iters: 3,
            final_iters: 10,
            temp_intermediate: 0.3,
            temp_final: 0.7,
            filter_batch_size: 20,
            filter_temperature: 0.0,
            filter_escalation_rate: 0.6,
            sequential: SequentialSchedule::default(),
            task_description: "Predict the phenotype of a person from their genotype.".into(),
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: &str| Err(SelectionError::Config(m.to_string()));
        if self.d_prime == 0 {
            return bad("d_prime must be at least 1");
        }
        if self.bucket_min > self.bucket_max || self.bucket_min == 0 {
            return bad("need 0 < bucket_min <= bucket_max");
        }
        if self.bucket_max < self.d_prime {
            return bad("bucket_max must be at least d_prime");
        }
        if self.intermediate_iters == 0 || self.final_iters == 0 || self.filter_batch_size == 0 {
            return bad("iteration counts and batch size must be at least 1");
        }
        if self.sequential.steps.iter().any(|(_, r)| *r == 0) {
            return bad("sequential rounds must be at least 1");
        }
        Ok(())
    }
}

/// One LLM exchange during selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub stage: String,
    pub level: usize,
    pub bucket: usize,
    pub iteration: usize,
    pub presented: Vec<String>,
    pub raw_text: String,
    /// Valid names counted from this round, in answer order.
    pub parsed: Vec<String>,
    /// Mentions that were not valid candidates.
    pub invalid: Vec<String>,
    #[serde(default)]
    pub retry: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: String,
    pub selected: Vec<String>,
    /// Votes per variant summed over every round.
    pub votes: BTreeMap<String, usize>,
    pub rounds: Vec<RoundRecord>,
}

/// Common JSON report for LLM-driven and data-driven selections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: String,
    pub selected: Vec<String>,
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub rounds: Vec<RoundRecord>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl From<&SelectionResult> for SelectionReport {
    fn from(r: &SelectionResult) -> Self {
        Self {
            method: r.strategy.clone(),
            selected: r.selected.clone(),
            scores: r.votes.iter().map(|(k, v)| (k.clone(), *v as f64)).collect(),
            rounds: r.rounds.clone(),
            notes: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Relevance filtering
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<String>,
    pub verdicts: Vec<(String, bool)>,
    /// Variants with no mappable verdict line; they are kept.
    pub unparsable: Vec<String>,
    pub escalated_batches: usize,
    pub rounds: Vec<RoundRecord>,
}

fn filter_prompt(batch: &[String], cfg: &SelectionConfig, strict: bool) -> String {
    let wording = if strict {
        protocol::STRICT_RELEVANCE
    } else {
        protocol::LENIENT_RELEVANCE
    };
    format!(
        "Task: {task}\n\n\
         For each variant below, decide whether it is {wording} to this task based on what is known \
         about the variant and its gene.\n\
         Reply with exactly one line per variant, in the same order, formatted as `<variant>: Yes` or `<variant>: No`.\n\n\
         {block}",
        task = cfg.task_description,
        block = render_variant_block(batch),
    )
}

/// Maps each reply line to a verdict. Lines that name a listed variant are
/// matched by name; bare `Yes`/`No` lines are matched by position.
fn parse_verdicts(text: &str, batch: &[String]) -> (Vec<Option<bool>>, Vec<String>) {
    let index: HashMap<&str, usize> = batch.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut verdicts = vec![None; batch.len()];
    let mut stray = Vec::new();
    let mut position = 0;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let verdict_of = |s: &str| {
            let s = protocol::clean_item(s).to_ascii_lowercase();
            if s.starts_with("yes") {
                Some(true)
            } else if s.starts_with("no") {
                Some(false)
            } else {
                None
            }
        };
        match line.rsplit_once(':') {
            Some((name, v)) => {
                let name = protocol::clean_item(name);
                match (index.get(name.as_str()), verdict_of(v)) {
                    (Some(&i), Some(v)) => {
                        verdicts[i] = Some(v);
                        position = i + 1;
                    }
                    _ => stray.push(line.to_string()),
                }
            }
            None => match verdict_of(line) {
                Some(v) if position < batch.len() => {
                    verdicts[position] = Some(v);
                    position += 1;
                }
                _ => stray.push(line.to_string()),
            },
        }
    }
    (verdicts, stray)
}

fn filter_batch(
    batch: &[String],
    batch_idx: usize,
    cfg: &SelectionConfig,
    llm: &dyn LlmProvider,
) -> Result<(Vec<(String, bool)>, Vec<String>, bool, Vec<RoundRecord>), SelectionError> {
    let mut rounds = Vec::new();
    let mut ask = |strict: bool| -> Result<(Vec<Option<bool>>, Vec<String>), SelectionError> {
        let req = PromptRequest::new(PromptTag::Filter, filter_prompt(batch, cfg, strict))
            .with_system(SYSTEM_TEXT)
            .with_temperature(cfg.filter_temperature)
            .with_seed_hint(derive_seed(cfg.seed, &[0xF117, batch_idx as u64, strict as u64]));
        let text = llm.complete(&req)?.text;
        let (verdicts, stray) = parse_verdicts(&text, batch);
        rounds.push(RoundRecord {
            stage: if strict { "filter_strict" } else { "filter" }.into(),
            level: 0,
            bucket: batch_idx,
            iteration: strict as usize,
            presented: batch.to_vec(),
            raw_text: text,
            parsed: batch
                .iter()
                .zip(&verdicts)
                .filter(|(_, v)| **v == Some(true))
                .map(|(n, _)| n.clone())
                .collect(),
            invalid: stray,
            retry: strict,
        });
        Ok((verdicts, Vec::new()))
    };
    let (mut verdicts, _) = ask(false)?;
    let yes = verdicts.iter().filter(|v| **v != Some(false)).count();
    let escalated = (yes as f64) / (batch.len() as f64) > cfg.filter_escalation_rate;
    if escalated {
        verdicts = ask(true)?.0;
    }
    let unparsable: Vec<String> = batch
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.is_none())
        .map(|(n, _)| n.clone())
        .collect();
    let out = batch
        .iter()
        .zip(verdicts)
        .map(|(n, v)| (n.clone(), v.unwrap_or(true)))
        .collect();
    Ok((out, unparsable, escalated, rounds))
}

/// Keeps the variants the model judges relevant. Variants without a readable
/// verdict are kept and listed in [`FilterOutcome::unparsable`].
pub fn relevance_filter(
    variants: &[String],
    cfg: &SelectionConfig,
    llm: &dyn LlmProvider,
) -> Result<FilterOutcome, SelectionError> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(SelectionError::TooFewVariants { needed: 1, got: 0 });
    }
    let batches: Vec<&[String]> = variants.chunks(cfg.filter_batch_size).collect();
    let results = batches
        .par_iter()
        .enumerate()
        .map(|(i, b)| filter_batch(b, i, cfg, llm))
        .collect::<Result<Vec<_>, _>>()?;
    let mut outcome = FilterOutcome {
        kept: Vec::new(),
        verdicts: Vec::new(),
        unparsable: Vec::new(),
        escalated_batches: 0,
        rounds: Vec::new(),
    };
    for (verdicts, unparsable, escalated, rounds) in results {
        outcome
            .kept
            .extend(verdicts.iter().filter(|(_, v)| *v).map(|(n, _)| n.clone()));
        outcome.verdicts.extend(verdicts);
        if !unparsable.is_empty() {
            log::warn!("unparsable filter verdicts for {unparsable:?}; keeping them");
        }
        outcome.unparsable.extend(unparsable);
        outcome.escalated_batches += escalated as usize;
        outcome.rounds.extend(rounds);
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Buckets and voting
// ---------------------------------------------------------------------------

/// Random partition into buckets of `bucket_min..=bucket_max` variants.
///
/// Pools smaller than `2 * bucket_min` (or no larger than `bucket_max`) stay
/// in one bucket. Otherwise the pool is split into `ceil(n / bucket_max)`
/// near-equal buckets, falling back to `floor(n / bucket_min)` buckets when
/// equal shares would drop below `bucket_min`.
pub fn partition_buckets(variants: &[String], cfg: &SelectionConfig, round_seed: u64) -> Vec<Vec<String>> {
    let n = variants.len();
    if n == 0 {
        return Vec::new();
    }
    let mut pool = variants.to_vec();
    pool.shuffle(&mut rng_for(round_seed, &[0xB0C7]));
    if n <= cfg.bucket_max || n < 2 * cfg.bucket_min {
        return vec![pool];
    }
    let mut n_buckets = n.div_ceil(cfg.bucket_max);
    if n / n_buckets < cfg.bucket_min {
        n_buckets = (n / cfg.bucket_min).max(1);
    }
    let base = n / n_buckets;
    let extra = n % n_buckets;
    let mut out = Vec::with_capacity(n_buckets);
    let mut rest = pool.as_slice();
    for b in 0..n_buckets {
        let size = base + usize::from(b < extra);
        let (head, tail) = rest.split_at(size);
        out.push(head.to_vec());
        rest = tail;
    }
    out
}

/// Vote tally for one bucket. Ranking: most votes, then lowest mean position
/// in the answers, then name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketVotes {
    pub tally: BTreeMap<String, usize>,
    pub rank_sum: BTreeMap<String, usize>,
    pub rounds: Vec<RoundRecord>,
}

impl BucketVotes {
    fn add_round(&mut self, record: RoundRecord) {
        for (pos, name) in record.parsed.iter().enumerate() {
            *self.tally.entry(name.clone()).or_default() += 1;
            *self.rank_sum.entry(name.clone()).or_default() += pos;
        }
        self.rounds.push(record);
    }

    /// Associative, commutative merge.
    pub fn merge(mut self, other: BucketVotes) -> Self {
        for (k, v) in other.tally {
            *self.tally.entry(k).or_default() += v;
        }
        for (k, v) in other.rank_sum {
            *self.rank_sum.entry(k).or_default() += v;
        }
        self.rounds.extend(other.rounds);
        self
    }

    pub fn mean_rank(&self, name: &str) -> f64 {
        match self.tally.get(name) {
            Some(&c) if c > 0 => self.rank_sum[name] as f64 / c as f64,
            _ => f64::INFINITY,
        }
    }

    /// Voted names in ranking order.
    pub fn ranking(&self) -> Vec<String> {
        let mut names: Vec<&String> = self.tally.keys().collect();
        names.sort_by(|a, b| {
            self.tally[*b]
                .cmp(&self.tally[*a])
                .then_with(|| self.mean_rank(a).total_cmp(&self.mean_rank(b)))
                .then_with(|| a.cmp(b))
        });
        names.into_iter().cloned().collect()
    }
}

/// Valid, de-duplicated candidate names from an answer, plus invalid mentions.
/// Only the first `limit` mentions count.
fn parse_candidates(text: &str, candidates: &HashSet<&str>, limit: usize) -> (Vec<String>, Vec<String>) {
    let lower: HashMap<String, &str> = candidates.iter().map(|c| (c.to_ascii_lowercase(), *c)).collect();
    let mut valid = Vec::new();
    let mut invalid = Vec::new();
    let mut seen = HashSet::new();
    for item in protocol::split_items(protocol::answer_segment(text))
        .into_iter()
        .take(limit)
    {
        let hit = candidates
            .get(item.as_str())
            .copied()
            .or_else(|| lower.get(&item.to_ascii_lowercase()).copied());
        match hit {
            Some(name) if seen.insert(name) => valid.push(name.to_string()),
            Some(_) => {}
            None => invalid.push(item),
        }
    }
    (valid, invalid)
}

fn select_prompt(
    presented: &[String],
    n: usize,
    cfg: &SelectionConfig,
    chain_of_thought: bool,
    exclude: &[String],
) -> String {
    let mut s = format!(
        "Task: {task}\n\n\
         From the variants listed below, select the {n} that are most relevant to the task, \
         drawing on what is known about each variant and its gene.\n\
         {count}\n",
        task = cfg.task_description,
        count = render_count(n),
    );
    if !exclude.is_empty() {
        s.push_str(&format!(
            "Already selected (do not choose these again): {}\n",
            exclude.join(", ")
        ));
    }
    s.push('\n');
    s.push_str(&render_variant_block(presented));
    s.push('\n');
    if chain_of_thought {
        s.push_str(
            "Think step by step about the evidence for each candidate, then give your final choice \
             on the last line as `Answer: name1, name2, ...`.",
        );
    } else {
        s.push_str("Reply with only a comma-separated list of the selected variant names.");
    }
    s
}

/// Runs the self-consistency rounds for one bucket: `intermediate_iters`
/// shuffled rounds at `temp_intermediate`, or `final_iters` chain-of-thought
/// rounds at `temp_final` when `final_round` is set.
pub fn select_from_bucket(
    bucket: &[String],
    cfg: &SelectionConfig,
    llm: &dyn LlmProvider,
    final_round: bool,
    round_seed: u64,
) -> Result<BucketVotes, SelectionError> {
    bucket_rounds(bucket, cfg, llm, final_round, round_seed, 0, 0)
}

fn bucket_rounds(
    bucket: &[String],
    cfg: &SelectionConfig,
    llm: &dyn LlmProvider,
    final_round: bool,
    round_seed: u64,
    level: usize,
    bucket_idx: usize,
) -> Result<BucketVotes, SelectionError> {
    if bucket.len() < cfg.d_prime {
        return Err(SelectionError::TooFewVariants {
            needed: cfg.d_prime,
            got: bucket.len(),
        });
    }
    let iters = if final_round {
        cfg.final_iters
    } else {
        cfg.intermediate_iters
    };
    let (tag, temperature) = if final_round {
        (PromptTag::SelectFinal, cfg.temp_final)
    } else {
        (PromptTag::Select, cfg.temp_intermediate)
    };
    let candidates: HashSet<&str> = bucket.iter().map(String::as_str).collect();
    let records = (0..iters)
        .into_par_iter()
        .map(|it| {
            let seed = derive_seed(round_seed, &[level as u64, bucket_idx as u64, it as u64]);
            let mut presented = bucket.to_vec();
            presented.shuffle(&mut rng_for(seed, &[0x5EED]));
            let req = PromptRequest::new(tag, select_prompt(&presented, cfg.d_prime, cfg, final_round, &[]))
                .with_system(SYSTEM_TEXT)
                .with_temperature(temperature)
                .with_seed_hint(seed);
            let text = llm.complete(&req)?.text;
            let (parsed, invalid) = parse_candidates(&text, &candidates, cfg.d_prime);
            Ok(RoundRecord {
                stage: if final_round { "final" } else { "bucket" }.into(),
                level,
                bucket: bucket_idx,
                iteration: it,
                presented,
                raw_text: text,
                parsed,
                invalid,
                retry: false,
            })
        })
        .collect::<Result<Vec<_>, SelectionError>>()?;
    if records.iter().all(|r| r.parsed.is_empty()) {
        return Err(SelectionError::AllRoundsUnparsable {
            bucket_size: bucket.len(),
        });
    }
    let mut votes = BucketVotes::default();
    for r in records {
        votes.add_round(r);
    }
    Ok(votes)
}

/// Top `n` of `pool`: voted names in ranking order, then unvoted names by
/// `fallback` support, then by name.
fn top_n(votes: &BucketVotes, pool: &[String], n: usize, fallback: &BTreeMap<String, usize>) -> Vec<String> {
    let mut out: Vec<String> = votes.ranking().into_iter().take(n).collect();
    if out.len() < n {
        let chosen: HashSet<String> = out.iter().cloned().collect();
        let mut rest: Vec<&String> = pool.iter().filter(|p| !chosen.contains(*p)).collect();
        rest.sort_by(|a, b| {
            fallback
                .get(*b)
                .unwrap_or(&0)
                .cmp(fallback.get(*a).unwrap_or(&0))
                .then_with(|| a.cmp(b))
        });
        out.extend(rest.into_iter().take(n - out.len()).cloned());
    }
    out
}

fn check_input(variants: &[String], cfg: &SelectionConfig) -> Result<(), SelectionError> {
    cfg.validate()?;
    if variants.len() < cfg.d_prime {
        return Err(SelectionError::TooFewVariants {
            needed: cfg.d_prime,
            got: variants.len(),
        });
    }
    let unique: HashSet<&String> = variants.iter().collect();
    if unique.len() != variants.len() {
        return Err(SelectionError::Config("input variants contain duplicates".into()));
    }
    Ok(())
}

/// Self-consistent hierarchical selection of `cfg.d_prime` variants.
pub fn hierarchical_select(
    variants: &[String],
    cfg: &SelectionConfig,
    llm: &dyn LlmProvider,
) -> Result<SelectionResult, SelectionError> {
    check_input(variants, cfg)?;
    let mut result = SelectionResult {
        strategy: "hierarchical".into(),
        selected: Vec::new(),
        votes: BTreeMap::new(),
        rounds: Vec::new(),
    };
    if variants.len() == cfg.d_prime {
        result.selected = variants.to_vec();
        return Ok(result);
    }
    let mut pool = variants.to_vec();
    let mut level = 0;
    while pool.len() > cfg.bucket_max {
        let level_seed = derive_seed(cfg.seed, &[0x41E7, level as u64]);
        let buckets = partition_buckets(&pool, cfg, level_seed);
        let per_bucket = buckets
            .par_iter()
            .enumerate()
            .map(|(b, bucket)| bucket_rounds(bucket, cfg, llm, false, level_seed, level, b))
            .collect::<Result<Vec<_>, _>>()?;
        let mut merged = Vec::new();
        for (bucket, votes) in buckets.iter().zip(per_bucket) {
            merged.extend(top_n(&votes, bucket, cfg.d_prime, &result.votes));
            for (k, v) in &votes.tally {
                *result.votes.entry(k.clone()).or_default() += v;
            }
            result.rounds.extend(votes.rounds);
        }
        if merged.len() >= pool.len() {
            break;
        }
        pool = merged;
        level += 1;
    }
    let final_seed = derive_seed(cfg.seed, &[0xF1A1, level as u64]);
    let prior = result.votes.clone();
    let votes = bucket_rounds(&pool, cfg, llm, true, final_seed, level + 1, 0)?;
    result.selected = top_n(&votes, &pool, cfg.d_prime, &prior);
    for (k, v) in &votes.tally {
        *result.votes.entry(k.clone()).or_default() += v;
    }
    result.rounds.extend(votes.rounds);
    Ok(result)
}

/// Self-consistent sequential forward selection of `cfg.d_prime` variants.
///
/// Pick `i` runs `cfg.sequential.rounds_for(i)` chain-of-thought rounds over
/// the variants not yet chosen. Answers naming a chosen or unknown variant
/// trigger an extra round, up to `max_retries` per pick. The pick is the
/// most-voted fresh name; with no fresh votes it falls back to the unchosen
/// variant with the most votes from earlier picks.
pub fn sequential_forward_select(
    variants: &[String],
    cfg: &SelectionConfig,
    llm: &dyn LlmProvider,
) -> Result<SelectionResult, SelectionError> {
    check_input(variants, cfg)?;
    let mut result = SelectionResult {
        strategy: "sequential".into(),
        selected: Vec::new(),
        votes: BTreeMap::new(),
        rounds: Vec::new(),
    };
    if variants.len() == cfg.d_prime {
        result.selected = variants.to_vec();
        return Ok(result);
    }
    let all: HashSet<&str> = variants.iter().map(String::as_str).collect();
    let mut chosen: HashSet<String> = HashSet::new();
    for pick in 1..=cfg.d_prime {
        let remaining: Vec<String> = variants.iter().filter(|v| !chosen.contains(*v)).cloned().collect();
        let rounds = cfg.sequential.rounds_for(pick);
        let mut pick_votes = BucketVotes::default();
        let mut retries = 0;
        let mut attempt = 0;
        let mut good_rounds = 0;
        while good_rounds < rounds && retries <= cfg.sequential.max_retries {
            let seed = derive_seed(cfg.seed, &[0x5E0, pick as u64, attempt as u64]);
            let mut presented = remaining.clone();
            presented.shuffle(&mut rng_for(seed, &[0x5EED]));
            let req = PromptRequest::new(
                PromptTag::Select,
                select_prompt(&presented, 1, cfg, true, &result.selected),
            )
            .with_system(SYSTEM_TEXT)
            .with_temperature(cfg.temp_final)
            .with_seed_hint(seed);
            let text = llm.complete(&req)?.text;
            let (mentions, mut invalid) = parse_candidates(&text, &all, usize::MAX);
            let fresh: Vec<String> = mentions
                .iter()
                .filter(|m| !chosen.contains(*m))
                .take(1)
                .cloned()
                .collect();
            invalid.extend(mentions.iter().filter(|m| chosen.contains(*m)).cloned());
            let is_retry = attempt >= rounds;
            if fresh.is_empty() {
                retries += 1;
            } else {
                good_rounds += 1;
            }
            attempt += 1;
            let record = RoundRecord {
                stage: "sequential".into(),
                level: pick,
                bucket: 0,
                iteration: attempt - 1,
                presented,
                raw_text: text,
                parsed: fresh,
                invalid,
                retry: is_retry,
            };
            pick_votes.add_round(record);
        }
        let winner = match pick_votes.ranking().into_iter().next() {
            Some(w) => w,
            None => result
                .votes
                .iter()
                .filter(|(k, _)| !chosen.contains(*k))
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(k, _)| k.clone())
                .ok_or(SelectionError::SelectionStalled { pick })?,
        };
        for (k, v) in &pick_votes.tally {
            *result.votes.entry(k.clone()).or_default() += v;
        }
        result.rounds.extend(pick_votes.rounds);
        chosen.insert(winner.clone());
        result.selected.push(winner);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{oracle_provider, MockProvider, OracleProvider};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("rs{}", 1000 + i)).collect()
    }

    fn planted_oracle(all: &[String], planted: &[String]) -> OracleProvider {
        let scores = all
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let s = if planted.contains(n) {
                    9.0 + (i as f64) * 1e-3
                } else {
                    (i % 97) as f64 / 100.0
                };
                (n.clone(), s)
            })
            .collect();
        oracle_provider(scores, 7).unwrap().with_temperature(0.0)
    }

    #[test]
    fn defaults_match_published_settings() {
        let c = SelectionConfig::default();
        assert_eq!((c.d_prime, c.bucket_min, c.bucket_max), (15, 50, 100));
        assert_eq!((c.final_iters, c.temp_intermediate, c.temp_final), (10, 0.3, 0.7));
    }

    #[test]
    fn filter_keeps_relevant() {
        let o = oracle_provider(
            [("rs671".into(), 9.0), ("junk1".into(), 1.0), ("junk2".into(), 1.0)].into(),
            0,
        )
        .unwrap();
        let out = relevance_filter(
            &["rs671".into(), "junk1".into(), "junk2".into()],
            &SelectionConfig::default(),
            &o,
        )
        .unwrap();
        assert_eq!(out.kept, vec!["rs671"]);
        assert_eq!(out.escalated_batches, 0);
    }

    #[test]
    fn filter_passes_everything_when_all_relevant() {
        let vs = names(30);
        let o = oracle_provider(vs.iter().map(|n| (n.clone(), 9.5)).collect(), 0).unwrap();
        let out = relevance_filter(&vs, &SelectionConfig::default(), &o).unwrap();
        assert_eq!(out.kept, vs);
        assert_eq!(out.escalated_batches, 2);
    }

    #[test]
    fn filter_escalates_on_high_yes_rate() {
        let vs = names(10);
        let scores = vs
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), if i < 3 { 9.0 } else { 6.0 }))
            .collect();
        let o = oracle_provider(scores, 0).unwrap();
        let out = relevance_filter(&vs, &SelectionConfig::default(), &o).unwrap();
        assert_eq!(out.escalated_batches, 1);
        assert_eq!(out.kept, vs[..3].to_vec());
        assert!(out.rounds[1].raw_text.contains("rs1003: No"));
    }

    #[test]
    fn filter_batch_lines_align_with_variants() {
        let vs = names(20);
        let reply: String = (0..20).map(|i| if i % 2 == 0 { "Yes\n" } else { "No\n" }).collect();
        let mock = MockProvider::constant(reply);
        let out = relevance_filter(&vs, &SelectionConfig::default(), &mock).unwrap();
        assert_eq!(out.verdicts.len(), 20);
        for (i, (name, v)) in out.verdicts.iter().enumerate() {
            assert_eq!(name, &vs[i]);
            assert_eq!(*v, i % 2 == 0);
        }
        assert!(out.unparsable.is_empty());
    }

    #[test]
    fn unmappable_lines_default_to_yes() {
        let vs = names(3);
        let mock = MockProvider::constant("rs1000: No\nsomething odd\nrs9999: No");
        let out = relevance_filter(&vs, &SelectionConfig::default(), &mock).unwrap();
        assert_eq!(out.unparsable, vec!["rs1001", "rs1002"]);
        assert_eq!(out.kept, vec!["rs1001", "rs1002"]);
    }

    #[test]
    fn bucket_sizes() {
        let cfg = SelectionConfig::default();
        let b = partition_buckets(&names(8688), &cfg, 3);
        assert_eq!(b.len(), 87);
        assert!(b.iter().all(|x| (99..=100).contains(&x.len())));
        assert_eq!(partition_buckets(&names(60), &cfg, 3).len(), 1);
        assert_eq!(partition_buckets(&names(8688), &cfg, 3), b);
    }

    #[test]
    fn constant_responder_tallies_each_round() {
        let bucket = names(40);
        let answer = bucket[..15].join(", ");
        let mock = MockProvider::constant(answer);
        let cfg = SelectionConfig::default();
        let votes = select_from_bucket(&bucket, &cfg, &mock, false, 1).unwrap();
        assert_eq!(mock.calls(), cfg.intermediate_iters);
        for n in &bucket[..15] {
            assert_eq!(votes.tally[n], cfg.intermediate_iters);
        }
        assert_eq!(votes.tally.len(), 15);
    }

    #[test]
    fn out_of_bucket_names_ignored() {
        let bucket = names(20);
        let mock = MockProvider::constant(format!("rs9999, {}", bucket[..14].join(", ")));
        let cfg = SelectionConfig {
            intermediate_iters: 1,
            ..Default::default()
        };
        let votes = select_from_bucket(&bucket, &cfg, &mock, false, 1).unwrap();
        assert_eq!(votes.rounds[0].invalid, vec!["rs9999"]);
        assert_eq!(votes.tally.values().sum::<usize>(), 14);
    }

    #[test]
    fn all_garbage_bucket_errors() {
        let mock = MockProvider::constant("I cannot help with that.");
        let err = select_from_bucket(&names(20), &SelectionConfig::default(), &mock, true, 0);
        assert!(matches!(err, Err(SelectionError::AllRoundsUnparsable { .. })));
    }

    #[test]
    fn planted_signals_win_bucket_votes() {
        let bucket = names(60);
        let planted: Vec<String> = bucket.iter().step_by(4).cloned().collect();
        let o = planted_oracle(&bucket, &planted);
        let votes = select_from_bucket(&bucket, &SelectionConfig::default(), &o, false, 5).unwrap();
        let top: HashSet<String> = votes.ranking().into_iter().take(15).collect();
        assert_eq!(top, planted.into_iter().collect());
    }

    #[test]
    fn presentation_is_a_permutation() {
        let bucket = names(30);
        let o = planted_oracle(&bucket, &bucket[..15]);
        let votes = select_from_bucket(&bucket, &SelectionConfig::default(), &o, true, 2).unwrap();
        let orders: HashSet<Vec<String>> = votes.rounds.iter().map(|r| r.presented.clone()).collect();
        assert!(orders.len() > 1);
        for r in &votes.rounds {
            let mut p = r.presented.clone();
            p.sort();
            assert_eq!(p, bucket);
            assert_eq!(
                protocol::parse_variant_block(&select_prompt(&r.presented, 15, &SelectionConfig::default(), true, &[])),
                r.presented
            );
        }
    }

    #[test]
    fn hierarchical_identity_when_nothing_to_select() {
        let vs = names(15);
        let mock = MockProvider::constant("");
        let r = hierarchical_select(&vs, &SelectionConfig::default(), &mock).unwrap();
        assert_eq!(r.selected, vs);
        assert_eq!(mock.calls(), 0);
    }

    #[test]
    fn hierarchical_recovers_planted() {
        let vs = names(500);
        let planted: Vec<String> = vs.iter().skip(3).step_by(33).take(15).cloned().collect();
        let o = planted_oracle(&vs, &planted);
        let cfg = SelectionConfig {
            seed: 11,
            ..Default::default()
        };
        let r = hierarchical_select(&vs, &cfg, &o).unwrap();
        let got: HashSet<&String> = r.selected.iter().collect();
        assert_eq!(got, planted.iter().collect());
        let again = hierarchical_select(
            &vs,
            &SelectionConfig {
                seed: 12,
                ..cfg.clone()
            },
            &o,
        )
        .unwrap();
        assert_eq!(again.selected.iter().collect::<HashSet<_>>(), got);

        let counted: usize = r.rounds.iter().map(|x| x.parsed.len()).sum();
        assert_eq!(r.votes.values().sum::<usize>(), counted);
        let expected: usize = r.rounds.iter().map(|x| cfg.d_prime - x.invalid.len()).sum();
        assert_eq!(counted, expected);
    }

    #[test]
    fn result_independent_of_thread_count() {
        let vs = names(300);
        let planted: Vec<String> = vs.iter().step_by(20).cloned().collect();
        let scores = vs
            .iter()
            .enumerate()
            .map(|(i, n)| {
                (
                    n.clone(),
                    if planted.contains(n) {
                        8.0
                    } else {
                        (i % 13) as f64 * 0.3
                    },
                )
            })
            .collect();
        let o = oracle_provider(scores, 3).unwrap();
        let cfg = SelectionConfig {
            seed: 4,
            ..Default::default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| hierarchical_select(&vs, &cfg, &o).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn sequential_follows_score_order() {
        let vs = names(40);
        let scores = vs
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), 100.0 - i as f64))
            .collect();
        let o = oracle_provider(scores, 0).unwrap().with_temperature(0.0);
        let r = sequential_forward_select(&vs, &SelectionConfig::default(), &o).unwrap();
        assert_eq!(r.selected, vs[..15].to_vec());
    }

    #[test]
    fn sequential_retries_on_repeat() {
        let vs = names(20);
        let mock = MockProvider::sequence(["Answer: rs1000", "Answer: rs1000", "Answer: rs1001", "Answer: rs1002"]);
        let cfg = SelectionConfig {
            d_prime: 3,
            bucket_min: 3,
            bucket_max: 10,
            ..Default::default()
        };
        let r = sequential_forward_select(&vs, &cfg, &mock).unwrap();
        assert_eq!(r.selected, vec!["rs1000", "rs1001", "rs1002"]);
        let second_pick: Vec<&RoundRecord> = r.rounds.iter().filter(|x| x.level == 2).collect();
        assert_eq!(second_pick.len(), 2);
        assert_eq!(second_pick[0].invalid, vec!["rs1000"]);
        assert!(second_pick[1].retry);
    }

    #[test]
    fn sequential_garbage_stalls() {
        let mock = MockProvider::constant("no idea");
        let err = sequential_forward_select(&names(20), &SelectionConfig::default(), &mock);
        assert!(matches!(err, Err(SelectionError::SelectionStalled { pick: 1 })));
        assert_eq!(mock.calls(), 1 + SequentialSchedule::default().max_retries);
    }

    #[test]
    fn schedule_grows() {
        let s = SequentialSchedule::default();
        assert_eq!(
            (
                s.rounds_for(1),
                s.rounds_for(3),
                s.rounds_for(4),
                s.rounds_for(8),
                s.rounds_for(9),
                s.rounds_for(15)
            ),
            (1, 1, 3, 3, 5, 5)
        );
    }

    #[test]
    fn merge_is_commutative() {
        let mut a = BucketVotes::default();
        a.tally.insert("x".into(), 2);
        a.rank_sum.insert("x".into(), 1);
        let mut b = BucketVotes::default();
        b.tally.insert("y".into(), 1);
        b.rank_sum.insert("y".into(), 0);
        b.tally.insert("x".into(), 1);
        b.rank_sum.insert("x".into(), 3);
        let ab = a.clone().merge(b.clone());
        let ba = b.merge(a);
        assert_eq!(ab.tally, ba.tally);
        assert_eq!(ab.ranking(), ba.ranking());
    }

    use proptest::prelude::*;
    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn partition_is_a_partition(n in 1usize..2000, seed: u64) {
            let vs = names(n);
            let cfg = SelectionConfig::default();
            let buckets = partition_buckets(&vs, &cfg, seed);
            let mut all: Vec<String> = buckets.concat();
            all.sort();
            let mut expect = vs.clone();
            expect.sort();
            prop_assert_eq!(all, expect);
            if n >= 2 * cfg.bucket_min {
                for b in &buckets {
                    prop_assert!(b.len() >= cfg.bucket_min && b.len() <= cfg.bucket_max);
                }
            }
        }
    }
}
