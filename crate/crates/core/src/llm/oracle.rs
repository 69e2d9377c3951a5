//! A stand-in model that "knows" a relevance score for every variant.
//!
//! Rankings are Plackett–Luce samples: each presented variant gets the key
//! `score + T·G` with `G` standard Gumbel noise and the keys are sorted
//! descending. At `T = 0` this is a plain sort by score. All randomness is
//! seeded from the oracle seed and the request's cache key, so the provider
//! is a pure function of (request, scores, seed).

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use rand::Rng;
use regex::Regex;

use super::protocol;
use super::{CompletionResponse, LlmError, LlmProvider, PromptRequest, PromptTag};
use crate::seeding::{hash_str, rng_for};

#[derive(Clone, Debug)]
pub struct OracleProvider {
    scores: HashMap<String, f64>,
    seed: u64,
    threshold: f64,
    strict_threshold: f64,
    default_score: f64,
    temperature_override: Option<f64>,
    interactions: Vec<(String, String)>,
    max_features: usize,
}

/// Oracle over `relevance_scores`. Filter answers "Yes" iff score > 5 (> 7
/// under strict wording); unknown variants score 0.
pub fn oracle_provider(relevance_scores: HashMap<String, f64>, seed: u64) -> Result<OracleProvider, LlmError> {
    if relevance_scores.is_empty() {
        return Err(LlmError::InvalidConfig(
            "oracle needs at least one relevance score".into(),
        ));
    }
    Ok(OracleProvider {
        scores: relevance_scores,
        seed,
        threshold: 5.0,
        strict_threshold: 7.0,
        default_score: 0.0,
        temperature_override: None,
        interactions: Vec::new(),
        max_features: 4,
    })
}

impl OracleProvider {
    pub fn with_thresholds(mut self, lenient: f64, strict: f64) -> Self {
        self.threshold = lenient;
        self.strict_threshold = strict;
        self
    }

    /// Ignore request temperatures and sample at `t` instead (`0.0` makes the
    /// oracle noiseless).
    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature_override = Some(t);
        self
    }

    /// Variant pairs the oracle proposes as products whenever both are
    /// presented in an engineering prompt.
    pub fn with_interactions(mut self, pairs: Vec<(String, String)>) -> Self {
        self.interactions = pairs;
        self
    }

    pub fn with_max_features(mut self, n: usize) -> Self {
        self.max_features = n.max(1);
        self
    }

    pub fn score(&self, name: &str) -> f64 {
        self.scores.get(name).copied().unwrap_or(self.default_score)
    }

    fn temperature(&self, req: &PromptRequest) -> f64 {
        self.temperature_override.unwrap_or(req.temperature)
    }

    /// Noisy ranking of `names`, best first. Ties fall back to name order.
    pub fn rank(&self, names: &[String], temperature: f64, stream: u64) -> Vec<String> {
        let mut rng = rng_for(self.seed, &[stream]);
        let mut keyed: Vec<(f64, &String)> = names
            .iter()
            .map(|n| {
                let noise = if temperature > 0.0 {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    -(-u.ln()).ln() * temperature
                } else {
                    0.0
                };
                (self.score(n) + noise, n)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        keyed.into_iter().map(|(_, n)| n.clone()).collect()
    }

    fn filter(&self, req: &PromptRequest) -> String {
        let strict = req.user_text.contains(protocol::STRICT_RELEVANCE);
        let cut = if strict { self.strict_threshold } else { self.threshold };
        protocol::parse_variant_block(&req.user_text)
            .iter()
            .map(|n| format!("{n}: {}", if self.score(n) > cut { "Yes" } else { "No" }))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn select(&self, req: &PromptRequest, stream: u64) -> String {
        let presented = protocol::parse_variant_block(&req.user_text);
        let n = protocol::parse_count(&req.user_text).unwrap_or(1);
        let ranked = self.rank(&presented, self.temperature(req), stream);
        let answer = ranked.into_iter().take(n).collect::<Vec<_>>().join(", ");
        if req.tag == PromptTag::SelectFinal || req.user_text.contains("step by step") {
            format!(
                "Let me reason step by step about each candidate and its known associations with the phenotype.\n\
                 Variants with well-documented effects rank highest.\n\nAnswer: {answer}"
            )
        } else {
            answer
        }
    }

    fn engineer(&self, req: &PromptRequest, stream: u64) -> String {
        let aliases = protocol::parse_alias_block(&req.user_text);
        let alias_of: HashMap<&str, usize> = aliases.iter().map(|(i, n)| (n.as_str(), *i)).collect();
        let mut proposals: Vec<(String, String)> = Vec::new();
        let mut seen = HashSet::new();
        let mut push = |name: String, expr: String, out: &mut Vec<(String, String)>| {
            if seen.insert(expr.clone()) {
                out.push((name, expr));
            }
        };
        for (a, b) in &self.interactions {
            if let (Some(&i), Some(&j)) = (alias_of.get(a.as_str()), alias_of.get(b.as_str())) {
                push(format!("x{i}_x{j}_product"), format!("x{i} * x{j}"), &mut proposals);
            }
        }
        let names: Vec<String> = aliases.iter().map(|(_, n)| n.clone()).collect();
        let ranked = self.rank(&names, self.temperature(req), stream);
        let top: Vec<usize> = ranked.iter().take(3).map(|n| alias_of[n.as_str()]).collect();
        if top.len() >= 2 {
            let (i, j) = (top[0], top[1]);
            push(format!("x{i}_x{j}_product"), format!("x{i} * x{j}"), &mut proposals);
            push(
                format!("x{i}_x{j}_carriers"),
                format!("(x{i} > 0) and (x{j} > 0)"),
                &mut proposals,
            );
        }
        if top.len() >= 3 {
            let (i, j, k) = (top[0], top[1], top[2]);
            push(format!("x{i}_x{k}_product"), format!("x{i} * x{k}"), &mut proposals);
            push(format!("x{j}_x{k}_dosage"), format!("x{j} + x{k}"), &mut proposals);
        }
        proposals.truncate(self.max_features);

        let mut text = String::from(
            "Let me think step by step about how these variants could act together.\n\
             Variants with strong individual associations are the natural candidates for interaction terms.\n\n\
             Proposed features:\n",
        );
        for (name, expr) in &proposals {
            text.push_str(&format!("Feature: {name} = {expr}\n"));
        }
        text
    }

    fn parse(&self, req: &PromptRequest) -> String {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| Regex::new(r"(?m)^\s*Feature:\s*([A-Za-z0-9_]+)\s*=\s*(.+?)\s*$").unwrap());
        let lines: Vec<String> = re
            .captures_iter(&req.user_text)
            .map(|c| format!("{}: {}", &c[1], &c[2]))
            .collect();
        if lines.is_empty() {
            "No features were proposed.".into()
        } else {
            lines.join("\n")
        }
    }

    fn rewrite(&self, req: &PromptRequest) -> String {
        let line = req
            .user_text
            .lines()
            .find_map(|l| l.trim().strip_prefix(protocol::EXPRESSION_PREFIX))
            .unwrap_or("")
            .trim();
        static SINGLE_EQ: OnceLock<Regex> = OnceLock::new();
        let single_eq = SINGLE_EQ.get_or_init(|| Regex::new(r"([^=!<>])=([^=])").unwrap());
        let fixed = line
            .replace("**", "*")
            .replace('^', "*")
            .replace("&&", " and ")
            .replace("||", " or ");
        let (name, expr) = match fixed.rsplit_once(':') {
            Some((n, e)) => (n.trim().to_string(), e.trim().to_string()),
            None => (String::new(), fixed.trim().to_string()),
        };
        let expr = single_eq.replace_all(&expr, "$1==$2").into_owned();
        if name.is_empty() {
            expr
        } else {
            format!("{name}: {expr}")
        }
    }

    fn nominate(&self, req: &PromptRequest, stream: u64) -> String {
        let n = protocol::parse_count(&req.user_text).unwrap_or(15);
        let mut names: Vec<String> = self.scores.keys().cloned().collect();
        names.sort();
        let ranked = self.rank(&names, self.temperature(req), stream);
        format!(
            "Thinking step by step about well-established markers for this phenotype.\n\nAnswer: {}",
            ranked.into_iter().take(n).collect::<Vec<_>>().join(", ")
        )
    }
}

impl LlmProvider for OracleProvider {
    fn complete(&self, req: &PromptRequest) -> Result<CompletionResponse, LlmError> {
        req.validate()?;
        let stream = hash_str(&req.cache_key("oracle"));
        let text = match req.tag {
            PromptTag::Filter => self.filter(req),
            PromptTag::Select | PromptTag::SelectFinal => self.select(req, stream),
            PromptTag::Engineer => self.engineer(req, stream),
            PromptTag::Parse => self.parse(req),
            PromptTag::FunctionWrite => self.rewrite(req),
            PromptTag::Nominate => self.nominate(req, stream),
        };
        Ok(CompletionResponse::text(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::protocol::{render_count, render_variant_block};

    fn abc() -> OracleProvider {
        oracle_provider([("a".into(), 9.0), ("b".into(), 1.0), ("c".into(), 5.0)].into(), 1).unwrap()
    }

    fn select_req(t: f64, seed: u64) -> PromptRequest {
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        PromptRequest::new(
            PromptTag::Select,
            format!("{}\n\n{}", render_count(3), render_variant_block(&names)),
        )
        .with_temperature(t)
        .with_seed_hint(seed)
    }

    #[test]
    fn zero_temperature_sorts_by_score() {
        let o = abc();
        assert_eq!(o.complete(&select_req(0.0, 0)).unwrap().text, "a, c, b");
        assert_eq!(o.complete(&select_req(0.0, 99)).unwrap().text, "a, c, b");
    }

    #[test]
    fn noisy_ranking_keeps_leader_in_majority() {
        let o = abc();
        let firsts = (0..1000)
            .filter(|&s| o.complete(&select_req(0.3, s)).unwrap().text.starts_with("a,"))
            .count();
        assert!(firsts > 500, "{firsts}");
    }

    #[test]
    fn filter_thresholds() {
        let o = oracle_provider([("rs671".into(), 9.0), ("junk1".into(), 1.0)].into(), 0).unwrap();
        let body = render_variant_block(&["rs671".into(), "junk1".into(), "junk2".into()]);
        let r = o.complete(&PromptRequest::new(PromptTag::Filter, body)).unwrap();
        assert_eq!(r.text, "rs671: Yes\njunk1: No\njunk2: No");
    }

    #[test]
    fn engineer_then_parse() {
        let o = abc().with_interactions(vec![("b".into(), "c".into())]);
        let prompt = format!(
            "Features:\n{}",
            protocol::render_alias_block(&["a".into(), "b".into(), "c".into()])
        );
        let text = o
            .complete(&PromptRequest::new(PromptTag::Engineer, prompt))
            .unwrap()
            .text;
        assert!(text.contains("Feature: x2_x3_product = x2 * x3"), "{text}");
        let parsed = o
            .complete(&PromptRequest::new(PromptTag::Parse, format!("```\n{text}\n```")))
            .unwrap()
            .text;
        assert_eq!(parsed.lines().next(), Some("x2_x3_product: x2 * x3"));
        assert_eq!(parsed.lines().count(), 4);
    }

    #[test]
    fn rewrite_fixes_common_slips() {
        let o = abc();
        let req = PromptRequest::new(PromptTag::FunctionWrite, "Expression: f: x1 ** x2\nError: ...");
        assert_eq!(o.complete(&req).unwrap().text, "f: x1 * x2");
        let req = PromptRequest::new(PromptTag::FunctionWrite, "Expression: g: x1 = 2 && x2 >= 1");
        assert_eq!(o.complete(&req).unwrap().text, "g: x1 == 2  and  x2 >= 1");
    }

    #[test]
    fn empty_scores_rejected() {
        assert!(oracle_provider(HashMap::new(), 0).is_err());
    }
}
