//! Text conventions shared by prompt builders, response parsers and the
//! offline providers.
//!
//! Prompts list candidate variants as a `Variants:` block of `- name` lines,
//! state the requested count as `Number to select: n`, and bind aliases as
//! `x1=name` lines. Free-text answers put their final list after an
//! `Answer:` marker.

use std::sync::OnceLock;

use regex::Regex;

pub const VARIANTS_HEADER: &str = "Variants:";
pub const COUNT_PREFIX: &str = "Number to select:";
pub const EXPRESSION_PREFIX: &str = "Expression:";
pub const ANSWER_MARKER: &str = "Answer:";
/// Wording used once a filter batch looks too permissive.
pub const STRICT_RELEVANCE: &str = "clearly relevant";
pub const LENIENT_RELEVANCE: &str = "potentially relevant";

pub fn render_variant_block(names: &[String]) -> String {
    let mut s = String::from(VARIANTS_HEADER);
    s.push('\n');
    for n in names {
        s.push_str("- ");
        s.push_str(n);
        s.push('\n');
    }
    s
}

/// Names listed in the first `Variants:` block, in presentation order.
pub fn parse_variant_block(text: &str) -> Vec<String> {
    let mut lines = text.lines().skip_while(|l| l.trim() != VARIANTS_HEADER);
    if lines.next().is_none() {
        return Vec::new();
    }
    lines
        .map_while(|l| l.strip_prefix("- ").map(|n| n.trim().to_string()))
        .collect()
}

pub fn render_count(n: usize) -> String {
    format!("{COUNT_PREFIX} {n}")
}

pub fn parse_count(text: &str) -> Option<usize> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(COUNT_PREFIX))
        .and_then(|rest| rest.trim().parse().ok())
}

pub fn render_alias_block(names: &[String]) -> String {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| format!("x{}={}\n", i + 1, n))
        .collect()
}

fn alias_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^x(\d+)=(\S.*)$").expect("valid regex"))
}

/// `(alias index, variant name)` pairs from `x<i>=<name>` lines.
pub fn parse_alias_block(text: &str) -> Vec<(usize, String)> {
    text.lines()
        .filter_map(|l| {
            let c = alias_line().captures(l.trim())?;
            Some((c[1].parse().ok()?, c[2].trim().to_string()))
        })
        .collect()
}

/// The text after the last `Answer:` marker (case-insensitive), or the whole
/// text when there is none.
pub fn answer_segment(text: &str) -> &str {
    let lower = text.to_ascii_lowercase();
    match lower.rfind(&ANSWER_MARKER.to_ascii_lowercase()) {
        Some(pos) => &text[pos + ANSWER_MARKER.len()..],
        None => text,
    }
}

/// Strips list decoration: bullets, numbering, quotes, backticks, emphasis
/// and trailing punctuation.
pub fn clean_item(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let before = s;
        s = s.trim_start_matches(['-', '•', '*', '>']).trim_start();
        if let Some(pos) = s.find(['.', ')']) {
            if pos > 0 && s[..pos].chars().all(|c| c.is_ascii_digit()) {
                s = s[pos + 1..].trim_start();
            }
        }
        if s == before {
            break;
        }
    }
    s.trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | '*' | '[' | ']'))
        .trim_end_matches(['.', ';', ','])
        .trim()
        .to_string()
}

/// Splits an answer into items on commas, semicolons and newlines.
pub fn split_items(segment: &str) -> Vec<String> {
    segment
        .split([',', ';', '\n'])
        .map(clean_item)
        .filter(|s| !s.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_block_round_trip() {
        let names: Vec<String> = vec!["rs1".into(), "NM_000.1:c.35delG".into()];
        let text = format!("Task\n\n{}\nReply.", render_variant_block(&names));
        assert_eq!(parse_variant_block(&text), names);
        assert!(parse_variant_block("nothing here").is_empty());
    }

    #[test]
    fn count_and_aliases() {
        assert_eq!(parse_count("a\nNumber to select: 15\nb"), Some(15));
        assert_eq!(parse_count("none"), None);
        let block = render_alias_block(&["rs1".into(), "rs2".into()]);
        assert_eq!(parse_alias_block(&block), vec![(1, "rs1".into()), (2, "rs2".into())]);
    }

    #[test]
    fn answer_parsing() {
        let t = "I think rs9 is weak.\nFinal answer: rs1, rs2.";
        assert_eq!(split_items(answer_segment(t)), vec!["rs1", "rs2"]);
        assert_eq!(split_items("1. `rs1`\n2) **rs2**\n- rs3"), vec!["rs1", "rs2", "rs3"]);
    }
}
