use crate::llm::protocol::{render_alias_block, EXPRESSION_PREFIX};
use crate::llm::{PromptRequest, PromptTag};

use super::{EngineeringConfig, EngineeringError};

pub const SYSTEM_TEXT: &str = "You are an expert in human genetics and in feature engineering for machine learning.";

pub const NO_EXAMPLES: &str = "No examples available.";

const INSTRUCTIONS: &str = "## Instructions\n\
You will design new features for a classifier. The input features are genotypes: each value counts the \
minor alleles a person carries at one variant (0, 1 or 2). Construct new features as interaction terms \
between the given features, guided by what is known about the variants and their genes.";

const DETAILED: &str = "## Detailed instructions\n\
Refer to features only by their aliases (x1, x2, ...). You may:\n\
1. Multiply features, e.g. x1 * x2, to capture a joint effect of two variants.\n\
2. Add or subtract features, e.g. x1 + x2, to capture a combined allele dosage.\n\
3. Use comparison conditions with >, >=, <, <=, == or !=, e.g. x4 >= 1 (carrier of at least one minor allele).\n\
4. Combine conditions with and / or, e.g. (x1 > 0) and (x2 == 2).\n\
Parentheses and non-negative numbers are allowed. No other operations or functions are available.\n\n\
Demonstration for a genotype task:\n\
If x3 and x7 lie in genes of the same pathway, a person carrying minor alleles at both may have a higher risk \
than either alone suggests. A suitable feature is\n\
Feature: x3_x7_interaction = x3 * x7\n\
and a carrier-status version is\n\
Feature: x3_x7_both_carriers = (x3 > 0) and (x7 > 0)";

const STEP_BY_STEP: &str = "## Solution\n\
Think step by step. First reason about which variants may act together for this task, then list each new \
feature on its own line in the form `Feature: <name> = <expression>`.";

/// Assembles the six-part engineering prompt: instructions, task, aliased
/// feature list, examples, detailed instructions with a demonstration, and a
/// step-by-step directive.
pub fn build_engineering_prompt(
    features: &[String],
    examples: &[String],
    cfg: &EngineeringConfig,
) -> Result<PromptRequest, EngineeringError> {
    if examples.len() > cfg.max_examples {
        return Err(EngineeringError::TooManyExamples {
            given: examples.len(),
            cap: cfg.max_examples,
        });
    }
    if features.is_empty() {
        return Err(EngineeringError::NoFeatures);
    }
    let examples_body = if examples.is_empty() {
        NO_EXAMPLES.to_string()
    } else {
        format!("```\n{}\n```", examples.join("\n"))
    };
    let text = format!(
        "{INSTRUCTIONS}\n\n\
         ## Task\n{task}\n\n\
         ## Features\n{aliases}\n\
         ## Examples\n{examples_body}\n\n\
         {DETAILED}\n\n\
         {STEP_BY_STEP}",
        task = cfg.task_description,
        aliases = render_alias_block(features),
    );
    Ok(PromptRequest::new(PromptTag::Engineer, text)
        .with_system(SYSTEM_TEXT)
        .with_temperature(cfg.temperature))
}

pub(crate) fn parse_prompt(free_text: &str) -> PromptRequest {
    PromptRequest::new(
        PromptTag::Parse,
        format!(
            "The text below proposes new features. Extract every proposed feature and list them one per line \
             as `<name>: <expression>`, using the aliases (x1, x2, ...) exactly as written. Output nothing else.\n\n\
             ```\n{free_text}\n```"
        ),
    )
    .with_temperature(0.0)
}

pub(crate) fn rewrite_prompt(line: &str, error: &str, n_features: usize) -> PromptRequest {
    PromptRequest::new(
        PromptTag::FunctionWrite,
        format!(
            "The feature expression below failed to compile.\n\
             {EXPRESSION_PREFIX} {line}\n\
             Error: {error}\n\n\
             Rewrite it so it compiles. Allowed: aliases x1..x{n_features}, non-negative numbers, + - *, \
             comparisons (> >= < <= == !=), and, or, parentheses. Reply with the corrected line only, \
             as `<name>: <expression>`."
        ),
    )
    .with_temperature(0.0)
}
