use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::RelationEdge;
use crate::ingest::{label_color, Palette};
use crate::providers::{ChatModel, DescribeInput, DescribeMode, VisionLanguageModel};

pub const DECISOR_SYSTEM_PROMPT: &str = include_str!("../../prompts/decisor_system.txt");

/// Marker the decisor re-prompt always contains.
pub const REDECIDE_MARKER: &str = "did not start with a decision";

pub fn focus_suffix(color_a: &str, color_b: &str) -> String {
    format!(" Only consider the two objects outlined by the {color_a} and {color_b} bounding boxes.")
}

/// Why a subtask pair could not be described.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unevaluated(pub String);

/// Ask the VLM about one related pair, steering it to the two outlined
/// objects by their label colors. In image mode the edge's persisted crop
/// (relative to `crop_root`) is sent instead of the stored feature.
pub fn evaluate_subtask(
    edge: &RelationEdge,
    labels: (u32, u32),
    prompt: &str,
    palette: &Palette,
    vlm: &dyn VisionLanguageModel,
    crop_root: Option<&Path>,
) -> Result<String, Unevaluated> {
    let color = |l: u32| label_color(l, palette).map(|(_, name)| name).map_err(|e| Unevaluated(e.to_string()));
    let full_prompt = format!("{}{}", prompt.trim_end(), focus_suffix(color(labels.0)?, color(labels.1)?));
    let result = match vlm.describe_mode() {
        DescribeMode::Feature => vlm.describe(DescribeInput::Feature(&edge.feature), &full_prompt),
        DescribeMode::ImageModeOnly => {
            let path = match (&edge.pair_crop, crop_root) {
                (Some(rel), Some(root)) => root.join(rel),
                (Some(rel), None) => Path::new(rel).to_path_buf(),
                (None, _) => return Err(Unevaluated("no pair crop".into())),
            };
            let img = match image::open(&path) {
                Ok(img) => img.to_rgb8(),
                Err(e) => return Err(Unevaluated(format!("no pair crop ({}: {e})", path.display()))),
            };
            vlm.describe(DescribeInput::Image(&img), &full_prompt)
        }
    };
    match result {
        Ok(text) if text.trim().is_empty() => Err(Unevaluated("empty description".into())),
        Ok(text) => Ok(text),
        Err(e) => Err(Unevaluated(e.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Execute,
    Skip,
    Undecided,
}

const NEGATIVE: &[&str] = &[
    "no", "not", "cannot", "cant", "skip", "shouldnt", "wont", "dont", "unable", "impossible",
];
const AFFIRMATIVE: &[&str] = &["yes", "execute", "can", "should", "possible", "feasible", "proceed"];

/// Read a decisor reply: a leading EXECUTE/SKIP token decides; otherwise
/// any negative keyword means skip and any affirmative one means execute.
pub fn parse_decision(reply: &str) -> Decision {
    let cleaned: String = reply.chars().filter(|c| *c != '\'' && *c != '\u{2019}').collect();
    let words: Vec<String> = cleaned
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    match words.first().map(String::as_str) {
        Some("execute") => return Decision::Execute,
        Some("skip") => return Decision::Skip,
        _ => {}
    }
    if words.iter().any(|w| NEGATIVE.contains(&w.as_str())) {
        Decision::Skip
    } else if words.iter().any(|w| AFFIRMATIVE.contains(&w.as_str())) {
        Decision::Execute
    } else {
        Decision::Undecided
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisorOutcome {
    pub execute: bool,
    pub undecided: bool,
    pub rationale: String,
}

pub fn decisor_prompt(subtask_prompt: &str, description: &str) -> String {
    format!("Step: {subtask_prompt}\nDescription: {description}")
}

/// Let the decisor judge a description; one re-prompt when the reply has
/// no decision, after which the step is skipped and flagged undecided.
pub fn decide(
    description: &str,
    subtask_prompt: &str,
    llm: &dyn ChatModel,
) -> Result<DecisorOutcome, crate::providers::ProviderError> {
    let user = decisor_prompt(subtask_prompt, description);
    let reply = llm.chat(DECISOR_SYSTEM_PROMPT, &user)?;
    let outcome = |d: Decision, rationale: String| DecisorOutcome {
        execute: d == Decision::Execute,
        undecided: d == Decision::Undecided,
        rationale,
    };
    match parse_decision(&reply) {
        Decision::Undecided => {}
        d => return Ok(outcome(d, reply)),
    }
    let again = format!("{user}\n\nYour previous answer {REDECIDE_MARKER}. Reply with EXECUTE or SKIP first.");
    let reply = llm.chat(DECISOR_SYSTEM_PROMPT, &again)?;
    Ok(outcome(parse_decision(&reply), reply))
}
