use serde::{Deserialize, Serialize};

use super::ReasoningError;
use crate::providers::ChatModel;

pub const TASK_SYSTEM_PROMPT: &str = include_str!("../../prompts/task_system.txt");

/// Marker the retry prompt always contains.
pub const RETRY_MARKER: &str = "could not be parsed";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subtask {
    pub object_a: String,
    pub object_b: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanBody {
    relevant_objects: Vec<String>,
    #[serde(default)]
    subtasks: Vec<Subtask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub relevant_objects: Vec<String>,
    pub subtasks: Vec<Subtask>,
    pub raw_response: String,
    pub retry_count: usize,
}

/// Strip one surrounding markdown code fence, if present.
fn unfence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let Some(body) = rest.strip_suffix("```") else {
        return t;
    };
    // drop the info string ("json") on the opening line
    match body.find('\n') {
        Some(nl) => body[nl + 1..].trim(),
        None => body.trim(),
    }
}

/// Parse a plan reply: exactly one JSON object with the plan keys and
/// nothing else around it.
pub fn parse_plan(response: &str) -> Result<TaskPlan, String> {
    let text = unfence(response);
    let mut docs = serde_json::Deserializer::from_str(text).into_iter::<serde_json::Value>();
    let first = match docs.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(format!("invalid JSON: {e}")),
        None => return Err("no JSON document found".into()),
    };
    if docs.next().is_some() {
        return Err("expected exactly one JSON document".into());
    }
    let body: PlanBody = serde_json::from_value(first).map_err(|e| format!("plan schema: {e}"))?;
    if body.relevant_objects.is_empty() {
        return Err("relevant_objects is empty".into());
    }
    if let Some(blank) = body.relevant_objects.iter().find(|n| n.trim().is_empty()) {
        return Err(format!("blank object name {blank:?}"));
    }
    for (i, s) in body.subtasks.iter().enumerate() {
        for name in [&s.object_a, &s.object_b] {
            if !body.relevant_objects.contains(name) {
                return Err(format!("subtask {i} names {name:?}, which is not a relevant object"));
            }
        }
        if s.prompt.trim().is_empty() {
            return Err(format!("subtask {i} has an empty prompt"));
        }
    }
    Ok(TaskPlan {
        relevant_objects: body.relevant_objects,
        subtasks: body.subtasks,
        raw_response: response.to_string(),
        retry_count: 0,
    })
}

pub fn retry_prompt(task: &str, previous: &str, error: &str) -> String {
    format!(
        "{task}\n\nYour previous reply {RETRY_MARKER}: {error}\nPrevious reply:\n{previous}\n\
         Answer again with exactly one JSON object."
    )
}

/// Ask the task LLM for a plan, re-prompting with the parse error up to
/// `max_retries` times.
pub fn parse_task(task: &str, llm: &dyn ChatModel, max_retries: usize) -> Result<TaskPlan, ReasoningError> {
    let task = task.trim();
    if task.is_empty() {
        return Err(ReasoningError::EmptyTask);
    }
    let mut responses: Vec<String> = Vec::new();
    let mut user = task.to_string();
    loop {
        let reply = llm.chat(TASK_SYSTEM_PROMPT, &user)?;
        match parse_plan(&reply) {
            Ok(mut plan) => {
                plan.retry_count = responses.len();
                return Ok(plan);
            }
            Err(error) => {
                log::warn!("task plan rejected: {error}");
                user = retry_prompt(task, &reply, &error);
                responses.push(reply);
                if responses.len() > max_retries {
                    return Err(ReasoningError::PlanExhausted {
                        attempts: responses.len(),
                        last_error: error,
                        responses,
                    });
                }
            }
        }
    }
}
