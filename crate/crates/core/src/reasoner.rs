//! Few-shot inference prompt and the final Yes/No verdict.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Label, Sample};
use crate::json_extract::last_field;
use crate::llm_gateway::{Gateway, GatewayError, ModelSettings};

const INSTRUCTION: &str = "Given a text, two events (Event X and Event Y). Based on the related examples, you need to determine whether there is a causal relationship between the given events X and Y. Please follow the instructions below and refer to the provided examples when answering.
###
Instructions:
You should refer to the examples but not be entirely influenced by them. Whether the events in the examples have a causal relationship DOES NOT affect whether the given events in the provided text have a causal relationship.
You should give step-by-step reasoning path before giving the final answer.
";

const ANSWER_FORMAT: &str = "Give step-by-step reasoning path, and then organize the final answer in JSON format: {\"Answer\": \"Your answer, the answer must be either 'Yes' or 'No', and nothing else.\"}\nYour response:\n";

/// A demonstration as shown in the prompt.
#[derive(Debug, Clone, Copy)]
pub struct Demonstration<'a> {
    pub sample: &'a Sample,
    pub label: Label,
}

pub fn build_inference_prompt(query: &Sample, examples: &[Demonstration<'_>]) -> String {
    let mut out = String::with_capacity(2048);
    out.push_str(INSTRUCTION);
    out.push_str("\n###\nHere are some examples.\n");
    for (i, d) in examples.iter().enumerate() {
        out.push_str(&format!(
            "***Example {}***\nText: {};\nEvent X: {};\nEvent Y: {};\nAnswer: {{\"Answer\": \"{}\"}}\n\n",
            i + 1,
            d.sample.context,
            d.sample.source.surface,
            d.sample.target.surface,
            d.label
        ));
    }
    out.push_str(&format!(
        "\n###\nText: {};\nEvent X: {};\nEvent Y: {};\n",
        query.context, query.source.surface, query.target.surface
    ));
    out.push_str(ANSWER_FORMAT);
    out
}

/// Yes or No from the last JSON object carrying an "Answer" key.
pub fn parse_answer(response: &str) -> Option<Label> {
    let value = last_field(response, "answer")?;
    match value.trim().to_lowercase().as_str() {
        "yes" => Some(Label::Yes),
        "no" => Some(Label::No),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub answer: Label,
    pub example_ids: Vec<String>,
    pub prompt_digest: String,
    #[serde(skip)]
    pub raw_response: String,
}

impl Verdict {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

/// Asks for a verdict, once more on an unparsable reply, and settles on No.
pub fn infer(
    query: &Sample,
    examples: &[Demonstration<'_>],
    example_ids: Vec<String>,
    gateway: &Gateway,
    settings: &ModelSettings,
) -> Result<Verdict, GatewayError> {
    let prompt = build_inference_prompt(query, examples);
    let prompt_digest = hex::encode(Sha256::digest(prompt.as_bytes()));
    let request = settings.request(prompt);
    let (parsed, response) = gateway.complete_parsed(&request, |text| parse_answer(text).ok_or(()))?;
    let answer = parsed.unwrap_or_else(|()| {
        log::warn!("query {}: no parsable answer after retry, using No", query.id);
        Label::No
    });
    Ok(Verdict {
        id: query.id.clone(),
        answer,
        example_ids,
        prompt_digest,
        raw_response: response.text,
    })
}
