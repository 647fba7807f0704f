//! Implicit instruction generation: an optional external text generator with a
//! post-filter, and an in-repo template bank as the offline fallback.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::{mentions, Provenance};
use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionForm {
    Question,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedInstruction {
    pub text: String,
    pub form: InstructionForm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    pub items: Vec<GeneratedInstruction>,
    pub provenance: Provenance,
}

/// Anything that turns a prompt into text, e.g. a hosted chat model.
pub trait TextGenerator {
    fn generate(&self, prompt: &str) -> Result<String, DatasetError>;
}

/// Minimal client for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct OpenAiClient {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
}

/// Environment variable holding the external generator's credential.
pub const API_KEY_ENV: &str = "GRASPREASON_LLM_API_KEY";

impl OpenAiClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        OpenAiClient {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
        }
    }
}

impl TextGenerator for OpenAiClient {
    fn generate(&self, prompt: &str) -> Result<String, DatasetError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0.7,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = ureq::post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| DatasetError::Generation(e.to_string()))?;
        let v: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| DatasetError::Generation(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| DatasetError::Generation("response has no message content".into()))
    }
}

const BASE_QUESTIONS: &[&str] = &[
    "what can i use to {f} ?",
    "which object helps me {f} ?",
    "is there anything here that lets me {f} ?",
    "what should i take to {f} ?",
    "which of these would you use to {f} ?",
    "can you find me something to {f} ?",
    "what here is good to {f} ?",
    "which thing on the table can {f} ?",
    "do you see something that can {f} ?",
    "what would help me {f} ?",
    "which item should i grab to {f} ?",
    "could you give me what i need to {f} ?",
    "what is the right tool to {f} ?",
    "which one lets me {f} ?",
    "anything here i can use to {f} ?",
    "what do i pick to {f} ?",
    "which object is meant to {f} ?",
    "can something here {f} ?",
    "what tool would you hand me to {f} ?",
    "which of the objects can i use to {f} ?",
];

const BASE_INSTRUCTIONS: &[&str] = &[
    "i need to {f} .",
    "i want to {f} .",
    "give me something to {f} .",
    "help me {f} .",
    "i have to {f} .",
    "hand me what i need to {f} .",
    "find me something that can {f} .",
    "pass me a tool to {f} .",
    "i would like to {f} .",
    "get me the thing to {f} .",
    "i am going to {f} .",
    "bring me something so i can {f} .",
    "i plan to {f} .",
    "grab what helps me {f} .",
    "let me {f} .",
    "i must {f} now .",
    "please help me {f} .",
    "i am about to {f} .",
    "fetch something that will {f} .",
    "i need a tool to {f} .",
];

const GERUND_QUESTIONS: &[&str] = &[
    "what can i use for {f} ?",
    "which object is meant for {f} ?",
    "is there something here for {f} ?",
    "what should i take for {f} ?",
    "which of these is good for {f} ?",
    "can you find me something for {f} ?",
    "what here works for {f} ?",
    "which thing on the table is for {f} ?",
    "do you see anything made for {f} ?",
    "what would help with {f} ?",
    "which item should i grab for {f} ?",
    "could you give me what i need for {f} ?",
    "what is the right tool for {f} ?",
    "which one is used for {f} ?",
    "anything here suitable for {f} ?",
    "what do i pick for {f} ?",
    "which object is handy for {f} ?",
    "is something here useful for {f} ?",
    "what tool would you hand me for {f} ?",
    "which of the objects is designed for {f} ?",
];

const GERUND_INSTRUCTIONS: &[&str] = &[
    "i need something for {f} .",
    "give me a tool for {f} .",
    "help me with {f} .",
    "hand me what i need for {f} .",
    "find me something for {f} .",
    "pass me the tool for {f} .",
    "i am busy with {f} .",
    "get me the thing for {f} .",
    "bring me something useful for {f} .",
    "i want something made for {f} .",
    "grab what is used for {f} .",
    "i need help with {f} .",
    "fetch the tool for {f} .",
    "please find something suitable for {f} .",
    "i am looking for something for {f} .",
    "i could use a hand with {f} .",
    "get me what works for {f} .",
    "i need the right tool for {f} .",
    "please pass me something for {f} .",
    "find a tool handy for {f} .",
];

/// Grammatical class of a function phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionClass {
    /// "cut the vegetables"
    Base,
    /// "cutting paper or fabric"
    Gerund,
}

/// Offline templates, about twenty per (class, form).
#[derive(Debug, Clone)]
pub struct TemplateBank {
    pub base_questions: Vec<String>,
    pub base_instructions: Vec<String>,
    pub gerund_questions: Vec<String>,
    pub gerund_instructions: Vec<String>,
}

impl Default for TemplateBank {
    fn default() -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        TemplateBank {
            base_questions: own(BASE_QUESTIONS),
            base_instructions: own(BASE_INSTRUCTIONS),
            gerund_questions: own(GERUND_QUESTIONS),
            gerund_instructions: own(GERUND_INSTRUCTIONS),
        }
    }
}

impl TemplateBank {
    pub fn templates(&self, class: FunctionClass, form: InstructionForm) -> &[String] {
        match (class, form) {
            (FunctionClass::Base, InstructionForm::Question) => &self.base_questions,
            (FunctionClass::Base, InstructionForm::Instruction) => &self.base_instructions,
            (FunctionClass::Gerund, InstructionForm::Question) => &self.gerund_questions,
            (FunctionClass::Gerund, InstructionForm::Instruction) => &self.gerund_instructions,
        }
    }

    pub fn expand(&self, class: FunctionClass, form: InstructionForm, function: &str, index: usize) -> String {
        let t = self.templates(class, form);
        t[index % t.len()].replace("{f}", function)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, class: FunctionClass, form: InstructionForm, function: &str) -> String {
        self.templates(class, form)
            .choose(rng)
            .expect("non-empty template list")
            .replace("{f}", function)
    }
}

/// Function phrases declared in a description ("used for X", "used to Y").
///
/// Alternatives joined by "or"/"and" stay together, matching how the phrase
/// reads in the description.
pub fn extract_functions(description: &str) -> Vec<(String, FunctionClass)> {
    let lower = description.to_lowercase();
    let mut out = Vec::new();
    for (marker, class) in [("used for ", FunctionClass::Gerund), ("used to ", FunctionClass::Base)] {
        let mut rest = lower.as_str();
        while let Some(i) = rest.find(marker) {
            let tail = &rest[i + marker.len()..];
            let end = tail.find(['.', ';', ',', '\n']).unwrap_or(tail.len());
            let phrase = tail[..end].trim();
            if !phrase.is_empty() {
                out.push((phrase.to_string(), class));
            }
            rest = &tail[end..];
        }
    }
    out
}

fn prompt_for(object_description: &str, part_descriptions: &[String], target_name: &str) -> String {
    let mut p = format!(
        "Object description: {object_description}\n"
    );
    for d in part_descriptions {
        p.push_str(&format!("Part description: {d}\n"));
    }
    p.push_str(&format!(
        "Write 5 indirect questions and 5 indirect instructions a person might say when they need this \
         object, based only on what it is used for. Never use the words \"{target_name}\". \
         Put each on its own line, prefixing questions with \"Q:\" and instructions with \"I:\"."
    ));
    p
}

fn parse_generated(text: &str) -> Vec<GeneratedInstruction> {
    text.lines()
        .filter_map(|l| {
            let l = l.trim().trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ')' || c == '-').trim();
            let (form, rest) = if let Some(r) = l.strip_prefix("Q:") {
                (InstructionForm::Question, r)
            } else if let Some(r) = l.strip_prefix("I:") {
                (InstructionForm::Instruction, r)
            } else {
                return None;
            };
            let text = rest.trim();
            (!text.is_empty()).then(|| GeneratedInstruction {
                text: text.to_string(),
                form,
            })
        })
        .collect()
}

const PER_FORM: usize = 5;

fn take_valid(
    pool: &mut Vec<GeneratedInstruction>,
    items: impl IntoIterator<Item = GeneratedInstruction>,
    target_name: &str,
) {
    for it in items {
        let have = pool.iter().filter(|p| p.form == it.form).count();
        if have < PER_FORM && !mentions(&it.text, target_name) && !pool.contains(&it) {
            pool.push(it);
        }
    }
}

fn complete(pool: &mut Vec<GeneratedInstruction>) -> bool {
    [InstructionForm::Question, InstructionForm::Instruction]
        .iter()
        .all(|f| pool.iter().filter(|p| p.form == *f).count() >= PER_FORM)
}

/// Five indirect questions and five indirect instructions for one target.
///
/// With a generator, its output is post-filtered against `target_name` and the
/// generator is asked once more if too few survive; anything still missing is
/// filled from `bank` and the fallback is recorded in the provenance.
pub fn generate_instructions(
    object_description: &str,
    part_descriptions: &[String],
    target_name: &str,
    llm: Option<&dyn TextGenerator>,
    bank: &TemplateBank,
) -> Result<GenerationOutput, DatasetError> {
    if object_description.trim().is_empty() {
        return Err(DatasetError::Config("empty object description".into()));
    }
    let mut pool = Vec::new();
    let mut provenance = Provenance::template();
    if let Some(llm) = llm {
        let prompt = prompt_for(object_description, part_descriptions, target_name);
        for _ in 0..2 {
            match llm.generate(&prompt) {
                Ok(text) => take_valid(&mut pool, parse_generated(&text), target_name),
                Err(e) => log::warn!("instruction generator failed: {e}"),
            }
            if complete(&mut pool) {
                break;
            }
        }
        if complete(&mut pool) {
            provenance.source = "llm".into();
        } else {
            provenance.fallback = true;
        }
    }
    if !complete(&mut pool) {
        let mut functions = extract_functions(object_description);
        for d in part_descriptions {
            functions.extend(extract_functions(d));
        }
        if functions.is_empty() {
            return Err(DatasetError::Config(format!(
                "description declares no function (\"used for ...\" / \"used to ...\"): {object_description}"
            )));
        }
        let mut candidates = Vec::new();
        for i in 0..BASE_QUESTIONS.len() {
            for (f, class) in &functions {
                for form in [InstructionForm::Question, InstructionForm::Instruction] {
                    candidates.push(GeneratedInstruction {
                        text: bank.expand(*class, form, f, i),
                        form,
                    });
                }
            }
        }
        take_valid(&mut pool, candidates, target_name);
    }
    if !complete(&mut pool) {
        return Err(DatasetError::Generation(format!(
            "could not produce instructions that avoid '{target_name}'"
        )));
    }
    pool.sort_by_key(|p| p.form == InstructionForm::Instruction);
    Ok(GenerationOutput {
        items: pool,
        provenance,
    })
}
