use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::Position;
use super::{PipelineError, Result};
use crate::backends::{ChatMessage, Role};

pub const MERGE_ASSISTANT_PREFIX: &str = "Here's the merged caption:";

pub const MERGE_SYSTEM_PROMPT: &str = "**Input**:
- You will receive a **global caption** describing an image.
- Additionally, you will have access to **local captions** generated for specific patches within the image.
- Both global and local captions may contain noise or errors.

**Task Objective**:
- Your goal is to create a **merged global caption** that combines relevant information from both sources.
- The merged caption should be **no longer than the original ones**.
- You only give the merged caption as output, **without any additional information**.
- Do NOT give any explaination or notes on how you generate this caption.

**Guidelines**:
- **Combine Information**: Extract key details from both global and local captions.
- **Filter Noise**: Remove non-sense content, inaccuracies, and irrelevant information.
- **Prioritize Visual Details**: Highlight essential visual elements instead of feeling or atmosphere
- **Be Concise**: Use as few words as possible while maintaining coherence and clarity.
- **Ensure Coherence**: Arrange the merged information logically.

Remember, your output should be a high-quality caption that is concise, informative, and coherent!";

const CORRECTED_USER: &str = "### Global Caption: {global}
### Top-left: {top_left}
### Bottom-left: {bottom_left}
### Top-right: {top_right}
### Bottom-right: {bottom_right}";

// Fourth section label repeats "Bottom-left" as printed; the slot is still
// the bottom-right caption.
const VERBATIM_USER: &str = "### Global Caption: {global}
### Top-left: {top_left}
### Bottom-left: {bottom_left}
### Top-right: {top_right}
### Bottom-left: {bottom_right}";

const NAIVE_USER: &str = "merge these captions
### Global Caption: {global}
### Top-left: {top_left}
### Bottom-left: {bottom_left}
### Top-right: {top_right}
### Bottom-right: {bottom_right}";

pub const SLOTS: [&str; 5] = [
    "global",
    "top_left",
    "bottom_left",
    "top_right",
    "bottom_right",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplatePreset {
    #[default]
    Corrected,
    PaperVerbatim,
    Naive,
}

impl TemplatePreset {
    pub const ALL: [TemplatePreset; 3] = [
        TemplatePreset::Corrected,
        TemplatePreset::PaperVerbatim,
        TemplatePreset::Naive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplatePreset::Corrected => "corrected",
            TemplatePreset::PaperVerbatim => "paper-verbatim",
            TemplatePreset::Naive => "naive",
        }
    }

    pub fn template(self) -> MergePromptTemplate {
        let (system, user, prefix) = match self {
            TemplatePreset::Corrected => {
                (MERGE_SYSTEM_PROMPT, CORRECTED_USER, MERGE_ASSISTANT_PREFIX)
            }
            TemplatePreset::PaperVerbatim => {
                (MERGE_SYSTEM_PROMPT, VERBATIM_USER, MERGE_ASSISTANT_PREFIX)
            }
            TemplatePreset::Naive => ("", NAIVE_USER, ""),
        };
        MergePromptTemplate::new(system, user, prefix).expect("built-in template is well formed")
    }
}

impl fmt::Display for TemplatePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplatePreset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        TemplatePreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                format!("unknown template {s:?}; expected corrected, paper-verbatim, or naive")
            })
    }
}

/// Merge instruction with five named slots. An empty `system` or
/// `assistant_prefix` is omitted from the rendered messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergePromptTemplate {
    system: String,
    user_template: String,
    assistant_prefix: String,
}

/// Caption texts for one merge, keyed the same way as the slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeInputs<'a> {
    pub global: &'a str,
    pub top_left: &'a str,
    pub top_right: &'a str,
    pub bottom_left: &'a str,
    pub bottom_right: &'a str,
}

impl<'a> MergeInputs<'a> {
    pub fn new(global: &'a str, locals: [&'a str; 4]) -> Self {
        let [top_left, top_right, bottom_left, bottom_right] = locals;
        Self {
            global,
            top_left,
            top_right,
            bottom_left,
            bottom_right,
        }
    }

    fn slot(&self, name: &str) -> Option<&'a str> {
        Some(match name {
            "global" => self.global,
            "top_left" => self.top_left,
            "top_right" => self.top_right,
            "bottom_left" => self.bottom_left,
            "bottom_right" => self.bottom_right,
            _ => return None,
        })
    }

    pub fn local(&self, p: Position) -> &'a str {
        self.slot(p.slot()).expect("positions map to slots")
    }
}

impl MergePromptTemplate {
    pub fn new(
        system: impl Into<String>,
        user_template: impl Into<String>,
        assistant_prefix: impl Into<String>,
    ) -> Result<Self> {
        let user_template = user_template.into();
        for slot in SLOTS {
            let n = user_template.matches(&format!("{{{slot}}}")).count();
            if n != 1 {
                return Err(PipelineError::Template(format!(
                    "slot {{{slot}}} must appear exactly once in the user template, found {n}"
                )));
            }
        }
        Ok(Self {
            system: system.into(),
            user_template,
            assistant_prefix: assistant_prefix.into(),
        })
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    pub fn user_template(&self) -> &str {
        &self.user_template
    }

    pub fn assistant_prefix(&self) -> &str {
        &self.assistant_prefix
    }

    /// Single left-to-right pass, so braces inside captions are never
    /// reinterpreted as slots.
    pub fn render_user(&self, inputs: &MergeInputs<'_>) -> String {
        let t = &self.user_template;
        let mut out = String::with_capacity(t.len() + 256);
        let mut rest = t.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after
                .find('}')
                .and_then(|close| inputs.slot(&after[..close]).map(|v| (close, v)))
            {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }

    pub fn render(&self, inputs: &MergeInputs<'_>) -> Vec<ChatMessage> {
        let mut msgs = Vec::with_capacity(3);
        if !self.system.is_empty() {
            msgs.push(ChatMessage::system(self.system.clone()));
        }
        msgs.push(ChatMessage::user(self.render_user(inputs)));
        if !self.assistant_prefix.is_empty() {
            msgs.push(ChatMessage::assistant(self.assistant_prefix.clone()));
        }
        msgs
    }

    /// Plain-text file form: `=== system ===`, `=== user ===` and
    /// `=== assistant_prefix ===` sections, each followed by its text.
    pub fn to_file_string(&self) -> String {
        sections_to_string(&[
            ("system", &self.system),
            ("user", &self.user_template),
            ("assistant_prefix", &self.assistant_prefix),
        ])
    }

    pub fn parse_file(text: &str) -> Result<Self> {
        let sections = parse_sections(text).map_err(PipelineError::Template)?;
        let mut system = None;
        let mut user = None;
        let mut prefix = None;
        for (name, body) in sections {
            let slot = match name.as_str() {
                "system" => &mut system,
                "user" => &mut user,
                "assistant_prefix" => &mut prefix,
                other => {
                    return Err(PipelineError::Template(format!(
                        "unknown section {other:?}"
                    )))
                }
            };
            if slot.replace(body).is_some() {
                return Err(PipelineError::Template(format!(
                    "duplicate section {name:?}"
                )));
            }
        }
        let user = user.ok_or_else(|| PipelineError::Template("missing user section".into()))?;
        Self::new(system.unwrap_or_default(), user, prefix.unwrap_or_default())
    }
}

fn marker(name: &str) -> String {
    format!("=== {name} ===")
}

pub(crate) fn sections_to_string(sections: &[(&str, &str)]) -> String {
    let mut out = String::new();
    for (name, body) in sections {
        out.push_str(&marker(name));
        out.push('\n');
        out.push_str(body);
        out.push('\n');
    }
    out
}

fn parse_sections(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out: Vec<(String, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        let header = line
            .strip_prefix("=== ")
            .and_then(|l| l.strip_suffix(" ==="))
            .filter(|n| !n.is_empty() && !n.contains(' '));
        match (header, out.last_mut()) {
            (Some(name), _) => out.push((name.to_string(), Vec::new())),
            (None, Some((_, body))) => body.push(line),
            (None, None) if line.trim().is_empty() => {}
            (None, None) => return Err(format!("text before the first section marker: {line:?}")),
        }
    }
    Ok(out.into_iter().map(|(n, b)| (n, b.join("\n"))).collect())
}

/// Rendered chat transcript in the same section format, one section per
/// message named by role.
pub fn transcript(messages: &[ChatMessage]) -> String {
    let named: Vec<(&str, &str)> = messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            (role, m.content.as_str())
        })
        .collect();
    sections_to_string(&named)
}
