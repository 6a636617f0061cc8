use serde::{Deserialize, Serialize};

use super::{chat_complete, BackendError, ChatBackend, ChatMessage, Params, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

pub const NLI_SYSTEM_PROMPT: &str = "You are a natural language inference classifier. \
Given a premise and a hypothesis, decide whether the premise entails the hypothesis, \
contradicts it, or is neutral towards it. \
Reply with exactly one word: entailment, neutral, or contradiction.";

/// Case-insensitive keyword match. `None` when no label or more than one
/// distinct label is mentioned.
pub fn parse_nli_label(text: &str) -> Option<NliLabel> {
    let lower = text.to_lowercase();
    let found: Vec<NliLabel> = [
        ("entail", NliLabel::Entailment),
        ("neutral", NliLabel::Neutral),
        ("contradict", NliLabel::Contradiction),
    ]
    .into_iter()
    .filter(|(kw, _)| lower.contains(kw))
    .map(|(_, l)| l)
    .collect();
    match found.as_slice() {
        [one] => Some(*one),
        _ => None,
    }
}

pub trait NliJudge: Send + Sync {
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<NliLabel>;
}

/// Three-way classification by prompting a chat model.
pub struct ChatNliJudge<B> {
    backend: B,
    params: Params,
}

impl<B: ChatBackend> ChatNliJudge<B> {
    pub fn new(backend: B) -> Self {
        Self {
            backend,
            params: Params::new(),
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn messages(premise: &str, hypothesis: &str) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(NLI_SYSTEM_PROMPT),
            ChatMessage::user(format!("Premise: {premise}\nHypothesis: {hypothesis}")),
        ]
    }
}

impl<B: ChatBackend> NliJudge for ChatNliJudge<B> {
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<NliLabel> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(BackendError::InvalidRequest {
                backend: self.backend.id().to_string(),
                message: "premise and hypothesis must be non-empty".into(),
            });
        }
        let c = chat_complete(
            &self.backend,
            Self::messages(premise, hypothesis),
            &self.params,
        )?;
        parse_nli_label(&c.text).ok_or_else(|| {
            BackendError::content(
                self.backend.id(),
                format!("unparsable NLI label: {:?}", c.text),
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatRequest, MockBackend};

    #[test]
    fn parsing() {
        assert_eq!(parse_nli_label("Neutral."), Some(NliLabel::Neutral));
        assert_eq!(parse_nli_label("ENTAILMENT"), Some(NliLabel::Entailment));
        assert_eq!(
            parse_nli_label("contradiction"),
            Some(NliLabel::Contradiction)
        );
        assert_eq!(parse_nli_label("maybe"), None);
        assert_eq!(parse_nli_label("entailment or neutral"), None);
    }

    #[test]
    fn judge_via_mock() {
        let mock = MockBackend::new("nli").with_responder(|req: &ChatRequest| {
            let user = &req.messages[1].content;
            let mut lines = user.lines();
            let p = lines.next().unwrap().trim_start_matches("Premise: ");
            let h = lines.next().unwrap().trim_start_matches("Hypothesis: ");
            Ok(if p == h { "Entailment" } else { "maybe" }.into())
        });
        let judge = ChatNliJudge::new(mock);
        assert_eq!(
            judge.judge("x is 2", "x is 2").unwrap(),
            NliLabel::Entailment
        );
        assert!(matches!(
            judge.judge("x is 2", "x is 3"),
            Err(BackendError::Content { .. })
        ));
        assert!(judge.judge("", "x").is_err());
    }
}
