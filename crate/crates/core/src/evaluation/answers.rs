use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::backends::{NliJudge, NliLabel};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

pub const DEFAULT_REFUSALS: [&str; 2] = ["cannot determine", "not sure"];

/// Lowercase, NFC, trimmed, terminal `.,!?` removed, whitespace collapsed,
/// one leading article dropped.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    let trimmed = lowered
        .trim_end_matches(|c: char| c.is_whitespace() || matches!(c, '.' | ',' | '!' | '?'))
        .trim_start();
    let mut words: Vec<&str> = trimmed.split_whitespace().collect();
    if words.len() > 1 && ARTICLES.contains(&words[0]) {
        words.remove(0);
    }
    words.join(" ")
}

pub fn exact_match(generated: &str, truths: &[impl AsRef<str>]) -> bool {
    let g = normalize_answer(generated);
    truths.iter().any(|t| normalize_answer(t.as_ref()) == g)
}

/// Case-insensitive substring match against the configured phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefusalList(pub Vec<String>);

impl Default for RefusalList {
    fn default() -> Self {
        Self(DEFAULT_REFUSALS.iter().map(|s| s.to_string()).collect())
    }
}

impl RefusalList {
    pub fn is_refusal(&self, answer: &str) -> bool {
        let n = normalize_answer(answer);
        self.0.iter().any(|p| {
            let p = normalize_answer(p);
            !p.is_empty() && n.contains(&p)
        })
    }
}

pub fn nli_premise(truth: &str) -> String {
    format!("The answer to this question is {truth}")
}

/// True iff the judge labels the pair as entailment.
pub fn nli_match(
    generated: &str,
    truth: &str,
    judge: &dyn NliJudge,
) -> crate::backends::Result<(bool, NliLabel)> {
    let label = judge.judge(&nli_premise(truth), &nli_premise(generated))?;
    Ok((label == NliLabel::Entailment, label))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub generated: String,
    pub exact_match: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_label: Option<NliLabel>,
    pub refused: bool,
}

impl AnswerRecord {
    /// Refusals never count as correct.
    pub fn score(generated: &str, truths: &[impl AsRef<str>], refusals: &RefusalList) -> Self {
        let refused = refusals.is_refusal(generated);
        Self {
            generated: generated.to_string(),
            exact_match: !refused && exact_match(generated, truths),
            nli_label: None,
            refused,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("Two"), "two");
        assert_eq!(normalize_answer("a dog."), "dog");
        assert_eq!(normalize_answer("  red   car "), "red car");
        assert_eq!(normalize_answer("The End!?"), "end");
        assert_eq!(normalize_answer("a"), "a");
        // NFD input composes to the same string as NFC input.
        assert_eq!(
            normalize_answer("cafe\u{301}"),
            normalize_answer("caf\u{e9}")
        );
    }

    #[test]
    fn matching_and_refusals() {
        assert!(exact_match("cat", &["Cat"]));
        assert!(!exact_match("cat", &["dog"]));
        let r = AnswerRecord::score(
            "Cannot determine.",
            &["cannot determine"],
            &RefusalList::default(),
        );
        assert!(r.refused && !r.exact_match);
        assert!(RefusalList::default().is_refusal("I'm not sure"));
    }

    proptest! {
        #[test]
        fn match_is_symmetric(a in "[ A-Za-z.!?]{0,12}", b in "[ A-Za-z.!?]{0,12}") {
            prop_assert_eq!(exact_match(&a, &[&b]), exact_match(&b, &[&a]));
        }

        #[test]
        fn normalized_form_is_tidy(a in "\\PC{0,20}") {
            let n = normalize_answer(&a);
            prop_assert_eq!(n.trim(), n.as_str());
            prop_assert!(!n.contains("  "));
            prop_assert!(!n.ends_with(['.', ',', '!', '?']));
        }
    }
}
