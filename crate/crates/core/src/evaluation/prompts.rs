use super::{EvalError, Result};
use crate::backends::ChatMessage;

pub const VQA_SYSTEM_PROMPT: &str = "You will be given a caption of an image, and your task is to try to answer the question based on the caption.
If the relevant information is not present in the caption, try your best to guess the answer.
You shouldn't provide any rationale or explaination in your response, just give the answer only.
The answer can be a number, a single word or a short phrase, plese make your response as short, simple and clear as possible.";

pub const NO_CAPTION_SYSTEM_PROMPT: &str = "You will be given a question regarding an image, and your task is to try to infer the most possible answer.
You shouldn't provide any rationale or explaination in your response, just give the answer only.
The answer can be a number, a single word or a short phrase, plese make your response as short, simple and clear as possible.";

pub const VQA_ASSISTANT_PREFIX: &str = "The most possible answer is:";

fn non_empty(what: &'static str, s: &str) -> Result<()> {
    if s.trim().is_empty() {
        Err(EvalError::Empty(what))
    } else {
        Ok(())
    }
}

pub fn render_vqa_prompt(caption: &str, question: &str) -> Result<Vec<ChatMessage>> {
    non_empty("caption", caption)?;
    non_empty("question", question)?;
    Ok(vec![
        ChatMessage::system(VQA_SYSTEM_PROMPT),
        ChatMessage::user(format!("Image Caption: {caption}\nQuestion: {question}")),
        ChatMessage::assistant(VQA_ASSISTANT_PREFIX),
    ])
}

pub fn render_no_caption_prompt(question: &str) -> Result<Vec<ChatMessage>> {
    non_empty("question", question)?;
    Ok(vec![
        ChatMessage::system(NO_CAPTION_SYSTEM_PROMPT),
        ChatMessage::user(format!("Question: {question}")),
        ChatMessage::assistant(VQA_ASSISTANT_PREFIX),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vqa_prompt() {
        let m = render_vqa_prompt("a dog on grass", "What animal?").unwrap();
        assert!(m[0].content.contains("try your best to guess the answer"));
        assert_eq!(
            m[1].content,
            "Image Caption: a dog on grass\nQuestion: What animal?"
        );
        assert_eq!(m[2].content, "The most possible answer is:");
        assert!(matches!(
            render_vqa_prompt(" ", "q"),
            Err(EvalError::Empty("caption"))
        ));
    }

    #[test]
    fn no_caption_prompt() {
        let m = render_no_caption_prompt("What animal?").unwrap();
        assert!(m[0].content.starts_with(
            "You will be given a question regarding an image, and your task is to try to infer the most possible answer"
        ));
        assert!(!m[1].content.contains("Image Caption"));
        assert!(render_no_caption_prompt("").is_err());
    }
}
