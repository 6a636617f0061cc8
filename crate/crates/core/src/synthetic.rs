//! Rule-based mock backends for dry runs: every reply is a pure function of
//! the request, so runs are reproducible without any model.

use crate::backends::{
    BackendError, ChatNliJudge, ChatRequest, EmbedPayload, MockBackend, MockEmbedder, Role,
};
use crate::evaluation::normalize_answer;

pub const PALETTE: [(&str, [u8; 3]); 8] = [
    ("black", [0, 0, 0]),
    ("white", [255, 255, 255]),
    ("red", [220, 30, 30]),
    ("green", [30, 180, 60]),
    ("blue", [30, 60, 220]),
    ("yellow", [240, 220, 40]),
    ("gray", [128, 128, 128]),
    ("brown", [140, 90, 40]),
];

/// Nearest palette name in RGB distance.
pub fn color_name(rgb: [u8; 3]) -> &'static str {
    PALETTE
        .iter()
        .min_by_key(|(_, c)| {
            c.iter()
                .zip(rgb)
                .map(|(a, b)| (*a as i32 - b as i32).pow(2))
                .sum::<i32>()
        })
        .map(|(n, _)| *n)
        .expect("palette is non-empty")
}

fn last_user(req: &ChatRequest) -> Option<&crate::backends::ChatMessage> {
    req.messages.iter().rev().find(|m| m.role == Role::User)
}

/// Describes the attached image by size and mean colour.
pub fn captioner(id: &str) -> MockBackend {
    let id_owned = id.to_string();
    MockBackend::new(id).with_responder(move |req| {
        let img = last_user(req)
            .and_then(|m| m.image.as_ref())
            .ok_or_else(|| BackendError::protocol(&id_owned, "caption request without an image"))?;
        let rgb = image::load_from_memory(&img.data)
            .map_err(|e| BackendError::protocol(&id_owned, e.to_string()))?
            .to_rgb8();
        let n = (rgb.width() as u64 * rgb.height() as u64).max(1);
        let mut sum = [0u64; 3];
        for p in rgb.pixels() {
            for c in 0..3 {
                sum[c] += p[c] as u64;
            }
        }
        let mean = sum.map(|s| (s / n) as u8);
        Ok(format!(
            "a {} region of {}x{} pixels",
            color_name(mean),
            rgb.width(),
            rgb.height()
        ))
    })
}

/// Extracts the caption text of every `### Label: text` line.
pub fn section_captions(user: &str) -> Vec<&str> {
    user.lines()
        .filter_map(|l| l.strip_prefix("### "))
        .filter_map(|l| l.split_once(": ").map(|(_, t)| t.trim()))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Joins the distinct section captions in order of first appearance.
pub fn merger(id: &str) -> MockBackend {
    let id_owned = id.to_string();
    MockBackend::new(id).with_responder(move |req| {
        let user = last_user(req).ok_or_else(|| {
            BackendError::protocol(&id_owned, "merge request without a user message")
        })?;
        let mut seen: Vec<&str> = Vec::new();
        for c in section_captions(&user.content) {
            if !seen.contains(&c) {
                seen.push(c);
            }
        }
        if seen.is_empty() {
            return Err(BackendError::content(&id_owned, "nothing to merge"));
        }
        Ok(seen.join("; "))
    })
}

/// Answers colour questions with the first palette colour named in the
/// caption; everything else gets a refusal.
pub fn answerer(id: &str) -> MockBackend {
    MockBackend::new(id).with_responder(move |req| {
        let user = last_user(req).map_or("", |m| m.content.as_str());
        let caption = user
            .lines()
            .find_map(|l| l.strip_prefix("Image Caption: "))
            .unwrap_or("");
        let lower = caption.to_lowercase();
        let first_color = lower
            .split(|c: char| !c.is_alphanumeric())
            .find(|w| PALETTE.iter().any(|(n, _)| n == w));
        Ok(first_color.unwrap_or("cannot determine").to_string())
    })
}

/// Chat model behind [`nli_judge`].
pub fn nli_backend(id: &str) -> MockBackend {
    MockBackend::new(id).with_responder(|req| {
        let user = last_user(req).map_or("", |m| m.content.as_str());
        let mut lines = user.lines();
        let premise = lines
            .next()
            .and_then(|l| l.strip_prefix("Premise: "))
            .unwrap_or("");
        let hypothesis = lines
            .next()
            .and_then(|l| l.strip_prefix("Hypothesis: "))
            .unwrap_or("");
        Ok(
            if normalize_answer(premise) == normalize_answer(hypothesis) {
                "entailment"
            } else {
                "neutral"
            }
            .to_string(),
        )
    })
}

/// Entailment iff the two statements normalize to the same text.
pub fn nli_judge(id: &str) -> ChatNliJudge<MockBackend> {
    ChatNliJudge::new(nli_backend(id))
}

const EMBED_DIM: usize = PALETTE.len() + 1;

/// Colour histogram space: an image maps to its mean colour's axis, a text
/// to the colour words it mentions plus a constant bias axis.
pub fn embedder(id: &str) -> MockEmbedder {
    MockEmbedder::new(id, |payload| {
        let mut v = vec![0.0; EMBED_DIM];
        match payload {
            EmbedPayload::Image(png) => {
                let rgb = image::load_from_memory(png)
                    .map_err(|e| BackendError::protocol("mock-embedder", e.to_string()))?
                    .to_rgb8();
                let n = (rgb.width() as u64 * rgb.height() as u64).max(1);
                let mut sum = [0u64; 3];
                for p in rgb.pixels() {
                    for c in 0..3 {
                        sum[c] += p[c] as u64;
                    }
                }
                let name = color_name(sum.map(|s| (s / n) as u8));
                let axis = PALETTE.iter().position(|(n, _)| *n == name).unwrap_or(0);
                v[axis] = 1.0;
            }
            EmbedPayload::Text(t) => {
                let lower = t.to_lowercase();
                for w in lower.split(|c: char| !c.is_alphanumeric()) {
                    if let Some(i) = PALETTE.iter().position(|(n, _)| *n == w) {
                        v[i] += 1.0;
                    }
                }
                v[EMBED_DIM - 1] = 1.0;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / norm).collect())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatBackend, ChatMessage, ImageAttachment, NliJudge};
    use image::{DynamicImage, Rgb, RgbImage};

    fn png(rgb: [u8; 3]) -> Vec<u8> {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(4, 2, Rgb(rgb)));
        crate::pipeline::ImageRef::from_image("x", &img)
            .ok()
            .and_then(|r| match r.source {
                crate::pipeline::ImageSource::Bytes(b) => Some(b.to_vec()),
                _ => None,
            })
            .unwrap()
    }

    #[test]
    fn caption_and_merge() {
        let cap = captioner("c");
        let req = ChatRequest::from_messages(vec![ChatMessage::user_with_image(
            "x",
            ImageAttachment::png(png([200, 20, 20])),
        )]);
        assert_eq!(
            cap.complete(&req).unwrap().text,
            "a red region of 4x2 pixels"
        );
        let m = merger("m");
        let req = ChatRequest::from_messages(vec![ChatMessage::user(
            "### Global Caption: a\n### Top-left: b\n### Bottom-left: a\n### Top-right: c: d\n### Bottom-right: b",
        )]);
        assert_eq!(m.complete(&req).unwrap().text, "a; b; c: d");
    }

    #[test]
    fn answer_and_judge() {
        let qa = answerer("qa");
        let req = ChatRequest::from_messages(vec![ChatMessage::user(
            "Image Caption: a Blue region; a red region\nQuestion: What colour?",
        )]);
        assert_eq!(qa.complete(&req).unwrap().text, "blue");
        let j = nli_judge("j");
        assert_eq!(
            j.judge(
                "The answer to this question is Red",
                "The answer to this question is red."
            )
            .unwrap(),
            crate::backends::NliLabel::Entailment
        );
    }
}
