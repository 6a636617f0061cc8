use image::DynamicImage;
use serde::{Deserialize, Serialize};

use super::image::{crop_png, split_rect, ImageRef, Position, Rect};
use super::template::{MergeInputs, MergePromptTemplate};
use super::{PipelineError, Result};
use crate::backends::{
    caption_image, chat_complete, strip_prefix_once, BackendError, ChatBackend, Params,
};

pub const SHORT_CAPTION_PROMPT: &str = "Provide a one-sentence caption for the provided image";
pub const DETAILED_CAPTION_PROMPT: &str = "Describe this image in detail";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    #[default]
    Short,
    Detailed,
}

impl PromptKind {
    pub fn prompt(self) -> &'static str {
        match self {
            PromptKind::Short => SHORT_CAPTION_PROMPT,
            PromptKind::Detailed => DETAILED_CAPTION_PROMPT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    Local(Position),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionNode {
    pub text: String,
    pub scope: Scope,
    pub depth: u32,
    pub model_id: String,
    pub word_count: usize,
    pub prompt_kind: PromptKind,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

impl CaptionNode {
    pub fn new(
        text: impl Into<String>,
        scope: Scope,
        depth: u32,
        model_id: impl Into<String>,
        prompt_kind: PromptKind,
    ) -> Self {
        let text = text.into();
        Self {
            word_count: word_count(&text),
            text,
            scope,
            depth,
            model_id: model_id.into(),
            prompt_kind,
        }
    }
}

/// Captions one PNG with the fixed prompt for `kind`.
pub fn caption(
    png: Vec<u8>,
    backend: &dyn ChatBackend,
    kind: PromptKind,
    scope: Scope,
    depth: u32,
    params: &Params,
) -> std::result::Result<CaptionNode, BackendError> {
    let c = caption_image(backend, png, kind.prompt(), params)?;
    Ok(CaptionNode::new(
        c.text.trim(),
        scope,
        depth,
        backend.id(),
        kind,
    ))
}

/// Locals are in [`Position::ALL`] order.
pub fn merge_captions(
    global: &CaptionNode,
    locals: [&CaptionNode; 4],
    merger: &dyn ChatBackend,
    tpl: &MergePromptTemplate,
    params: &Params,
) -> std::result::Result<CaptionNode, BackendError> {
    let inputs = MergeInputs::new(&global.text, locals.map(|n| n.text.as_str()));
    let c = chat_complete(merger, tpl.render(&inputs), params)?;
    let text = strip_prefix_once(&c.text, tpl.assistant_prefix());
    if text.is_empty() {
        return Err(BackendError::content(
            merger.id(),
            "merge output is empty after prefix removal",
        ));
    }
    Ok(CaptionNode::new(
        text,
        Scope::Global,
        global.depth,
        merger.id(),
        global.prompt_kind,
    ))
}

/// Positional concatenation without any model call. `global` goes first
/// when present.
pub fn concat_baseline(global: Option<&CaptionNode>, locals: [&CaptionNode; 4]) -> CaptionNode {
    let mut parts: Vec<String> = Vec::with_capacity(5);
    if let Some(g) = global {
        parts.push(g.text.clone());
    }
    for (p, n) in Position::ALL.iter().zip(locals) {
        parts.push(format!("{}: {}", p.label(), n.text));
    }
    let depth = global.map_or(locals[0].depth.saturating_sub(1), |g| g.depth);
    CaptionNode::new(
        parts.join("\n"),
        Scope::Global,
        depth,
        "concat",
        locals[0].prompt_kind,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidNode {
    pub id: String,
    pub rect: Rect,
    pub position: Option<Position>,
    /// This region captioned on its own.
    pub caption: CaptionNode,
    /// Empty for leaves, else four nodes in [`Position::ALL`] order.
    pub children: Vec<PyramidNode>,
    pub merged: Option<CaptionNode>,
}

impl PyramidNode {
    /// What a parent merge sees: the merged caption when this node was
    /// expanded, else its own caption.
    pub fn effective(&self) -> &CaptionNode {
        self.merged.as_ref().unwrap_or(&self.caption)
    }

    pub fn child(&self, p: Position) -> Option<&PyramidNode> {
        self.children.iter().find(|c| c.position == Some(p))
    }

    fn child_array(&self) -> [&PyramidNode; 4] {
        std::array::from_fn(|i| &self.children[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionPyramid {
    pub root: PyramidNode,
    pub depth: u32,
    pub caption_calls: usize,
    pub merge_calls: usize,
}

impl CaptionPyramid {
    pub fn merged(&self) -> &CaptionNode {
        self.root
            .merged
            .as_ref()
            .expect("depth >= 1 pyramids are merged at the root")
    }

    pub fn locals(&self) -> [&CaptionNode; 4] {
        self.root.child_array().map(PyramidNode::effective)
    }
}

pub struct PyramidSpec<'a> {
    pub depth: u32,
    pub prompt_kind: PromptKind,
    pub template: &'a MergePromptTemplate,
    pub captioner: &'a dyn ChatBackend,
    pub merger: &'a dyn ChatBackend,
    pub caption_params: &'a Params,
    pub merge_params: &'a Params,
}

/// Calls issued so far, including failed ones.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CallCounts {
    pub captions: usize,
    pub merges: usize,
}

struct Builder<'a, 'b> {
    spec: &'b PyramidSpec<'a>,
    img: &'b DynamicImage,
    counts: &'b mut CallCounts,
}

impl Builder<'_, '_> {
    fn node(
        &mut self,
        id: String,
        rect: Rect,
        position: Option<Position>,
        level: u32,
    ) -> Result<PyramidNode> {
        let png = crop_png(self.img, rect, &id)?;
        let scope = position.map_or(Scope::Global, Scope::Local);
        self.counts.captions += 1;
        let own = caption(
            png,
            self.spec.captioner,
            self.spec.prompt_kind,
            scope,
            level,
            self.spec.caption_params,
        )
        .map_err(|source| PipelineError::Backend {
            node: id.clone(),
            stage: "caption",
            source,
        })?;
        let mut node = PyramidNode {
            id,
            rect,
            position,
            caption: own,
            children: Vec::new(),
            merged: None,
        };
        if level == self.spec.depth {
            return Ok(node);
        }
        for patch in split_rect(&node.id, rect, level)? {
            let child = self.node(patch.id, patch.rect, Some(patch.position), level + 1)?;
            node.children.push(child);
        }
        self.counts.merges += 1;
        let merged = merge_captions(
            &node.caption,
            node.child_array().map(PyramidNode::effective),
            self.spec.merger,
            self.spec.template,
            self.spec.merge_params,
        )
        .map_err(|source| PipelineError::Backend {
            node: node.id.clone(),
            stage: "merge",
            source,
        })?;
        node.merged = Some(merged);
        Ok(node)
    }
}

/// Builds a depth-`d` pyramid bottom-up: every internal node merges its own
/// caption with the effective captions of its four children. Issues
/// `sum 4^k, k=0..=d` caption calls and `sum 4^k, k=0..d` merge calls.
/// `counts` reflects the calls issued even when an error is returned.
pub fn build_pyramid_counted(
    img: &ImageRef,
    spec: &PyramidSpec<'_>,
    counts: &mut CallCounts,
) -> Result<CaptionPyramid> {
    if spec.depth == 0 {
        return Err(PipelineError::Depth(0));
    }
    let decoded = img.decode()?;
    let mut b = Builder {
        spec,
        img: &decoded,
        counts,
    };
    let root = b.node(img.id.clone(), img.rect(), None, 0)?;
    Ok(CaptionPyramid {
        root,
        depth: spec.depth,
        caption_calls: counts.captions,
        merge_calls: counts.merges,
    })
}

pub fn build_pyramid(img: &ImageRef, spec: &PyramidSpec<'_>) -> Result<CaptionPyramid> {
    build_pyramid_counted(img, spec, &mut CallCounts::default())
}

/// Expected `(caption_calls, merge_calls)` for depth `d`.
pub fn expected_calls(depth: u32) -> (usize, usize) {
    let captions = (0..=depth).map(|k| 4usize.pow(k)).sum();
    let merges = (0..depth).map(|k| 4usize.pow(k)).sum();
    (captions, merges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatRequest, MockBackend};
    use crate::pipeline::template::TemplatePreset;
    use image::{Rgb, RgbImage};

    fn image(w: u32, h: u32) -> ImageRef {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([x as u8, y as u8, 0]));
        ImageRef::from_image("img", &DynamicImage::ImageRgb8(img)).unwrap()
    }

    fn captioner() -> MockBackend {
        MockBackend::new("cap").with_responder(|req: &ChatRequest| {
            let img = req.messages[0].image.as_ref().unwrap();
            let d = image::load_from_memory(&img.data).unwrap();
            Ok(format!("a {}x{} tile", d.width(), d.height()))
        })
    }

    fn merger() -> MockBackend {
        MockBackend::new("merge").with_responder(|req: &ChatRequest| {
            Ok(format!(
                "Here's the merged caption: merged {} words",
                req.messages[1].content.split_whitespace().count()
            ))
        })
    }

    fn spec<'a>(
        depth: u32,
        c: &'a MockBackend,
        m: &'a MockBackend,
        t: &'a MergePromptTemplate,
        p: &'a Params,
    ) -> PyramidSpec<'a> {
        PyramidSpec {
            depth,
            prompt_kind: PromptKind::Short,
            template: t,
            captioner: c,
            merger: m,
            caption_params: p,
            merge_params: p,
        }
    }

    #[test]
    fn call_accounting() {
        let t = TemplatePreset::Corrected.template();
        let p = Params::new();
        for depth in 1..=2 {
            let (c, m) = (captioner(), merger());
            let pyr = build_pyramid(&image(16, 12), &spec(depth, &c, &m, &t, &p)).unwrap();
            assert_eq!((c.call_count(), m.call_count()), expected_calls(depth));
            assert_eq!((pyr.caption_calls, pyr.merge_calls), expected_calls(depth));
            assert!(!pyr.merged().text.starts_with("Here's"));
        }
        assert_eq!(expected_calls(1), (5, 1));
        assert_eq!(expected_calls(2), (21, 5));
        let (c, m) = (captioner(), merger());
        assert!(matches!(
            build_pyramid(&image(4, 4), &spec(0, &c, &m, &t, &p)),
            Err(PipelineError::Depth(0))
        ));
    }

    #[test]
    fn caption_prompt_is_fixed() {
        let c = captioner();
        let n = caption(
            vec![],
            &MockBackend::new("x").with_responder(|_| Ok("a cat".into())),
            PromptKind::Short,
            Scope::Global,
            0,
            &Params::new(),
        )
        .unwrap();
        assert_eq!((n.text.as_str(), n.word_count), ("a cat", 2));
        build_pyramid(
            &image(4, 4),
            &spec(
                1,
                &c,
                &merger(),
                &TemplatePreset::Corrected.template(),
                &Params::new(),
            ),
        )
        .unwrap();
        for call in c.calls() {
            assert_eq!(call.request.messages[0].content, SHORT_CAPTION_PROMPT);
        }
    }

    #[test]
    fn depth_two_feeds_merged_children() {
        let t = TemplatePreset::Corrected.template();
        let p = Params::new();
        let (c, m) = (captioner(), merger());
        let pyr = build_pyramid(&image(16, 16), &spec(2, &c, &m, &t, &p)).unwrap();
        let root_merge = m.calls().last().unwrap().request.clone();
        let tl = pyr.root.child(Position::TopLeft).unwrap();
        assert!(tl.merged.is_some());
        assert!(root_merge.messages[1].content.contains(&format!(
            "### Top-left: {}",
            tl.merged.as_ref().unwrap().text
        )));
        assert_eq!(pyr.locals()[0], tl.merged.as_ref().unwrap());
    }

    #[test]
    fn failure_names_the_node() {
        let t = TemplatePreset::Corrected.template();
        let p = Params::new();
        let c = MockBackend::new("cap").with_responder(|req: &ChatRequest| {
            let d = image::load_from_memory(&req.messages[0].image.as_ref().unwrap().data).unwrap();
            if d.width() == 3 {
                Err(BackendError::transport("cap", "boom"))
            } else {
                Ok("x".into())
            }
        });
        let mut counts = CallCounts::default();
        let err = build_pyramid_counted(&image(5, 4), &spec(1, &c, &merger(), &t, &p), &mut counts)
            .unwrap_err();
        assert!(err.to_string().contains("img/tr"), "{err}");
        assert_eq!(counts.captions, 3);
    }

    #[test]
    fn concat() {
        let l = |t: &str| {
            CaptionNode::new(
                t,
                Scope::Local(Position::TopLeft),
                1,
                "m",
                PromptKind::Short,
            )
        };
        let locals = [l("a b"), l("c"), l("d"), l("e f g")];
        let refs = [&locals[0], &locals[1], &locals[2], &locals[3]];
        let only = concat_baseline(None, refs);
        assert_eq!(
            only.text,
            "Top-left: a b\nTop-right: c\nBottom-left: d\nBottom-right: e f g"
        );
        assert_eq!(only.word_count, 7 + 4);
        let g = CaptionNode::new("whole scene", Scope::Global, 0, "m", PromptKind::Short);
        let with = concat_baseline(Some(&g), refs);
        assert!(with.text.starts_with("whole scene\nTop-left: a b"));
        assert_eq!(with.word_count, 2 + 7 + 4);
    }
}
