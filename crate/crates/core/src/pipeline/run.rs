use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::image::ImageRef;
use super::pyramid::{build_pyramid_counted, concat_baseline, CallCounts, PromptKind, PyramidSpec};
use super::template::MergePromptTemplate;
use super::{PipelineError, Result};
use crate::backends::{ChatBackend, Params};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaPair {
    pub question: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub questions: Vec<QaPair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reference_captions: Vec<String>,
}

/// Parses a JSON-lines manifest; blank lines are skipped and ids must be
/// unique.
pub fn read_manifest(text: &str) -> Result<Vec<ManifestItem>> {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: ManifestItem = serde_json::from_str(line)
            .map_err(|e| PipelineError::Manifest(format!("line {}: {e}", i + 1)))?;
        if !seen.insert(item.id.clone()) {
            return Err(PipelineError::Manifest(format!(
                "line {}: duplicate id {:?}",
                i + 1,
                item.id
            )));
        }
        items.push(item);
    }
    Ok(items)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub depth: u32,
    pub prompt_kind: PromptKind,
    pub template: MergePromptTemplate,
    pub baselines: bool,
    pub max_concurrent_images: usize,
    /// Wall-clock timings make records non-reproducible, so they are opt-in.
    pub record_wall_time: bool,
    pub caption_params: Params,
    pub merge_params: Params,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            depth: 1,
            prompt_kind: PromptKind::Short,
            template: super::TemplatePreset::Corrected.template(),
            baselines: true,
            max_concurrent_images: 4,
            record_wall_time: false,
            caption_params: Params::new(),
            merge_params: Params::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Locals {
    pub tl: String,
    pub tr: String,
    pub bl: String,
    pub br: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub caption_calls: usize,
    pub merge_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    pub stage: String,
    pub category: String,
    pub message: String,
}

impl ItemError {
    fn from_pipeline(e: &PipelineError) -> Self {
        let (node, stage, category) = match e {
            PipelineError::Backend {
                node,
                stage,
                source,
            } => (
                Some(node.clone()),
                stage.to_string(),
                source.category().to_string(),
            ),
            PipelineError::Image { id, .. } | PipelineError::TooSmall { id, .. } => {
                (Some(id.clone()), "image".into(), "image".into())
            }
            _ => (None, "pipeline".into(), "pipeline".into()),
        };
        Self {
            node,
            stage,
            category,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    /// Image path exactly as given in the manifest.
    pub path: PathBuf,
    pub depth: u32,
    pub global: Option<String>,
    pub locals: Option<Locals>,
    pub merged: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub baselines: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub questions: Vec<QaPair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reference_captions: Vec<String>,
    pub timing: Timing,
    pub errors: Vec<ItemError>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub records: Vec<RunRecord>,
}

impl PipelineRun {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| !r.is_ok()).count()
    }
}

fn process(
    item: &ManifestItem,
    base_dir: &Path,
    opts: &RunOptions,
    captioner: &dyn ChatBackend,
    merger: &dyn ChatBackend,
) -> RunRecord {
    let started = Instant::now();
    let mut counts = CallCounts::default();
    let spec = PyramidSpec {
        depth: opts.depth,
        prompt_kind: opts.prompt_kind,
        template: &opts.template,
        captioner,
        merger,
        caption_params: &opts.caption_params,
        merge_params: &opts.merge_params,
    };
    let result = ImageRef::from_path(item.id.clone(), base_dir.join(&item.path))
        .and_then(|img| build_pyramid_counted(&img, &spec, &mut counts));
    let mut record = RunRecord {
        id: item.id.clone(),
        path: item.path.clone(),
        depth: opts.depth,
        global: None,
        locals: None,
        merged: None,
        baselines: BTreeMap::new(),
        questions: item.questions.clone(),
        reference_captions: item.reference_captions.clone(),
        timing: Timing {
            caption_calls: counts.captions,
            merge_calls: counts.merges,
            elapsed_ms: None,
        },
        errors: Vec::new(),
    };
    match result {
        Ok(pyr) => {
            let locals = pyr.locals();
            record.global = Some(pyr.root.caption.text.clone());
            record.locals = Some(Locals {
                tl: locals[0].text.clone(),
                tr: locals[1].text.clone(),
                bl: locals[2].text.clone(),
                br: locals[3].text.clone(),
            });
            record.merged = Some(pyr.merged().text.clone());
            if opts.baselines {
                record
                    .baselines
                    .insert("local_concat".into(), concat_baseline(None, locals).text);
                record.baselines.insert(
                    "global_local_concat".into(),
                    concat_baseline(Some(&pyr.root.caption), locals).text,
                );
            }
        }
        Err(e) => {
            log::warn!("{}: {e}", item.id);
            record.errors.push(ItemError::from_pipeline(&e));
        }
    }
    record.timing.caption_calls = counts.captions;
    record.timing.merge_calls = counts.merges;
    if opts.record_wall_time {
        record.timing.elapsed_ms = Some(started.elapsed().as_millis() as u64);
    }
    record
}

/// Processes every manifest item with at most `max_concurrent_images` in
/// flight. Each record is written to `sink` as one JSON line as soon as all
/// earlier items are done, so the output follows manifest order. Item
/// failures become error records; only sink I/O errors abort the run.
pub fn run_pipeline(
    items: &[ManifestItem],
    base_dir: &Path,
    opts: &RunOptions,
    captioner: &dyn ChatBackend,
    merger: &dyn ChatBackend,
    sink: &mut dyn Write,
) -> std::io::Result<PipelineRun> {
    let workers = opts.max_concurrent_images.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
    let mut records: Vec<RunRecord> = Vec::with_capacity(items.len());

    std::thread::scope(|s| -> std::io::Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                if tx
                    .send((i, process(item, base_dir, opts, captioner, merger)))
                    .is_err()
                {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, RunRecord> = BTreeMap::new();
        for (i, rec) in rx {
            pending.insert(i, rec);
            while let Some(rec) = pending.remove(&records.len()) {
                let line = serde_json::to_string(&rec).map_err(std::io::Error::other)?;
                writeln!(sink, "{line}")?;
                sink.flush()?;
                records.push(rec);
            }
        }
        Ok(())
    })?;
    Ok(PipelineRun { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendError, ChatRequest, MockBackend};
    use ::image::{DynamicImage, Rgb, RgbImage};
    use std::time::Duration;

    fn write_image(dir: &Path, name: &str, w: u32, h: u32, shade: u8) {
        let img = RgbImage::from_fn(w, h, |x, _| Rgb([shade, x as u8, 0]));
        DynamicImage::ImageRgb8(img).save(dir.join(name)).unwrap();
    }

    fn shade_of(req: &ChatRequest) -> u8 {
        let d = ::image::load_from_memory(&req.messages[0].image.as_ref().unwrap().data).unwrap();
        d.to_rgb8().get_pixel(0, 0)[0]
    }

    #[test]
    fn manifest_parsing() {
        let items = read_manifest("{\"id\":\"a\",\"path\":\"a.png\"}\n\n{\"id\":\"b\",\"path\":\"b.png\",\"questions\":[{\"question\":\"q\",\"answers\":[\"x\"]}]}\n").unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[1].questions[0].answers, vec!["x"]);
        assert!(
            read_manifest("{\"id\":\"a\",\"path\":\"a\"}\n{\"id\":\"a\",\"path\":\"b\"}").is_err()
        );
        assert!(read_manifest("{\"id\":\"a\"}").is_err());
    }

    #[test]
    fn ordered_output_and_isolation() {
        let dir = tempfile::tempdir().unwrap();
        let mut items = Vec::new();
        for i in 0..6u8 {
            write_image(dir.path(), &format!("{i}.png"), 8, 6, i * 10);
            items.push(ManifestItem {
                id: format!("img{i}"),
                path: format!("{i}.png").into(),
                questions: vec![],
                reference_captions: vec![],
            });
        }
        // Later items finish first; item 2 fails.
        let cap = MockBackend::new("cap").with_responder(|req: &ChatRequest| {
            let s = shade_of(req);
            std::thread::sleep(Duration::from_millis(((60 - s as u64) / 10) * 3));
            if s == 20 {
                Err(BackendError::protocol("cap", "bad"))
            } else {
                Ok(format!("shade {s}"))
            }
        });
        let merge = MockBackend::new("merge").with_responder(|_| Ok("merged".into()));
        let mut out = Vec::new();
        let opts = RunOptions {
            max_concurrent_images: 3,
            ..RunOptions::default()
        };
        let run = run_pipeline(&items, dir.path(), &opts, &cap, &merge, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let ids: Vec<String> = text
            .lines()
            .map(|l| serde_json::from_str::<RunRecord>(l).unwrap().id)
            .collect();
        assert_eq!(ids, (0..6).map(|i| format!("img{i}")).collect::<Vec<_>>());
        assert_eq!(run.failed(), 1);
        let bad = &run.records[2];
        assert_eq!(bad.errors[0].category, "protocol");
        assert_eq!(bad.errors[0].node.as_deref(), Some("img2"));
        let good = &run.records[0];
        assert_eq!(good.timing.caption_calls, 5);
        assert_eq!(good.timing.merge_calls, 1);
        assert_eq!(good.merged.as_deref(), Some("merged"));
        assert!(good.baselines["global_local_concat"].starts_with("shade 0\nTop-left: shade 0"));
        assert!(!text.contains("elapsed_ms"));
    }

    #[test]
    fn empty_manifest() {
        let cap = MockBackend::new("c");
        let mut out = Vec::new();
        let run = run_pipeline(
            &[],
            Path::new("."),
            &RunOptions::default(),
            &cap,
            &cap,
            &mut out,
        )
        .unwrap();
        assert!(run.records.is_empty() && out.is_empty());
    }

    #[test]
    fn missing_image_is_an_item_error() {
        let cap = MockBackend::new("c");
        let items = vec![ManifestItem {
            id: "x".into(),
            path: "/nonexistent/x.png".into(),
            questions: vec![],
            reference_captions: vec![],
        }];
        let run = run_pipeline(
            &items,
            Path::new("."),
            &RunOptions::default(),
            &cap,
            &cap,
            &mut Vec::new(),
        )
        .unwrap();
        assert_eq!(run.records[0].errors[0].stage, "image");
        assert_eq!(run.records[0].timing.caption_calls, 0);
    }
}
