use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::answers::{nli_match, AnswerRecord, RefusalList};
use super::metrics::{clip_score, length_stats, meteor_exact, LengthStats};
use super::prompts::{render_no_caption_prompt, render_vqa_prompt, VQA_ASSISTANT_PREFIX};
use super::{EvalError, Result};
use crate::backends::{
    chat_complete, strip_prefix_once, ChatBackend, EmbedPayload, Embedder, NliJudge, Params,
};
use crate::pipeline::RunRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaItem {
    pub image_id: String,
    pub question: String,
    pub answers: Vec<String>,
}

impl VqaItem {
    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(EvalError::Empty("question"));
        }
        if self.answers.iter().all(|a| a.trim().is_empty()) {
            return Err(EvalError::Empty("answers"));
        }
        Ok(())
    }
}

pub const NO_CAPTION_VARIANT: &str = "no_caption";

/// Caption variants present in a run record, in report order: `global`,
/// `merged`, then baselines by name.
pub fn caption_variants(record: &RunRecord) -> Vec<(String, String)> {
    let mut out = Vec::new();
    if let Some(g) = &record.global {
        out.push(("global".to_string(), g.clone()));
    }
    if let Some(m) = &record.merged {
        out.push(("merged".to_string(), m.clone()));
    }
    for (k, v) in &record.baselines {
        out.push((k.clone(), v.clone()));
    }
    out
}

/// One row of the per-item CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub image_id: String,
    pub variant: String,
    pub question: Option<String>,
    pub generated: Option<String>,
    pub exact_match: Option<bool>,
    pub nli_label: Option<String>,
    pub refused: Option<bool>,
    pub caption_words: Option<usize>,
    pub meteor: Option<f64>,
    pub clip_score: Option<f64>,
    pub error: Option<String>,
}

impl ItemRow {
    fn new(image_id: &str, variant: &str) -> Self {
        Self {
            image_id: image_id.to_string(),
            variant: variant.to_string(),
            question: None,
            generated: None,
            exact_match: None,
            nli_label: None,
            refused: None,
            caption_words: None,
            meteor: None,
            clip_score: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub variant: String,
    pub items: usize,
    pub answered: usize,
    pub exact_correct: usize,
    pub exact_accuracy: Option<f64>,
    pub nli_evaluated: usize,
    pub nli_correct: usize,
    pub nli_accuracy: Option<f64>,
    pub refusals: usize,
    pub errors: usize,
    pub mean_answer_length: Option<f64>,
    pub mean_caption_length: Option<f64>,
    pub meteor: Option<f64>,
    pub clip_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Vqa,
    Paragraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: EvalMode,
    pub variants: Vec<VariantMetrics>,
    /// Mean words of the global captions.
    pub caption_length_default: Option<f64>,
    /// Mean words of the merged captions.
    pub caption_length_poca: Option<f64>,
    pub delta_length: Option<f64>,
    pub rows: Vec<ItemRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn aggregate(variant: &str, rows: &[&ItemRow]) -> VariantMetrics {
    let answered: Vec<&&ItemRow> = rows.iter().filter(|r| r.generated.is_some()).collect();
    let exact_correct = answered
        .iter()
        .filter(|r| r.exact_match == Some(true))
        .count();
    let nli: Vec<&&ItemRow> = rows.iter().filter(|r| r.nli_label.is_some()).collect();
    let nli_correct = nli
        .iter()
        .filter(|r| r.nli_label.as_deref() == Some("entailment"))
        .count();
    let frac = |k: usize, n: usize| (n > 0).then(|| k as f64 / n as f64);
    VariantMetrics {
        variant: variant.to_string(),
        items: rows.len(),
        answered: answered.len(),
        exact_correct,
        exact_accuracy: frac(exact_correct, answered.len()),
        nli_evaluated: nli.len(),
        nli_correct,
        nli_accuracy: frac(nli_correct, nli.len()),
        refusals: rows.iter().filter(|r| r.refused == Some(true)).count(),
        errors: rows.iter().filter(|r| r.error.is_some()).count(),
        mean_answer_length: mean(answered.iter().map(|r| {
            r.generated
                .as_deref()
                .unwrap_or("")
                .split_whitespace()
                .count() as f64
        })),
        mean_caption_length: mean(
            rows.iter()
                .filter_map(|r| r.caption_words)
                .map(|w| w as f64),
        ),
        meteor: mean(rows.iter().filter_map(|r| r.meteor)),
        clip_score: mean(rows.iter().filter_map(|r| r.clip_score)),
    }
}

fn finish(mode: EvalMode, rows: Vec<ItemRow>, lengths: Option<LengthStats>) -> MetricReport {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&ItemRow>> = BTreeMap::new();
    for r in &rows {
        if !groups.contains_key(&r.variant) {
            order.push(r.variant.clone());
        }
        groups.entry(r.variant.clone()).or_default().push(r);
    }
    let variants = order.iter().map(|v| aggregate(v, &groups[v])).collect();
    MetricReport {
        mode,
        variants,
        caption_length_default: lengths.map(|l| l.mean_default),
        caption_length_poca: lengths.map(|l| l.mean_poca),
        delta_length: lengths.map(|l| l.delta),
        rows,
    }
}

fn record_lengths(records: &[RunRecord]) -> Option<LengthStats> {
    let (g, m): (Vec<&str>, Vec<&str>) = records
        .iter()
        .filter_map(|r| Some((r.global.as_deref()?, r.merged.as_deref()?)))
        .unzip();
    length_stats(&g, &m).ok()
}

pub struct VqaEvaluator<'a> {
    pub answerer: &'a dyn ChatBackend,
    pub judge: Option<&'a dyn NliJudge>,
    pub refusals: RefusalList,
    pub params: Params,
    /// Also answer each question without any caption.
    pub no_caption: bool,
}

impl VqaEvaluator<'_> {
    fn answer(&self, caption: Option<&str>, item: &VqaItem, row: &mut ItemRow) {
        row.question = Some(item.question.clone());
        let prompt = match caption {
            Some(c) => render_vqa_prompt(c, &item.question),
            None => render_no_caption_prompt(&item.question),
        };
        let completion = prompt
            .map_err(|e| e.to_string())
            .and_then(|m| chat_complete(self.answerer, m, &self.params).map_err(|e| e.to_string()));
        let text = match completion {
            Ok(c) => strip_prefix_once(&c.text, VQA_ASSISTANT_PREFIX).to_string(),
            Err(e) => {
                row.error = Some(e);
                return;
            }
        };
        let rec = AnswerRecord::score(&text, &item.answers, &self.refusals);
        row.exact_match = Some(rec.exact_match);
        row.refused = Some(rec.refused);
        if let Some(judge) = self.judge {
            // Entailment against any ground truth counts; truths are tried in
            // order and a judge failure excludes the item from NLI accuracy.
            let mut label = None;
            for truth in item.answers.iter().filter(|t| !t.trim().is_empty()) {
                match nli_match(&text, truth, judge) {
                    Ok((hit, l)) => {
                        label = Some(l);
                        if hit {
                            break;
                        }
                    }
                    Err(e) => {
                        label = None;
                        row.error = Some(format!("nli: {e}"));
                        break;
                    }
                }
            }
            row.nli_label = label.map(|l| {
                serde_json::to_value(l)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            });
        }
        row.generated = Some(text);
    }

    /// Answers every question against every caption variant of its image.
    /// Questions come from `items` when given, else from the records.
    pub fn evaluate(
        &self,
        records: &[RunRecord],
        items: Option<&[VqaItem]>,
    ) -> Result<MetricReport> {
        let by_id: BTreeMap<&str, &RunRecord> =
            records.iter().map(|r| (r.id.as_str(), r)).collect();
        let owned: Vec<VqaItem>;
        let items: &[VqaItem] = match items {
            Some(i) => i,
            None => {
                owned = records
                    .iter()
                    .flat_map(|r| {
                        r.questions.iter().map(|q| VqaItem {
                            image_id: r.id.clone(),
                            question: q.question.clone(),
                            answers: q.answers.clone(),
                        })
                    })
                    .collect();
                &owned
            }
        };
        for it in items {
            it.validate()?;
        }
        let mut jobs: Vec<(&VqaItem, String, Option<String>)> = Vec::new();
        for it in items {
            let Some(rec) = by_id.get(it.image_id.as_str()) else {
                return Err(EvalError::Input(format!(
                    "no run record for image {:?}",
                    it.image_id
                )));
            };
            for (variant, caption) in caption_variants(rec) {
                jobs.push((it, variant, Some(caption)));
            }
            if self.no_caption {
                jobs.push((it, NO_CAPTION_VARIANT.to_string(), None));
            }
        }
        let rows: Vec<ItemRow> = jobs
            .par_iter()
            .map(|(it, variant, caption)| {
                let mut row = ItemRow::new(&it.image_id, variant);
                row.caption_words = caption.as_deref().map(|c| c.split_whitespace().count());
                self.answer(caption.as_deref(), it, &mut row);
                row
            })
            .collect();
        Ok(finish(EvalMode::Vqa, rows, record_lengths(records)))
    }
}

/// Reference-based METEOR and reference-free CLIPScore per caption variant.
/// `image_png` supplies the image bytes for a record when CLIPScore is on.
pub fn evaluate_paragraph(
    records: &[RunRecord],
    embedder: Option<&dyn Embedder>,
    image_png: &(dyn Fn(&RunRecord) -> std::result::Result<Vec<u8>, String> + Sync),
) -> Result<MetricReport> {
    let mut jobs: Vec<(&RunRecord, String, String)> = Vec::new();
    for r in records {
        for (variant, caption) in caption_variants(r) {
            jobs.push((r, variant, caption));
        }
    }
    let rows = jobs
        .par_iter()
        .map(|(rec, variant, caption)| {
            let mut row = ItemRow::new(&rec.id, variant);
            row.caption_words = Some(caption.split_whitespace().count());
            let mut errs = Vec::new();
            if !rec.reference_captions.is_empty() {
                match meteor_exact(caption, &rec.reference_captions) {
                    Ok(s) => row.meteor = Some(s),
                    Err(e) => errs.push(format!("meteor: {e}")),
                }
            }
            if let Some(emb) = embedder {
                let score = image_png(rec)
                    .and_then(|png| {
                        emb.embed_raw(&EmbedPayload::Image(png.into()))
                            .map_err(|e| e.to_string())
                    })
                    .and_then(|iv| {
                        let tv = emb
                            .embed_raw(&EmbedPayload::Text(caption.clone()))
                            .map_err(|e| e.to_string())?;
                        clip_score(&iv, &tv).map_err(|e| e.to_string())
                    });
                match score {
                    Ok(s) => row.clip_score = Some(s),
                    Err(e) => errs.push(format!("clip: {e}")),
                }
            }
            if !errs.is_empty() {
                row.error = Some(errs.join("; "));
            }
            row
        })
        .collect();
    Ok(finish(EvalMode::Paragraph, rows, record_lengths(records)))
}

impl MetricReport {
    pub fn variant(&self, name: &str) -> Option<&VariantMetrics> {
        self.variants.iter().find(|v| v.variant == name)
    }

    pub fn to_csv(&self) -> std::result::Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Aligned plain-text summary, derived from the report fields only.
    pub fn table(&self) -> String {
        let fmt_pct = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.2}", v * 100.0));
        let fmt_num = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        let fmt_len = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.1}"));
        let header = [
            "variant", "n", "exact%", "nli%", "refusals", "errors", "ans_len", "cap_len", "meteor",
            "clip",
        ];
        let rows: Vec<[String; 10]> = self
            .variants
            .iter()
            .map(|v| {
                [
                    v.variant.clone(),
                    v.items.to_string(),
                    fmt_pct(v.exact_accuracy),
                    fmt_pct(v.nli_accuracy),
                    v.refusals.to_string(),
                    v.errors.to_string(),
                    fmt_len(v.mean_answer_length),
                    fmt_len(v.mean_caption_length),
                    fmt_num(v.meteor),
                    fmt_num(v.clip_score),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                rows.iter()
                    .map(|r| r[i].len())
                    .chain([header[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let padded: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(header.to_vec(), &mut out);
        for r in &rows {
            line(r.iter().map(String::as_str).collect(), &mut out);
        }
        if let (Some(d), Some(p), Some(delta)) = (
            self.caption_length_default,
            self.caption_length_poca,
            self.delta_length,
        ) {
            let _ = writeln!(
                out,
                "caption length: default {d:.1}, poca {p:.1}, delta {delta:+.1}"
            );
        }
        out
    }
}
