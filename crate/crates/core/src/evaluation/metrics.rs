use std::collections::HashMap;

use super::{EvalError, Result};

/// Largest match count solved exactly; above it the alignment is greedy.
pub const EXACT_ALIGNMENT_LIMIT: usize = 12;

/// Lowercased whitespace tokens with leading and trailing punctuation removed.
pub fn meteor_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Exact-stage METEOR alignment: `(matches, chunks)` for a maximum one-to-one
/// unigram alignment with the fewest chunks.
pub fn align(candidate: &[String], reference: &[String]) -> (usize, usize) {
    let mut ref_positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, t) in reference.iter().enumerate() {
        ref_positions.entry(t.as_str()).or_default().push(j);
    }
    let mut cand_count: HashMap<&str, usize> = HashMap::new();
    for t in candidate {
        *cand_count.entry(t.as_str()).or_default() += 1;
    }
    let m: usize = cand_count
        .iter()
        .map(|(w, &c)| c.min(ref_positions.get(w).map_or(0, Vec::len)))
        .sum();
    if m == 0 {
        return (0, 0);
    }
    let greedy = greedy_chunks(candidate, &ref_positions);
    if m > EXACT_ALIGNMENT_LIMIT {
        return (m, greedy);
    }
    // Candidate tokens that may stay unaligned: the surplus of each word.
    let skips: HashMap<&str, usize> = cand_count
        .iter()
        .map(|(w, &c)| (*w, c - c.min(ref_positions.get(w).map_or(0, Vec::len))))
        .collect();
    let mut search = Search {
        candidate,
        ref_positions: &ref_positions,
        used: vec![false; reference.len()],
        skips,
        best: greedy,
    };
    search.run(0, None, 0);
    (m, search.best)
}

fn greedy_chunks(candidate: &[String], ref_positions: &HashMap<&str, Vec<usize>>) -> usize {
    let len = ref_positions.values().flatten().max().map_or(0, |j| j + 1);
    let mut used = vec![false; len];
    let mut prev: Option<usize> = None;
    let mut chunks = 0;
    for t in candidate {
        let Some(positions) = ref_positions.get(t.as_str()) else {
            prev = None;
            continue;
        };
        let next = prev.map(|p| p + 1);
        let pick = positions
            .iter()
            .copied()
            .find(|&j| Some(j) == next && !used[j])
            .or_else(|| positions.iter().copied().find(|&j| !used[j]));
        match pick {
            Some(j) => {
                used[j] = true;
                if prev.map(|p| p + 1) != Some(j) {
                    chunks += 1;
                }
                prev = Some(j);
            }
            None => prev = None,
        }
    }
    chunks
}

struct Search<'a> {
    candidate: &'a [String],
    ref_positions: &'a HashMap<&'a str, Vec<usize>>,
    used: Vec<bool>,
    skips: HashMap<&'a str, usize>,
    best: usize,
}

impl<'a> Search<'a> {
    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        if chunks >= self.best {
            return;
        }
        if i == self.candidate.len() {
            self.best = chunks;
            return;
        }
        let word = self.candidate[i].as_str();
        let positions: &[usize] = self.ref_positions.get(word).map_or(&[], Vec::as_slice);
        // Extending the current chunk first finds good bounds early.
        let mut order: Vec<usize> = positions
            .iter()
            .copied()
            .filter(|&j| !self.used[j])
            .collect();
        if let Some(p) = prev {
            order.sort_by_key(|&j| j != p + 1);
        }
        for j in order {
            self.used[j] = true;
            let extra = usize::from(prev.map(|p| p + 1) != Some(j));
            self.run(i + 1, Some(j), chunks + extra);
            self.used[j] = false;
        }
        let left = self.skips.get(word).copied().unwrap_or(0);
        if left > 0 {
            self.skips.insert(word, left - 1);
            self.run(i + 1, None, chunks);
            self.skips.insert(word, left);
        }
    }
}

fn meteor_single(cand: &[String], reference: &[String]) -> f64 {
    let (m, chunks) = align(cand, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f * (1.0 - penalty)
}

/// Exact-match METEOR, maximized over references.
pub fn meteor_exact(candidate: &str, references: &[impl AsRef<str>]) -> Result<f64> {
    let cand = meteor_tokens(candidate);
    if cand.is_empty() {
        return Err(EvalError::Empty("candidate"));
    }
    if references.is_empty() {
        return Err(EvalError::Empty("references"));
    }
    let mut best = 0.0f64;
    for r in references {
        let toks = meteor_tokens(r.as_ref());
        if toks.is_empty() {
            return Err(EvalError::Empty("reference"));
        }
        best = best.max(meteor_single(&cand, &toks));
    }
    Ok(best)
}

const UNIT_TOL: f64 = 1e-6;

fn unit(v: &[f64], what: &str) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EvalError::ZeroVector);
    }
    if (norm - 1.0).abs() > UNIT_TOL {
        log::warn!("{what} embedding has norm {norm}; renormalizing");
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// `2.5 * max(cos(image, text), 0)`.
pub fn clip_score(image_vec: &[f64], text_vec: &[f64]) -> Result<f64> {
    if image_vec.len() != text_vec.len() {
        return Err(EvalError::DimensionMismatch(
            image_vec.len(),
            text_vec.len(),
        ));
    }
    if image_vec.is_empty() {
        return Err(EvalError::Empty("embedding"));
    }
    let a = unit(image_vec, "image")?;
    let b = unit(text_vec, "text")?;
    let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok(2.5 * cos.clamp(0.0, 1.0))
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Word-count means to one decimal and their difference `poca - default`,
/// both rounded from the raw means.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LengthStats {
    pub mean_default: f64,
    pub mean_poca: f64,
    pub delta: f64,
}

fn mean_words(captions: &[impl AsRef<str>], what: &'static str) -> Result<f64> {
    if captions.is_empty() {
        return Err(EvalError::Empty(what));
    }
    let total: usize = captions
        .iter()
        .map(|c| c.as_ref().split_whitespace().count())
        .sum();
    Ok(total as f64 / captions.len() as f64)
}

pub fn length_stats(default: &[impl AsRef<str>], poca: &[impl AsRef<str>]) -> Result<LengthStats> {
    let d = mean_words(default, "default captions")?;
    let p = mean_words(poca, "poca captions")?;
    Ok(LengthStats {
        mean_default: round1(d),
        mean_poca: round1(p),
        delta: round1(p - d),
    })
}

/// Difference of two already reported means, to one decimal.
pub fn length_delta(mean_default: f64, mean_poca: f64) -> f64 {
    round1(mean_poca - mean_default)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EvalError::Empty("pearson needs at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::Constant);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
