//! Evaluation metrics: word error rate, corpus/sentence BLEU, and Pearson
//! correlation. All operate on token id sequences; "word" means one token.

use crate::error::{LutError, Result};
use std::collections::HashMap;

/// Edit distance (substitutions + insertions + deletions) divided by the
/// reference length. An empty reference has no defined rate.
pub fn wer(reference: &[usize], hypothesis: &[usize]) -> Result<f64> {
    if reference.is_empty() {
        return Err(LutError::UndefinedMetric(
            "word error rate against an empty reference".into(),
        ));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Levenshtein distance with two rolling rows.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Aggregate rate over a parallel corpus: total edits over total reference
/// length (not the mean of per-sentence rates).
pub fn corpus_wer(pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    let mut edits = 0usize;
    let mut len = 0usize;
    for (r, h) in pairs {
        if r.is_empty() {
            return Err(LutError::UndefinedMetric(
                "word error rate against an empty reference".into(),
            ));
        }
        edits += edit_distance(r, h);
        len += r.len();
    }
    if len == 0 {
        return Err(LutError::UndefinedMetric("word error rate over an empty corpus".into()));
    }
    Ok(edits as f64 / len as f64)
}

fn ngram_counts(s: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut m: HashMap<&[usize], usize> = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct BleuReport {
    pub bleu: f64,
    /// Modified n-gram precisions for n = 1..=4.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Corpus-level BLEU-4: clipped modified n-gram precisions pooled over all
/// sentence pairs, geometric mean, times a brevity penalty. Scores are
/// reported on the 0–100 scale. Any empty pooled precision zeroes the score.
pub fn corpus_bleu(pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<BleuReport> {
    if pairs.is_empty() {
        return Err(LutError::UndefinedMetric("BLEU over an empty corpus".into()));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (r, h) in pairs {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            let hc = ngram_counts(h, n);
            for (gram, &count) in &hc {
                total[n - 1] += count;
                matched[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
            }
        }
    }
    let mut precisions = [0.0f64; 4];
    let mut log_sum = 0.0f64;
    let mut degenerate = false;
    for n in 0..4 {
        precisions[n] = if total[n] == 0 { 0.0 } else { matched[n] as f64 / total[n] as f64 };
        if precisions[n] == 0.0 {
            degenerate = true;
        } else {
            log_sum += precisions[n].ln();
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if degenerate || hyp_len == 0 {
        0.0
    } else {
        100.0 * brevity_penalty * (log_sum / 4.0).exp()
    };
    Ok(BleuReport { bleu, precisions, brevity_penalty, hyp_len, ref_len })
}

/// Sentence BLEU with add-one smoothing on every precision, for per-example
/// diagnostics where short sentences would otherwise hit hard zeros.
pub fn sentence_bleu_smoothed(reference: &[usize], hypothesis: &[usize]) -> f64 {
    if hypothesis.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0f64;
    for n in 1..=4 {
        let rc = ngram_counts(reference, n);
        let hc = ngram_counts(hypothesis, n);
        let mut matched = 0usize;
        let mut total = 0usize;
        for (gram, &count) in &hc {
            total += count;
            matched += count.min(rc.get(gram).copied().unwrap_or(0));
        }
        log_sum += ((matched + 1) as f64 / (total + 1) as f64).ln();
    }
    let bp = if hypothesis.len() > reference.len() {
        1.0
    } else {
        (1.0 - reference.len() as f64 / hypothesis.len() as f64).exp()
    };
    100.0 * bp * (log_sum / 4.0).exp()
}

/// Character-level tokenization for scoring: each Unicode scalar becomes one
/// token (whitespace included). Lets the same BLEU machinery score languages
/// where word boundaries are not meaningful.
pub fn chars_to_ids(s: &str) -> Vec<usize> {
    s.chars().map(|c| c as usize).collect()
}

/// Pearson correlation coefficient. Needs at least two points and nonzero
/// variance on both sides.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(LutError::shape(
            "pearson",
            format!("{} xs vs {} ys", xs.len(), ys.len()),
        ));
    }
    if xs.len() < 2 {
        return Err(LutError::UndefinedMetric(
            "correlation needs at least two points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(LutError::UndefinedMetric(
            "correlation of a constant sequence".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
