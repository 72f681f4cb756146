//! Greedy and beam-search translation over a trained model. Both operate on
//! precomputed semantic encoder states so one encoding pass serves the whole
//! search, and both restrict emissions to tokens the decoder may legally
//! produce (no padding, no start symbol).

use crate::error::Result;
use crate::model::LutModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Token ids including the leading `<sos>`; ends with `<eos>` iff finished.
    pub prefix: Vec<usize>,
    /// Sum of the chosen tokens' log-probabilities (non-increasing in length).
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Generated tokens with `<sos>`/`<eos>` stripped.
    pub fn content(&self, eos: usize) -> Vec<usize> {
        self.prefix[1..]
            .iter()
            .copied()
            .filter(|&t| t != eos)
            .collect()
    }

    /// Generated length used for normalization: everything after `<sos>`,
    /// but at least one so empty hypotheses don't divide by zero.
    fn gen_len(&self) -> usize {
        (self.prefix.len() - 1).max(1)
    }

    fn score(&self, length_penalty: f64) -> f64 {
        if length_penalty > 0.0 {
            self.log_prob / (self.gen_len() as f64).powf(length_penalty)
        } else {
            self.log_prob
        }
    }
}

#[derive(Debug, Clone)]
pub struct BeamParams {
    pub beam_size: usize,
    pub max_len: usize,
    /// Exponent for length normalization of finished scores; 0 disables.
    pub length_penalty: f64,
}

impl Default for BeamParams {
    fn default() -> Self {
        BeamParams { beam_size: 8, max_len: 48, length_penalty: 0.6 }
    }
}

/// Deterministic ordering: higher score first, then lexicographically
/// smaller prefix, so equal-probability ties go to the lowest token id.
fn rank(a: &Hypothesis, b: &Hypothesis, penalty: f64) -> std::cmp::Ordering {
    b.score(penalty)
        .partial_cmp(&a.score(penalty))
        .expect("scores are finite")
        .then_with(|| a.prefix.cmp(&b.prefix))
}

/// Full beam search returning the winning hypothesis.
pub fn beam_search_full(model: &LutModel, h_se: &Tensor, params: &BeamParams) -> Result<Hypothesis> {
    assert!(params.beam_size >= 1, "beam size must be at least 1");
    let eos = model.tgt_vocab.eos;
    let candidates = model.tgt_vocab.decode_candidates();
    // the decoder itself caps prefix length at max_len_st (sos included)
    let budget = params.max_len.min(model.cfg.max_len_st - 1);
    let mut live = vec![Hypothesis {
        prefix: vec![model.tgt_vocab.sos],
        log_prob: 0.0,
        finished: false,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();
    for _ in 0..budget {
        if live.is_empty() {
            break;
        }
        let mut expanded = Vec::with_capacity(live.len() * candidates.len());
        for hyp in &live {
            let lp = model.next_token_log_probs(h_se, &hyp.prefix)?;
            for &c in &candidates {
                let mut prefix = hyp.prefix.clone();
                prefix.push(c);
                expanded.push(Hypothesis {
                    prefix,
                    log_prob: hyp.log_prob + lp[c],
                    finished: c == eos,
                });
            }
        }
        // pruning compares raw log-probabilities; the penalty only reranks
        // the finished pool at the end
        expanded.sort_by(|a, b| rank(a, b, 0.0));
        expanded.truncate(params.beam_size);
        live = Vec::new();
        for h in expanded {
            if h.finished {
                pool.push(h);
            } else {
                live.push(h);
            }
        }
    }
    // out of budget: whatever is still alive competes as-is
    pool.extend(live);
    pool.sort_by(|a, b| rank(a, b, params.length_penalty));
    Ok(pool.into_iter().next().expect("at least the empty hypothesis survives"))
}

/// Best translation (content tokens only) under beam search.
pub fn beam_search(model: &LutModel, h_se: &Tensor, params: &BeamParams) -> Result<Vec<usize>> {
    let best = beam_search_full(model, h_se, params)?;
    Ok(best.content(model.tgt_vocab.eos))
}

/// Iterated argmax from `<sos>` until `<eos>` or the length cap. Ties go to
/// the lowest token id.
pub fn greedy_translate(model: &LutModel, h_se: &Tensor, max_len: usize) -> Result<Vec<usize>> {
    let eos = model.tgt_vocab.eos;
    let candidates = model.tgt_vocab.decode_candidates();
    let budget = max_len.min(model.cfg.max_len_st - 1);
    let mut prefix = vec![model.tgt_vocab.sos];
    for _ in 0..budget {
        let lp = model.next_token_log_probs(h_se, &prefix)?;
        let mut best = candidates[0];
        for &c in &candidates[1..] {
            if lp[c] > lp[best] {
                best = c;
            }
        }
        prefix.push(best);
        if best == eos {
            break;
        }
    }
    Ok(prefix[1..].iter().copied().filter(|&t| t != eos).collect())
}

/// Encode an utterance and translate it in one call.
pub fn translate(model: &LutModel, x: &Tensor, params: &BeamParams) -> Result<Vec<usize>> {
    let enc = model.encode_utterance(x)?;
    if params.beam_size == 1 {
        greedy_translate(model, &enc.h_se, params.max_len)
    } else {
        beam_search(model, &enc.h_se, params)
    }
}
