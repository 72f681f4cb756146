//! Corpus evaluation: translate every utterance, score recognition quality
//! against the transcription and translation quality against the reference,
//! and correlate the two per-utterance.

use crate::corpus::Utterance;
use crate::ctc::ctc_greedy_decode;
use crate::decode::{beam_search, BeamParams};
use crate::error::{LutError, Result};
use crate::metrics::{corpus_bleu, corpus_wer, pearson, sentence_bleu_smoothed, wer};
use crate::model::LutModel;
use serde::Serialize;
use std::io::Write;

#[derive(Debug, Clone, Serialize)]
pub struct UttEval {
    pub utt_id: String,
    /// Recognition error of the greedy frame-label decode vs the transcription.
    pub wer: f64,
    /// Add-one smoothed translation score vs the reference.
    pub sentence_bleu: f64,
    pub hypothesis: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub corpus_bleu: f64,
    pub corpus_wer: f64,
    /// Correlation between per-utterance recognition error and translation
    /// quality; undefined when either column is constant.
    pub pearson_r: Option<f64>,
    pub n_utts: usize,
    pub per_utt: Vec<UttEval>,
}

pub fn evaluate(model: &LutModel, utts: &[Utterance], beam: &BeamParams) -> Result<EvalReport> {
    if utts.is_empty() {
        return Err(LutError::EmptyInput("evaluation over an empty manifest"));
    }
    let mut per_utt = Vec::with_capacity(utts.len());
    let mut bleu_pairs = Vec::with_capacity(utts.len());
    let mut wer_pairs = Vec::with_capacity(utts.len());
    for u in utts {
        let y = u.y.as_ref().ok_or_else(|| {
            LutError::Config(format!("utterance {} has no reference translation", u.utt_id))
        })?;
        let enc = model.encode_utterance(&u.features)?;
        let asr_hyp = ctc_greedy_decode(&enc.ctc_log_probs)?;
        let hyp = beam_search(model, &enc.h_se, beam)?;
        let u_wer = wer(&u.z, &asr_hyp)?;
        let u_bleu = sentence_bleu_smoothed(y, &hyp);
        wer_pairs.push((u.z.clone(), asr_hyp));
        bleu_pairs.push((y.clone(), hyp.clone()));
        per_utt.push(UttEval { utt_id: u.utt_id.clone(), wer: u_wer, sentence_bleu: u_bleu, hypothesis: hyp });
    }
    let xs: Vec<f64> = per_utt.iter().map(|e| e.wer).collect();
    let ys: Vec<f64> = per_utt.iter().map(|e| e.sentence_bleu).collect();
    let pearson_r = match pearson(&xs, &ys) {
        Ok(r) => Some(r),
        Err(LutError::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        corpus_bleu: corpus_bleu(&bleu_pairs)?.bleu,
        corpus_wer: corpus_wer(&wer_pairs)?,
        pearson_r,
        n_utts: utts.len(),
        per_utt,
    })
}

impl EvalReport {
    /// One JSON line per utterance followed by one summary line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.per_utt {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        let summary = serde_json::json!({
            "summary": {
                "corpus_bleu": self.corpus_bleu,
                "corpus_wer": self.corpus_wer,
                "pearson_r": self.pearson_r,
                "n_utts": self.n_utts,
            }
        });
        serde_json::to_writer(&mut w, &summary)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Two columns per utterance for external plotting of the WER–BLEU
    /// relationship.
    pub fn write_scatter(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "utt_id\twer\tsentence_bleu")?;
        for e in &self.per_utt {
            writeln!(w, "{}\t{}\t{}", e.utt_id, e.wer, e.sentence_bleu)?;
        }
        Ok(())
    }
}
