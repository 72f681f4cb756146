//! Linear probing of frozen encoder representations: time-average a layer's
//! output per utterance, train a single softmax layer on top, and report
//! held-out accuracy. How much a probe recovers of speaker or intent tells
//! us what each encoder stage keeps and what it discards.

use crate::error::{LutError, Result};
use crate::model::LutModel;
use crate::tensor::Tensor;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeLayer {
    Acoustic,
    Semantic,
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { steps: 2000, lr: 0.5, train_frac: 0.8, seed: 0 }
    }
}

/// Column means over time: `[t, d]` -> length-`d` vector.
pub fn time_average(states: &Tensor) -> Result<Vec<f64>> {
    let (t, d) = states.dims2("time_average")?;
    if t == 0 {
        return Err(LutError::EmptyInput("time_average over zero frames"));
    }
    let mut out = vec![0.0; d];
    for r in 0..t {
        for (o, v) in out.iter_mut().zip(states.row(r)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= t as f64;
    }
    Ok(out)
}

/// Train/test a softmax classifier on frozen vectors; returns test accuracy.
///
/// Full-batch gradient descent on the cross-entropy; features are
/// standardized with train-split statistics. Deterministic for a fixed seed.
pub fn probe(features: &[Vec<f64>], labels: &[usize], cfg: &ProbeConfig) -> Result<f64> {
    if features.len() != labels.len() {
        return Err(LutError::shape(
            "probe",
            format!("{} feature vectors vs {} labels", features.len(), labels.len()),
        ));
    }
    if features.is_empty() {
        return Err(LutError::EmptyInput("probe on an empty dataset"));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(LutError::Config(format!(
            "probing needs at least 2 classes, found {}",
            classes.len()
        )));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(LutError::shape("probe", "ragged feature vectors"));
    }
    let n_classes = labels.iter().max().unwrap() + 1;

    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((features.len() as f64 * cfg.train_frac).round() as usize)
        .clamp(1, features.len() - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    // standardize with train statistics
    let mut mean = vec![0.0; d];
    for &i in train_idx {
        for (m, v) in mean.iter_mut().zip(&features[i]) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n_train as f64;
    }
    let mut var = vec![0.0; d];
    for &i in train_idx {
        for j in 0..d {
            let c = features[i][j] - mean[j];
            var[j] += c * c;
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / n_train as f64).sqrt();
            if s < 1e-8 { 1.0 } else { s }
        })
        .collect();
    let norm = |i: usize| -> Vec<f64> {
        features[i]
            .iter()
            .zip(&mean)
            .zip(&std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    };

    let mut w = vec![0.0f64; d * n_classes];
    let mut b = vec![0.0f64; n_classes];
    let scores = |x: &[f64], w: &[f64], b: &[f64]| -> Vec<f64> {
        let mut s = b.to_vec();
        for (j, &xj) in x.iter().enumerate() {
            for c in 0..n_classes {
                s[c] += xj * w[j * n_classes + c];
            }
        }
        s
    };
    let train: Vec<(Vec<f64>, usize)> = train_idx.iter().map(|&i| (norm(i), labels[i])).collect();
    for _ in 0..cfg.steps {
        let mut gw = vec![0.0f64; d * n_classes];
        let mut gb = vec![0.0f64; n_classes];
        for (x, y) in &train {
            let s = scores(x, &w, &b);
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..n_classes {
                let p = exps[c] / z - f64::from(c == *y);
                gb[c] += p;
                for (j, &xj) in x.iter().enumerate() {
                    gw[j * n_classes + c] += xj * p;
                }
            }
        }
        let step = cfg.lr / train.len() as f64;
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= step * gi;
        }
        for (bi, gi) in b.iter_mut().zip(&gb) {
            *bi -= step * gi;
        }
    }

    let mut correct = 0usize;
    for &i in test_idx {
        let s = scores(&norm(i), &w, &b);
        let mut best = 0usize;
        for c in 1..n_classes {
            if s[c] > s[best] {
                best = c;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_idx.len() as f64)
}

/// Encode utterances with a frozen model, average the chosen layer over
/// time, and probe.
pub fn probe_model(
    model: &LutModel,
    frames: &[Tensor],
    labels: &[usize],
    layer: ProbeLayer,
    cfg: &ProbeConfig,
) -> Result<f64> {
    let mut feats = Vec::with_capacity(frames.len());
    for x in frames {
        let enc = model.encode_utterance(x)?;
        let states = match layer {
            ProbeLayer::Acoustic => &enc.h_ae,
            ProbeLayer::Semantic => &enc.h_se,
        };
        feats.push(time_average(states)?);
    }
    probe(&feats, labels, cfg)
}
