//! Batching: utterances are bucketed by frame length and packed so each
//! batch's unpadded frame total stays within a budget. Utterances whose
//! transcription cannot be aligned in their frame count are dropped with a
//! warning rather than poisoning training.

use crate::corpus::Utterance;
use crate::ctc::min_frames;
use crate::error::{LutError, Result};
use crate::tensor::Tensor;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

/// One packed batch. Padded matrices are provided for inspection/export;
/// training consumes the unpadded per-utterance views, so padding never
/// reaches a loss.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Indices into the corpus this batch was packed from.
    pub items: Vec<usize>,
    /// `[n_utts · t_max, feat_dim]` zero-padded features, row-blocked per utterance.
    pub features: Tensor,
    pub frame_lens: Vec<usize>,
    /// `[n_utts, z_max]` source ids, padded with the source pad id.
    pub z_pad: Vec<Vec<usize>>,
    pub z_lens: Vec<usize>,
    /// `[n_utts, y_max]` target ids, padded with the target pad id; empty when
    /// the batch holds transcription-only utterances.
    pub y_pad: Vec<Vec<usize>>,
    pub y_lens: Vec<usize>,
    pub total_frames: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Unpadded `[t_i, f]` view of utterance `i`.
    pub fn features_of(&self, i: usize) -> Tensor {
        let f = self.features.shape()[1];
        let t_max = self.features.shape()[0] / self.items.len();
        let t = self.frame_lens[i];
        let mut data = Vec::with_capacity(t * f);
        for r in 0..t {
            data.extend_from_slice(self.features.row(i * t_max + r));
        }
        Tensor::new(vec![t, f], data).expect("padded block slice")
    }

    pub fn z_of(&self, i: usize) -> &[usize] {
        &self.z_pad[i][..self.z_lens[i]]
    }

    pub fn y_of(&self, i: usize) -> Option<&[usize]> {
        (!self.y_pad.is_empty() && self.y_lens[i] > 0).then(|| &self.y_pad[i][..self.y_lens[i]])
    }
}

fn pack(utts: &[Utterance], order: &[usize], src_pad: usize, tgt_pad: usize) -> Batch {
    let f = utts[order[0]].features.shape()[1];
    let t_max = order.iter().map(|&i| utts[i].n_frames()).max().unwrap();
    let z_max = order.iter().map(|&i| utts[i].z.len()).max().unwrap();
    let y_max = order
        .iter()
        .map(|&i| utts[i].y.as_ref().map_or(0, Vec::len))
        .max()
        .unwrap();
    let mut features = vec![0.0; order.len() * t_max * f];
    let mut frame_lens = Vec::new();
    let mut z_pad = Vec::new();
    let mut z_lens = Vec::new();
    let mut y_pad = Vec::new();
    let mut y_lens = Vec::new();
    let mut total_frames = 0;
    for (slot, &i) in order.iter().enumerate() {
        let u = &utts[i];
        let t = u.n_frames();
        total_frames += t;
        frame_lens.push(t);
        features[slot * t_max * f..slot * t_max * f + t * f].copy_from_slice(u.features.data());
        let mut z = u.z.clone();
        z.resize(z_max, src_pad);
        z_pad.push(z);
        z_lens.push(u.z.len());
        let ylen = u.y.as_ref().map_or(0, Vec::len);
        let mut y = u.y.clone().unwrap_or_default();
        y.resize(y_max, tgt_pad);
        y_pad.push(y);
        y_lens.push(ylen);
    }
    Batch {
        items: order.to_vec(),
        features: Tensor::new(vec![order.len() * t_max, f], features).expect("padded batch"),
        frame_lens,
        z_pad,
        z_lens,
        y_pad,
        y_lens,
        total_frames,
    }
}

/// Pack every alignable utterance exactly once into budget-bounded batches,
/// bucketing by frame length; batch order is shuffled by `seed`.
pub fn make_batches(
    utts: &[Utterance],
    frames_budget: usize,
    src_pad: usize,
    tgt_pad: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    let mut keep: Vec<usize> = Vec::with_capacity(utts.len());
    for (i, u) in utts.iter().enumerate() {
        if u.n_frames() < min_frames(&u.z) {
            log::warn!(
                "dropping {}: {} frames cannot align a {}-token transcription (needs {})",
                u.utt_id,
                u.n_frames(),
                u.z.len(),
                min_frames(&u.z)
            );
            continue;
        }
        if u.n_frames() > frames_budget {
            return Err(LutError::Config(format!(
                "{} has {} frames, over the {frames_budget}-frame batch budget",
                u.utt_id,
                u.n_frames()
            )));
        }
        keep.push(i);
    }
    if keep.is_empty() {
        return Ok(Vec::new());
    }
    // stable length bucketing keeps padding small and packing deterministic
    keep.sort_by_key(|&i| (utts[i].n_frames(), i));
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut current_frames = 0;
    for &i in &keep {
        let t = utts[i].n_frames();
        if current_frames + t > frames_budget && !current.is_empty() {
            batches.push(pack(utts, &current, src_pad, tgt_pad));
            current.clear();
            current_frames = 0;
        }
        current.push(i);
        current_frames += t;
    }
    if !current.is_empty() {
        batches.push(pack(utts, &current, src_pad, tgt_pad));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    batches.shuffle(&mut rng);
    Ok(batches)
}
