//! Frozen source-text embedding provider. Two flavours share one interface:
//! a small masked-token-prediction encoder trained on transcriptions and then
//! frozen, and a deterministic per-token lookup table for fast tests. Either
//! way, `embed` yields a sentence-level vector `h_c` and per-token vectors,
//! and once frozen nothing mutates.

use crate::error::{LutError, Result};
use crate::graph::{Graph, NodeId, ParamBind, ValueBind};
use crate::nn::{positional_encoding, randn, EncoderLayer, FwdMode, Linear};
use crate::optim::{clip_global_norm, Adam, AdamParams};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::vocab::Vocab;
use crate::checkpoint::{self, Container};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAX_SENTENCE: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Fraction of positions replaced by `<unk>` during training.
    pub mask_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// 1-based encoder layer whose output supervises the downstream model;
    /// defaults to the last layer.
    pub sup_layer: Option<usize>,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            mask_rate: 0.15,
            steps: 3000,
            batch_size: 8,
            lr: 3e-3,
            sup_layer: None,
            seed: 0,
        }
    }
}

impl TeacherConfig {
    pub fn sup_layer_index(&self) -> usize {
        self.sup_layer.unwrap_or(self.n_layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 {
            return Err(LutError::Config("teacher needs at least one layer and width".into()));
        }
        let sup = self.sup_layer_index();
        if sup == 0 || sup > self.n_layers {
            return Err(LutError::Config(format!(
                "sup_layer {sup} outside 1..={}",
                self.n_layers
            )));
        }
        if !(0.0..1.0).contains(&self.mask_rate) || self.mask_rate == 0.0 {
            return Err(LutError::Config("mask_rate must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Fingerprint of everything that must match between a checkpoint and the
    /// config trying to load it.
    pub fn arch_hash(&self, vocab_size: usize) -> u64 {
        let s = format!(
            "teacher d={} layers={} heads={} ff={} vocab={vocab_size}",
            self.d_model, self.n_layers, self.n_heads, self.d_ff
        );
        checkpoint::fnv1a(s.as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct TeacherEmbedding {
    /// Sentence-level vector, width `d_model`.
    pub h_c: Tensor,
    /// `[t_z, d_model]` per-token vectors.
    pub per_token: Tensor,
}

struct Encoder {
    embed: ParamId,
    cls: ParamId,
    layers: Vec<EncoderLayer>,
    head: Linear,
    pos: Tensor,
}

enum Kind {
    Trained(Encoder),
    Table(Tensor),
}

pub struct Teacher {
    pub cfg: TeacherConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    kind: Kind,
    frozen: bool,
}

impl Teacher {
    pub fn init(cfg: &TeacherConfig, vocab: &Vocab) -> Result<Teacher> {
        cfg.validate()?;
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let embed = store.add("embed", randn(vec![vocab.size(), d], 1.0, &mut rng));
        let cls = store.add("cls", randn(vec![1, d], 1.0, &mut rng));
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            layers.push(EncoderLayer::init(
                &mut store,
                &format!("layer{l}"),
                d,
                cfg.n_heads,
                cfg.d_ff,
                &mut rng,
            )?);
        }
        let head = Linear::init(&mut store, "head", d, vocab.size(), &mut rng);
        let pos = positional_encoding(MAX_SENTENCE + 1, d);
        Ok(Teacher {
            cfg: cfg.clone(),
            vocab: vocab.clone(),
            store,
            kind: Kind::Trained(Encoder { embed, cls, layers, head, pos }),
            frozen: false,
        })
    }

    /// Deterministic lookup-table teacher: one seeded Gaussian row per token
    /// id, sentence vector = mean of the token rows.
    pub fn table_mode(cfg: &TeacherConfig, vocab: &Vocab) -> Teacher {
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let table = randn(vec![vocab.size(), cfg.d_model], 1.0, &mut rng);
        Teacher {
            cfg: cfg.clone(),
            vocab: vocab.clone(),
            store: ParamStore::new(),
            kind: Kind::Table(table),
            frozen: true,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn d_model(&self) -> usize {
        self.cfg.d_model
    }

    fn sanitize(&self, z: &[usize]) -> Vec<usize> {
        z.iter()
            .map(|&id| if id < self.vocab.size() { id } else { self.vocab.unk })
            .collect()
    }

    /// Forward pass on a (possibly masked) sentence. Returns the supervision
    /// layer output (`[t+1, d]`, class row first) and the last-layer output
    /// used by the prediction head.
    fn forward(
        &self,
        g: &mut Graph,
        pb: &mut dyn ParamBind,
        ids: &[usize],
    ) -> Result<(NodeId, NodeId)> {
        let Kind::Trained(enc) = &self.kind else {
            return Err(LutError::Config("forward on a table-mode teacher".into()));
        };
        if ids.is_empty() {
            return Err(LutError::EmptyInput("teacher forward on empty sentence"));
        }
        if ids.len() > MAX_SENTENCE {
            return Err(LutError::Config(format!(
                "sentence of {} tokens exceeds the teacher maximum {MAX_SENTENCE}",
                ids.len()
            )));
        }
        let table = pb.bind(g, &self.store, enc.embed)?;
        let toks = g.embed(table, ids)?;
        let cls = pb.bind(g, &self.store, enc.cls)?;
        let mut x = g.concat_rows(&[cls, toks])?;
        let pos_rows: Vec<Vec<f64>> = (0..=ids.len()).map(|t| enc.pos.row(t).to_vec()).collect();
        let pos = Tensor::from_rows(&pos_rows)?;
        let pos = g.constant(&pos);
        x = g.add(x, pos)?;
        let mut mode = FwdMode::eval();
        let mut sup = x;
        for (l, layer) in enc.layers.iter().enumerate() {
            x = layer.forward(g, pb, &self.store, x, &format!("t{l}"), &mut mode)?;
            if l + 1 == self.cfg.sup_layer_index() {
                sup = x;
            }
        }
        Ok((sup, x))
    }

    /// Embed a sentence: class vector plus per-token vectors from the
    /// supervision layer. Pure once frozen.
    pub fn embed_sentence(&self, z: &[usize]) -> Result<TeacherEmbedding> {
        if z.is_empty() {
            return Err(LutError::EmptyInput("embed of an empty sentence"));
        }
        let ids = self.sanitize(z);
        match &self.kind {
            Kind::Table(table) => {
                let d = self.cfg.d_model;
                let mut rows = Vec::with_capacity(ids.len() * d);
                let mut mean = vec![0.0; d];
                for &id in &ids {
                    let row = table.row(id);
                    rows.extend_from_slice(row);
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v / ids.len() as f64;
                    }
                }
                Ok(TeacherEmbedding {
                    h_c: Tensor::new(vec![d], mean)?,
                    per_token: Tensor::new(vec![ids.len(), d], rows)?,
                })
            }
            Kind::Trained(_) => {
                if !self.frozen {
                    return Err(LutError::Config("embed before the teacher is frozen".into()));
                }
                let mut g = Graph::new();
                let mut pb = ValueBind::new();
                let (sup, _) = self.forward(&mut g, &mut pb, &ids)?;
                let t = ids.len();
                let d = self.cfg.d_model;
                let hc = g.slice_rows(sup, 0, 1)?;
                let per = g.slice_rows(sup, 1, t)?;
                let hc = Tensor::new(vec![d], g.data(hc).to_vec())?;
                Ok(TeacherEmbedding { h_c: hc, per_token: g.to_tensor(per) })
            }
        }
    }

    /// One masked-prediction training pass over `sentences`. Silently does
    /// nothing once frozen, so callers may keep "training" without effect.
    pub fn train_steps(
        &mut self,
        sentences: &[Vec<usize>],
        steps: usize,
        adam: &mut Adam,
        rng: &mut StdRng,
    ) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        if sentences.is_empty() {
            return Err(LutError::EmptyInput("teacher training on an empty corpus"));
        }
        for _ in 0..steps {
            let mut g = Graph::new();
            let mut pb = ValueBind::new();
            let mut losses = Vec::new();
            for _ in 0..self.cfg.batch_size {
                let s = &sentences[rng.gen_range(0..sentences.len())];
                let ids = self.sanitize(s);
                let (masked, targets) = mask_sentence(&ids, self.vocab.unk, self.cfg.mask_rate, rng);
                losses.push(self.masked_nll(&mut g, &mut pb, &masked, &targets)?);
            }
            let stacked = g.concat_rows(&losses)?;
            let loss = g.mean_all(stacked)?;
            g.backward(loss)?;
            let mut grads = pb.grads(&g, &self.store);
            clip_global_norm(&mut grads, 5.0);
            adam.step(&mut self.store, &grads, self.cfg.lr)?;
        }
        Ok(())
    }

    /// Mean negative log-likelihood of the original tokens at the masked
    /// positions, as a `[1, 1]` node.
    fn masked_nll(
        &self,
        g: &mut Graph,
        pb: &mut dyn ParamBind,
        masked: &[usize],
        targets: &[(usize, usize)],
    ) -> Result<NodeId> {
        let Kind::Trained(enc) = &self.kind else {
            return Err(LutError::Config("training a table-mode teacher".into()));
        };
        let (_, last) = self.forward(g, pb, masked)?;
        let logits = enc.head.forward(g, pb, &self.store, last)?;
        let logp = g.log_softmax_rows(logits)?;
        let v = self.vocab.size();
        // +1 skips the class row
        let idx: Vec<i64> = targets
            .iter()
            .map(|&(pos, tok)| ((pos + 1) * v + tok) as i64)
            .collect();
        let picked = g.gather(logp, idx, 0.0)?;
        let picked = g.reshape(picked, vec![1, targets.len()])?;
        let mean = g.mean_all(picked)?;
        let neg = g.scale(mean, -1.0);
        g.reshape(neg, vec![1, 1])
    }

    /// Fraction of positions recovered when masked one at a time.
    pub fn masked_accuracy(&self, sentences: &[Vec<usize>]) -> Result<f64> {
        let Kind::Trained(enc) = &self.kind else {
            return Err(LutError::Config("accuracy of a table-mode teacher".into()));
        };
        let mut hits = 0usize;
        let mut total = 0usize;
        for s in sentences {
            let ids = self.sanitize(s);
            for pos in 0..ids.len() {
                let mut masked = ids.clone();
                masked[pos] = self.vocab.unk;
                let mut g = Graph::new();
                let mut pb = ValueBind::new();
                let (_, last) = self.forward(&mut g, &mut pb, &masked)?;
                let logits = enc.head.forward(&mut g, &mut pb, &self.store, last)?;
                let v = self.vocab.size();
                let row = &g.data(logits)[(pos + 1) * v..(pos + 2) * v];
                let pred = argmax(row);
                hits += usize::from(pred == ids[pos]);
                total += 1;
            }
        }
        if total == 0 {
            return Err(LutError::EmptyInput("masked accuracy over zero positions"));
        }
        Ok(hits as f64 / total as f64)
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        let c = Container::from_store(
            "teacher",
            self.cfg.arch_hash(self.vocab.size()),
            step,
            &self.store,
        );
        checkpoint::save(path, &c)
    }

    pub fn load(path: &Path, cfg: &TeacherConfig, vocab: &Vocab) -> Result<Teacher> {
        let c = checkpoint::load_expect(path, "teacher", cfg.arch_hash(vocab.size()))?;
        let mut t = Teacher::init(cfg, vocab)?;
        c.load_into(&mut t.store)?;
        t.freeze();
        Ok(t)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Replace ~`rate` of the positions with the mask id (at least one), returning
/// the masked sentence and `(position, original token)` pairs.
fn mask_sentence(
    ids: &[usize],
    mask_id: usize,
    rate: f64,
    rng: &mut StdRng,
) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut masked = ids.to_vec();
    let mut targets = Vec::new();
    for (i, &tok) in ids.iter().enumerate() {
        if rng.gen::<f64>() < rate {
            masked[i] = mask_id;
            targets.push((i, tok));
        }
    }
    if targets.is_empty() {
        let i = rng.gen_range(0..ids.len());
        targets.push((i, ids[i]));
        masked[i] = mask_id;
    }
    (masked, targets)
}

pub struct TeacherReport {
    pub teacher: Teacher,
    pub held_out_accuracy: f64,
}

/// Train a fresh masked-prediction teacher on `sentences`, freeze it, and
/// report held-out accuracy (last 10% of the corpus, never trained on).
pub fn train_teacher(
    sentences: &[Vec<usize>],
    vocab: &Vocab,
    cfg: &TeacherConfig,
) -> Result<TeacherReport> {
    if sentences.is_empty() {
        return Err(LutError::EmptyInput("teacher corpus is empty"));
    }
    let split = (sentences.len() * 9).div_ceil(10).max(1);
    let (train, held_out) = sentences.split_at(split.min(sentences.len()));
    let mut teacher = Teacher::init(cfg, vocab)?;
    let mut adam = Adam::new(&teacher.store, AdamParams::default());
    let mut rng = StdRng::seed_from_u64(cfg.seed.wrapping_add(1));
    teacher.train_steps(train, cfg.steps, &mut adam, &mut rng)?;
    teacher.freeze();
    let eval_set = if held_out.is_empty() { train } else { held_out };
    let held_out_accuracy = teacher.masked_accuracy(eval_set)?;
    log::info!(
        "teacher: {} train / {} held-out sentences, masked accuracy {:.4}",
        train.len(),
        eval_set.len(),
        held_out_accuracy
    );
    Ok(TeacherReport { teacher, held_out_accuracy })
}
