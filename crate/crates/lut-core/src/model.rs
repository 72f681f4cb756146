//! The triple-supervised translation model. Three stacked stages share one
//! parameter store: an acoustic encoder with a frame-level emission head, a
//! semantic encoder whose output is pulled towards frozen teacher embeddings
//! through one of two side branches, and an autoregressive decoder that
//! cross-attends to the semantic encoder output. Inference touches only the
//! two encoders and the decoder; the branches and the teacher exist solely to
//! shape the training loss.

use crate::ctc;
use crate::checkpoint::{self, Container};
use crate::error::{LutError, Result};
use crate::graph::{Graph, NodeId, ParamBind, ValueBind};
use crate::nn::{
    causal_mask, positional_encoding, randn, Conv2d, DecoderLayer, EncoderLayer, FwdMode,
    LayerNormParams, Linear, MultiHeadAttention, Trace,
};
use crate::params::{ParamId, ParamStore};
use crate::teacher::TeacherEmbedding;
use crate::tensor::Tensor;
use crate::vocab::Vocab;
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchMode {
    Seq,
    Word,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_ae: usize,
    pub n_se: usize,
    pub n_td: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub feat_dim: usize,
    /// Total vocabulary sizes including reserved symbols.
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub branch: BranchMode,
    pub dropout: f64,
    pub label_smoothing: f64,
    /// Frame cap for encoding (recognition-side decode length).
    pub max_len_asr: usize,
    /// Token cap for translation decoding.
    pub max_len_st: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_ae: 2,
            n_se: 2,
            n_td: 2,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            feat_dim: 8,
            src_vocab_size: Vocab::source(12).size(),
            tgt_vocab_size: Vocab::target(12).size(),
            alpha: 0.5,
            beta: 0.05,
            gamma: 0.45,
            branch: BranchMode::Word,
            dropout: 0.0,
            label_smoothing: 0.0,
            max_len_asr: 200,
            max_len_st: 48,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(LutError::Config("loss weights must be nonnegative".into()));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(LutError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LutError::Config("dropout must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(LutError::Config("label_smoothing must be in [0, 1)".into()));
        }
        if self.max_len_asr == 0 || self.max_len_st == 0 {
            return Err(LutError::Config("decode length caps must be positive".into()));
        }
        if self.feat_dim == 0 {
            return Err(LutError::Config("feat_dim must be positive".into()));
        }
        Ok(())
    }

    /// Fingerprint of every field that shapes the parameter set; checkpoints
    /// carry it and refuse to load under a different architecture.
    pub fn arch_hash(&self) -> u64 {
        let s = format!(
            "lut ae={} se={} td={} d={} heads={} ff={} feat={} src={} tgt={}",
            self.n_ae,
            self.n_se,
            self.n_td,
            self.d_model,
            self.n_heads,
            self.d_ff,
            self.feat_dim,
            self.src_vocab_size,
            self.tgt_vocab_size
        );
        checkpoint::fnv1a(s.as_bytes())
    }
}

/// Training-graph handles for one utterance.
pub struct EncoderOutputs {
    /// `[t_x, d_model]` acoustic states.
    pub h_ae: NodeId,
    /// `[t_x, 1 + n_content]` frame emission log-probabilities.
    pub ctc_log_probs: NodeId,
    /// `[t_x, d_model]` semantic states (what the decoder attends to).
    pub h_se: NodeId,
    /// `[1, d_model]` pooled utterance vector (sequence-branch mode).
    pub v0: Option<NodeId>,
    /// `[t_z, d_model]` teacher-query attention readout (word-branch mode;
    /// requires a transcription).
    pub v1: Option<NodeId>,
}

/// Plain-value encoder outputs for inference and probing.
pub struct Encoded {
    pub h_ae: Tensor,
    pub h_se: Tensor,
    pub ctc_log_probs: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Recognition + distance supervision only (the decoder sits out).
    Auxiliary,
    /// All three losses.
    Full,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossParts {
    pub l_ae: f64,
    pub l_se: f64,
    pub l_td: Option<f64>,
    pub total: f64,
    pub n_frames: usize,
    pub n_tokens: usize,
}

pub struct LossItem<'a> {
    pub features: &'a Tensor,
    pub z: &'a [usize],
    pub y: Option<&'a [usize]>,
    pub teacher: &'a TeacherEmbedding,
}

pub struct LutModel {
    pub cfg: ModelConfig,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub store: ParamStore,
    in_proj: Linear,
    ae_layers: Vec<EncoderLayer>,
    ctc_head: Linear,
    se_layers: Vec<EncoderLayer>,
    conv: Conv2d,
    conv_ln: LayerNormParams,
    word_attn: MultiHeadAttention,
    dec_embed: ParamId,
    dec_layers: Vec<DecoderLayer>,
    out_proj: Linear,
    pos_src: Tensor,
    pos_tgt: Tensor,
}

impl LutModel {
    pub fn init(cfg: &ModelConfig, src_vocab: &Vocab, tgt_vocab: &Vocab) -> Result<LutModel> {
        cfg.validate()?;
        if cfg.src_vocab_size != src_vocab.size() || cfg.tgt_vocab_size != tgt_vocab.size() {
            return Err(LutError::Config(format!(
                "config vocab sizes ({}, {}) disagree with the vocab files ({}, {})",
                cfg.src_vocab_size,
                cfg.tgt_vocab_size,
                src_vocab.size(),
                tgt_vocab.size()
            )));
        }
        let ctc_width = src_vocab.ctc_width()?;
        let d = cfg.d_model;
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let in_proj = Linear::init(&mut store, "ae.in", cfg.feat_dim, d, &mut rng);
        let mut ae_layers = Vec::with_capacity(cfg.n_ae);
        for l in 0..cfg.n_ae {
            ae_layers.push(EncoderLayer::init(&mut store, &format!("ae.layer{l}"), d, cfg.n_heads, cfg.d_ff, &mut rng)?);
        }
        let ctc_head = Linear::init(&mut store, "ae.ctc", d, ctc_width, &mut rng);
        let mut se_layers = Vec::with_capacity(cfg.n_se);
        for l in 0..cfg.n_se {
            se_layers.push(EncoderLayer::init(&mut store, &format!("se.layer{l}"), d, cfg.n_heads, cfg.d_ff, &mut rng)?);
        }
        // 3x3 kernel, stride 2 on the feature axis, 2 channels: halve the
        // width, double the channels, flattened width stays d_model
        let conv = Conv2d::init(&mut store, "se.conv", d, 3, 3, 2, 2, d, &mut rng)?;
        let conv_ln = LayerNormParams::init(&mut store, "se.conv_ln", d);
        let word_attn = MultiHeadAttention::init(&mut store, "se.word", d, cfg.n_heads, &mut rng)?;
        let dec_embed = store.add("td.embed", randn(vec![tgt_vocab.size(), d], 1.0, &mut rng));
        let mut dec_layers = Vec::with_capacity(cfg.n_td);
        for l in 0..cfg.n_td {
            dec_layers.push(DecoderLayer::init(&mut store, &format!("td.layer{l}"), d, cfg.n_heads, cfg.d_ff, &mut rng)?);
        }
        let out_proj = Linear::init(&mut store, "td.out", d, tgt_vocab.size(), &mut rng);
        let pos_src = positional_encoding(cfg.max_len_asr, d);
        let pos_tgt = positional_encoding(cfg.max_len_st + 1, d);
        Ok(LutModel {
            cfg: cfg.clone(),
            src_vocab: src_vocab.clone(),
            tgt_vocab: tgt_vocab.clone(),
            store,
            in_proj,
            ae_layers,
            ctc_head,
            se_layers,
            conv,
            conv_ln,
            word_attn,
            dec_embed,
            dec_layers,
            out_proj,
            pos_src,
            pos_tgt,
        })
    }

    fn pos_rows(&self, table: &Tensor, n: usize, what: &str) -> Result<Tensor> {
        if n > table.shape()[0] {
            return Err(LutError::Config(format!(
                "{what} length {n} exceeds the configured maximum {}",
                table.shape()[0]
            )));
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|t| table.row(t).to_vec()).collect();
        Tensor::from_rows(&rows)
    }

    /// Project frames to model width, add positions, run the acoustic stack;
    /// also emit frame-level label log-probabilities.
    pub fn acoustic_encode(
        &self,
        g: &mut Graph,
        pb: &mut dyn ParamBind,
        x: &Tensor,
        mode: &mut FwdMode,
    ) -> Result<(NodeId, NodeId)> {
        let (t, f) = x.dims2("acoustic_encode")?;
        if t == 0 {
            return Err(LutError::EmptyInput("acoustic_encode on zero frames"));
        }
        if f != self.cfg.feat_dim {
            return Err(LutError::shape(
                "acoustic_encode",
                format!("frames are {f}-wide, model expects {}", self.cfg.feat_dim),
            ));
        }
        let x = g.constant(x);
        let proj = self.in_proj.forward(g, pb, &self.store, x)?;
        let pos = self.pos_rows(&self.pos_src, t, "utterance")?;
        let pos = g.constant(&pos);
        let mut h = g.add(proj, pos)?;
        for (l, layer) in self.ae_layers.iter().enumerate() {
            h = layer.forward(g, pb, &self.store, h, &format!("ae.layer{l}"), mode)?;
        }
        let logits = self.ctc_head.forward(g, pb, &self.store, h)?;
        let log_probs = g.log_softmax_rows(logits)?;
        Ok((h, log_probs))
    }

    pub fn semantic_encode(
        &self,
        g: &mut Graph,
        pb: &mut dyn ParamBind,
        h_ae: NodeId,
        mode: &mut FwdMode,
    ) -> Result<NodeId> {
        let mut h = h_ae;
        for (l, layer) in self.se_layers.iter().enumerate() {
            h = layer.forward(g, pb, &self.store, h, &format!("se.layer{l}"), mode)?;
        }
        Ok(h)
    }

    /// Convolution + normalization + time-average pooling: one `[1, d]`
    /// utterance vector.
    pub fn seq_branch(
        &self,
        g: &mut Graph,
        pb: &mut dyn ParamBind,
        h_se: NodeId,
    ) -> Result<NodeId> {
        let conv = self.conv.forward(g, pb, &self.store, h_se)?;
        let normed = self.conv_ln.forward(g, pb, &self.store, conv)?;
        let pooled = g.mean_axis0(normed)?;
        g.reshape(pooled, vec![1, self.cfg.d_model])
    }

    /// Teacher vectors query the semantic states: output has one row per
    /// source token however many frames went in. The teacher matrix enters as
    /// a constant — nothing flows back into it.
    pub fn word_branch(
        &self,
        g: &mut Graph,
        pb: &mut dyn ParamBind,
        h_se: NodeId,
        teacher_per_token: &Tensor,
        mode: &mut FwdMode,
    ) -> Result<NodeId> {
        let (t_z, d) = teacher_per_token.dims2("word_branch")?;
        if t_z == 0 {
            return Err(LutError::EmptyInput("word_branch with no teacher tokens"));
        }
        if d != self.cfg.d_model {
            return Err(LutError::shape(
                "word_branch",
                format!("teacher width {d} vs model width {}", self.cfg.d_model),
            ));
        }
        let q = g.constant(teacher_per_token);
        self.word_attn
            .forward(g, pb, &self.store, q, h_se, None, "se.word", mode)
    }

    /// Elementwise mean squared error against a constant target.
    pub fn distance_loss(g: &mut Graph, v: NodeId, target: &Tensor) -> Result<NodeId> {
        if g.shape(v) != target.shape() {
            return Err(LutError::shape(
                "distance_loss",
                format!("{:?} vs target {:?}", g.shape(v), target.shape()),
            ));
        }
        let t = g.constant(target);
        let diff = g.sub(v, t)?;
        let sq = g.mul(diff, diff)?;
        g.mean_all(sq)
    }

    /// Everything the losses need for one utterance. `teacher` enables the
    /// configured branch; without it only the plain encoder path is built.
    pub fn encode_training(
        &self,
        g: &mut Graph,
        pb: &mut dyn ParamBind,
        x: &Tensor,
        teacher: Option<&TeacherEmbedding>,
        mode: &mut FwdMode,
    ) -> Result<EncoderOutputs> {
        let (h_ae, ctc_log_probs) = self.acoustic_encode(g, pb, x, mode)?;
        let h_se = self.semantic_encode(g, pb, h_ae, mode)?;
        let (mut v0, mut v1) = (None, None);
        if teacher.is_some() {
            match self.cfg.branch {
                BranchMode::Seq => v0 = Some(self.seq_branch(g, pb, h_se)?),
                BranchMode::Word => {
                    let emb = teacher.unwrap();
                    v1 = Some(self.word_branch(g, pb, h_se, &emb.per_token, mode)?);
                }
            }
        }
        Ok(EncoderOutputs { h_ae, ctc_log_probs, h_se, v0, v1 })
    }

    /// Next-token log-probabilities for every position of a teacher-forced
    /// prefix (which must start with `<sos>`): `[len(prefix), tgt_vocab]`.
    pub fn decode_forward(
        &self,
        g: &mut Graph,
        pb: &mut dyn ParamBind,
        h_se: NodeId,
        prefix: &[usize],
        mode: &mut FwdMode,
    ) -> Result<NodeId> {
        if prefix.first() != Some(&self.tgt_vocab.sos) {
            return Err(LutError::Config(format!(
                "decoder prefix must start with <sos> (id {}), got {:?}",
                self.tgt_vocab.sos,
                prefix.first()
            )));
        }
        if prefix.len() > self.cfg.max_len_st {
            return Err(LutError::Config(format!(
                "decoder prefix of {} tokens exceeds max_len_st {}",
                prefix.len(),
                self.cfg.max_len_st
            )));
        }
        if let Some(&bad) = prefix.iter().find(|&&t| t >= self.tgt_vocab.size()) {
            return Err(LutError::Config(format!("target id {bad} outside the vocabulary")));
        }
        let table = pb.bind(g, &self.store, self.dec_embed)?;
        let emb = g.embed(table, prefix)?;
        let pos = self.pos_rows(&self.pos_tgt, prefix.len(), "decoder prefix")?;
        let pos = g.constant(&pos);
        let mut h = g.add(emb, pos)?;
        let causal = causal_mask(g, prefix.len());
        for (l, layer) in self.dec_layers.iter().enumerate() {
            h = layer.forward(g, pb, &self.store, h, h_se, causal, &format!("td.layer{l}"), mode)?;
        }
        let logits = self.out_proj.forward(g, pb, &self.store, h)?;
        g.log_softmax_rows(logits)
    }

    /// Summed teacher-forced negative log-likelihood of `y ++ [<eos>]` given
    /// `<sos> ++ y`, as a scalar node, plus the token count.
    pub fn translation_nll_sum(
        &self,
        g: &mut Graph,
        pb: &mut dyn ParamBind,
        h_se: NodeId,
        y: &[usize],
        mode: &mut FwdMode,
    ) -> Result<(NodeId, usize)> {
        let v = self.tgt_vocab.size();
        let mut prefix = Vec::with_capacity(y.len() + 1);
        prefix.push(self.tgt_vocab.sos);
        prefix.extend_from_slice(y);
        let mut targets = y.to_vec();
        targets.push(self.tgt_vocab.eos);
        let log_probs = self.decode_forward(g, pb, h_se, &prefix, mode)?;
        let idx: Vec<i64> = targets
            .iter()
            .enumerate()
            .map(|(i, &tok)| (i * v + tok) as i64)
            .collect();
        let picked = g.gather(log_probs, idx, 0.0)?;
        let picked_sum = g.sum_all(picked);
        let nll = if self.cfg.label_smoothing > 0.0 {
            // blend the one-hot target with the uniform distribution
            let ls = self.cfg.label_smoothing;
            let all_sum = g.sum_all(log_probs);
            let sharp = g.scale(picked_sum, 1.0 - ls);
            let smooth = g.scale(all_sum, ls / v as f64);
            g.add(sharp, smooth)?
        } else {
            picked_sum
        };
        Ok((g.scale(nll, -1.0), targets.len()))
    }

    /// Weighted multi-task loss over a batch of utterances.
    ///
    /// Recognition loss is normalized by total frames, translation loss by
    /// total target tokens, distance loss averaged per utterance, so the
    /// weights keep their meaning across batch shapes. Auxiliary steps drop
    /// the translation term and renormalize the remaining weights to sum to
    /// one.
    pub fn total_loss(
        &self,
        g: &mut Graph,
        pb: &mut dyn ParamBind,
        items: &[LossItem],
        kind: StepKind,
        mode: &mut FwdMode,
    ) -> Result<(NodeId, LossParts)> {
        if items.is_empty() {
            return Err(LutError::EmptyInput("total_loss over an empty batch"));
        }
        let cfg = &self.cfg;
        let (alpha, beta, gamma) = match kind {
            StepKind::Full => (cfg.alpha, cfg.beta, cfg.gamma),
            StepKind::Auxiliary => {
                let s = cfg.alpha + cfg.beta;
                if s <= 0.0 {
                    return Err(LutError::Config(
                        "auxiliary step needs alpha + beta > 0 to renormalize".into(),
                    ));
                }
                (cfg.alpha / s, cfg.beta / s, 0.0)
            }
        };

        let mut ctc_sum: Option<NodeId> = None;
        let mut dist_sum: Option<NodeId> = None;
        let mut nll_sum: Option<NodeId> = None;
        let mut n_frames = 0usize;
        let mut n_tokens = 0usize;

        for item in items {
            let out = self.encode_training(g, pb, item.features, Some(item.teacher), mode)?;
            n_frames += item.features.shape()[0];

            let ctc = ctc::ctc_loss(g, out.ctc_log_probs, item.z)?;
            ctc_sum = Some(match ctc_sum {
                Some(acc) => g.add(acc, ctc)?,
                None => ctc,
            });

            let dist = match cfg.branch {
                BranchMode::Seq => {
                    let v0 = out.v0.expect("seq branch built");
                    let target = Tensor::new(
                        vec![1, cfg.d_model],
                        item.teacher.h_c.data().to_vec(),
                    )?;
                    Self::distance_loss(g, v0, &target)?
                }
                BranchMode::Word => {
                    let v1 = out.v1.expect("word branch built");
                    Self::distance_loss(g, v1, &item.teacher.per_token)?
                }
            };
            dist_sum = Some(match dist_sum {
                Some(acc) => g.add(acc, dist)?,
                None => dist,
            });

            if kind == StepKind::Full {
                let y = item.y.ok_or_else(|| {
                    LutError::Config("full step requires a translation for every utterance".into())
                })?;
                let (nll, n) = self.translation_nll_sum(g, pb, out.h_se, y, mode)?;
                n_tokens += n;
                nll_sum = Some(match nll_sum {
                    Some(acc) => g.add(acc, nll)?,
                    None => nll,
                });
            }
        }

        let l_ae = g.scale(ctc_sum.expect("nonempty batch"), 1.0 / n_frames as f64);
        let l_se = g.scale(dist_sum.expect("nonempty batch"), 1.0 / items.len() as f64);
        let weighted_ae = g.scale(l_ae, alpha);
        let weighted_se = g.scale(l_se, beta);
        let mut total = g.add(weighted_ae, weighted_se)?;
        let mut l_td_val = None;
        if let Some(nll) = nll_sum {
            let l_td = g.scale(nll, 1.0 / n_tokens as f64);
            l_td_val = Some(g.scalar_value(l_td));
            let weighted_td = g.scale(l_td, gamma);
            total = g.add(total, weighted_td)?;
        }
        let parts = LossParts {
            l_ae: g.scalar_value(l_ae),
            l_se: g.scalar_value(l_se),
            l_td: l_td_val,
            total: g.scalar_value(total),
            n_frames,
            n_tokens,
        };
        Ok((total, parts))
    }

    /// Inference-path encoding: constants out, no branches, no teacher.
    pub fn encode_utterance(&self, x: &Tensor) -> Result<Encoded> {
        let mut g = Graph::new();
        let mut pb = ValueBind::new();
        let mut mode = FwdMode::eval();
        let (h_ae, ctc_log_probs) = self.acoustic_encode(&mut g, &mut pb, x, &mut mode)?;
        let h_se = self.semantic_encode(&mut g, &mut pb, h_ae, &mut mode)?;
        Ok(Encoded {
            h_ae: g.to_tensor(h_ae),
            h_se: g.to_tensor(h_se),
            ctc_log_probs: g.to_tensor(ctc_log_probs),
        })
    }

    /// Log-probabilities of the next token after `prefix`, over the full
    /// target vocabulary, given precomputed semantic states.
    pub fn next_token_log_probs(&self, h_se: &Tensor, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut pb = ValueBind::new();
        let mut mode = FwdMode::eval();
        let mem = g.constant(h_se);
        let lp = self.decode_forward(&mut g, &mut pb, mem, prefix, &mut mode)?;
        let v = self.tgt_vocab.size();
        let data = g.data(lp);
        Ok(data[(prefix.len() - 1) * v..prefix.len() * v].to_vec())
    }

    /// Run the full forward in trace mode and collect every attention map.
    /// With a translation supplied the decoder (teacher-forced) is traced too.
    pub fn trace_utterance(&self, x: &Tensor, y: Option<&[usize]>) -> Result<Trace> {
        let mut trace = Trace::new();
        let mut g = Graph::new();
        let mut pb = ValueBind::new();
        let mut mode = FwdMode::traced(&mut trace);
        let (h_ae, _) = self.acoustic_encode(&mut g, &mut pb, x, &mut mode)?;
        let h_se = self.semantic_encode(&mut g, &mut pb, h_ae, &mut mode)?;
        if let Some(y) = y {
            let mut prefix = vec![self.tgt_vocab.sos];
            prefix.extend_from_slice(y);
            self.decode_forward(&mut g, &mut pb, h_se, &prefix, &mut mode)?;
        }
        Ok(trace)
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        let c = Container::from_store("model", self.cfg.arch_hash(), step, &self.store);
        checkpoint::save(path, &c)
    }

    pub fn load(
        path: &Path,
        cfg: &ModelConfig,
        src_vocab: &Vocab,
        tgt_vocab: &Vocab,
    ) -> Result<LutModel> {
        let c = checkpoint::load_expect(path, "model", cfg.arch_hash())?;
        let mut m = LutModel::init(cfg, src_vocab, tgt_vocab)?;
        c.load_into(&mut m.store)?;
        Ok(m)
    }

    pub fn load_container(&mut self, c: &Container) -> Result<()> {
        if c.config_hash != self.cfg.arch_hash() {
            return Err(LutError::CheckpointMismatch {
                expected: self.cfg.arch_hash(),
                found: c.config_hash,
            });
        }
        c.load_into(&mut self.store)
    }
}
