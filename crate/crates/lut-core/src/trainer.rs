//! The training loop: alternating auxiliary (recognition + distance) and
//! full (all three losses) updates, warmup-decay Adam, periodic dev
//! evaluation with early stopping, and checkpoint management with last-K
//! averaging. Every run is reproducible bit-for-bit from its seeds.

use crate::batch::{make_batches, Batch};
use crate::checkpoint::{self, Container};
use crate::corpus::Utterance;
use crate::ctc::ctc_greedy_decode;
use crate::error::{LutError, Result};
use crate::graph::{Graph, ValueBind};
use crate::metrics::corpus_wer;
use crate::model::{BranchMode, LossItem, LossParts, LutModel, StepKind};
use crate::nn::FwdMode;
use crate::optim::{clip_global_norm, Adam, AdamParams, Schedule};
use crate::teacher::{Teacher, TeacherEmbedding};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainPlan {
    /// Auxiliary updates per cycle.
    pub step1_ratio: usize,
    /// Full updates per cycle.
    pub step2_ratio: usize,
    pub max_steps: u64,
    pub ckpt_interval: u64,
    pub average_last_k: usize,
    pub eval_interval: u64,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    /// Batch packing budget in unpadded frames.
    pub frames_budget: usize,
    /// Global gradient-norm ceiling; zero or negative disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            step1_ratio: 1,
            step2_ratio: 1,
            max_steps: 4000,
            ckpt_interval: 200,
            average_last_k: 5,
            eval_interval: 200,
            patience: 5,
            frames_budget: 240,
            clip_norm: 5.0,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.step1_ratio == 0 && self.step2_ratio == 0 {
            return Err(LutError::Config("interleave ratio cannot be 0:0".into()));
        }
        if self.max_steps == 0 {
            return Err(LutError::Config("max_steps must be positive".into()));
        }
        if self.ckpt_interval == 0 || self.eval_interval == 0 {
            return Err(LutError::Config("intervals must be positive".into()));
        }
        if self.average_last_k == 0 {
            return Err(LutError::Config("average_last_k must be at least 1".into()));
        }
        if self.frames_budget == 0 {
            return Err(LutError::Config("frames_budget must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub l_ae: f64,
    pub l_se: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_td: Option<f64>,
    pub l_total: f64,
    pub branch_mode: String,
    pub step_kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DevReport {
    pub loss: f64,
    /// Teacher-forced next-token accuracy over all dev target positions.
    pub token_accuracy: f64,
    /// Greedy frame-classification word error rate against transcriptions.
    pub asr_wer: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub steps: u64,
    pub step1_updates: u64,
    pub step2_updates: u64,
    pub best_dev_loss: f64,
    pub stopped_early: bool,
    pub final_dev: DevReport,
    pub final_checkpoint: PathBuf,
    pub averaged_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

/// Round-robin batch source that repacks (and reshuffles) each epoch with a
/// fresh derived seed.
struct BatchStream {
    queue: Vec<Batch>,
    epoch: u64,
    base_seed: u64,
}

impl BatchStream {
    fn new(base_seed: u64) -> Self {
        BatchStream { queue: Vec::new(), epoch: 0, base_seed }
    }

    fn next(
        &mut self,
        utts: &[Utterance],
        budget: usize,
        src_pad: usize,
        tgt_pad: usize,
    ) -> Result<Batch> {
        if self.queue.is_empty() {
            let mut batches =
                make_batches(utts, budget, src_pad, tgt_pad, self.base_seed ^ self.epoch)?;
            self.epoch += 1;
            if batches.is_empty() {
                return Err(LutError::Config(
                    "no trainable utterances survive batching".into(),
                ));
            }
            batches.reverse(); // pop() consumes in shuffled order
            self.queue = batches;
        }
        Ok(self.queue.pop().expect("refilled above"))
    }
}

pub struct Trainer {
    pub model: LutModel,
    pub teacher: Teacher,
    pub schedule: Schedule,
    pub plan: TrainPlan,
    adam: Adam,
    embed_cache: HashMap<Vec<usize>, TeacherEmbedding>,
    rng: StdRng,
}

impl Trainer {
    pub fn new(
        model: LutModel,
        teacher: Teacher,
        schedule: Schedule,
        plan: TrainPlan,
    ) -> Result<Trainer> {
        plan.validate()?;
        schedule.validate()?;
        if !teacher.is_frozen() {
            return Err(LutError::Config(
                "the teacher must be frozen before it can supervise".into(),
            ));
        }
        if teacher.cfg.d_model != model.cfg.d_model {
            return Err(LutError::Config(format!(
                "teacher width {} must match model width {}",
                teacher.cfg.d_model, model.cfg.d_model
            )));
        }
        let adam = Adam::new(&model.store, AdamParams::default());
        let rng = StdRng::seed_from_u64(model.cfg.seed ^ 0x7261696e);
        Ok(Trainer { model, teacher, schedule, plan, adam, embed_cache: HashMap::new(), rng })
    }

    fn embedding(&mut self, z: &[usize]) -> Result<TeacherEmbedding> {
        if let Some(e) = self.embed_cache.get(z) {
            return Ok(e.clone());
        }
        let e = self.teacher.embed_sentence(z)?;
        self.embed_cache.insert(z.to_vec(), e.clone());
        Ok(e)
    }

    /// One optimizer update on one batch. Returns the loss breakdown.
    pub fn train_batch(&mut self, batch: &Batch, kind: StepKind, step: u64) -> Result<LossParts> {
        let mut embeddings = Vec::with_capacity(batch.len());
        let mut feats = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            embeddings.push(self.embedding(batch.z_of(i))?);
            feats.push(batch.features_of(i));
        }
        let items: Vec<LossItem> = (0..batch.len())
            .map(|i| LossItem {
                features: &feats[i],
                z: batch.z_of(i),
                y: batch.y_of(i),
                teacher: &embeddings[i],
            })
            .collect();
        let mut g = Graph::new();
        let mut pb = ValueBind::new();
        let dropout = self.model.cfg.dropout;
        let (total, parts) = if dropout > 0.0 {
            let mut mode = FwdMode::train(dropout, &mut self.rng);
            self.model.total_loss(&mut g, &mut pb, &items, kind, &mut mode)?
        } else {
            self.model.total_loss(&mut g, &mut pb, &items, kind, &mut FwdMode::eval())?
        };
        if !parts.total.is_finite() {
            return Err(LutError::NonFinite(format!("training loss at step {step}")));
        }
        g.backward(total)?;
        let mut grads = pb.grads(&g, &self.model.store);
        if self.plan.clip_norm > 0.0 {
            clip_global_norm(&mut grads, self.plan.clip_norm);
        }
        let lr = self.schedule.lr_at(step);
        self.adam.step(&mut self.model.store, &grads, lr)?;
        Ok(parts)
    }

    /// Dev-set quality: full loss, teacher-forced token accuracy, and greedy
    /// recognition error rate.
    pub fn evaluate_dev(&mut self, dev: &[Utterance]) -> Result<DevReport> {
        if dev.is_empty() {
            return Err(LutError::EmptyInput("dev evaluation on an empty set"));
        }
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        let mut correct = 0usize;
        let mut tokens = 0usize;
        let mut wer_pairs = Vec::with_capacity(dev.len());
        for u in dev {
            let y = u.y.as_ref().ok_or_else(|| {
                LutError::Config(format!("dev utterance {} lacks a translation", u.utt_id))
            })?;
            let emb = self.embedding(&u.z)?;
            let mut g = Graph::new();
            let mut pb = ValueBind::new();
            let items = [LossItem {
                features: &u.features,
                z: &u.z,
                y: Some(y),
                teacher: &emb,
            }];
            let (_, parts) =
                self.model
                    .total_loss(&mut g, &mut pb, &items, StepKind::Full, &mut FwdMode::eval())?;
            loss_sum += parts.total;
            loss_n += 1;

            let enc = self.model.encode_utterance(&u.features)?;
            let hyp = ctc_greedy_decode(&enc.ctc_log_probs)?;
            wer_pairs.push((u.z.clone(), hyp));

            let mut prefix = vec![self.model.tgt_vocab.sos];
            prefix.extend_from_slice(y);
            let mut g2 = Graph::new();
            let mut pb2 = ValueBind::new();
            let mem = g2.constant(&enc.h_se);
            let lp = self.model.decode_forward(
                &mut g2,
                &mut pb2,
                mem,
                &prefix,
                &mut FwdMode::eval(),
            )?;
            let v = self.model.tgt_vocab.size();
            let mut targets = y.clone();
            targets.push(self.model.tgt_vocab.eos);
            let data = g2.data(lp);
            for (i, &want) in targets.iter().enumerate() {
                let row = &data[i * v..(i + 1) * v];
                let mut best = 0usize;
                for c in 1..v {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                if best == want {
                    correct += 1;
                }
                tokens += 1;
            }
        }
        Ok(DevReport {
            loss: loss_sum / loss_n as f64,
            token_accuracy: correct as f64 / tokens as f64,
            asr_wer: corpus_wer(&wer_pairs)?,
        })
    }

    /// Run the interleaved loop. `asr_set = None` is the base setting where
    /// auxiliary batches reuse the triples' (x, z) pairs; `Some` supplies a
    /// separate transcription-only pool.
    pub fn train(
        &mut self,
        train_set: &[Utterance],
        asr_set: Option<&[Utterance]>,
        dev_set: &[Utterance],
        out_dir: &Path,
    ) -> Result<TrainReport> {
        if train_set.is_empty() {
            return Err(LutError::EmptyInput("training on an empty triple set"));
        }
        if let Some(a) = asr_set {
            if a.is_empty() {
                return Err(LutError::EmptyInput(
                    "expanded setting requested with an empty transcription pool",
                ));
            }
        }
        fs::create_dir_all(out_dir)?;
        let log_path = out_dir.join("train_log.jsonl");
        let dev_log_path = out_dir.join("dev_log.jsonl");
        let mut log = BufWriter::new(File::create(&log_path)?);
        let mut dev_log = BufWriter::new(File::create(&dev_log_path)?);

        let src_pad = self.model.src_vocab.pad;
        let tgt_pad = self.model.tgt_vocab.pad;
        let seed = self.model.cfg.seed;
        let mut aux_stream = BatchStream::new(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
        let mut full_stream = BatchStream::new(seed.wrapping_mul(0x9e37_79b9).wrapping_add(2));

        let cycle = self.plan.step1_ratio + self.plan.step2_ratio;
        let branch = match self.model.cfg.branch {
            BranchMode::Seq => "seq",
            BranchMode::Word => "word",
        };
        let mut step1_updates = 0u64;
        let mut step2_updates = 0u64;
        let mut best_dev = f64::INFINITY;
        let mut evals_since_best = 0usize;
        let mut stopped_early = false;
        let mut ckpts: Vec<PathBuf> = Vec::new();
        let mut steps_run = 0u64;

        for step in 1..=self.plan.max_steps {
            let phase = ((step - 1) % cycle as u64) as usize;
            let kind = if phase < self.plan.step1_ratio {
                StepKind::Auxiliary
            } else {
                StepKind::Full
            };
            let batch = match kind {
                StepKind::Auxiliary => {
                    let pool = asr_set.unwrap_or(train_set);
                    aux_stream.next(pool, self.plan.frames_budget, src_pad, tgt_pad)?
                }
                StepKind::Full => {
                    full_stream.next(train_set, self.plan.frames_budget, src_pad, tgt_pad)?
                }
            };
            let parts = self.train_batch(&batch, kind, step)?;
            match kind {
                StepKind::Auxiliary => step1_updates += 1,
                StepKind::Full => step2_updates += 1,
            }
            let rec = LogRecord {
                step,
                lr: self.schedule.lr_at(step),
                l_ae: parts.l_ae,
                l_se: parts.l_se,
                l_td: parts.l_td,
                l_total: parts.total,
                branch_mode: branch.to_string(),
                step_kind: match kind {
                    StepKind::Auxiliary => "auxiliary".to_string(),
                    StepKind::Full => "full".to_string(),
                },
            };
            serde_json::to_writer(&mut log, &rec)?;
            log.write_all(b"\n")?;
            steps_run = step;

            if step % self.plan.ckpt_interval == 0 {
                let p = out_dir.join(format!("ckpt-{step:06}.ckpt"));
                self.model.save(&p, step)?;
                ckpts.push(p);
            }
            if step % self.plan.eval_interval == 0 && !dev_set.is_empty() {
                let dev = self.evaluate_dev(dev_set)?;
                let line = serde_json::json!({
                    "step": step,
                    "loss": dev.loss,
                    "token_accuracy": dev.token_accuracy,
                    "asr_wer": dev.asr_wer,
                });
                serde_json::to_writer(&mut dev_log, &line)?;
                dev_log.write_all(b"\n")?;
                if dev.loss < best_dev {
                    best_dev = dev.loss;
                    evals_since_best = 0;
                } else {
                    evals_since_best += 1;
                    if evals_since_best >= self.plan.patience {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }

        let final_path = out_dir.join("final.ckpt");
        self.model.save(&final_path, steps_run)?;
        if ckpts.is_empty() {
            ckpts.push(final_path.clone());
        }
        let k = self.plan.average_last_k.min(ckpts.len());
        let tail = &ckpts[ckpts.len() - k..];
        let containers: Vec<Container> = tail
            .iter()
            .map(|p| checkpoint::load_expect(p, "model", self.model.cfg.arch_hash()))
            .collect::<Result<_>>()?;
        let averaged = checkpoint::average(&containers)?;
        let avg_path = out_dir.join("averaged.ckpt");
        checkpoint::save(&avg_path, &averaged)?;

        log.flush()?;
        dev_log.flush()?;
        let final_dev = if dev_set.is_empty() {
            DevReport { loss: f64::NAN, token_accuracy: f64::NAN, asr_wer: f64::NAN }
        } else {
            self.evaluate_dev(dev_set)?
        };
        Ok(TrainReport {
            steps: steps_run,
            step1_updates,
            step2_updates,
            best_dev_loss: best_dev,
            stopped_early,
            final_dev,
            final_checkpoint: final_path,
            averaged_checkpoint: avg_path,
            log_path,
        })
    }
}

/// Seed override honored by every entry point: set `LUT_SEED` to replace the
/// configured seed.
pub fn seed_from_env() -> Option<u64> {
    std::env::var("LUT_SEED").ok().and_then(|s| s.parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, CorpusSpec};
    use crate::model::ModelConfig;
    use crate::teacher::{Teacher, TeacherConfig};

    fn tiny_setup(seed: u64) -> (Trainer, Vec<Utterance>, Vec<Utterance>) {
        let spec = CorpusSpec {
            src_content: 5,
            tgt_content: 5,
            n_utts: 12,
            min_len: 3,
            max_len: 4,
            feat_dim: 4,
            n_speakers: 2,
            n_intents: 2,
            seed,
            ..CorpusSpec::default()
        };
        let corpus = generate(&spec).unwrap();
        let cfg = ModelConfig {
            n_ae: 1,
            n_se: 1,
            n_td: 1,
            d_model: 16,
            n_heads: 2,
            d_ff: 24,
            feat_dim: 4,
            src_vocab_size: corpus.src_vocab.size(),
            tgt_vocab_size: corpus.tgt_vocab.size(),
            seed,
            ..ModelConfig::default()
        };
        let model = LutModel::init(&cfg, &corpus.src_vocab, &corpus.tgt_vocab).unwrap();
        let tcfg = TeacherConfig { d_model: 16, seed, ..TeacherConfig::default() };
        let teacher = Teacher::table_mode(&tcfg, &corpus.src_vocab);
        let plan = TrainPlan {
            max_steps: 10,
            ckpt_interval: 1000,
            eval_interval: 1000,
            frames_budget: 48,
            ..TrainPlan::default()
        };
        let trainer = Trainer::new(model, teacher, Schedule::default(), plan).unwrap();
        let dev: Vec<Utterance> = corpus.triples[10..].to_vec();
        let train: Vec<Utterance> = corpus.triples[..10].to_vec();
        (trainer, train, dev)
    }

    #[test]
    fn one_to_one_ratio_splits_updates_evenly() {
        let (mut t, train, dev) = tiny_setup(1);
        let dir = tempfile::tempdir().unwrap();
        let report = t.train(&train, None, &dev, dir.path()).unwrap();
        assert_eq!(report.steps, 10);
        assert_eq!(report.step1_updates, 5);
        assert_eq!(report.step2_updates, 5);
    }

    #[test]
    fn lopsided_ratios_run_only_one_kind() {
        let (mut t, train, dev) = tiny_setup(2);
        t.plan.step1_ratio = 0;
        t.plan.step2_ratio = 1;
        let dir = tempfile::tempdir().unwrap();
        let r = t.train(&train, None, &dev, dir.path()).unwrap();
        assert_eq!((r.step1_updates, r.step2_updates), (0, 10));

        let (mut t, train, dev) = tiny_setup(2);
        t.plan.step1_ratio = 1;
        t.plan.step2_ratio = 0;
        let dir = tempfile::tempdir().unwrap();
        let r = t.train(&train, None, &dev, dir.path()).unwrap();
        assert_eq!((r.step1_updates, r.step2_updates), (10, 0));
    }

    #[test]
    fn empty_sets_are_rejected() {
        let (mut t, train, dev) = tiny_setup(3);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            t.train(&[], None, &dev, dir.path()),
            Err(LutError::EmptyInput(_))
        ));
        assert!(matches!(
            t.train(&train, Some(&[]), &dev, dir.path()),
            Err(LutError::EmptyInput(_))
        ));
    }

    #[test]
    fn fixed_seeds_make_training_logs_byte_identical() {
        let mut logs = Vec::new();
        for _ in 0..2 {
            let (mut t, train, dev) = tiny_setup(4);
            let dir = tempfile::tempdir().unwrap();
            t.train(&train, None, &dev, dir.path()).unwrap();
            logs.push(fs::read(dir.path().join("train_log.jsonl")).unwrap());
        }
        assert!(!logs[0].is_empty());
        assert_eq!(logs[0], logs[1]);
    }

    #[test]
    fn auxiliary_only_training_leaves_the_decoder_untouched() {
        let (mut t, train, dev) = tiny_setup(5);
        t.plan.step1_ratio = 1;
        t.plan.step2_ratio = 0;
        let before: Vec<(String, Vec<f64>)> = t
            .model
            .store
            .iter()
            .map(|(_, name, ten)| (name.to_string(), ten.data().to_vec()))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        t.train(&train, None, &dev, dir.path()).unwrap();
        let mut decoder_params = 0;
        let mut encoder_moved = false;
        for ((name, old), (_, _, new)) in before.iter().zip(t.model.store.iter()) {
            let same = old.iter().zip(new.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if name.starts_with("td.") {
                assert!(same, "{name} must stay frozen during auxiliary-only training");
                decoder_params += 1;
            } else if !same {
                encoder_moved = true;
            }
        }
        assert!(decoder_params > 0);
        assert!(encoder_moved, "encoder parameters should have been updated");
    }

    #[test]
    fn expanded_setting_draws_auxiliary_batches_from_the_asr_pool() {
        let spec = CorpusSpec {
            src_content: 5,
            tgt_content: 5,
            n_utts: 8,
            asr_utts: 8,
            min_len: 3,
            max_len: 4,
            feat_dim: 4,
            n_speakers: 2,
            n_intents: 2,
            seed: 6,
            ..CorpusSpec::default()
        };
        let corpus = generate(&spec).unwrap();
        let cfg = ModelConfig {
            n_ae: 1,
            n_se: 1,
            n_td: 1,
            d_model: 16,
            n_heads: 2,
            d_ff: 24,
            feat_dim: 4,
            src_vocab_size: corpus.src_vocab.size(),
            tgt_vocab_size: corpus.tgt_vocab.size(),
            seed: 6,
            ..ModelConfig::default()
        };
        let model = LutModel::init(&cfg, &corpus.src_vocab, &corpus.tgt_vocab).unwrap();
        let tcfg = TeacherConfig { d_model: 16, seed: 6, ..TeacherConfig::default() };
        let teacher = Teacher::table_mode(&tcfg, &corpus.src_vocab);
        let plan = TrainPlan {
            max_steps: 4,
            ckpt_interval: 1000,
            eval_interval: 1000,
            frames_budget: 48,
            ..TrainPlan::default()
        };
        let mut t = Trainer::new(model, teacher, Schedule::default(), plan).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let r = t
            .train(&corpus.triples, Some(&corpus.asr_pairs), &corpus.triples[..2], dir.path())
            .unwrap();
        assert_eq!(r.step1_updates, 2);
        assert_eq!(r.step2_updates, 2);
    }

    #[test]
    fn checkpoints_are_written_and_averaged() {
        let (mut t, train, dev) = tiny_setup(7);
        t.plan.ckpt_interval = 4;
        t.plan.average_last_k = 2;
        let dir = tempfile::tempdir().unwrap();
        let r = t.train(&train, None, &dev, dir.path()).unwrap();
        assert!(dir.path().join("ckpt-000004.ckpt").exists());
        assert!(dir.path().join("ckpt-000008.ckpt").exists());
        assert!(r.final_checkpoint.exists());
        assert!(r.averaged_checkpoint.exists());
        // the average is loadable and equals the elementwise mean of the tail
        let avg = LutModel::load(
            &r.averaged_checkpoint,
            &t.model.cfg,
            &t.model.src_vocab,
            &t.model.tgt_vocab,
        )
        .unwrap();
        let a = checkpoint::load_expect(
            &dir.path().join("ckpt-000004.ckpt"),
            "model",
            t.model.cfg.arch_hash(),
        )
        .unwrap();
        let b = checkpoint::load_expect(
            &dir.path().join("ckpt-000008.ckpt"),
            "model",
            t.model.cfg.arch_hash(),
        )
        .unwrap();
        for (id, name, ten) in avg.store.iter() {
            let _ = id;
            let ta = a.get(name).unwrap();
            let tb = b.get(name).unwrap();
            for (j, v) in ten.data().iter().enumerate() {
                let want = (ta.data()[j] + tb.data()[j]) / 2.0;
                assert!((v - want).abs() < 1e-15, "{name}[{j}]");
            }
        }
    }

    #[test]
    fn training_loss_is_finite_and_logged_every_step() {
        let (mut t, train, dev) = tiny_setup(8);
        let dir = tempfile::tempdir().unwrap();
        t.train(&train, None, &dev, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
        let mut steps = Vec::new();
        for line in text.lines() {
            let rec: LogRecord = serde_json::from_str(line).unwrap();
            assert!(rec.l_total.is_finite());
            assert!(rec.lr > 0.0);
            match rec.step_kind.as_str() {
                "auxiliary" => assert!(rec.l_td.is_none()),
                "full" => assert!(rec.l_td.unwrap().is_finite()),
                other => panic!("unknown step kind {other}"),
            }
            steps.push(rec.step);
        }
        assert_eq!(steps, (1..=10).collect::<Vec<u64>>());
    }

    #[test]
    fn teacher_width_mismatch_is_rejected_up_front() {
        let (t, _, _) = tiny_setup(9);
        let Trainer { model, .. } = t;
        let tcfg = TeacherConfig { d_model: 8, ..TeacherConfig::default() };
        let teacher = Teacher::table_mode(&tcfg, &model.src_vocab);
        assert!(matches!(
            Trainer::new(model, teacher, Schedule::default(), TrainPlan::default()),
            Err(LutError::Config(_))
        ));
    }
}
