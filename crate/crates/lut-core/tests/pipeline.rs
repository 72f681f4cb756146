//! Trained-behavior checks that cross module boundaries: the text teacher
//! reaches its accuracy bar, the full model can memorize, extra
//! transcription-only data helps recognition, and every standard layer
//! allocation trains.

use lut_core::corpus::{self, CorpusSpec, TranslationRule};
use lut_core::decode::greedy_translate;
use lut_core::model::{LutModel, ModelConfig};
use lut_core::optim::Schedule;
use lut_core::teacher::{train_teacher, Teacher, TeacherConfig};
use lut_core::trainer::{TrainPlan, Trainer};
use lut_core::vocab::Vocab;

fn spec(n_utts: usize, asr_utts: usize, seed: u64) -> CorpusSpec {
    CorpusSpec {
        src_content: 8,
        tgt_content: 8,
        n_utts,
        asr_utts,
        min_len: 3,
        max_len: 6,
        frames_per_token: 3,
        noise: 0.1,
        n_speakers: 3,
        speaker_scale: 0.5,
        n_intents: 3,
        rule: TranslationRule::ReverseMap,
        feat_dim: 8,
        seed,
    }
}

fn small_model(src: &Vocab, tgt: &Vocab, seed: u64) -> LutModel {
    let cfg = ModelConfig {
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        src_vocab_size: src.size(),
        tgt_vocab_size: tgt.size(),
        seed,
        ..ModelConfig::default()
    };
    LutModel::init(&cfg, src, tgt).unwrap()
}

fn table_teacher(src: &Vocab, d_model: usize) -> Teacher {
    let mut t = Teacher::table_mode(&TeacherConfig { d_model, ..TeacherConfig::default() }, src);
    t.freeze();
    t
}

#[test]
fn trained_teacher_predicts_masked_tokens() {
    let c = corpus::generate(&spec(300, 0, 5)).unwrap();
    let sentences: Vec<Vec<usize>> = c.triples.iter().map(|u| u.z.clone()).collect();
    let cfg = TeacherConfig { steps: 3000, ..TeacherConfig::default() };
    let report = train_teacher(&sentences, &c.src_vocab, &cfg).unwrap();
    assert!(report.teacher.is_frozen());
    assert!(
        report.held_out_accuracy >= 0.95,
        "masked held-out accuracy {:.4}",
        report.held_out_accuracy
    );
}

#[test]
fn model_memorizes_a_single_pair() {
    let c = corpus::generate(&spec(4, 0, 11)).unwrap();
    let one = vec![c.triples[0].clone()];
    let model = small_model(&c.src_vocab, &c.tgt_vocab, 3);
    let teacher = table_teacher(&c.src_vocab, 16);
    let plan = TrainPlan {
        max_steps: 400,
        ckpt_interval: 400,
        eval_interval: 400,
        frames_budget: 32,
        ..TrainPlan::default()
    };
    let sched = Schedule { peak_lr: 1e-3, warmup_steps: 50, ..Schedule::default() };
    let mut trainer = Trainer::new(model, teacher, sched, plan).unwrap();
    let dir = tempfile::tempdir().unwrap();
    trainer.train(&one, None, &one, dir.path()).unwrap();

    let enc = trainer.model.encode_utterance(&one[0].features).unwrap();
    let hyp = greedy_translate(&trainer.model, &enc.h_se, 16).unwrap();
    assert_eq!(hyp, *one[0].y.as_ref().unwrap(), "memorization failed");
}

#[test]
fn extra_transcription_pairs_help_recognition() {
    // Few translation triples, many transcription-only pairs. With the pairs
    // in the auxiliary pool the recognizer sees far more source variety, so
    // dev WER should not get worse, and typically improves.
    let mut base_wer = Vec::new();
    let mut expanded_wer = Vec::new();
    for seed in 0..3u64 {
        let c = corpus::generate(&spec(80, 400, 100 + seed)).unwrap();
        let (train, dev) = c.triples.split_at(60);
        for asr in [None, Some(c.asr_pairs.as_slice())] {
            let model = small_model(&c.src_vocab, &c.tgt_vocab, seed);
            let teacher = table_teacher(&c.src_vocab, 16);
            let plan = TrainPlan {
                max_steps: 500,
                ckpt_interval: 500,
                eval_interval: 500,
                patience: 10,
                ..TrainPlan::default()
            };
            let sched = Schedule { peak_lr: 8e-4, warmup_steps: 100, ..Schedule::default() };
            let mut trainer = Trainer::new(model, teacher, sched, plan).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let report = trainer.train(train, asr, dev, dir.path()).unwrap();
            match asr {
                None => base_wer.push(report.final_dev.asr_wer),
                Some(_) => expanded_wer.push(report.final_dev.asr_wer),
            }
        }
    }
    base_wer.sort_by(|a, b| a.partial_cmp(b).unwrap());
    expanded_wer.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (base_med, exp_med) = (base_wer[1], expanded_wer[1]);
    assert!(
        exp_med <= base_med + 1e-9,
        "expanded median WER {exp_med:.4} vs base {base_med:.4} (base {base_wer:?}, expanded {expanded_wer:?})"
    );
}

#[test]
fn every_layer_allocation_trains() {
    let c = corpus::generate(&spec(24, 0, 21)).unwrap();
    let (train, dev) = c.triples.split_at(16);
    for (n_ae, n_se) in [(2, 6), (3, 5), (4, 4), (5, 3), (6, 2)] {
        let cfg = ModelConfig {
            n_ae,
            n_se,
            n_td: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            src_vocab_size: c.src_vocab.size(),
            tgt_vocab_size: c.tgt_vocab.size(),
            seed: 7,
            ..ModelConfig::default()
        };
        let model = LutModel::init(&cfg, &c.src_vocab, &c.tgt_vocab).unwrap();
        let teacher = table_teacher(&c.src_vocab, 16);
        let plan = TrainPlan {
            max_steps: 2,
            ckpt_interval: 2,
            eval_interval: 2,
            ..TrainPlan::default()
        };
        let mut trainer = Trainer::new(model, teacher, Schedule::default(), plan).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report = trainer.train(train, None, dev, dir.path()).unwrap();
        assert_eq!(report.steps, 2, "{n_ae}/{n_se}");
        assert!(report.final_dev.loss.is_finite(), "{n_ae}/{n_se}");
    }
}
