//! Shared fixtures for the criterion benches: a small corpus, a model of the
//! default shape, and a frozen table teacher, all built deterministically.

use lut_core::corpus::{self, CorpusSpec, SynthCorpus, TranslationRule};
use lut_core::model::{LutModel, ModelConfig};
use lut_core::teacher::{Teacher, TeacherConfig};
use lut_core::vocab::Vocab;

pub fn bench_spec() -> CorpusSpec {
    CorpusSpec {
        src_content: 10,
        tgt_content: 10,
        n_utts: 64,
        asr_utts: 0,
        min_len: 4,
        max_len: 8,
        frames_per_token: 3,
        noise: 0.05,
        n_speakers: 3,
        speaker_scale: 0.5,
        n_intents: 3,
        rule: TranslationRule::ReverseMap,
        feat_dim: 8,
        seed: 17,
    }
}

pub fn bench_corpus() -> SynthCorpus {
    corpus::generate(&bench_spec()).expect("bench corpus generates")
}

pub fn bench_model(src: &Vocab, tgt: &Vocab) -> LutModel {
    let cfg = ModelConfig {
        src_vocab_size: src.size(),
        tgt_vocab_size: tgt.size(),
        ..ModelConfig::default()
    };
    LutModel::init(&cfg, src, tgt).expect("bench model builds")
}

pub fn bench_teacher(src: &Vocab) -> Teacher {
    let mut t = Teacher::table_mode(&TeacherConfig::default(), src);
    t.freeze();
    t
}
