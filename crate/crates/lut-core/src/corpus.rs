//! Synthetic speech-translation corpus. Each sentence is a token chain: a
//! random start token followed by successors under a fixed cyclic rule, so a
//! masked token is recoverable from either neighbour — which is what makes the
//! frozen text encoder trainable to high accuracy on held-out data. Each
//! source token is rendered as `k` consecutive frames of a token prototype
//! vector plus per-speaker offset plus white noise; the translation is a
//! deterministic remap of the source tokens, optionally reversed.

use crate::error::{LutError, Result};
use crate::tensor::Tensor;
use crate::vocab::Vocab;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TranslationRule {
    CopyMap,
    ReverseMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Content token counts (reserved symbols are added on top).
    pub src_content: usize,
    pub tgt_content: usize,
    pub n_utts: usize,
    /// Extra transcription-only utterances for the expanded setting.
    pub asr_utts: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Frames rendered per source token.
    pub frames_per_token: usize,
    /// White-noise standard deviation added to every frame coordinate.
    pub noise: f64,
    pub n_speakers: usize,
    /// Standard deviation of the per-speaker constant offset (speaker 0 is
    /// always the zero offset, the reference voice).
    pub speaker_scale: f64,
    pub n_intents: usize,
    pub rule: TranslationRule,
    /// Raw feature width per frame.
    pub feat_dim: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            src_content: 12,
            tgt_content: 12,
            n_utts: 2000,
            asr_utts: 0,
            min_len: 3,
            max_len: 8,
            frames_per_token: 3,
            noise: 0.1,
            n_speakers: 4,
            speaker_scale: 0.5,
            n_intents: 3,
            rule: TranslationRule::ReverseMap,
            feat_dim: 8,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(LutError::Config(msg.to_string()))
            }
        };
        check(self.src_content >= 1, "src_content must be >= 1")?;
        check(self.tgt_content == self.src_content, "token remap rules need equal content sizes")?;
        check(self.n_utts >= 1, "n_utts must be >= 1")?;
        check(self.min_len >= 1 && self.max_len >= self.min_len, "need 1 <= min_len <= max_len")?;
        check(self.frames_per_token >= 1, "frames_per_token must be >= 1")?;
        check(self.n_speakers >= 1, "n_speakers must be >= 1")?;
        check(self.n_intents >= 1, "n_intents must be >= 1")?;
        check(self.feat_dim >= 1, "feat_dim must be >= 1")?;
        check(self.noise >= 0.0 && self.speaker_scale >= 0.0, "scales must be >= 0")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    /// `[t_x, feat_dim]` frame matrix.
    pub features: Tensor,
    /// Source token ids (content range of the source vocab).
    pub z: Vec<usize>,
    /// Target token ids, absent for transcription-only utterances.
    pub y: Option<Vec<usize>>,
    pub speaker_id: usize,
    pub intent_id: usize,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_triple(&self) -> bool {
        self.y.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub spec: CorpusSpec,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub triples: Vec<Utterance>,
    pub asr_pairs: Vec<Utterance>,
    /// `[src_content, feat_dim]`, row per content token.
    pub prototypes: Tensor,
    /// `[n_speakers, feat_dim]`, row 0 all zeros.
    pub speaker_offsets: Tensor,
}

pub fn generate(spec: &CorpusSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let f = spec.feat_dim;

    let proto_data: Vec<f64> = (0..spec.src_content * f)
        .map(|_| normal.sample(&mut rng))
        .collect();
    let prototypes = Tensor::new(vec![spec.src_content, f], proto_data)?;

    let mut offset_data = vec![0.0; spec.n_speakers * f];
    for v in offset_data.iter_mut().skip(f) {
        *v = normal.sample(&mut rng) * spec.speaker_scale;
    }
    let speaker_offsets = Tensor::new(vec![spec.n_speakers, f], offset_data)?;

    let src_vocab = Vocab::source(spec.src_content);
    let tgt_vocab = Vocab::target(spec.tgt_content);

    let gen_one = |id: String, with_y: bool, rng: &mut StdRng| -> Result<Utterance> {
        let start = rng.gen_range(0..spec.src_content);
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let speaker_id = rng.gen_range(0..spec.n_speakers);
        let intent_id = start % spec.n_intents;
        // successor chain: each token is the cyclic follower of the previous
        let content: Vec<usize> = (0..len).map(|i| (start + i) % spec.src_content).collect();
        let z: Vec<usize> = content.iter().map(|&c| src_vocab.content_id(c)).collect();
        let y = with_y.then(|| {
            let mut mapped: Vec<usize> =
                content.iter().map(|&c| tgt_vocab.content_id(c)).collect();
            if spec.rule == TranslationRule::ReverseMap {
                mapped.reverse();
            }
            mapped
        });
        let t_x = len * spec.frames_per_token;
        let mut data = Vec::with_capacity(t_x * f);
        for &c in &content {
            for _ in 0..spec.frames_per_token {
                for j in 0..f {
                    let base = prototypes.data()[c * f + j]
                        + speaker_offsets.data()[speaker_id * f + j];
                    data.push(base + normal.sample(rng) * spec.noise);
                }
            }
        }
        Ok(Utterance {
            utt_id: id,
            features: Tensor::new(vec![t_x, f], data)?,
            z,
            y,
            speaker_id,
            intent_id,
        })
    };

    let mut triples = Vec::with_capacity(spec.n_utts);
    for i in 0..spec.n_utts {
        triples.push(gen_one(format!("utt{i:05}"), true, &mut rng)?);
    }
    let mut asr_pairs = Vec::with_capacity(spec.asr_utts);
    for i in 0..spec.asr_utts {
        asr_pairs.push(gen_one(format!("asr{i:05}"), false, &mut rng)?);
    }

    Ok(SynthCorpus {
        spec: spec.clone(),
        src_vocab,
        tgt_vocab,
        triples,
        asr_pairs,
        prototypes,
        speaker_offsets,
    })
}

/// One manifest line. Features are either inline rows or a path (relative to
/// the manifest) to a raw file: u32 rows, u32 cols, then row-major f64, all
/// little-endian.
#[derive(Serialize, Deserialize)]
struct ManifestRecord {
    utt_id: String,
    features: FeatureRef,
    z: Vec<String>,
    y: Option<Vec<String>>,
    speaker_id: usize,
    intent_id: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FeatureRef {
    External(String),
    Inline(Vec<Vec<f64>>),
}

pub fn write_feature_file(path: &Path, t: &Tensor) -> Result<()> {
    let (rows, cols) = t.dims2("write_feature_file")?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rows = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let cols = u32::from_le_bytes(b4) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    let mut b8 = [0u8; 8];
    for _ in 0..rows * cols {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Tensor::new(vec![rows, cols], data)
}

/// Write utterances as line-delimited records. With `inline` false, features
/// go to `<manifest-stem>-feats/<utt_id>.bin` next to the manifest.
pub fn write_manifest(
    path: &Path,
    utts: &[Utterance],
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    inline: bool,
) -> Result<()> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
    let feat_dir_name = format!("{stem}-feats");
    let feat_dir = path.parent().unwrap_or_else(|| Path::new(".")).join(&feat_dir_name);
    if !inline {
        fs::create_dir_all(&feat_dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for u in utts {
        let features = if inline {
            let rows = (0..u.n_frames()).map(|t| u.features.row(t).to_vec()).collect();
            FeatureRef::Inline(rows)
        } else {
            let rel = format!("{feat_dir_name}/{}.bin", u.utt_id);
            write_feature_file(&feat_dir.join(format!("{}.bin", u.utt_id)), &u.features)?;
            FeatureRef::External(rel)
        };
        let rec = ManifestRecord {
            utt_id: u.utt_id.clone(),
            features,
            z: u.z.iter().map(|&i| src_vocab.token(i).to_string()).collect(),
            y: u.y.as_ref().map(|y| y.iter().map(|&i| tgt_vocab.token(i).to_string()).collect()),
            speaker_id: u.speaker_id,
            intent_id: u.intent_id,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path, src_vocab: &Vocab, tgt_vocab: &Vocab) -> Result<Vec<Utterance>> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let r = BufReader::new(fs::File::open(path)?);
    let mut utts = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| LutError::Corrupt {
            kind: "manifest",
            detail: format!("{path:?} line {}: {e}", lineno + 1),
        })?;
        let features = match rec.features {
            FeatureRef::Inline(rows) => {
                let rows: Vec<Vec<f64>> = rows;
                Tensor::from_rows(&rows)?
            }
            FeatureRef::External(rel) => read_feature_file(&dir.join(rel))?,
        };
        if features.shape()[0] == 0 {
            return Err(LutError::Corrupt {
                kind: "manifest",
                detail: format!("{} has no frames", rec.utt_id),
            });
        }
        let z = check_tokens(&rec.z, src_vocab, &rec.utt_id, "z")?;
        let y = match rec.y {
            Some(toks) => Some(check_tokens(&toks, tgt_vocab, &rec.utt_id, "y")?),
            None => None,
        };
        utts.push(Utterance {
            utt_id: rec.utt_id,
            features,
            z,
            y,
            speaker_id: rec.speaker_id,
            intent_id: rec.intent_id,
        });
    }
    Ok(utts)
}

fn check_tokens(tokens: &[String], vocab: &Vocab, utt: &str, field: &str) -> Result<Vec<usize>> {
    let ids = vocab.encode(tokens);
    for &id in &ids {
        if Some(id) == vocab.blank || id == vocab.pad || id == vocab.sos || id == vocab.eos {
            return Err(LutError::Corrupt {
                kind: "manifest",
                detail: format!("{utt}: reserved token {:?} in {field}", vocab.token(id)),
            });
        }
    }
    Ok(ids)
}
