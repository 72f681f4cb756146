//! Flat `key = value` run configuration: one file describes the model, the
//! training plan, the schedule, the teacher, and the data paths. Unknown
//! keys are errors, later assignments win, and command-line overrides are
//! just assignments applied after the file.

use crate::corpus::{CorpusSpec, TranslationRule};
use crate::error::{LutError, Result};
use crate::model::{BranchMode, ModelConfig};
use crate::optim::Schedule;
use crate::teacher::TeacherConfig;
use crate::trainer::TrainPlan;
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Auxiliary batches reuse the triple set's (x, z) pairs.
    Base,
    /// Auxiliary batches come from a separate transcription-only manifest.
    Expanded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherMode {
    /// Deterministic per-token lookup table (no training needed).
    Table,
    /// Masked-token-prediction encoder loaded from a checkpoint.
    Trained,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DataPaths {
    pub train_manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub asr_manifest: Option<PathBuf>,
    pub src_vocab: Option<PathBuf>,
    pub tgt_vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub plan: TrainPlan,
    pub schedule: Schedule,
    pub teacher: TeacherConfig,
    pub teacher_mode: TeacherMode,
    pub teacher_checkpoint: Option<PathBuf>,
    pub data: DataPaths,
    pub mode: RunMode,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            plan: TrainPlan::default(),
            schedule: Schedule::default(),
            teacher: TeacherConfig::default(),
            teacher_mode: TeacherMode::Trained,
            teacher_checkpoint: None,
            data: DataPaths::default(),
            mode: RunMode::Base,
            seed: 0,
        }
    }
}

/// Split a config file into ordered (key, value) pairs. `#` starts a
/// comment; blank lines are skipped; the first `=` separates key from value.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(LutError::Config(format!(
                "line {}: expected `key = value`, got {raw:?}",
                lineno + 1
            )));
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        if key.is_empty() {
            return Err(LutError::Config(format!("line {}: empty key", lineno + 1)));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| LutError::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::default();
        for (k, v) in parse_kv(&text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Assign one key. Later assignments overwrite earlier ones, which is
    /// also how flag overrides work: apply them after the file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "mode" => {
                self.mode = match value {
                    "base" => RunMode::Base,
                    "expanded" => RunMode::Expanded,
                    _ => {
                        return Err(LutError::Config(format!(
                            "mode: expected base or expanded, got {value:?}"
                        )))
                    }
                }
            }
            "model.n_ae" => self.model.n_ae = parse_num(key, value)?,
            "model.n_se" => self.model.n_se = parse_num(key, value)?,
            "model.n_td" => self.model.n_td = parse_num(key, value)?,
            "model.d_model" => self.model.d_model = parse_num(key, value)?,
            "model.n_heads" => self.model.n_heads = parse_num(key, value)?,
            "model.d_ff" => self.model.d_ff = parse_num(key, value)?,
            "model.feat_dim" => self.model.feat_dim = parse_num(key, value)?,
            "model.alpha" => self.model.alpha = parse_num(key, value)?,
            "model.beta" => self.model.beta = parse_num(key, value)?,
            "model.gamma" => self.model.gamma = parse_num(key, value)?,
            "model.branch" => {
                self.model.branch = match value {
                    "seq" => BranchMode::Seq,
                    "word" => BranchMode::Word,
                    _ => {
                        return Err(LutError::Config(format!(
                            "model.branch: expected seq or word, got {value:?}"
                        )))
                    }
                }
            }
            "model.dropout" => self.model.dropout = parse_num(key, value)?,
            "model.label_smoothing" => self.model.label_smoothing = parse_num(key, value)?,
            "model.max_len_asr" => self.model.max_len_asr = parse_num(key, value)?,
            "model.max_len_st" => self.model.max_len_st = parse_num(key, value)?,
            "train.step1_ratio" => self.plan.step1_ratio = parse_num(key, value)?,
            "train.step2_ratio" => self.plan.step2_ratio = parse_num(key, value)?,
            "train.max_steps" => self.plan.max_steps = parse_num(key, value)?,
            "train.ckpt_interval" => self.plan.ckpt_interval = parse_num(key, value)?,
            "train.average_last_k" => self.plan.average_last_k = parse_num(key, value)?,
            "train.eval_interval" => self.plan.eval_interval = parse_num(key, value)?,
            "train.patience" => self.plan.patience = parse_num(key, value)?,
            "train.frames_budget" => self.plan.frames_budget = parse_num(key, value)?,
            "train.clip_norm" => self.plan.clip_norm = parse_num(key, value)?,
            "sched.peak_lr" => self.schedule.peak_lr = parse_num(key, value)?,
            "sched.warmup_steps" => self.schedule.warmup_steps = parse_num(key, value)?,
            "sched.decay_rate" => self.schedule.decay_rate = parse_num(key, value)?,
            "sched.decay_steps" => self.schedule.decay_steps = parse_num(key, value)?,
            "teacher.mode" => {
                self.teacher_mode = match value {
                    "table" => TeacherMode::Table,
                    "trained" => TeacherMode::Trained,
                    _ => {
                        return Err(LutError::Config(format!(
                            "teacher.mode: expected table or trained, got {value:?}"
                        )))
                    }
                }
            }
            "teacher.checkpoint" => self.teacher_checkpoint = Some(PathBuf::from(value)),
            "teacher.n_layers" => self.teacher.n_layers = parse_num(key, value)?,
            "teacher.n_heads" => self.teacher.n_heads = parse_num(key, value)?,
            "teacher.d_ff" => self.teacher.d_ff = parse_num(key, value)?,
            "teacher.mask_rate" => self.teacher.mask_rate = parse_num(key, value)?,
            "teacher.steps" => self.teacher.steps = parse_num(key, value)?,
            "teacher.batch_size" => self.teacher.batch_size = parse_num(key, value)?,
            "teacher.lr" => self.teacher.lr = parse_num(key, value)?,
            "teacher.sup_layer" => self.teacher.sup_layer = Some(parse_num(key, value)?),
            "data.train_manifest" => self.data.train_manifest = Some(PathBuf::from(value)),
            "data.dev_manifest" => self.data.dev_manifest = Some(PathBuf::from(value)),
            "data.test_manifest" => self.data.test_manifest = Some(PathBuf::from(value)),
            "data.asr_manifest" => self.data.asr_manifest = Some(PathBuf::from(value)),
            "data.src_vocab" => self.data.src_vocab = Some(PathBuf::from(value)),
            "data.tgt_vocab" => self.data.tgt_vocab = Some(PathBuf::from(value)),
            _ => return Err(LutError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Spread the root seed into every component; artifacts record only the
    /// root. Called after all assignments, before anything runs.
    pub fn apply_seed(&mut self) {
        self.model.seed = self.seed;
        // distinct stream so teacher and model never share init noise
        self.teacher.seed = self.seed ^ 0x5eed_7ea0;
    }

    /// Sanity of every sub-config plus existence of each referenced path.
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.schedule.validate()?;
        // vocab sizes are unknown until the vocab files load; check the rest
        if self.model.alpha < 0.0 || self.model.beta < 0.0 || self.model.gamma < 0.0 {
            return Err(LutError::Config("loss weights must be nonnegative".into()));
        }
        let paths: [(&str, Option<&PathBuf>); 7] = [
            ("data.train_manifest", self.data.train_manifest.as_ref()),
            ("data.dev_manifest", self.data.dev_manifest.as_ref()),
            ("data.test_manifest", self.data.test_manifest.as_ref()),
            ("data.asr_manifest", self.data.asr_manifest.as_ref()),
            ("data.src_vocab", self.data.src_vocab.as_ref()),
            ("data.tgt_vocab", self.data.tgt_vocab.as_ref()),
            ("teacher.checkpoint", self.teacher_checkpoint.as_ref()),
        ];
        for (key, p) in paths {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(LutError::Config(format!(
                        "{key}: path {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        if self.mode == RunMode::Expanded && self.data.asr_manifest.is_none() {
            return Err(LutError::Config(
                "mode = expanded requires data.asr_manifest".into(),
            ));
        }
        Ok(())
    }
}

/// Corpus description files share the same syntax with their own key set.
pub fn corpus_spec_from_file(path: &Path) -> Result<CorpusSpec> {
    let text = std::fs::read_to_string(path)?;
    let mut spec = CorpusSpec::default();
    for (key, value) in parse_kv(&text)? {
        match key.as_str() {
            "src_content" => spec.src_content = parse_num(&key, &value)?,
            "tgt_content" => spec.tgt_content = parse_num(&key, &value)?,
            "n_utts" => spec.n_utts = parse_num(&key, &value)?,
            "asr_utts" => spec.asr_utts = parse_num(&key, &value)?,
            "min_len" => spec.min_len = parse_num(&key, &value)?,
            "max_len" => spec.max_len = parse_num(&key, &value)?,
            "frames_per_token" => spec.frames_per_token = parse_num(&key, &value)?,
            "noise" => spec.noise = parse_num(&key, &value)?,
            "n_speakers" => spec.n_speakers = parse_num(&key, &value)?,
            "speaker_scale" => spec.speaker_scale = parse_num(&key, &value)?,
            "n_intents" => spec.n_intents = parse_num(&key, &value)?,
            "feat_dim" => spec.feat_dim = parse_num(&key, &value)?,
            "seed" => spec.seed = parse_num(&key, &value)?,
            "rule" => {
                spec.rule = match value.as_str() {
                    "copy-map" => TranslationRule::CopyMap,
                    "reverse-map" => TranslationRule::ReverseMap,
                    _ => {
                        return Err(LutError::Config(format!(
                            "rule: expected copy-map or reverse-map, got {value:?}"
                        )))
                    }
                }
            }
            _ => return Err(LutError::Config(format!("unknown corpus key {key:?}"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_a_full_config_file() {
        let f = write_tmp(
            "# run setup\n\
             seed = 42\n\
             mode = base\n\
             model.n_ae = 3\n\
             model.branch = seq   # try the pooled branch\n\
             model.alpha = 0.4\n\
             train.max_steps = 123\n\
             sched.peak_lr = 0.001\n\
             teacher.mode = table\n",
        );
        let mut cfg = RunConfig::from_file(f.path()).unwrap();
        cfg.apply_seed();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.model.seed, 42);
        assert_eq!(cfg.model.n_ae, 3);
        assert_eq!(cfg.model.branch, BranchMode::Seq);
        assert_eq!(cfg.model.alpha, 0.4);
        assert_eq!(cfg.plan.max_steps, 123);
        assert_eq!(cfg.schedule.peak_lr, 0.001);
        assert_eq!(cfg.teacher_mode, TeacherMode::Table);
        assert_ne!(cfg.teacher.seed, cfg.model.seed);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected_by_name() {
        let f = write_tmp("model.n_layers = 4\n");
        let err = RunConfig::from_file(f.path()).unwrap_err();
        assert!(err.to_string().contains("model.n_layers"), "{err}");

        let f = write_tmp("model.n_ae = many\n");
        let err = RunConfig::from_file(f.path()).unwrap_err();
        assert!(err.to_string().contains("model.n_ae"), "{err}");

        let f = write_tmp("model.branch = tree\n");
        assert!(RunConfig::from_file(f.path()).is_err());

        let f = write_tmp("just a line without equals\n");
        assert!(RunConfig::from_file(f.path()).is_err());
    }

    #[test]
    fn later_assignments_win_like_flag_overrides() {
        let f = write_tmp("model.n_ae = 2\nmodel.n_ae = 5\n");
        let mut cfg = RunConfig::from_file(f.path()).unwrap();
        assert_eq!(cfg.model.n_ae, 5);
        cfg.set("model.n_ae", "7").unwrap();
        assert_eq!(cfg.model.n_ae, 7);
    }

    #[test]
    fn validation_checks_paths_and_mode_consistency() {
        let mut cfg = RunConfig::default();
        cfg.data.train_manifest = Some(PathBuf::from("/nonexistent/m.jsonl"));
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("does not exist"));

        let mut cfg = RunConfig::default();
        cfg.mode = RunMode::Expanded;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("asr_manifest"));

        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn corpus_spec_file_roundtrip() {
        let f = write_tmp(
            "src_content = 6\n\
             tgt_content = 6\n\
             n_utts = 50\n\
             rule = copy-map\n\
             noise = 0.05\n\
             seed = 9\n",
        );
        let spec = corpus_spec_from_file(f.path()).unwrap();
        assert_eq!(spec.src_content, 6);
        assert_eq!(spec.n_utts, 50);
        assert_eq!(spec.rule, TranslationRule::CopyMap);
        assert_eq!(spec.noise, 0.05);

        let f = write_tmp("rule = shuffle\n");
        assert!(corpus_spec_from_file(f.path()).is_err());
        let f = write_tmp("wibble = 3\n");
        assert!(corpus_spec_from_file(f.path()).is_err());
    }

    #[test]
    fn comment_only_and_empty_files_yield_defaults() {
        let f = write_tmp("# nothing here\n\n   \n");
        let cfg = RunConfig::from_file(f.path()).unwrap();
        assert_eq!(cfg.model.n_ae, ModelConfig::default().n_ae);
        assert_eq!(cfg.plan.max_steps, TrainPlan::default().max_steps);
    }
}
