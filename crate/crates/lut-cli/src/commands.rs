use anyhow::{anyhow, bail, Context, Result};
use lut_core::config::{corpus_spec_from_file, RunConfig, RunMode, TeacherMode};
use lut_core::corpus::{generate, read_manifest, write_manifest, Utterance};
use lut_core::decode::{translate, BeamParams};
use lut_core::eval::evaluate as evaluate_corpus;
use lut_core::model::{LutModel, ModelConfig};
use lut_core::probe::{probe_model, ProbeConfig, ProbeLayer};
use lut_core::teacher::{train_teacher as fit_teacher, Teacher};
use lut_core::trainer::{seed_from_env, Trainer};
use lut_core::vocab::Vocab;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Seed precedence: flag > LUT_SEED > config file.
fn load_config(path: &Path, seed_flag: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    if let Some(s) = seed_from_env() {
        cfg.seed = s;
    }
    if let Some(s) = seed_flag {
        cfg.seed = s;
    }
    cfg.apply_seed();
    Ok(cfg)
}

fn load_vocabs(cfg: &RunConfig) -> Result<(Vocab, Vocab)> {
    let sp = cfg
        .data
        .src_vocab
        .as_ref()
        .ok_or_else(|| anyhow!("config needs data.src_vocab"))?;
    let tp = cfg
        .data
        .tgt_vocab
        .as_ref()
        .ok_or_else(|| anyhow!("config needs data.tgt_vocab"))?;
    Ok((Vocab::load(sp)?, Vocab::load(tp)?))
}

/// Fill the vocab-dependent model fields and validate the result.
fn model_config(cfg: &RunConfig, src: &Vocab, tgt: &Vocab) -> Result<ModelConfig> {
    let mut mc = cfg.model.clone();
    mc.src_vocab_size = src.size();
    mc.tgt_vocab_size = tgt.size();
    mc.validate()?;
    Ok(mc)
}

fn read_utts(
    cfg: &RunConfig,
    explicit: Option<&Path>,
    fallback: Option<&PathBuf>,
    what: &str,
) -> Result<Vec<Utterance>> {
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| fallback.cloned())
        .ok_or_else(|| anyhow!("no {what} manifest given (flag or config)"))?;
    let (src, tgt) = load_vocabs(cfg)?;
    read_manifest(&path, &src, &tgt)
        .with_context(|| format!("reading {what} manifest {}", path.display()))
}

fn build_teacher(cfg: &RunConfig, src: &Vocab) -> Result<Teacher> {
    let mut tcfg = cfg.teacher.clone();
    tcfg.d_model = cfg.model.d_model;
    match cfg.teacher_mode {
        TeacherMode::Table => Ok(Teacher::table_mode(&tcfg, src)),
        TeacherMode::Trained => {
            let p = cfg.teacher_checkpoint.as_ref().ok_or_else(|| {
                anyhow!("teacher.mode = trained requires teacher.checkpoint (or use teacher.mode = table)")
            })?;
            Ok(Teacher::load(p, &tcfg, src)?)
        }
    }
}

fn beam_params(model: &LutModel, beam: Option<usize>) -> BeamParams {
    BeamParams {
        beam_size: beam.unwrap_or(8).clamp(1, 8),
        max_len: model.cfg.max_len_st - 1,
        length_penalty: 0.6,
    }
}

pub fn gen_data(spec_path: &Path, out: &Path, seed: Option<u64>, inline: bool) -> Result<()> {
    let mut spec = corpus_spec_from_file(spec_path)?;
    if let Some(s) = seed_from_env() {
        spec.seed = s;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let corpus = generate(&spec)?;
    fs::create_dir_all(out)?;
    corpus.src_vocab.save(&out.join("src_vocab.txt"))?;
    corpus.tgt_vocab.save(&out.join("tgt_vocab.txt"))?;

    // deterministic 80/10/10 split; generation order is already shuffled
    let n = corpus.triples.len();
    let n_dev = (n / 10).max(usize::from(n >= 3));
    let n_test = n_dev;
    let n_train = n - n_dev - n_test;
    let (train, rest) = corpus.triples.split_at(n_train);
    let (dev, test) = rest.split_at(n_dev);
    for (name, utts) in [("train", train), ("dev", dev), ("test", test)] {
        write_manifest(
            &out.join(format!("{name}.jsonl")),
            utts,
            &corpus.src_vocab,
            &corpus.tgt_vocab,
            inline,
        )?;
    }
    if !corpus.asr_pairs.is_empty() {
        write_manifest(
            &out.join("asr.jsonl"),
            &corpus.asr_pairs,
            &corpus.src_vocab,
            &corpus.tgt_vocab,
            inline,
        )?;
    }
    let info = serde_json::json!({
        "seed": spec.seed,
        "spec": spec,
        "n_train": train.len(),
        "n_dev": dev.len(),
        "n_test": test.len(),
        "n_asr": corpus.asr_pairs.len(),
    });
    fs::write(out.join("corpus_info.json"), serde_json::to_string_pretty(&info)?)?;
    println!(
        "wrote {} train / {} dev / {} test / {} asr utterances to {}",
        train.len(),
        dev.len(),
        test.len(),
        corpus.asr_pairs.len(),
        out.display()
    );
    Ok(())
}

pub fn train_teacher(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = load_config(config, seed)?;
    cfg.validate()?;
    let (src, _) = load_vocabs(&cfg)?;
    let utts = read_utts(&cfg, None, cfg.data.train_manifest.as_ref(), "train")?;
    let sentences: Vec<Vec<usize>> = utts.iter().map(|u| u.z.clone()).collect();
    let mut tcfg = cfg.teacher.clone();
    tcfg.d_model = cfg.model.d_model;
    let report = fit_teacher(&sentences, &src, &tcfg)?;
    fs::create_dir_all(out)?;
    let ckpt = out.join("teacher.ckpt");
    report.teacher.save(&ckpt, tcfg.steps as u64)?;
    let summary = serde_json::json!({
        "seed": cfg.seed,
        "held_out_accuracy": report.held_out_accuracy,
        "steps": tcfg.steps,
        "d_model": tcfg.d_model,
        "checkpoint": ckpt,
    });
    fs::write(out.join("teacher_report.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "teacher held-out masked accuracy {:.4} -> {}",
        report.held_out_accuracy,
        ckpt.display()
    );
    Ok(())
}

pub fn train(
    config: &Path,
    seed: Option<u64>,
    out: &Path,
    branch: Option<&str>,
    mode: Option<&str>,
) -> Result<()> {
    let mut cfg = load_config(config, seed)?;
    if let Some(b) = branch {
        cfg.set("model.branch", b)?;
    }
    if let Some(m) = mode {
        cfg.set("mode", m)?;
    }
    cfg.validate()?;
    let (src, tgt) = load_vocabs(&cfg)?;
    let mc = model_config(&cfg, &src, &tgt)?;
    let model = LutModel::init(&mc, &src, &tgt)?;
    let teacher = build_teacher(&cfg, &src)?;

    let train_set = read_utts(&cfg, None, cfg.data.train_manifest.as_ref(), "train")?;
    let dev_set = match &cfg.data.dev_manifest {
        Some(p) => read_manifest(p, &src, &tgt)?,
        None => {
            log::warn!("no dev manifest: training without evaluation or early stopping");
            Vec::new()
        }
    };
    let asr_set = match cfg.mode {
        RunMode::Base => None,
        RunMode::Expanded => {
            let p = cfg
                .data
                .asr_manifest
                .as_ref()
                .ok_or_else(|| anyhow!("mode = expanded requires data.asr_manifest"))?;
            Some(read_manifest(p, &src, &tgt)?)
        }
    };

    let mut trainer = Trainer::new(model, teacher, cfg.schedule.clone(), cfg.plan.clone())?;
    let report = trainer.train(&train_set, asr_set.as_deref(), &dev_set, out)?;
    let summary = serde_json::json!({
        "seed": cfg.seed,
        "mode": cfg.mode,
        "branch": cfg.model.branch,
        "report": report,
    });
    fs::write(out.join("run_report.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "trained {} steps ({} auxiliary / {} full); final dev: loss {:.4}, token acc {:.4}, asr wer {:.4}",
        report.steps,
        report.step1_updates,
        report.step2_updates,
        report.final_dev.loss,
        report.final_dev.token_accuracy,
        report.final_dev.asr_wer
    );
    Ok(())
}

fn load_model_from(cfg: &RunConfig, checkpoint: &Path) -> Result<(LutModel, Vocab, Vocab)> {
    let (src, tgt) = load_vocabs(cfg)?;
    let mc = model_config(cfg, &src, &tgt)?;
    let model = LutModel::load(checkpoint, &mc, &src, &tgt)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Ok((model, src, tgt))
}

pub fn decode(
    config: &Path,
    checkpoint: &Path,
    manifest: Option<&Path>,
    out: &Path,
    beam: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    cfg.validate()?;
    let (model, _, tgt) = load_model_from(&cfg, checkpoint)?;
    let utts = read_utts(&cfg, manifest, cfg.data.test_manifest.as_ref(), "decode")?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(File::create(out)?);
    if utts.is_empty() {
        log::warn!("manifest is empty; writing an empty hypothesis file");
        return Ok(());
    }
    let params = beam_params(&model, beam);
    for u in &utts {
        let hyp = translate(&model, &u.features, &params)?;
        let line = serde_json::json!({
            "utt_id": u.utt_id,
            "hypothesis": hyp,
            "text": tgt.decode(&hyp),
        });
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("decoded {} utterances -> {}", utts.len(), out.display());
    Ok(())
}

pub fn evaluate(
    config: &Path,
    checkpoint: &Path,
    manifest: Option<&Path>,
    out: &Path,
    beam: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    cfg.validate()?;
    let (model, _, _) = load_model_from(&cfg, checkpoint)?;
    let utts = read_utts(&cfg, manifest, cfg.data.test_manifest.as_ref(), "evaluation")?;
    let params = beam_params(&model, beam);
    let report = evaluate_corpus(&model, &utts, &params)?;
    fs::create_dir_all(out)?;
    report.write_jsonl(BufWriter::new(File::create(out.join("eval_report.jsonl"))?))?;
    report.write_scatter(BufWriter::new(File::create(out.join("scatter.tsv"))?))?;
    let summary = serde_json::json!({
        "seed": cfg.seed,
        "corpus_bleu": report.corpus_bleu,
        "corpus_wer": report.corpus_wer,
        "pearson_r": report.pearson_r,
        "n_utts": report.n_utts,
    });
    fs::write(out.join("eval_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "BLEU {:.2}  WER {:.4}  r {}  ({} utterances)",
        report.corpus_bleu,
        report.corpus_wer,
        report
            .pearson_r
            .map_or("undefined".to_string(), |r| format!("{r:.3}")),
        report.n_utts
    );
    Ok(())
}

pub fn probe(
    config: &Path,
    checkpoint: &Path,
    task: &str,
    manifest: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    cfg.validate()?;
    let (model, _, _) = load_model_from(&cfg, checkpoint)?;
    let utts = read_utts(&cfg, manifest, cfg.data.test_manifest.as_ref(), "probe")?;
    let labels: Vec<usize> = match task {
        "speaker" => utts.iter().map(|u| u.speaker_id).collect(),
        "intent" => utts.iter().map(|u| u.intent_id).collect(),
        _ => bail!("task must be speaker or intent, got {task:?}"),
    };
    let frames: Vec<_> = utts.iter().map(|u| u.features.clone()).collect();
    let pcfg = ProbeConfig { seed: cfg.seed, ..ProbeConfig::default() };
    let acoustic = probe_model(&model, &frames, &labels, ProbeLayer::Acoustic, &pcfg)?;
    let semantic = probe_model(&model, &frames, &labels, ProbeLayer::Semantic, &pcfg)?;
    fs::create_dir_all(out)?;
    let summary = serde_json::json!({
        "seed": cfg.seed,
        "task": task,
        "acoustic_accuracy": acoustic,
        "semantic_accuracy": semantic,
        "n_utts": utts.len(),
    });
    fs::write(out.join("probe_report.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{task} probe: acoustic {acoustic:.4}, semantic {semantic:.4}");
    Ok(())
}

pub fn sweep(config: &Path, axis: &str, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    cfg.validate()?;
    let (src, tgt) = load_vocabs(&cfg)?;
    let train_set = read_utts(&cfg, None, cfg.data.train_manifest.as_ref(), "train")?;
    let dev_set = read_utts(&cfg, None, cfg.data.dev_manifest.as_ref(), "dev")?;
    let test_set = read_utts(&cfg, None, cfg.data.test_manifest.as_ref(), "test")?;

    enum Row {
        Layers(usize, usize),
        Weights(f64, f64, f64),
    }
    let rows: Vec<Row> = match axis {
        "layers" => [(2, 6), (3, 5), (4, 4), (5, 3), (6, 2)]
            .into_iter()
            .map(|(a, s)| Row::Layers(a, s))
            .collect(),
        "loss-weights" => [
            (0.5, 0.05, 0.45),
            (0.4, 0.2, 0.4),
            (0.3, 0.4, 0.3),
            (0.2, 0.05, 0.75),
            (0.2, 0.6, 0.2),
            (0.8, 0.05, 0.15),
        ]
        .into_iter()
        .map(|(a, b, g)| Row::Weights(a, b, g))
        .collect(),
        _ => bail!("axis must be layers or loss-weights, got {axis:?}"),
    };

    fs::create_dir_all(out)?;
    let mut table = BufWriter::new(File::create(out.join("sweep.tsv"))?);
    writeln!(table, "# seed = {}", cfg.seed)?;
    match axis {
        "layers" => writeln!(table, "n_ae\tn_se\tn_td\tdev_token_acc\ttest_bleu\ttest_wer")?,
        _ => writeln!(table, "alpha\tbeta\tgamma\tdev_token_acc\ttest_bleu\ttest_wer")?,
    }
    for (i, row) in rows.iter().enumerate() {
        let mut mc = model_config(&cfg, &src, &tgt)?;
        let label = match row {
            Row::Layers(n_ae, n_se) => {
                mc.n_ae = *n_ae;
                mc.n_se = *n_se;
                format!("{}\t{}\t{}", n_ae, n_se, mc.n_td)
            }
            Row::Weights(a, b, g) => {
                mc.alpha = *a;
                mc.beta = *b;
                mc.gamma = *g;
                format!("{a}\t{b}\t{g}")
            }
        };
        let model = LutModel::init(&mc, &src, &tgt)?;
        let teacher = build_teacher(&cfg, &src)?;
        let mut trainer = Trainer::new(model, teacher, cfg.schedule.clone(), cfg.plan.clone())?;
        let run_dir = out.join(format!("run-{i}"));
        let report = trainer.train(&train_set, None, &dev_set, &run_dir)?;
        let final_model = LutModel::load(&report.averaged_checkpoint, &mc, &src, &tgt)?;
        let eval = evaluate_corpus(&final_model, &test_set, &beam_params(&final_model, None))?;
        writeln!(
            table,
            "{label}\t{:.4}\t{:.2}\t{:.4}",
            report.final_dev.token_accuracy, eval.corpus_bleu, eval.corpus_wer
        )?;
        println!(
            "row {label}: dev token acc {:.4}, test BLEU {:.2}, test WER {:.4}",
            report.final_dev.token_accuracy, eval.corpus_bleu, eval.corpus_wer
        );
    }
    table.flush()?;
    println!("sweep table -> {}", out.join("sweep.tsv").display());
    Ok(())
}

pub fn export_attention(
    config: &Path,
    checkpoint: &Path,
    utt_id: &str,
    manifest: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    cfg.validate()?;
    let (model, _, _) = load_model_from(&cfg, checkpoint)?;
    let utts = read_utts(&cfg, manifest, cfg.data.test_manifest.as_ref(), "attention export")?;
    let u = utts
        .iter()
        .find(|u| u.utt_id == utt_id)
        .ok_or_else(|| anyhow!("utterance {utt_id:?} not in the manifest"))?;
    let trace = model.trace_utterance(&u.features, u.y.as_deref())?;
    let maps: Vec<_> = trace
        .iter()
        .map(|(name, t)| {
            serde_json::json!({
                "name": name,
                "shape": t.shape(),
                "data": t.data(),
            })
        })
        .collect();
    let doc = serde_json::json!({
        "seed": cfg.seed,
        "utt_id": utt_id,
        "maps": maps,
    });
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out, serde_json::to_string_pretty(&doc)?)?;
    println!("wrote {} attention maps -> {}", trace.len(), out.display());
    Ok(())
}
