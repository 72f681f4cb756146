//! End-to-end exercises of the `lut` binary: every subcommand, the error
//! paths with their exit codes, and reproducibility of artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lut(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lut"))
        .args(args)
        .env_remove("LUT_SEED")
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn corpus_spec(seed: u64) -> String {
    format!(
        "src_content = 5\n\
         tgt_content = 5\n\
         n_utts = 20\n\
         min_len = 3\n\
         max_len = 4\n\
         feat_dim = 6\n\
         n_speakers = 2\n\
         n_intents = 2\n\
         noise = 0.05\n\
         seed = {seed}\n"
    )
}

fn run_config(data_dir: &Path, extra: &str) -> String {
    let d = data_dir.display();
    format!(
        "seed = 7\n\
         mode = base\n\
         model.n_ae = 1\n\
         model.n_se = 1\n\
         model.n_td = 1\n\
         model.d_model = 16\n\
         model.n_heads = 2\n\
         model.d_ff = 24\n\
         model.feat_dim = 6\n\
         train.max_steps = 6\n\
         train.ckpt_interval = 3\n\
         train.eval_interval = 3\n\
         train.frames_budget = 60\n\
         sched.peak_lr = 0.001\n\
         sched.warmup_steps = 5\n\
         teacher.mode = table\n\
         data.train_manifest = {d}/train.jsonl\n\
         data.dev_manifest = {d}/dev.jsonl\n\
         data.test_manifest = {d}/test.jsonl\n\
         data.src_vocab = {d}/src_vocab.txt\n\
         data.tgt_vocab = {d}/tgt_vocab.txt\n\
         {extra}"
    )
}

fn gen_data(dir: &Path, seed: u64) {
    let spec = dir.join("corpus.spec");
    write(&spec, &corpus_spec(seed));
    let out = lut(&[
        "gen-data",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_data_is_reproducible_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen_data(a.path(), 3);
    gen_data(b.path(), 3);
    for name in ["train.jsonl", "dev.jsonl", "test.jsonl", "src_vocab.txt", "tgt_vocab.txt"] {
        let fa = fs::read(a.path().join(name)).unwrap();
        let fb = fs::read(b.path().join(name)).unwrap();
        assert!(!fa.is_empty(), "{name} empty");
        assert_eq!(fa, fb, "{name} differs between identical seeds");
    }
    assert!(a.path().join("corpus_info.json").exists());
    // 20 utterances split 16/2/2
    let count = |p: &Path| fs::read_to_string(p).unwrap().lines().count();
    assert_eq!(count(&a.path().join("train.jsonl")), 16);
    assert_eq!(count(&a.path().join("dev.jsonl")), 2);
    assert_eq!(count(&a.path().join("test.jsonl")), 2);

    let c = tempfile::tempdir().unwrap();
    gen_data(c.path(), 4);
    let fa = fs::read(a.path().join("train.jsonl")).unwrap();
    let fc = fs::read(c.path().join("train.jsonl")).unwrap();
    assert_ne!(fa, fc, "different seeds must give different corpora");
}

#[test]
fn full_workflow_train_decode_evaluate_probe_export() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path(), 7);
    let cfg_path = dir.path().join("run.conf");
    write(&cfg_path, &run_config(dir.path(), ""));
    let run_dir = dir.path().join("run");

    let out = lut(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("run_report.json").exists());
    assert!(run_dir.join("train_log.jsonl").exists());
    let ckpt = run_dir.join("averaged.ckpt");
    assert!(ckpt.exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("run_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["report"]["steps"], 6);

    let hyp = dir.path().join("hyp.jsonl");
    let out = lut(&[
        "decode",
        "--config",
        cfg_path.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        hyp.to_str().unwrap(),
        "--beam",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<String> = fs::read_to_string(&hyp)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 2);
    for l in &lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["utt_id"].is_string());
        assert!(v["hypothesis"].is_array());
    }

    let eval_dir = dir.path().join("eval");
    let out = lut(&[
        "evaluate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(eval_dir.join("eval_report.jsonl").exists());
    assert!(eval_dir.join("scatter.tsv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("eval_summary.json")).unwrap())
            .unwrap();
    assert!(summary["corpus_bleu"].as_f64().unwrap() >= 0.0);

    let probe_dir = dir.path().join("probe");
    let out = lut(&[
        "probe",
        "--config",
        cfg_path.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--task",
        "intent",
        "--manifest",
        dir.path().join("train.jsonl").to_str().unwrap(),
        "--out",
        probe_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let probe: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(probe_dir.join("probe_report.json")).unwrap())
            .unwrap();
    for k in ["acoustic_accuracy", "semantic_accuracy"] {
        let acc = probe[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    // pull a real utterance id out of the test manifest
    let first_line = fs::read_to_string(dir.path().join("test.jsonl")).unwrap();
    let first: serde_json::Value =
        serde_json::from_str(first_line.lines().next().unwrap()).unwrap();
    let utt_id = first["utt_id"].as_str().unwrap();
    let att = dir.path().join("attention.json");
    let out = lut(&[
        "export-attention",
        "--config",
        cfg_path.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--utt-id",
        utt_id,
        "--out",
        att.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&att).unwrap()).unwrap();
    let maps = doc["maps"].as_array().unwrap();
    // per head: 1 self-attn in each encoder stack, self + cross in the decoder
    // = 2 heads * (1 + 1 + 2) layers
    assert_eq!(maps.len(), 8);
    for m in maps {
        assert!(m["name"].is_string());
        assert_eq!(m["shape"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn decode_on_empty_manifest_warns_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path(), 5);
    let cfg_path = dir.path().join("run.conf");
    write(&cfg_path, &run_config(dir.path(), ""));
    let run_dir = dir.path().join("run");
    let out = lut(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let empty = dir.path().join("empty.jsonl");
    write(&empty, "");
    let hyp = dir.path().join("hyp.jsonl");
    let out = lut(&[
        "decode",
        "--config",
        cfg_path.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("averaged.ckpt").to_str().unwrap(),
        "--manifest",
        empty.to_str().unwrap(),
        "--out",
        hyp.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(&hyp).unwrap(), "");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("empty"), "stderr should warn: {stderr}");
}

#[test]
fn expanded_mode_without_asr_manifest_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path(), 6);
    let cfg_path = dir.path().join("run.conf");
    write(&cfg_path, &run_config(dir.path(), "mode = expanded\n"));
    let out = lut(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("asr_manifest"), "{stderr}");
}

#[test]
fn checkpoint_config_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path(), 8);
    let cfg_path = dir.path().join("run.conf");
    write(&cfg_path, &run_config(dir.path(), ""));
    let run_dir = dir.path().join("run");
    let out = lut(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let other_cfg = dir.path().join("other.conf");
    write(&other_cfg, &run_config(dir.path(), "model.d_model = 32\nmodel.n_heads = 4\n"));
    let out = lut(&[
        "decode",
        "--config",
        other_cfg.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("averaged.ckpt").to_str().unwrap(),
        "--out",
        dir.path().join("hyp.jsonl").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mismatch"), "{stderr}");
}

#[test]
fn unknown_config_keys_and_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.conf");
    write(&cfg_path, "model.depth = 9\n");
    let out = lut(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.depth"));

    let out = lut(&["decode", "--no-such-flag"]);
    assert!(!out.status.success());

    let out = lut(&["probe", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--config", "--checkpoint", "--task", "--out"] {
        assert!(text.contains(flag), "--help must list {flag}");
    }
}

#[test]
fn seed_flag_beats_environment_which_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path(), 9);
    let cfg_path = dir.path().join("run.conf");
    write(&cfg_path, &run_config(dir.path(), ""));

    let run_env = dir.path().join("run-env");
    let out = Command::new(env!("CARGO_BIN_EXE_lut"))
        .args([
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            run_env.to_str().unwrap(),
        ])
        .env("LUT_SEED", "101")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_env.join("run_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["seed"], 101);

    let run_flag = dir.path().join("run-flag");
    let out = Command::new(env!("CARGO_BIN_EXE_lut"))
        .args([
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "202",
            "--out",
            run_flag.to_str().unwrap(),
        ])
        .env("LUT_SEED", "101")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_flag.join("run_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["seed"], 202);
}

#[test]
fn sweep_layers_emits_the_five_standard_rows() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path(), 10);
    let cfg_path = dir.path().join("run.conf");
    // keep each row cheap: two steps, no dev evals beyond the final one
    write(
        &cfg_path,
        &run_config(dir.path(), "train.max_steps = 2\ntrain.eval_interval = 100\n"),
    );
    let sweep_dir = dir.path().join("sweep");
    let out = lut(&[
        "sweep",
        "--config",
        cfg_path.to_str().unwrap(),
        "--axis",
        "layers",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(sweep_dir.join("sweep.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 6); // header + 5 variants
    assert!(rows[0].starts_with("n_ae"));
    let got: Vec<(&str, &str)> = rows[1..]
        .iter()
        .map(|r| {
            let mut it = r.split('\t');
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    assert_eq!(got, vec![("2", "6"), ("3", "5"), ("4", "4"), ("5", "3"), ("6", "2")]);

    let out = lut(&[
        "sweep",
        "--config",
        cfg_path.to_str().unwrap(),
        "--axis",
        "bogus",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}
