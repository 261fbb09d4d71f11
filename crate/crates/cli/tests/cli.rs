use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use edpgnn::graph::io::read_manifest;
use edpgnn_cli::commands::{cmd_eval, cmd_sample, cmd_task, cmd_train, CHECKPOINT_FILE, SAMPLES_DIR};
use edpgnn_cli::RunConfig;

fn edpgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edpgnn")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A run small enough to train in a second or two.
fn tiny(out: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.out = out.to_path_buf();
    for s in [
        "dataset.count=44",
        "dataset.test_count=8",
        "dataset.n_min=6",
        "dataset.n_max=8",
        "train.steps=6",
        "train.eval_every=3",
        "train.validation_size=4",
        "model.layers=2",
        "model.mp_steps=2",
        "noise.sigmas=[0.8, 0.2]",
        "sampler.steps_per_level=5",
        "sampler.count=3",
    ] {
        c.set(s).unwrap();
    }
    c
}

#[test]
fn print_defaults_parses_back() {
    let o = edpgnn(&["print-defaults"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("# edpgnn "));
    assert_eq!(RunConfig::parse(&text).unwrap(), RunConfig::default());
}

#[test]
fn task_list() {
    let o = edpgnn(&["task", "--list"]);
    assert!(o.status.success());
    let names: Vec<String> = String::from_utf8(o.stdout).unwrap().lines().map(String::from).collect();
    assert_eq!(names, ["sp_unweighted", "sp_weighted", "mst_weighted"]);
}

#[test]
fn unknown_key_is_a_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = edpgnn(&["train", "--out", dir.path().to_str().unwrap(), "--set", "train.stepz=3"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: ") && err.contains("`steps`"), "{err}");
}

#[test]
fn invalid_variant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = edpgnn(&["task", "--variant", "mlp", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("gin_baseline"), "{}", stderr(&o));
}

#[test]
fn train_sample_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/run");
    let config = tiny(&out);
    let summary = cmd_train(&config).unwrap();
    assert!(summary.checkpoint.exists());
    for f in ["loss.csv", "config.toml", "train_summary.txt", "data/manifest.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let saved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(saved.starts_with("# edpgnn "));
    assert_eq!(RunConfig::parse(&saved).unwrap(), config);

    let mut one = config.clone();
    one.sampler.count = 1;
    let files = cmd_sample(&one).unwrap();
    let listed = read_manifest(out.join(SAMPLES_DIR)).unwrap();
    assert_eq!(listed.len(), 1);
    assert_eq!(files.len(), 1);

    cmd_sample(&config).unwrap();
    let report = cmd_eval(&config).unwrap();
    let text = fs::read_to_string(out.join("mmd.txt")).unwrap();
    assert!(report.average.is_finite());
    let numeric = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter(|l| l.split('=').nth(1).is_some_and(|v| v.trim().parse::<f64>().is_ok()))
        .count();
    assert_eq!(numeric, 4, "{text}");
}

#[test]
fn eval_of_identical_sets_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path());
    cmd_train(&config).unwrap();
    let mut same = config.clone();
    same.sampler.dump_continuous = true;
    cmd_sample(&same).unwrap();
    same.eval.samples = dir.path().join(SAMPLES_DIR).to_string_lossy().into_owned();
    same.eval.reference = same.eval.samples.clone();
    let report = cmd_eval(&same).unwrap();
    assert_eq!(report.average, 0.0);
}

#[test]
fn eval_names_unreadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad");
    fs::create_dir_all(&bad).unwrap();
    fs::write(bad.join("g.txt"), "3\n0 1 x\n").unwrap();
    let mut config = RunConfig::default();
    config.out = dir.path().join("out");
    config.eval.samples = bad.to_string_lossy().into_owned();
    config.eval.reference = config.eval.samples.clone();
    let err = format!("{:#}", cmd_eval(&config).unwrap_err());
    assert!(err.contains("g.txt"), "{err}");
}

#[test]
fn corrupted_checkpoint_is_rejected_before_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path());
    cmd_train(&config).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("EDPGNN-CKPT", "EDPGNN-CKPX", 1)).unwrap();
    assert!(cmd_sample(&config).is_err());
    assert!(!dir.path().join(SAMPLES_DIR).exists());
}

#[test]
fn architecture_mismatch_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path());
    cmd_train(&config).unwrap();
    let mut other = config.clone();
    other.set("model.channels=3").unwrap();
    let err = format!("{:#}", cmd_sample(&other).unwrap_err());
    assert!(err.contains("channels"), "{err}");
}

#[test]
fn task_report_has_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::default();
    config.out = dir.path().to_path_buf();
    config.seed = 11;
    for s in ["task.budget=2", "task.test_size=4", "task.nodes=5", "task.name=sp_unweighted"] {
        config.set(s).unwrap();
    }
    let mut steps = 0;
    cmd_task(&config, |_, _| steps += 1).unwrap();
    assert_eq!(steps, 2);
    let text = fs::read_to_string(dir.path().join("task_sp_unweighted_edpgnn.txt")).unwrap();
    assert!(text.contains("seed = 11"), "{text}");
}

#[test]
fn inputs_are_not_mutated() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path());
    cmd_train(&config).unwrap();
    let data = dir.path().join("data");
    let snapshot = |p: &Path| {
        let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(p)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let before = snapshot(&data);
    let ckpt = fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap();
    let mut eval = config.clone();
    eval.out = dir.path().join("eval");
    eval.eval.samples = data.to_string_lossy().into_owned();
    eval.eval.reference = eval.eval.samples.clone();
    cmd_eval(&eval).unwrap();
    let mut sample = config.clone();
    sample.out = dir.path().join("s");
    sample.sampler.checkpoint = dir.path().join(CHECKPOINT_FILE).to_string_lossy().into_owned();
    cmd_sample(&sample).unwrap();
    assert_eq!(snapshot(&data), before);
    assert_eq!(fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap(), ckpt);
}
