use std::path::{Path, PathBuf};
use std::process::Command;

use ernn::cells::cell_step;
use ernn::equilibrium::unrolled_step_jacobian;
use ernn::numerics::{spectral_norm, Vector};
use ernn_cli::commands::{analysis_cell, analysis_sequences};
use ernn_cli::{read_manifest, RunConfig};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
    dir: PathBuf,
}

fn ernn(cmd: &str, config: &str, extra: &[&str], dir: &Path) -> Run {
    std::fs::create_dir_all(dir).unwrap();
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ernn"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
        dir: dir.join("out"),
    }
}

fn rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let body = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, body)
}

fn f(s: &str) -> f64 {
    s.parse().unwrap()
}

const SMALL_TRAIN: &str = r#"{
    "model.kind": "ernn", "model.hidden_dim": 6, "model.k_steps": 2,
    "train.epochs": 3, "train.batch_size": 16,
    "data.seq_len": 12, "data.informative_steps": 3, "data.n_train": 48, "data.n_test": 16,
    "seed": 5
}"#;

#[test]
fn train_writes_metrics_checkpoint_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ernn("train", SMALL_TRAIN, &[], tmp.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (header, body) = rows(&run.dir.join("metrics.csv"));
    assert_eq!(
        header,
        [
            "epoch",
            "train_loss",
            "test_loss",
            "test_acc",
            "lr",
            "seconds"
        ]
    );
    assert_eq!(body.len(), 3);
    assert!(body.iter().all(|r| r[5].is_empty()));
    assert!(run.stdout.contains("epoch"));

    let manifest = read_manifest(&run.dir).unwrap();
    assert_eq!(manifest.outputs, ["metrics.csv", "checkpoint.json"]);
    assert_eq!(manifest.exit_code, 0);
    assert_eq!(manifest.seed, 5);
    assert_eq!(
        manifest.config_hash,
        ernn_cli::git_blob_hash(SMALL_TRAIN.as_bytes())
    );
    for name in &manifest.outputs {
        assert!(run.dir.join(name).exists());
    }
    // Written last.
    let mtime = |n: &str| {
        std::fs::metadata(run.dir.join(n))
            .unwrap()
            .modified()
            .unwrap()
    };
    assert!(mtime("manifest.json") >= mtime("checkpoint.json"));
    let ckpt = ernn::train::Checkpoint::load(run.dir.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.epoch, 3);
}

#[test]
fn train_timing_fills_seconds() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ernn("train", SMALL_TRAIN, &["--timing"], tmp.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (_, body) = rows(&run.dir.join("metrics.csv"));
    assert!(body.iter().all(|r| f(&r[5]) >= 0.0));
}

#[test]
fn same_seed_gives_identical_bytes_and_seed_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let a = ernn("train", SMALL_TRAIN, &[], &tmp.path().join("a"));
    let b = ernn("train", SMALL_TRAIN, &[], &tmp.path().join("b"));
    let c = ernn(
        "train",
        SMALL_TRAIN,
        &["--seed", "6"],
        &tmp.path().join("c"),
    );
    for name in ["metrics.csv", "checkpoint.json"] {
        let read = |r: &Run| std::fs::read(r.dir.join(name)).unwrap();
        assert_eq!(read(&a), read(&b), "{name}");
        assert_ne!(read(&a), read(&c), "{name}");
    }
    assert_eq!(read_manifest(&c.dir).unwrap().seed, 6);
}

#[test]
fn config_errors_exit_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ernn("train", r#"{"train.lr": -1}"#, &[], &tmp.path().join("a"));
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("train.lr"), "{}", run.stderr);
    assert!(!run.dir.join("manifest.json").exists());

    let run = ernn(
        "stability",
        r#"{"model.hiden_dim": 3}"#,
        &[],
        &tmp.path().join("b"),
    );
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("model.hiden_dim"), "{}", run.stderr);

    let run = ernn(
        "train",
        r#"{"data.task": "random_walk", "data.input_dim": 1}"#,
        &[],
        &tmp.path().join("c"),
    );
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("data.task"), "{}", run.stderr);
}

#[test]
fn overflow_exits_3_and_keeps_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"model.kind": "vanilla", "model.hidden_dim": 4, "model.activation": "relu",
        "train.lr": 1e300, "train.epochs": 5, "train.batch_size": 4,
        "data.seq_len": 6, "data.informative_steps": 2, "data.n_train": 8, "data.n_test": 4}"#;
    let run = ernn("train", cfg, &[], tmp.path());
    assert_eq!(run.code, 3, "{}", run.stderr);
    let manifest = read_manifest(&run.dir).unwrap();
    assert_eq!(manifest.exit_code, 3);
    assert!(manifest.outputs.contains(&"metrics.csv".to_string()));
    assert!(run.dir.join("checkpoint.json").exists());
    ernn::train::Checkpoint::load(run.dir.join("checkpoint.json")).unwrap();
}

#[test]
fn csv_training_uses_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = ernn::tasks::TaskSpec::noise_padded(5, 2, 3, 2, 0.3);
    let data = ernn::tasks::gen_noise_padded(&spec, 40, &mut ernn::numerics::Rng::new(1)).unwrap();
    let path = tmp.path().join("data.csv");
    ernn::tasks::save_csv_sequences(&data, &path, true).unwrap();
    let cfg = format!(
        r#"{{"data.task": "csv", "data.csv_path": {:?}, "data.csv_header": true, "data.seq_len": 5,
            "data.input_dim": 2, "model.hidden_dim": 4, "train.epochs": 2}}"#,
        path.display().to_string()
    );
    let run = ernn("train", &cfg, &[], tmp.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let ckpt = ernn::train::Checkpoint::load(run.dir.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.config.task.classes, 3);
    assert!(run.stdout.contains("on 32 samples"), "{}", run.stdout);
}

#[test]
fn phase_space_shape_and_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ernn(
        "phase-space",
        r#"{"model.activation": "tanh", "model.k_steps": 3, "seed": 2}"#,
        &[],
        tmp.path(),
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (header, body) = rows(&run.dir.join("trajectories.csv"));
    assert_eq!(header, ["step", "model", "h1", "h2"]);
    assert_eq!(body.len(), 3 * 1000);
    for model in ["vanilla", "fastrnn", "ernn"] {
        assert_eq!(body.iter().filter(|r| r[1] == model).count(), 1000);
    }
    for r in body.iter().filter(|r| r[1] == "vanilla") {
        assert!(f(&r[2]).abs() <= 1.0 && f(&r[3]).abs() <= 1.0);
    }
}

#[test]
fn phase_space_zero_walk_is_stationary() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ernn(
        "phase-space",
        r#"{"model.activation": "tanh", "analysis.walk_variance": 0, "analysis.steps": 50}"#,
        &[],
        tmp.path(),
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (_, body) = rows(&run.dir.join("trajectories.csv"));
    let ernn_rows: Vec<_> = body.iter().filter(|r| r[1] == "ernn").collect();
    assert_eq!(ernn_rows.len(), 50);
    for r in &ernn_rows[1..] {
        assert_eq!(r[2..], ernn_rows[0][2..]);
    }
}

const FLOW: &str = r#"{"model.activation": "tanh", "model.hidden_dim": 16, "model.k_steps": 5,
    "data.seq_len": 32, "analysis.u_norm": 0.5, "analysis.eta": 1.0, "analysis.batch": 2, "seed": 3}"#;

#[test]
fn grad_flow_profiles() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ernn("grad-flow", FLOW, &[], tmp.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (header, body) = rows(&run.dir.join("gradnorms.csv"));
    assert_eq!(header, ["n", "model", "spectral_norm_dhT_dhn"]);
    let series = |m: &str| -> Vec<f64> {
        body.iter()
            .filter(|r| r[1] == m)
            .map(|r| f(&r[2]))
            .collect()
    };
    let (e, v) = (series("ernn"), series("vanilla"));
    assert_eq!(e.len(), 31);
    assert!(e.iter().all(|x| (0.5..=2.0).contains(x)), "{e:?}");
    // Contractive vanilla: norms shrink going back in time.
    for w in v.windows(4) {
        assert!(w[0] <= w[3] * 1.05, "{v:?}");
    }
    assert!(v[0] < 1e-6, "{v:?}");
}

#[test]
fn grad_flow_last_row_is_one_step_norm() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_text = FLOW.replace("\"analysis.batch\": 2", "\"analysis.batch\": 1");
    let run = ernn("grad-flow", &cfg_text, &[], tmp.path());
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (_, body) = rows(&run.dir.join("gradnorms.csv"));
    let last = body.iter().rfind(|r| r[1] == "ernn").unwrap();
    assert_eq!(last[0], "31");

    let cfg = RunConfig::from_json_str(&cfg_text).unwrap();
    let p = analysis_cell(&cfg).unwrap();
    let seq = &analysis_sequences(&cfg, 1).unwrap()[0];
    let mut h = Vector::zeros(16);
    for (t, x) in seq[..31].iter().enumerate() {
        h = cell_step(&p, &h, x, 5, t).unwrap();
    }
    let one = spectral_norm(&unrolled_step_jacobian(&p, &h, &seq[31], 5).unwrap());
    assert!(
        (f(&last[2]) - one).abs() <= 1e-10 * one,
        "{} vs {one}",
        last[2]
    );
}

#[test]
fn fixed_point_scalar_ratio_is_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ernn(
        "fixed-point",
        r#"{"analysis.preset": "scalar_linear", "analysis.iterations": 20}"#,
        &[],
        tmp.path(),
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (header, body) = rows(&run.dir.join("convergence.csv"));
    assert_eq!(
        header,
        [
            "i",
            "residual_norm",
            "oracle_distance",
            "ratio",
            "descent_condition"
        ]
    );
    assert_eq!(body.len(), 21);
    for r in &body[..20] {
        assert!((f(&r[3]) - 0.95).abs() <= 1e-12, "{r:?}");
        assert_eq!(r[4], "true");
    }
    assert_eq!(body[20][3], "");
}

#[test]
fn fixed_point_from_equilibrium_is_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ernn(
        "fixed-point",
        r#"{"model.activation": "tanh", "model.hidden_dim": 8, "analysis.start": "equilibrium"}"#,
        &[],
        tmp.path(),
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (_, body) = rows(&run.dir.join("convergence.csv"));
    assert_eq!(body.len(), 1);
    assert!(f(&body[0][2]) <= 1e-12);
}

#[test]
fn fixed_point_tanh_rate_is_linear() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ernn(
        "fixed-point",
        r#"{"model.activation": "tanh", "model.hidden_dim": 8, "analysis.iterations": 12, "seed": 4}"#,
        &[],
        tmp.path(),
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (_, body) = rows(&run.dir.join("convergence.csv"));
    let pts: Vec<(f64, f64)> = body.iter().map(|r| (f(&r[0]), f(&r[2]).ln())).collect();
    let r2 = r_squared(&pts[3..=10]);
    assert!(r2 >= 0.99, "{r2}");
}

fn r_squared(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

#[test]
fn stability_spectrum_is_in_left_half_plane() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ernn(
        "stability",
        r#"{"model.activation": "tanh", "model.hidden_dim": 8, "model.k_steps": 3,
            "data.seq_len": 20, "analysis.u_norm": 0.9, "analysis.samples": 30}"#,
        &[],
        tmp.path(),
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (header, body) = rows(&run.dir.join("spectrum.csv"));
    assert_eq!(header, ["sample", "eig_index", "re", "im"]);
    assert_eq!(body.len(), 30 * 8);
    assert!(body.iter().all(|r| f(&r[2]) < 0.0));
}

#[test]
fn gradcheck_default_passes_and_fault_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ernn("gradcheck", "{}", &[], &tmp.path().join("a"));
    assert_eq!(run.code, 0, "{}\n{}", run.stdout, run.stderr);
    for kind in ["vanilla", "fastrnn", "antisymmetric", "ernn"] {
        let line = run.stdout.lines().find(|l| l.starts_with(kind)).unwrap();
        assert!(line.contains("excluded") && line.ends_with("ok"), "{line}");
    }
    assert!(run.stdout.contains("hidden_dim 8, seq_len 4"));
    assert_eq!(
        read_manifest(&run.dir).unwrap().outputs,
        Vec::<String>::new()
    );

    let bad = ernn(
        "gradcheck",
        "{}",
        &["--inject-fault"],
        &tmp.path().join("b"),
    );
    assert_eq!(bad.code, 1, "{}", bad.stdout);
    assert!(bad.stdout.contains("offending blocks"), "{}", bad.stdout);
    assert!(bad.stderr.contains("gradient mismatch"), "{}", bad.stderr);
}
