//! End-to-end checks of the command-line binary: artifact layout, exit code
//! classes, agreement with the library on unguided translation, and
//! multi-seed report aggregation.

use std::path::Path;
use std::process::Command;

use csde::config::RunConfig;
use csde::output::read_metrics_csv;
use csde::rng::{child_rng, phase, phase_seed};
use csde::sampler::translate_batch;
use csde::score::AnalyticMixtureScore;
use csde::tasks::MixtureTask;

fn gmm_cfg() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/gmm.cfg")
        .to_str()
        .unwrap()
        .to_string()
}

fn csde_bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_csde"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn run_ok(args: &[&str]) -> String {
    let out = csde_bin(args);
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn tiny_pipeline_writes_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = gmm_cfg();
    run_ok(&[
        "train-encoder",
        "--config",
        &cfg,
        "--out",
        out,
        "--override",
        "train.iterations=30",
        "--override",
        "data.train_samples=128",
    ]);
    for name in ["encoder.ckpt", "encoder_loss.csv", "encoder_loss.svg"] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let loss = std::fs::read_to_string(dir.path().join("encoder_loss.csv")).unwrap();
    let mut lines = loss.lines();
    assert_eq!(lines.next(), Some("iteration,loss"));
    assert_eq!(lines.count(), 30, "one loss row per training iteration");
    let svg = std::fs::read_to_string(dir.path().join("encoder_loss.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"), "loss chart should be an svg line chart");

    run_ok(&[
        "translate",
        "--config",
        &cfg,
        "--out",
        out,
        "--override",
        "guidance.lambda=0",
        "--override",
        "data.eval_samples=12",
        "--override",
        "guidance.steps=40",
    ]);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(
        metrics.starts_with("task,lambda,initial_time,similarity,seed,n,l2,psnr,ssim,invariant_l2,target_nll,mmd\n"),
        "metrics header changed: {}",
        metrics.lines().next().unwrap_or("")
    );
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(
        trace.lines().count(),
        1 + 12 * 40,
        "trace should hold one row per item per reverse step"
    );
    let translations = std::fs::read_to_string(dir.path().join("translations.csv")).unwrap();
    assert_eq!(translations.lines().count(), 1 + 12);
    assert!(translations.starts_with("item,seed,lambda,initial_time,steps,similarity,out_0"));
}

#[test]
fn exit_codes_classify_failure_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "task = gmm_translate\nno_such_key = 3\n").unwrap();
    let res = csde_bin(&["translate", "--config", bad_cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(res.status.code(), Some(2), "unknown config key should exit 2");
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("line 2"), "config error should cite the line: {err}");

    let res = csde_bin(&[
        "translate",
        "--config",
        &gmm_cfg(),
        "--out",
        out,
        "--override",
        "guidance.lambda=-3",
    ]);
    assert_eq!(res.status.code(), Some(2), "invalid value should exit 2");

    let res = csde_bin(&["translate", "--config", &gmm_cfg(), "--out", out]);
    assert_eq!(res.status.code(), Some(3), "missing checkpoint should exit 3");
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(
        err.contains("train-encoder"),
        "missing checkpoint error should say how to produce one: {err}"
    );

    // A checkpoint whose width disagrees with the task is a usage error, not
    // a checkpoint format error.
    let wrong = dir.path().join("wrong.ckpt");
    let cfg = csde::encoder::EncoderConfig {
        input_dim: 6,
        hidden_widths: vec![8],
        proj_widths: vec![4],
        time_embed_dim: 4,
    };
    let params = csde::encoder::EncoderParams::init(cfg, &mut csde::rng::master_rng(1)).unwrap();
    params.save(&wrong).unwrap();
    let res = csde_bin(&[
        "translate",
        "--config",
        &gmm_cfg(),
        "--out",
        out,
        "--override",
        &format!("paths.encoder={}", wrong.display()),
    ]);
    assert_eq!(res.status.code(), Some(4), "shape mismatch should exit 4");
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains('6') && err.contains('8'), "shape error should name both widths: {err}");
}

#[test]
fn unguided_translation_matches_library_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let overrides = [
        "guidance.lambda=0",
        "data.eval_samples=10",
        "guidance.steps=50",
    ];
    let mut args = vec!["translate", "--config"];
    let cfg_path = gmm_cfg();
    args.push(&cfg_path);
    args.extend_from_slice(&["--out", out, "--seed", "7"]);
    for o in &overrides {
        args.extend_from_slice(&["--override", o]);
    }
    run_ok(&args);

    let mut cfg = RunConfig::load(Path::new(&cfg_path)).unwrap();
    for o in &overrides {
        cfg.apply_override(o).unwrap();
    }
    cfg.seed = 7;
    let task = MixtureTask::new(&cfg.mixture).unwrap();
    let schedule = cfg.schedule().unwrap();
    let sources = task.sample_source(
        cfg.data.eval_samples,
        &mut child_rng(phase_seed(7, phase::DATA_EVAL), 0),
    );
    let score = AnalyticMixtureScore {
        mixture: task.target.clone(),
        schedule: schedule.clone(),
    };
    let mut gcfg = cfg.guidance.clone();
    gcfg.lambda = 0.0;
    let want = translate_batch(&sources, &score, None, &gcfg, &schedule, 7).unwrap();

    let text = std::fs::read_to_string(dir.path().join("translations.csv")).unwrap();
    for (row, expect) in text.lines().skip(1).zip(&want) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[1], "7", "seed column should echo the run seed");
        let coords = &fields[fields.len() - expect.output.len()..];
        for (c, w) in coords.iter().zip(expect.output.iter()) {
            let parsed: f64 = c.parse().unwrap();
            assert_eq!(parsed.to_bits(), w.to_bits(), "csv float should round-trip the exact output");
        }
    }
}

#[test]
fn multi_seed_ablation_aggregates_into_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = gmm_cfg();
    run_ok(&[
        "ablate",
        "--config",
        &cfg,
        "--out",
        out,
        "--override",
        "ablate.mode=grid",
        "--override",
        "ablate.lambdas=0",
        "--override",
        "ablate.initial_times=0.5",
        "--override",
        "ablate.similarities=cosine",
        "--override",
        "ablate.extra_seeds=43,44",
        "--override",
        "data.eval_samples=25",
        "--override",
        "guidance.steps=50",
    ]);
    let rows = read_metrics_csv(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 3, "one metrics row per seed");
    let seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![42, 43, 44]);
    assert!(
        rows.iter().any(|r| r.l2 != rows[0].l2),
        "different seeds should draw different evaluation data"
    );

    let stdout = run_ok(&["report", "--config", &cfg, "--out", out]);
    assert!(stdout.contains("3 metric rows"), "unexpected report summary: {stdout}");
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = report.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("task,lambda,initial_time,similarity,seeds,n,l2_mean,l2_se"));
    let data: Vec<&str> = lines.collect();
    assert_eq!(data.len(), 1, "three seeds of one cell aggregate to one row");
    let fields: Vec<&str> = data[0].split(',').collect();
    assert_eq!(fields[4], "3", "seeds column should count aggregated runs");
    assert_eq!(fields[5], "75", "n should sum over seeds");
    let mean: f64 = fields[6].parse().unwrap();
    let want = rows.iter().map(|r| r.l2).sum::<f64>() / 3.0;
    assert!((mean - want).abs() < 1e-12, "l2_mean {mean} should average the per-seed values {want}");
    assert!(dir.path().join("faithfulness.svg").is_file());
}
