use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcem::models::BloodModel;
use mcem::Model;
use mcem_cli::config::Config;
use mcem_cli::run::{execute, Command as RunCommand, RunMetadata, RunSummary};
use mcem_cli::table::{parse_trajectory, write_trajectory, RunTable};

fn mcem(dir: &Path, args: &[&str], config: &str, workers: Option<&str>) -> (Output, PathBuf) {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mcem"));
    cmd.args(args).arg(&cfg).arg("--out").arg(&out);
    match workers {
        Some(w) => cmd.env("MCEM_WORKERS", w),
        None => cmd.env_remove("MCEM_WORKERS"),
    };
    (cmd.output().unwrap(), out)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config_in(dir: &Path, text: &str) -> Config {
    let mut cfg = Config::parse(text).unwrap();
    cfg.output.dir = dir.join("out");
    cfg
}

#[test]
fn em_run_reaches_the_mle() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = mcem(dir.path(), &["run"], r#"{"model": {"kind": "blood"}, "method": {"kind": "em"}}"#, None);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: RunSummary =
        serde_json::from_str(&fs::read_to_string(out.join("em-seed1.summary.json")).unwrap()).unwrap();
    let theta = summary.final_theta.unwrap();
    assert!((theta[0] - 0.299).abs() < 0.001 && (theta[1] - 0.128).abs() < 0.001);
    assert_eq!(summary.terminated, "converged");
    let traj = fs::read_to_string(out.join("em-seed1.trajectory.csv")).unwrap();
    assert!(traj.starts_with("iteration,mc_size,p,q,objective_increment,ci_lower,ci_upper,diagnostics\n"));
    assert_eq!(traj.lines().count(), summary.iterations + 1);
}

#[test]
fn written_tables_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(
        dir.path(),
        r#"{"model": {"kind": "blood"}, "methods": [{"kind": "chan-ledolter"}, {"kind": "saem-gu-kong"}, {"kind": "mcml"}],
            "seeds": {"base": 2, "replicates": 3}}"#,
    );
    let report = execute(RunCommand::Compare, &cfg, 2).unwrap();
    let constraint = BloodModel::default().constraint();
    for o in &report.outcomes {
        let path = cfg.output.dir.join(format!("{}-seed{}.trajectory.csv", o.method, o.seed));
        let text = fs::read_to_string(path).unwrap();
        let parsed = parse_trajectory(&text, &["p", "q"], &constraint).unwrap();
        assert_eq!(parsed, o.trajectory.records);
        assert_eq!(write_trajectory(&parsed, &["p", "q"]), text);
    }
    let text = fs::read_to_string(cfg.output.dir.join("compare.csv")).unwrap();
    let table = RunTable::parse(&text, &["p", "q"]).unwrap();
    assert_eq!(table, report.table);
    assert_eq!(table.write(&["p", "q"]), text);
    assert_eq!(table.rows.len(), 9);
    assert_eq!(table.aggregates.len(), 3);
}

#[test]
fn replicate_summary_has_per_seed_rows_and_spread() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = mcem(
        dir.path(),
        &["run", "--seed", "5", "--replicates", "4"],
        r#"{"model": {"kind": "blood"}, "method": {"kind": "booth-hobert"}}"#,
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table =
        RunTable::parse(&fs::read_to_string(out.join("booth-hobert.replicates.csv")).unwrap(), &["p", "q"]).unwrap();
    assert_eq!(table.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![5, 6, 7, 8]);
    let agg = &table.aggregates[0];
    let ps: Vec<f64> = table.rows.iter().map(|r| r.theta[0]).collect();
    assert!((agg.mean[0] - ps.iter().sum::<f64>() / 4.0).abs() < 1e-15);
    assert!(agg.sd[0] > 0.0);
    assert!(out.join("timings.csv").exists());
}

#[test]
fn single_method_single_seed_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) =
        mcem(dir.path(), &["compare"], r#"{"model": {"kind": "blood"}, "methods": [{"kind": "caffo"}]}"#, None);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    let table = RunTable::parse(&text, &["p", "q"]).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert!(table.aggregates.is_empty());
}

#[test]
fn exact_enumeration_lands_on_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(
        dir.path(),
        r#"{"model": {"kind": "blood"}, "methods": [{"kind": "em", "tol": 1e-14}, {"kind": "wei-tanner"}],
            "sampler": {"kind": "exact"}, "seeds": {"replicates": 2}}"#,
    );
    let report = execute(RunCommand::Compare, &cfg, 1).unwrap();
    assert_eq!(report.table.rows.len(), 4);
    for r in &report.table.rows {
        assert!(r.oracle_distance < 1e-9, "{} seed {}: {:e}", r.method, r.seed, r.oracle_distance);
    }
}

#[test]
fn saem_uses_fewer_draws_than_mcem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(
        dir.path(),
        r#"{"model": {"kind": "blood"}, "methods": [{"kind": "wei-tanner"}, {"kind": "booth-hobert"},
            {"kind": "saem-gu-kong"}, {"kind": "saem-delyon"}], "seeds": {"replicates": 10}}"#,
    );
    let report = execute(RunCommand::Compare, &cfg, 2).unwrap();
    let mean = |m: &str| {
        let d: Vec<u64> = report.table.rows_for(m).map(|r| r.total_draws).collect();
        d.iter().sum::<u64>() as f64 / d.len() as f64
    };
    assert_eq!(mean("saem-gu-kong"), 500.0);
    assert_eq!(mean("saem-delyon"), 500.0);
    assert!(mean("wei-tanner") >= 10.0 * 500.0);
    assert!(mean("booth-hobert") >= 10.0 * 500.0);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let config = r#"{"model": {"kind": "censored"}, "methods": [{"kind": "caffo"}, {"kind": "saem-delyon"}],
        "sampler": {"kind": "mh"}, "seeds": {"replicates": 4}, "output": {"inference": true, "inference_mc_size": 500}}"#;
    let read = |workers: &str| {
        let dir = tempfile::tempdir().unwrap();
        let (o, out) = mcem(dir.path(), &["compare"], config, Some(workers));
        assert!(o.status.success(), "{}", stderr(&o));
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "timings.csv")
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    };
    let one = read("1");
    assert_eq!(one.len(), 2 * 4 * 3 + 1);
    assert_eq!(one, read("3"));
}

#[test]
fn metadata_records_hash_seed_and_versions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        config_in(dir.path(), r#"{"model": {"kind": "blood"}, "method": {"kind": "em"}, "seeds": {"replicates": 2}}"#);
    execute(RunCommand::Run, &cfg, 1).unwrap();
    let meta = |seed: u64| -> RunMetadata {
        serde_json::from_str(&fs::read_to_string(cfg.output.dir.join(format!("em-seed{seed}.meta.json"))).unwrap())
            .unwrap()
    };
    let (a, b) = (meta(1), meta(2));
    assert_eq!((a.seed, b.seed), (1, 2));
    assert_eq!(a.config_sha256, b.config_sha256);
    assert_eq!(a.config_sha256.len(), 64);
    assert_eq!(a.mcem_version, mcem::VERSION);
    let mut moved = cfg.clone();
    moved.output.dir = dir.path().join("elsewhere");
    assert_eq!(mcem_cli::run::config_hash(&moved), a.config_sha256);
    moved.seeds.base = 9;
    assert_ne!(mcem_cli::run::config_hash(&moved), a.config_sha256);
}

#[test]
fn inference_block_is_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(
        dir.path(),
        r#"{"model": {"kind": "blood"}, "method": {"kind": "booth-hobert"}, "output": {"inference": true}}"#,
    );
    let report = execute(RunCommand::Run, &cfg, 1).unwrap();
    let inf = report.summaries[0].inference.as_ref().unwrap();
    assert_eq!(inf.mc_size_used, 10_000);
    assert!((inf.std_errors[0] / 0.062 - 1.0).abs() < 0.05, "{:?}", inf.std_errors);
    assert!((inf.std_errors[1] / 0.042 - 1.0).abs() < 0.05, "{:?}", inf.std_errors);
}

#[test]
fn unknown_keys_exit_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"model": {"kind": "blood"}, "method": {"kind": "em", "tolerance": 1e-6}}"#, "tolerance"),
        (r#"{"model": {"kind": "blood"}, "method": {"kind": "newton"}}"#, "method"),
        (r#"{"model": {"kind": "poisson"}, "method": {"kind": "em"}}"#, "model"),
        (r#"{"model": {"kind": "blood"}, "method": {"kind": "em"}, "sampler": {"kind": "gibbs"}}"#, "sampler"),
        (r#"{"model": {"kind": "blood"}, "method": {"kind": "caffo", "m_0": 5}}"#, "m_0"),
        (r#"{"model": {"kind": "blood"}, "method": {"kind": "em"}, "output": {"directory": "x"}}"#, "directory"),
        (r#"{"model": {"kind": "blood"}, "method": {"kind": "em"}, "extra": 1}"#, "extra"),
    ];
    for (config, key) in cases {
        let (o, out) = mcem(dir.path(), &["run"], config, None);
        assert_eq!(o.status.code(), Some(2), "{config}");
        assert!(stderr(&o).contains(key), "{config}: {}", stderr(&o));
        assert!(!out.exists());
    }
}

#[test]
fn invalid_settings_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"model": {"kind": "censored"}, "method": {"kind": "em"}, "sampler": {"kind": "exact"}}"#, "sampler"),
        (r#"{"model": {"kind": "blood"}, "method": {"kind": "em"}, "sampler": {"kind": "rejection"}}"#, "sampler"),
        (r#"{"model": {"kind": "blood"}, "methods": [{"kind": "em"}]}"#, "method"),
        (r#"{"model": {"kind": "blood", "start": [0.7, 0.6]}, "method": {"kind": "em"}}"#, "model.start"),
        (r#"{"model": {"kind": "blood"}, "method": {"kind": "caffo", "ascent_level": 1.5}}"#, "method"),
        (r#"{"model": {"kind": "censored", "threshold": 1.0}, "method": {"kind": "em"}}"#, "model"),
        (r#"{"model": {"kind": "blood"}, "method": {"kind": "em"}, "seeds": {"replicates": 0}}"#, "seeds.replicates"),
    ];
    for (config, key) in cases {
        let (o, _) = mcem(dir.path(), &["run"], config, None);
        assert_eq!(o.status.code(), Some(2), "{config}: {}", stderr(&o));
        assert!(stderr(&o).contains(key), "{config}: {}", stderr(&o));
    }
}

#[test]
fn methods_cannot_carry_their_own_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"model": {"kind": "blood"}, "methods": [{"kind": "em"},
        {"kind": "em", "model": {"kind": "censored"}}]}"#;
    let (o, _) = mcem(dir.path(), &["compare"], config, None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("methods[1]"), "{}", stderr(&o));
}

#[test]
fn malformed_json_and_bad_workers_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = mcem(dir.path(), &["run"], r#"{"model": {"kind": "blood"}"#, None);
    assert_eq!(o.status.code(), Some(2));
    let (o, _) = mcem(dir.path(), &["run"], r#"{"model": {"kind": "blood"}, "method": {"kind": "em"}}"#, Some("zero"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("MCEM_WORKERS"));
}

#[test]
fn engine_error_exits_1_with_partial_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    // No augmentation and an unreachable tolerance: the first non-positive bound stalls.
    let config =
        r#"{"model": {"kind": "blood"}, "method": {"kind": "caffo", "max_augments_per_iter": 0, "tau": 1e-300}}"#;
    let (o, out) = mcem(dir.path(), &["run"], config, None);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let summary: RunSummary =
        serde_json::from_str(&fs::read_to_string(out.join("caffo-seed1.summary.json")).unwrap()).unwrap();
    assert_eq!(summary.terminated, "error");
    assert!(summary.error.unwrap().contains("stalled"));
    assert!(stderr(&o).contains("stalled"));
    let traj = fs::read_to_string(out.join("caffo-seed1.trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + summary.iterations);
    assert!(summary.iterations > 0);
}
