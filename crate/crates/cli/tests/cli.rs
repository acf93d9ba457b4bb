use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use imi_cli::{Overrides, RunConfig};
use imi_core::stimulus::{Condition, Difficulty};

const DESK: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");

fn imi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("imi runs")
}

fn stage(stage: &str, config: &Path, out: &Path) -> Output {
    imi(&[stage, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walkdir::WalkDir::new(dir)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn desk_pipeline_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = Path::new(DESK);
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let t0 = Instant::now();
        for s in ["prepare-stimuli", "simulate", "analyze", "export"] {
            let o = stage(s, config, &out);
            assert!(o.status.success(), "{s} failed: {}", String::from_utf8_lossy(&o.stderr));
        }
        assert!(t0.elapsed() < Duration::from_secs(600), "run {run} took {:?}", t0.elapsed());
        outs.push(out);
    }
    let analysis = files(&outs[0].join("analysis"));
    for report in [
        "index.json",
        "unit_scores.json",
        "model_summary.json",
        "cross_condition.json",
        "difficulty.json",
        "confidence.json",
        "power.json",
    ] {
        assert!(analysis.contains_key(Path::new(report)), "missing {report}");
    }
    assert_eq!(analysis, files(&outs[1].join("analysis")));
    let sums = |o: &Path| std::fs::read_to_string(o.join("export/SHA256SUMS")).unwrap();
    assert!(!sums(&outs[0]).is_empty());
    assert_eq!(sums(&outs[0]), sums(&outs[1]));
    assert_eq!(sums(&outs[0]), imi_cli::export::checksums(&outs[0].join("export")).unwrap());
}

#[test]
fn stages_name_the_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for (s, producer) in [("simulate", "prepare-stimuli"), ("serve", "prepare-stimuli"), ("analyze", "simulate"), ("export", "simulate")] {
        let o = stage(s, Path::new(DESK), &out);
        let stderr = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(3), "{s}: {stderr}");
        assert!(stderr.contains(producer), "{s}: {stderr}");
    }
}

#[test]
fn analyze_rejects_an_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let dataset = out.join("dataset");
    std::fs::create_dir_all(&dataset).unwrap();
    std::fs::write(dataset.join(imi_core::store::RESPONSES_FILE), "").unwrap();
    let o = stage("analyze", Path::new(DESK), &out);
    assert!(!o.status.success());
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let desk = std::fs::read_to_string(DESK).unwrap();
    let cases = [
        desk.replace("[units]\n", "[units]\ncolour = \"red\"\n"),
        desk.replace("seed = 7\n", ""),
        desk.replace("n_units = 12", "n_units = 0"),
    ];
    for text in cases {
        let path = write_config(tmp.path(), &text);
        let o = stage("prepare-stimuli", &path, &tmp.path().join("out"));
        assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(imi(&["prepare-stimuli", "--config", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn hash_ignores_the_output_directory() {
    let a = RunConfig::load(Path::new(DESK), &Overrides::default()).unwrap();
    let b = RunConfig::load(Path::new(DESK), &Overrides { out: Some("/elsewhere".into()), ..Default::default() }).unwrap();
    let c = RunConfig::load(Path::new(DESK), &Overrides { seed: Some(8), ..Default::default() }).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
    assert_eq!(b.prepared_dir(), Path::new("/elsewhere/prepared"));
}

#[test]
fn overrides_replace_lists() {
    let ov = Overrides {
        units: Some(6),
        condition: Some(Condition::Natural),
        difficulty: Some(Difficulty::Hard),
        ..Default::default()
    };
    let cfg = RunConfig::load(Path::new(DESK), &ov).unwrap();
    assert_eq!(cfg.units.n_units, 6);
    assert_eq!(cfg.stimuli.conditions, vec![Condition::Natural]);
    assert_eq!(cfg.stimuli.difficulties, vec![Difficulty::Hard]);
    assert_eq!(cfg.tasks("m").len(), 1);
}

#[test]
fn plan_fills_sessions_with_whole_units() {
    let cfg = RunConfig::load(Path::new(DESK), &Overrides::default()).unwrap();
    assert_eq!(cfg.plan(12).unwrap().real_trials_per_session, 12);
    assert_eq!(cfg.plan(84).unwrap().real_trials_per_session, 36);
    let p = cfg.plan(7).unwrap();
    assert_eq!((7 * 4 * 3) % p.real_trials_per_session, 0);
    assert!(p.real_trials_per_session <= 7);
}

#[test]
fn streams_are_independent_of_each_other() {
    let cfg = RunConfig::load(Path::new(DESK), &Overrides::default()).unwrap();
    assert_ne!(cfg.stream_seed("units"), cfg.stream_seed("plan"));
    assert_eq!(cfg.stream_seed("units"), cfg.stream_seed("units"));
}
