use std::fs;
use std::path::{Path, PathBuf};

use fedgen::cli::scenario::{bundled_scenario, DatasetBlock, ScenarioConfig};
use fedgen::cli::{main_with_args, EXIT_CONFIG, EXIT_OK};
use fedgen::reports::read_pgm;

fn fedgen(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("fedgen").chain(args.iter().copied()))
}

fn small_gan() -> ScenarioConfig {
    let mut cfg = bundled_scenario("gan-inversion-50").unwrap();
    cfg.name = "tiny-gan".into();
    if let DatasetBlock::Glyphs { users, .. } = &mut cfg.dataset {
        *users = 80;
    }
    cfg.fed.rounds = 5;
    cfg.fed.cohort_size = 5;
    cfg.classifier.as_mut().unwrap().epochs = 2;
    cfg
}

fn small_lm() -> ScenarioConfig {
    let mut cfg = bundled_scenario("lm-concat-100").unwrap();
    cfg.name = "tiny-lm".into();
    if let DatasetBlock::Text { users, .. } = &mut cfg.dataset {
        *users = 40;
    }
    cfg.fed.rounds = 8;
    cfg.fed.cohort_size = 5;
    cfg.report.lm_samples = 2000;
    cfg
}

fn write_scenario(dir: &Path, cfg: &ScenarioConfig) -> PathBuf {
    let path = dir.join(format!("{}.json", cfg.name));
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(dir: &Path, cfg: &ScenarioConfig) -> PathBuf {
    let scenario = write_scenario(dir, cfg);
    let out = dir.join(format!("{}-run", cfg.name));
    let code = fedgen(&["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    out
}

fn file_with(dir: &Path, suffix: &str) -> PathBuf {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(suffix))
        .unwrap_or_else(|| panic!("no *{suffix} in {}", dir.display()))
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(snapshot(&p));
        } else {
            out.push((p.clone(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn gan_run_layout_and_report_regeneration() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = run(tmp.path(), &small_gan());
    for f in ["manifest.json", "rounds.csv", "privacy.csv", "checkpoints/gan-low.json", "checkpoints/classifier.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let rounds = fs::read_to_string(run_dir.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 1 + 2 * 5);
    let before = snapshot(&run_dir);

    let out = tmp.path().join("regen");
    assert_eq!(fedgen(&["report", "--run", run_dir.to_str().unwrap(), "--kind", "grid", "--out", out.to_str().unwrap()]), EXIT_OK);
    let original = fs::read(file_with(&run_dir.join("reports"), "grid-gan-low.pgm")).unwrap();
    let again = fs::read(file_with(&out, "grid-gan-low.pgm")).unwrap();
    assert_eq!(original, again);
    let (w, h, _) = read_pgm(&again).unwrap();
    assert_eq!((w, h), (8 * 8 + 7, 8 * 8 + 7));
    let run_id = fs::read_to_string(run_dir.join("manifest.json")).unwrap();
    assert!(String::from_utf8_lossy(&again).contains("# run="));
    assert!(run_id.contains("\"run_id\""));

    assert_eq!(fedgen(&["report", "--run", run_dir.to_str().unwrap(), "--kind", "histogram", "--out", out.to_str().unwrap()]), EXIT_OK);
    assert_eq!(
        fs::read(file_with(&out, "accuracy-histogram.csv")).unwrap(),
        fs::read(file_with(&run_dir.join("reports"), "accuracy-histogram.csv")).unwrap()
    );

    // the run directory is never touched by report commands
    assert_eq!(fedgen(&["report", "--run", run_dir.to_str().unwrap(), "--kind", "bogus", "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    let inside = run_dir.join("reports/again");
    assert_eq!(fedgen(&["report", "--run", run_dir.to_str().unwrap(), "--kind", "grid", "--out", inside.to_str().unwrap()]), EXIT_CONFIG);
    assert_eq!(fedgen(&["report", "--run", run_dir.to_str().unwrap(), "--kind", "oov-profile", "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    assert_eq!(snapshot(&run_dir), before);

    // a second run into the same directory is refused
    let scenario = tmp.path().join("tiny-gan.json");
    assert_eq!(fedgen(&["run", "--scenario", scenario.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]), EXIT_CONFIG);
    assert_eq!(snapshot(&run_dir), before);
}

#[test]
fn missing_checkpoint_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = run(tmp.path(), &small_gan());
    fs::remove_file(run_dir.join("checkpoints/gan-high.json")).unwrap();
    let out = tmp.path().join("regen");
    assert_eq!(fedgen(&["report", "--run", run_dir.to_str().unwrap(), "--kind", "grid", "--out", out.to_str().unwrap()]), EXIT_CONFIG);
}

#[test]
fn invalid_scenarios_fail_before_side_effects() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let mut cfg = small_gan();
    cfg.fed.clip = 0.0;
    let path = write_scenario(tmp.path(), &cfg);
    assert_eq!(fedgen(&["run", "--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    assert!(!out.exists());

    let unknown = tmp.path().join("unknown.json");
    let mut v: serde_json::Value = serde_json::to_value(small_gan()).unwrap();
    v["fed"]["noise"] = 1.0.into();
    fs::write(&unknown, v.to_string()).unwrap();
    assert_eq!(fedgen(&["run", "--scenario", unknown.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    assert!(!out.exists());
}

#[test]
fn lm_run_and_larger_sample_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = run(tmp.path(), &small_lm());
    let reports = run_dir.join("reports");
    file_with(&reports, "top-oov-words.csv");
    file_with(&reports, "word-samples.txt");
    let parse = |p: &Path| -> Vec<(f64, f64)> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(2)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[1].parse().unwrap(), f[3].parse().unwrap())
            })
            .collect()
    };
    let original = parse(&file_with(&reports, "oov-by-position.csv"));

    let out = tmp.path().join("regen");
    let args = ["report", "--run", run_dir.to_str().unwrap(), "--kind", "oov-profile", "--out", out.to_str().unwrap()];
    assert_eq!(fedgen(&[&args[..], &["--samples", "20000", "--seed", "99"]].concat()), EXIT_OK);
    let bigger = parse(&file_with(&out, "oov-by-position.csv"));
    assert!(bigger[0].0 > 5.0 * original[0].0);
    for (i, ((n, p), (_, q))) in original.iter().zip(&bigger).enumerate().take(6) {
        // 4-sigma binomial band around the larger-sample estimate
        let sd = (q * (1.0 - q) / n).sqrt().max(1.0 / n);
        assert!((p - q).abs() <= 4.0 * sd + 1e-12, "position {i}: {p} vs {q}");
    }

    assert_eq!(fedgen(&["report", "--run", run_dir.to_str().unwrap(), "--kind", "top-oov", "--out", out.to_str().unwrap()]), EXIT_OK);
    assert_eq!(
        fs::read(file_with(&out, "top-oov-words.csv")).unwrap(),
        fs::read(file_with(&reports, "top-oov-words.csv")).unwrap()
    );
}

#[test]
fn accountant_and_scenario_listing() {
    let ok = ["accountant", "--qN", "1000", "--N", "250000", "--z", "1", "--S", "0.1", "--rounds", "1000", "--delta", "4e-8", "--csv"];
    assert_eq!(fedgen(&ok), EXIT_OK);
    let preset = ["accountant", "--qN", "10", "--N", "400", "--z", "0.01", "--rounds", "300", "--delta-preset", "inv-100n"];
    assert_eq!(fedgen(&preset), EXIT_OK);
    let clash = ["accountant", "--qN", "10", "--N", "400", "--z", "1", "--rounds", "3", "--delta", "1e-5", "--delta-preset", "inv-n"];
    assert_eq!(fedgen(&clash), EXIT_CONFIG);
    assert_eq!(fedgen(&["scenarios"]), EXIT_OK);
    assert_eq!(fedgen(&["scenarios", "lm-concat-1"]), EXIT_OK);
    assert_eq!(fedgen(&["scenarios", "nope"]), EXIT_CONFIG);
}
