use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wfdes_cli::batch::BatchSummary;
use wfdes_cli::bench::{ablate, trends, ABLATION_ROWS, GRID_SIDES, HEADCOUNTS};
use wfdes_core::trajectory::Trajectory;
use wfdes_core::ScenarioConfig;

fn wfdes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfdes")).args(args).output().unwrap()
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    wfdes(&args)
}

#[test]
fn run_twice_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run_into(d.path(), &["--episodes", "1", "--seed", "17", "--parallel", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["episode_17.csv", "episode_17.jsonl", "summary.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn horizon_override_limits_log() {
    let d = tempfile::tempdir().unwrap();
    let out = run_into(d.path(), &["--episodes", "2", "--set", "horizon=10"]);
    assert!(out.status.success());
    for seed in 0..2 {
        let text = fs::read_to_string(d.path().join(format!("episode_{seed}.jsonl"))).unwrap();
        let log = Trajectory::parse(&text).unwrap();
        assert_eq!(log.records.len(), 10);
        assert_eq!(log.header.seed, seed);
    }
}

/// Recomputes episode and batch statistics from the per-step CSV rows.
#[test]
fn summary_matches_recount_from_csvs() {
    let d = tempfile::tempdir().unwrap();
    let out = run_into(d.path(), &["--episodes", "9", "--seed", "100", "--horizon", "200"]);
    assert!(out.status.success());

    let mut per_metric: [Vec<f64>; 4] = Default::default();
    for seed in 100..109 {
        let text = fs::read_to_string(d.path().join(format!("episode_{seed}.csv"))).unwrap();
        let rows: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 200);
        let n = rows.len() as f64;
        let wc = rows.last().unwrap()[2];
        let pur = rows.iter().map(|r| r[3]).sum::<f64>() / n;
        let afd = rows.iter().map(|r| r[4]).sum::<f64>() / n;
        let nsw = (wc * pur * afd).cbrt();
        for (i, v) in [wc, pur, afd, nsw].into_iter().enumerate() {
            per_metric[i].push(v);
        }
    }

    let summary = fs::read_to_string(d.path().join("summary.csv")).unwrap();
    let table: Vec<Vec<f64>> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    for (m, values) in per_metric.iter_mut().enumerate() {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (values.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
        };
        assert!((table[0][m] - mean).abs() <= 1e-9, "metric {m} mean");
        assert!((table[1][m] - q(0.25)).abs() <= 1e-9, "metric {m} p25");
        assert!((table[2][m] - q(0.75)).abs() <= 1e-9, "metric {m} p75");
    }
    let printed = String::from_utf8(out.stdout).unwrap();
    assert!(printed.contains(&format!("{:.2} (", table[0][3])), "{printed}");
}

#[test]
fn invalid_config_exits_2_naming_key() {
    let out = wfdes(&["run", "--set", "grdi.width=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grdi"));

    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    fs::write(&cfg, "horizon = 800\n[engine]\ntravel_sped = 2.0\n").unwrap();
    let out = wfdes(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("travel_sped"));
}

#[test]
fn config_file_round_trips() {
    let d = tempfile::tempdir().unwrap();
    let mut s = ScenarioConfig::default();
    s.horizon = 12;
    s.episodes = 1;
    s.engine.travel_speed = 2.5;
    let cfg = d.path().join("s.toml");
    fs::write(&cfg, s.to_toml_string()).unwrap();
    let out_dir = d.path().join("out");
    let out = wfdes(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = Trajectory::parse(&fs::read_to_string(out_dir.join("episode_0.jsonl")).unwrap()).unwrap();
    assert_eq!(log.header.scenario, s);
}

fn logged_run(dir: &Path) -> std::path::PathBuf {
    let out = run_into(dir, &["--episodes", "1", "--seed", "3", "--horizon", "120"]);
    assert!(out.status.success());
    dir.join("episode_3.jsonl")
}

#[test]
fn replay_reports_identical() {
    let d = tempfile::tempdir().unwrap();
    let log = logged_run(d.path());
    let out = wfdes(&["replay", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("identical"));
}

#[test]
fn replay_finds_first_flipped_action() {
    let d = tempfile::tempdir().unwrap();
    let path = logged_run(d.path());
    let mut log = Trajectory::parse(&fs::read_to_string(&path).unwrap()).unwrap();
    let step = log.records.iter().position(|r| !r.actions.dispatch.is_empty()).unwrap();
    log.records[step].actions.dispatch.pop();
    fs::write(&path, log.to_text()).unwrap();
    let out = wfdes(&["replay", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(
        String::from_utf8_lossy(&out.stdout).contains(&format!("mismatch at step {step}")),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn replay_with_other_seed_diverges_at_step_0() {
    let d = tempfile::tempdir().unwrap();
    let path = logged_run(d.path());
    let mut log = Trajectory::parse(&fs::read_to_string(&path).unwrap()).unwrap();
    log.header.seed = 4;
    fs::write(&path, log.to_text()).unwrap();
    let out = wfdes(&["replay", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mismatch at step 0"));
}

#[test]
fn corrupt_log_names_line() {
    let d = tempfile::tempdir().unwrap();
    let path = logged_run(d.path());
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "{\"t\": oops";
    fs::write(&path, lines.join("\n")).unwrap();
    let out = wfdes(&["replay", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 6"), "{}", String::from_utf8_lossy(&out.stderr));
}

fn small_base() -> ScenarioConfig {
    let mut s = ScenarioConfig::default();
    s.episodes = 2;
    s.horizon = 30;
    s
}

#[test]
fn trend_table_shape() {
    let t = trends(&small_base(), &GRID_SIDES, &HEADCOUNTS, 0, |_| {}).unwrap();
    assert_eq!(t.nsw.len(), 4);
    assert!(t.nsw.iter().all(|r| r.len() == 5));
    let text = t.render();
    assert_eq!(text.lines().count(), 2 + 4);
    assert!(text.lines().next().unwrap().contains("100F x 25S"));
    assert_eq!(t.to_csv().lines().count(), 21);
}

#[test]
fn ablation_table_shape_and_row_filter() {
    let all = ablate(&small_base(), None, 0, |_| {}).unwrap();
    assert_eq!(all.rows.len(), ABLATION_ROWS.len());
    let text = all.render();
    let header: Vec<&str> = text.lines().next().unwrap().split('|').map(str::trim).collect();
    assert_eq!(
        &header[1..],
        [
            "Dispatch",
            "Workforce mgmt",
            "Personnel positioning",
            "Workforce cost",
            "Personnel util. rate",
            "Facility downtime",
            "Nash social welfare"
        ]
    );
    assert_eq!(text.lines().filter(|l| l.contains("external")).count(), 3);

    let one = ablate(&small_base(), Some(&[1]), 0, |_| {}).unwrap();
    assert_eq!(one.rows.len(), 1);
    assert_eq!(one.rows[0].0, 1);
    assert_eq!(one.row(1), all.row(1));
    assert!(!one.render().contains("external"));

    let out = wfdes(&["ablate", "--rows", "1", "--episodes", "2", "--horizon", "20"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 3, "{stdout}");
    assert!(stdout.lines().nth(2).unwrap().starts_with("1 "));
}

#[test]
fn batch_summary_matches_episode_summaries() {
    let s = small_base();
    let outputs = wfdes_cli::batch::run_batch(&s, false, 1).unwrap();
    let parallel = wfdes_cli::batch::run_batch(&s, false, 4).unwrap();
    assert_eq!(outputs, parallel);
    let summary = BatchSummary::of_outputs(&outputs);
    assert_eq!(summary.episodes, 2);
    assert_eq!(outputs.iter().map(|o| o.seed).collect::<Vec<_>>(), vec![0, 1]);
}
