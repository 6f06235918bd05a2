use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecosched_cli::{parse_scenario_file, parse_scenario_str, ScenarioFile};
use ecosched_core::experiment::{read_runs_csv, ExperimentSetup};
use ecosched_core::{
    energy_increase, ConfigId, Denominator, Intensity, ScenarioConfig, StrategyKind,
};

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn bundled() -> Vec<PathBuf> {
    let mut files: Vec<_> = fs::read_dir(scenarios_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    files
}

fn ecosched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecosched"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_every_bundled_file() {
    let files = bundled();
    let mut args = vec!["validate"];
    let paths: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    args.extend(paths.iter().map(String::as_str));
    let out = ecosched(&args);
    assert!(out.status.success(), "{}", stderr(&out));

    let covered: BTreeSet<(ConfigId, &str)> = files
        .iter()
        .map(|p| {
            let s = parse_scenario_file(p, &[]).unwrap();
            (
                s.setup.scenario.config_id,
                s.setup.scenario.intensity.as_str(),
            )
        })
        .collect();
    for c in ConfigId::ALL {
        for i in [Intensity::Moderate, Intensity::High] {
            assert!(
                covered.contains(&(c, i.as_str())),
                "no bundled file for {c:?} {i:?}"
            );
        }
    }
}

#[test]
fn reference_file_spells_out_the_defaults() {
    let s = parse_scenario_file(&scenarios_dir().join("reference.toml"), &[]).unwrap();
    assert_eq!(
        s.setup,
        ExperimentSetup::new(ScenarioConfig::standard(ConfigId::C2, Intensity::Moderate))
    );
    assert_eq!(
        s.strategies,
        [StrategyKind::GreennessEq1, StrategyKind::LeastAllocated]
    );
}

#[test]
fn bundled_files_round_trip() {
    for path in bundled() {
        let text = fs::read_to_string(&path).unwrap();
        let parsed: ScenarioFile = toml::from_str(&text).unwrap();
        let again: ScenarioFile = toml::from_str(&toml::to_string(&parsed).unwrap()).unwrap();
        assert_eq!(parsed, again, "{}", path.display());

        let resolved = parse_scenario_file(&path, &[]).unwrap();
        let explicit = ScenarioFile::from_scenario(&resolved).to_toml().unwrap();
        assert_eq!(
            parse_scenario_str(&explicit, "explicit", &[]).unwrap(),
            resolved,
            "{}",
            path.display()
        );
    }
}

const QUICK: [&str; 6] = [
    "--set",
    "protocol.warmup_s=60",
    "--set",
    "workload.duration_s=60",
    "--set",
    "protocol.window_s=60",
];

fn compare_into(dir: &Path) -> Output {
    let scenario = scenarios_dir().join("c2-moderate.toml");
    let mut args = vec![
        "compare",
        scenario.to_str().unwrap(),
        "--runs",
        "5",
        "--seed",
        "7",
        "--out",
        dir.to_str().unwrap(),
    ];
    args.extend(QUICK);
    ecosched(&args)
}

#[test]
fn compare_writes_reports_and_deterministic_csv() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out = compare_into(a.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(compare_into(b.path()).status.success());

    let csv_a = fs::read(a.path().join("C2-moderate_runs.csv")).unwrap();
    let csv_b = fs::read(b.path().join("C2-moderate_runs.csv")).unwrap();
    assert_eq!(
        csv_a, csv_b,
        "identical invocations must give identical CSV"
    );

    for k in [StrategyKind::GreennessEq1, StrategyKind::LeastAllocated] {
        assert!(a
            .path()
            .join(format!("C2-moderate_{k}_report.txt"))
            .is_file());
        assert!(a
            .path()
            .join(format!("C2-moderate_{k}_phase_energy.svg"))
            .is_file());
    }
    let table = fs::read_to_string(a.path().join("C2-moderate_comparison.txt")).unwrap();

    // Recompute every strategy's ei means from the per-run CSV alone.
    let rows = read_runs_csv(csv_a.as_slice()).unwrap();
    assert_eq!(rows.len(), 10);
    for k in [StrategyKind::GreennessEq1, StrategyKind::LeastAllocated] {
        let mine: Vec<_> = rows.iter().filter(|r| r.strategy == k).collect();
        assert_eq!(mine.len(), 5);
        for d in [Denominator::S2, Denominator::S1] {
            let mean = mine
                .iter()
                .map(|r| energy_increase(r.e_s1_j, r.e_s2_j, d).unwrap())
                .sum::<f64>()
                / 5.0;
            let cell = format!("{mean:.3}%");
            assert!(
                table.contains(&cell),
                "{k} {d:?}: {cell} missing from\n{table}"
            );
        }
        for r in &mine {
            let ei = energy_increase(r.e_s1_j, r.e_s2_j, Denominator::S2).unwrap();
            assert!((ei - r.ei_pct).abs() <= 1e-9 * ei.abs().max(1.0));
        }
    }
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.contains("deltas relative to codeco-greenness-eq1"),
        "{stdout}"
    );
}

#[test]
fn dump_metrics_writes_counter_history_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios_dir().join("c1-moderate.toml");
    let mut args = vec![
        "dump-metrics",
        scenario.to_str().unwrap(),
        "--strategy",
        "greenness_eq1",
        "--out",
        dir.path().to_str().unwrap(),
    ];
    args.extend(QUICK);
    let out = ecosched(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("scores [N1="), "{stdout}");
    let csv = fs::read_to_string(
        dir.path()
            .join("C1-moderate_codeco-greenness-eq1_metrics.csv"),
    )
    .unwrap();
    assert!(csv.starts_with("timestamp_s,scope,node_id,link_id,cumulative_joules\n"));
    assert!(csv.contains(",link,N3,wlan0,"));
}

#[test]
fn exit_codes_distinguish_config_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = ecosched(&["validate", "/nonexistent/scenario.toml"]);
    assert_eq!(missing.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        "[scenario]\nconfig_id = \"C1\"\nintensity = \"moderate\"\n[cluster]\n[[cluster.nodes]]\nnode_id = \"N1\"\ncpu_capacity = -1\nidle_watts = 1.0\nmax_dynamic_watts = 1.0\n",
    )
    .unwrap();
    let out = ecosched(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cpu_capacity"), "{}", stderr(&out));

    let one = scenarios_dir().join("c1-moderate.toml");
    let out = ecosched(&[
        "compare",
        one.to_str().unwrap(),
        "--strategy",
        "greenness_eq1",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Output directory path occupied by a regular file.
    let blocker = dir.path().join("occupied");
    fs::write(&blocker, "").unwrap();
    let mut args = vec![
        "run",
        one.to_str().unwrap(),
        "--runs",
        "1",
        "--out",
        blocker.to_str().unwrap(),
    ];
    args.extend(QUICK);
    let out = ecosched(&args);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}
