//! End-to-end tests of the command-line surface: exit codes, determinism
//! and the simulate -> fit -> prune -> eval workflow.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hmmglasso::io::ModelDocument;
use hmmglasso::lambda_uni;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hmmglasso"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn tempdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hmmglasso_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn simulate(dir: &Path, n: usize, p: usize, seed: u64) {
    let out = run(
        &[
            "simulate",
            "--model",
            "1",
            "--k",
            "2",
            "--alpha",
            "2.5",
            "--n",
            &n.to_string(),
            "--p",
            &p.to_string(),
            "--seed",
            &seed.to_string(),
            "--out-prefix",
            "sim",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn fit_resolves_universal_lambda_and_is_deterministic() {
    let dir = tempdir("fit");
    simulate(&dir, 300, 5, 1);
    let args = [
        "fit",
        "--data",
        "sim.data.csv",
        "--k",
        "2",
        "--restarts",
        "5",
        "--seed",
        "9",
        "--out",
        "model.json",
    ];
    let out = run(&args, &dir);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let doc = ModelDocument::read_from(&dir.join("model.json")).unwrap();
    assert_eq!(doc.n, 300);
    assert_eq!(doc.p, 5);
    assert_eq!(doc.config.lambda, lambda_uni(300, 5));
    assert_eq!(doc.config.penalty, "parcor");
    assert_eq!(doc.model.num_states, 2);

    // Same seed and flags, byte-identical output.
    let first = std::fs::read(dir.join("model.json")).unwrap();
    let mut args2 = args;
    args2[args.len() - 1] = "model2.json";
    assert!(run(&args2, &dir).status.success());
    let second = std::fs::read(dir.join("model2.json")).unwrap();
    assert_eq!(first, second);

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn fit_exits_with_collapse_code_and_names_pi_min() {
    let dir = tempdir("collapse");
    // Single-cluster data cannot support three states at a high pi_min.
    simulate(&dir, 200, 3, 2);
    let out = run(
        &[
            "fit",
            "--data",
            "sim.data.csv",
            "--k",
            "3",
            "--pi-min",
            "0.34",
            "--restarts",
            "5",
            "--seed",
            "4",
            "--out",
            "model.json",
        ],
        &dir,
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "expected the collapse exit code"
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("pi_min = 0.34"),
        "stderr must name the threshold: {stderr}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn prune_trace_covers_range_and_selected_minimizes_criterion() {
    let dir = tempdir("prune");
    simulate(&dir, 400, 4, 3);
    let out = run(
        &[
            "prune",
            "--data",
            "sim.data.csv",
            "--kmin",
            "1",
            "--kmax",
            "5",
            "--criterion",
            "mmdl",
            "--restarts",
            "5",
            "--seed",
            "5",
            "--out",
            "trace.json",
            "--out-model",
            "best.json",
        ],
        &dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let text = std::fs::read_to_string(dir.join("trace.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let steps = doc["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 5);
    let ks: Vec<u64> = steps.iter().map(|s| s["k"].as_u64().unwrap()).collect();
    assert_eq!(ks, vec![5, 4, 3, 2, 1]);

    let selected = doc["selected_k"].as_u64().unwrap();
    let best_mmdl = steps
        .iter()
        .map(|s| s["mmdl"].as_f64().unwrap())
        .fold(f64::INFINITY, f64::min);
    let selected_step = steps
        .iter()
        .find(|s| s["k"].as_u64() == Some(selected))
        .unwrap();
    assert_eq!(selected_step["mmdl"].as_f64().unwrap(), best_mmdl);

    // The selected model document matches the trace's selection.
    let best = ModelDocument::read_from(&dir.join("best.json")).unwrap();
    assert_eq!(best.model.num_states as u64, selected);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_single_state_model_sums_row_densities() {
    let dir = tempdir("eval");
    simulate(&dir, 120, 3, 4);
    assert!(run(
        &[
            "fit",
            "--data",
            "sim.data.csv",
            "--k",
            "1",
            "--restarts",
            "2",
            "--seed",
            "1",
            "--out",
            "model.json",
        ],
        &dir,
    )
    .status
    .success());

    let out = run(
        &["eval", "--model", "model.json", "--data", "sim.data.csv"],
        &dir,
    );
    assert!(out.status.success());
    let record: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let ll = record["log_likelihood"].as_f64().unwrap();

    // Independent check: sum per-row log densities of the saved model.
    let doc = ModelDocument::read_from(&dir.join("model.json")).unwrap();
    let model = doc.model.to_model().unwrap();
    let data = hmmglasso::io::read_matrix(
        &dir.join("sim.data.csv"),
        &hmmglasso::io::ReadOptions::default(),
    )
    .unwrap();
    let direct: f64 = (0..data.nrows())
        .map(|t| {
            hmmglasso::log_emission_density(&data.row(t).transpose(), &model.states[0]).unwrap()
        })
        .sum();
    assert!((ll - direct).abs() < 1e-8);

    // Determinism of eval output.
    let again = run(
        &["eval", "--model", "model.json", "--data", "sim.data.csv"],
        &dir,
    );
    assert_eq!(out.stdout, again.stdout);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_prefers_coherent_over_shuffled_sequences() {
    let dir = tempdir("evalperm");
    simulate(&dir, 500, 4, 6);
    assert!(run(
        &[
            "fit",
            "--data",
            "sim.data.csv",
            "--k",
            "2",
            "--restarts",
            "5",
            "--seed",
            "2",
            "--out",
            "model.json",
        ],
        &dir,
    )
    .status
    .success());

    // Shuffle rows: destroys the temporal structure a two-state HMM exploits.
    let text = std::fs::read_to_string(dir.join("sim.data.csv")).unwrap();
    let mut rows: Vec<&str> = text.lines().collect();
    let m = rows.len();
    let mut state = 88172645463325252u64;
    for i in (1..m).rev() {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        rows.swap(i, (state % (i as u64 + 1)) as usize);
    }
    std::fs::write(dir.join("shuffled.csv"), rows.join("\n")).unwrap();

    let ll = |file: &str| -> f64 {
        let out = run(&["eval", "--model", "model.json", "--data", file], &dir);
        assert!(out.status.success());
        let v: serde_json::Value =
            serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
        v["log_likelihood"].as_f64().unwrap()
    };
    let coherent = ll("sim.data.csv");
    let shuffled = ll("shuffled.csv");
    assert!(
        coherent > shuffled,
        "coherent {coherent} must beat shuffled {shuffled}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn fit_accepts_a_label_file_initialization() {
    let dir = tempdir("initfile");
    simulate(&dir, 200, 4, 5);
    // Initialize from the true labels written by simulate.
    let out = run(
        &[
            "fit",
            "--data",
            "sim.data.csv",
            "--k",
            "2",
            "--init",
            "file",
            "--init-file",
            "sim.labels.csv",
            "--out",
            "model.json",
        ],
        &dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc = ModelDocument::read_from(&dir.join("model.json")).unwrap();
    assert_eq!(doc.model.num_states, 2);

    // Missing --init-file is a usage error.
    let out = run(
        &[
            "fit",
            "--data",
            "sim.data.csv",
            "--k",
            "2",
            "--init",
            "file",
            "--out",
            "m.json",
        ],
        &dir,
    );
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_inputs_produce_usage_exit_code() {
    let dir = tempdir("badinput");

    // Unknown flag.
    let out = run(
        &["fit", "--data", "x.csv", "--k", "2", "--frobnicate"],
        &dir,
    );
    assert_eq!(out.status.code(), Some(2));

    // Non-numeric cell, with the line number in the message.
    std::fs::write(dir.join("bad.csv"), "1,2\n3,oops\n").unwrap();
    let out = run(
        &["fit", "--data", "bad.csv", "--k", "1", "--out", "m.json"],
        &dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    // Empty file.
    std::fs::write(dir.join("empty.csv"), "").unwrap();
    let out = run(
        &["fit", "--data", "empty.csv", "--k", "1", "--out", "m.json"],
        &dir,
    );
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bench_exp2_reports_per_state_rates() {
    let dir = tempdir("bench2");
    let out = run(
        &[
            "bench",
            "--experiment",
            "exp2",
            "--model",
            "1",
            "--k",
            "2",
            "--n",
            "250",
            "--p",
            "4",
            "--alphas",
            "2,4",
            "--replicates",
            "2",
            "--methods",
            "glasso,km+glasso",
            "--restarts",
            "3",
            "--seed",
            "6",
            "--out",
            "exp2.jsonl",
        ],
        &dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.join("exp2.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // 2 alphas x 2 replicates x 2 methods x 2 states.
    assert_eq!(lines.len(), 16);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in [
            "replicate",
            "method",
            "alpha",
            "k_true",
            "state",
            "tpr",
            "fpr",
        ] {
            assert!(v.get(key).is_some(), "missing {key} in {v}");
        }
        let tpr = v["tpr"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&tpr));
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bench_writes_line_delimited_records() {
    let dir = tempdir("bench");
    let out = run(
        &[
            "--threads",
            "1",
            "bench",
            "--experiment",
            "exp1",
            "--model",
            "1",
            "--k",
            "2",
            "--n",
            "200",
            "--p",
            "4",
            "--alphas",
            "3",
            "--replicates",
            "2",
            "--methods",
            "diagcov",
            "--criteria",
            "mmdl,bic",
            "--kmax",
            "3",
            "--restarts",
            "3",
            "--seed",
            "8",
            "--out",
            "report.jsonl",
        ],
        &dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.join("report.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // 2 replicates x 1 method x 2 criteria.
    assert_eq!(lines.len(), 4);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in [
            "replicate",
            "method",
            "criterion",
            "selected_k",
            "ari",
            "runtime_s",
        ] {
            assert!(v.get(key).is_some(), "missing {key} in {v}");
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}
