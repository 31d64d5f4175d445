use std::path::Path;
use std::process::{Command, Output};

fn lrcox(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrcox"))
        .args(args)
        .current_dir(dir)
        .env("LRCOX_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SIM: [&str; 14] = [
    "--populations", "3", "--p", "8", "--r-star", "1", "--s-star", "3", "--n-pattern", "60,80", "--n-test", "50",
    "--seed", "4",
];

fn simulate(dir: &Path, out: &str) {
    let mut args = vec!["simulate"];
    args.extend(SIM);
    args.extend(["--n-validation", "30", "--out", out]);
    let o = lrcox(&args, dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn simulate_fit_evaluate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "sim");
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.join("sim/manifest.json"))).unwrap();
    assert_eq!(manifest["populations"].as_array().unwrap().len(), 3);
    assert!(read(dir.join("sim/pop01_train.csv")).starts_with("time,status,x1,"));

    let o = lrcox(&["fit", "--manifest", "sim/manifest.json", "--rank", "1", "--sparsity", "3", "--out", "fit"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let coef = read(dir.join("fit/coefficients.csv"));
    assert!(coef.starts_with("predictor,pop01,pop02,pop03\n"));
    let nonzero_rows = coef
        .lines()
        .skip(1)
        .filter(|l| l.split(',').skip(1).any(|v| v.parse::<f64>().unwrap() != 0.0))
        .count();
    assert!(nonzero_rows <= 3);
    let fit: serde_json::Value = serde_json::from_str(&read(dir.join("fit/fit.json"))).unwrap();
    assert_eq!(fit["method"], "lrcox");
    assert!(read(dir.join("fit/D.csv")).starts_with("factor,singular_value\n"));

    let o = lrcox(
        &[
            "evaluate", "--fit", "fit", "--manifest", "sim/manifest.json", "--truth", "sim/truth_B.csv", "--sigma",
            "sim/sigma.json", "--out", "eval",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value = serde_json::from_str(&read(dir.join("eval/metrics.json"))).unwrap();
    assert!(metrics["model_error"].as_f64().unwrap() >= 0.0);
    let c = metrics["c_index"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&c));
    assert!(read(dir.join("eval/plot_data.csv")).starts_with("method,metric,population,value\n"));
}

#[test]
fn separate_methods_and_transfer_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "sim");
    for method in ["sep-ridge", "proj-sep-lasso"] {
        let o = lrcox(&["fit", "--manifest", "sim/manifest.json", "--method", method, "--rank", "1", "--out", method], dir);
        assert_eq!(code(&o), 0, "{method}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = lrcox(
        &["fit", "--manifest", "sim/manifest.json", "--method", "convex", "--lambda", "1", "--gamma", "1", "--out", "cvx"],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = lrcox(&["fit", "--manifest", "sim/manifest.json", "--rank", "1", "--sparsity", "3", "--out", "fit"], dir);
    assert_eq!(code(&o), 0);
    let o = lrcox(
        &["evaluate", "--fit", "fit", "--manifest", "sim/manifest.json", "--transfer-factors", "fit/U.csv", "--out", "tr"],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn cv_writes_scores_for_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "sim");
    let o = lrcox(
        &["cv", "--manifest", "sim/manifest.json", "--s-grid", "2,3", "--r-grid", "1,2", "--folds", "3", "--out", "cv"],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let scores = read(dir.join("cv/scores.csv"));
    let lines: Vec<&str> = scores.lines().collect();
    assert_eq!(lines[0], "sparsity,r=1,r=2");
    assert_eq!(lines.len(), 3);
    let cv: serde_json::Value = serde_json::from_str(&read(dir.join("cv/cv.json"))).unwrap();
    assert!(cv["selected_rank"].as_u64().unwrap() <= 2);
    assert!(dir.join("cv/coefficients.csv").exists());
}

#[test]
fn exit_codes_distinguish_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "sim");
    // Usage and configuration errors.
    assert_eq!(code(&lrcox(&["fit", "--bogus"], dir)), 2);
    let o = lrcox(&["fit", "--manifest", "sim/manifest.json", "--rank", "9", "--out", "x"], dir);
    assert_eq!(code(&o), 2);
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert_eq!(code(&lrcox(&["simulate", "--s-star", "100", "--p", "10", "--out", "y"], dir)), 2);
    // Data errors.
    assert_eq!(code(&lrcox(&["fit", "--manifest", "missing.json", "--out", "x"], dir)), 3);
    let csv = dir.join("sim/pop01_train.csv");
    let text = read(&csv);
    let (header, rest) = text.split_once('\n').unwrap();
    let bad = format!("{header}\n{}", rest.replacen(",1,", ",7,", 1));
    std::fs::write(&csv, bad).unwrap();
    assert_eq!(code(&lrcox(&["fit", "--manifest", "sim/manifest.json", "--out", "x"], dir)), 3);
    // Penalty cap reached.
    simulate(dir, "sim2");
    let o = lrcox(
        &["fit", "--manifest", "sim2/manifest.json", "--rank", "1", "--sparsity", "2", "--max-rho-steps", "1", "--out", "capped"],
        dir,
    );
    assert_eq!(code(&o), 4);
    assert!(dir.join("capped/coefficients.csv").exists());
}

#[test]
fn config_file_and_flags_combine() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "sim");
    std::fs::write(dir.join("solver.json"), r#"{"mu": 0.5, "rank": 1, "sparsity": 2}"#).unwrap();
    let o = lrcox(&["fit", "--manifest", "sim/manifest.json", "--config", "solver.json", "--sparsity", "3", "--out", "f"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_str(&read(dir.join("f/fit.json"))).unwrap();
    assert_eq!(fit["settings"]["sparsity"], 3);
    assert_eq!(fit["settings"]["mu"], 0.5);
    assert_eq!(fit["settings"]["rank"], 1);
    std::fs::write(dir.join("broken.json"), "{").unwrap();
    assert_eq!(code(&lrcox(&["fit", "--manifest", "sim/manifest.json", "--config", "broken.json", "--out", "g"], dir)), 2);
}
