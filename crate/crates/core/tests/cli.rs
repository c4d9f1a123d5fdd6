use std::path::Path;
use std::process::{Command, Output};

use corrrm::checkpoint::Checkpoint;
use corrrm::eval::{generate_synthetic, SyntheticConfig};

fn corrrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrrm"))
        .args(args)
        .env_remove("CORRRM_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_data(dir: &Path) -> String {
    let cfg = SyntheticConfig {
        n_rows: 60,
        n_cols: 30,
        n_components: 4,
        dim: 2,
        atom: corrrm::mathfn::GammaParams {
            shape: 0.3,
            rate: 3.0,
        },
        ..SyntheticConfig::default()
    };
    let (m, _) = generate_synthetic(&cfg, 1).unwrap();
    let path = dir.join("data.tsv");
    std::fs::write(&path, m.to_tsv()).unwrap();
    path.display().to_string()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

const SMALL: &[&str] = &[
    "--set",
    "truncation=5",
    "--set",
    "dim=2",
    "--max-iters",
    "3",
    "--heldout-rows",
    "10",
];

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&corrrm(&["--help"])), 0);
    assert_eq!(code(&corrrm(&["--version"])), 0);
    assert_eq!(code(&corrrm(&["fit", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&corrrm(&[])), 1);
    assert_eq!(code(&corrrm(&["nope"])), 1);
    assert_eq!(code(&corrrm(&["fit"])), 1);
    let out = corrrm(&[
        "ingest",
        "--input",
        "/nonexistent/x.tsv",
        "--output",
        "/tmp/never",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("/nonexistent/x.tsv"));
}

#[test]
fn ingest_reports_line_of_bad_triplet() {
    let dir = tempfile::tempdir().unwrap();
    let input = p(dir.path(), "in.tsv");
    std::fs::write(&input, "0\t0\t1\n1\tx\t2\n").unwrap();
    let out = corrrm(&["ingest", "--input", &input, "--output", &p(dir.path(), "out.tsv")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn ingest_canonicalizes_dictionary_ids() {
    let dir = tempfile::tempdir().unwrap();
    let input = p(dir.path(), "in.tsv");
    std::fs::write(&input, "bob\tjazz\t2\nann\trock\t1\nbob\trock\t3\n").unwrap();
    let output = p(dir.path(), "out.tsv");
    let out = corrrm(&[
        "ingest",
        "--input",
        &input,
        "--output",
        &output,
        "--id-mode",
        "dictionary",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&output).unwrap();
    assert!(text.starts_with("# corrrm "));
    let back = corrrm::data::parse_triplets(&text, corrrm::data::IdMode::Dense, None).unwrap();
    assert_eq!(back.matrix.n_rows(), 2);
    assert_eq!(back.matrix.total(), 6);
}

#[test]
fn fit_eval_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let cp = p(dir.path(), "model.json");
    let mut args = vec!["fit", "--data", &data, "--out", &cp, "--seed", "3"];
    args.extend(SMALL);
    let out = corrrm(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let checkpoint = Checkpoint::load(Path::new(&cp)).unwrap();
    assert_eq!(checkpoint.run_config["seed"], "3");
    assert_eq!(checkpoint.run_config["truncation"], "5");
    assert!(!checkpoint.run_config.contains_key("threads"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{cp}.report.json")).unwrap()).unwrap();
    assert_eq!(report["n_train_rows"], 50);
    assert!(report["code_version"].is_string());

    let eval_out = p(dir.path(), "eval.json");
    let out = corrrm(&["eval", "--checkpoint", &cp, "--data", &data, "--out", &eval_out]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&eval_out).unwrap()).unwrap();
    assert_eq!(eval["heldout_rows"], 10);
    assert_eq!(eval["seed"], 3);
    let perplexity = eval["report"]["perplexity"].as_f64().unwrap();
    assert!(perplexity > 1.0 && perplexity < 30.0, "{perplexity}");

    let export_dir = p(dir.path(), "export");
    let out = corrrm(&[
        "export",
        "--checkpoint",
        &cp,
        "--out-dir",
        &export_dir,
        "--correlations",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["sticks.tsv", "components.tsv", "correlations.tsv"] {
        let text = std::fs::read_to_string(Path::new(&export_dir).join(name)).unwrap();
        assert!(text.starts_with("# corrrm "), "{name}");
        assert!(text.contains("# seed=3"), "{name}");
    }
}

#[test]
fn eval_rejects_bad_observed_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let cp = p(dir.path(), "model.json");
    let mut args = vec!["fit", "--data", &data, "--out", &cp];
    args.extend(SMALL);
    assert_eq!(code(&corrrm(&args)), 0);
    for bad in ["0", "1", "1.5"] {
        let out = corrrm(&[
            "eval",
            "--checkpoint",
            &cp,
            "--data",
            &data,
            "--obs-fraction",
            bad,
        ]);
        assert_eq!(code(&out), 1, "{bad}");
        assert!(stderr(&out).contains("obs-fraction"));
    }
}

#[test]
fn correlation_export_needs_locations() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let cp = p(dir.path(), "model.json");
    let mut args = vec!["fit", "--data", &data, "--out", &cp, "--variant", "hgp"];
    args.extend(SMALL);
    assert_eq!(code(&corrrm(&args)), 0);
    let out_dir = p(dir.path(), "export");
    let out = corrrm(&[
        "export",
        "--checkpoint",
        &cp,
        "--out-dir",
        &out_dir,
        "--correlations",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("hgp"), "{}", stderr(&out));
    let out = corrrm(&["export", "--checkpoint", &cp, "--out-dir", &out_dir]);
    assert_eq!(code(&out), 0);
    assert!(!Path::new(&out_dir).join("correlations.tsv").exists());
}

#[test]
fn config_file_and_overrides_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let cfg = p(dir.path(), "run.cfg");
    std::fs::write(&cfg, "# small run\ntruncation=4\ndim=2\nsigma_l2=0.2\n").unwrap();
    let cp = p(dir.path(), "model.json");
    let out = corrrm(&[
        "fit",
        "--data",
        &data,
        "--out",
        &cp,
        "--config",
        &cfg,
        "--set",
        "sigma_l2=0.3",
        "--max-iters",
        "2",
        "--heldout-rows",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let c = Checkpoint::load(Path::new(&cp)).unwrap();
    assert_eq!(c.run_config["truncation"], "4");
    assert_eq!(c.run_config["sigma_l2"], "0.3");
    assert_eq!(c.model.sigma_l2, 0.3);

    std::fs::write(&cfg, "bogus_key=1\n").unwrap();
    let out = corrrm(&["fit", "--data", &data, "--out", &cp, "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("bogus_key"));
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let cp = p(dir.path(), "model.json");
    let mut args = vec![
        "fit",
        "--data",
        &data,
        "--out",
        &cp,
        "--set",
        "checkpoint_every=1",
        "--set",
        "min_iters=3",
    ];
    args.extend(SMALL);
    assert_eq!(code(&corrrm(&args)), 0);
    assert!(Checkpoint::load(Path::new(&cp)).is_ok());
}

#[test]
fn sample_writes_header_and_rows() {
    let out = corrrm(&["sample", "--n", "2", "--truncation", "3", "--seed", "5"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 6);
    assert!(text.contains("# seed=5"));
    assert_eq!(
        text,
        stdout(&corrrm(&[
            "sample",
            "--n",
            "2",
            "--truncation",
            "3",
            "--seed",
            "5"
        ]))
    );

    let empty = corrrm(&["sample", "--n", "0"]);
    assert_eq!(code(&empty), 0);
    assert!(empty.stdout.is_empty());

    for kind in ["beta-bernoulli-logistic", "beta-bernoulli"] {
        let beta = corrrm(&["sample", "--kind", kind, "--truncation", "4"]);
        assert_eq!(code(&beta), 0, "{}", stderr(&beta));
        for line in stdout(&beta).lines().filter(|l| !l.starts_with('#')) {
            let x: f64 = line.split('\t').nth(4).unwrap().parse().unwrap();
            assert!(x == 0.0 || x == 1.0);
        }
    }
}

#[test]
fn verify_exit_codes_follow_outcome() {
    let out = corrrm(&["verify", "laplace", "--draws", "20000"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS"));

    let out = corrrm(&["verify", "finiteness", "--draws-per-atom", "200"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("CONVERGENT"));

    let out = corrrm(&[
        "verify",
        "finiteness",
        "--sigma-l2",
        "1.5",
        "--draws-per-atom",
        "200",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("DIVERGENT"));

    let out = corrrm(&["verify", "covariance", "--draws", "100000"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));

    // a reference that is plainly wrong must fail
    let out = corrrm(&[
        "verify", "laplace", "--draws", "20000", "--c", "1", "--H", "1", "--r", "1", "--n-se", "0",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn threads_flag_rejects_garbage_env() {
    let out = Command::new(env!("CARGO_BIN_EXE_corrrm"))
        .args(["sample", "--n", "0"])
        .env("CORRRM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("CORRRM_THREADS"));
}
