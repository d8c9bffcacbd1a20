use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use m2r_core::storage::{export_corpus, load_sentence_store, load_token_store};
use m2r_core::synth::{benchmark_model_config, generate, CorpusSpec};
use m2r_core::ToyModel;

const SMALL: &str = "[synthetic]\nn_train = 200\nn_test = 40\n";

fn m2r(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_m2r"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    dir
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn missing_config_is_a_configuration_error() {
    let dir = workspace();
    let out = m2r(dir.path(), &["eval", "--config", "does-not-exist.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_store_path_is_a_configuration_error() {
    let dir = workspace();
    fs::write(
        dir.path().join("bad.toml"),
        format!("{SMALL}[stores]\ntoken = \"nowhere.m2rd\"\n"),
    )
    .unwrap();
    let out = m2r(dir.path(), &["decode", "--config", "bad.toml", "--mode", "knn_only"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.m2rd"));
}

#[test]
fn invalid_parameters_are_rejected_up_front() {
    let dir = workspace();
    for args in [
        &["decode", "--config", "run.toml", "--lambda", "1.5"][..],
        &["decode", "--config", "run.toml", "--tau", "0"],
        &["decode", "--config", "run.toml", "--budget-s", "-1"],
        &["sweep", "--config", "run.toml", "--axis", "lambda", "--values", "0.1,2"],
    ] {
        assert_eq!(m2r(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
    assert!(
        !dir.path().join("m2r-out").exists(),
        "nothing runs when validation fails"
    );
}

#[test]
fn empty_sweep_is_an_error() {
    let dir = workspace();
    let out = m2r(
        dir.path(),
        &["sweep", "--config", "run.toml", "--axis", "n_max", "--values"],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = m2r(dir.path(), &["sweep", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2), "no axis given");
}

#[test]
fn untimed_eval_is_byte_reproducible() {
    let dir = workspace();
    let args = [
        "eval",
        "--config",
        "run.toml",
        "--modes",
        "baseline,m2r",
        "--no-timing",
        "--seed",
        "5",
    ];
    let run = |out: &str| {
        let mut a = args.to_vec();
        a.extend(["--out-dir", out]);
        assert!(m2r(dir.path(), &a).status.success());
    };
    run("a");
    run("b");
    for name in [
        "eval_baseline.csv",
        "eval_m2r.csv",
        "eval_m2r.summary",
        "comparison.csv",
    ] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn disabled_retrieval_matches_baseline_exactly() {
    let dir = workspace();
    let out = m2r(
        dir.path(),
        &[
            "eval",
            "--config",
            "run.toml",
            "--modes",
            "baseline,m2r",
            "--lambda",
            "0",
            "--n-max",
            "0",
            "--no-timing",
        ],
    );
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("m2r-out/comparison.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1], rows[1][1], "cer");
    assert_eq!(rows[1][2], "0.00", "relative reduction");
    assert_eq!(rows[0][3..7], rows[1][3..7], "S, D, I, reference length");
}

#[test]
fn lambda_sweep_at_zero_equals_knn_free_decoding() {
    let dir = workspace();
    assert!(m2r(
        dir.path(),
        &["eval", "--config", "run.toml", "--modes", "baseline", "--no-timing"]
    )
    .status
    .success());
    let base = csv_rows(&dir.path().join("m2r-out/comparison.csv"));
    let out = m2r(
        dir.path(),
        &[
            "sweep",
            "--config",
            "run.toml",
            "--mode",
            "knn_only",
            "--axis",
            "lambda",
            "--values",
            "0,0.3",
            "--no-timing",
        ],
    );
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("m2r-out/sweep_lambda.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1], base[0][1]);
    assert_eq!(rows[0][2], "NA");
    let (c0, c3): (f64, f64) = (rows[0][1].parse().unwrap(), rows[1][1].parse().unwrap());
    assert!(c3 < c0, "kNN at 0.3 should help: {c3} vs {c0}");
}

#[test]
fn build_is_deterministic_and_loadable() {
    let dir = workspace();
    for out in ["t1.m2rd", "t2.m2rd"] {
        assert!(m2r(
            dir.path(),
            &["build", "--config", "run.toml", "--kind", "token", "--out", out]
        )
        .status
        .success());
    }
    let a = fs::read(dir.path().join("t1.m2rd")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("t2.m2rd")).unwrap());
    let store = load_token_store(dir.path().join("t1.m2rd")).unwrap();
    assert_eq!((store.dim(), store.vocab_size()), (32, 64));

    let out = m2r(
        dir.path(),
        &["build", "--config", "run.toml", "--kind", "sentence", "--out", "s.m2rd"],
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("entries=200") && stdout.contains("self_retrieval=ok"),
        "{stdout}"
    );
}

#[test]
fn prebuilt_stores_reproduce_in_memory_results() {
    let dir = workspace();
    for (kind, out) in [("token", "t.m2rd"), ("sentence", "s.m2rd")] {
        assert!(m2r(
            dir.path(),
            &["build", "--config", "run.toml", "--kind", kind, "--out", out]
        )
        .status
        .success());
    }
    fs::write(
        dir.path().join("stores.toml"),
        format!("{SMALL}[stores]\ntoken = \"t.m2rd\"\nsentence = \"s.m2rd\"\n"),
    )
    .unwrap();
    let eval = |cfg: &str, out: &str| {
        let ok = m2r(
            dir.path(),
            &[
                "eval",
                "--config",
                cfg,
                "--modes",
                "m2r",
                "--no-timing",
                "--out-dir",
                out,
            ],
        );
        assert!(ok.status.success());
        fs::read(dir.path().join(out).join("eval_m2r.csv")).unwrap()
    };
    assert_eq!(eval("run.toml", "fresh"), eval("stores.toml", "loaded"));
}

#[test]
fn mismatched_store_is_a_runtime_error() {
    let dir = workspace();
    // A sentence store where a token store is expected.
    assert!(m2r(
        dir.path(),
        &["build", "--config", "run.toml", "--kind", "sentence", "--out", "s.m2rd"]
    )
    .status
    .success());
    fs::write(
        dir.path().join("bad.toml"),
        format!("{SMALL}[stores]\ntoken = \"s.m2rd\"\n"),
    )
    .unwrap();
    let out = m2r(dir.path(), &["decode", "--config", "bad.toml", "--mode", "knn_only"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exports_build_the_same_stores_as_the_model() {
    let dir = workspace();
    let spec = CorpusSpec {
        n_train: 200,
        n_test: 40,
        ..CorpusSpec::default()
    };
    let bench = generate(&spec, ToyModel::new(benchmark_model_config(7)).unwrap()).unwrap();
    export_corpus(&bench.model, &bench.train, false, dir.path().join("train.m2rx")).unwrap();

    for (kind, native, replayed) in [("token", "t.m2rd", "tx.m2rd"), ("sentence", "s.m2rd", "sx.m2rd")] {
        assert!(m2r(
            dir.path(),
            &["build", "--config", "run.toml", "--kind", kind, "--out", native]
        )
        .status
        .success());
        let out = m2r(
            dir.path(),
            &["build", "--kind", kind, "--exports", "train.m2rx", "--out", replayed],
        );
        assert!(out.status.success());
        assert_eq!(
            fs::read(dir.path().join(native)).unwrap(),
            fs::read(dir.path().join(replayed)).unwrap(),
            "{kind} store"
        );
    }
    assert_eq!(load_sentence_store(dir.path().join("sx.m2rd")).unwrap().len(), 200);
}
