use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, OnceLock};

use codano_core::checkpoint::Checkpoint;
use codano_core::field::{GridFunction, Mesh};
use codano_core::simdata::DatasetContainer;
use serde_json::Value;

const SMALL: &[&str] = &[
    "--model.latent_grid",
    "[16,16]",
    "--model.modes",
    "[4,4]",
    "--model.width",
    "8",
    "--model.d_v",
    "8",
    "--model.d_k",
    "4",
    "--model.encoder_layers",
    "1",
];

fn codano(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codano"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = codano(args);
    assert!(
        out.status.success(),
        "codano {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn kolmogorov(&self) -> PathBuf {
        self.root.join("k/dataset.cdno")
    }
    fn rb(&self) -> PathBuf {
        self.root.join("rb/dataset.cdno")
    }
    fn pretrained(&self) -> PathBuf {
        self.root.join("pre/checkpoint.cdno")
    }
    fn finetuned(&self) -> PathBuf {
        self.root.join("ft/checkpoint.cdno")
    }
}

/// Small datasets, one pretrained and one fine-tuned checkpoint, shared by all tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let r = |s: &str| root.join(s);
        ok(&[
            "simulate",
            "--system",
            "kolmogorov",
            "--n",
            "32",
            "--snapshots",
            "20",
            "--out",
            p(&r("k")),
        ]);
        ok(&[
            "simulate",
            "--system",
            "rayleigh-benard",
            "--preset",
            "ra12k",
            "--n",
            "32",
            "--snapshots",
            "20",
            "--out",
            p(&r("rb")),
        ]);
        let (k, pre) = (r("k/dataset.cdno"), r("pre"));
        let mut a = vec!["pretrain", "--dataset", p(&k), "--epochs", "2", "--out", p(&pre)];
        a.extend_from_slice(SMALL);
        ok(&a);
        ok(&[
            "finetune",
            "--checkpoint",
            p(&r("pre/checkpoint.cdno")),
            "--dataset",
            p(&r("rb/dataset.cdno")),
            "--epochs",
            "2",
            "--out",
            p(&r("ft")),
        ]);
        Fixture { _dir: dir, root }
    })
}

#[test]
fn kolmogorov_desk_dataset_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "simulate",
        "--system",
        "kolmogorov",
        "--re",
        "500",
        "--n",
        "64",
        "--snapshots",
        "200",
        "--out",
        p(dir.path()),
    ]);
    let ds = DatasetContainer::read(&dir.path().join("dataset.cdno")).unwrap();
    assert_eq!(ds.len(), 200);
    assert_eq!(ds.variables(), ["u_x", "u_y"]);
    assert_eq!(ds.mesh().len(), 64 * 64);
    let summary = json(&dir.path().join("summary.json"));
    assert!(summary["diagnostics"]["max_spectral_divergence"].as_f64().unwrap() < 1e-8);
    assert!(String::from_utf8_lossy(&out.stdout).contains("variables: u_x, u_y"));
}

#[test]
fn rayleigh_benard_preset_has_three_variables() {
    let ds = DatasetContainer::read(&fixture().rb()).unwrap();
    assert_eq!(ds.variables(), ["u_x", "u_y", "T"]);
    let cfg = std::fs::read_to_string(fixture().root.join("rb/config.toml")).unwrap();
    assert!(cfg.contains("preset = \"ra12k\""));
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(codano(&["simulate", "--system", "kolmogorov"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = codano(&["simulate", "--out", p(dir.path()), "--sim.reynolds", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sim.reynolds"));
    std::fs::write(dir.path().join("c.toml"), "[model]\nwidht = 3\n").unwrap();
    let c = dir.path().join("c.toml");
    assert_eq!(
        codano(&["gradcheck", "--config", p(&c), "--out", p(dir.path())])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn pretrained_checkpoint_has_encoders_for_exactly_the_dataset_variables() {
    let ck = Checkpoint::read(&fixture().pretrained()).unwrap();
    let vspe: std::collections::BTreeSet<String> = ck
        .params
        .names()
        .filter_map(|n| n.strip_prefix("vspe.")?.split('.').next().map(String::from))
        .collect();
    assert_eq!(vspe.into_iter().collect::<Vec<_>>(), ["u_x", "u_y"]);
    assert_eq!(ck.model.variables, ["u_x", "u_y"]);
}

#[test]
fn resumed_pretraining_continues_bit_identically() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (full, resumed) = (dir.path().join("full"), dir.path().join("resumed"));
    let k = f.kolmogorov();
    let mut a = vec![
        "pretrain",
        "--dataset",
        p(&k),
        "--epochs",
        "3",
        "--checkpoint-every",
        "2",
        "--out",
        p(&full),
    ];
    a.extend_from_slice(SMALL);
    ok(&a);
    let ck2 = full.join("checkpoint-epoch0002.cdno");
    ok(&[
        "pretrain",
        "--dataset",
        p(&k),
        "--epochs",
        "3",
        "--resume",
        p(&ck2),
        "--out",
        p(&resumed),
    ]);
    let lines = |d: &Path| -> Vec<String> {
        std::fs::read_to_string(d.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .map(String::from)
            .collect()
    };
    assert_eq!(lines(&full)[3], lines(&resumed)[0]);
    assert_eq!(
        std::fs::read(full.join("checkpoint.cdno")).unwrap(),
        std::fs::read(resumed.join("checkpoint.cdno")).unwrap()
    );
}

#[test]
fn echoed_config_reproduces_outputs() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let k = f.kolmogorov();
    let mut args = vec![
        "pretrain",
        "--dataset",
        p(&k),
        "--epochs",
        "1",
        "--mask.variable_fraction",
        "0.3",
        "--seed",
        "4",
        "--out",
        p(&a),
    ];
    args.extend_from_slice(SMALL);
    ok(&args);
    let echo = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(echo.contains("variable_fraction = 0.3"));
    ok(&["pretrain", "--config", p(&a.join("config.toml")), "--out", p(&b)]);
    assert_eq!(
        std::fs::read(a.join("checkpoint.cdno")).unwrap(),
        std::fs::read(b.join("checkpoint.cdno")).unwrap()
    );
}

#[test]
fn schema_mismatch_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let k = fixture().kolmogorov();
    let out = codano(&[
        "pretrain",
        "--dataset",
        p(&k),
        "--model.variables",
        "['T']",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset schema"));
}

#[test]
fn finetuning_on_a_new_variable_adds_one_encoder_and_the_predictor() {
    let diff = json(&fixture().root.join("ft/param_diff.json"));
    assert_eq!(diff["new_variables"], serde_json::json!(["T"]));
    assert!(diff["changed"].as_array().unwrap().is_empty());
    assert!(diff["removed"].as_array().unwrap().is_empty());
    let added: Vec<&str> = diff["added"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(added
        .iter()
        .all(|n| n.starts_with("predictor.") || n.starts_with("vspe.T.")));
    assert!(added.iter().any(|n| n.starts_with("predictor.")));
    assert!(added.iter().any(|n| n.starts_with("vspe.T.")));
}

#[test]
fn few_shot_uses_exactly_five_pairs_and_frozen_encoder_is_unchanged() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (ck, rb) = (f.pretrained(), f.rb());
    let out = ok(&[
        "finetune",
        "--checkpoint",
        p(&ck),
        "--dataset",
        p(&rb),
        "--few-shot",
        "5",
        "--freeze-encoder",
        "--epochs",
        "2",
        "--out",
        p(dir.path()),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("train pairs: 5"));
    assert_eq!(json(&dir.path().join("heldout.json"))["train_pairs"], 5);
    let before = Checkpoint::read(&ck).unwrap().params;
    let after = Checkpoint::read(&dir.path().join("checkpoint.cdno")).unwrap().params;
    let enc = |n: &str| n.starts_with("encoder.");
    assert_eq!(before.hash_where(enc), after.hash_where(enc));
    let pred = |n: &str| n.starts_with("predictor.");
    let fresh = Checkpoint::read(&f.finetuned()).unwrap().params;
    assert_ne!(after.hash_where(pred), fresh.hash_where(pred));
}

#[test]
fn incompatible_checkpoint_reports_the_variable_diff() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let only_t = dir.path().join("t.cdno");
    DatasetContainer::read(&f.rb())
        .unwrap()
        .select(&["T".into()])
        .unwrap()
        .write(&only_t)
        .unwrap();
    let ck = f.pretrained();
    let out = codano(&[
        "finetune",
        "--checkpoint",
        p(&ck),
        "--dataset",
        p(&only_t),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("only in dataset: [\"T\"]") && err.contains("only in checkpoint"),
        "{err}"
    );
}

#[test]
fn eval_matches_finetune_and_ignores_variable_order() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (ck, rb) = (f.finetuned(), f.rb());
    ok(&[
        "eval",
        "--checkpoint",
        p(&ck),
        "--dataset",
        p(&rb),
        "--out",
        p(dir.path()),
    ]);
    let e = json(&dir.path().join("eval.json"))["evaluation"].clone();
    let ft = json(&f.root.join("ft/heldout.json"))["heldout"].clone();
    assert!((e["mean"].as_f64().unwrap() - ft["mean"].as_f64().unwrap()).abs() <= 1e-12);
    for v in ["u_x", "u_y", "T"] {
        assert!((e["per_variable"][v].as_f64().unwrap() - ft["per_variable"][v].as_f64().unwrap()).abs() <= 1e-12);
    }
    let shuffled = dir.path().join("shuffled.cdno");
    DatasetContainer::read(&rb)
        .unwrap()
        .select(&["T".into(), "u_y".into(), "u_x".into()])
        .unwrap()
        .write(&shuffled)
        .unwrap();
    let out2 = dir.path().join("s");
    ok(&[
        "eval",
        "--checkpoint",
        p(&ck),
        "--dataset",
        p(&shuffled),
        "--out",
        p(&out2),
    ]);
    assert_eq!(json(&out2.join("eval.json"))["evaluation"], e);
}

#[test]
fn super_resolution_eval_runs() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (ck, k) = (f.pretrained(), f.kolmogorov());
    ok(&[
        "eval",
        "--checkpoint",
        p(&ck),
        "--dataset",
        p(&k),
        "--query-resolution",
        "64",
        "--save-predictions",
        "--out",
        p(dir.path()),
    ]);
    let e = json(&dir.path().join("eval.json"));
    assert_eq!(e["query_resolution"], 64);
    assert!(e["evaluation"]["mean"].as_f64().unwrap().is_finite());
    let pred = DatasetContainer::read(&dir.path().join("predictions.cdno")).unwrap();
    assert_eq!(pred.mesh().len(), 64 * 64);
}

fn velocity_dataset(dir: &Path, f: impl Fn(&[f64]) -> Vec<f64>) -> PathBuf {
    let mesh = Arc::new(Mesh::periodic_box(vec![64, 64]).unwrap());
    let g = GridFunction::from_fn(Arc::clone(&mesh), 2, f).unwrap();
    let ds = DatasetContainer::new(
        mesh,
        vec!["u_x".into(), "u_y".into()],
        vec![g.into_values()],
        1.0,
        Value::Null,
    )
    .unwrap();
    let path = dir.join("v.cdno");
    ds.write(&path).unwrap();
    path
}

#[test]
fn spectrum_of_a_single_mode_peaks_at_its_wavenumber() {
    let dir = tempfile::tempdir().unwrap();
    let ds = velocity_dataset(dir.path(), |x| vec![(3.0 * x[1]).sin(), 0.0]);
    ok(&["spectrum", "--dataset", p(&ds), "--out", p(dir.path())]);
    let s = json(&dir.path().join("spectrum.json"));
    assert_eq!(s["peak"], 3);
    assert!(s["parseval_relative_error"].as_f64().unwrap() < 1e-8);
    let table = std::fs::read_to_string(dir.path().join("spectrum.tsv")).unwrap();
    let rows: Vec<(usize, f64)> = table
        .lines()
        .skip(1)
        .map(|l| {
            let (k, e) = l.split_once('\t').unwrap();
            (k.parse().unwrap(), e.parse().unwrap())
        })
        .collect();
    let total: f64 = rows.iter().map(|r| r.1).sum();
    assert!(rows[3].1 / total >= 0.999);
}

#[test]
fn spectrum_of_zero_field_is_zero_and_missing_velocity_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = velocity_dataset(dir.path(), |_| vec![0.0, 0.0]);
    ok(&["spectrum", "--dataset", p(&ds), "--out", p(dir.path())]);
    let table = std::fs::read_to_string(dir.path().join("spectrum.tsv")).unwrap();
    assert!(table
        .lines()
        .skip(1)
        .all(|l| l.split_once('\t').unwrap().1.parse::<f64>().unwrap() == 0.0));
    let t_only = dir.path().join("t.cdno");
    DatasetContainer::read(&fixture().rb())
        .unwrap()
        .select(&["T".into()])
        .unwrap()
        .write(&t_only)
        .unwrap();
    assert_eq!(
        codano(&["spectrum", "--dataset", p(&t_only), "--out", p(dir.path())])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn gradcheck_passes_and_detects_faults() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gradcheck", "--out", p(dir.path())]);
    assert_eq!(json(&dir.path().join("gradcheck.json"))["pass"], true);
    let bad = codano(&["gradcheck", "--corrupt", "lift.", "--out", p(dir.path())]);
    assert_eq!(bad.status.code(), Some(4));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("lift.l0.weight") && !err.contains("encoder"), "{err}");
    let zero = codano(&["gradcheck", "--tol", "0", "--out", p(dir.path())]);
    assert_ne!(zero.status.code(), Some(0));
}
