use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use relprop::model_io::load_model;
use relprop::Layer;

fn relprop_cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relprop"))
        .args(args)
        .env_remove("RELPROP_OUT_DIR")
        .output()
        .expect("spawn relprop")
}

fn ok(args: &[&str]) -> String {
    let out = relprop_cli(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small toy dataset plus a dense-only retrained model, built once.
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let f = Fixture { dir: tempfile::tempdir().unwrap() };
        ok(&["make-toy", "--out", p(&f.path("toy")), "--samples", "30", "--size", "8"]);
        ok(&[
            "train", "--model", p(&f.path("toy/base.json")), "--data-dir", p(&f.path("toy/data")),
            "--epochs", "3", "--out", p(&f.path("trained")),
        ]);
        f
    })
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn make_toy_writes_dataset_and_bias_free_base() {
    let f = fixture();
    let labels = std::fs::read_to_string(f.path("toy/data/labels.csv")).unwrap();
    let mut lines = labels.lines();
    assert_eq!(lines.next(), Some("filename,attribute,raw_score"));
    assert_eq!(lines.count(), 30);
    assert!(f.path("toy/data/img_0029.png").exists());
    let base = load_model(&f.path("toy/base.json")).unwrap();
    assert!(!base.has_bias());
    let manifest = json(&f.path("toy/manifest.json"));
    assert_eq!(manifest["command"], "make-toy");
    assert_eq!(manifest["seeds"]["data"], 0);
}

#[test]
fn train_writes_curve_model_and_manifest() {
    let f = fixture();
    let curve = std::fs::read_to_string(f.path("trained/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 3);
    assert!(load_model(&f.path("trained/model.json")).is_ok());
    let manifest = json(&f.path("trained/manifest.json"));
    assert_eq!(manifest["seeds"]["split_and_shuffle"], 0);
    let inputs = manifest["inputs"].as_object().unwrap();
    assert!(inputs.keys().any(|k| k.ends_with("labels.csv")));
    assert!(inputs.values().all(|h| h.as_str().unwrap().len() == 64));
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(outputs, ["curve.csv", "model.bin", "model.json"]);
}

#[test]
fn full_mode_changes_conv_weights() {
    let f = fixture();
    let out = f.path("full");
    ok(&[
        "train", "--model", p(&f.path("toy/base.json")), "--data-dir", p(&f.path("toy/data")),
        "--mode", "full", "--epochs", "1", "--out", p(&out),
    ]);
    let conv = |path: &Path| -> Vec<f64> {
        load_model(path)
            .unwrap()
            .layers()
            .iter()
            .filter(|l| matches!(l, Layer::Conv2d(_)))
            .flat_map(Layer::params)
            .collect()
    };
    assert_ne!(conv(&out.join("model.json")), conv(&f.path("toy/base.json")));
    assert_eq!(conv(&f.path("trained/model.json")), conv(&f.path("toy/base.json")));
}

#[test]
fn missing_labels_fails_without_outputs() {
    let f = fixture();
    let out = f.path("no_labels");
    let res = relprop_cli(&[
        "train", "--model", p(&f.path("toy/base.json")), "--data-dir", p(&f.path("toy/data")),
        "--labels", p(&f.path("missing.csv")), "--out", p(&out),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing.csv"));
    assert!(!out.exists());
}

#[test]
fn explain_bias_free_model_conserves() {
    let f = fixture();
    let out = f.path("explain_base");
    ok(&[
        "explain", "--model", p(&f.path("toy/base.json")), "--image", p(&f.path("toy/data/img_0002.png")),
        "--no-renormalize", "--out", p(&out),
    ]);
    let report = json(&out.join("conservation.json"));
    assert!(report["drift"].as_f64().unwrap() <= 1e-9, "{report}");
    assert_eq!(report["passed"], true);
    for name in ["heatmap.ppm", "heatmap.png", "relevance.bin", "relevance.json", "manifest.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let ppm = std::fs::read(out.join("heatmap.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n8 8\n255\n"));
    assert_eq!(ppm.len(), 11 + 8 * 8 * 3);
    let index = json(&out.join("relevance.json"));
    let bytes: u64 = index["layers"].as_array().unwrap().iter().map(|l| l["len"].as_u64().unwrap() * 8).sum();
    assert_eq!(std::fs::metadata(out.join("relevance.bin")).unwrap().len(), bytes);
}

#[test]
fn explain_epsilon_renormalized_drift() {
    let f = fixture();
    let out = f.path("explain_eps");
    ok(&[
        "explain", "--model", p(&f.path("trained/model.json")), "--image", p(&f.path("toy/data/img_0004.png")),
        "--rule", "epsilon", "--epsilon", "0.1", "--renormalize", "--out", p(&out),
    ]);
    let report = json(&out.join("conservation.json"));
    assert!(report["final"]["drift"].as_f64().unwrap() <= 1e-12, "{report}");
    assert!(report["raw"]["drift"].as_f64().unwrap() > 1e-12);
}

#[test]
fn explain_warns_on_non_unit_alpha_beta() {
    let f = fixture();
    let res = relprop_cli(&[
        "explain", "--model", p(&f.path("toy/base.json")), "--image", p(&f.path("toy/data/img_0001.png")),
        "--alpha", "2", "--beta", "0", "--out", p(&f.path("explain_warn")),
    ]);
    assert!(res.status.success());
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("alpha + beta = 2 != 1"), "{stderr}");
    assert_eq!(json(&f.path("explain_warn/conservation.json"))["conserving_rule"], false);
}

#[test]
fn explain_rejects_wrong_image_size() {
    let f = fixture();
    let big = f.path("big.png");
    image::RgbImage::new(12, 12).save(&big).unwrap();
    let out = f.path("explain_big");
    let res = relprop_cli(&["explain", "--model", p(&f.path("toy/base.json")), "--image", p(&big), "--out", p(&out)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("expects [3, 8, 8]"));
    assert!(!out.exists());
}

fn occlude(f: &Fixture, specs: &str, out: &str) -> Output {
    let spec_path = f.path(&format!("{out}.json"));
    std::fs::write(&spec_path, specs).unwrap();
    relprop_cli(&[
        "occlude", "--model", p(&f.path("trained/model.json")), "--image", p(&f.path("toy/data/img_0005.png")),
        "--specs", p(&spec_path), "--out", p(&f.path(out)),
    ])
}

#[test]
fn occlude_empty_specs_is_baseline_only() {
    let f = fixture();
    for (specs, out) in [("", "occ_empty"), ("[]", "occ_list")] {
        assert!(occlude(f, specs, out).status.success());
        let csv = std::fs::read_to_string(f.path(out).join("occlusion.csv")).unwrap();
        assert_eq!(csv, "index,name,baseline_score,occluded_score,delta,relevance_fraction\n");
        assert!(f.path(out).join("heatmap_baseline.ppm").exists());
    }
}

#[test]
fn occlude_four_specs_gives_four_rows() {
    let f = fixture();
    let specs = r#"[
        {"name": "original", "regions": []},
        {"name": "mouth", "shape": "ellipse", "coords": [4, 6, 2, 1]},
        {"name": "right eye", "shape": "rect", "coords": [1, 2, 2, 2]},
        {"name": "both eyes", "regions": [{"shape": "rect", "coords": [1, 2, 2, 2]}, {"shape": "rect", "coords": [5, 2, 2, 2]}]}
    ]"#;
    assert!(occlude(f, specs, "occ_four").status.success());
    let csv = std::fs::read_to_string(f.path("occ_four/occlusion.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("0,original,"));
    assert!(rows[3].starts_with("3,both eyes,"));
    let baseline: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(baseline[2], baseline[3], "empty occlusion must not change the score");
    for i in 0..4 {
        let ppm = std::fs::read(f.path(&format!("occ_four/occlusion_{i:02}.ppm"))).unwrap();
        assert!(ppm.starts_with(b"P6\n16 8\n255\n"));
    }
}

#[test]
fn occlude_out_of_bounds_names_region() {
    let f = fixture();
    let specs = r#"[{"shape": "rect", "coords": [0, 0, 2, 2]},
                   {"regions": [{"shape": "rect", "coords": [0, 0, 2, 2]}, {"shape": "rect", "coords": [6, 6, 4, 4]}]}]"#;
    let res = occlude(f, specs, "occ_bad");
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("spec 1, region 1"));
    assert!(!f.path("occ_bad").exists());
}

#[test]
fn validate_passes_fresh_toy_model() {
    let f = fixture();
    let out = ok(&["validate", "--model", p(&f.path("toy/base.json"))]);
    for check in ["load", "shape-chain", "conservation", "gradient"] {
        assert!(out.contains(&format!("PASS {check}:")), "{out}");
    }
}

#[test]
fn validate_explains_bias_drift() {
    let f = fixture();
    let res = relprop_cli(&["validate", "--model", p(&f.path("trained/model.json")), "--bias-policy", "absorb"]);
    let out = String::from_utf8_lossy(&res.stdout);
    assert!(res.status.success(), "{out}");
    assert!(out.contains("EXPLAINED conservation:"), "{out}");
}

#[test]
fn validate_reports_corrupt_blob() {
    let f = fixture();
    let dir = f.path("corrupt");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::copy(f.path("toy/base.json"), dir.join("base.json")).unwrap();
    std::fs::write(dir.join("base.bin"), [0u8; 12]).unwrap();
    let res = relprop_cli(&["validate", "--model", p(&dir.join("base.json"))]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stdout).contains("FAIL load: weight blob length mismatch"));
}

#[test]
fn out_dir_defaults_from_environment() {
    let f = fixture();
    let out = f.path("from_env");
    let res = Command::new(env!("CARGO_BIN_EXE_relprop"))
        .args(["explain", "--model", p(&f.path("toy/base.json")), "--image", p(&f.path("toy/data/img_0000.png"))])
        .env("RELPROP_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(out.join("manifest.json").exists());
}
