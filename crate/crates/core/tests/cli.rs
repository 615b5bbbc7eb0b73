use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lidreid::geometry::lpc;
use tempfile::TempDir;

fn lidreid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidreid")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const ENCODER: &str = r#"
[model.encoder]
points = 64
k = 6
k_binarize = 4
widths = [8, 16]
d_c = 16
"#;

fn pretrain_toml(epochs: usize) -> String {
    format!(
        "epochs = {epochs}\nbatch_size = 4\n[model]\nshape_hidden = [16, 8]\n{ENCODER}[model.decoder]\nhidden = 32\nfold_hidden = 16\n"
    )
}

fn train_toml(epochs: usize, width: usize) -> String {
    format!(
        "epochs = {epochs}\nidentities_per_batch = 2\nsequences_per_identity = 2\nframes_per_sequence = 3\n{ENCODER}[model.temporal]\nlayers = 1\nwidth = {width}\nheads = 2\nffn = 32\n"
    )
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Four identities seen by two views, two walks of four frames each.
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let out = dir.path().join("data");
        let o = lidreid(&["synth", "--out", s(&out), "--ids", "4", "--views", "2", "--sequences", "2", "--frames", "4", "--seed", "3"]);
        assert!(o.status.success(), "{}", stderr(&o));
        Self { dir }
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    fn data(&self) -> std::path::PathBuf {
        self.path("data")
    }

    fn write(&self, name: &str, text: &str) -> std::path::PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }
}

#[test]
fn synth_writes_one_sequence_per_identity_and_view() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("data");
    let o = lidreid(&["synth", "--ids", "12", "--views", "4", "--frames", "30", "--seed", "7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("identities=12 sequences=48 frames=1440"), "{}", stdout(&o));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["sequences"].as_array().unwrap().len(), 48);
}

#[test]
fn missing_out_is_a_usage_error() {
    let o = lidreid(&["synth", "--ids", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn bad_configs_and_paths_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "identities = 2\nunknown_key = 1\n").unwrap();
    let o = lidreid(&["synth", "--out", s(&dir.path().join("d")), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown"), "{}", stderr(&o));

    let o = lidreid(&["synth", "--out", s(&dir.path().join("d")), "--config", s(&dir.path().join("absent.toml"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = lidreid(&["pretrain", "--data", s(&dir.path().join("nowhere")), "--out", s(&dir.path().join("p"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("p").exists(), "no work before paths are validated");

    let o = lidreid(&["synth", "--out", s(&dir.path().join("d")), "--ids", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_and_report_format() {
    let fx = Fixture::new();
    let cfg = fx.write("train.toml", &train_toml(2, 32));
    let run = fx.path("run");
    let o = lidreid(&["train", "--data", s(&fx.data()), "--out", s(&run), "--config", s(&cfg), "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run.join("reid.ckpt").is_file());
    let metrics = fs::read_to_string(run.join("reid_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "{metrics}");

    let out = fx.path("eval");
    let o = lidreid(&["eval", "--data", s(&fx.data()), "--checkpoint", s(&run.join("reid.ckpt")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let fields: Vec<&str> = line.trim().split(' ').collect();
    assert_eq!(fields.len(), 3, "{line}");
    for (f, key) in fields.iter().zip(["rank1=", "rank3=", "map="]) {
        let v: f64 = f.strip_prefix(key).unwrap_or_else(|| panic!("{line}")).parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    // Test split: two identities x two views x two walks, so six gallery
    // items; each query skips the other walk from its own view.
    let cmc = fs::read_to_string(out.join("cmc.csv")).unwrap();
    let rows: Vec<&str> = cmc.lines().collect();
    assert_eq!(rows[0], "rank,hit_rate");
    assert_eq!(rows.len() - 1, 5, "{cmc}");
    assert!(rows.last().unwrap().ends_with(",1"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["cmc"].as_array().unwrap().len(), 5);
}

#[test]
fn eval_without_a_checkpoint_fails_cleanly() {
    let fx = Fixture::new();
    let o = lidreid(&["eval", "--data", s(&fx.data()), "--checkpoint", s(&fx.path("none.ckpt")), "--out", s(&fx.path("e"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("none.ckpt"));
}

#[test]
fn init_from_pretraining_and_shape_mismatch() {
    let fx = Fixture::new();
    let pre_cfg = fx.write("pre.toml", &pretrain_toml(1));
    let pre = fx.path("pre");
    let o = lidreid(&["pretrain", "--data", s(&fx.data()), "--out", s(&pre), "--config", s(&pre_cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = pre.join("pretrain.ckpt");

    let cfg = fx.write("train.toml", &train_toml(1, 32));
    let o = lidreid(&["train", "--data", s(&fx.data()), "--out", s(&fx.path("a")), "--config", s(&cfg), "--init", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let wide = fx.write(
        "wide.toml",
        &train_toml(1, 64).replace("widths = [8, 16]\nd_c = 16", "widths = [8, 16]\nd_c = 32"),
    );
    let o = lidreid(&["train", "--data", s(&fx.data()), "--out", s(&fx.path("b")), "--config", s(&wide), "--init", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("encoder."), "{}", stderr(&o));
}

#[test]
fn interrupted_training_resumes_bit_identically() {
    let fx = Fixture::new();
    let full = fx.write("full.toml", &train_toml(3, 32).replace("epochs = 3", "epochs = 3\ncheckpoint_every = 1"));
    let o = lidreid(&["train", "--data", s(&fx.data()), "--out", s(&fx.path("full")), "--config", s(&full)]);
    assert!(o.status.success(), "{}", stderr(&o));

    // The same run stopped after one epoch, then resumed.
    let part = fx.path("part");
    let o = lidreid(&["train", "--data", s(&fx.data()), "--out", s(&part), "--config", s(&full), "--epochs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = lidreid(&[
        "train",
        "--data",
        s(&fx.data()),
        "--out",
        s(&part),
        "--config",
        s(&full),
        "--resume",
        s(&part.join("reid.ckpt")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["reid.ckpt", "reid_metrics.csv"] {
        assert_eq!(fs::read(fx.path("full").join(f)).unwrap(), fs::read(part.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn complete_writes_coarse_and_detail_next_to_the_input() {
    let fx = Fixture::new();
    let cfg = fx.write(
        "pre.toml",
        &pretrain_toml(1).replace("hidden = 32\nfold_hidden = 16\n", "coarse_points = 128\ngrid_side = 2\nhidden = 32\nfold_hidden = 16\n"),
    );
    let pre = fx.path("pre");
    let o = lidreid(&["pretrain", "--data", s(&fx.data()), "--out", s(&pre), "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(fx.data().join("manifest.json")).unwrap()).unwrap();
    let frame = manifest["sequences"][0]["frames"][0]["cloud"].as_str().unwrap().to_string();
    let input = fx.data().join(&frame);
    let original = fs::read(&input).unwrap();
    let out = fx.path("shapes");
    let o = lidreid(&["complete", "--checkpoint", s(&pre.join("pretrain.ckpt")), "--out", s(&out), s(&input)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("cd_detail="), "{}", stdout(&o));

    let stem = input.file_name().unwrap().to_str().unwrap().strip_suffix(".lpc").unwrap().to_string();
    assert_eq!(lpc::load(out.join(format!("{stem}.coarse.lpc"))).unwrap().len(), 128);
    assert_eq!(lpc::load(out.join(format!("{stem}.detail.lpc"))).unwrap().len(), 512);
    assert_eq!(fs::read(out.join(format!("{stem}.lpc"))).unwrap(), original);
    assert_eq!(fs::read(&input).unwrap(), original);
}
