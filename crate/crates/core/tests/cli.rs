use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use affectsr::data::ImageTensor;
use affectsr::synth::{sample_id, write_dataset};
use affectsr::HR_SIZE;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_affectsr"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.env_remove("AFFECTSR_CACHE").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(steps: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("faces"), 6, 50, HR_SIZE).unwrap();
        let cfg = format!(
            "[data]\nroot = \"faces\"\nscale = 8\neval_count = 2\n\n[model]\nvariant = \"full\"\npreset = \"tiny\"\n\n\
             [train]\nmax_steps = {steps}\nbatch_size = 2\n\n[metrics]\nfer = \"toy:0\"\n\n[output]\ndir = \"run\"\n"
        );
        fs::write(dir.path().join("run.toml"), cfg).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn train(&self) -> PathBuf {
        let out = run(bin().args(["train", "--config"]).arg(self.path("run.toml")));
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        self.path("run/final.ckpt")
    }
}

fn jsonl(text: &str) -> Vec<serde_json::Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn train_eval_infer_round_trip() {
    let ws = Workspace::new(2);
    let ckpt = ws.train();
    assert!(ckpt.is_file());
    assert_eq!(
        fs::read_to_string(ws.path("run/losses.jsonl")).unwrap().lines().count(),
        2
    );
    let report = jsonl(&fs::read_to_string(ws.path("run/eval.jsonl")).unwrap());
    assert!(report.last().unwrap()["aggregate"]["ecm"]["ecm"].is_number());

    let out = run(bin()
        .args(["eval", "--metrics", "psnr,ssim", "--ckpt"])
        .arg(&ckpt)
        .arg("--data")
        .arg(ws.path("faces")));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = jsonl(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 7);
    let agg = &rows[6]["aggregate"];
    assert!(agg["psnr"].is_number() && agg["ssim"].is_number());
    assert!(agg.get("ecm").is_none() && rows[0].get("ecm").is_none());

    // Resuming a finished run adds no steps but still writes a checkpoint.
    let out = run(bin()
        .args(["train", "--config"])
        .arg(ws.path("run.toml"))
        .arg("--ckpt")
        .arg(&ckpt));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let id = sample_id(0);
    let lmk = affectsr::data::DatasetLayout::under(&ws.path("faces")).landmark_path(&id);
    let hr = ImageTensor::load(&ws.path(&format!("faces/images/{id}.png"))).unwrap();
    let lr = affectsr::data::bicubic_resize(&hr, 16, 16).unwrap();
    lr.save_png(&ws.path("lr.png")).unwrap();
    let png = ws.path("sr.png");
    let out = run(bin()
        .args(["infer", "--scale", "8", "--ckpt"])
        .arg(&ckpt)
        .arg("--input")
        .arg(ws.path("lr.png"))
        .arg("--landmarks")
        .arg(&lmk)
        .arg("--out")
        .arg(&png));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let img = ImageTensor::load(&png).unwrap();
    assert_eq!((img.height(), img.width()), (HR_SIZE, HR_SIZE));

    let out = run(bin()
        .args(["infer", "--scale", "4", "--ckpt"])
        .arg(&ckpt)
        .arg("--input")
        .arg(ws.path("lr.png"))
        .arg("--landmarks")
        .arg(&lmk)
        .arg("--out")
        .arg(&png));
    assert_eq!(code(&out), 1);
}

#[test]
fn bicubic_eval_needs_no_checkpoint() {
    let ws = Workspace::new(1);
    let out = run(bin()
        .args([
            "eval",
            "--method",
            "bicubic",
            "--metrics",
            "psnr,ssim,ecm",
            "--plugin",
            "toy:1",
            "--data",
        ])
        .arg(ws.path("faces")));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = jsonl(&String::from_utf8(out.stdout).unwrap());
    let agg = &rows.last().unwrap()["aggregate"];
    assert_eq!(agg["num_samples"], 6);
    assert!(agg["ecm"]["ecm"].is_number());
}

#[test]
fn configuration_errors_exit_with_one() {
    let ws = Workspace::new(1);
    let faces = ws.path("faces");
    let cases: Vec<Vec<String>> = vec![
        vec![
            "eval".into(),
            "--method".into(),
            "bicubic".into(),
            "--metrics".into(),
            "ecm".into(),
        ],
        vec![
            "eval".into(),
            "--method".into(),
            "bicubic".into(),
            "--metrics".into(),
            "psnr,fid".into(),
        ],
        vec![
            "eval".into(),
            "--ckpt".into(),
            ws.path("nope.ckpt").display().to_string(),
        ],
        vec![
            "eval".into(),
            "--method".into(),
            "bicubic".into(),
            "--scale".into(),
            "3".into(),
        ],
        vec![
            "ablate".into(),
            "--config".into(),
            ws.path("run.toml").display().to_string(),
            "--variant".into(),
            "".into(),
        ],
        vec![
            "ablate".into(),
            "--config".into(),
            ws.path("run.toml").display().to_string(),
            "--variant".into(),
            "rrdb,vdsr".into(),
        ],
        vec![
            "train".into(),
            "--config".into(),
            ws.path("missing.toml").display().to_string(),
        ],
        vec!["frobnicate".into()],
    ];
    for args in cases {
        let mut cmd = bin();
        cmd.args(&args);
        if args[0] == "eval" {
            cmd.arg("--data").arg(&faces);
        }
        let out = run(&mut cmd);
        assert_eq!(code(&out), 1, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }

    fs::write(ws.path("bad.toml"), "[data]\nroot = \"faces\"\nzoom = 2\n").unwrap();
    let out = run(bin().args(["train", "--config"]).arg(ws.path("bad.toml")));
    assert_eq!(code(&out), 1);
    fs::write(ws.path("nolmk.toml"), "[data]\nroot = \"elsewhere\"\n").unwrap();
    let out = run(bin().args(["train", "--config"]).arg(ws.path("nolmk.toml")));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("elsewhere"));
}

#[test]
fn runtime_errors_exit_with_two() {
    let ws = Workspace::new(1);
    fs::write(ws.path(&format!("faces/images/{}.png", sample_id(3))), b"not a png").unwrap();
    let out = run(bin()
        .args(["eval", "--method", "bicubic", "--data"])
        .arg(ws.path("faces")));
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cache_env_var_populates_cache() {
    let ws = Workspace::new(1);
    let cache = ws.path("cache");
    let eval = |dir: &Path| {
        bin()
            .args(["eval", "--method", "bicubic", "--data"])
            .arg(ws.path("faces"))
            .env("AFFECTSR_CACHE", dir)
            .output()
            .unwrap()
    };
    let first = eval(&cache);
    assert_eq!(code(&first), 0);
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 6);
    let second = eval(&cache);
    assert_eq!(first.stdout, second.stdout);
    let plain = run(bin()
        .args(["eval", "--method", "bicubic", "--data"])
        .arg(ws.path("faces")));
    assert_eq!(plain.stdout, first.stdout);
}
