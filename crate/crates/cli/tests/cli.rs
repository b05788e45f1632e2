use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use rvq_motion_cli::args::Cli;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rvq-motion"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn every_flag_is_documented_in_help() {
    let root = Cli::command();
    let mut checked = 0;
    for sub in root.get_subcommands() {
        let name = sub.get_name().to_string();
        assert!(sub.get_about().is_some(), "subcommand {name} has no description");
        let help = String::from_utf8(run(&[&name, "--help"]).stdout).unwrap();
        for arg in sub.get_arguments() {
            let id = arg.get_id().as_str();
            if id == "help" || id == "version" {
                continue;
            }
            assert!(arg.get_help().is_some(), "{name} --{id} has no help text");
            let long = arg.get_long().unwrap_or_else(|| panic!("{name} {id} has no long flag"));
            assert!(help.contains(&format!("--{long}")), "{name} --help does not list --{long}");
            checked += 1;
        }
    }
    assert!(checked > 40, "only {checked} flags audited");
}

#[test]
fn gen_synth_counts_determinism_and_split_policy() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = ok(&["gen-synth", "--out-dir", p(d), "--frames", "8", "--seed", "5"]);
        assert!(out.contains("seed = 5"));
    }
    let files = |d: &Path| {
        let mut v: Vec<PathBuf> = fs::read_dir(d).unwrap().map(|e| e.unwrap().path()).collect();
        v.sort();
        v
    };
    let fa = files(&a);
    assert_eq!(fa.iter().filter(|f| f.extension().unwrap() == "mqm").count(), 160);
    assert!(a.join("manifest.json").exists());
    for (x, y) in fa.iter().zip(files(&b)) {
        assert_eq!(fs::read(x).unwrap(), fs::read(&y).unwrap(), "{x:?}");
    }

    let c = dir.path().join("c");
    ok(&["gen-synth", "--out-dir", p(&c), "--frames", "8", "--clips-per-pair", "2", "--test-per-pair", "1", "--styles", "3", "--unseen-styles", "2"]);
    let m = rvq_motion_cli::manifest::read_manifest(&c.join("manifest.json")).unwrap();
    assert_eq!(m.unseen_styles.len(), 2);
    for e in &m.clips {
        assert_eq!(m.unseen_styles.contains(&e.style), e.split == "unseen", "{e:?}");
    }
    assert!(m.clips.iter().any(|e| e.split == "test"));
}

#[test]
fn exit_codes_and_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    let out = run(&["gen-synth", "--out-dir", p(&out_dir), "--contents", "9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());

    let missing = dir.path().join("missing.ckpt");
    let clip = dir.path().join("clip.mqm");
    let out = run(&["extract", "--checkpoint", p(&missing), "--input", p(&clip), "--output", p(&dir.path().join("o.mqm"))]);
    assert_eq!(out.status.code(), Some(4));

    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let out = run(&["extract", "--checkpoint", p(&bad), "--input", p(&clip), "--output", p(&dir.path().join("o.mqm"))]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "profile = \"synthetic\"\ndata = \"x\"\nout_dir = \"o\"\n").unwrap();
    let out = run(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("steps"));

    assert_eq!(run(&["transfer"]).status.code(), Some(2));
}

const TINY: &str = "[codec]
latent_dim = 8
conv_feature = 8
n_books = 2
codes_per_book = 8
window_len = 16
window_stride = 16
batch_size = 4
seed = 3
";

fn write_run(dir: &Path, name: &str, steps: u64) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    fs::write(
        &path,
        format!("profile = \"synthetic\"\ndata = \"data/manifest.json\"\nout_dir = \"{name}\"\nsteps = {steps}\ncheckpoint_every = 2\n{TINY}"),
    )
    .unwrap();
    path
}

#[test]
fn train_resume_and_operations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["gen-synth", "--out-dir", p(&data), "--frames", "32", "--clips-per-pair", "2", "--test-per-pair", "1", "--contents", "2", "--styles", "2"]);

    let out = ok(&["train", "--config", p(&write_run(d, "full", 4))]);
    assert!(out.contains("seed = 3"));
    assert!(out.contains("tau_mi"));
    ok(&["train", "--config", p(&write_run(d, "half", 2))]);
    let resumed = write_run(d, "half", 2);
    ok(&["resume", "--checkpoint", p(&d.join("half/final.ckpt")), "--config", p(&resumed)]);
    assert_eq!(
        fs::read(d.join("full/final.ckpt")).unwrap(),
        fs::read(d.join("half/final.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(d.join("full/train_log.jsonl")).unwrap(),
        fs::read_to_string(d.join("half/train_log.jsonl")).unwrap()
    );

    let ck = d.join("full/final.ckpt");
    let clip = data.join("straight_neutral_000.mqm");
    let other = data.join("turn_wide_legs_000.mqm");
    let o = |n: &str| d.join(n);
    ok(&["reconstruct", "--checkpoint", p(&ck), "--input", p(&clip), "--output", p(&o("rec.mqm"))]);
    ok(&["transfer", "--checkpoint", p(&ck), "--content", p(&clip), "--style", p(&clip), "--output", p(&o("self.mqm"))]);
    ok(&["interpolate", "--checkpoint", p(&ck), "--input", p(&clip), "--alpha", "1.0", "--output", p(&o("a1.mqm"))]);
    let rec = fs::read(o("rec.mqm")).unwrap();
    assert_eq!(fs::read(o("a1.mqm")).unwrap(), rec);
    // Transfer output carries no style label; compare the frames.
    let frames = |f: &Path| fs::read_to_string(f).unwrap().lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(frames(&o("self.mqm")), frames(&o("rec.mqm")));

    ok(&["transfer", "--checkpoint", p(&ck), "--content", p(&clip), "--style", p(&other), "--output", p(&o("t.mqm"))]);
    let script = o("script.toml");
    fs::write(&script, "[[segment]]\nstyle = 0\nstart = 0\nend = 8\n").unwrap();
    ok(&["transition", "--checkpoint", p(&ck), "--content", p(&clip), "--style", p(&other), "--script", p(&script), "--output", p(&o("tr.mqm"))]);
    assert_eq!(frames(&o("tr.mqm")), frames(&o("t.mqm")));
    fs::write(&script, "[[segment]]\nstyle = 0\nstart = 0\nend = 5\n").unwrap();
    let out = run(&["transition", "--checkpoint", p(&ck), "--content", p(&clip), "--style", p(&other), "--script", p(&script), "--output", p(&o("bad.mqm"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!o("bad.mqm").exists());

    ok(&["extract", "--checkpoint", p(&ck), "--input", p(&clip), "--output", p(&o("x.mqm"))]);
    ok(&["invert", "--checkpoint", p(&ck), "--input", p(&clip), "--output", p(&o("inv.mqm"))]);
    ok(&["blend", "--checkpoint", p(&ck), "--first", p(&clip), "--second", p(&other), "--output", p(&o("b.mqm"))]);
    assert_eq!(fs::read_to_string(o("b.mqm")).unwrap().lines().count(), 1 + 64);
    for name in ["aug1.mqm", "aug2.mqm"] {
        ok(&["augment", "--checkpoint", p(&ck), "--input", p(&clip), "--seed", "4", "--output", p(&o(name))]);
    }
    assert_eq!(fs::read(o("aug1.mqm")).unwrap(), fs::read(o("aug2.mqm")).unwrap());
    ok(&["content-interp", "--checkpoint", p(&ck), "--first", p(&clip), "--second", p(&other), "--beta", "0.5", "--output", p(&o("ci.mqm"))]);
    let out = run(&["content-interp", "--checkpoint", p(&ck), "--first", p(&clip), "--second", p(&other), "--beta", "1.5", "--output", p(&o("ci2.mqm"))]);
    assert_eq!(out.status.code(), Some(2));

    let manifest = data.join("manifest.json");
    ok(&["export", "--checkpoint", p(&ck), "--data", p(&manifest), "--split", "test", "--output", p(&o("emb.csv"))]);
    let csv = fs::read_to_string(o("emb.csv")).unwrap();
    assert!(csv.starts_with("layer,label,dim_0,"));
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
}

#[test]
fn classifier_and_eval_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["gen-synth", "--out-dir", p(&data), "--frames", "64", "--clips-per-pair", "3", "--test-per-pair", "1", "--contents", "2", "--styles", "2"]);
    ok(&["train", "--config", p(&write_run(d, "m", 2))]);
    let manifest = data.join("manifest.json");
    let clf = d.join("clf.json");
    let out = ok(&["train-classifier", "--data", p(&manifest), "--steps", "3", "--output", p(&clf)]);
    assert!(out.contains("heldout_accuracy"));
    let mut reports = Vec::new();
    for name in ["r1.json", "r2.json"] {
        ok(&["eval", "--checkpoint", p(&d.join("m/final.ckpt")), "--classifier", p(&clf), "--data", p(&manifest), "--split", "test", "--k", "1", "--output", p(&d.join(name))]);
        reports.push(fs::read_to_string(d.join(name)).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let v: serde_json::Value = serde_json::from_str(&reports[0]).unwrap();
    for key in ["style_acc_top1", "style_acc_topk", "cross_cls"] {
        let x = v[key].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&x), "{key} = {x}");
    }
    assert!(v["content_dev_std"].as_f64().unwrap() >= 0.0);
    assert!(v["rec_err_l2p"].as_f64().unwrap() > 0.0);
}
