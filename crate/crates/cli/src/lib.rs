//! Command-line front end for the `rvq-motion` codec.

pub mod args;
pub mod manifest;
pub mod run_config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvq_motion::codec::{load_checkpoint, load_training_state, save_checkpoint, CodecModel, Trainer};
use rvq_motion::eval::{evaluate_transfers, export_embeddings, train_classifier, ClassifierConfig, StyleClassifier};
use rvq_motion::motion::io::{load_clip, save_clip};
use rvq_motion::motion::MotionClip;
use rvq_motion::ops::{self, StyleSource, TransitionScript};
use rvq_motion::{Error, Result};

use args::{Cli, Command, StyleFrom};
use manifest::{load_dataset, write_synthetic, SynthSpec};
use run_config::RunConfig;

/// 0 success, 2 invalid input, 3 numeric failure, 4 I/O failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 4,
        e if e.is_validation() => 2,
        _ => 3,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth(a) => {
            let spec = SynthSpec {
                contents: a.contents,
                styles: a.styles,
                unseen_styles: a.unseen_styles,
                clips_per_pair: a.clips_per_pair,
                test_per_pair: a.test_per_pair,
                frames: a.frames,
                seed: a.seed,
            };
            println!("seed = {}", a.seed);
            let m = write_synthetic(&a.out_dir, &spec)?;
            println!("wrote {} clips and {}", m.clips.len(), a.out_dir.join(manifest::MANIFEST_NAME).display());
            Ok(())
        }
        Command::Train(a) => {
            let run = RunConfig::load(&a.config)?;
            let config = run.codec_config()?;
            let clips = load_dataset(&run.data, &run.split)?;
            println!("seed = {}", config.seed);
            println!("{}", config.to_toml());
            let trainer = Trainer::new(config, &clips)?;
            prepare_out_dir(&run.out_dir)?;
            let echo = run.out_dir.join("config.toml");
            fs::write(&echo, trainer.model.config.to_toml()).map_err(|e| Error::io(&echo, e))?;
            train_loop(trainer, &run, false)
        }
        Command::Resume(a) => {
            let run = RunConfig::load(&a.config)?;
            let (model, optimizer) = load_training_state(&a.checkpoint)?;
            let optimizer = optimizer.ok_or_else(|| {
                Error::Checkpoint(format!("{} holds no optimizer state", a.checkpoint.display()))
            })?;
            let clips = load_dataset(&run.data, &run.split)?;
            println!("seed = {}", model.config.seed);
            println!("resuming at step {}", model.step);
            let trainer = Trainer::resume(model, optimizer, &clips)?;
            prepare_out_dir(&run.out_dir)?;
            train_loop(trainer, &run, true)
        }
        Command::Reconstruct(a) => {
            let model = load_checkpoint(&a.model.checkpoint)?;
            let clip = load_clip(&a.input)?;
            let n = a.books.unwrap_or(model.n_books());
            if n == 0 || n > model.n_books() {
                return Err(Error::Config(format!("--books must be 1..={}, got {n}", model.n_books())));
            }
            let out = model.reconstruct(&clip, n)?;
            save_clip(&out, &a.output)
        }
        Command::Transfer(a) => {
            let model = load_checkpoint(&a.model.checkpoint)?;
            let s = cutoff(&model, a.cutoff.s);
            let out = ops::code_swap_transfer(&model, &load_clip(&a.content)?, &load_clip(&a.style)?, s)?;
            save_clip(&out, &a.output)
        }
        Command::Extract(a) => single(&a, ops::content_extract),
        Command::Invert(a) => single(&a, ops::style_inversion),
        Command::Interpolate(a) => {
            let alpha = a.alpha;
            if !alpha.is_finite() {
                return Err(Error::Config(format!("alpha must be finite, got {alpha}")));
            }
            single(&a.clip, |m, c, s| ops::style_interpolation(m, c, alpha, s))
        }
        Command::Transition(a) => {
            let model = load_checkpoint(&a.model.checkpoint)?;
            let s = cutoff(&model, a.cutoff.s);
            let text = fs::read_to_string(&a.script).map_err(|e| Error::io(&a.script, e))?;
            let script: TransitionScript = toml::from_str(&text).map_err(|e| Error::Parse {
                path: a.script.clone(),
                line: 0,
                frame: None,
                message: e.message().to_string(),
            })?;
            let content = load_clip(&a.content)?;
            let styles = a.styles.iter().map(load_clip).collect::<Result<Vec<_>>>()?;
            let out = ops::style_transition(&model, &content, &styles, &script, s)?;
            save_clip(&out, &a.output)
        }
        Command::Blend(a) => {
            let model = load_checkpoint(&a.model.checkpoint)?;
            let out = ops::motion_blend(&model, &load_clip(&a.first)?, &load_clip(&a.second)?)?;
            save_clip(&out, &a.output)
        }
        Command::Augment(a) => {
            println!("seed = {}", a.seed);
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let slots = a.segment_slots;
            single(&a.clip, |m, c, s| Ok(ops::random_style_augmentation(m, c, s, slots, &mut rng)?.clip))
        }
        Command::ContentInterp(a) => {
            let model = load_checkpoint(&a.model.checkpoint)?;
            let s = cutoff(&model, a.cutoff.s);
            let from = match a.style_from {
                StyleFrom::First => StyleSource::A,
                StyleFrom::Second => StyleSource::B,
            };
            let out = ops::content_interpolation(&model, &load_clip(&a.first)?, &load_clip(&a.second)?, a.beta, s, from)?;
            save_clip(&out, &a.output)
        }
        Command::TrainClassifier(a) => {
            if !(0.0..1.0).contains(&a.holdout) {
                return Err(Error::Config(format!("--holdout must be in [0, 1), got {}", a.holdout)));
            }
            let clips = load_dataset(&a.data.data, &a.data.split)?;
            println!("seed = {}", a.seed);
            let config = ClassifierConfig {
                steps: a.steps,
                holdout: a.holdout,
                seed: a.seed,
                ..ClassifierConfig::default()
            };
            let (mut clf, report) = train_classifier(&clips, &config)?;
            println!("{}", serde_json::to_string(&report).expect("report serialises"));
            clf.save(&a.output)
        }
        Command::Eval(a) => {
            let model = load_checkpoint(&a.model.checkpoint)?;
            let s = cutoff(&model, a.cutoff.s);
            let classifier = StyleClassifier::load(&a.classifier)?;
            let contents = load_dataset(&a.data.data, &a.data.split)?;
            let styles = match &a.style_split {
                Some(split) => load_dataset(&a.data.data, split)?,
                None => contents.clone(),
            };
            if a.k == 0 {
                return Err(Error::Config("--k must be at least 1".into()));
            }
            let report = evaluate_transfers(&model, &classifier, &contents, &styles, s, a.k)?;
            let json = report.to_json();
            println!("{json}");
            fs::write(&a.output, json + "\n").map_err(|e| Error::io(&a.output, e))
        }
        Command::Export(a) => {
            let model = load_checkpoint(&a.model.checkpoint)?;
            let clips = load_dataset(&a.data.data, &a.data.split)?;
            let rows = export_embeddings(&model, &clips, &a.output)?;
            println!("wrote {rows} rows to {}", a.output.display());
            Ok(())
        }
    }
}

fn cutoff(model: &CodecModel, s: Option<usize>) -> usize {
    s.unwrap_or(model.content_cutoff())
}

fn single(
    a: &args::SingleClipArgs,
    op: impl FnOnce(&CodecModel, &MotionClip, usize) -> Result<MotionClip>,
) -> Result<()> {
    let model = load_checkpoint(&a.model.checkpoint)?;
    let s = cutoff(&model, a.cutoff.s);
    let out = op(&model, &load_clip(&a.input)?, s)?;
    save_clip(&out, &a.output)
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn train_loop(mut trainer: Trainer, run: &RunConfig, append: bool) -> Result<()> {
    let log_path = run.out_dir.join("train_log.jsonl");
    let file = fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let first = trainer.model.step;
    for _ in 0..run.steps {
        let report = trainer.train_step()?;
        writeln!(log, "{}", serde_json::to_string(&report).expect("report serialises"))
            .map_err(|e| Error::io(&log_path, e))?;
        let done = trainer.model.step;
        if run.checkpoint_every > 0 && (done - first).is_multiple_of(run.checkpoint_every) {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            let path = run.out_dir.join(format!("checkpoint-{done:07}.ckpt"));
            save_checkpoint(&trainer.model, Some(&trainer.optimizer), &path)?;
            println!("step {done}: total {:.5}, saved {}", report.losses.total, path.display());
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let path = run.out_dir.join("final.ckpt");
    save_checkpoint(&trainer.model, Some(&trainer.optimizer), &path)?;
    println!("trained to step {}; wrote {}", trainer.model.step, path.display());
    Ok(())
}
