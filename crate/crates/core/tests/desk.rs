//! Behaviour of a trained synthetic-profile model. One model is trained per
//! test binary and shared by every test.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvq_motion::codec::{fine_tune, CodecConfig, CodecModel, StepLosses, Trainer};
use rvq_motion::eval::*;
use rvq_motion::motion::kinematics::clip_root_trajectory;
use rvq_motion::motion::synth::{generate_synthetic, mean_ankle_separation, style_id};
use rvq_motion::motion::MotionClip;
use rvq_motion::ops::{self, StyleSource, TransitionScript, TransitionSegment};

const STEPS: u64 = 2000;

struct Fixture {
    model: CodecModel,
    classifier: StyleClassifier,
    losses: Vec<StepLosses>,
}

fn set(styles: &[usize], per_pair: u64, frames: usize, base: u64) -> Vec<MotionClip> {
    let mut out = Vec::new();
    for &s in styles {
        for c in 0..4 {
            for k in 0..per_pair {
                out.push(generate_synthetic(c, s, frames, base + 10_000 * k + (c * 10 + s) as u64).unwrap());
            }
        }
    }
    out
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let train = set(&[0, 1, 2, 3], 10, 256, 1);
        let mut t = Trainer::new(CodecConfig::profile("synthetic").unwrap(), &train).unwrap();
        let mut losses = Vec::new();
        t.train(STEPS, |r| losses.push(r.losses)).unwrap();
        let (classifier, _) = train_classifier(&set(&[0, 1, 2, 3, 4, 5], 3, 256, 500_000), &ClassifierConfig::default()).unwrap();
        Fixture { model: t.model, classifier, losses }
    })
}

fn clip(content: usize, style: usize, frames: usize) -> MotionClip {
    generate_synthetic(content, style, frames, 424_242 + (content * 10 + style) as u64).unwrap()
}

/// Mean joint displacement between consecutive frames.
fn frame_deltas(c: &MotionClip) -> Vec<f64> {
    c.frames
        .windows(2)
        .map(|w| {
            let j = w[0].positions.len() as f64;
            w[0].positions.iter().zip(&w[1].positions).map(|(a, b)| (a - b).norm()).sum::<f64>() / j
        })
        .collect()
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

/// 99th percentile frame delta over reconstructions of every content/style pair.
fn reconstruction_delta_p99(m: &CodecModel) -> f64 {
    let mut all = Vec::new();
    for c in 0..4 {
        for s in 0..4 {
            all.extend(frame_deltas(&ops::reconstruct(m, &clip(c, s, 128)).unwrap()));
        }
    }
    percentile(all, 0.99)
}

/// Mean D_C between clips of different content, the scale a content swap would produce.
fn cross_content_deviation() -> f64 {
    let mut v = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            if a != b {
                v.push(content_deviation(&clip(a, 0, 128), &clip(b, 0, 128)).unwrap());
            }
        }
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn position_distance(a: &MotionClip, b: &MotionClip) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        for (p, q) in fa.positions.iter().zip(&fb.positions) {
            s += (p - q).norm();
            n += 1.0;
        }
    }
    s / n
}

#[test]
fn training_reduces_the_loss() {
    let f = fixture();
    let w = f.model.config.loss;
    let mean = |r: &[StepLosses], g: &dyn Fn(&StepLosses) -> f64| r.iter().map(g).sum::<f64>() / r.len() as f64;
    let (head, tail) = (&f.losses[..50], &f.losses[f.losses.len() - 50..]);
    let reconstruction = |l: &StepLosses| w.rec * l.rec + w.fk * l.fk + w.vel * l.vel + w.acc * l.acc;
    assert!(mean(tail, &|l| l.total) < mean(head, &|l| l.total));
    // The contrastive term has a floor of ln(positives) > 0, so the halving
    // is checked on the reconstruction terms.
    let (a, b) = (mean(head, &reconstruction), mean(tail, &reconstruction));
    assert!(b <= 0.5 * a, "reconstruction loss {a:.4} -> {b:.4}");
}

#[test]
fn content_survives_extraction_and_random_styles() {
    let m = &fixture().model;
    // Extraction must stay well inside the deviation caused by swapping the
    // content itself; random style codes (drawn uniformly, including codes
    // the model rarely selects) must at least stay inside it.
    let swap = cross_content_deviation();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in 0..4 {
        for s in 0..4 {
            let x = clip(c, s, 128);
            let ex = content_deviation(&ops::content_extract(m, &x, 1).unwrap(), &x).unwrap();
            let aug = ops::random_style_augmentation(m, &x, 1, 8, &mut rng).unwrap();
            let au = content_deviation(&aug.clip, &x).unwrap();
            assert!(ex < 0.5 * swap, "content {c} style {s}: extract {ex:.3}, content swap {swap:.3}");
            assert!(au < swap, "content {c} style {s}: augment {au:.3}, content swap {swap:.3}");
        }
    }
}

#[test]
fn extraction_is_nearly_idempotent() {
    // Measured gap of the reference run is about 0.01 m mean joint distance.
    const TOLERANCE: f64 = 0.05;
    let m = &fixture().model;
    for c in 0..4 {
        let once = ops::content_extract(m, &clip(c, 2, 128), 1).unwrap();
        let twice = ops::content_extract(m, &once, 1).unwrap();
        let gap = position_distance(&once, &twice);
        assert!(gap <= TOLERANCE, "content {c}: gap {gap:.4}");
    }
}

#[test]
fn interpolation_is_continuous_in_alpha() {
    let m = &fixture().model;
    let x = clip(1, 3, 64);
    let at = |a: f64| ops::style_interpolation(m, &x, a, 1).unwrap();
    let dist = |a: &MotionClip, b: &MotionClip| ops::feature_distance(a, b).unwrap();
    // Local Lipschitz estimate from a coarse grid, then a fine step.
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let outs: Vec<MotionClip> = grid.iter().map(|&a| at(a)).collect();
    let l = outs.windows(2).map(|w| dist(&w[0], &w[1]) / 0.1).fold(0.0, f64::max);
    for &a in &[0.0, 0.37, 0.5, 0.99] {
        let d = dist(&at(a), &at(a + 1e-3));
        assert!(d <= 2.0 * l * 1e-3, "alpha {a}: {d:.2e} vs {:.2e}", l * 1e-3);
    }
}

#[test]
fn inversion_moves_back_and_narrows_wide_legs() {
    let m = &fixture().model;
    let wide = style_id("wide_legs").unwrap();
    for c in 0..4 {
        let x = clip(c, wide, 128);
        let inv = ops::style_inversion(m, &x, 1).unwrap();
        let inv2 = ops::style_inversion(m, &inv, 1).unwrap();
        assert!(position_distance(&x, &inv2) < position_distance(&x, &inv), "content {c}");
        let neutral = ops::reconstruct(m, &clip(c, 0, 128)).unwrap();
        assert!(
            mean_ankle_separation(&inv) < mean_ankle_separation(&neutral),
            "content {c}: inverted {:.3} vs neutral {:.3}",
            mean_ankle_separation(&inv),
            mean_ankle_separation(&neutral)
        );
    }
}

#[test]
fn transitions_follow_the_script_smoothly() {
    let f = fixture();
    let m = &f.model;
    let p99 = reconstruction_delta_p99(m);
    let slots = ops::slot_count(m, 192);
    let half = slots / 2;
    let script = TransitionScript {
        segments: vec![
            TransitionSegment { style: 0, start: 0, end: half },
            TransitionSegment { style: 1, start: half, end: slots },
        ],
    };
    let mut agree = 0;
    let mut windows = 0;
    for a in 0..4 {
        for b in 0..4 {
            if a == b {
                continue;
            }
            let content = clip(0, 0, 192);
            let styles = vec![clip(1, a, 192), clip(2, b, 192)];
            let y = ops::style_transition(m, &content, &styles, &script, 1).unwrap();
            let jump = frame_deltas(&y).into_iter().fold(0.0, f64::max);
            assert!(jump <= 3.0 * p99, "{a}->{b}: largest jump {jump:.4} vs 3 x {p99:.4}");
            // 64-frame windows centred in each half.
            for (start, style) in [(16, a), (112, b)] {
                let w = MotionClip { frames: y.frames[start..start + 64].to_vec(), ..y.clone() };
                let predicted = f.classifier.predict(&w).unwrap();
                agree += usize::from(style_id(&f.classifier.labels[predicted]) == Some(style));
                windows += 1;
            }
        }
    }
    // Single transfers are right about four times in five; demand a clear majority.
    assert!(agree * 3 >= windows * 2, "{agree}/{windows} window centres follow the script");
}

#[test]
fn blend_of_a_clip_with_itself() {
    let m = &fixture().model;
    let p99 = reconstruction_delta_p99(m);
    let x = clip(3, 1, 128);
    let rec = ops::reconstruct(m, &x).unwrap();
    let y = ops::motion_blend(m, &x, &x).unwrap();
    let rec_err = position_distance(&x, &rec);
    let first = MotionClip { frames: y.frames[16..112].to_vec(), ..y.clone() };
    let inner = MotionClip { frames: x.frames[16..112].to_vec(), ..x.clone() };
    assert!(position_distance(&inner, &first) <= 2.0 * rec_err.max(1e-3));
    let seam = frame_deltas(&y)[127];
    assert!(seam <= 3.0 * p99, "seam {seam:.4} vs 3 x {p99:.4}");
}

#[test]
fn content_interpolation_averages_trajectories() {
    let m = &fixture().model;
    let (straight, turn) = (clip(0, 0, 128), clip(1, 0, 128));
    let mid = ops::content_interpolation(m, &straight, &turn, 0.5, 1, StyleSource::A).unwrap();
    let lateral = |c: &MotionClip| {
        let t = clip_root_trajectory(c);
        t.iter().map(|p| p.x).sum::<f64>() / t.len() as f64
    };
    let (a, b, x) = (lateral(&straight), lateral(&turn), lateral(&mid));
    assert!(x > a.min(b) && x < a.max(b), "straight {a:.3}, turn {b:.3}, blend {x:.3}");
}

#[test]
fn fine_tuning_helps_an_unseen_style() {
    let f = fixture();
    let unseen = style_id("stiff").unwrap();
    let contents: Vec<MotionClip> = (0..4).map(|c| clip(c, 0, 64)).collect();
    let styles: Vec<MotionClip> = (0..4).map(|c| clip(c, unseen, 64)).collect();
    let accuracy = |m: &CodecModel| {
        let mut outs = Vec::new();
        for c in &contents {
            for s in &styles {
                outs.push(ops::code_swap_transfer(m, c, s, 1).unwrap());
            }
        }
        let targets = vec![styles[0].style_label.clone().unwrap(); outs.len()];
        style_accuracy(&f.classifier, &outs, &targets, 1).unwrap().top1
    };
    let zero_shot = accuracy(&f.model);
    let tuned = fine_tune(f.model.clone(), &set(&[0, unseen], 4, 256, 77_000), 400).unwrap();
    assert_eq!(tuned.stack.books.len(), f.model.stack.books.len());
    let after = accuracy(&tuned);
    assert!(after > zero_shot, "zero-shot {zero_shot:.1}% vs fine-tuned {after:.1}%");
}
