use super::skeleton::MotionClip;

/// Number of windows `window_dataset` cuts from a clip of `len` frames.
pub fn window_count(len: usize, window_len: usize, stride: usize) -> usize {
    if window_len == 0 || stride == 0 || len < window_len {
        0
    } else {
        (len - window_len) / stride + 1
    }
}

/// Fixed-length windows; each inherits its clip's label, skeleton and fps.
pub fn window_dataset(clips: &[MotionClip], window_len: usize, stride: usize) -> Vec<MotionClip> {
    let mut out = Vec::new();
    for clip in clips {
        for w in 0..window_count(clip.len(), window_len, stride) {
            let start = w * stride;
            out.push(MotionClip {
                skeleton: clip.skeleton.clone(),
                frames: clip.frames[start..start + window_len].to_vec(),
                fps: clip.fps,
                style_label: clip.style_label.clone(),
            });
        }
    }
    out
}
