//! MQM motion files.
//!
//! Line 1 is a JSON header:
//!
//! ```text
//! {"version":1,"fps":30.0,"joint_count":2,"parent_index":[-1,0],
//!  "rest_offset":[[0,0,0],[0,1,0]],"style_label":"neutral"}
//! ```
//!
//! followed by one line per frame holding the `15J + 6` layout-ordered
//! feature values, comma separated, `.` as decimal separator. Values are
//! written with shortest round-trip formatting so save/load is exact.
//! Non-finite values are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::features::{frame_features, row_to_frame, FeatureLayout};
use super::skeleton::{MotionClip, Skeleton};
use crate::error::{Error, Result};

pub const MQM_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    fps: f64,
    joint_count: usize,
    parent_index: Vec<i64>,
    rest_offset: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    style_label: Option<String>,
}

pub fn clip_to_string(clip: &MotionClip) -> Result<String> {
    clip.validate()?;
    let sk = &clip.skeleton;
    let header = Header {
        version: MQM_VERSION,
        fps: clip.fps,
        joint_count: sk.joint_count(),
        parent_index: sk
            .parents()
            .iter()
            .map(|p| p.map_or(-1, |p| p as i64))
            .collect(),
        rest_offset: sk.rest_offsets().iter().map(|o| [o.x, o.y, o.z]).collect(),
        style_label: clip.style_label.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serialises");
    out.push('\n');
    let layout = FeatureLayout::new(sk.joint_count());
    let mut row = vec![0.0; layout.dim()];
    for (t, frame) in clip.frames.iter().enumerate() {
        frame_features(frame, layout, &mut row);
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("frame {t} holds non-finite value {v}")));
        }
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_clip(clip: &MotionClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = clip_to_string(clip)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_clip(path: impl AsRef<Path>) -> Result<MotionClip> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_clip(&text, path)
}

pub fn parse_clip(text: &str, path: &Path) -> Result<MotionClip> {
    let err = |line: usize, frame: Option<usize>, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        frame,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, head) = lines
        .next()
        .ok_or_else(|| err(1, None, "missing header".into()))?;
    let header: Header =
        serde_json::from_str(head).map_err(|e| err(1, None, format!("malformed header: {e}")))?;
    if header.version != MQM_VERSION {
        return Err(err(1, None, format!("unsupported version {}", header.version)));
    }
    if !(header.fps.is_finite() && header.fps > 0.0) {
        return Err(err(1, None, format!("invalid fps {}", header.fps)));
    }
    if header.parent_index.len() != header.joint_count
        || header.rest_offset.len() != header.joint_count
    {
        return Err(err(
            1,
            None,
            format!(
                "joint_count {} but {} parents and {} offsets",
                header.joint_count,
                header.parent_index.len(),
                header.rest_offset.len()
            ),
        ));
    }
    let parents = header
        .parent_index
        .iter()
        .map(|&p| match p {
            -1 => Ok(None),
            p if p >= 0 => Ok(Some(p as usize)),
            p => Err(err(1, None, format!("invalid parent index {p}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let offsets = header
        .rest_offset
        .iter()
        .map(|o| Vector3::new(o[0], o[1], o[2]))
        .collect();
    let skeleton =
        Skeleton::new(parents, offsets).map_err(|e| err(1, None, format!("bad skeleton: {e}")))?;

    let layout = FeatureLayout::new(header.joint_count);
    let mut frames = Vec::new();
    let mut row = Vec::with_capacity(layout.dim());
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let frame = frames.len();
        row.clear();
        for (k, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                err(i + 1, Some(frame), format!("field {k} is not a number: {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(err(i + 1, Some(frame), format!("field {k} is not finite")));
            }
            row.push(v);
        }
        if row.len() != layout.dim() {
            return Err(err(
                i + 1,
                Some(frame),
                format!("expected {} values, found {}", layout.dim(), row.len()),
            ));
        }
        frames.push(row_to_frame(&row, layout));
    }
    if frames.is_empty() {
        return Err(err(1, None, "file holds no frames".into()));
    }
    Ok(MotionClip {
        skeleton,
        frames,
        fps: header.fps,
        style_label: header.style_label,
    })
}
