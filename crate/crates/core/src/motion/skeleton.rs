use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Joint hierarchy with rest-pose offsets (meters, parent frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    parents: Vec<Option<usize>>,
    rest_offsets: Vec<Vector3<f64>>,
    order: Vec<usize>,
}

impl Skeleton {
    /// Builds a skeleton, checking that `parents` describes a single-rooted tree
    /// and that the root carries a zero rest offset.
    pub fn new(parents: Vec<Option<usize>>, rest_offsets: Vec<Vector3<f64>>) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(Error::Structural("skeleton has no joints".into()));
        }
        if rest_offsets.len() != n {
            return Err(Error::Structural(format!(
                "{} parents but {} rest offsets",
                n,
                rest_offsets.len()
            )));
        }
        let roots: Vec<usize> = (0..n).filter(|&j| parents[j].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Structural(format!(
                "skeleton must have exactly one root, found {}",
                roots.len()
            )));
        }
        for (j, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n || p == j {
                    return Err(Error::Structural(format!("joint {j} has invalid parent {p}")));
                }
            }
        }
        let root = roots[0];
        if rest_offsets[root].norm() != 0.0 {
            return Err(Error::Structural("root rest offset must be zero".into()));
        }
        if rest_offsets.iter().any(|o| !o.iter().all(|v| v.is_finite())) {
            return Err(Error::Structural("non-finite rest offset".into()));
        }

        // Breadth-first order from the root; anything unreached sits on a cycle.
        let mut children = vec![Vec::new(); n];
        for (j, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(j);
            }
        }
        let mut order = Vec::with_capacity(n);
        order.push(root);
        let mut head = 0;
        while head < order.len() {
            let j = order[head];
            head += 1;
            order.extend_from_slice(&children[j]);
        }
        if order.len() != n {
            return Err(Error::Structural("parent indices contain a cycle".into()));
        }
        Ok(Self {
            parents,
            rest_offsets,
            order,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn rest_offset(&self, joint: usize) -> Vector3<f64> {
        self.rest_offsets[joint]
    }

    pub fn rest_offsets(&self) -> &[Vector3<f64>] {
        &self.rest_offsets
    }

    pub fn root(&self) -> usize {
        self.order[0]
    }

    /// Joints ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }
}

/// Per-frame character state. All per-joint quantities live in the root frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    pub positions: Vec<Vector3<f64>>,
    /// First two columns of each joint's rotation matrix, column-major.
    pub orientations: Vec<[f64; 6]>,
    pub velocities: Vec<Vector3<f64>>,
    pub angular_velocities: Vec<Vector3<f64>>,
    /// Global root height, stored as a 3-vector `(0, y, 0)`.
    pub root_height: Vector3<f64>,
    /// World up direction expressed in the root frame.
    pub up: Vector3<f64>,
}

impl FrameState {
    pub fn joint_count(&self) -> usize {
        self.positions.len()
    }

    fn consistent(&self, joints: usize) -> bool {
        self.positions.len() == joints
            && self.orientations.len() == joints
            && self.velocities.len() == joints
            && self.angular_velocities.len() == joints
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub skeleton: Skeleton,
    pub frames: Vec<FrameState>,
    pub fps: f64,
    pub style_label: Option<String>,
}

impl MotionClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Structural("clip has no frames".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Structural(format!("invalid fps {}", self.fps)));
        }
        let joints = self.skeleton.joint_count();
        for (t, f) in self.frames.iter().enumerate() {
            if !f.consistent(joints) {
                return Err(Error::Structural(format!(
                    "frame {t} does not match skeleton joint count {joints}"
                )));
            }
        }
        Ok(())
    }
}
