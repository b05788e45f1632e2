//! Skeletons, clips, rotation and kinematics utilities, feature layout and
//! motion file I/O.

pub mod features;
pub mod io;
pub mod kinematics;
pub mod rotation;
pub mod skeleton;
pub mod synth;
pub mod window;

pub use features::{assemble_features, disassemble_features, FeatureLayout, Normalizer};
pub use kinematics::{forward_kinematics, integrate_root, root_kinematics, RootKinematics, RootPose};
pub use skeleton::{FrameState, MotionClip, Skeleton};
pub use synth::generate_synthetic;
pub use window::window_dataset;
