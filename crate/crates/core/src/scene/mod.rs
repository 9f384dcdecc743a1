//! Frame sources: replayed datasets, analytic synthetic scenes, segmentation
//! post-processing and noise injection.

pub mod frame;
pub mod masks;
pub mod noise;
pub mod replay;
pub mod synthetic;

pub use frame::{FrameBundle, SegObservation};
pub use masks::{postprocess_masks, postprocess_observation, DEFAULT_EROSION_RADIUS};
pub use noise::{perturb_depth, perturb_segmentation, NoiseConfig};
pub use replay::{load_dataset, ReplayFrame, ReplayOptions, ReplayStream, ReplayWriter};
pub use synthetic::{raycast_frame, RaycastFrame, SceneObject, Shape, SyntheticWorld};
