//! Detection of people looking at each other in video.
//!
//! Head detections are linked into tracks, pairs of tracks are cut into
//! fixed-length windows, and each window is scored by a three-branch
//! network over the two head-crop sequences and a rendered head map.
//! Training, evaluation and a character-relationship analysis build on
//! top of that.

pub mod checkpoint;
pub mod crop;
pub mod error;
pub mod eval;
pub mod headmap;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod social;
pub mod synthgen;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    iou, BoundingBox, FrameGeometry, GeometryTuple, HeadDetection, HeadTrack, NormalizedPose, PairLabel, PoseAngles,
    TrackPairSample,
};
