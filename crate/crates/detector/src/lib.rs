//! Two-stage lidar detector trained from BEV click annotations.
//!
//! Stage 1 scores every point as foreground and votes for object centers;
//! the votes become cylindrical proposals, deduplicated by center-aware
//! NMS. Stage 2 turns each proposal into a cuboid, re-crops around it and
//! refines the box while predicting a confidence. The same stage-2 networks
//! complete a cuboid from a single human click (active annotation).

pub mod augment;
pub mod codec;
pub mod config;
pub mod crop;
pub mod infer;
pub mod losses;
pub mod proposals;
pub mod stage1;
pub mod stage2;
pub mod train;

use bevclick_core::geometry::GeometryError;
use bevclick_core::kitti::KittiError;
use bevclick_nn::NnError;
use thiserror::Error;

pub use config::{ClassProfile, DetectorConfig, LossConfig, ObjectClass, Preset, Stage1Config, Stage2Config, TrainConfig};
pub use infer::{active_annotate, infer_scene, ActiveResult, Detector};
pub use stage1::{stage1_forward, Stage1Model};
pub use stage2::{stage2_predict, Stage2Models, Stage2Prediction};
pub use train::{select_training_proposals, train_stage1, train_stage2, LossLog, TrainScene};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Kitti(#[from] KittiError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scene has no points")]
    EmptyScene,
    #[error("proposal contains no points")]
    EmptyProposal,
    #[error("no points in any candidate cylinder around ({x:.2}, {z:.2})")]
    NoPoints { x: f64, z: f64 },
    #[error("empty training set: {0}")]
    EmptyDataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
