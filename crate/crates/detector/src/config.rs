//! Network shapes, loss constants, class profiles and training presets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use bevclick_core::par::Execution;
use bevclick_core::weak::{BinEncoderConfig, PseudoLabelConfig};
use bevclick_nn::{AdamConfig, LayerSpec};

use crate::DetectorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectClass {
    Car,
    Pedestrian,
}

impl ObjectClass {
    /// KITTI label class name.
    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Pedestrian => "Pedestrian",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(ObjectClass::Car),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            _ => Err(DetectorError::Config(format!("unknown class `{s}`"))),
        }
    }
}

/// Class-specific radii, thresholds and size prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    pub class: ObjectClass,
    pub proposal_radius: f64,
    /// Minimum center distance between proposals kept by CA-NMS.
    pub nms_distance: f64,
    /// Proposals closer than this to an instance become stage-2 samples.
    pub gt_match_distance: f64,
    /// Proposals farther than this from every click are background samples.
    pub background_distance: f64,
    /// Mean `(h, w, l)`.
    pub anchor: [f64; 3],
    pub fg_threshold: f64,
    pub pseudo: PseudoLabelConfig,
    /// Optional `((x_min, x_max), (z_min, z_max))` window for proposals.
    pub search_range: Option<((f64, f64), (f64, f64))>,
}

impl ClassProfile {
    pub fn car() -> Self {
        Self {
            class: ObjectClass::Car,
            proposal_radius: 4.0,
            nms_distance: 4.0,
            gt_match_distance: 1.4,
            background_distance: 4.0,
            anchor: [1.53, 1.63, 3.88],
            fg_threshold: 0.1,
            pseudo: PseudoLabelConfig::default(),
            search_range: None,
        }
    }

    pub fn pedestrian() -> Self {
        Self {
            class: ObjectClass::Pedestrian,
            proposal_radius: 1.0,
            nms_distance: 1.0,
            gt_match_distance: 0.5,
            background_distance: 1.5,
            anchor: [1.76, 0.66, 0.84],
            fg_threshold: 0.1,
            pseudo: PseudoLabelConfig::pedestrian(),
            search_range: Some(((-20.0, 20.0), (0.0, 48.0))),
        }
    }

    pub fn for_class(class: ObjectClass) -> Self {
        match class {
            ObjectClass::Car => Self::car(),
            ObjectClass::Pedestrian => Self::pedestrian(),
        }
    }

    pub fn in_search_range(&self, x: f64, z: f64) -> bool {
        self.search_range
            .is_none_or(|((x0, x1), (z0, z1))| (x0..=x1).contains(&x) && (z0..=z1).contains(&z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Smooth-L1 switches from quadratic to linear at this magnitude.
    pub smooth_l1_beta: f64,
    pub theta_bins: usize,
    /// Weight of the center term in the stage-1 loss.
    pub center_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            smooth_l1_beta: 1.0,
            theta_bins: 12,
            center_weight: 1.0,
        }
    }
}

impl LossConfig {
    /// Heading bins over `[-pi, pi)`; residuals are in units of half a bin.
    pub fn theta_codec(&self) -> BinEncoderConfig {
        BinEncoderConfig {
            half_range: PI,
            bin_size: 2.0 * PI / self.theta_bins as f64,
            num_bins: self.theta_bins,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.alpha > 0.0 && self.alpha < 1.0 && self.gamma >= 0.0 && self.smooth_l1_beta > 0.0 && self.theta_bins > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Config {
    pub num_points: usize,
    /// Per-point input features besides the coordinates: intensity and height.
    pub in_features: usize,
    pub sa: Vec<LayerSpec>,
    /// FP MLP widths, coarsest level first.
    pub fp: Vec<Vec<usize>>,
    pub head_hidden: usize,
    pub bins: BinEncoderConfig,
}

impl Stage1Config {
    /// Outputs of the center head: per axis, bin logits then residuals.
    pub fn center_outputs(&self) -> usize {
        4 * self.bins.num_bins
    }

    /// `widths` are the per-level output channels of the set abstractions;
    /// each of the two scales gets half.
    fn build(num_points: usize, groups: [usize; 4], widths: [usize; 4], fp: [[usize; 2]; 4], head_hidden: usize) -> Self {
        const RADII: [[f64; 2]; 4] = [[0.1, 0.5], [0.5, 1.0], [1.0, 2.0], [2.0, 4.0]];
        const CAPS: [usize; 2] = [16, 32];
        let sa = (0..4)
            .map(|k| {
                let half = widths[k] / 2;
                LayerSpec::sa(groups[k], &RADII[k], &CAPS, &[&[half, half], &[half, half]])
            })
            .collect();
        Self {
            num_points,
            in_features: 2,
            sa,
            fp: fp.iter().map(|w| w.to_vec()).collect(),
            head_hidden,
            bins: BinEncoderConfig::default(),
        }
    }

    pub fn full() -> Self {
        Self::build(
            16384,
            [4096, 1024, 256, 64],
            [64, 128, 256, 512],
            [[256, 256], [256, 256], [256, 128], [128, 128]],
            128,
        )
    }

    pub fn desk() -> Self {
        Self::build(
            2048,
            [512, 128, 32, 8],
            [16, 32, 64, 128],
            [[64, 64], [64, 64], [64, 32], [32, 32]],
            32,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Config {
    pub num_points: usize,
    /// Canonical x, y, z, intensity and foreground score.
    pub in_features: usize,
    /// Three single-scale layers followed by a global one producing the trunk.
    pub sa: Vec<LayerSpec>,
    pub head_hidden: usize,
    /// Extra context around a cuboid when cropping for refinement.
    pub crop_margin: f64,
}

impl Stage2Config {
    fn build(num_points: usize, groups: [usize; 3], widths: [[usize; 2]; 3], trunk: usize, head_hidden: usize) -> Self {
        const RADII: [f64; 3] = [0.4, 0.8, 1.6];
        let cap = (num_points / 4).clamp(8, 64);
        let mut sa: Vec<LayerSpec> = (0..3).map(|k| LayerSpec::sa(groups[k], &[RADII[k]], &[cap], &[&widths[k]])).collect();
        sa.push(LayerSpec::sa_global(&[trunk, trunk]));
        Self {
            num_points,
            in_features: 5,
            sa,
            head_hidden,
            crop_margin: 0.3,
        }
    }

    pub fn trunk_width(&self) -> usize {
        *self.sa.last().and_then(|s| s.widths[0].last()).unwrap_or(&0)
    }

    pub fn full() -> Self {
        Self::build(512, [256, 128, 32], [[64, 128], [128, 256], [256, 256]], 512, 128)
    }

    pub fn desk() -> Self {
        Self::build(64, [32, 16, 4], [[16, 32], [32, 64], [64, 64]], 128, 32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub stage1_iterations: usize,
    pub stage1_batch: usize,
    pub stage2_iterations: usize,
    pub stage2_batch: usize,
    pub adam: AdamConfig,
    pub augment: bool,
    /// Gradient norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub log_every: usize,
    /// Stage-2 positives kept per instance when building the sample pool.
    pub positives_per_instance: usize,
    /// Background samples per positive in the refinement pool.
    pub background_ratio: f64,
    pub exec: Execution,
}

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            seed: 0,
            stage1_iterations: 8000,
            stage1_batch: 25,
            stage2_iterations: 50000,
            stage2_batch: 800,
            adam: AdamConfig::default(),
            augment: true,
            grad_clip: Some(10.0),
            log_every: 100,
            positives_per_instance: 64,
            background_ratio: 0.25,
            exec: Execution::default(),
        }
    }

    pub fn desk() -> Self {
        Self {
            stage1_iterations: 400,
            stage1_batch: 8,
            stage2_iterations: 1500,
            stage2_batch: 32,
            positives_per_instance: 24,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.stage1_batch == 0 || self.stage2_batch == 0 || self.log_every == 0 {
            return Err(DetectorError::Config("batch sizes and log interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        }
    }
}

impl FromStr for Preset {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(DetectorError::Config(format!("unknown preset `{s}`"))),
        }
    }
}

/// Everything needed to build, train and run the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub preset: Preset,
    pub profile: ClassProfile,
    pub loss: LossConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub train: TrainConfig,
}

impl DetectorConfig {
    pub fn new(preset: Preset, class: ObjectClass) -> Self {
        let (stage1, stage2, mut train) = match preset {
            Preset::Desk => (Stage1Config::desk(), Stage2Config::desk(), TrainConfig::desk()),
            Preset::Full => (Stage1Config::full(), Stage2Config::full(), TrainConfig::full()),
        };
        if class == ObjectClass::Pedestrian {
            train.stage2_iterations = match preset {
                Preset::Desk => 600,
                Preset::Full => 20000,
            };
        }
        Self {
            preset,
            profile: ClassProfile::for_class(class),
            loss: LossConfig::default(),
            stage1,
            stage2,
            train,
        }
    }

    pub fn desk() -> Self {
        Self::new(Preset::Desk, ObjectClass::Car)
    }

    /// Identifies the architecture in checkpoint headers.
    pub fn meta(&self, stage: &str) -> String {
        format!("stage={stage} preset={} class={}", self.preset.name(), self.profile.class.name())
    }

    /// Parse a header written by [`meta`](Self::meta) into `(stage, preset, class)`.
    pub fn parse_meta(meta: &str) -> Result<(String, Preset, ObjectClass), DetectorError> {
        let mut stage = None;
        let mut preset = None;
        let mut class = None;
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("stage", v)) => stage = Some(v.to_string()),
                Some(("preset", v)) => preset = Some(v.parse()?),
                Some(("class", v)) => class = Some(v.parse()?),
                _ => {}
            }
        }
        match (stage, preset, class) {
            (Some(s), Some(p), Some(c)) => Ok((s, p, c)),
            _ => Err(DetectorError::Config(format!("checkpoint header `{meta}` lacks stage/preset/class"))),
        }
    }
}
