//! Synthesis pipelines S1/S2/S3.
//!
//! The generative models are remote services behind the client traits below;
//! this module owns shot handling, start-frame selection, caption routing and
//! ordered assembly. [`stub`] has deterministic in-process clients and
//! [`http`] the JSON-over-HTTP client.

pub mod http;
pub mod stub;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::MemorabilityEstimator;
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaptionSource {
    Manual,
    Automatic,
}

/// Frame range `[start_frame, end_frame)` of one shot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Shot {
    pub start_frame: usize,
    pub end_frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    pub source: CaptionSource,
}

impl Shot {
    pub fn new(start_frame: usize, end_frame: usize) -> Self {
        Self {
            start_frame,
            end_frame,
            caption: None,
            source: CaptionSource::Automatic,
        }
    }

    pub fn len(&self) -> usize {
        self.end_frame.saturating_sub(self.start_frame)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-pixel class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

impl SemanticMap {
    pub fn uniform(width: usize, height: usize, class: u32) -> Self {
        Self {
            width,
            height,
            labels: vec![class; width * height],
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.labels.len() == self.width * self.height
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct ClientError(pub String);

impl ClientError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

pub trait ShotSegmenter: Send + Sync {
    fn segment_shots(&self, frames: &[Frame]) -> Result<Vec<Shot>, ClientError>;
}

pub trait Captioner: Send + Sync {
    fn caption_shot(&self, frames: &[Frame]) -> Result<String, ClientError>;
}

pub trait SemanticSegmenter: Send + Sync {
    fn semantic_map(&self, frame: &Frame) -> Result<SemanticMap, ClientError>;
}

pub trait ImageGenerator: Send + Sync {
    fn generate_image(&self, caption: &str, map: &SemanticMap) -> Result<Frame, ClientError>;
}

pub trait VideoGenerator: Send + Sync {
    /// Must return at least one frame.
    fn generate_video(&self, caption: &str, start: Option<&Frame>) -> Result<Vec<Frame>, ClientError>;
}

/// The set of external services a pipeline run talks to.
pub struct Clients<'a> {
    pub shots: &'a dyn ShotSegmenter,
    pub captioner: &'a dyn Captioner,
    pub semantic: &'a dyn SemanticSegmenter,
    pub image: &'a dyn ImageGenerator,
    pub video: &'a dyn VideoGenerator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthVariant {
    S1,
    S2,
    S3,
}

impl std::str::FromStr for SynthVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Self::S1),
            "s2" => Ok(Self::S2),
            "s3" => Ok(Self::S3),
            other => Err(format!("unknown synthesis variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    SegmentShots,
    Caption,
    SemanticMap,
    GenerateImage,
    GenerateVideo,
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("shot has no frames")]
    EmptyShot,
    #[error("video has no frames")]
    EmptyVideo,
    #[error("{provided} captions provided for {shots} shots")]
    CaptionMismatch { provided: usize, shots: usize },
    #[error("{stage:?} failed for shot {shot:?}: {source}")]
    PipelineError {
        stage: Stage,
        shot: Option<usize>,
        #[source]
        source: ClientError,
    },
}

fn stage_err(stage: Stage, shot: Option<usize>) -> impl FnOnce(ClientError) -> SynthError {
    move |source| SynthError::PipelineError { stage, shot, source }
}

/// Index of the first frame scoring strictly above the shot's mean score,
/// or 0 when no frame does.
pub fn select_start_frame(
    shot_frames: &[Frame],
    estimator: &dyn MemorabilityEstimator,
) -> Result<usize, SynthError> {
    let scores: Vec<f64> = shot_frames.iter().map(|f| estimator.estimate(f).score).collect();
    first_above_mean(&scores).ok_or(SynthError::EmptyShot)
}

/// `None` only for an empty slice.
pub fn first_above_mean(scores: &[f64]) -> Option<usize> {
    if scores.is_empty() {
        return None;
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Some(scores.iter().position(|s| *s > mean).unwrap_or(0))
}

/// What happened to one shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ShotOutcome {
    pub shot: Shot,
    /// Index within the shot, absent for S3.
    pub start_frame_offset: Option<usize>,
    pub generated_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthResult {
    pub frames: Vec<Frame>,
    pub shots: Vec<ShotOutcome>,
}

fn validate_shots(shots: &[Shot], n_frames: usize) -> Result<(), ClientError> {
    if shots.is_empty() {
        return Err(ClientError::new("segmenter returned no shots"));
    }
    for (i, s) in shots.iter().enumerate() {
        if s.end_frame <= s.start_frame || s.end_frame > n_frames {
            return Err(ClientError::new(format!(
                "shot {i} has invalid range {}..{} for {n_frames} frames",
                s.start_frame, s.end_frame
            )));
        }
    }
    Ok(())
}

/// Runs a synthesis pipeline. Manual captions, when given, must have one
/// entry per detected shot and replace automatic captioning entirely.
pub fn run_pipeline(
    frames: &[Frame],
    variant: SynthVariant,
    captions: Option<&[String]>,
    clients: &Clients<'_>,
    estimator: &dyn MemorabilityEstimator,
) -> Result<SynthResult, SynthError> {
    if frames.is_empty() {
        return Err(SynthError::EmptyVideo);
    }
    let mut shots = clients
        .shots
        .segment_shots(frames)
        .map_err(stage_err(Stage::SegmentShots, None))?;
    validate_shots(&shots, frames.len()).map_err(stage_err(Stage::SegmentShots, None))?;

    if let Some(manual) = captions {
        if manual.len() != shots.len() {
            return Err(SynthError::CaptionMismatch {
                provided: manual.len(),
                shots: shots.len(),
            });
        }
        for (shot, text) in shots.iter_mut().zip(manual) {
            shot.caption = Some(text.clone());
            shot.source = CaptionSource::Manual;
        }
    }

    let per_shot: Vec<(Vec<Frame>, ShotOutcome)> = shots
        .into_par_iter()
        .enumerate()
        .map(|(i, mut shot)| {
            let shot_frames = &frames[shot.start_frame..shot.end_frame];
            let caption = match &shot.caption {
                Some(c) => c.clone(),
                None => {
                    let c = clients
                        .captioner
                        .caption_shot(shot_frames)
                        .map_err(stage_err(Stage::Caption, Some(i)))?;
                    shot.caption = Some(c.clone());
                    shot.source = CaptionSource::Automatic;
                    c
                }
            };
            let (generated, offset) = match variant {
                SynthVariant::S1 => {
                    let k = select_start_frame(shot_frames, estimator)?;
                    let out = clients
                        .video
                        .generate_video(&caption, Some(&shot_frames[k]))
                        .map_err(stage_err(Stage::GenerateVideo, Some(i)))?;
                    (out, Some(k))
                }
                SynthVariant::S2 => {
                    let k = select_start_frame(shot_frames, estimator)?;
                    let map = clients
                        .semantic
                        .semantic_map(&shot_frames[k])
                        .map_err(stage_err(Stage::SemanticMap, Some(i)))?;
                    let image = clients
                        .image
                        .generate_image(&caption, &map)
                        .map_err(stage_err(Stage::GenerateImage, Some(i)))?;
                    let out = clients
                        .video
                        .generate_video(&caption, Some(&image))
                        .map_err(stage_err(Stage::GenerateVideo, Some(i)))?;
                    (out, Some(k))
                }
                SynthVariant::S3 => {
                    let out = clients
                        .video
                        .generate_video(&caption, None)
                        .map_err(stage_err(Stage::GenerateVideo, Some(i)))?;
                    (out, None)
                }
            };
            if generated.is_empty() {
                return Err(SynthError::PipelineError {
                    stage: Stage::GenerateVideo,
                    shot: Some(i),
                    source: ClientError::new("generator returned no frames"),
                });
            }
            let outcome = ShotOutcome {
                shot,
                start_frame_offset: offset,
                generated_frames: generated.len(),
            };
            Ok((generated, outcome))
        })
        .collect::<Result<_, SynthError>>()?;

    let mut result = SynthResult {
        frames: Vec::new(),
        shots: Vec::new(),
    };
    for (frames, outcome) in per_shot {
        result.frames.extend(frames);
        result.shots.push(outcome);
    }
    Ok(result)
}
