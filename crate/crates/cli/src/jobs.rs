//! Batch jobs over frame-sequence directories: filtering and synthesis.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kisbench_core::domain::FilterParams;
use kisbench_core::filters::{process_video, ContrastPriorEstimator, FilterError, FilterVariant};
use kisbench_core::frame::{hash_sequence_files, read_sequence, write_sequence, FrameError, SequenceMeta};
use kisbench_core::synth::http::{HttpServices, ServiceEndpoints};
use kisbench_core::synth::stub::{
    EchoVideoGenerator, FixedCaptioner, PaletteImageGenerator, SingleClassSegmenter, UniformShotSegmenter,
    DEFAULT_CLIP_FRAMES,
};
use kisbench_core::synth::{run_pipeline, Clients, ShotOutcome, SynthError, SynthVariant};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PREPROCESS_SIDECAR: &str = "preprocess.json";
pub const SYNTH_SIDECAR: &str = "synth.json";
const ESTIMATOR_NAME: &str = "contrast-prior";

#[derive(Debug, Error)]
pub enum JobError {
    #[error(transparent)]
    Frames(#[from] FrameError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

fn input_err(path: &Path, message: impl ToString) -> JobError {
    JobError::Input {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreprocessVariant {
    Original,
    F1,
    F2,
    F3,
}

impl FromStr for PreprocessVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Self::Original),
            "f1" => Ok(Self::F1),
            "f2" => Ok(Self::F2),
            "f3" => Ok(Self::F3),
            other => Err(format!("unknown filter variant `{other}` (expected original, f1, f2 or f3)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PreprocessSidecar {
    pub variant: PreprocessVariant,
    pub params: FilterParams,
    pub estimator: String,
    pub frames: usize,
    pub input_hash: String,
    pub output_hash: String,
}

pub fn load_params(path: Option<&Path>) -> Result<FilterParams, JobError> {
    let Some(path) = path else {
        return Ok(FilterParams::default());
    };
    let text = fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    let params: FilterParams = serde_json::from_str(&text).map_err(|e| input_err(path, e))?;
    let problems = params.violations();
    if !problems.is_empty() {
        return Err(input_err(path, problems.join("; ")));
    }
    Ok(params)
}

fn write_sidecar<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), JobError> {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).expect("sidecar serializes")).map_err(|e| input_err(&path, e))
}

/// Filters a frame sequence into `out_dir` and records what was done.
pub fn preprocess(
    input: &Path,
    variant: PreprocessVariant,
    params: &FilterParams,
    out_dir: &Path,
) -> Result<PreprocessSidecar, JobError> {
    let (meta, frames) = read_sequence(input)?;
    let input_hash = hash_sequence_files(input)?;
    let estimator = ContrastPriorEstimator;
    let output = match variant {
        PreprocessVariant::Original => frames,
        PreprocessVariant::F1 => process_video(&frames, FilterVariant::F1, &estimator, params)?,
        PreprocessVariant::F2 => process_video(&frames, FilterVariant::F2, &estimator, params)?,
        PreprocessVariant::F3 => process_video(&frames, FilterVariant::F3, &estimator, params)?,
    };
    write_sequence(out_dir, &meta, &output)?;
    let sidecar = PreprocessSidecar {
        variant,
        params: *params,
        estimator: ESTIMATOR_NAME.to_string(),
        frames: output.len(),
        input_hash,
        output_hash: hash_sequence_files(out_dir)?,
    };
    write_sidecar(out_dir, PREPROCESS_SIDECAR, &sidecar)?;
    Ok(sidecar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthSidecar {
    pub variant: SynthVariant,
    pub services: String,
    pub input_hash: String,
    pub output_hash: String,
    pub frames: usize,
    pub shots: Vec<ShotOutcome>,
}

/// Where synthesis requests go.
pub enum Services {
    /// Offline stand-ins: fixed-length shots, one caption, echo generator.
    Stub { shot_frames: usize, caption: String },
    Http(ServiceEndpoints),
}

/// One caption per non-empty line.
pub fn read_captions(path: &Path) -> Result<Vec<String>, JobError> {
    let text = fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

pub fn synthesize(
    input: &Path,
    variant: SynthVariant,
    captions: Option<&[String]>,
    services: &Services,
    out_dir: &Path,
) -> Result<SynthSidecar, JobError> {
    let (meta, frames) = read_sequence(input)?;
    let input_hash = hash_sequence_files(input)?;
    let estimator = ContrastPriorEstimator;
    let (result, label) = match services {
        Services::Stub { shot_frames, caption } => {
            if *shot_frames == 0 {
                return Err(JobError::Usage("shot length must be positive".into()));
            }
            let shots = UniformShotSegmenter::new(*shot_frames);
            let captioner = FixedCaptioner::new(caption.clone());
            let semantic = SingleClassSegmenter::new(1);
            let video = EchoVideoGenerator::new(DEFAULT_CLIP_FRAMES, (meta.width, meta.height));
            let clients = Clients {
                shots: &shots,
                captioner: &captioner,
                semantic: &semantic,
                image: &PaletteImageGenerator,
                video: &video,
            };
            (run_pipeline(&frames, variant, captions, &clients, &estimator)?, "stub".to_string())
        }
        Services::Http(endpoints) => {
            let http = HttpServices::new(endpoints.clone()).map_err(|e| JobError::Usage(e.to_string()))?;
            let clients = Clients {
                shots: &http,
                captioner: &http,
                semantic: &http,
                image: &http,
                video: &http,
            };
            (run_pipeline(&frames, variant, captions, &clients, &estimator)?, "http".to_string())
        }
    };
    let (width, height) = result.frames.first().map_or((meta.width, meta.height), |f| f.dims());
    let out_meta = SequenceMeta {
        fps: meta.fps,
        width,
        height,
    };
    write_sequence(out_dir, &out_meta, &result.frames)?;
    let sidecar = SynthSidecar {
        variant,
        services: label,
        input_hash,
        output_hash: hash_sequence_files(out_dir)?,
        frames: result.frames.len(),
        shots: result.shots,
    };
    write_sidecar(out_dir, SYNTH_SIDECAR, &sidecar)?;
    Ok(sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names() {
        assert_eq!("F3".parse::<PreprocessVariant>(), Ok(PreprocessVariant::F3));
        assert_eq!("original".parse::<PreprocessVariant>(), Ok(PreprocessVariant::Original));
        assert!("f4".parse::<PreprocessVariant>().is_err());
    }

    #[test]
    fn params_file_is_validated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.json");
        fs::write(&p, r#"{"gamma": 1.5}"#).unwrap();
        assert_eq!(load_params(Some(&p)).unwrap().gamma, 1.5);
        fs::write(&p, r#"{"gamma": -1}"#).unwrap();
        assert!(load_params(Some(&p)).is_err());
        assert_eq!(load_params(None).unwrap(), FilterParams::default());
    }
}
