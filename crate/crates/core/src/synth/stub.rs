//! Deterministic in-process clients for offline runs and tests.

use parking_lot::Mutex;

use super::{
    Captioner, ClientError, ImageGenerator, SemanticMap, SemanticSegmenter, Shot, ShotSegmenter,
    VideoGenerator,
};
use crate::frame::Frame;

/// Default clip length produced by the echo generator.
pub const DEFAULT_CLIP_FRAMES: usize = 16;

/// Splits a clip into consecutive shots of `every` frames (last one may be shorter).
#[derive(Debug, Clone, Copy)]
pub struct UniformShotSegmenter {
    every: usize,
}

impl UniformShotSegmenter {
    pub fn new(every: usize) -> Self {
        assert!(every > 0, "shot length must be positive");
        Self { every }
    }
}

impl ShotSegmenter for UniformShotSegmenter {
    fn segment_shots(&self, frames: &[Frame]) -> Result<Vec<Shot>, ClientError> {
        Ok((0..frames.len())
            .step_by(self.every)
            .map(|start| Shot::new(start, (start + self.every).min(frames.len())))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct FixedCaptioner {
    caption: String,
}

impl FixedCaptioner {
    pub fn new(caption: impl Into<String>) -> Self {
        Self {
            caption: caption.into(),
        }
    }
}

impl Captioner for FixedCaptioner {
    fn caption_shot(&self, _frames: &[Frame]) -> Result<String, ClientError> {
        Ok(self.caption.clone())
    }
}

/// Fixed captioner that counts how often it was asked.
#[derive(Debug)]
pub struct RecordingCaptioner {
    inner: FixedCaptioner,
    calls: Mutex<usize>,
}

impl RecordingCaptioner {
    pub fn new(caption: impl Into<String>) -> Self {
        Self {
            inner: FixedCaptioner::new(caption),
            calls: Mutex::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock()
    }
}

impl Captioner for RecordingCaptioner {
    fn caption_shot(&self, frames: &[Frame]) -> Result<String, ClientError> {
        *self.calls.lock() += 1;
        self.inner.caption_shot(frames)
    }
}

/// Labels every pixel with one class.
#[derive(Debug, Clone, Copy)]
pub struct SingleClassSegmenter {
    class: u32,
}

impl SingleClassSegmenter {
    pub fn new(class: u32) -> Self {
        Self { class }
    }
}

impl SemanticSegmenter for SingleClassSegmenter {
    fn semantic_map(&self, frame: &Frame) -> Result<SemanticMap, ClientError> {
        Ok(SemanticMap::uniform(frame.width(), frame.height(), self.class))
    }
}

/// Paints each class id with a fixed colour; ignores the caption.
#[derive(Debug, Clone, Copy, Default)]
pub struct PaletteImageGenerator;

fn class_colour(class: u32) -> [f64; 3] {
    // Knuth multiplicative hash spread over the three channels.
    let h = class.wrapping_mul(2_654_435_761);
    [h >> 24, (h >> 16) & 0xff, (h >> 8) & 0xff].map(|b| f64::from(b & 0xff) / 255.0)
}

impl ImageGenerator for PaletteImageGenerator {
    fn generate_image(&self, _caption: &str, map: &SemanticMap) -> Result<Frame, ClientError> {
        if !map.is_consistent() || map.width == 0 || map.height == 0 {
            return Err(ClientError::new("semantic map size does not match its labels"));
        }
        Ok(Frame::from_fn(map.width, map.height, |x, y| {
            class_colour(map.labels[y * map.width + x])
        }))
    }
}

/// Repeats the conditioning frame `length` times. Without one, emits mid-grey
/// frames of `fallback_size`.
#[derive(Debug, Clone, Copy)]
pub struct EchoVideoGenerator {
    length: usize,
    fallback_size: (usize, usize),
}

impl EchoVideoGenerator {
    pub fn new(length: usize, fallback_size: (usize, usize)) -> Self {
        assert!(length > 0);
        Self {
            length,
            fallback_size,
        }
    }
}

impl VideoGenerator for EchoVideoGenerator {
    fn generate_video(&self, _caption: &str, start: Option<&Frame>) -> Result<Vec<Frame>, ClientError> {
        let frame = match start {
            Some(f) => f.clone(),
            None => Frame::filled(self.fallback_size.0, self.fallback_size.1, [0.5; 3]),
        };
        Ok(vec![frame; self.length])
    }
}

/// Wraps a generator and records `(caption, had_start_frame)` per call.
#[derive(Debug)]
pub struct RecordingVideoGenerator<G> {
    inner: G,
    calls: Mutex<Vec<(String, bool)>>,
}

impl<G> RecordingVideoGenerator<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<(String, bool)> {
        self.calls.lock().clone()
    }
}

impl<G: VideoGenerator> VideoGenerator for RecordingVideoGenerator<G> {
    fn generate_video(&self, caption: &str, start: Option<&Frame>) -> Result<Vec<Frame>, ClientError> {
        self.calls.lock().push((caption.to_string(), start.is_some()));
        self.inner.generate_video(caption, start)
    }
}
