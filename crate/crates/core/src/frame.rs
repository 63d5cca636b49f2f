//! RGB frames in the real `[0, 1]` domain and frame-sequence directories.
//!
//! A sequence directory holds zero-padded numbered `.png` or `.ppm` files and
//! a `meta.json` sidecar with `{fps, width, height}`. 8-bit samples convert
//! as `value / 255` on read and `round(value * 255)` on write.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame dimensions must be positive, got {0}x{1}")]
    BadDimensions(usize, usize),
    #[error("expected {expected} samples, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("sample {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FrameError + '_ {
    move |source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Row-major RGB frame, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::BadDimensions(width, height));
        }
        let expected = width * height * 3;
        if data.len() != expected {
            return Err(FrameError::BadLength {
                expected,
                actual: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FrameError::OutOfRange(*v));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        assert!(width > 0 && height > 0);
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds a frame whose samples are already known to be in range.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.width * self.height) as f64;
        let mut sums = [0.0; 3];
        for p in self.pixels() {
            for c in 0..3 {
                sums[c] += p[c];
            }
        }
        sums.map(|s| s / n)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|b| f64::from(*b) / 255.0).collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }
}

/// Sidecar metadata for a frame-sequence directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub fps: f64,
    pub width: usize,
    pub height: usize,
}

pub const META_FILE: &str = "meta.json";

/// Numbered frame files in a directory, sorted by frame number.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>, FrameError> {
    let mut files: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png") | Some("ppm")) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let digits: String = stem
            .chars()
            .rev()
            .take_while(|c| c.is_ascii_digit())
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let Ok(n) = digits.parse::<u64>() else {
            return Err(FrameError::Format {
                path,
                message: "frame file name must end in a frame number".into(),
            });
        };
        files.push((n, path));
    }
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

pub fn read_frame(path: &Path) -> Result<Frame, FrameError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory(&bytes).map_err(|e| FrameError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(Frame::from_rgb8(&img.to_rgb8()))
}

/// Reads every frame of a sequence directory. Metadata is optional on input;
/// when absent, dimensions come from the first frame and fps defaults to 25.
pub fn read_sequence(dir: &Path) -> Result<(SequenceMeta, Vec<Frame>), FrameError> {
    let files = list_frame_files(dir)?;
    let frames = files
        .iter()
        .map(|p| read_frame(p))
        .collect::<Result<Vec<_>, _>>()?;
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        serde_json::from_str(&text).map_err(|e| FrameError::Format {
            path: meta_path.clone(),
            message: e.to_string(),
        })?
    } else if let Some(f) = frames.first() {
        SequenceMeta {
            fps: 25.0,
            width: f.width(),
            height: f.height(),
        }
    } else {
        return Err(FrameError::Format {
            path: dir.to_path_buf(),
            message: "no frames found".into(),
        });
    };
    if let Some((i, f)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.dims() != (meta.width, meta.height))
    {
        return Err(FrameError::Format {
            path: files[i].clone(),
            message: format!(
                "frame is {}x{}, sequence is {}x{}",
                f.width(),
                f.height(),
                meta.width,
                meta.height
            ),
        });
    }
    Ok((meta, frames))
}

/// Writes frames as `frame_000000.png ...` plus the sidecar.
pub fn write_sequence(
    dir: &Path,
    meta: &SequenceMeta,
    frames: &[Frame],
) -> Result<(), FrameError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, frame) in frames.iter().enumerate() {
        let path = dir.join(format!("frame_{i:06}.png"));
        frame
            .to_rgb8()
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| FrameError::Format {
                path: path.clone(),
                message: e.to_string(),
            })?;
    }
    let meta_path = dir.join(META_FILE);
    let mut f = fs::File::create(&meta_path).map_err(io_err(&meta_path))?;
    f.write_all(serde_json::to_string_pretty(meta).unwrap().as_bytes())
        .map_err(io_err(&meta_path))?;
    Ok(())
}

/// SHA-256 over the raw bytes of every frame file, in frame order.
pub fn hash_sequence_files(dir: &Path) -> Result<String, FrameError> {
    let mut hasher = Sha256::new();
    for path in list_frame_files(dir)? {
        hasher.update(fs::read(&path).map_err(io_err(&path))?);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn encode_png(frame: &Frame) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    frame
        .to_rgb8()
        .write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory png encode");
    out.into_inner()
}

pub fn decode_image(bytes: &[u8]) -> Result<Frame, String> {
    image::load_from_memory(bytes)
        .map(|img| Frame::from_rgb8(&img.to_rgb8()))
        .map_err(|e| e.to_string())
}
