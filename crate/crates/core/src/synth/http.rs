//! JSON-over-HTTP client for remote generative services.
//!
//! Images travel as base64-encoded PNG. Each service has its own endpoint:
//!
//! | endpoint   | request                                   | response                        |
//! |------------|-------------------------------------------|---------------------------------|
//! | `shots`    | `{frames: [png]}`                         | `{shots: [{startFrame, endFrame}]}` |
//! | `caption`  | `{frames: [png]}`                         | `{caption}`                     |
//! | `semantic` | `{image: png}`                            | `{width, height, labels}`       |
//! | `image`    | `{caption, semanticMap: {width, height, labels}}` | `{image: png}`          |
//! | `video`    | `{caption, image?: png}`                  | `{frames: [png]}`               |

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    Captioner, ClientError, ImageGenerator, SemanticMap, SemanticSegmenter, Shot, ShotSegmenter,
    VideoGenerator,
};
use crate::frame::{decode_image, encode_png, Frame};

/// Endpoint URIs and timeout for the remote services.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceEndpoints {
    pub shots: String,
    pub caption: String,
    pub semantic: String,
    pub image: String,
    pub video: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    120_000
}

#[derive(Serialize)]
struct FramesRequest {
    frames: Vec<String>,
}

#[derive(Serialize)]
struct ImageRequest {
    image: String,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct GenerateImageRequest<'a> {
    caption: &'a str,
    semantic_map: &'a SemanticMap,
}

#[derive(Serialize)]
struct GenerateVideoRequest<'a> {
    caption: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct ShotRange {
    start_frame: usize,
    end_frame: usize,
}

#[derive(Deserialize)]
struct ShotsResponse {
    shots: Vec<ShotRange>,
}

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

#[derive(Deserialize)]
struct ImageResponse {
    image: String,
}

#[derive(Deserialize)]
struct FramesResponse {
    frames: Vec<String>,
}

pub struct HttpServices {
    endpoints: ServiceEndpoints,
    client: reqwest::blocking::Client,
}

impl HttpServices {
    pub fn new(endpoints: ServiceEndpoints) -> Result<Self, ClientError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoints.timeout_ms))
            .build()
            .map_err(|e| ClientError::new(e.to_string()))?;
        Ok(Self { endpoints, client })
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, url: &str, body: &Req) -> Result<Resp, ClientError> {
        let resp = self
            .client
            .post(url)
            .json(body)
            .send()
            .map_err(|e| ClientError::new(format!("POST {url}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(ClientError::new(format!("POST {url}: HTTP {status}: {text}")));
        }
        resp.json()
            .map_err(|e| ClientError::new(format!("POST {url}: bad response body: {e}")))
    }
}

fn encode(frame: &Frame) -> String {
    B64.encode(encode_png(frame))
}

fn decode(text: &str) -> Result<Frame, ClientError> {
    let bytes = B64
        .decode(text)
        .map_err(|e| ClientError::new(format!("bad base64 image: {e}")))?;
    decode_image(&bytes).map_err(|e| ClientError::new(format!("bad image: {e}")))
}

impl ShotSegmenter for HttpServices {
    fn segment_shots(&self, frames: &[Frame]) -> Result<Vec<Shot>, ClientError> {
        let req = FramesRequest {
            frames: frames.iter().map(encode).collect(),
        };
        let resp: ShotsResponse = self.post(&self.endpoints.shots, &req)?;
        Ok(resp
            .shots
            .into_iter()
            .map(|r| Shot::new(r.start_frame, r.end_frame))
            .collect())
    }
}

impl Captioner for HttpServices {
    fn caption_shot(&self, frames: &[Frame]) -> Result<String, ClientError> {
        let req = FramesRequest {
            frames: frames.iter().map(encode).collect(),
        };
        let resp: CaptionResponse = self.post(&self.endpoints.caption, &req)?;
        Ok(resp.caption)
    }
}

impl SemanticSegmenter for HttpServices {
    fn semantic_map(&self, frame: &Frame) -> Result<SemanticMap, ClientError> {
        let map: SemanticMap = self.post(&self.endpoints.semantic, &ImageRequest { image: encode(frame) })?;
        if !map.is_consistent() || (map.width, map.height) != frame.dims() {
            return Err(ClientError::new("semantic map dimensions do not match the frame"));
        }
        Ok(map)
    }
}

impl ImageGenerator for HttpServices {
    fn generate_image(&self, caption: &str, map: &SemanticMap) -> Result<Frame, ClientError> {
        let resp: ImageResponse = self.post(
            &self.endpoints.image,
            &GenerateImageRequest {
                caption,
                semantic_map: map,
            },
        )?;
        decode(&resp.image)
    }
}

impl VideoGenerator for HttpServices {
    fn generate_video(&self, caption: &str, start: Option<&Frame>) -> Result<Vec<Frame>, ClientError> {
        let resp: FramesResponse = self.post(
            &self.endpoints.video,
            &GenerateVideoRequest {
                caption,
                image: start.map(encode),
            },
        )?;
        if resp.frames.is_empty() {
            return Err(ClientError::new("video generator returned no frames"));
        }
        resp.frames.iter().map(|f| decode(f)).collect()
    }
}
