//! Plan construction for `make-plan`.

use std::collections::BTreeMap;
use std::path::Path;

use kisbench_core::domain::{validate_plan, EvaluationPlan, HintKind, HintPayload, VideoSegment};
use kisbench_core::fixtures::{media_uri, study_plan};

use crate::jobs::JobError;

/// Parses `VIDEO:START-END` with times in ms.
pub fn parse_segment(spec: &str) -> Result<VideoSegment, String> {
    let (video, range) = spec
        .split_once(':')
        .ok_or_else(|| format!("`{spec}`: expected VIDEO:START-END"))?;
    let (start, end) = range
        .split_once('-')
        .ok_or_else(|| format!("`{spec}`: expected START-END after the colon"))?;
    let start: i64 = start.trim().parse().map_err(|e| format!("`{spec}`: start: {e}"))?;
    let end: i64 = end.trim().parse().map_err(|e| format!("`{spec}`: end: {e}"))?;
    let seg = VideoSegment::new(video.trim(), start, end);
    if video.trim().is_empty() || !seg.is_valid() {
        return Err(format!("`{spec}`: not a valid segment"));
    }
    Ok(seg)
}

pub fn parse_variant(s: &str) -> Result<HintKind, String> {
    HintKind::ALL
        .into_iter()
        .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| format!("unknown hint variant `{s}`"))
}

/// Hints file: `{ "VIDEO": { "F2": {"type": "media", "uri": ...}, "Textual": {...} } }`.
pub type HintsFile = BTreeMap<String, BTreeMap<HintKind, HintPayload>>;

pub struct PlanRequest {
    pub videos: Vec<VideoSegment>,
    pub variants: Vec<HintKind>,
    pub duration_ms: Option<i64>,
    pub collection_size: Option<u32>,
    pub hints: Option<HintsFile>,
}

/// Builds and validates a plan. Visual hints not given explicitly get an
/// opaque media path.
pub fn make_plan(req: PlanRequest) -> Result<EvaluationPlan, JobError> {
    let mut plan = EvaluationPlan::new(req.videos, req.variants).map_err(|e| JobError::Usage(e.to_string()))?;
    if let Some(d) = req.duration_ms {
        plan.task_duration_ms = d;
    }
    if let Some(n) = req.collection_size {
        plan.collection_size = n;
    }
    if let Some(hints) = req.hints {
        plan.hints = hints;
    }
    let videos: Vec<String> = plan.videos.iter().map(|v| v.video_id.clone()).collect();
    for video in videos {
        for kind in plan.variants.clone() {
            if !kind.is_visual() {
                continue;
            }
            plan.hints
                .entry(video.clone())
                .or_default()
                .entry(kind)
                .or_insert_with(|| HintPayload::Media {
                    uri: media_uri(&video, kind),
                    pipeline: None,
                });
        }
    }
    check(&plan)?;
    Ok(plan)
}

/// The five-task study plan.
pub fn fixture_plan() -> EvaluationPlan {
    study_plan()
}

fn check(plan: &EvaluationPlan) -> Result<(), JobError> {
    validate_plan(plan).map_err(|v| {
        JobError::Usage(
            v.iter()
                .map(|x| format!("{}: {}", x.path, x.message))
                .collect::<Vec<_>>()
                .join("; "),
        )
    })
}

pub fn read_hints(path: &Path) -> Result<HintsFile, JobError> {
    let text = std::fs::read_to_string(path).map_err(|e| JobError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| JobError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
