//! Core data model shared by every subsystem: target segments, hint
//! variants, evaluation plans and the cyclic Latin-square condition matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current on-disk plan schema.
pub const PLAN_SCHEMA_VERSION: u32 = 1;

/// Default task length: three minutes.
pub const DEFAULT_TASK_DURATION_MS: i64 = 180_000;

/// Default number of distractor videos in the searchable collection.
pub const DEFAULT_COLLECTION_SIZE: u32 = 500;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{videos} videos but {variants} variants; a condition matrix needs one variant per video")]
    LengthMismatch { videos: usize, variants: usize },
    #[error("condition matrix needs at least one video")]
    Empty,
    #[error("unknown hint variant `{0}`")]
    UnknownVariant(String),
    #[error("unsupported plan schema version {0}")]
    SchemaVersion(u32),
    #[error("malformed plan: {0}")]
    Parse(String),
}

/// A temporal segment of one video, in integer milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VideoSegment {
    pub video_id: String,
    pub start_ms: i64,
    pub end_ms: i64,
}

impl VideoSegment {
    pub fn new(video_id: impl Into<String>, start_ms: i64, end_ms: i64) -> Self {
        Self {
            video_id: video_id.into(),
            start_ms,
            end_ms,
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.video_id.is_empty() && self.start_ms >= 0 && self.end_ms > self.start_ms
    }

    pub fn contains(&self, time_ms: i64) -> bool {
        self.start_ms <= time_ms && time_ms <= self.end_ms
    }

    pub fn midpoint_ms(&self) -> i64 {
        self.start_ms + (self.end_ms - self.start_ms) / 2
    }
}

/// The way a task target is presented to a participant.
///
/// `S` is the "best synthetic" slot used when one synthesis pipeline is
/// picked per video; the concrete pipeline is recorded on the payload.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum HintKind {
    Original,
    F1,
    F2,
    F3,
    S1,
    S2,
    S3,
    S,
    Textual,
}

impl HintKind {
    pub const ALL: [HintKind; 9] = [
        HintKind::Original,
        HintKind::F1,
        HintKind::F2,
        HintKind::F3,
        HintKind::S1,
        HintKind::S2,
        HintKind::S3,
        HintKind::S,
        HintKind::Textual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HintKind::Original => "Original",
            HintKind::F1 => "F1",
            HintKind::F2 => "F2",
            HintKind::F3 => "F3",
            HintKind::S1 => "S1",
            HintKind::S2 => "S2",
            HintKind::S3 => "S3",
            HintKind::S => "S",
            HintKind::Textual => "Textual",
        }
    }

    pub fn is_visual(self) -> bool {
        self != HintKind::Textual
    }
}

impl fmt::Display for HintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HintKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HintKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .or_else(|| (s.eq_ignore_ascii_case("text")).then_some(HintKind::Textual))
            .ok_or_else(|| ConfigError::UnknownVariant(s.to_string()))
    }
}

/// What the participant actually receives for a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum HintPayload {
    /// URI of a media asset, typically under `/media/`.
    #[serde(rename_all = "camelCase")]
    Media {
        uri: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pipeline: Option<HintKind>,
    },
    Text { text: String },
}

/// A hint kind together with its payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintVariant {
    pub kind: HintKind,
    pub payload: HintPayload,
}

/// Grading thresholds for near misses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JudgePolicy {
    pub near_miss_ms: i64,
    pub far_miss_ms: i64,
}

impl Default for JudgePolicy {
    fn default() -> Self {
        Self {
            near_miss_ms: 30_000,
            far_miss_ms: 60_000,
        }
    }
}

impl JudgePolicy {
    pub fn is_valid(&self) -> bool {
        0 < self.near_miss_ms && self.near_miss_ms < self.far_miss_ms
    }
}

/// Parameters for the degradation filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct FilterParams {
    pub gamma: f64,
    pub mask_threshold: f64,
    pub dilation_radius_px: u32,
    pub smoothing_alpha: f64,
    pub max_blur_sigma_px: f64,
    /// Fraction of the half-diagonal.
    pub vignette_inner_radius: f64,
    /// Fraction of the half-diagonal.
    pub vignette_outer_radius: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            mask_threshold: 0.4,
            dilation_radius_px: 4,
            smoothing_alpha: 0.6,
            max_blur_sigma_px: 8.0,
            vignette_inner_radius: 0.5,
            vignette_outer_radius: 1.0,
        }
    }
}

impl FilterParams {
    /// Names of violated invariants, empty when valid.
    pub fn violations(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(self.gamma > 0.0) {
            out.push("gamma must be > 0");
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            out.push("maskThreshold must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.smoothing_alpha) {
            out.push("smoothingAlpha must be in [0, 1)");
        }
        if !(self.max_blur_sigma_px >= 0.0) {
            out.push("maxBlurSigmaPx must be >= 0");
        }
        if !(self.vignette_inner_radius < self.vignette_outer_radius) {
            out.push("vignetteInnerRadius must be < vignetteOuterRadius");
        }
        out
    }
}

/// `conditions[row][task]`: which hint kind condition `row` sees for task `task`.
pub type ConditionMatrix = Vec<Vec<HintKind>>;

/// Cyclic Latin square: row `i`, column `j` holds `variants[(i + j) % V]`.
pub fn generate_conditions(
    videos: &[VideoSegment],
    variants: &[HintKind],
) -> Result<ConditionMatrix, ConfigError> {
    if videos.len() != variants.len() {
        return Err(ConfigError::LengthMismatch {
            videos: videos.len(),
            variants: variants.len(),
        });
    }
    let v = variants.len();
    if v == 0 {
        return Err(ConfigError::Empty);
    }
    Ok((0..v)
        .map(|i| (0..v).map(|j| variants[(i + j) % v]).collect())
        .collect())
}

/// The full experiment definition: targets, conditions and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvaluationPlan {
    pub schema_version: u32,
    pub videos: Vec<VideoSegment>,
    pub variants: Vec<HintKind>,
    pub task_duration_ms: i64,
    pub collection_size: u32,
    pub conditions: ConditionMatrix,
    /// Payload per target video and hint kind.
    #[serde(default)]
    pub hints: BTreeMap<String, BTreeMap<HintKind, HintPayload>>,
    #[serde(default)]
    pub judge: JudgePolicy,
}

impl EvaluationPlan {
    /// Builds a plan with the cyclic condition matrix and default timing.
    pub fn new(videos: Vec<VideoSegment>, variants: Vec<HintKind>) -> Result<Self, ConfigError> {
        let conditions = generate_conditions(&videos, &variants)?;
        Ok(Self {
            schema_version: PLAN_SCHEMA_VERSION,
            videos,
            variants,
            task_duration_ms: DEFAULT_TASK_DURATION_MS,
            collection_size: DEFAULT_COLLECTION_SIZE,
            conditions,
            hints: BTreeMap::new(),
            judge: JudgePolicy::default(),
        })
    }

    pub fn task_count(&self) -> usize {
        self.videos.len()
    }

    pub fn condition_count(&self) -> usize {
        self.conditions.len()
    }

    pub fn hint(&self, video_id: &str, kind: HintKind) -> Option<&HintPayload> {
        self.hints.get(video_id).and_then(|m| m.get(&kind))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let plan: Self =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if plan.schema_version != PLAN_SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(plan.schema_version));
        }
        Ok(plan)
    }
}

/// One violated plan invariant with a JSON-path-like location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Checks every structural plan invariant. Returns all violations at once.
pub fn validate_plan(plan: &EvaluationPlan) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();

    if plan.schema_version != PLAN_SCHEMA_VERSION {
        out.push(Violation::new(
            "schemaVersion",
            format!("expected {PLAN_SCHEMA_VERSION}"),
        ));
    }
    if plan.task_duration_ms <= 0 {
        out.push(Violation::new("taskDurationMs", "must be > 0"));
    }
    if !plan.judge.is_valid() {
        out.push(Violation::new(
            "judge",
            "need 0 < nearMissMs < farMissMs",
        ));
    }
    if plan.videos.is_empty() {
        out.push(Violation::new("videos", "at least one target video required"));
    }
    for (i, seg) in plan.videos.iter().enumerate() {
        if seg.video_id.is_empty() {
            out.push(Violation::new(format!("videos[{i}].videoId"), "must be non-empty"));
        }
        if seg.start_ms < 0 {
            out.push(Violation::new(format!("videos[{i}].startMs"), "must be >= 0"));
        }
        if seg.end_ms <= seg.start_ms {
            out.push(Violation::new(
                format!("videos[{i}].endMs"),
                "must be greater than startMs",
            ));
        }
    }

    let n_tasks = plan.videos.len();
    for (r, row) in plan.conditions.iter().enumerate() {
        if row.len() != n_tasks {
            out.push(Violation::new(
                format!("conditions[{r}]"),
                format!("has {} entries, expected one per video ({n_tasks})", row.len()),
            ));
        }
    }

    // Latin square applies when the matrix is square over the declared variants.
    if plan.videos.len() == plan.variants.len() {
        let expected: BTreeSet<HintKind> = plan.variants.iter().copied().collect();
        if expected.len() != plan.variants.len() {
            out.push(Violation::new("variants", "variants must be distinct"));
        }
        if plan.conditions.len() != plan.variants.len() {
            out.push(Violation::new(
                "conditions",
                format!(
                    "{} rows, a Latin square needs {}",
                    plan.conditions.len(),
                    plan.variants.len()
                ),
            ));
        }
        for (r, row) in plan.conditions.iter().enumerate() {
            if let Some(msg) = latin_line_problem(row.iter().copied(), &expected) {
                out.push(Violation::new(format!("conditions[{r}]"), msg));
            }
        }
        if plan.conditions.iter().all(|row| row.len() == n_tasks) {
            for c in 0..n_tasks {
                let column = plan.conditions.iter().map(|row| row[c]);
                if let Some(msg) = latin_line_problem(column, &expected) {
                    out.push(Violation::new(format!("conditions[*][{c}]"), msg));
                }
            }
        }
    }

    for (r, row) in plan.conditions.iter().enumerate() {
        for (c, kind) in row.iter().enumerate() {
            let Some(video) = plan.videos.get(c) else { continue };
            match plan.hint(&video.video_id, *kind) {
                None if !plan.hints.is_empty() => out.push(Violation::new(
                    format!("hints.{}.{}", video.video_id, kind),
                    format!("missing payload used by conditions[{r}][{c}]"),
                )),
                Some(payload) => {
                    if let Some(msg) = payload_problem(*kind, payload) {
                        out.push(Violation::new(
                            format!("hints.{}.{}", video.video_id, kind),
                            msg,
                        ));
                    }
                }
                None => {}
            }
        }
    }
    // Without any hints the plan is a bare matrix; servers require payloads separately.
    if plan.hints.is_empty() && !plan.conditions.is_empty() {
        out.push(Violation::new("hints", "no hint payloads defined"));
    }

    out.dedup();
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn latin_line_problem(
    line: impl Iterator<Item = HintKind>,
    expected: &BTreeSet<HintKind>,
) -> Option<String> {
    let mut counts: BTreeMap<HintKind, usize> = BTreeMap::new();
    for k in line {
        *counts.entry(k).or_default() += 1;
    }
    if let Some((k, n)) = counts.iter().find(|(_, n)| **n > 1) {
        return Some(format!("variant {k} appears {n} times"));
    }
    if let Some(k) = counts.keys().find(|k| !expected.contains(k)) {
        return Some(format!("variant {k} is not declared in variants"));
    }
    if let Some(k) = expected.iter().find(|k| !counts.contains_key(k)) {
        return Some(format!("variant {k} is missing"));
    }
    None
}

fn payload_problem(kind: HintKind, payload: &HintPayload) -> Option<String> {
    match (kind.is_visual(), payload) {
        (false, HintPayload::Text { text }) if text.trim().is_empty() => {
            Some("textual hint must be non-empty".into())
        }
        (false, HintPayload::Media { .. }) => Some("textual hint needs a text payload".into()),
        (true, HintPayload::Text { .. }) => Some("visual hint needs a media payload".into()),
        (true, HintPayload::Media { uri, .. }) if uri.trim().is_empty() => {
            Some("media uri must be non-empty".into())
        }
        _ => None,
    }
}

/// Checks that every media payload under `/media/` resolves to a file in `media_root`.
pub fn validate_plan_assets(
    plan: &EvaluationPlan,
    media_root: &std::path::Path,
) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    for (video, kinds) in &plan.hints {
        for (kind, payload) in kinds {
            if let HintPayload::Media { uri, .. } = payload {
                let Some(rel) = uri.strip_prefix("/media/") else {
                    continue;
                };
                if rel.split('/').any(|part| part == "..") || !media_root.join(rel).is_file() {
                    out.push(Violation::new(
                        format!("hints.{video}.{kind}"),
                        format!("media asset {uri} not found"),
                    ));
                }
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
