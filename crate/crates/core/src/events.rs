//! Evaluation event log: append-only, one JSON object per line.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::HintKind;
use crate::judge::{Bucket, RejectReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndReason {
    SolvedCorrect,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all_fields = "camelCase")]
pub enum Event {
    SessionOpened {
        participant_id: String,
        credential: String,
        backend_index: usize,
        condition_index: usize,
        resumed: bool,
    },
    TaskStarted {
        participant_id: String,
        task_index: usize,
        video_id: String,
        variant: HintKind,
        deadline_ms: i64,
    },
    SubmissionJudged {
        participant_id: String,
        task_index: usize,
        video_id: String,
        variant: HintKind,
        submitted_video_id: String,
        time_ms: i64,
        wall_clock_ms: i64,
        bucket: Bucket,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        distance_ms: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        query_terms: Option<String>,
    },
    SubmissionRejected {
        participant_id: String,
        task_index: usize,
        video_id: String,
        variant: HintKind,
        submitted_video_id: String,
        time_ms: i64,
        wall_clock_ms: i64,
        reason: RejectReason,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        query_terms: Option<String>,
    },
    TaskEnded {
        participant_id: String,
        task_index: usize,
        video_id: String,
        variant: HintKind,
        reason: EndReason,
    },
}

impl Event {
    pub fn participant_id(&self) -> &str {
        match self {
            Event::SessionOpened { participant_id, .. }
            | Event::TaskStarted { participant_id, .. }
            | Event::SubmissionJudged { participant_id, .. }
            | Event::SubmissionRejected { participant_id, .. }
            | Event::TaskEnded { participant_id, .. } => participant_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LogRecord {
    pub seq: u64,
    pub at_ms: i64,
    #[serde(flatten)]
    pub event: Event,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: sequence {seq} out of order (expected {expected})")]
    OutOfOrder { line: usize, seq: u64, expected: u64 },
}

impl LogParseError {
    pub fn line(&self) -> usize {
        match self {
            LogParseError::Malformed { line, .. } | LogParseError::OutOfOrder { line, .. } => *line,
        }
    }
}

/// Parses a JSON-Lines log. Blank lines are skipped; sequence numbers must
/// count up from zero without gaps.
pub fn parse_log(reader: impl BufRead) -> Result<Vec<LogRecord>, LogParseError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| LogParseError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line).map_err(|e| LogParseError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let expected = out.len() as u64;
        if rec.seq != expected {
            return Err(LogParseError::OutOfOrder {
                line: line_no,
                seq: rec.seq,
                expected,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn to_jsonl(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<LogRecord> {
        vec![
            LogRecord {
                seq: 0,
                at_ms: 10,
                event: Event::SessionOpened {
                    participant_id: "p1".into(),
                    credential: "user01".into(),
                    backend_index: 0,
                    condition_index: 0,
                    resumed: false,
                },
            },
            LogRecord {
                seq: 1,
                at_ms: 20,
                event: Event::SubmissionJudged {
                    participant_id: "p1".into(),
                    task_index: 0,
                    video_id: "01140".into(),
                    variant: HintKind::Original,
                    submitted_video_id: "01140".into(),
                    time_ms: 128_000,
                    wall_clock_ms: 5_000,
                    bucket: Bucket::Correct,
                    distance_ms: Some(0),
                    query_terms: Some("bike race".into()),
                },
            },
        ]
    }

    #[test]
    fn wire_format() {
        let line = sample()[1].to_line();
        assert!(line.starts_with(r#"{"seq":1,"atMs":20,"type":"SubmissionJudged","participantId":"p1""#), "{line}");
        assert!(line.contains(r#""bucket":"Correct""#));
    }

    #[test]
    fn round_trip() {
        let text = to_jsonl(&sample());
        assert_eq!(parse_log(text.as_bytes()).unwrap(), sample());
    }

    #[test]
    fn malformed_line_number() {
        let mut text = to_jsonl(&sample()[..1]);
        text.push_str("{\"seq\":1,\"atMs\":3,\"type\":\"Nope\"}\n");
        assert_eq!(parse_log(text.as_bytes()).unwrap_err().line(), 2);
    }

    #[test]
    fn gaps_are_rejected() {
        let mut recs = sample();
        recs[1].seq = 5;
        assert!(matches!(
            parse_log(to_jsonl(&recs).as_bytes()),
            Err(LogParseError::OutOfOrder { line: 2, seq: 5, expected: 1 })
        ));
    }

    #[test]
    fn empty_log() {
        assert!(parse_log("".as_bytes()).unwrap().is_empty());
    }
}
