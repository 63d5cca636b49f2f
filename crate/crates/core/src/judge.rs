//! Submission grading and per-task lifecycle.
//!
//! A submission is a single `(video, time)` claim. It lands in one of five
//! buckets depending on its distance to the nearest target boundary. Bucket
//! upper bounds are inclusive, so a miss of exactly `near_miss_ms` is still a
//! near miss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{JudgePolicy, VideoSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bucket {
    Correct,
    Within30s,
    Within1min,
    WithinVideo,
    Wrong,
}

impl Bucket {
    pub const ALL: [Bucket; 5] = [
        Bucket::Correct,
        Bucket::Within30s,
        Bucket::Within1min,
        Bucket::WithinVideo,
        Bucket::Wrong,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Bucket::Correct => "Correct",
            Bucket::Within30s => "Within 30s",
            Bucket::Within1min => "Within 1min",
            Bucket::WithinVideo => "Within Video",
            Bucket::Wrong => "Wrong",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Submission {
    pub session_id: String,
    pub task_id: String,
    pub video_id: String,
    pub time_ms: i64,
    /// Milliseconds since the task started.
    pub wall_clock_ms: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_terms: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Judgment {
    pub bucket: Bucket,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_ms: Option<i64>,
}

/// Distance from `time_ms` to the segment; zero inside (bounds inclusive).
pub fn distance_to_segment(target: &VideoSegment, time_ms: i64) -> i64 {
    if target.contains(time_ms) {
        0
    } else {
        (time_ms - target.start_ms)
            .abs()
            .min((time_ms - target.end_ms).abs())
    }
}

pub fn classify(target: &VideoSegment, sub: &Submission, policy: &JudgePolicy) -> Judgment {
    classify_point(target, &sub.video_id, sub.time_ms, policy)
}

pub fn classify_point(
    target: &VideoSegment,
    video_id: &str,
    time_ms: i64,
    policy: &JudgePolicy,
) -> Judgment {
    if video_id != target.video_id {
        return Judgment {
            bucket: Bucket::Wrong,
            distance_ms: None,
        };
    }
    let d = distance_to_segment(target, time_ms);
    let bucket = if d == 0 {
        Bucket::Correct
    } else if d <= policy.near_miss_ms {
        Bucket::Within30s
    } else if d <= policy.far_miss_ms {
        Bucket::Within1min
    } else {
        Bucket::WithinVideo
    };
    Judgment {
        bucket,
        distance_ms: Some(d),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    Running,
    SolvedCorrect,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    DeadlineExceeded,
    TaskClosed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEntry {
    Judged(Submission, Judgment),
    Rejected(Submission, RejectReason),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SubmissionError {
    #[error("task is not accepting submissions")]
    TaskClosed,
    #[error("submission arrived after the task deadline")]
    DeadlineExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskState {
    pub status: TaskStatus,
    pub started_at_ms: i64,
    pub deadline_ms: i64,
    pub duration_ms: i64,
    pub log: Vec<LogEntry>,
}

impl TaskState {
    pub fn pending(duration_ms: i64) -> Self {
        Self {
            status: TaskStatus::Pending,
            started_at_ms: 0,
            deadline_ms: 0,
            duration_ms,
            log: Vec::new(),
        }
    }

    pub fn start(&mut self, now_ms: i64) {
        debug_assert_eq!(self.status, TaskStatus::Pending);
        self.status = TaskStatus::Running;
        self.started_at_ms = now_ms;
        self.deadline_ms = now_ms + self.duration_ms;
    }

    pub fn elapsed_ms(&self, now_ms: i64) -> i64 {
        (now_ms - self.started_at_ms).max(0)
    }

    pub fn remaining_ms(&self, now_ms: i64) -> i64 {
        (self.duration_ms - self.elapsed_ms(now_ms)).max(0)
    }

    /// True once the clock has moved strictly past the deadline.
    pub fn is_overdue(&self, now_ms: i64) -> bool {
        self.status == TaskStatus::Running && self.elapsed_ms(now_ms) > self.duration_ms
    }

    pub fn expire(&mut self) {
        if self.status == TaskStatus::Running {
            self.status = TaskStatus::Expired;
        }
    }

    pub fn judgments(&self) -> impl Iterator<Item = &Judgment> {
        self.log.iter().filter_map(|e| match e {
            LogEntry::Judged(_, j) => Some(j),
            LogEntry::Rejected(..) => None,
        })
    }

    /// Grades `sub` and appends it to the log.
    ///
    /// Late submissions are recorded as rejected and leave the status as is;
    /// the caller decides when to mark the task expired.
    pub fn apply_submission(
        &mut self,
        sub: Submission,
        target: &VideoSegment,
        policy: &JudgePolicy,
    ) -> Result<Judgment, SubmissionError> {
        if self.status != TaskStatus::Running {
            self.log.push(LogEntry::Rejected(sub, RejectReason::TaskClosed));
            return Err(SubmissionError::TaskClosed);
        }
        if sub.wall_clock_ms > self.duration_ms {
            self.log
                .push(LogEntry::Rejected(sub, RejectReason::DeadlineExceeded));
            return Err(SubmissionError::DeadlineExceeded);
        }
        let judgment = classify(target, &sub, policy);
        self.log.push(LogEntry::Judged(sub, judgment));
        if judgment.bucket == Bucket::Correct {
            self.status = TaskStatus::SolvedCorrect;
        }
        Ok(judgment)
    }
}
