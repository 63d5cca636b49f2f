//! Result tables rebuilt from the event log.
//!
//! Raw counts are authoritative; percentages are derived from them with
//! one-decimal half-up rounding done in integer arithmetic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::domain::HintKind;
use crate::events::{parse_log, EndReason, Event, LogParseError, LogRecord};
use crate::judge::{Bucket, RejectReason};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BucketCounts {
    pub correct: u64,
    pub within30s: u64,
    pub within1min: u64,
    pub within_video: u64,
    pub wrong: u64,
}

impl BucketCounts {
    pub fn new(correct: u64, within30s: u64, within1min: u64, within_video: u64, wrong: u64) -> Self {
        Self {
            correct,
            within30s,
            within1min,
            within_video,
            wrong,
        }
    }

    pub fn total(&self) -> u64 {
        self.correct + self.within30s + self.within1min + self.within_video + self.wrong
    }

    pub fn get(&self, bucket: Bucket) -> u64 {
        match bucket {
            Bucket::Correct => self.correct,
            Bucket::Within30s => self.within30s,
            Bucket::Within1min => self.within1min,
            Bucket::WithinVideo => self.within_video,
            Bucket::Wrong => self.wrong,
        }
    }

    pub fn add(&mut self, bucket: Bucket) {
        *match bucket {
            Bucket::Correct => &mut self.correct,
            Bucket::Within30s => &mut self.within30s,
            Bucket::Within1min => &mut self.within1min,
            Bucket::WithinVideo => &mut self.within_video,
            Bucket::Wrong => &mut self.wrong,
        } += 1;
    }

    pub fn merge(&mut self, other: &BucketCounts) {
        for b in Bucket::ALL {
            for _ in 0..other.get(b) {
                self.add(b);
            }
        }
    }

    pub fn percentages(&self) -> BucketPercentages {
        let t = self.total();
        BucketPercentages {
            correct: percent(self.correct, t),
            within30s: percent(self.within30s, t),
            within1min: percent(self.within1min, t),
            within_video: percent(self.within_video, t),
            wrong: percent(self.wrong, t),
        }
    }
}

/// `100 * part / whole` rounded half-up to one decimal; `None` when `whole == 0`.
pub fn percent(part: u64, whole: u64) -> Option<f64> {
    if whole == 0 {
        return None;
    }
    let tenths = (2 * 1000 * u128::from(part) + u128::from(whole)) / (2 * u128::from(whole));
    Some(tenths as f64 / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BucketPercentages {
    pub correct: Option<f64>,
    pub within30s: Option<f64>,
    pub within1min: Option<f64>,
    pub within_video: Option<f64>,
    pub wrong: Option<f64>,
}

impl BucketPercentages {
    pub fn get(&self, bucket: Bucket) -> Option<f64> {
        match bucket {
            Bucket::Correct => self.correct,
            Bucket::Within30s => self.within30s,
            Bucket::Within1min => self.within1min,
            Bucket::WithinVideo => self.within_video,
            Bucket::Wrong => self.wrong,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VariantRow {
    pub variant: HintKind,
    pub counts: BucketCounts,
    pub total: u64,
    pub percentages: BucketPercentages,
    /// This variant's submissions as a share of all submissions.
    pub share_of_all_pct: Option<f64>,
    pub task_instances: u64,
    /// Raw `correct / task_instances`.
    pub success_rate: Option<f64>,
    pub success_rate_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TotalRow {
    pub counts: BucketCounts,
    pub total: u64,
    /// Column totals as a share of all submissions.
    pub percentages: BucketPercentages,
    pub task_instances: u64,
}

/// Submission buckets per variant plus the totals row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BucketTable {
    pub rows: Vec<VariantRow>,
    pub total: TotalRow,
}

impl BucketTable {
    /// Rows are `(variant, counts, task instances)` in display order.
    pub fn from_counts(rows: &[(HintKind, BucketCounts, u64)]) -> Self {
        let mut all = BucketCounts::default();
        let mut instances = 0;
        for (_, c, n) in rows {
            all.merge(c);
            instances += n;
        }
        let grand = all.total();
        let rows = rows
            .iter()
            .map(|(variant, counts, n)| VariantRow {
                variant: *variant,
                counts: *counts,
                total: counts.total(),
                percentages: counts.percentages(),
                share_of_all_pct: percent(counts.total(), grand),
                task_instances: *n,
                success_rate: (*n > 0).then(|| counts.correct as f64 / *n as f64),
                success_rate_pct: percent(counts.correct, *n),
            })
            .collect();
        Self {
            rows,
            total: TotalRow {
                counts: all,
                total: grand,
                percentages: all.percentages(),
                task_instances: instances,
            },
        }
    }

    pub fn row(&self, variant: HintKind) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TimingStats {
    pub n: usize,
    pub mean_s: f64,
    /// `n - 1` denominator; absent for a single sample.
    pub sample_std_s: Option<f64>,
    /// `n` denominator.
    pub population_std_s: f64,
}

/// Mean and standard deviations of solve times in seconds. `None` when empty.
pub fn timing_stats(times_s: &[f64]) -> Option<TimingStats> {
    if times_s.is_empty() {
        return None;
    }
    let n = times_s.len();
    let mean = times_s.iter().sum::<f64>() / n as f64;
    let ss: f64 = times_s.iter().map(|t| (t - mean) * (t - mean)).sum();
    Some(TimingStats {
        n,
        mean_s: mean,
        sample_std_s: (n >= 2).then(|| (ss / (n - 1) as f64).sqrt()),
        population_std_s: (ss / n as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VariantTiming {
    pub variant: HintKind,
    #[serde(flatten)]
    pub stats: TimingStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskRow {
    pub video_id: String,
    pub variant: HintKind,
    pub counts: BucketCounts,
    pub total: u64,
    pub percentages: BucketPercentages,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommonWrong {
    pub video_id: String,
    pub variant: HintKind,
    pub wrong_video_id: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueryTermRecord {
    pub participant_id: String,
    pub video_id: String,
    pub variant: HintKind,
    pub bucket: Bucket,
    pub submitted_video_id: String,
    pub terms: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskOutcomes {
    pub variant: Option<HintKind>,
    pub solved: u64,
    pub expired: u64,
    pub late_submissions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultsReport {
    pub table: BucketTable,
    pub per_task: Vec<TaskRow>,
    pub timing: Vec<VariantTiming>,
    pub common_wrong: Vec<CommonWrong>,
    pub outcomes: Vec<TaskOutcomes>,
    pub query_terms: Vec<QueryTermRecord>,
}

/// Incremental aggregation; feed records in log order.
#[derive(Debug, Clone, Default)]
pub struct ReportBuilder {
    counts: BTreeMap<HintKind, BucketCounts>,
    instances: BTreeMap<HintKind, u64>,
    per_task: BTreeMap<(String, HintKind), BucketCounts>,
    correct_ms: BTreeMap<HintKind, Vec<i64>>,
    wrong: BTreeMap<(String, HintKind), BTreeMap<String, u64>>,
    outcomes: BTreeMap<HintKind, TaskOutcomes>,
    terms: Vec<QueryTermRecord>,
}

impl ReportBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, record: &LogRecord) {
        match &record.event {
            Event::SessionOpened { .. } => {}
            Event::TaskStarted { variant, .. } => {
                *self.instances.entry(*variant).or_default() += 1;
                self.counts.entry(*variant).or_default();
            }
            Event::SubmissionJudged {
                participant_id,
                video_id,
                variant,
                submitted_video_id,
                wall_clock_ms,
                bucket,
                query_terms,
                ..
            } => {
                self.counts.entry(*variant).or_default().add(*bucket);
                self.per_task
                    .entry((video_id.clone(), *variant))
                    .or_default()
                    .add(*bucket);
                match bucket {
                    Bucket::Correct => self.correct_ms.entry(*variant).or_default().push(*wall_clock_ms),
                    Bucket::Wrong => {
                        *self
                            .wrong
                            .entry((video_id.clone(), *variant))
                            .or_default()
                            .entry(submitted_video_id.clone())
                            .or_default() += 1;
                    }
                    _ => {}
                }
                if let Some(terms) = query_terms {
                    self.terms.push(QueryTermRecord {
                        participant_id: participant_id.clone(),
                        video_id: video_id.clone(),
                        variant: *variant,
                        bucket: *bucket,
                        submitted_video_id: submitted_video_id.clone(),
                        terms: terms.clone(),
                    });
                }
            }
            Event::SubmissionRejected { variant, reason, .. } => {
                if *reason == RejectReason::DeadlineExceeded {
                    self.outcome(*variant).late_submissions += 1;
                }
            }
            Event::TaskEnded { variant, reason, .. } => match reason {
                EndReason::SolvedCorrect => self.outcome(*variant).solved += 1,
                EndReason::Expired => self.outcome(*variant).expired += 1,
            },
        }
    }

    fn outcome(&mut self, variant: HintKind) -> &mut TaskOutcomes {
        let o = self.outcomes.entry(variant).or_default();
        o.variant = Some(variant);
        o
    }

    pub fn report(&self) -> ResultsReport {
        let rows: Vec<_> = self
            .counts
            .iter()
            .map(|(v, c)| (*v, *c, self.instances.get(v).copied().unwrap_or(0)))
            .collect();
        let per_task = self
            .per_task
            .iter()
            .map(|((video, variant), c)| TaskRow {
                video_id: video.clone(),
                variant: *variant,
                counts: *c,
                total: c.total(),
                percentages: c.percentages(),
            })
            .collect();
        let timing = self
            .correct_ms
            .iter()
            .filter_map(|(v, ms)| {
                let secs: Vec<f64> = ms.iter().map(|m| *m as f64 / 1000.0).collect();
                timing_stats(&secs).map(|stats| VariantTiming { variant: *v, stats })
            })
            .collect();
        let common_wrong = self
            .wrong
            .iter()
            .filter_map(|((video, variant), by_id)| {
                most_common(by_id).map(|(id, count)| CommonWrong {
                    video_id: video.clone(),
                    variant: *variant,
                    wrong_video_id: id.to_string(),
                    count,
                })
            })
            .collect();
        ResultsReport {
            table: BucketTable::from_counts(&rows),
            per_task,
            timing,
            common_wrong,
            outcomes: self.outcomes.values().cloned().collect(),
            query_terms: self.terms.clone(),
        }
    }
}

/// Highest count; ties go to the lexicographically smallest id.
fn most_common(counts: &BTreeMap<String, u64>) -> Option<(&str, u64)> {
    // BTreeMap iterates ids in ascending order, so keeping only strictly larger
    // counts leaves the smallest id among ties.
    counts.iter().fold(None, |best, (id, n)| match best {
        Some((_, b)) if b >= *n => best,
        _ => Some((id.as_str(), *n)),
    })
}

pub fn aggregate_records(records: &[LogRecord]) -> ResultsReport {
    let mut b = ReportBuilder::new();
    for r in records {
        b.observe(r);
    }
    b.report()
}

/// Parses a JSON-Lines event log and aggregates it.
pub fn aggregate(reader: impl BufRead) -> Result<ResultsReport, LogParseError> {
    Ok(aggregate_records(&parse_log(reader)?))
}

/// Most common wrong video per `(target video, variant)` pair.
pub fn common_wrong(records: &[LogRecord]) -> Vec<CommonWrong> {
    aggregate_records(records).common_wrong
}

fn pct_cell(p: Option<f64>) -> String {
    p.map_or_else(|| "-".to_string(), |v| format!("{v:.1}%"))
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

impl ResultsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn timing_for(&self, variant: HintKind) -> Option<&TimingStats> {
        self.timing.iter().find(|t| t.variant == variant).map(|t| &t.stats)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let header = Bucket::ALL.map(Bucket::label).join(" | ");
        let _ = writeln!(s, "## Submissions per task type\n");
        let _ = writeln!(s, "| | {header} | Total | Tasks |");
        let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|---:|---:|");
        for r in &self.table.rows {
            let cells: Vec<String> = Bucket::ALL
                .iter()
                .map(|b| format!("{} ({})", r.counts.get(*b), pct_cell(r.percentages.get(*b))))
                .collect();
            let _ = writeln!(
                s,
                "| {} | {} | {} ({}) | {} |",
                r.variant,
                cells.join(" | "),
                r.total,
                pct_cell(r.share_of_all_pct),
                r.task_instances
            );
        }
        let t = &self.table.total;
        let cells: Vec<String> = Bucket::ALL
            .iter()
            .map(|b| format!("{} ({})", t.counts.get(*b), pct_cell(t.percentages.get(*b))))
            .collect();
        let _ = writeln!(s, "| Total | {} | {} | {} |", cells.join(" | "), t.total, t.task_instances);

        let _ = writeln!(s, "\n## Success rate and solve time\n");
        let _ = writeln!(s, "| | Success rate | Solved | Mean (s) | Std (s) | n |");
        let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|");
        for r in &self.table.rows {
            let timing = self.timing_for(r.variant);
            let _ = writeln!(
                s,
                "| {} | {} | {}/{} | {} | {} | {} |",
                r.variant,
                pct_cell(r.success_rate_pct),
                r.counts.correct,
                r.task_instances,
                timing.map_or("-".into(), |t| format!("{:.1}", t.mean_s)),
                timing
                    .and_then(|t| t.sample_std_s)
                    .map_or("-".into(), |v| format!("{v:.1}")),
                timing.map_or(0, |t| t.n),
            );
        }

        let _ = writeln!(s, "\n## Submission accuracies per task\n");
        let _ = writeln!(s, "| Video | Pipeline | {header} |");
        let _ = writeln!(s, "|---|---|---:|---:|---:|---:|---:|");
        for r in &self.per_task {
            let cells: Vec<String> = Bucket::ALL.iter().map(|b| pct_cell(r.percentages.get(*b))).collect();
            let _ = writeln!(s, "| {} | {} | {} |", r.video_id, r.variant, cells.join(" | "));
        }

        if !self.common_wrong.is_empty() {
            let _ = writeln!(s, "\n## Most common wrong video\n");
            let _ = writeln!(s, "| Video | Pipeline | Wrong video | Count |");
            let _ = writeln!(s, "|---|---|---|---:|");
            for w in &self.common_wrong {
                let _ = writeln!(s, "| {} | {} | {} | {} |", w.video_id, w.variant, w.wrong_video_id, w.count);
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "scope,video_id,variant,correct,within_30s,within_1min,within_video,wrong,total,tasks,success_rate_pct,mean_s,sample_std_s\n",
        );
        let counts_csv = |c: &BucketCounts| {
            Bucket::ALL.iter().map(|b| c.get(*b).to_string()).collect::<Vec<_>>().join(",")
        };
        for r in &self.table.rows {
            let timing = self.timing_for(r.variant);
            let _ = writeln!(
                s,
                "variant,,{},{},{},{},{},{},{}",
                r.variant,
                counts_csv(&r.counts),
                r.total,
                r.task_instances,
                opt_num(r.success_rate_pct),
                opt_num(timing.map(|t| t.mean_s)),
                opt_num(timing.and_then(|t| t.sample_std_s)),
            );
        }
        let t = &self.table.total;
        let _ = writeln!(s, "total,,,{},{},{},,,", counts_csv(&t.counts), t.total, t.task_instances);
        for r in &self.per_task {
            let _ = writeln!(s, "task,{},{},{},{},,,,", r.video_id, r.variant, counts_csv(&r.counts), r.total);
        }
        s
    }
}
