//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use kisbench_cli::harness::{demo_scripts, simulate_in_process};
use kisbench_core::analytics::{aggregate, timing_stats, BucketCounts, BucketTable};
use kisbench_core::clock::VirtualClock;
use kisbench_core::domain::{generate_conditions, FilterParams, HintKind, JudgePolicy, VideoSegment};
use kisbench_core::evalserver::{Engine, EngineConfig};
use kisbench_core::events::{EndReason, Event, LogRecord};
use kisbench_core::filters::{apply_f3, build_f3_mask, f3_spatial_mask, temporal_smooth, Plane};
use kisbench_core::fixtures::{self, study_plan};
use kisbench_core::frame::Frame;
use kisbench_core::judge::{classify_point, Bucket, RejectReason};
use kisbench_core::retrieval::{Index, SegmentDoc};
use kisbench_server::ServerConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("took {took:?}, budget {budget:?}"))?;
    Ok(took)
}

// Submission counts per variant as printed: correct, within 30s, within
// 1 min, within video, wrong, then tasks.
const RESULTS_COUNTS: [(HintKind, [u64; 5], u64); 5] = [
    (HintKind::Original, [117, 103, 25, 80, 111], 197),
    (HintKind::F2, [91, 46, 13, 40, 155], 198),
    (HintKind::F3, [104, 96, 41, 108, 109], 199),
    (HintKind::S, [6, 37, 25, 54, 165], 198),
    (HintKind::Textual, [33, 109, 50, 81, 199], 196),
];

// Printed percentages: five bucket columns then the share of all submissions.
const RESULTS_PRINTED: [(HintKind, [f64; 6]); 5] = [
    (HintKind::Original, [26.8, 23.6, 5.7, 18.3, 25.5, 21.8]),
    (HintKind::F2, [26.4, 13.3, 3.8, 11.6, 44.9, 17.3]),
    (HintKind::F3, [22.7, 21.0, 9.0, 23.6, 23.8, 23.0]),
    (HintKind::S, [2.1, 13.0, 8.7, 18.8, 57.5, 14.4]),
    (HintKind::Textual, [7.0, 23.1, 10.6, 17.2, 42.2, 23.6]),
];
const RESULTS_TOTAL_PRINTED: [f64; 5] = [17.6, 19.7, 7.7, 18.2, 37.0];
const RESULTS_TOTALS: (u64, u64) = (1998, 988);

fn results_table() -> Outcome {
    let start = Instant::now();
    let rows: Vec<(HintKind, BucketCounts, u64)> = RESULTS_COUNTS
        .iter()
        .map(|(k, c, n)| (*k, BucketCounts::new(c[0], c[1], c[2], c[3], c[4]), *n))
        .collect();
    let table = BucketTable::from_counts(&rows);
    ensure(table.total.total == RESULTS_TOTALS.0, || format!("total {}", table.total.total))?;
    ensure(table.total.task_instances == RESULTS_TOTALS.1, || {
        format!("tasks {}", table.total.task_instances)
    })?;

    let mut checked = 0;
    let mut mismatches = Vec::new();
    let mut check = |label: String, got: Option<f64>, printed: f64| {
        checked += 1;
        match got {
            Some(v) if (v - printed).abs() <= 0.05 + 1e-9 => {}
            other => mismatches.push(format!("{label}: computed {other:?}, printed {printed}")),
        }
    };
    for (kind, printed) in RESULTS_PRINTED {
        let row = table.row(kind).ok_or_else(|| format!("missing row {kind}"))?;
        for (i, bucket) in Bucket::ALL.into_iter().enumerate() {
            check(format!("{kind} {}", bucket.label()), row.percentages.get(bucket), printed[i]);
        }
        check(format!("{kind} share of all"), row.share_of_all_pct, printed[5]);
    }
    for (i, bucket) in Bucket::ALL.into_iter().enumerate() {
        check(format!("Total {}", bucket.label()), table.total.percentages.get(bucket), RESULTS_TOTAL_PRINTED[i]);
    }
    let original = table.row(HintKind::Original).and_then(|r| r.success_rate_pct);
    check("Original success rate".into(), original, 59.4);
    let synthetic = table.row(HintKind::S).and_then(|r| r.success_rate_pct);
    check("S success rate".into(), synthetic, 3.0);

    let took = within_budget(start, Duration::from_secs(1))?;
    if mismatches.is_empty() {
        Ok(format!("{checked} printed values reproduced in {took:?}"))
    } else {
        Err(format!(
            "{}/{checked} printed values differ from their own counts: {}",
            mismatches.len(),
            mismatches.join("; ")
        ))
    }
}

/// Grading from the bucket definitions as nested closed intervals around the
/// segment, without computing a distance.
fn oracle_bucket(seg: &VideoSegment, video: &str, t: i64) -> Bucket {
    if video != seg.video_id {
        return Bucket::Wrong;
    }
    let in_range = |lo: i64, hi: i64| t >= lo && t <= hi;
    if in_range(seg.start_ms, seg.end_ms) {
        Bucket::Correct
    } else if in_range(seg.start_ms - 30_000, seg.end_ms + 30_000) {
        Bucket::Within30s
    } else if in_range(seg.start_ms - 60_000, seg.end_ms + 60_000) {
        Bucket::Within1min
    } else {
        Bucket::WithinVideo
    }
}

fn judge_oracle() -> Outcome {
    let start = Instant::now();
    let policy = JudgePolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut cases = 0;
    let mut buckets: BTreeMap<Bucket, usize> = BTreeMap::new();
    let mut run = |seg: &VideoSegment, video: &str, t: i64| -> Result<(), String> {
        let got = classify_point(seg, video, t, &policy).bucket;
        let want = oracle_bucket(seg, video, t);
        cases += 1;
        *buckets.entry(got).or_default() += 1;
        ensure(got == want, || format!("{seg:?} {video}@{t}: classify {got:?}, oracle {want:?}"))
    };
    let seg = VideoSegment::new("00042", 100_000, 150_000);
    for d in [0, 30_000, 30_001, 60_000, 60_001] {
        run(&seg, "00042", seg.start_ms - d)?;
        run(&seg, "00042", seg.end_ms + d)?;
    }
    let expect = [
        (0, Bucket::Correct),
        (30_000, Bucket::Within30s),
        (30_001, Bucket::Within1min),
        (60_000, Bucket::Within1min),
        (60_001, Bucket::WithinVideo),
    ];
    for (d, bucket) in expect {
        for t in [seg.start_ms - d, seg.end_ms + d] {
            let got = classify_point(&seg, "00042", t, &policy).bucket;
            ensure(got == bucket, || format!("d={d}: {got:?}, expected {bucket:?}"))?;
        }
    }
    for _ in 0..100_000 {
        let s = rng.random_range(0..600_000);
        let len = rng.random_range(0..60_000);
        let seg = VideoSegment::new(format!("{:05}", rng.random_range(0..3)), s, s + len);
        let video = format!("{:05}", rng.random_range(0..3));
        let t = rng.random_range(-100_000..800_000);
        run(&seg, &video, t)?;
    }
    ensure(buckets.len() == 5, || format!("not every bucket exercised: {buckets:?}"))?;
    let took = within_budget(start, Duration::from_secs(10))?;
    Ok(format!("{cases} cases agree with the oracle in {took:?}"))
}

fn f3_mask_math() -> Outcome {
    let start = Instant::now();
    let params = FilterParams::default();
    let (w, h) = (64, 64);

    let low = f3_spatial_mask(&Plane::filled(w, h, 0.3), &params);
    ensure(low.data().iter().all(|v| *v == 0.0), || format!("0.3 maps to max {}", low.max()))?;
    let mid = f3_spatial_mask(&Plane::filled(w, h, 0.5), &params);
    let expected = 0.5f64.powf(0.8);
    ensure((expected - 0.574_349_177_498_517_6).abs() < 1e-12, || "oracle constant".into())?;
    let worst = mid.data().iter().map(|v| (v - expected).abs()).fold(0.0, f64::max);
    ensure(worst <= 1e-6, || format!("0.5 maps off by {worst}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for alpha in [0.0, 0.3, 0.6, 0.9] {
        let xs: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let smoothed = temporal_smooth(xs.iter().map(|v| Plane::filled(1, 1, *v)).collect(), alpha);
        for (t, plane) in smoothed.iter().enumerate() {
            // Closed form of the moving average.
            let mut direct = alpha.powi(t as i32) * xs[0];
            for (k, x) in xs.iter().enumerate().take(t + 1).skip(1) {
                direct += (1.0 - alpha) * alpha.powi((t - k) as i32) * x;
            }
            let got = plane.get(0, 0);
            ensure((got - direct).abs() <= 1e-9, || format!("alpha {alpha} t {t}: {got} vs {direct}"))?;
        }
    }

    let ones = vec![Plane::filled(w, h, 1.0); 4];
    let masks = build_f3_mask(&ones, &params).map_err(|e| e.to_string())?;
    ensure(masks.iter().all(|m| m.data().iter().all(|v| *v == 1.0)), || "all-ones map moved".into())?;

    let frame = fixtures::moving_square_clip(w, h, 1).remove(0);
    let out = apply_f3(&frame, &masks[0], &params).map_err(|e| e.to_string())?;
    let same = out.data().iter().zip(frame.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(same, || "mask = 1 changed pixels".into())?;
    let noisy = Frame::from_fn(w, h, |x, y| {
        let v = ((x * 31 + y * 17) % 97) as f64 / 96.0;
        [v, 1.0 - v, (v * 3.0) % 1.0]
    });
    let out = apply_f3(&noisy, &Plane::filled(w, h, 1.0), &params).map_err(|e| e.to_string())?;
    ensure(out == noisy, || "mask = 1 changed a textured frame".into())?;

    let took = within_budget(start, Duration::from_secs(5))?;
    Ok(format!("gamma/threshold, EMA, fixed point and identity blend hold in {took:?}"))
}

fn latin_square() -> Outcome {
    let videos: Vec<VideoSegment> = fixtures::task_segments();
    use HintKind::*;
    let printed = [
        [Original, F2, F3, S, Textual],
        [F2, F3, S, Textual, Original],
        [F3, S, Textual, Original, F2],
        [S, Textual, Original, F2, F3],
        [Textual, Original, F2, F3, S],
    ];
    let got = generate_conditions(&videos, &[Original, F2, F3, S, Textual]).map_err(|e| e.to_string())?;
    ensure(got == printed.map(|r| r.to_vec()).to_vec(), || format!("got {got:?}"))?;
    ensure(study_plan().conditions == got, || "fixture plan differs".into())?;

    for v in 1..=8 {
        let variants: Vec<HintKind> = HintKind::ALL[..v].to_vec();
        let videos: Vec<VideoSegment> = (0..v).map(|i| VideoSegment::new(format!("{i:05}"), 0, 1000)).collect();
        let m = generate_conditions(&videos, &variants).map_err(|e| e.to_string())?;
        ensure(m.len() == v, || format!("V={v}: {} rows", m.len()))?;
        for i in 0..v {
            let row: BTreeSet<_> = m[i].iter().collect();
            let col: BTreeSet<_> = m.iter().map(|r| &r[i]).collect();
            ensure(m[i].len() == v && row.len() == v && col.len() == v, || format!("V={v}: row/col {i} repeats"))?;
        }
    }
    Ok("matches the printed conditions; rows and columns unique for V = 1..8".into())
}

fn round_robin() -> Outcome {
    let backends: Vec<String> = (0..3).map(|i| format!("http://backend-{i}")).collect();
    let mut cfg = EngineConfig::new(fixtures::credentials(150), backends, "acceptance-key");
    cfg.seed = Some(3);
    let engine = Arc::new(
        Engine::open(cfg, Arc::new(VirtualClock::new(0)), Some(study_plan())).map_err(|e| e.to_string())?,
    );
    let handles: Vec<_> = (0..100)
        .map(|i| {
            let engine = Arc::clone(&engine);
            std::thread::spawn(move || engine.open_session(&format!("p{i:03}"), None).map(|s| s.credential.username))
        })
        .collect();
    let mut first = BTreeMap::new();
    for (i, h) in handles.into_iter().enumerate() {
        let cred = h.join().map_err(|_| "thread panicked".to_string())?.map_err(|e| e.to_string())?;
        first.insert(format!("p{i:03}"), cred);
    }
    let counts = engine.backend_counts();
    let spread = counts.iter().max().unwrap_or(&0) - counts.iter().min().unwrap_or(&0);
    ensure(counts.iter().sum::<usize>() == 100 && spread <= 1, || format!("backend counts {counts:?}"))?;
    let distinct: BTreeSet<_> = first.values().collect();
    ensure(distinct.len() == 100, || format!("{} distinct credentials", distinct.len()))?;
    for (pid, cred) in &first {
        let again = engine.open_session(pid, None).map_err(|e| e.to_string())?;
        ensure(&again.credential.username == cred, || format!("{pid} changed credential"))?;
        ensure(engine.credential_of(pid).as_ref() == Some(cred), || format!("{pid} lookup differs"))?;
    }
    Ok(format!("backend counts {counts:?}, 100 distinct stable credentials"))
}

fn simulation_log() -> Result<(String, kisbench_cli::harness::InProcessRun), String> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    let cfg = ServerConfig::demo("acceptance-admin", Vec::new());
    let scripts = demo_scripts(25, 11);
    let run = runtime
        .block_on(simulate_in_process(cfg, &scripts, Some(1_700_000_000_000), None))
        .map_err(|e| e.to_string())?;
    Ok((run.log.clone(), run))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let (log_a, run) = simulation_log()?;
    let (log_b, _) = simulation_log()?;
    ensure(log_a == log_b, || "event logs differ between runs".into())?;

    let records: Vec<LogRecord> = log_a
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let ended = |want: EndReason| {
        records
            .iter()
            .filter(|r| matches!(&r.event, Event::TaskEnded { reason, .. } if *reason == want))
            .count()
    };
    let late = records
        .iter()
        .filter(|r| {
            matches!(&r.event, Event::SubmissionRejected { reason, .. } if *reason == RejectReason::DeadlineExceeded)
        })
        .count();
    let (solved, expired) = (ended(EndReason::SolvedCorrect), ended(EndReason::Expired));
    ensure(solved > 0 && expired > 0 && late > 0, || {
        format!("solved {solved}, expired {expired}, late {late}")
    })?;

    let mut per_condition = BTreeMap::new();
    for p in &run.sim.participants {
        *per_condition.entry(p.condition_index).or_insert(0) += 1;
    }
    ensure(per_condition.len() == 5 && per_condition.values().all(|n| *n == 5), || {
        format!("participants per condition {per_condition:?}")
    })?;

    let replayed = aggregate(log_a.as_bytes()).map_err(|e| e.to_string())?;
    ensure(replayed == run.live_report, || "replayed report differs from the live one".into())?;

    let took = within_budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "{} records identical across runs; solved {solved}, expired {expired}, late {late}; replay matches; {took:?}",
        records.len()
    ))
}

fn doc(video: &str, caption: &str) -> SegmentDoc {
    SegmentDoc {
        video_id: video.into(),
        segment: VideoSegment::new(video, 0, 10_000),
        caption: caption.into(),
        on_screen_text: None,
    }
}

fn retrieval() -> Outcome {
    let corpus = [
        ("00001", "red bike race on an indoor track"),
        ("00002", "a red car and a red bike in the street"),
        ("00003", "kids in kayaks on a river"),
    ];
    let index = Index::build(corpus.iter().map(|(v, c)| doc(v, c)).collect()).map_err(|e| e.to_string())?;
    let tokens: Vec<Vec<&str>> = corpus.iter().map(|(_, c)| c.split(' ').collect()).collect();
    let n = tokens.len() as f64;
    let avg = tokens.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let bm25 = |query: &[&str], d: usize| -> f64 {
        let (k1, b) = (1.2, 0.75);
        let mut terms: Vec<&str> = query.to_vec();
        terms.sort_unstable();
        terms.dedup();
        terms
            .iter()
            .map(|q| {
                let df = tokens.iter().filter(|t| t.contains(q)).count() as f64;
                let tf = tokens[d].iter().filter(|t| *t == q).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * tokens[d].len() as f64 / avg))
            })
            .sum()
    };
    for query in ["red bike", "river kayaks", "a red red car", "track"] {
        let q: Vec<&str> = query.split(' ').collect();
        let hits = index.query(query, 10).map_err(|e| e.to_string())?;
        for (d, (video, _)) in corpus.iter().enumerate() {
            let want = bm25(&q, d);
            let got = hits.iter().find(|h| h.doc.video_id == *video).map_or(0.0, |h| h.score);
            ensure((got - want).abs() <= 1e-9, || format!("`{query}` doc {video}: {got} vs {want}"))?;
        }
    }

    let index = Index::build(fixtures::study_corpus(495, 7)).map_err(|e| e.to_string())?;
    let videos: BTreeSet<_> = index.docs().iter().map(|d| &d.video_id).collect();
    ensure(videos.len() == 500, || format!("{} videos", videos.len()))?;
    let mut slowest = Duration::ZERO;
    let queries = fixtures::TEXTUAL_HINTS.iter().copied().chain(["man walking on a beach at sunset", "music"]);
    for q in queries {
        let t = Instant::now();
        let hits = index.query(q, 20).map_err(|e| e.to_string())?;
        slowest = slowest.max(t.elapsed());
        ensure(!hits.is_empty(), || format!("no hits for `{q}`"))?;
    }
    ensure(slowest < Duration::from_millis(50), || format!("slowest query {slowest:?}"))?;
    Ok(format!("3-doc scores match the formula; {} segments, slowest query {slowest:?}", index.len()))
}

fn timing() -> Outcome {
    let s = timing_stats(&[90.0, 100.0, 110.0]).ok_or("no stats")?;
    ensure(s.mean_s == 100.0 && s.sample_std_s == Some(10.0), || format!("{s:?}"))?;
    Ok("mean 100.0, sample std 10.0".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("results table arithmetic", results_table),
        ("judgment oracle", judge_oracle),
        ("F3 mask math", f3_mask_math),
        ("latin square", latin_square),
        ("round-robin fairness and credential stability", round_robin),
        ("deterministic end-to-end simulation", end_to_end),
        ("retrieval oracle and latency", retrieval),
        ("timing stats", timing),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(detail)) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", 8 - failed, 8);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
