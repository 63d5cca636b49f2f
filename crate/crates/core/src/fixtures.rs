//! The five-task study plan, a matching retrieval corpus and small synthetic
//! clips for tests and demos.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::domain::{EvaluationPlan, HintKind, HintPayload, VideoSegment};
use crate::evalserver::Credential;
use crate::frame::Frame;
use crate::retrieval::SegmentDoc;

/// Target video ids in task order.
pub const TASK_VIDEOS: [&str; 5] = ["01140", "02024", "05722", "13872", "14700"];

/// Variants in the order of the first condition row.
pub const TASK_VARIANTS: [HintKind; 5] = [
    HintKind::Original,
    HintKind::F2,
    HintKind::F3,
    HintKind::S,
    HintKind::Textual,
];

/// Textual hints, verbatim.
pub const TEXTUAL_HINTS: [&str; 5] = [
    "Start of an indoor bike race with 6 riders. A motorbike with a camera crosses the start line just after the starting shot.",
    "Singing instruction video, showing two singers and a keyboarder, with an overlaid graphical visualization.",
    "Shot of a wedding party panning from left to right, the party is grouped around bride and groom, then a shot of bride and groom walking and guests following them.",
    "Kids in kayaks on a river, throwing paddles through three coloured hoops placed over the water.",
    "View down the surface of a boulder, with a forest in the background. A bearded man in a cyan shirt climbing up the boulder.",
];

/// Target segment bounds in ms. Not published; chosen for the fixture.
pub const TARGET_BOUNDS_MS: [(i64, i64); 5] = [
    (120_000, 135_000),
    (43_000, 63_000),
    (210_000, 230_000),
    (75_000, 95_000),
    (15_000, 35_000),
];

/// Frequent wrong pick for the synthesized 02024 hint.
pub const LOOKALIKE_VIDEO: &str = "14607";

pub fn task_segments() -> Vec<VideoSegment> {
    TASK_VIDEOS
        .iter()
        .zip(TARGET_BOUNDS_MS)
        .map(|(id, (s, e))| VideoSegment::new(*id, s, e))
        .collect()
}

/// Opaque media path for a hint, so URIs do not reveal the video id.
pub fn media_uri(video_id: &str, kind: HintKind) -> String {
    let digest = Sha256::digest(format!("{video_id}/{kind}").as_bytes());
    format!("/media/{}.mp4", &hex::encode(digest)[..16])
}

/// Five tasks, five variants, cyclic conditions, 3 minute tasks.
pub fn study_plan() -> EvaluationPlan {
    let mut plan = EvaluationPlan::new(task_segments(), TASK_VARIANTS.to_vec()).expect("fixture plan is well formed");
    for (video, text) in TASK_VIDEOS.iter().zip(TEXTUAL_HINTS) {
        let hints = plan.hints.entry(video.to_string()).or_default();
        for kind in TASK_VARIANTS {
            let payload = if kind.is_visual() {
                HintPayload::Media {
                    uri: media_uri(video, kind),
                    pipeline: None,
                }
            } else {
                HintPayload::Text { text: text.to_string() }
            };
            hints.insert(kind, payload);
        }
    }
    plan
}

/// Words used for distractor captions.
pub const VOCAB: &[&str] = &[
    "man", "woman", "child", "dog", "cat", "car", "street", "city", "beach", "ocean", "mountain",
    "snow", "tree", "garden", "kitchen", "cooking", "food", "table", "crowd", "stage", "music",
    "guitar", "drum", "dancing", "football", "ball", "field", "horse", "bird", "sky", "sunset",
    "night", "lights", "building", "train", "station", "airplane", "boat", "harbour", "fish",
    "market", "shop", "bottle", "computer", "screen", "desk", "office", "talking", "interview",
    "microphone", "camera", "running", "walking", "jumping", "swimming", "cycling", "bridge",
    "road", "truck", "fire", "smoke", "rain", "clouds", "flower", "painting", "drawing", "book",
    "classroom", "teacher", "students", "laboratory", "machine", "factory", "workers", "farm",
    "cow", "sheep", "tractor", "village", "church", "castle", "museum", "statue", "fountain",
    "park", "bench", "skateboard", "surfing", "wave", "desert", "sand", "cave", "lake", "ice",
];

/// Captions of the segments just before and after each target.
pub const NEIGHBOUR_CAPTIONS: [[&str; 2]; 5] = [
    ["riders warm up on a wooden indoor track", "cyclists racing in a pack around the velodrome"],
    ["a woman explains breathing exercises to the camera", "a keyboard player performs a short melody"],
    ["guests arrive at a church and greet each other", "people dancing at a reception in a hall"],
    ["children carry kayaks down to the river bank", "a coach talks to kids sitting in boats"],
    ["a forest path leading to large rocks", "a climber chalks his hands at the bottom of a rock"],
];

/// Segment corpus: each target video split into neighbouring segments around
/// the target, plus `distractors` other videos with random captions.
pub fn study_corpus(distractors: usize, seed: u64) -> Vec<SegmentDoc> {
    let mut docs = Vec::new();
    for (i, seg) in task_segments().into_iter().enumerate() {
        let before = (seg.start_ms - 20_000).max(0);
        if before < seg.start_ms {
            docs.push(doc(&seg.video_id, before, seg.start_ms - 1, NEIGHBOUR_CAPTIONS[i][0]));
        }
        docs.push(doc(&seg.video_id, seg.start_ms, seg.end_ms, TEXTUAL_HINTS[i]));
        docs.push(doc(&seg.video_id, seg.end_ms + 1, seg.end_ms + 20_000, NEIGHBOUR_CAPTIONS[i][1]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<String> = Vec::with_capacity(distractors);
    if distractors > 0 {
        ids.push(LOOKALIKE_VIDEO.to_string());
    }
    while ids.len() < distractors {
        let id = format!("{:05}", rng.random_range(0..20_000));
        if !TASK_VIDEOS.contains(&id.as_str()) && !ids.contains(&id) {
            ids.push(id);
        }
    }
    for id in ids {
        if id == LOOKALIKE_VIDEO {
            docs.push(doc(
                &id,
                0,
                18_000,
                "two people singing next to a piano with colourful graphics on the screen",
            ));
            continue;
        }
        let segments = rng.random_range(1..=3);
        for s in 0..segments {
            let len = rng.random_range(8..=16);
            let words: Vec<&str> = (0..len).map(|_| *VOCAB.choose(&mut rng).expect("non-empty")).collect();
            let start = s * 20_000;
            docs.push(doc(&id, start, start + 19_999, &words.join(" ")));
        }
    }
    docs
}

fn doc(video_id: &str, start_ms: i64, end_ms: i64, caption: &str) -> SegmentDoc {
    SegmentDoc {
        video_id: video_id.to_string(),
        segment: VideoSegment::new(video_id, start_ms, end_ms),
        caption: caption.to_string(),
        on_screen_text: None,
    }
}

/// `user001`.. accounts with secrets derived from the name.
pub fn credentials(n: usize) -> Vec<Credential> {
    (1..=n)
        .map(|i| {
            let username = format!("user{i:03}");
            let secret = hex::encode(&Sha256::digest(format!("secret/{username}").as_bytes())[..8]);
            Credential { username, secret }
        })
        .collect()
}

/// A bright square drifting over a shaded background.
pub fn moving_square_clip(width: usize, height: usize, frames: usize) -> Vec<Frame> {
    let side = (width.min(height) / 4).max(1);
    (0..frames)
        .map(|t| {
            let ox = (t * 2) % width.max(1);
            let oy = height / 3;
            Frame::from_fn(width, height, |x, y| {
                let inside = x >= ox && x < ox + side && y >= oy && y < oy + side;
                if inside {
                    [0.95, 0.85, 0.2]
                } else {
                    let g = 0.2 + 0.5 * x as f64 / width.max(2) as f64;
                    [g * 0.6, g, 0.4 + 0.2 * y as f64 / height.max(2) as f64]
                }
            })
        })
        .collect()
}
