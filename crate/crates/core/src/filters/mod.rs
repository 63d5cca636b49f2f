//! Target-degradation filters.
//!
//! * **F1** global vignette: the periphery is blended towards a blurred,
//!   fully desaturated copy of the frame.
//! * **F2** frame memorability: a uniform blur/desaturation whose strength
//!   follows the frame's memorability score, followed by F1.
//! * **F3** spatial memorability: per-pixel blending towards the degraded copy,
//!   driven by a mask derived from memorability maps.
//!
//! Every blend is written as `p + (1 - w) * (d - p)` so that a weight of
//! exactly one returns the input sample bit for bit.

mod estimator;
mod plane;

pub use estimator::{ConstantEstimator, ContrastPriorEstimator, MemorabilityEstimator, MemorabilityFrame};
pub use plane::{dilate_disc, gaussian_blur_frame, gaussian_blur_plane, Plane};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::FilterParams;
use crate::frame::Frame;
use estimator::luma;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("memorability score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("video has no frames")]
    EmptyVideo,
    #[error("invalid filter parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterVariant {
    F1,
    F2,
    F3,
}

/// Blends a pixel towards its Rec.601 luma. `factor = 1` keeps it, `0` is grey.
pub fn desaturate(pixel: [f64; 3], factor: f64) -> [f64; 3] {
    let y = luma(pixel);
    pixel.map(|c| (c + (1.0 - factor) * (y - c)).clamp(0.0, 1.0))
}

fn desaturate_frame(frame: &Frame, factor: f64) -> Frame {
    let (w, h) = frame.dims();
    let data = frame.pixels().flat_map(|p| desaturate(p, factor)).collect();
    Frame::from_raw(w, h, data)
}

fn blend(pixel: f64, degraded: f64, weight: f64) -> f64 {
    (pixel + (1.0 - weight) * (degraded - pixel)).clamp(0.0, 1.0)
}

/// Blurs with `sigma`, then scales saturation by `saturation`.
pub fn degrade(frame: &Frame, sigma: f64, saturation: f64) -> Frame {
    desaturate_frame(&gaussian_blur_frame(frame, sigma), saturation)
}

fn full_degrade(frame: &Frame, params: &FilterParams) -> Frame {
    degrade(frame, params.max_blur_sigma_px, 0.0)
}

/// Preservation weight at pixel `(x, y)`: 1 inside the inner radius, 0 beyond
/// the outer one, inverted smoothstep in between. Radii are fractions of the
/// half-diagonal measured from the frame centre.
pub fn vignette_weight(x: usize, y: usize, width: usize, height: usize, params: &FilterParams) -> f64 {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let half_diag = (cx * cx + cy * cy).sqrt();
    if half_diag == 0.0 {
        return 1.0;
    }
    let dx = x as f64 - cx;
    let dy = y as f64 - cy;
    let r = (dx * dx + dy * dy).sqrt() / half_diag;
    let (inner, outer) = (params.vignette_inner_radius, params.vignette_outer_radius);
    if r <= inner {
        1.0
    } else if r >= outer {
        0.0
    } else {
        let t = (r - inner) / (outer - inner);
        1.0 - t * t * (3.0 - 2.0 * t)
    }
}

fn blend_frames(frame: &Frame, degraded: &Frame, weight: impl Fn(usize, usize) -> f64) -> Frame {
    let (w, h) = frame.dims();
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let wt = weight(x, y);
            let p = frame.pixel(x, y);
            let d = degraded.pixel(x, y);
            for c in 0..3 {
                data.push(blend(p[c], d[c], wt));
            }
        }
    }
    Frame::from_raw(w, h, data)
}

/// F1: global vignette.
pub fn apply_f1(frame: &Frame, params: &FilterParams) -> Frame {
    let degraded = full_degrade(frame, params);
    let (w, h) = frame.dims();
    blend_frames(frame, &degraded, |x, y| vignette_weight(x, y, w, h, params))
}

/// Uniform stage of F2: blur `sigma = max * (1 - score)`, saturation `score`.
pub fn f2_uniform_stage(frame: &Frame, mem_score: f64, params: &FilterParams) -> Result<Frame, FilterError> {
    if !(0.0..=1.0).contains(&mem_score) {
        return Err(FilterError::InvalidScore(mem_score));
    }
    if mem_score == 1.0 {
        return Ok(frame.clone());
    }
    Ok(degrade(frame, params.max_blur_sigma_px * (1.0 - mem_score), mem_score))
}

/// F2: uniform memorability-driven degradation, then the F1 vignette.
pub fn apply_f2(frame: &Frame, mem_score: f64, params: &FilterParams) -> Result<Frame, FilterError> {
    Ok(apply_f1(&f2_uniform_stage(frame, mem_score, params)?, params))
}

/// F3: `out = mask * frame + (1 - mask) * degrade(frame)`.
pub fn apply_f3(frame: &Frame, mask: &Plane, params: &FilterParams) -> Result<Frame, FilterError> {
    if mask.dims() != frame.dims() {
        return Err(FilterError::DimensionMismatch {
            expected: frame.dims(),
            actual: mask.dims(),
        });
    }
    let degraded = full_degrade(frame, params);
    Ok(blend_frames(frame, &degraded, |x, y| mask.get(x, y)))
}

/// Spatial stages of the F3 mask for one map: gamma, threshold, disc dilation
/// and a Gaussian blur with `sigma = dilation_radius / 2`.
pub fn f3_spatial_mask(map: &Plane, params: &FilterParams) -> Plane {
    let gated = map.map(|v| {
        let g = v.powf(params.gamma);
        if g < params.mask_threshold {
            0.0
        } else {
            g
        }
    });
    let dilated = dilate_disc(&gated, params.dilation_radius_px);
    gaussian_blur_plane(&dilated, f64::from(params.dilation_radius_px) / 2.0)
        .map(|v| v.clamp(0.0, 1.0))
}

/// Exponential moving average over time: `s_0 = m_0`,
/// `s_t = alpha * s_{t-1} + (1 - alpha) * m_t`.
pub fn temporal_smooth(masks: Vec<Plane>, alpha: f64) -> Vec<Plane> {
    let mut out: Vec<Plane> = Vec::with_capacity(masks.len());
    for m in masks {
        let next = match out.last() {
            None => m,
            Some(prev) => {
                let data = prev
                    .data()
                    .iter()
                    .zip(m.data())
                    .map(|(s, v)| (s + (1.0 - alpha) * (v - s)).clamp(0.0, 1.0))
                    .collect();
                Plane::new(m.width(), m.height(), data)
            }
        };
        out.push(next);
    }
    out
}

/// Builds the per-frame F3 masks from a sequence of memorability maps.
pub fn build_f3_mask(maps: &[Plane], params: &FilterParams) -> Result<Vec<Plane>, FilterError> {
    let Some(first) = maps.first() else {
        return Ok(Vec::new());
    };
    if let Some(bad) = maps.iter().find(|m| m.dims() != first.dims()) {
        return Err(FilterError::DimensionMismatch {
            expected: first.dims(),
            actual: bad.dims(),
        });
    }
    let spatial: Vec<Plane> = maps.par_iter().map(|m| f3_spatial_mask(m, params)).collect();
    Ok(temporal_smooth(spatial, params.smoothing_alpha))
}

/// Runs one filter pipeline over a whole clip. Output length equals input length.
pub fn process_video(
    frames: &[Frame],
    variant: FilterVariant,
    estimator: &dyn MemorabilityEstimator,
    params: &FilterParams,
) -> Result<Vec<Frame>, FilterError> {
    let problems = params.violations();
    if !problems.is_empty() {
        return Err(FilterError::InvalidParams(problems.join("; ")));
    }
    let Some(first) = frames.first() else {
        return Err(FilterError::EmptyVideo);
    };
    if let Some(bad) = frames.iter().find(|f| f.dims() != first.dims()) {
        return Err(FilterError::DimensionMismatch {
            expected: first.dims(),
            actual: bad.dims(),
        });
    }
    match variant {
        FilterVariant::F1 => Ok(frames.par_iter().map(|f| apply_f1(f, params)).collect()),
        FilterVariant::F2 => frames
            .par_iter()
            .map(|f| apply_f2(f, estimator.estimate(f).score, params))
            .collect(),
        FilterVariant::F3 => {
            let maps = frames
                .par_iter()
                .map(|f| {
                    let m = estimator.estimate(f);
                    if m.map.dims() != f.dims() {
                        return Err(FilterError::DimensionMismatch {
                            expected: f.dims(),
                            actual: m.map.dims(),
                        });
                    }
                    Ok(m.map)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let masks = build_f3_mask(&maps, params)?;
            frames
                .par_iter()
                .zip(masks.par_iter())
                .map(|(f, m)| apply_f3(f, m, params))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn params() -> FilterParams {
        FilterParams::default()
    }

    fn random_frame(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * 3).map(|_| rng.random::<f64>()).collect();
        Frame::new(w, h, data).unwrap()
    }

    fn close(a: &Frame, b: &Frame, tol: f64) -> bool {
        a.dims() == b.dims() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn vignette_examples() {
        let p = params();
        assert_eq!(vignette_weight(50, 50, 101, 101, &p), 1.0);
        assert_eq!(vignette_weight(0, 0, 101, 101, &p), 0.0);
        assert_eq!(vignette_weight(100, 100, 101, 101, &p), 0.0);
        let q = FilterParams { vignette_inner_radius: 0.5, vignette_outer_radius: 1.0, ..p };
        // 9x1 frame: centre 4, half-diagonal 4, x = 7 gives r = 0.75
        assert!((vignette_weight(7, 0, 9, 1, &q) - 0.5).abs() < 1e-15);
        assert_eq!(vignette_weight(0, 0, 1, 1, &q), 1.0);
    }

    #[test]
    fn desaturate_examples() {
        let red = [1.0, 0.0, 0.0];
        assert_eq!(desaturate(red, 1.0), red);
        for c in desaturate(red, 0.0) {
            assert!((c - 0.299).abs() < 1e-12);
        }
        for g in [0.0, 0.13, 0.5, 1.0] {
            for f in [0.0, 0.3, 1.0] {
                assert_eq!(desaturate([g, g, g], f), [g, g, g]);
            }
        }
    }

    #[test]
    fn f1_keeps_gray_and_centre() {
        let gray = Frame::filled(21, 15, [0.42; 3]);
        assert_eq!(apply_f1(&gray, &params()), gray);

        let f = random_frame(21, 15, 3);
        let out = apply_f1(&f, &params());
        assert_eq!(out.pixel(10, 7), f.pixel(10, 7));
    }

    #[test]
    fn f1_corner_of_red_is_gray_shifted() {
        let red = Frame::filled(31, 31, [1.0, 0.0, 0.0]);
        let out = apply_f1(&red, &params());
        let corner = out.pixel(0, 0);
        for c in corner {
            assert!((c - 0.299).abs() < 1e-9, "{corner:?}");
        }
        let mid = out.pixel(15, 15);
        assert_eq!(mid, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn f2_extremes() {
        let f = random_frame(24, 16, 9);
        let p = params();
        assert_eq!(apply_f2(&f, 1.0, &p).unwrap(), apply_f1(&f, &p));

        let zero = f2_uniform_stage(&f, 0.0, &p).unwrap();
        assert_eq!(zero, degrade(&f, p.max_blur_sigma_px, 0.0));
        for px in zero.pixels() {
            assert!((px[0] - px[1]).abs() < 1e-12 && (px[1] - px[2]).abs() < 1e-12);
        }

        let half = f2_uniform_stage(&f, 0.5, &p).unwrap();
        assert_eq!(half, degrade(&f, p.max_blur_sigma_px / 2.0, 0.5));

        assert_eq!(apply_f2(&f, 1.2, &p), Err(FilterError::InvalidScore(1.2)));
        assert_eq!(apply_f2(&f, -0.1, &p), Err(FilterError::InvalidScore(-0.1)));
    }

    #[test]
    fn f3_blend_rules() {
        let f = random_frame(16, 12, 1);
        let p = params();
        assert_eq!(apply_f3(&f, &Plane::filled(16, 12, 1.0), &p).unwrap(), f);

        let d = degrade(&f, p.max_blur_sigma_px, 0.0);
        assert!(close(&apply_f3(&f, &Plane::filled(16, 12, 0.0), &p).unwrap(), &d, 1e-12));

        let half = apply_f3(&f, &Plane::filled(16, 12, 0.5), &p).unwrap();
        for ((o, a), b) in half.data().iter().zip(f.data()).zip(d.data()) {
            assert!((o - (a + b) / 2.0).abs() < 1e-12);
        }

        assert!(matches!(
            apply_f3(&f, &Plane::filled(3, 3, 1.0), &p),
            Err(FilterError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mask_threshold_examples() {
        let p = params();
        let low = f3_spatial_mask(&Plane::filled(1, 1, 0.3), &p);
        assert_eq!(low.get(0, 0), 0.0);
        let high = f3_spatial_mask(&Plane::filled(1, 1, 0.5), &p);
        assert!((high.get(0, 0) - 0.5f64.powf(0.8)).abs() < 1e-12);
        assert!((high.get(0, 0) - 0.574_349_177).abs() < 1e-6);
    }

    #[test]
    fn all_ones_map_is_fixed_point() {
        let maps = vec![Plane::filled(20, 10, 1.0); 4];
        for m in build_f3_mask(&maps, &params()).unwrap() {
            assert!(m.data().iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn two_frame_smoothing() {
        let maps = vec![Plane::filled(5, 5, 1.0), Plane::filled(5, 5, 0.0)];
        let masks = build_f3_mask(&maps, &params()).unwrap();
        assert!(masks[0].data().iter().all(|v| *v == 1.0));
        assert!(masks[1].data().iter().all(|v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn mask_dimension_mismatch() {
        let maps = vec![Plane::filled(5, 5, 1.0), Plane::filled(4, 5, 0.0)];
        assert!(matches!(
            build_f3_mask(&maps, &params()),
            Err(FilterError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn process_video_lengths_and_errors() {
        let frames: Vec<_> = (0..5).map(|i| random_frame(12, 9, i)).collect();
        let est = ContrastPriorEstimator;
        for v in [FilterVariant::F1, FilterVariant::F2, FilterVariant::F3] {
            assert_eq!(process_video(&frames, v, &est, &params()).unwrap().len(), 5);
        }
        assert_eq!(process_video(&[], FilterVariant::F1, &est, &params()), Err(FilterError::EmptyVideo));

        let one = vec![random_frame(8, 8, 4)];
        let ones = ConstantEstimator { score: 1.0, map_value: 1.0 };
        assert_eq!(process_video(&one, FilterVariant::F3, &ones, &params()).unwrap(), one);

        let half = ConstantEstimator { score: 0.5, map_value: 0.5 };
        let out = process_video(&frames, FilterVariant::F2, &half, &params()).unwrap();
        for (o, f) in out.iter().zip(&frames) {
            assert_eq!(o, &apply_f1(&f2_uniform_stage(f, 0.5, &params()).unwrap(), &params()));
        }

        let mut mixed = frames.clone();
        mixed.push(random_frame(3, 3, 0));
        assert!(matches!(
            process_video(&mixed, FilterVariant::F1, &est, &params()),
            Err(FilterError::DimensionMismatch { .. })
        ));
    }

    fn arb_params() -> impl Strategy<Value = FilterParams> {
        (0.1f64..3.0, 0.0f64..=1.0, 0u32..6, 0.0f64..0.99, 0.0f64..10.0, 0.0f64..0.9)
            .prop_flat_map(|(g, t, r, a, s, inner)| {
                (inner + 0.01..2.0).prop_map(move |outer| FilterParams {
                    gamma: g,
                    mask_threshold: t,
                    dilation_radius_px: r,
                    smoothing_alpha: a,
                    max_blur_sigma_px: s,
                    vignette_inner_radius: inner,
                    vignette_outer_radius: outer,
                })
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn outputs_stay_in_unit_range(p in arb_params(), seed in any::<u64>(), w in 1usize..14, h in 1usize..14, n in 1usize..4) {
            let frames: Vec<_> = (0..n).map(|i| random_frame(w, h, seed.wrapping_add(i as u64))).collect();
            for v in [FilterVariant::F1, FilterVariant::F2, FilterVariant::F3] {
                let out = process_video(&frames, v, &ContrastPriorEstimator, &p).unwrap();
                for f in out {
                    prop_assert!(f.data().iter().all(|x| (0.0..=1.0).contains(x)));
                }
            }
        }

        #[test]
        fn spatial_mask_is_monotone(seed in any::<u64>(), w in 1usize..12, h in 1usize..12, bump in 0.0f64..1.0, idx in any::<prop::sample::Index>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
            let mut raised = base.clone();
            let i = idx.index(w * h);
            raised[i] = (raised[i] + bump).min(1.0);
            let a = f3_spatial_mask(&Plane::new(w, h, base), &params());
            let b = f3_spatial_mask(&Plane::new(w, h, raised), &params());
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!(*y >= *x - 1e-12);
            }
        }

        #[test]
        fn ema_matches_direct_recurrence(values in proptest::collection::vec(0.0f64..=1.0, 1..40), alpha in 0.0f64..0.99) {
            let planes: Vec<_> = values.iter().map(|v| Plane::filled(1, 1, *v)).collect();
            let smoothed = temporal_smooth(planes, alpha);
            let mut s = values[0];
            for (t, v) in values.iter().enumerate() {
                if t > 0 {
                    s = alpha * s + (1.0 - alpha) * v;
                }
                prop_assert!((smoothed[t].get(0, 0) - s).abs() < 1e-9);
            }
        }

        #[test]
        fn unit_weight_is_bit_exact(seed in any::<u64>(), w in 1usize..16, h in 1usize..16) {
            let f = random_frame(w, h, seed);
            let mut mask = vec![0.25; w * h];
            mask[0] = 1.0;
            let out = apply_f3(&f, &Plane::new(w, h, mask), &params()).unwrap();
            prop_assert_eq!(out.pixel(0, 0), f.pixel(0, 0));
        }
    }
}
