//! Memorability estimators.
//!
//! The trained estimator used for real experiments lives outside this crate;
//! [`ContrastPriorEstimator`] is a deterministic baseline that lets every
//! pipeline run end to end. It is a crude stand-in and makes no claim to
//! predict human memorability.

use super::plane::Plane;
use crate::frame::Frame;

/// Per-frame memorability estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorabilityFrame {
    /// Whole-frame score in `[0, 1]`.
    pub score: f64,
    /// Per-pixel map in `[0, 1]`, same dimensions as the frame.
    pub map: Plane,
}

impl MemorabilityFrame {
    pub fn is_valid_for(&self, frame: &Frame) -> bool {
        (0.0..=1.0).contains(&self.score)
            && self.map.dims() == frame.dims()
            && self.map.data().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Must be deterministic: identical frames give identical estimates.
pub trait MemorabilityEstimator: Send + Sync {
    fn estimate(&self, frame: &Frame) -> MemorabilityFrame;
}

impl<T: MemorabilityEstimator + ?Sized> MemorabilityEstimator for &T {
    fn estimate(&self, frame: &Frame) -> MemorabilityFrame {
        (**self).estimate(frame)
    }
}

impl<T: MemorabilityEstimator + ?Sized> MemorabilityEstimator for Box<T> {
    fn estimate(&self, frame: &Frame) -> MemorabilityFrame {
        (**self).estimate(frame)
    }
}

/// Fixed score and a uniform map. Used for tests and calibration runs.
#[derive(Debug, Clone, Copy)]
pub struct ConstantEstimator {
    pub score: f64,
    pub map_value: f64,
}

impl MemorabilityEstimator for ConstantEstimator {
    fn estimate(&self, frame: &Frame) -> MemorabilityFrame {
        MemorabilityFrame {
            score: self.score,
            map: Plane::filled(frame.width(), frame.height(), self.map_value),
        }
    }
}

/// Local luminance contrast times a centred Gaussian prior.
///
/// Map: standard deviation of luma in a 7x7 window (clipped at the border),
/// max-normalised per frame, multiplied by `exp(-d^2 / 2s^2)` where `d` is the
/// distance to the frame centre and `s` a quarter of the diagonal.
/// Score: mean of the map.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContrastPriorEstimator;

const WINDOW_RADIUS: isize = 3;

pub(crate) fn luma(p: [f64; 3]) -> f64 {
    p[0] + 0.587 * (p[1] - p[0]) + 0.114 * (p[2] - p[0])
}

impl MemorabilityEstimator for ContrastPriorEstimator {
    fn estimate(&self, frame: &Frame) -> MemorabilityFrame {
        let (w, h) = frame.dims();
        let y = Plane::from_fn(w, h, |x, y| luma(frame.pixel(x, y)));

        // Summed-area tables for O(1) window moments.
        let stride = w + 1;
        let mut s1 = vec![0.0; stride * (h + 1)];
        let mut s2 = vec![0.0; stride * (h + 1)];
        for j in 0..h {
            for i in 0..w {
                let v = y.get(i, j);
                let at = (j + 1) * stride + i + 1;
                s1[at] = v + s1[at - 1] + s1[at - stride] - s1[at - stride - 1];
                s2[at] = v * v + s2[at - 1] + s2[at - stride] - s2[at - stride - 1];
            }
        }
        let rect = |t: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| {
            t[y1 * stride + x1] - t[y0 * stride + x1] - t[y1 * stride + x0] + t[y0 * stride + x0]
        };
        let contrast = Plane::from_fn(w, h, |x, yy| {
            let x0 = (x as isize - WINDOW_RADIUS).max(0) as usize;
            let y0 = (yy as isize - WINDOW_RADIUS).max(0) as usize;
            let x1 = (x as isize + WINDOW_RADIUS + 1).min(w as isize) as usize;
            let y1 = (yy as isize + WINDOW_RADIUS + 1).min(h as isize) as usize;
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let mean = rect(&s1, x0, y0, x1, y1) / n;
            let var = rect(&s2, x0, y0, x1, y1) / n - mean * mean;
            var.max(0.0).sqrt()
        });
        let peak = contrast.max();

        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let sigma = ((w * w + h * h) as f64).sqrt() / 4.0;
        let two_s2 = 2.0 * sigma * sigma;
        let map = Plane::from_fn(w, h, |x, yy| {
            if peak <= 0.0 {
                return 0.0;
            }
            let dx = x as f64 - cx;
            let dy = yy as f64 - cy;
            let prior = (-(dx * dx + dy * dy) / two_s2).exp();
            (contrast.get(x, yy) / peak * prior).clamp(0.0, 1.0)
        });
        MemorabilityFrame {
            score: map.mean().clamp(0.0, 1.0),
            map,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, |x, y| {
            let v = if (x / 4 + y / 4) % 2 == 0 { 0.9 } else { 0.1 };
            [v, v * 0.5, 1.0 - v]
        })
    }

    #[test]
    fn deterministic_and_in_range() {
        let f = checker(33, 21);
        let a = ContrastPriorEstimator.estimate(&f);
        let b = ContrastPriorEstimator.estimate(&f);
        assert_eq!(a, b);
        assert!(a.is_valid_for(&f));
        assert!(a.score > 0.0);
    }

    #[test]
    fn flat_frame_scores_zero() {
        let f = Frame::filled(10, 10, [0.5; 3]);
        let m = ContrastPriorEstimator.estimate(&f);
        assert_eq!(m.score, 0.0);
        assert!(m.map.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn prior_favours_centre() {
        let f = checker(64, 64);
        let m = ContrastPriorEstimator.estimate(&f);
        assert!(m.map.get(32, 32) > m.map.get(1, 1));
    }
}
