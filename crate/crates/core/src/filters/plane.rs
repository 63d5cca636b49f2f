//! Single-channel grids and the spatial operators the filters share:
//! separable Gaussian blur with half-sample symmetric boundaries and
//! grey-scale dilation with a disc.

use crate::frame::Frame;

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane buffer size");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane::new(self.width, self.height, self.data.iter().map(|v| f(*v)).collect())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Index into `[0, n)` of the half-sample symmetric extension (`d c b a | a b c d`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalised 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / denom).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// One separable pass over a strided buffer.
///
/// Each output is written as `centre + sum(w * (v - centre))`, so constant
/// neighbourhoods come out bit-exact.
fn convolve_lines(
    src: &[f64],
    dst: &mut [f64],
    lines: usize,
    len: usize,
    line_stride: usize,
    step: usize,
    kernel: &[f64],
) {
    let r = (kernel.len() / 2) as isize;
    for line in 0..lines {
        let base = line * line_stride;
        for i in 0..len {
            let centre = src[base + i * step];
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let j = reflect(i as isize + t as isize - r, len);
                acc += w * (src[base + j * step] - centre);
            }
            dst[base + i * step] = centre + acc;
        }
    }
}

/// Gaussian blur of a plane. `sigma <= 0` returns a copy.
pub fn gaussian_blur_plane(plane: &Plane, sigma: f64) -> Plane {
    if !(sigma > 0.0) {
        return plane.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = plane.dims();
    let mut tmp = vec![0.0; w * h];
    convolve_lines(&plane.data, &mut tmp, h, w, w, 1, &kernel);
    let mut out = vec![0.0; w * h];
    convolve_lines(&tmp, &mut out, w, h, 1, w, &kernel);
    Plane::new(w, h, out)
}

/// Per-channel Gaussian blur of an RGB frame. `sigma <= 0` returns a copy.
pub fn gaussian_blur_frame(frame: &Frame, sigma: f64) -> Frame {
    if !(sigma > 0.0) {
        return frame.clone();
    }
    let (w, h) = frame.dims();
    let channels: Vec<Plane> = (0..3)
        .map(|c| {
            let data = frame.data().iter().skip(c).step_by(3).copied().collect();
            gaussian_blur_plane(&Plane::new(w, h, data), sigma)
        })
        .collect();
    let mut data = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        for ch in &channels {
            data.push(ch.data[i].clamp(0.0, 1.0));
        }
    }
    Frame::from_raw(w, h, data)
}

/// Offsets of a Euclidean disc of the given radius.
pub(crate) fn disc_offsets(radius: u32) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Grey-scale dilation: each output is the max over the in-bounds disc.
pub fn dilate_disc(plane: &Plane, radius: u32) -> Plane {
    if radius == 0 {
        return plane.clone();
    }
    let offsets = disc_offsets(radius);
    let (w, h) = plane.dims();
    Plane::from_fn(w, h, |x, y| {
        offsets
            .iter()
            .filter_map(|(dx, dy)| {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h)
                    .then(|| plane.get(nx as usize, ny as usize))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reflect_is_half_sample_symmetric() {
        let n = 4;
        let got: Vec<_> = (-5..9).map(|i| reflect(i, n)).collect();
        assert_eq!(got, [3, 3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0, 0]);
    }

    #[test]
    fn kernel_radius_and_normalisation() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[12]);
    }

    #[test]
    fn constant_plane_is_fixed_exactly() {
        let p = Plane::filled(7, 5, 0.37);
        assert_eq!(gaussian_blur_plane(&p, 3.3), p);
    }

    #[test]
    fn dilation_disc_shape() {
        let mut data = vec![0.0; 81];
        data[4 * 9 + 4] = 1.0;
        let out = dilate_disc(&Plane::new(9, 9, data), 4);
        let lit = out.data().iter().filter(|v| **v == 1.0).count();
        assert_eq!(lit, disc_offsets(4).len());
        assert_eq!(out.get(0, 4), 1.0);
        assert_eq!(out.get(1, 1), 0.0); // dx=dy=3 is outside radius 4
        assert_eq!(out.get(2, 1), 1.0); // dx=2, dy=3
    }

    proptest! {
        #[test]
        fn blur_preserves_mean(
            w in 1usize..24, h in 1usize..24, sigma in 0.3f64..12.0, seed in any::<u64>()
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = Plane::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect());
            let b = gaussian_blur_plane(&p, sigma);
            prop_assert!((b.mean() - p.mean()).abs() < 1e-6);
        }

        #[test]
        fn dilation_is_extensive(w in 1usize..16, h in 1usize..16, r in 0u32..5, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = Plane::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect());
            let d = dilate_disc(&p, r);
            for (a, b) in p.data().iter().zip(d.data()) {
                prop_assert!(b >= a);
            }
        }
    }
}
