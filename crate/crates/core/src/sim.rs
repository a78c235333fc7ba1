//! Desk-scale fan-beam CT experiment: Shepp-Logan phantom, ray-traced system
//! matrix and Gaussian measurement noise at a prescribed SNR.
//!
//! Geometry is expressed in pixel units with the image centred on the
//! origin: column `t` spans `x in [-n/2 + t, -n/2 + t + 1]` and row `s` spans
//! `y in [n/2 - s - 1, n/2 - s]`. Sources sit on a circle of radius
//! `source_radius` at `num_angles` equally spaced angles over a full turn;
//! detector bins are equiangular over a fan that just covers the image's
//! circumscribed circle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{norm2_sq, SparseMatrix};
use crate::tv::{ImageGrid, LayoutKind, PixelLayout};

/// Smallest phantom side length.
pub const MIN_PHANTOM_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FanBeamGeometry {
    /// Pixels per side.
    pub image_size: usize,
    pub num_angles: usize,
    pub detector_count: usize,
    /// Distance of the source from the rotation centre, in pixels.
    pub source_radius: f64,
    /// Distance of the detector arc from the rotation centre, in pixels.
    pub detector_radius: f64,
    /// Physical side of one pixel; matrix entries are intersection lengths in
    /// this unit.
    pub pixel_size: f64,
    pub layout: LayoutKind,
}

impl Default for FanBeamGeometry {
    fn default() -> Self {
        Self::for_size(64)
    }
}

impl FanBeamGeometry {
    /// Default geometry for an `n x n` image.
    pub fn for_size(n: usize) -> Self {
        Self {
            image_size: n,
            num_angles: 36,
            detector_count: default_detector_count(n),
            source_radius: 2.0 * n as f64,
            detector_radius: 2.0 * n as f64,
            pixel_size: DEFAULT_PIXEL_SIZE,
            layout: LayoutKind::Quadtree,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 {
            return Err(Error::InvalidSize(self.image_size));
        }
        if self.num_angles == 0 || self.detector_count == 0 {
            return Err(Error::InvalidInput("need at least one angle and one detector".into()));
        }
        let half_diag = self.image_size as f64 * std::f64::consts::SQRT_2 / 2.0;
        if !(self.source_radius > half_diag) {
            return Err(Error::InvalidInput(format!(
                "source radius {} must exceed the image half-diagonal {half_diag}",
                self.source_radius
            )));
        }
        if !(self.detector_radius > half_diag) {
            return Err(Error::InvalidInput(format!(
                "detector radius {} must exceed the image half-diagonal {half_diag}",
                self.detector_radius
            )));
        }
        if !(self.pixel_size > 0.0) || !self.pixel_size.is_finite() {
            return Err(Error::InvalidInput(format!("pixel size must be positive, got {}", self.pixel_size)));
        }
        Ok(())
    }

    pub fn num_rays(&self) -> usize {
        self.num_angles * self.detector_count
    }

    pub fn pixel_layout(&self) -> PixelLayout {
        PixelLayout::new(self.image_size, self.image_size, self.layout)
    }

    /// Source point and unit direction of ray `k` (angle-major, then detector).
    pub fn ray(&self, k: usize) -> ((f64, f64), (f64, f64)) {
        let angle_idx = k / self.detector_count;
        let det_idx = k % self.detector_count;
        let beta = std::f64::consts::TAU * angle_idx as f64 / self.num_angles as f64;
        let half_diag = self.image_size as f64 * std::f64::consts::SQRT_2 / 2.0;
        let half_fan = (half_diag / self.source_radius).asin();
        let d = self.detector_count as f64;
        let gamma = half_fan * ((2.0 * det_idx as f64 + 1.0) / d - 1.0);
        let source = (self.source_radius * beta.cos(), self.source_radius * beta.sin());
        let heading = beta + std::f64::consts::PI + gamma;
        (source, (heading.cos(), heading.sin()))
    }

    /// Far end of ray `k`, on the detector side.
    pub fn ray_end(&self, k: usize) -> (f64, f64) {
        let (s, d) = self.ray(k);
        let reach = self.source_radius + self.detector_radius;
        (s.0 + reach * d.0, s.1 + reach * d.1)
    }
}

/// Odd count close to `1.5 n`, so every view has a ray through the centre.
fn default_detector_count(n: usize) -> usize {
    let d = (3 * n / 2).max(1);
    if d % 2 == 0 {
        d - 1
    } else {
        d
    }
}

/// Pixel side used by [`FanBeamGeometry::default`].
pub const DEFAULT_PIXEL_SIZE: f64 = 0.25;

/// Intersections of the segment `p0 -> p1` with the pixels of an `n x n`
/// image, as `(row, col, length)` in pixel units. Lengths below `1e-12` are
/// dropped.
pub fn trace_ray(p0: (f64, f64), p1: (f64, f64), n: usize) -> Vec<(usize, usize, f64)> {
    let half = n as f64 / 2.0;
    let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
    let seg_len = dx.hypot(dy);
    if seg_len == 0.0 {
        return Vec::new();
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for (start, delta) in [(p0.0, dx), (p0.1, dy)] {
        if delta == 0.0 {
            if start <= -half || start >= half {
                return Vec::new();
            }
        } else {
            let a = (-half - start) / delta;
            let b = (half - start) / delta;
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    if hi <= lo {
        return Vec::new();
    }

    let mut alphas = vec![lo, hi];
    for (start, delta) in [(p0.0, dx), (p0.1, dy)] {
        if delta == 0.0 {
            continue;
        }
        for k in 0..=n {
            let a = (-half + k as f64 - start) / delta;
            if a > lo && a < hi {
                alphas.push(a);
            }
        }
    }
    alphas.sort_by(f64::total_cmp);

    let mut out: Vec<(usize, usize, f64)> = Vec::new();
    for w in alphas.windows(2) {
        let len = (w[1] - w[0]) * seg_len;
        if len < 1e-12 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let (x, y) = (p0.0 + mid * dx, p0.1 + mid * dy);
        let col = ((x + half).floor().max(0.0) as usize).min(n - 1);
        let row = ((half - y).floor().max(0.0) as usize).min(n - 1);
        match out.last_mut() {
            Some(last) if last.0 == row && last.1 == col => last.2 += len,
            _ => out.push((row, col, len)),
        }
    }
    out
}

/// System matrix of the fan-beam scan: row `k` holds the intersection lengths
/// of ray `k` with every pixel, columns ordered by the geometry's pixel layout.
pub fn fan_beam_matrix(geom: &FanBeamGeometry) -> Result<SparseMatrix> {
    geom.validate()?;
    let n = geom.image_size;
    let layout = geom.pixel_layout();
    let mut grid_to_vec = vec![0usize; n * n];
    for k in 0..n * n {
        grid_to_vec[layout.grid_index(k)] = k;
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..geom.num_rays())
        .into_par_iter()
        .map(|k| {
            let (src, _) = geom.ray(k);
            let mut row: Vec<(usize, f64)> = trace_ray(src, geom.ray_end(k), n)
                .into_iter()
                .map(|(r, c, len)| (grid_to_vec[r * n + c], len * geom.pixel_size))
                .collect();
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    let triplets: Vec<(usize, usize, f64)> = rows
        .into_iter()
        .enumerate()
        .flat_map(|(r, row)| row.into_iter().map(move |(c, v)| (r, c, v)))
        .collect();
    SparseMatrix::from_triplets(geom.num_rays(), n * n, &triplets)
}

/// One ellipse of the phantom in normalized `[-1, 1]^2` coordinates.
#[derive(Debug, Clone, Copy)]
struct Ellipse {
    intensity: f64,
    semi_x: f64,
    semi_y: f64,
    center_x: f64,
    center_y: f64,
    angle_deg: f64,
}

const fn ellipse(intensity: f64, semi_x: f64, semi_y: f64, center_x: f64, center_y: f64, angle_deg: f64) -> Ellipse {
    Ellipse {
        intensity,
        semi_x,
        semi_y,
        center_x,
        center_y,
        angle_deg,
    }
}

/// The ten-ellipse head phantom with high-contrast intensities rescaled so
/// values lie in `[0, 1]`.
const SHEPP_LOGAN: [Ellipse; 10] = [
    ellipse(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    ellipse(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    ellipse(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    ellipse(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    ellipse(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    ellipse(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    ellipse(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    ellipse(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    ellipse(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    ellipse(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

fn phantom_value(x: f64, y: f64) -> f64 {
    SHEPP_LOGAN
        .iter()
        .filter(|e| {
            let (sin, cos) = e.angle_deg.to_radians().sin_cos();
            let (px, py) = (x - e.center_x, y - e.center_y);
            let u = px * cos + py * sin;
            let v = -px * sin + py * cos;
            (u / e.semi_x).powi(2) + (v / e.semi_y).powi(2) <= 1.0
        })
        .map(|e| e.intensity)
        .sum()
}

/// Subsamples per pixel side used by [`shepp_logan`].
pub const PHANTOM_OVERSAMPLE: usize = 4;

/// `n x n` Shepp-Logan phantom, each pixel averaged over a
/// `PHANTOM_OVERSAMPLE^2` grid of sample points.
pub fn shepp_logan(n: usize) -> Result<ImageGrid> {
    shepp_logan_sampled(n, PHANTOM_OVERSAMPLE)
}

pub fn shepp_logan_sampled(n: usize, oversample: usize) -> Result<ImageGrid> {
    if n < MIN_PHANTOM_SIZE {
        return Err(Error::InvalidSize(n));
    }
    let sub = oversample.max(1);
    let mut data = vec![0.0; n * n];
    let step = 2.0 / (n * sub) as f64;
    for s in 0..n {
        for t in 0..n {
            let mut acc = 0.0;
            for a in 0..sub {
                for b in 0..sub {
                    let x = -1.0 + ((t * sub + b) as f64 + 0.5) * step;
                    let y = 1.0 - ((s * sub + a) as f64 + 0.5) * step;
                    acc += phantom_value(x, y);
                }
            }
            // Overlapping negative ellipses can leave -0.0 or rounding dust.
            data[s * n + t] = (acc / (sub * sub) as f64).clamp(0.0, 1.0);
        }
    }
    ImageGrid::new(n, n, data)
}

/// `y + e` with i.i.d. Gaussian `e` rescaled so that
/// `10 log10(||y||^2 / ||e||^2) = snr_db`. An infinite `snr_db` returns `y`.
pub fn add_noise_to_snr(y: &[f64], snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    if snr_db == f64::INFINITY {
        return Ok(y.to_vec());
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput(format!("SNR must be finite or +inf, got {snr_db}")));
    }
    let signal = norm2_sq(y);
    if signal == 0.0 {
        return Err(Error::InvalidInput("cannot set an SNR on a zero signal".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..y.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let scale = (signal / (10f64.powf(snr_db / 10.0) * norm2_sq(&noise))).sqrt();
    Ok(y.iter().zip(&noise).map(|(a, e)| a + scale * e).collect())
}

/// `10 log10(||clean||^2 / ||noisy - clean||^2)`.
pub fn measured_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let noise: f64 = clean.iter().zip(noisy).map(|(a, b)| (b - a) * (b - a)).sum();
    10.0 * (norm2_sq(clean) / noise).log10()
}

/// Everything one simulated experiment needs.
#[derive(Debug, Clone)]
pub struct SimulatedScan {
    pub geometry: FanBeamGeometry,
    pub matrix: SparseMatrix,
    pub phantom: ImageGrid,
    pub layout: PixelLayout,
    /// Phantom in solver-vector order.
    pub x_true: Vec<f64>,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
}

/// Builds phantom, matrix and measurements; `snr_db = +inf` skips the noise.
pub fn simulate(geom: &FanBeamGeometry, snr_db: f64, seed: u64) -> Result<SimulatedScan> {
    let phantom = shepp_logan(geom.image_size)?;
    let matrix = fan_beam_matrix(geom)?;
    let layout = geom.pixel_layout();
    let x_true = layout.from_grid(&phantom)?;
    let op = crate::linalg::BlockOperator::whole(matrix.clone())?;
    let clean = op.apply_uncharged(&x_true)?;
    let noisy = add_noise_to_snr(&clean, snr_db, seed)?;
    Ok(SimulatedScan {
        geometry: *geom,
        matrix,
        phantom,
        layout,
        x_true,
        clean,
        noisy,
    })
}
