//! Isotropic total variation and its proximal operator.
//!
//! Differences are backward-looking with a zero boundary:
//! `dv[s,t] = x[s,t] - x[s-1,t]` (zero on the first row) and
//! `dh[s,t] = x[s,t] - x[s,t-1]` (zero on the first column), and
//! `TV(x) = sum sqrt(dv^2 + dh^2)`.
//!
//! [`tv_prox`] returns `argmin_t ||t - x||^2 + 2 w TV(t)` by fast gradient
//! projection on the dual: with `t = x + w div p` and `|p[s,t]| <= 1`, it
//! minimizes `1/2 ||x + w div p||^2` using step `1/8` in the scaled variable
//! (`8` bounds `||grad||^2` on a 2D grid). Momentum is reset whenever the dual
//! objective would increase, so the recorded dual objective is monotone.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::parse_fields;

/// Row-major image of `height x width` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("image must be non-empty, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image must be non-empty");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.data[s * self.width + t]
    }

    pub fn set(&mut self, s: usize, t: usize, v: f64) {
        self.data[s * self.width + t] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat text: a `height width` header, then one line of values per row.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.height, self.width)?;
        for row in self.data.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_text<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = loop {
            match lines.next() {
                Some(line) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
                None => return Err(Error::Parse("empty image file".into())),
            }
        };
        let dims = parse_fields::<usize>(&header, 2)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1]);
        for line in lines {
            let line = line?;
            for field in line.split_whitespace() {
                data.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("`{field}`: {e}")))?,
                );
            }
        }
        Self::new(dims[0], dims[1], data).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Binary 8-bit PGM, linearly mapping `[min, max]` to `[0, 255]`.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_text(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_text(std::fs::File::open(path)?)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_pgm(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Vertical and horizontal difference fields, each `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub height: usize,
    pub width: usize,
    pub vertical: Vec<f64>,
    pub horizontal: Vec<f64>,
}

impl GradientField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            vertical: vec![0.0; height * width],
            horizontal: vec![0.0; height * width],
        }
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        crate::linalg::dot(&self.vertical, &other.vertical) + crate::linalg::dot(&self.horizontal, &other.horizontal)
    }

    fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    fn matches(&self, img: &ImageGrid) -> bool {
        self.height == img.height && self.width == img.width
    }
}

/// Inner-solve controls for [`tv_prox`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ProxSettings {
    pub max_inner_iters: usize,
    /// Stop once `||p_new - p_old|| <= tol * ||p_new||` on the dual variable.
    pub tol: f64,
}

impl Default for ProxSettings {
    fn default() -> Self {
        Self {
            max_inner_iters: 100,
            tol: 1e-5,
        }
    }
}

impl ProxSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_inner_iters == 0 {
            return Err(Error::InvalidInput("max_inner_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("prox tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

fn gradient_into(x: &[f64], height: usize, width: usize, out: &mut GradientField) {
    for s in 0..height {
        for t in 0..width {
            let k = s * width + t;
            out.vertical[k] = if s > 0 { x[k] - x[k - width] } else { 0.0 };
            out.horizontal[k] = if t > 0 { x[k] - x[k - 1] } else { 0.0 };
        }
    }
}

fn divergence_into(p: &GradientField, out: &mut [f64]) {
    let (height, width) = (p.height, p.width);
    for s in 0..height {
        for t in 0..width {
            let k = s * width + t;
            let mut d = 0.0;
            if s + 1 < height {
                d += p.vertical[k + width];
            }
            if s > 0 {
                d -= p.vertical[k];
            }
            if t + 1 < width {
                d += p.horizontal[k + 1];
            }
            if t > 0 {
                d -= p.horizontal[k];
            }
            out[k] = d;
        }
    }
}

/// Backward differences with the zero first-row / first-column convention.
pub fn discrete_gradient(img: &ImageGrid) -> GradientField {
    let mut out = GradientField::zeros(img.height, img.width);
    gradient_into(&img.data, img.height, img.width, &mut out);
    out
}

/// Negative adjoint of [`discrete_gradient`]: `<grad u, p> = -<u, div p>`.
pub fn discrete_divergence(p: &GradientField) -> Result<ImageGrid> {
    let n = p.height * p.width;
    if p.height == 0 || p.width == 0 || p.vertical.len() != n || p.horizontal.len() != n {
        return Err(Error::Shape(format!(
            "difference fields must both hold {}x{} values (got {} and {})",
            p.height,
            p.width,
            p.vertical.len(),
            p.horizontal.len()
        )));
    }
    let mut out = vec![0.0; n];
    divergence_into(p, &mut out);
    ImageGrid::new(p.height, p.width, out)
}

pub fn tv_value(img: &ImageGrid) -> f64 {
    tv_of(&img.data, img.height, img.width)
}

pub(crate) fn tv_of(x: &[f64], height: usize, width: usize) -> f64 {
    let mut total = 0.0;
    for s in 0..height {
        for t in 0..width {
            let k = s * width + t;
            let dv = if s > 0 { x[k] - x[k - width] } else { 0.0 };
            let dh = if t > 0 { x[k] - x[k - 1] } else { 0.0 };
            total += dv.hypot(dh);
        }
    }
    total
}

/// `||t - x||^2 + 2 w TV(t)`, the objective [`tv_prox`] minimizes.
pub fn prox_objective(t: &ImageGrid, x: &ImageGrid, weight: f64) -> f64 {
    let fidelity: f64 = t.data.iter().zip(&x.data).map(|(a, b)| (a - b) * (a - b)).sum();
    fidelity + 2.0 * weight * tv_value(t)
}

/// Result of one proximal solve.
#[derive(Debug, Clone)]
pub struct ProxReport {
    pub image: ImageGrid,
    pub iterations: usize,
    pub restarts: usize,
    /// Dual objective after each accepted inner step, starting with the
    /// initial value.
    pub dual_objective: Vec<f64>,
}

struct DualWork {
    div: Vec<f64>,
    primal: Vec<f64>,
    grad: GradientField,
}

impl DualWork {
    fn new(height: usize, width: usize) -> Self {
        Self {
            div: vec![0.0; height * width],
            primal: vec![0.0; height * width],
            grad: GradientField::zeros(height, width),
        }
    }

    /// Writes `x + w div p` into `primal` and returns the dual objective.
    fn primal_and_objective(&mut self, x: &[f64], w: f64, p: &GradientField) -> f64 {
        divergence_into(p, &mut self.div);
        let mut obj = 0.0;
        for ((o, &xv), &d) in self.primal.iter_mut().zip(x).zip(&self.div) {
            *o = xv + w * d;
            obj += *o * *o;
        }
        0.5 * obj
    }

    /// `out = Proj(q + (1/(8w)) grad(x + w div q))`.
    fn projected_step(&mut self, x: &[f64], w: f64, q: &GradientField, out: &mut GradientField) {
        self.primal_and_objective(x, w, q);
        gradient_into(&self.primal, q.height, q.width, &mut self.grad);
        let tau = 1.0 / (8.0 * w);
        for k in 0..q.vertical.len() {
            let a = q.vertical[k] + tau * self.grad.vertical[k];
            let b = q.horizontal[k] + tau * self.grad.horizontal[k];
            let scale = a.hypot(b).max(1.0);
            out.vertical[k] = a / scale;
            out.horizontal[k] = b / scale;
        }
    }
}

fn check_weight(weight: f64) -> Result<()> {
    if !(weight >= 0.0) || !weight.is_finite() {
        return Err(Error::InvalidWeight(weight));
    }
    Ok(())
}

/// `argmin_t ||t - x||^2 + 2 w TV(t)`, i.e. the proximal map of `w TV`.
///
/// Deterministic; never returns a point whose objective exceeds that of `img`
/// itself.
pub fn tv_prox(img: &ImageGrid, weight: f64, settings: &ProxSettings) -> Result<ImageGrid> {
    let mut dual = GradientField::zeros(img.height, img.width);
    tv_prox_warm(img, weight, settings, &mut dual).map(|r| r.image)
}

/// [`tv_prox`] starting from, and writing back, the dual field `dual`.
///
/// Iterative solvers pass the field from their previous outer iteration so
/// the inner solve resumes close to its answer.
pub fn tv_prox_warm(
    img: &ImageGrid,
    weight: f64,
    settings: &ProxSettings,
    dual: &mut GradientField,
) -> Result<ProxReport> {
    check_weight(weight)?;
    settings.validate()?;
    if !dual.matches(img) {
        return Err(Error::Shape(format!(
            "dual field is {}x{}, image is {}x{}",
            dual.height, dual.width, img.height, img.width
        )));
    }
    if weight == 0.0 {
        return Ok(ProxReport {
            image: img.clone(),
            iterations: 0,
            restarts: 0,
            dual_objective: Vec::new(),
        });
    }

    let (h, w) = (img.height, img.width);
    let x = &img.data;
    let mut work = DualWork::new(h, w);
    // Component of p at structurally-zero differences never matters; keep it 0.
    for t in 0..w {
        dual.vertical[t] = 0.0;
    }
    for s in 0..h {
        dual.horizontal[s * w] = 0.0;
    }

    let mut p_prev = dual.clone();
    let mut q = dual.clone();
    let mut p_new = GradientField::zeros(h, w);
    let mut d_prev = work.primal_and_objective(x, weight, &p_prev);
    let mut history = Vec::with_capacity(settings.max_inner_iters + 1);
    history.push(d_prev);
    let mut momentum = 1.0f64;
    let mut iterations = 0;
    let mut restarts = 0;

    while iterations < settings.max_inner_iters {
        iterations += 1;
        work.projected_step(x, weight, &q, &mut p_new);
        let mut d_new = work.primal_and_objective(x, weight, &p_new);
        if d_new > d_prev {
            // Restart from the last accepted point with a plain projected step,
            // which cannot increase the objective beyond rounding.
            restarts += 1;
            momentum = 1.0;
            work.projected_step(x, weight, &p_prev, &mut p_new);
            d_new = work.primal_and_objective(x, weight, &p_new);
        }
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        let mut change_sq = 0.0;
        for k in 0..p_new.vertical.len() {
            let dv = p_new.vertical[k] - p_prev.vertical[k];
            let dh = p_new.horizontal[k] - p_prev.horizontal[k];
            change_sq += dv * dv + dh * dh;
            q.vertical[k] = p_new.vertical[k] + beta * dv;
            q.horizontal[k] = p_new.horizontal[k] + beta * dh;
        }
        momentum = next_momentum;
        std::mem::swap(&mut p_prev, &mut p_new);
        d_prev = d_new.min(d_prev);
        history.push(d_new);
        if change_sq <= settings.tol * settings.tol * p_prev.norm_sq() {
            break;
        }
    }

    work.primal_and_objective(x, weight, &p_prev);
    let candidate = ImageGrid::new(h, w, work.primal.clone())?;
    *dual = p_prev;
    let image = if prox_objective(&candidate, img, weight) <= prox_objective(img, img, weight) {
        candidate
    } else {
        img.clone()
    };
    Ok(ProxReport {
        image,
        iterations,
        restarts,
        dual_objective: history,
    })
}

/// Vectorization order of image pixels inside solver vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutKind {
    RowMajor,
    /// Recursive quadrant order: top-left, top-right, bottom-left,
    /// bottom-right. For a `2^k x 2^k` image, splitting the vector into `4^m`
    /// equal contiguous ranges yields square spatial tiles.
    Quadtree,
}

/// Map between solver-vector positions and row-major pixel positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelLayout {
    height: usize,
    width: usize,
    kind: LayoutKind,
    /// `vec_to_grid[k]` is the row-major index of the pixel stored at `k`.
    vec_to_grid: Vec<usize>,
}

fn quadtree_order(s0: usize, s1: usize, t0: usize, t1: usize, width: usize, out: &mut Vec<usize>) {
    if s0 >= s1 || t0 >= t1 {
        return;
    }
    if s1 - s0 == 1 && t1 - t0 == 1 {
        out.push(s0 * width + t0);
        return;
    }
    let sm = s0 + (s1 - s0).div_ceil(2);
    let tm = t0 + (t1 - t0).div_ceil(2);
    quadtree_order(s0, sm, t0, tm, width, out);
    quadtree_order(s0, sm, tm, t1, width, out);
    quadtree_order(sm, s1, t0, tm, width, out);
    quadtree_order(sm, s1, tm, t1, width, out);
}

impl PixelLayout {
    pub fn new(height: usize, width: usize, kind: LayoutKind) -> Self {
        let vec_to_grid = match kind {
            LayoutKind::RowMajor => (0..height * width).collect(),
            LayoutKind::Quadtree => {
                let mut order = Vec::with_capacity(height * width);
                quadtree_order(0, height, 0, width, width, &mut order);
                order
            }
        };
        Self {
            height,
            width,
            kind,
            vec_to_grid,
        }
    }

    pub fn row_major(height: usize, width: usize) -> Self {
        Self::new(height, width, LayoutKind::RowMajor)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> LayoutKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.vec_to_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vec_to_grid.is_empty()
    }

    /// Row-major pixel index stored at vector position `k`.
    pub fn grid_index(&self, k: usize) -> usize {
        self.vec_to_grid[k]
    }

    pub fn to_grid(&self, x: &[f64]) -> Result<ImageGrid> {
        if x.len() != self.len() {
            return Err(Error::Shape(format!(
                "vector of length {} does not fit a {}x{} layout",
                x.len(),
                self.height,
                self.width
            )));
        }
        let mut data = vec![0.0; x.len()];
        for (k, &g) in self.vec_to_grid.iter().enumerate() {
            data[g] = x[k];
        }
        ImageGrid::new(self.height, self.width, data)
    }

    pub fn from_grid(&self, img: &ImageGrid) -> Result<Vec<f64>> {
        if img.height != self.height || img.width != self.width {
            return Err(Error::Shape(format!(
                "{}x{} image does not fit a {}x{} layout",
                img.height, img.width, self.height, self.width
            )));
        }
        Ok(self.vec_to_grid.iter().map(|&g| img.data[g]).collect())
    }

    /// TV of a solver vector.
    pub fn tv_value(&self, x: &[f64]) -> Result<f64> {
        Ok(tv_value(&self.to_grid(x)?))
    }
}
