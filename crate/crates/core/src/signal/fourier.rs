//! Discrete Fourier transforms in physical units.
//!
//! For a grid with spacing `h`, origin `o` and shape `H x W` the forward transform is
//!
//! ```text
//! F(u) = h^2 * sum_x f(x) exp(-2 pi i <u, x>),   u = (k_x / (W h), k_y / (H h))
//! ```
//!
//! with signed integer frequencies in standard FFT order and `x` the physical node
//! positions (the origin phase is included). The inverse uses the measure
//! `du_x du_y`, so Parseval reads `sum |f|^2 h^2 = sum |F|^2 du_x du_y` and, for a
//! kernel supported inside the grid, `F` samples its continuous Fourier transform.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

use super::grid::{Grid2, GridGeometry};
use crate::affine::Mat2;
use crate::error::{Error, Result};

/// Cached row and column plans for `H x W` transforms.
#[derive(Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Unnormalized forward transform, in place, row-major.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalized inverse transform, in place, row-major.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
    }

    fn run(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.height * self.width, "buffer does not match plan shape");
        row.process(data);
        let mut t = transpose(data, self.height, self.width);
        col.process(&mut t);
        let back = transpose(&t, self.width, self.height);
        data.copy_from_slice(&back);
    }
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

/// Signed frequency index of FFT bin `i` out of `n`.
pub fn signed_index(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Transform of a [`Grid2`] on the physical frequency lattice of its geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum2 {
    geometry: GridGeometry,
    values: Vec<Complex64>,
}

impl Spectrum2 {
    pub fn new(geometry: GridGeometry, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} spectral values for a {}x{} grid",
                values.len(),
                geometry.height,
                geometry.width
            )));
        }
        Ok(Spectrum2 { geometry, values })
    }

    /// Geometry of the spatial grid this spectrum belongs to.
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    /// `(du_x, du_y)`.
    pub fn freq_spacing(&self) -> [f64; 2] {
        let h = self.geometry.spacing;
        [1.0 / (self.geometry.width as f64 * h), 1.0 / (self.geometry.height as f64 * h)]
    }

    /// Physical frequency of bin `(row, col)`.
    pub fn frequency(&self, row: usize, col: usize) -> [f64; 2] {
        let [dx, dy] = self.freq_spacing();
        [
            signed_index(col, self.geometry.width) as f64 * dx,
            signed_index(row, self.geometry.height) as f64 * dy,
        ]
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.geometry.width + col]
    }

    /// Bilinear interpolation in centered frequency coordinates; zero outside the band.
    pub fn at(&self, u: [f64; 2]) -> Complex64 {
        let [dx, dy] = self.freq_spacing();
        let w = self.geometry.width;
        let h = self.geometry.height;
        let Some((c0, c1, tx)) = band_cell(u[0] / dx, w) else {
            return Complex64::new(0.0, 0.0);
        };
        let Some((r0, r1, ty)) = band_cell(u[1] / dy, h) else {
            return Complex64::new(0.0, 0.0);
        };
        let v00 = self.values[r0 * w + c0];
        let v01 = self.values[r0 * w + c1];
        let v10 = self.values[r1 * w + c0];
        let v11 = self.values[r1 * w + c1];
        let top = v00 + (v01 - v00) * tx;
        let bot = v10 + (v11 - v10) * tx;
        top + (bot - top) * ty
    }

    /// Same continuous transform sampled `factor` times more finely, by zero padding in space.
    pub fn oversampled(&self, factor: usize) -> Spectrum2 {
        if factor <= 1 {
            return self.clone();
        }
        let spatial = inverse_complex(self);
        let g = self.geometry;
        let big = GridGeometry { height: g.height * factor, width: g.width * factor, ..g };
        let mut padded = vec![Complex64::new(0.0, 0.0); big.len()];
        for i in 0..g.height {
            padded[i * big.width..i * big.width + g.width].copy_from_slice(&spatial[i * g.width..(i + 1) * g.width]);
        }
        forward_complex(big, padded)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// `sqrt(sum |a - b|^2 / sum |b|^2)`.
    pub fn rel_l2_diff(&self, reference: &Spectrum2) -> Result<f64> {
        self.geometry.check_same(&reference.geometry)?;
        let num: f64 = self.values.iter().zip(&reference.values).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = reference.values.iter().map(|b| b.norm_sqr()).sum();
        Ok((num / den.max(1e-300)).sqrt())
    }
}

/// Returns the two neighbouring bins and the fractional offset for a signed fractional index.
fn band_cell(k: f64, n: usize) -> Option<(usize, usize, f64)> {
    let kmin = -((n / 2) as f64);
    let kmax = ((n - 1) / 2) as f64;
    if !(k >= kmin && k <= kmax) {
        return None;
    }
    if n == 1 {
        return Some((0, 0, 0.0));
    }
    let k0 = k.floor().min(kmax - 1.0);
    let t = k - k0;
    let wrap = |k: f64| (k as i64).rem_euclid(n as i64) as usize;
    Some((wrap(k0), wrap(k0 + 1.0), t))
}

fn origin_phase(geometry: &GridGeometry, row: usize, col: usize, sign: f64) -> Complex64 {
    let h = geometry.spacing;
    let ux = signed_index(col, geometry.width) as f64 / (geometry.width as f64 * h);
    let uy = signed_index(row, geometry.height) as f64 / (geometry.height as f64 * h);
    Complex64::from_polar(1.0, sign * 2.0 * PI * (ux * geometry.origin[0] + uy * geometry.origin[1]))
}

fn forward_complex(geometry: GridGeometry, mut data: Vec<Complex64>) -> Spectrum2 {
    let plan = Fft2::new(geometry.height, geometry.width);
    plan.forward(&mut data);
    let area = geometry.cell_area();
    for i in 0..geometry.height {
        for j in 0..geometry.width {
            data[i * geometry.width + j] *= origin_phase(&geometry, i, j, -1.0) * area;
        }
    }
    Spectrum2 { geometry, values: data }
}

fn inverse_complex(spec: &Spectrum2) -> Vec<Complex64> {
    let g = spec.geometry;
    let mut data = spec.values.clone();
    let scale = 1.0 / (g.cell_area() * g.len() as f64);
    for i in 0..g.height {
        for j in 0..g.width {
            data[i * g.width + j] *= origin_phase(&g, i, j, 1.0) * scale;
        }
    }
    Fft2::new(g.height, g.width).inverse(&mut data);
    data
}

pub fn dft(f: &Grid2) -> Spectrum2 {
    let data = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward_complex(*f.geometry(), data)
}

/// Zero-pads `f` at the far end to `height x width` before transforming.
pub fn dft_padded(f: &Grid2, height: usize, width: usize) -> Result<Spectrum2> {
    let g = f.geometry();
    if height < g.height || width < g.width {
        return Err(Error::ShapeMismatch(format!(
            "cannot pad {}x{} down to {height}x{width}",
            g.height, g.width
        )));
    }
    let big = GridGeometry::new(height, width, g.origin, g.spacing)?;
    let mut data = vec![Complex64::new(0.0, 0.0); big.len()];
    for i in 0..g.height {
        for j in 0..g.width {
            data[i * width + j] = Complex64::new(f.get(i, j), 0.0);
        }
    }
    Ok(forward_complex(big, data))
}

/// Real part of the inverse transform.
pub fn idft(spec: &Spectrum2) -> Grid2 {
    let data = inverse_complex(spec);
    let values = data.iter().map(|c| c.re).collect();
    Grid2::new(spec.geometry, values).expect("inverse transform of a finite spectrum is finite")
}

/// Physical circular convolution `(f * k)(x_m) = h^2 sum_j f(x_j) k(x_m - x_j)` with
/// indices taken modulo the grid shape. The result lives on a grid whose origin is
/// `o_f + o_k`, which makes `dft(f * k) = dft(f) dft(k)` hold exactly.
pub fn circular_convolve(f: &Grid2, k: &Grid2) -> Result<Grid2> {
    let gf = f.geometry();
    let gk = k.geometry();
    if gf.height != gk.height || gf.width != gk.width || gf.spacing != gk.spacing {
        return Err(Error::ShapeMismatch(format!(
            "convolution of {}x{} (h={}) with {}x{} (h={})",
            gf.height, gf.width, gf.spacing, gk.height, gk.width, gk.spacing
        )));
    }
    let plan = Fft2::new(gf.height, gf.width);
    let mut a: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut b: Vec<Complex64> = k.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.forward(&mut a);
    plan.forward(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    plan.inverse(&mut a);
    let scale = gf.cell_area() / gf.len() as f64;
    let origin = [gf.origin[0] + gk.origin[0], gf.origin[1] + gk.origin[1]];
    let geom = GridGeometry::new(gf.height, gf.width, origin, gf.spacing)?;
    Grid2::new(geom, a.iter().map(|c| c.re * scale).collect())
}

/// `|det B| K1(B^T u)` on the frequency lattice of `k1`, i.e. the transform of
/// `x -> k1(B^-1 x)`. The spectrum is first refined twofold by zero padding and then
/// resampled bilinearly; frequencies outside the band of `k1` map to zero.
pub fn affine_spectrum(k1: &Spectrum2, b: &Mat2) -> Result<Spectrum2> {
    let det = b.check_invertible()?;
    let fine = k1.oversampled(2);
    let bt = b.transpose();
    let g = *k1.geometry();
    let mut values = Vec::with_capacity(g.len());
    for i in 0..g.height {
        for j in 0..g.width {
            let u = k1.frequency(i, j);
            values.push(fine.at(bt.mul_vec(u)) * det.abs());
        }
    }
    Spectrum2::new(g, values)
}
