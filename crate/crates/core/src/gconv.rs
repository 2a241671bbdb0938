//! Group convolution over `G2` with separable kernels, and the projection layer.
//!
//! For a kernel `k([z, M]) = k1(z) k2(M)` the convolution
//!
//! ```text
//! (F * k)([y, B]) = int_G2 F([x, A]) k([y, B]^-1 [x, A]) d mu([x, A])
//! ```
//!
//! uses `[y, B]^-1 [x, A] = [B^-1 (x - y), B^-1 A]` and `d mu = dx d mu_GL2(A) / |det A|`.
//! The spatial integral is a cross-correlation with `k1(B^-1 .)`, whose transform is
//! `|det B| K1(B^T u)`, so
//!
//! ```text
//! int F_A(x) k1(B^-1 (x - y)) dx = F^-1( F_A(u) |det B| K1(-B^T u) )(y)
//! ```
//!
//! and the remaining `GL2` integral runs over the Iwasawa chart. On the lattice the
//! warped transform is taken as the DFT of `k1(B^-1 .)` sampled on the padded signal
//! lattice, which keeps the aliased copies of `K1` that a resampled spectrum would drop.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::affine::{iwasawa, AffineElement, ChartPoint, Mat2, DET_EPSILON};
use crate::error::{Error, Result};
use crate::haar::{integrate_gl2, QuadratureChart};
use crate::lifting::LiftedSignal;
use crate::signal::{dft, Fft2, Grid2, GridGeometry, Spectrum2};
use crate::sum::pairwise_sum;

/// Values of `r^2 / width^2` beyond which a [`GaussianBump`] is set to zero.
pub const BUMP_CUTOFF: f64 = 25.0;

/// The matrix factor `k2` of a separable kernel.
pub trait MatrixFactor: Send + Sync + fmt::Debug {
    fn eval(&self, m: &Mat2) -> f64;

    /// Center and Frobenius radius outside of which the factor vanishes, if known.
    fn support(&self) -> Option<(Mat2, f64)> {
        None
    }
}

/// `amplitude * exp(-||M - center||_F^2 / width^2)`, cut off at `BUMP_CUTOFF`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub center: Mat2,
    pub width: f64,
    pub amplitude: f64,
}

impl GaussianBump {
    pub fn new(center: Mat2, width: f64, amplitude: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::Config(format!("bump width must be positive, got {width}")));
        }
        center.check_invertible()?;
        Ok(GaussianBump { center, width, amplitude })
    }

    pub fn radius(&self) -> f64 {
        self.width * BUMP_CUTOFF.sqrt()
    }

    /// A chart whose bounds enclose the bump out to `4.5 * width` (mass beyond is
    /// below `1e-7` of the total), clipped short of the singular matrices.
    pub fn resolving_chart(&self, counts: [usize; 4]) -> Result<QuadratureChart> {
        let c = iwasawa(&self.center)?.to_log_polar();
        let smin = self.center.det().abs() / self.center.spectral_norm();
        let mut lo = [f64::INFINITY; 4];
        let mut hi = [f64::NEG_INFINITY; 4];
        let mut visit = |p: ChartPoint| {
            let dtheta = crate::affine::wrap_angle(p.theta - c.theta, -PI);
            let v = [p.rho, c.theta + dtheta, p.u, p.w];
            for k in 0..4 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        };
        let r = self.radius().min(4.5 * self.width).min(0.9 * smin);
        for code in 1..81 {
            let d = [(code % 3) as f64 - 1.0, (code / 3 % 3) as f64 - 1.0, (code / 9 % 3) as f64 - 1.0, (code / 27) as f64 - 1.0];
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for frac in [0.5, 1.0] {
                let s = r * frac / norm;
                let m = self.center.add(&Mat2::new(d[0] * s, d[1] * s, d[2] * s, d[3] * s));
                visit(iwasawa(&m)?.to_log_polar());
            }
        }
        let pad = |k: usize| 0.1 * (hi[k] - lo[k]);
        let theta = if hi[1] - lo[1] + 2.0 * pad(1) >= 2.0 * PI {
            [0.0, 2.0 * PI]
        } else {
            [lo[1] - pad(1), hi[1] + pad(1)]
        };
        QuadratureChart::new(
            [lo[0] - pad(0), hi[0] + pad(0)],
            theta,
            [lo[2] - pad(2), hi[2] + pad(2)],
            [lo[3] - pad(3), hi[3] + pad(3)],
            counts,
        )
    }
}

impl MatrixFactor for GaussianBump {
    fn eval(&self, m: &Mat2) -> f64 {
        let r2 = m.sub(&self.center).frobenius_sq() / (self.width * self.width);
        if r2 > BUMP_CUTOFF {
            0.0
        } else {
            self.amplitude * (-r2).exp()
        }
    }

    fn support(&self) -> Option<(Mat2, f64)> {
        Some((self.center, self.radius()))
    }
}

/// Constant factor, useful for normalization probes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantFactor(pub f64);

impl MatrixFactor for ConstantFactor {
    fn eval(&self, _: &Mat2) -> f64 {
        self.0
    }
}

/// One product `weight * k1(z) * k2(M)`.
#[derive(Clone, Debug)]
pub struct SeparableTerm {
    k1: Grid2,
    k2: Arc<dyn MatrixFactor>,
    weight: f64,
    k1_hat: Spectrum2,
}

impl SeparableTerm {
    pub fn new(k1: Grid2, k2: Arc<dyn MatrixFactor>) -> Result<Self> {
        let k1_hat = dft(&k1);
        Ok(SeparableTerm { k1, k2, weight: 1.0, k1_hat })
    }

    pub fn k1(&self) -> &Grid2 {
        &self.k1
    }

    pub fn k2(&self) -> &dyn MatrixFactor {
        self.k2.as_ref()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// `dft(k1)` on the lattice of `k1`.
    pub fn k1_spectrum(&self) -> &Spectrum2 {
        &self.k1_hat
    }

    pub fn eval(&self, g: &AffineElement) -> f64 {
        self.weight * self.k1.sample(g.x()) * self.k2.eval(&g.matrix())
    }

    fn k2_weighted(&self, m: &Mat2) -> f64 {
        self.weight * self.k2.eval(m)
    }

    /// Lattice offsets `m` (in units of `h`) where `k1(B^-1 (m h - delta))` can be nonzero.
    fn warped_box(&self, b: &Mat2, delta: [f64; 2], h: f64) -> ([i64; 2], [i64; 2]) {
        let g = self.k1.geometry();
        let lo = g.position(0, 0);
        let hi = g.position(g.height - 1, g.width - 1);
        let mut bmin = [f64::INFINITY; 2];
        let mut bmax = [f64::NEG_INFINITY; 2];
        for z in [[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]] {
            let p = b.mul_vec(z);
            for k in 0..2 {
                let v = (p[k] + delta[k]) / h;
                bmin[k] = bmin[k].min(v);
                bmax[k] = bmax[k].max(v);
            }
        }
        (
            [bmin[0].floor() as i64, bmin[1].floor() as i64],
            [bmax[0].ceil() as i64, bmax[1].ceil() as i64],
        )
    }

    /// `h^2 conj(DFT(kappa))` for `kappa(m) = k1(B^-1 (m h - delta))` wrapped onto the
    /// torus of `fft`. Multiplying a fiber transform by it and inverting gives
    /// `h^2 sum_m T(j + m) kappa(m)`.
    fn warped_spectrum(&self, b: &Mat2, delta: [f64; 2], h: f64, fft: &Fft2) -> Result<Vec<Complex64>> {
        let binv = b.inverse()?;
        let (py, px) = fft.shape();
        let (lo, hi) = self.warped_box(b, delta, h);
        let mut buf = vec![Complex64::new(0.0, 0.0); py * px];
        for my in lo[1]..=hi[1] {
            let r = my.rem_euclid(py as i64) as usize;
            for mx in lo[0]..=hi[0] {
                let v = self.k1.sample(binv.mul_vec([mx as f64 * h - delta[0], my as f64 * h - delta[1]]));
                if v != 0.0 {
                    buf[r * px + mx.rem_euclid(px as i64) as usize] += v;
                }
            }
        }
        fft.forward(&mut buf);
        let h2 = h * h;
        buf.iter_mut().for_each(|v| *v = v.conj() * h2);
        Ok(buf)
    }
}

/// A finite sum of separable terms.
#[derive(Clone, Debug)]
pub struct SeparableKernel {
    terms: Vec<SeparableTerm>,
}

impl SeparableKernel {
    pub fn new(terms: Vec<SeparableTerm>) -> Self {
        SeparableKernel { terms }
    }

    pub fn single(k1: Grid2, k2: Arc<dyn MatrixFactor>) -> Result<Self> {
        Ok(SeparableKernel { terms: vec![SeparableTerm::new(k1, k2)?] })
    }

    pub fn terms(&self) -> &[SeparableTerm] {
        &self.terms
    }

    /// Sum of the terms of both kernels.
    pub fn plus(&self, other: &SeparableKernel) -> SeparableKernel {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        SeparableKernel { terms }
    }

    pub fn scale(&self, alpha: f64) -> SeparableKernel {
        let terms = self.terms.iter().map(|t| SeparableTerm { weight: t.weight * alpha, ..t.clone() }).collect();
        SeparableKernel { terms }
    }

    pub fn eval(&self, g: &AffineElement) -> f64 {
        self.terms.iter().map(|t| t.eval(g)).sum()
    }

    /// `||k||_1 = int_G2 |k| d mu_G2` with the `GL2` part on `chart`. A single term
    /// factorizes; sums are integrated on a common grid fine enough for every `k1`.
    pub fn l1_norm(&self, chart: &QuadratureChart) -> Result<f64> {
        if self.terms.is_empty() {
            return Ok(0.0);
        }
        if let [t] = self.terms.as_slice() {
            let spatial = t.k1.l1_norm();
            let group = integrate_gl2(|m| t.k2_weighted(m).abs() / m.det().abs(), chart)?;
            return Ok(spatial * group);
        }
        let grid = self.common_grid()?;
        let samples: Vec<Vec<f64>> =
            self.terms.iter().map(|t| (0..grid.len()).map(|i| t.k1.sample(grid.position_of(i))).collect()).collect();
        let area = grid.cell_area();
        integrate_gl2(
            |m| {
                let f2: Vec<f64> = self.terms.iter().map(|t| t.k2_weighted(m)).collect();
                let vals: Vec<f64> =
                    (0..grid.len()).map(|i| f2.iter().zip(&samples).map(|(a, s)| a * s[i]).sum::<f64>().abs()).collect();
                pairwise_sum(&vals) * area / m.det().abs()
            },
            chart,
        )
    }

    fn common_grid(&self) -> Result<GridGeometry> {
        let h = self.terms.iter().map(|t| t.k1.spacing()).fold(f64::INFINITY, f64::min);
        let r = self.terms.iter().map(|t| t.k1.support_radius()).fold(0.0, f64::max);
        let n = (r / h).ceil() as usize;
        GridGeometry::centered(2 * n + 1, 2 * n + 1, h)
    }

    /// A chart enclosing the support of every bump factor, when all factors are bumps.
    pub fn resolving_chart(&self, counts: [usize; 4]) -> Option<QuadratureChart> {
        let mut acc: Option<QuadratureChart> = None;
        for t in &self.terms {
            let (center, radius) = t.k2.support()?;
            let bump = GaussianBump { center, width: radius / BUMP_CUTOFF.sqrt(), amplitude: 1.0 };
            let c = bump.resolving_chart(counts).ok()?;
            acc = Some(match acc {
                None => c,
                Some(a) => {
                    let theta = if a.theta.is_periodic() || c.theta.is_periodic() {
                        [0.0, 2.0 * PI]
                    } else {
                        [a.theta.lo.min(c.theta.lo), a.theta.hi.max(c.theta.hi)]
                    };
                    QuadratureChart::new(
                        [a.rho.lo.min(c.rho.lo), a.rho.hi.max(c.rho.hi)],
                        if theta[1] - theta[0] > 2.0 * PI { [0.0, 2.0 * PI] } else { theta },
                        [a.u.lo.min(c.u.lo), a.u.hi.max(c.u.hi)],
                        [a.w.lo.min(c.w.lo), a.w.hi.max(c.w.hi)],
                        counts,
                    )
                    .ok()?
                }
            });
        }
        acc
    }
}

/// Row-compressed coupling `c[B][A] = weight * k2(B^-1 A) / |det A|` (node weight included).
#[derive(Clone, Debug, Default)]
struct Coupling {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Coupling {
    fn row(&self, b: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[b]..self.row_ptr[b + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    fn nnz(&self) -> usize {
        self.vals.len()
    }

    fn transpose(&self, ncols: usize) -> Coupling {
        let mut counts = vec![0usize; ncols + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for i in 0..ncols {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0u32; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for b in 0..self.row_ptr.len() - 1 {
            let (cs, vs) = self.row(b);
            for (&c, &v) in cs.iter().zip(vs) {
                let slot = next[c as usize];
                cols[slot] = b as u32;
                vals[slot] = v;
                next[c as usize] += 1;
            }
        }
        Coupling { row_ptr: counts, cols, vals }
    }
}

/// Smallest `2^a 3^b` not below `n`.
fn good_size(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p3 = 1;
    while p3 < best {
        let mut m = p3;
        while m < n {
            m *= 2;
        }
        best = best.min(m);
        p3 *= 3;
    }
    best
}

/// Everything needed to convolve lifted signals on one `spatial x chart` product.
pub struct GconvPlan {
    kernel: SeparableKernel,
    spatial: GridGeometry,
    chart: QuadratureChart,
    py: usize,
    px: usize,
    fft: Fft2,
    mats: Vec<Mat2>,
    couplings: Vec<Coupling>,
}

impl fmt::Debug for GconvPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GconvPlan")
            .field("spatial", &self.spatial)
            .field("chart", &self.chart)
            .field("pad", &(self.py, self.px))
            .field("nnz", &self.couplings.iter().map(Coupling::nnz).collect::<Vec<_>>())
            .finish()
    }
}

impl GconvPlan {
    pub fn new(kernel: &SeparableKernel, spatial: &GridGeometry, chart: &QuadratureChart) -> Result<Self> {
        let mats = chart.matrices();
        let h = spatial.spacing;
        // Output j reads T(j + m) over the kernel box; no wrap if P >= H + max |m|.
        let mut reach = [0i64; 2];
        for t in &kernel.terms {
            for m in &mats {
                let (lo, hi) = t.warped_box(m, [0.0, 0.0], h);
                for k in 0..2 {
                    reach[k] = reach[k].max(-lo[k]).max(hi[k]);
                }
            }
        }
        let cap = 8 * spatial.height.max(spatial.width).next_power_of_two();
        let mut py = good_size(spatial.height + reach[1] as usize);
        let mut px = good_size(spatial.width + reach[0] as usize);
        if py > cap || px > cap {
            log::warn!("warped kernel reach {reach:?} exceeds the padding cap {cap}; circular wrap-around is possible");
            py = py.min(cap);
            px = px.min(cap);
        }
        let weight = chart.weight();
        let inv: Vec<Mat2> = mats.iter().map(|m| m.inverse()).collect::<Result<_>>()?;
        let inv_det: Vec<f64> = mats.iter().map(|m| 1.0 / m.det().abs()).collect();
        let couplings = kernel
            .terms
            .iter()
            .map(|t| {
                let rows: Vec<(Vec<u32>, Vec<f64>)> = (0..mats.len())
                    .into_par_iter()
                    .map(|b| {
                        let mut cols = Vec::new();
                        let mut vals = Vec::new();
                        for (a, m) in mats.iter().enumerate() {
                            let v = t.k2_weighted(&inv[b].mul(m));
                            if v != 0.0 {
                                cols.push(a as u32);
                                vals.push(weight * v * inv_det[a]);
                            }
                        }
                        (cols, vals)
                    })
                    .collect();
                let mut c = Coupling { row_ptr: vec![0], ..Default::default() };
                for (cols, vals) in rows {
                    c.cols.extend(cols);
                    c.vals.extend(vals);
                    c.row_ptr.push(c.cols.len());
                }
                c
            })
            .collect();
        Ok(GconvPlan {
            kernel: kernel.clone(),
            spatial: *spatial,
            chart: *chart,
            py,
            px,
            fft: Fft2::new(py, px),
            mats,
            couplings,
        })
    }

    pub fn kernel(&self) -> &SeparableKernel {
        &self.kernel
    }

    pub fn padding(&self) -> (usize, usize) {
        (self.py, self.px)
    }

    /// Number of nonzero couplings per term.
    pub fn couplings(&self) -> Vec<usize> {
        self.couplings.iter().map(Coupling::nnz).collect()
    }

    fn check(&self, f: &LiftedSignal) -> Result<()> {
        self.spatial.check_same(f.spatial())?;
        if *f.chart() != self.chart {
            return Err(Error::ChartMismatch(format!("signal chart {} vs plan chart {}", f.chart(), self.chart)));
        }
        Ok(())
    }

    fn embed(&self, t: &[f64], py: usize, px: usize) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); py * px];
        for r in 0..self.spatial.height {
            for c in 0..self.spatial.width {
                buf[r * px + c] = Complex64::new(t[r * self.spatial.width + c], 0.0);
            }
        }
        buf
    }

    /// `sum_A c[B][A] F_A` for one term.
    fn combine(&self, f: &LiftedSignal, coupling: &Coupling, b: usize) -> Option<Vec<f64>> {
        let (cols, vals) = coupling.row(b);
        if cols.is_empty() {
            return None;
        }
        let mut t = vec![0.0; self.spatial.len()];
        for (&a, &v) in cols.iter().zip(vals) {
            for (ti, fi) in t.iter_mut().zip(f.fiber(a as usize)) {
                *ti += v * fi;
            }
        }
        Some(t)
    }

    /// `sum_A c[B][A] F_A` for an arbitrary matrix `B`.
    fn combine_at(&self, f: &LiftedSignal, term: &SeparableTerm, b: &Mat2) -> Result<Vec<f64>> {
        let binv = b.inverse()?;
        let w = self.chart.weight();
        let mut t = vec![0.0; self.spatial.len()];
        for (a, m) in self.mats.iter().enumerate() {
            let v = term.k2_weighted(&binv.mul(m));
            if v == 0.0 {
                continue;
            }
            let c = w * v / m.det().abs();
            for (ti, fi) in t.iter_mut().zip(f.fiber(a)) {
                *ti += c * fi;
            }
        }
        Ok(t)
    }

    /// `h^2 sum_i T(i) k1(B^-1 (x_i - y))` through the transform route, on a torus
    /// sized so that the fiber and the shifted kernel box do not alias.
    fn correlate_at(&self, t: &[f64], term: &SeparableTerm, b: &Mat2, y: [f64; 2]) -> Result<f64> {
        let h = self.spatial.spacing;
        let delta = [y[0] - self.spatial.origin[0], y[1] - self.spatial.origin[1]];
        let (lo, hi) = term.warped_box(b, delta, h);
        let span = |n: usize, k: usize| good_size(((hi[k] + 1).max(n as i64) - lo[k].min(0)) as usize);
        let fft = Fft2::new(span(self.spatial.height, 1), span(self.spatial.width, 0));
        let (py, px) = fft.shape();
        let mut x = self.embed(t, py, px);
        fft.forward(&mut x);
        let g = term.warped_spectrum(b, delta, h, &fft)?;
        let total: Complex64 = x.iter().zip(&g).map(|(a, b)| a * b).sum();
        Ok(total.re / (py * px) as f64)
    }

    /// `F * k` at every node of the plan.
    pub fn gconv(&self, f: &LiftedSignal) -> Result<LiftedSignal> {
        self.check(f)?;
        let s = self.spatial.len();
        let norm = 1.0 / (self.py * self.px) as f64;
        let mut values = vec![0.0; s * self.mats.len()];
        values.par_chunks_mut(s).enumerate().for_each(|(b, out)| {
            let mut acc: Option<Vec<Complex64>> = None;
            for (term, coupling) in self.kernel.terms.iter().zip(&self.couplings) {
                let Some(t) = self.combine(f, coupling, b) else {
                    continue;
                };
                let mut buf = self.embed(&t, self.py, self.px);
                self.fft.forward(&mut buf);
                let g = term
                    .warped_spectrum(&self.mats[b], [0.0, 0.0], self.spatial.spacing, &self.fft)
                    .expect("chart matrices are invertible");
                match acc.as_mut() {
                    None => {
                        for (x, gk) in buf.iter_mut().zip(&g) {
                            *x *= gk;
                        }
                        acc = Some(buf);
                    }
                    Some(a) => {
                        for ((ak, x), gk) in a.iter_mut().zip(&buf).zip(&g) {
                            *ak += x * gk;
                        }
                    }
                }
            }
            match acc {
                None => out.iter_mut().for_each(|v| *v = 0.0),
                Some(mut a) => {
                    self.fft.inverse(&mut a);
                    for r in 0..self.spatial.height {
                        for c in 0..self.spatial.width {
                            out[r * self.spatial.width + c] = a[r * self.px + c].re * norm;
                        }
                    }
                }
            }
        });
        LiftedSignal::new(self.spatial, self.chart, values)
    }

    /// `(F * k)([y, B])` for an arbitrary target.
    pub fn gconv_at(&self, f: &LiftedSignal, target: &AffineElement) -> Result<f64> {
        self.check(f)?;
        let b = target.matrix();
        let mut total = 0.0;
        for term in &self.kernel.terms {
            let t = self.combine_at(f, term, &b)?;
            total += self.correlate_at(&t, term, &b, target.x())?;
        }
        Ok(total)
    }

    /// Integrand of the `GL2` integral: `k2(B^-1 A) / |det A|` times the spatial
    /// correlation of the fiber at `A` (nearest chart cell) with `k1(B^-1 .)`, at `y`.
    pub fn h_inner(&self, f: &LiftedSignal, a: &Mat2, b: &Mat2, y: [f64; 2]) -> Result<f64> {
        self.check(f)?;
        a.check_invertible()?;
        let binv = b.inverse()?;
        let Some(n) = self.chart.nearest_node_of(a) else {
            return Ok(0.0);
        };
        let mut total = 0.0;
        for term in &self.kernel.terms {
            let c = term.k2_weighted(&binv.mul(a));
            if c == 0.0 {
                continue;
            }
            total += c / a.det().abs() * self.correlate_at(f.fiber(n), term, b, y)?;
        }
        Ok(total)
    }
}

/// `F * k` on the nodes of `F`.
pub fn gconv(f: &LiftedSignal, kernel: &SeparableKernel) -> Result<LiftedSignal> {
    GconvPlan::new(kernel, f.spatial(), f.chart())?.gconv(f)
}

/// `(F * k)(target)`.
pub fn gconv_at(f: &LiftedSignal, kernel: &SeparableKernel, target: &AffineElement) -> Result<f64> {
    GconvPlan::new(kernel, f.spatial(), f.chart())?.gconv_at(f, target)
}

/// The linear functional `F -> int_G2 (F * k) d mu_G2` on one plan, stored as its
/// Riesz representer so that each evaluation is a single inner product.
pub struct FunctionalPlan {
    spatial: GridGeometry,
    chart: QuadratureChart,
    weights: Vec<f64>,
}

impl FunctionalPlan {
    pub fn new(plan: &GconvPlan) -> Result<Self> {
        let s = plan.spatial.len();
        let n = plan.mats.len();
        let (py, px) = (plan.py, plan.px);
        let mut indicator = vec![Complex64::new(0.0, 0.0); py * px];
        for r in 0..plan.spatial.height {
            for c in 0..plan.spatial.width {
                indicator[r * px + c] = Complex64::new(1.0, 0.0);
            }
        }
        plan.fft.forward(&mut indicator);
        let norm = 1.0 / (py * px) as f64;
        let omega = plan.chart.weight() * plan.spatial.cell_area();
        let mut weights = vec![0.0; s * n];
        for (term, coupling) in plan.kernel.terms.iter().zip(&plan.couplings) {
            // lambda_B(i) = sum_j kappa_B(i - j) over output nodes j, scaled by the output weight.
            let mut lambda = vec![0.0; s * n];
            lambda.par_chunks_mut(s).enumerate().for_each(|(b, out)| {
                if coupling.row(b).0.is_empty() {
                    return;
                }
                let g = term
                    .warped_spectrum(&plan.mats[b], [0.0, 0.0], plan.spatial.spacing, &plan.fft)
                    .expect("chart matrices are invertible");
                let mut buf: Vec<Complex64> = g.iter().zip(&indicator).map(|(gk, ik)| gk * ik.conj()).collect();
                plan.fft.forward(&mut buf);
                let scale = norm * omega / plan.mats[b].det().abs();
                for r in 0..plan.spatial.height {
                    for c in 0..plan.spatial.width {
                        out[r * plan.spatial.width + c] = buf[r * px + c].re * scale;
                    }
                }
            });
            let by_a = coupling.transpose(n);
            weights.par_chunks_mut(s).enumerate().for_each(|(a, w)| {
                let (bs, vs) = by_a.row(a);
                for (&b, &v) in bs.iter().zip(vs) {
                    let l = &lambda[b as usize * s..(b as usize + 1) * s];
                    for (wi, li) in w.iter_mut().zip(l) {
                        *wi += v * li;
                    }
                }
            });
        }
        Ok(FunctionalPlan { spatial: plan.spatial, chart: plan.chart, weights })
    }

    pub fn evaluate(&self, f: &LiftedSignal) -> Result<f64> {
        self.spatial.check_same(f.spatial())?;
        if *f.chart() != self.chart {
            return Err(Error::ChartMismatch(format!("signal chart {} vs plan chart {}", f.chart(), self.chart)));
        }
        let prods: Vec<f64> = self.weights.iter().zip(f.values()).map(|(w, v)| w * v).collect();
        Ok(pairwise_sum(&prods))
    }
}

/// Measure used to integrate out the matrix variable in [`project`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionMeasure {
    /// Haar measure of `GL2`.
    Haar,
    /// Lebesgue measure on matrix entries, `|det A|^2 d mu_GL2`.
    Lebesgue,
}

/// `x -> int F(x, A) d A` over the chart.
pub fn project(f: &LiftedSignal, measure: ProjectionMeasure) -> Result<Grid2> {
    let chart = f.chart();
    let w = chart.weight();
    let factors: Vec<f64> = (0..chart.len())
        .map(|n| match measure {
            ProjectionMeasure::Haar => w,
            ProjectionMeasure::Lebesgue => w * chart.matrix(n).det().powi(2),
        })
        .collect();
    let s = f.spatial().len();
    let values: Vec<f64> = (0..s)
        .into_par_iter()
        .map(|i| {
            let col: Vec<f64> = factors.iter().enumerate().map(|(n, c)| c * f.value(n, i)).collect();
            pairwise_sum(&col)
        })
        .collect();
    Grid2::new(*f.spatial(), values)
}

/// Reference value of `(F * k)([y, B])` by nested midpoint quadrature: spatial nodes of
/// `spatial` times an entry-space box for `A`, with `d mu_G2 = dx da db dc dd / |det A|^3`.
/// Independent of the Iwasawa chart and of the Fourier reduction.
pub fn brute_force_gconv_at<F>(
    f: F,
    kernel: &SeparableKernel,
    target: &AffineElement,
    spatial: &GridGeometry,
    entry_bounds: [[f64; 2]; 4],
    entry_counts: [usize; 4],
) -> Result<f64>
where
    F: Fn(&AffineElement) -> f64 + Sync,
{
    let tinv = target.invert()?;
    let steps: Vec<f64> = (0..4).map(|k| (entry_bounds[k][1] - entry_bounds[k][0]) / entry_counts[k] as f64).collect();
    let node = |k: usize, i: usize| entry_bounds[k][0] + (i as f64 + 0.5) * steps[k];
    let cell = steps.iter().product::<f64>() * spatial.cell_area();
    let n: usize = entry_counts.iter().product();
    let parts = crate::sum::par_blocks(n, 64, |range| {
        let mut vals = Vec::new();
        for idx in range {
            let id = idx % entry_counts[3];
            let ic = (idx / entry_counts[3]) % entry_counts[2];
            let ib = (idx / entry_counts[3] / entry_counts[2]) % entry_counts[1];
            let ia = idx / entry_counts[3] / entry_counts[2] / entry_counts[1];
            let a = Mat2::new(node(0, ia), node(1, ib), node(2, ic), node(3, id));
            let det = a.det();
            if det.abs() < DET_EPSILON {
                continue;
            }
            let mut inner = Vec::with_capacity(spatial.len());
            for i in 0..spatial.len() {
                let g = AffineElement::new(spatial.position_of(i), a).expect("checked determinant");
                let kv = kernel.eval(&tinv.compose(&g));
                if kv != 0.0 {
                    inner.push(f(&g) * kv);
                }
            }
            vals.push(pairwise_sum(&inner) / det.abs().powi(3));
        }
        pairwise_sum(&vals)
    });
    Ok(pairwise_sum(&parts) * cell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::gaussian_kernel;

    fn small_chart() -> QuadratureChart {
        QuadratureChart::new([-0.6, 0.6], [-0.6, 0.6], [-0.6, 0.6], [-0.6, 0.6], [5, 5, 5, 5]).unwrap()
    }

    fn bump(center: Mat2, width: f64) -> Arc<dyn MatrixFactor> {
        Arc::new(GaussianBump::new(center, width, 1.0).unwrap())
    }

    fn analytic(g: &AffineElement) -> f64 {
        let x = g.x();
        let a = g.matrix();
        (-(x[0] * x[0] + 0.5 * x[1] * x[1]) / 2.0).exp() * (-a.sub(&Mat2::IDENTITY).frobenius_sq()).exp() * (1.0 + 0.2 * a.a)
    }

    fn setup() -> (GridGeometry, QuadratureChart, LiftedSignal, SeparableKernel) {
        let spatial = GridGeometry::centered(10, 10, 0.6).unwrap();
        let chart = small_chart();
        let f = LiftedSignal::from_fn(spatial, chart, analytic).unwrap();
        let k = SeparableKernel::single(gaussian_kernel(0.6, 0.15, 4.0).unwrap(), bump(Mat2::IDENTITY, 0.3)).unwrap();
        (spatial, chart, f, k)
    }

    #[test]
    fn bump_rejects_singular_reach() {
        assert!(GaussianBump::new(Mat2::new(1.0, 1.0, 1.0, 1.0), 0.1, 1.0).is_err());
        assert!(GaussianBump::new(Mat2::IDENTITY, 0.0, 1.0).is_err());
        let b = GaussianBump::new(Mat2::IDENTITY, 0.1, 2.0).unwrap();
        assert_eq!(b.eval(&Mat2::IDENTITY), 2.0);
        assert_eq!(b.eval(&Mat2::scalar(2.0)), 0.0);
    }

    #[test]
    fn resolving_chart_covers_bump() {
        let b = GaussianBump::new(Mat2::new(1.2, 0.3, -0.2, 0.9), 0.08, 1.0).unwrap();
        let chart = b.resolving_chart([16, 16, 16, 16]).unwrap();
        let inside = integrate_gl2(|m| b.eval(m), &chart).unwrap();
        let wider = b.resolving_chart([16, 16, 16, 16]).unwrap();
        assert!(inside > 0.0);
        assert_eq!(inside, integrate_gl2(|m| b.eval(m), &wider).unwrap());
        let q = crate::haar::integrate_gl2_report(|m| b.eval(m), &chart).unwrap();
        assert!(q.boundary_fraction() < 1e-6);
    }

    #[test]
    fn term_spectrum_is_dft_of_k1() {
        let k1 = gaussian_kernel(0.5, 0.1, 4.0).unwrap();
        let t = SeparableTerm::new(k1.clone(), bump(Mat2::IDENTITY, 0.2)).unwrap();
        let back = crate::signal::idft(t.k1_spectrum());
        for (a, b) in back.values().iter().zip(k1.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_b_reduces_to_spatial_correlation() {
        let (spatial, chart, f, k) = setup();
        let plan = GconvPlan::new(&k, &spatial, &chart).unwrap();
        let n = chart.index_of([2, 2, 2, 2, 0]);
        let a = chart.matrix(n);
        let term = &k.terms()[0];
        for &y in &[[0.0, 0.0], [0.6, -1.2], [-0.3, 0.45]] {
            let got = plan.h_inner(&f, &a, &Mat2::IDENTITY, y).unwrap();
            let mut direct = 0.0;
            for i in 0..spatial.len() {
                let x = spatial.position_of(i);
                direct += f.value(n, i) * term.k1().sample([x[0] - y[0], x[1] - y[1]]);
            }
            direct *= spatial.cell_area() * term.k2().eval(&a) / a.det().abs();
            assert!((got - direct).abs() <= 1e-10 * direct.abs(), "{got} vs {direct}");
        }
    }

    #[test]
    fn fourier_path_matches_spatial_quadrature_for_warped_kernel() {
        let (spatial, chart, f, k) = setup();
        let plan = GconvPlan::new(&k, &spatial, &chart).unwrap();
        let term = &k.terms()[0];
        let a = chart.matrix(chart.index_of([2, 2, 2, 2, 0]));
        let b = Mat2::new(1.1, 0.2, -0.15, 0.9);
        let binv = b.inverse().unwrap();
        let n = chart.nearest_node_of(&a).unwrap();
        let y = [0.3, -0.6];
        let got = plan.h_inner(&f, &a, &b, y).unwrap();
        let mut direct = 0.0;
        for i in 0..spatial.len() {
            let x = spatial.position_of(i);
            direct += f.value(n, i) * term.k1().sample(binv.mul_vec([x[0] - y[0], x[1] - y[1]]));
        }
        direct *= spatial.cell_area() * term.k2().eval(&binv.mul(&a)) / a.det().abs();
        assert!((got - direct).abs() <= 1e-10 * direct.abs(), "{got} vs {direct}");
    }

    #[test]
    fn gconv_at_nodes_matches_full_gconv_and_h_inner_sum() {
        let (spatial, chart, f, k) = setup();
        let plan = GconvPlan::new(&k, &spatial, &chart).unwrap();
        let out = plan.gconv(&f).unwrap();
        for (n, i) in [(chart.index_of([2, 2, 2, 2, 0]), 45), (chart.index_of([1, 3, 2, 2, 0]), 12)] {
            let target = AffineElement::new(spatial.position_of(i), chart.matrix(n)).unwrap();
            let at = plan.gconv_at(&f, &target).unwrap();
            assert!((at - out.value(n, i)).abs() <= 1e-10 * at.abs().max(1e-12));
            let mut sum = 0.0;
            for m in 0..chart.len() {
                sum += chart.weight() * plan.h_inner(&f, &chart.matrix(m), &target.matrix(), target.x()).unwrap();
            }
            assert!((sum - at).abs() <= 1e-10 * at.abs().max(1e-12));
        }
    }

    #[test]
    fn linearity_zero_kernel_and_term_additivity() {
        let (spatial, chart, f, k) = setup();
        let g = LiftedSignal::from_fn(spatial, chart, |e| e.x()[0].sin() * e.matrix().d).unwrap();
        let plan = GconvPlan::new(&k, &spatial, &chart).unwrap();
        let lhs = plan.gconv(&f.scale(2.0).add(&g.scale(-3.0)).unwrap()).unwrap();
        let rhs = plan.gconv(&f).unwrap().scale(2.0).add(&plan.gconv(&g).unwrap().scale(-3.0)).unwrap();
        assert!(lhs.sub(&rhs).unwrap().sup_norm() <= 1e-12 * lhs.sup_norm());

        let zero = gconv(&f, &k.scale(0.0)).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
        assert_eq!(gconv(&LiftedSignal::zeros(spatial, chart), &k).unwrap().sup_norm(), 0.0);

        let k2 = SeparableKernel::single(gaussian_kernel(0.9, 0.15, 4.0).unwrap(), bump(Mat2::rotation(0.2), 0.25)).unwrap();
        let both = gconv(&f, &k.plus(&k2)).unwrap();
        let sum = gconv(&f, &k).unwrap().add(&gconv(&f, &k2).unwrap()).unwrap();
        let rel = both.sub(&sum).unwrap().sup_norm() / both.sup_norm();
        assert!(rel <= 1e-12, "{rel}");
    }

    #[test]
    fn fast_functional_equals_literal_integral() {
        let (spatial, chart, f, k) = setup();
        let k = k.plus(&SeparableKernel::single(gaussian_kernel(0.9, 0.15, 4.0).unwrap(), bump(Mat2::rotation(0.2), 0.25)).unwrap());
        let plan = GconvPlan::new(&k, &spatial, &chart).unwrap();
        let literal = plan.gconv(&f).unwrap().integral();
        let fast = FunctionalPlan::new(&plan).unwrap().evaluate(&f).unwrap();
        assert!((literal - fast).abs() <= 1e-10 * literal.abs(), "{literal} vs {fast}");
    }

    #[test]
    fn young_bound() {
        let (_, _, f, k) = setup();
        let out = gconv(&f, &k).unwrap();
        let l1 = k.l1_norm(&k.resolving_chart([16, 16, 16, 16]).unwrap()).unwrap();
        assert!(out.sup_norm() <= f.sup_norm() * l1 * 1.05);
    }

    #[test]
    fn l1_norm_of_sums_matches_single_term() {
        let k = SeparableKernel::single(gaussian_kernel(0.5, 0.1, 4.0).unwrap(), bump(Mat2::IDENTITY, 0.2)).unwrap();
        let chart = k.resolving_chart([12, 12, 12, 12]).unwrap();
        let single = k.l1_norm(&chart).unwrap();
        let split = k.scale(0.25).plus(&k.scale(0.75)).l1_norm(&chart).unwrap();
        assert!((single - split).abs() <= 1e-3 * single, "{single} vs {split}");
        assert!((k.scale(2.0).l1_norm(&chart).unwrap() - 2.0 * single).abs() <= 1e-12 * single);
    }

    #[test]
    fn projection() {
        let (spatial, chart, _, _) = setup();
        let one = LiftedSignal::from_fn(spatial, chart, |_| 1.5).unwrap();
        let p = project(&one, ProjectionMeasure::Haar).unwrap();
        for v in p.values() {
            assert!((v - 1.5 * chart.total_measure()).abs() < 1e-10 * v);
        }
        let sep = LiftedSignal::from_fn(spatial, chart, |g| g.x()[0].cos() * g.matrix().frobenius()).unwrap();
        let p = project(&sep, ProjectionMeasure::Haar).unwrap();
        let psi = integrate_gl2(|m| m.frobenius(), &chart).unwrap();
        for i in 0..spatial.len() {
            let want = spatial.position_of(i)[0].cos() * psi;
            assert!((p.values()[i] - want).abs() <= 1e-10 * psi);
        }
        let leb = project(&one, ProjectionMeasure::Lebesgue).unwrap();
        let want = integrate_gl2(|m| 1.5 * m.det().powi(2), &chart).unwrap();
        assert!((leb.values()[0] - want).abs() <= 1e-10 * want);
        assert_eq!(project(&LiftedSignal::zeros(spatial, chart), ProjectionMeasure::Haar).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn chart_mismatch_is_reported() {
        let (spatial, chart, f, k) = setup();
        let plan = GconvPlan::new(&k, &spatial, &chart.with_counts([4, 5, 5, 5]).unwrap()).unwrap();
        assert!(matches!(plan.gconv(&f), Err(Error::ChartMismatch(_))));
    }

    #[test]
    fn good_sizes() {
        assert_eq!(good_size(17), 18);
        assert_eq!(good_size(33), 36);
        assert_eq!(good_size(64), 64);
        assert_eq!(good_size(1), 1);
    }
}
