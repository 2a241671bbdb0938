//! The lifting layer `(K f)([x, h]) = |det h|^-1 int k(h^-1 (z - x)) f(z) dz`.
//!
//! Lifted signals are stored on the product of a spatial grid and a
//! [`QuadratureChart`], group node major: `values[n * S + i]` is the value at
//! `[x_i, A_n]` with `S` the number of spatial nodes.

use num_complex::Complex64;
use rayon::prelude::*;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::affine::{AffineElement, Mat2};
use crate::error::{Error, Result};
use crate::haar::{chart_quadrature, parse_key_values, QuadratureChart};
use crate::signal::{Fft2, Grid2, GridGeometry};

const MAGIC: &str = "affgroup-lifted 1";

/// Refinement of the spatial lattice used when re-lifting a shifted planar source.
pub const RELIFT_SUPERSAMPLE: usize = 2;

/// Planar input and lifting kernel a lifted signal was computed from. The stored
/// function is `rho(shift) K f`, i.e. `g -> (K f)(shift^-1 g)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftSource {
    pub signal: Grid2,
    pub kernel: Grid2,
    pub shift_inv: AffineElement,
}

impl LiftSource {
    pub fn eval(&self, g: &AffineElement) -> f64 {
        lift_at(&self.signal, &self.kernel, &self.shift_inv.compose(g))
    }
}

/// Samples of a function on `G2` over a spatial grid times a group chart.
#[derive(Clone, Debug)]
pub struct LiftedSignal {
    spatial: GridGeometry,
    chart: QuadratureChart,
    values: Vec<f64>,
    source: Option<Arc<LiftSource>>,
}

impl PartialEq for LiftedSignal {
    fn eq(&self, other: &Self) -> bool {
        self.spatial == other.spatial && self.chart == other.chart && self.values == other.values
    }
}

impl LiftedSignal {
    pub fn new(spatial: GridGeometry, chart: QuadratureChart, values: Vec<f64>) -> Result<Self> {
        if values.len() != spatial.len() * chart.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} spatial x {} group nodes",
                values.len(),
                spatial.len(),
                chart.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(format!("lifted value {i}")));
        }
        Ok(LiftedSignal { spatial, chart, values, source: None })
    }

    pub fn zeros(spatial: GridGeometry, chart: QuadratureChart) -> Self {
        LiftedSignal { values: vec![0.0; spatial.len() * chart.len()], spatial, chart, source: None }
    }

    /// Evaluates `f` at every node `[x_i, A_n]`.
    pub fn from_fn<F>(spatial: GridGeometry, chart: QuadratureChart, f: F) -> Result<Self>
    where
        F: Fn(&AffineElement) -> f64 + Sync,
    {
        let s = spatial.len();
        let mut values = vec![0.0; s * chart.len()];
        values.par_chunks_mut(s).enumerate().try_for_each(|(n, fiber)| -> Result<()> {
            let a = chart.matrix(n);
            for (i, v) in fiber.iter_mut().enumerate() {
                *v = f(&AffineElement::new(spatial.position_of(i), a)?);
            }
            Ok(())
        })?;
        Self::new(spatial, chart, values)
    }

    pub fn spatial(&self) -> &GridGeometry {
        &self.spatial
    }

    pub fn chart(&self) -> &QuadratureChart {
        &self.chart
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> Option<&LiftSource> {
        self.source.as_deref()
    }

    /// Drops the planar source so that off-node evaluation uses the stored samples.
    pub fn without_source(mut self) -> Self {
        self.source = None;
        self
    }

    pub fn fiber(&self, n: usize) -> &[f64] {
        let s = self.spatial.len();
        &self.values[n * s..(n + 1) * s]
    }

    pub fn value(&self, n: usize, i: usize) -> f64 {
        self.values[n * self.spatial.len() + i]
    }

    pub fn check_compatible(&self, other: &LiftedSignal) -> Result<()> {
        self.spatial.check_same(&other.spatial)?;
        if self.chart != other.chart {
            return Err(Error::ChartMismatch(format!("{} vs {}", self.chart, other.chart)));
        }
        Ok(())
    }

    fn combine(&self, other: &LiftedSignal, f: impl Fn(f64, f64) -> f64) -> Result<LiftedSignal> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(LiftedSignal { spatial: self.spatial, chart: self.chart, values, source: None })
    }

    pub fn sub(&self, other: &LiftedSignal) -> Result<LiftedSignal> {
        self.combine(other, |a, b| a - b)
    }

    pub fn add(&self, other: &LiftedSignal) -> Result<LiftedSignal> {
        self.combine(other, |a, b| a + b)
    }

    pub fn scale(&self, k: f64) -> LiftedSignal {
        LiftedSignal {
            spatial: self.spatial,
            chart: self.chart,
            values: self.values.iter().map(|v| v * k).collect(),
            source: None,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `int_G2 |F| d mu_G2` on the chart.
    pub fn l1_norm(&self) -> f64 {
        let area = self.spatial.cell_area();
        chart_quadrature(&self.chart, |n| {
            let s: f64 = self.fiber(n).iter().map(|v| v.abs()).sum();
            s * area / self.chart.matrix(n).det().abs()
        })
        .expect("finite by construction")
        .value
    }

    /// `int_G2 F d mu_G2` on the chart.
    pub fn integral(&self) -> f64 {
        let area = self.spatial.cell_area();
        chart_quadrature(&self.chart, |n| {
            let s: f64 = self.fiber(n).iter().sum();
            s * area / self.chart.matrix(n).det().abs()
        })
        .expect("finite by construction")
        .value
    }

    /// Value at an arbitrary group element. With a planar source the lift is
    /// recomputed exactly; otherwise the fiber of the chart cell containing `A`
    /// (same sign of `v`) is interpolated bilinearly in `x`, and the value is zero
    /// outside the chart.
    pub fn eval_at(&self, g: &AffineElement) -> f64 {
        if let Some(src) = &self.source {
            return src.eval(g);
        }
        match self.chart.nearest_node_of(&g.matrix()) {
            Some(n) => sample_fiber(&self.spatial, self.fiber(n), g.x()),
            None => 0.0,
        }
    }

    /// `(rho(g) F)(n) = F(g^-1 n)` on the same nodes.
    ///
    /// With a planar source this uses `rho(g) K f = K(rho(g) f)`: the shifted planar
    /// signal is resampled on a lattice `RELIFT_SUPERSAMPLE` times finer than the
    /// spatial grid and lifted again. Without a source the nearest chart fiber is
    /// interpolated, as in [`LiftedSignal::eval_at`].
    pub fn translate(&self, g: &AffineElement) -> Result<LiftedSignal> {
        let gi = g.invert()?;
        let Some(src) = &self.source else {
            return LiftedSignal::from_fn(self.spatial, self.chart, |n| self.eval_at(&gi.compose(n)));
        };
        let shift_inv = src.shift_inv.compose(&gi);
        let window = lift_window(&src.kernel, &self.spatial, &self.chart);
        let planar = resample_shifted(&src.signal, &shift_inv, &self.spatial, RELIFT_SUPERSAMPLE, Some(window))?;
        let mut out = lift(&planar, &src.kernel, &self.spatial, &self.chart)?;
        out.source = Some(Arc::new(LiftSource { signal: src.signal.clone(), kernel: src.kernel.clone(), shift_inv }));
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.spatial;
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "spatial.height={}", g.height)?;
        writeln!(w, "spatial.width={}", g.width)?;
        writeln!(w, "spatial.origin_x={:?}", g.origin[0])?;
        writeln!(w, "spatial.origin_y={:?}", g.origin[1])?;
        writeln!(w, "spatial.spacing={:?}", g.spacing)?;
        write!(w, "{}", self.chart.to_config())?;
        writeln!(w, "axes=rho,theta,u,w,sign,x-row,x-col")?;
        writeln!(w, "END")?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = String::new();
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(Error::Parse("not a lifted-signal file".into()));
        }
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Parse("lifted-signal header is missing END".into()));
            }
            if line.trim_end() == "END" {
                break;
            }
            header.push_str(&line);
        }
        let map = parse_key_values(&header)?;
        let get = |k: &str| map.get(k).ok_or_else(|| Error::Parse(format!("missing header key {k}")));
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Parse(format!("bad {k}"))) };
        let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Parse(format!("bad {k}"))) };
        let spatial = GridGeometry::new(
            int("spatial.height")?,
            int("spatial.width")?,
            [real("spatial.origin_x")?, real("spatial.origin_y")?],
            real("spatial.spacing")?,
        )?;
        let mut chart = QuadratureChart::default();
        chart.apply_config(&map)?;
        for k in map.keys() {
            if !(k.starts_with("spatial.") || k == "axes" || crate::haar::is_chart_key(k)) {
                return Err(Error::Parse(format!("unknown header key {k}")));
            }
        }
        let n = spatial.len() * chart.len();
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n * 8 {
            return Err(Error::ShapeMismatch(format!("payload has {} bytes, expected {}", bytes.len(), n * 8)));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Self::new(spatial, chart, values)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Bilinear interpolation of one fiber over the spatial grid, zero outside.
pub fn sample_fiber(spatial: &GridGeometry, fiber: &[f64], x: [f64; 2]) -> f64 {
    let [fx, fy] = spatial.fractional(x);
    let wmax = (spatial.width - 1) as f64;
    let hmax = (spatial.height - 1) as f64;
    if !(fx >= -1e-9 && fx <= wmax + 1e-9 && fy >= -1e-9 && fy <= hmax + 1e-9) {
        return 0.0;
    }
    let fx = fx.clamp(0.0, wmax);
    let fy = fy.clamp(0.0, hmax);
    let cell = |f: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let i = (f.floor() as usize).min(n - 2);
        (i, i + 1, f - i as f64)
    };
    let (j0, j1, tx) = cell(fx, spatial.width);
    let (i0, i1, ty) = cell(fy, spatial.height);
    let w = spatial.width;
    let top = (1.0 - tx) * fiber[i0 * w + j0] + tx * fiber[i0 * w + j1];
    let bot = (1.0 - tx) * fiber[i1 * w + j0] + tx * fiber[i1 * w + j1];
    (1.0 - ty) * top + ty * bot
}

/// Box `[lo, hi]` of planar points read by a lift with kernel `k` onto `spatial x chart`.
pub fn lift_window(k: &Grid2, spatial: &GridGeometry, chart: &QuadratureChart) -> [[f64; 2]; 2] {
    let kg = k.geometry();
    let kc = [kg.origin, kg.position(kg.height - 1, kg.width - 1)];
    let mut lo = spatial.origin;
    let mut hi = spatial.position(spatial.height - 1, spatial.width - 1);
    let mut reach_lo = [0.0f64; 2];
    let mut reach_hi = [0.0f64; 2];
    for n in 0..chart.len() {
        let a = chart.matrix(n);
        for cx in [kc[0][0], kc[1][0]] {
            for cy in [kc[0][1], kc[1][1]] {
                let p = a.mul_vec([cx, cy]);
                for d in 0..2 {
                    reach_lo[d] = reach_lo[d].min(p[d]);
                    reach_hi[d] = reach_hi[d].max(p[d]);
                }
            }
        }
    }
    for d in 0..2 {
        lo[d] += reach_lo[d];
        hi[d] += reach_hi[d];
    }
    [lo, hi]
}

/// `x -> f(shift_inv x)` sampled on the lattice of `spatial` refined `supersample`
/// times, extended to cover the image of `f`'s domain and clipped to `window` if
/// given. Pure translations move the origin of `f` instead and are exact.
pub fn resample_shifted(
    f: &Grid2,
    shift_inv: &AffineElement,
    spatial: &GridGeometry,
    supersample: usize,
    window: Option<[[f64; 2]; 2]>,
) -> Result<Grid2> {
    let shift = shift_inv.invert()?;
    if shift.matrix() == Mat2::IDENTITY {
        let t = shift.x();
        let g = f.geometry();
        let geom = GridGeometry::new(g.height, g.width, [g.origin[0] + t[0], g.origin[1] + t[1]], g.spacing)?;
        return Grid2::new(geom, f.values().to_vec());
    }
    let fg = f.geometry();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in [fg.origin, fg.position(0, fg.width - 1), fg.position(fg.height - 1, 0), fg.position(fg.height - 1, fg.width - 1)] {
        let q = shift.apply(p);
        for d in 0..2 {
            lo[d] = lo[d].min(q[d]);
            hi[d] = hi[d].max(q[d]);
        }
    }
    if let Some([wlo, whi]) = window {
        for d in 0..2 {
            lo[d] = lo[d].max(wlo[d]);
            hi[d] = hi[d].min(whi[d]);
        }
        if lo[0] > hi[0] || lo[1] > hi[1] {
            return Ok(Grid2::zeros(GridGeometry::new(1, 1, spatial.origin, spatial.spacing)?));
        }
    }
    let step = spatial.spacing / supersample.max(1) as f64;
    let first = |d: usize| spatial.origin[d] + ((lo[d] - spatial.origin[d]) / step).floor() * step;
    let start = [first(0), first(1)];
    let nx = ((hi[0] - start[0]) / step).ceil() as usize + 1;
    let ny = ((hi[1] - start[1]) / step).ceil() as usize + 1;
    let geom = GridGeometry::new(ny, nx, start, step)?;
    Ok(Grid2::from_fn(geom, |x, y| f.sample(shift_inv.apply([x, y]))))
}

/// Index range of `f`'s nodes along one axis whose coordinate lies in `[lo, hi]`.
fn node_range(lo: f64, hi: f64, origin: f64, spacing: f64, n: usize) -> Option<(usize, usize)> {
    let a = ((lo - origin) / spacing - 1e-9).ceil().max(0.0);
    let b = ((hi - origin) / spacing + 1e-9).floor().min(n as f64 - 1.0);
    if a > b {
        None
    } else {
        Some((a as usize, b as usize))
    }
}

/// Direct quadrature of the lifting integral at one group element.
pub fn lift_at(f: &Grid2, k: &Grid2, g: &AffineElement) -> f64 {
    let a = g.matrix();
    let Ok(ainv) = a.inverse() else {
        return 0.0;
    };
    let x = g.x();
    let kg = k.geometry();
    let k0 = kg.origin;
    let k1 = kg.position(kg.height - 1, kg.width - 1);
    // Bounding box of x + A [k0, k1].
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for cx in [k0[0], k1[0]] {
        for cy in [k0[1], k1[1]] {
            let p = a.mul_vec([cx, cy]);
            for d in 0..2 {
                lo[d] = lo[d].min(x[d] + p[d]);
                hi[d] = hi[d].max(x[d] + p[d]);
            }
        }
    }
    let fg = f.geometry();
    let Some((c0, c1)) = node_range(lo[0], hi[0], fg.origin[0], fg.spacing, fg.width) else {
        return 0.0;
    };
    let Some((r0, r1)) = node_range(lo[1], hi[1], fg.origin[1], fg.spacing, fg.height) else {
        return 0.0;
    };
    let mut sum = 0.0;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let fv = f.get(r, c);
            if fv == 0.0 {
                continue;
            }
            let p = fg.position(r, c);
            let z = ainv.mul_vec([p[0] - x[0], p[1] - x[1]]);
            sum += k.sample(z) * fv;
        }
    }
    sum * fg.cell_area() / a.det().abs()
}

/// Integer `m` with `spatial.spacing = m * f.spacing`, when the spatial nodes lie on
/// the lattice of `f`.
fn lattice_stride(f: &GridGeometry, s: &GridGeometry) -> Option<usize> {
    let m = s.spacing / f.spacing;
    if (m - m.round()).abs() > 1e-9 || m.round() < 1.0 {
        return None;
    }
    for d in 0..2 {
        let q = (s.origin[d] - f.origin[d]) / f.spacing;
        if (q - q.round()).abs() > 1e-9 {
            return None;
        }
    }
    Some(m.round() as usize)
}

/// Lifts `f` with kernel `k` onto `spatial x chart`.
///
/// When the spatial nodes lie on the lattice of `f` each fiber is a discrete
/// cross-correlation and is computed with one FFT pair per group node; the sums
/// are the same as in [`lift_at`] up to round-off.
pub fn lift(f: &Grid2, k: &Grid2, spatial: &GridGeometry, chart: &QuadratureChart) -> Result<LiftedSignal> {
    let s = spatial.len();
    let mut values = vec![0.0; s * chart.len()];
    match lattice_stride(f.geometry(), spatial) {
        Some(m) => lift_fft(f, k, spatial, m, chart, &mut values),
        None => values.par_chunks_mut(s).enumerate().for_each(|(n, fiber)| {
            let a = chart.matrix(n);
            for (i, v) in fiber.iter_mut().enumerate() {
                let g = AffineElement::new(spatial.position_of(i), a).expect("chart nodes are invertible");
                *v = lift_at(f, k, &g);
            }
        }),
    }
    let mut out = LiftedSignal::new(*spatial, *chart, values)?;
    out.source =
        Some(Arc::new(LiftSource { signal: f.clone(), kernel: k.clone(), shift_inv: AffineElement::identity() }));
    Ok(out)
}

fn lift_fft(f: &Grid2, k: &Grid2, spatial: &GridGeometry, stride: usize, chart: &QuadratureChart, values: &mut [f64]) {
    let fg = *f.geometry();
    let h = fg.spacing;
    // Output nodes as a sub-lattice of a grid with the spacing of `f`.
    let sh = (spatial.height - 1) * stride + 1;
    let sw = (spatial.width - 1) * stride + 1;
    let py = (fg.height + sh - 1).next_power_of_two();
    let px = (fg.width + sw - 1).next_power_of_two();
    let plan = Fft2::new(py, px);
    let mut fhat = vec![Complex64::new(0.0, 0.0); py * px];
    for r in 0..fg.height {
        for c in 0..fg.width {
            fhat[r * px + c] = Complex64::new(f.get(r, c), 0.0);
        }
    }
    plan.forward(&mut fhat);
    let d0 = [fg.origin[0] - spatial.origin[0], fg.origin[1] - spatial.origin[1]];
    let norm = h * h / (py * px) as f64;
    let kg = *k.geometry();
    let kc = [kg.origin, kg.position(kg.height - 1, kg.width - 1)];
    let s = spatial.len();
    values.par_chunks_mut(s).enumerate().for_each(|(n, fiber)| {
        let a = chart.matrix(n);
        let ainv = a.inverse().expect("chart nodes are invertible");
        // Offsets z - x = d0 + m h with m in [-(S-1), F-1] per axis, clipped to the warped kernel support.
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for cx in [kc[0][0], kc[1][0]] {
            for cy in [kc[0][1], kc[1][1]] {
                let p = a.mul_vec([cx, cy]);
                for d in 0..2 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
        }
        let mlo = |d: usize, smax: usize| (((lo[d] - d0[d]) / h - 1e-9).ceil() as i64).max(-(smax as i64 - 1));
        let mhi = |d: usize, fmax: usize| (((hi[d] - d0[d]) / h + 1e-9).floor() as i64).min(fmax as i64 - 1);
        let (mx0, mx1) = (mlo(0, sw), mhi(0, fg.width));
        let (my0, my1) = (mlo(1, sh), mhi(1, fg.height));
        if mx0 > mx1 || my0 > my1 {
            fiber.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); py * px];
        for my in my0..=my1 {
            let row = my.rem_euclid(py as i64) as usize;
            for mx in mx0..=mx1 {
                let col = mx.rem_euclid(px as i64) as usize;
                let off = [d0[0] + mx as f64 * h, d0[1] + my as f64 * h];
                buf[row * px + col] = Complex64::new(k.sample(ainv.mul_vec(off)), 0.0);
            }
        }
        plan.forward(&mut buf);
        for (b, fh) in buf.iter_mut().zip(&fhat) {
            *b = fh * b.conj();
        }
        plan.inverse(&mut buf);
        let scale = norm / a.det().abs();
        for r in 0..spatial.height {
            for c in 0..spatial.width {
                fiber[r * spatial.width + c] = buf[r * stride * px + c * stride].re * scale;
            }
        }
    });
}

/// `sup_x |f1(x) - f2(g x)|`, measured on `f1`'s lattice refined `supersample` times
/// and extended to cover the preimage under `g` of `f2`'s support.
pub fn sup_deviation(f1: &Grid2, f2: &Grid2, g: &AffineElement, supersample: usize) -> Result<f64> {
    let gi = g.invert()?;
    let g1 = f1.geometry();
    let g2 = f2.geometry();
    let mut lo = g1.origin;
    let mut hi = g1.position(g1.height - 1, g1.width - 1);
    let c0 = g2.origin;
    let c1 = g2.position(g2.height - 1, g2.width - 1);
    for cx in [c0[0], c1[0]] {
        for cy in [c0[1], c1[1]] {
            let p = gi.apply([cx, cy]);
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
    }
    let step = g1.spacing / supersample.max(1) as f64;
    // Keep f1's own nodes on the evaluation lattice.
    let start = [
        g1.origin[0] - ((g1.origin[0] - lo[0]) / step).ceil() * step,
        g1.origin[1] - ((g1.origin[1] - lo[1]) / step).ceil() * step,
    ];
    let nx = ((hi[0] - start[0]) / step).floor() as usize + 1;
    let ny = ((hi[1] - start[1]) / step).floor() as usize + 1;
    let rows: Vec<f64> = (0..ny)
        .into_par_iter()
        .map(|r| {
            let y = start[1] + r as f64 * step;
            (0..nx).fold(0.0f64, |m, c| {
                let x = start[0] + c as f64 * step;
                m.max((f1.sample([x, y]) - f2.sample(g.apply([x, y]))).abs())
            })
        })
        .collect();
    Ok(rows.into_iter().fold(0.0, f64::max))
}

/// Theorem-1 style comparison of two lifts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftDeviation {
    /// `max_n |K f1(n) - K f2(g n)|` over the nodes of the lifted grid.
    pub lhs: f64,
    /// `eps_hat * ||k||_1`.
    pub bound: f64,
    pub epsilon_hat: f64,
    pub kernel_l1: f64,
}

/// Compares `K f1` with `rho(g^-1) K f2` on `spatial x chart`; `K f2` is evaluated
/// directly at the shifted nodes `g n`.
pub fn lift_invariance_deviation(
    f1: &Grid2,
    f2: &Grid2,
    g: &AffineElement,
    k: &Grid2,
    spatial: &GridGeometry,
    chart: &QuadratureChart,
    supersample: usize,
) -> Result<LiftDeviation> {
    f1.geometry().check_same(f2.geometry())?;
    let lifted = lift(f1, k, spatial, chart)?;
    let s = spatial.len();
    let per_node: Vec<f64> = (0..chart.len())
        .into_par_iter()
        .map(|n| {
            let a = chart.matrix(n);
            let fiber = lifted.fiber(n);
            (0..s).fold(0.0f64, |m, i| {
                let node = AffineElement::new(spatial.position_of(i), a).expect("chart nodes are invertible");
                m.max((fiber[i] - lift_at(f2, k, &g.compose(&node))).abs())
            })
        })
        .collect();
    let lhs = per_node.into_iter().fold(0.0, f64::max);
    let epsilon_hat = sup_deviation(f1, f2, g, supersample)?;
    let kernel_l1 = k.l1_norm();
    Ok(LiftDeviation { lhs, bound: epsilon_hat * kernel_l1, epsilon_hat, kernel_l1 })
}

/// Isotropic Gaussian kernel `exp(-|x|^2 / (2 sigma^2))` on a centered square grid
/// reaching `radius` (in units of sigma) from the origin.
pub fn gaussian_kernel(sigma: f64, spacing: f64, radius: f64) -> Result<Grid2> {
    let half = (radius * sigma / spacing).ceil() as usize;
    let geom = GridGeometry::centered(2 * half + 1, 2 * half + 1, spacing)?;
    Ok(Grid2::from_fn(geom, |x, y| (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()))
}

/// Same as [`gaussian_kernel`] but normalized to unit integral.
pub fn normalized_gaussian_kernel(sigma: f64, spacing: f64, radius: f64) -> Result<Grid2> {
    let k = gaussian_kernel(sigma, spacing, radius)?;
    let s = k.integral();
    Ok(k.scale(1.0 / s))
}

/// `sup |K f| <= ||k||_1 sup |f| / min |det h|` over the chart.
pub fn lift_sup_bound(f: &Grid2, k: &Grid2, chart: &QuadratureChart) -> f64 {
    let min_det = (0..chart.len()).map(|n| chart.matrix(n).det().abs()).fold(f64::INFINITY, f64::min);
    k.l1_norm() * f.sup_norm() / min_det
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::Mat2;
    use std::f64::consts::PI;

    fn chart() -> QuadratureChart {
        QuadratureChart::new([-0.4, 0.4], [0.0, 2.0 * PI], [-0.5, 0.5], [-0.4, 0.4], [2, 4, 3, 2]).unwrap()
    }

    fn blob(geom: GridGeometry) -> Grid2 {
        Grid2::from_fn(geom, |x, y| {
            (-((x - 1.0).powi(2) + (y + 0.5).powi(2)) / 6.0).exp() + 0.5 * (-((x + 2.0).powi(2) + y * y) / 3.0).exp()
        })
    }

    #[test]
    fn fft_path_matches_direct_sum() {
        let geom = GridGeometry::centered(12, 10, 1.0).unwrap();
        let f = blob(geom);
        let k = gaussian_kernel(1.2, 1.0, 3.0).unwrap();
        let c = chart();
        let fast = lift(&f, &k, &geom, &c).unwrap();
        for n in 0..c.len() {
            let a = c.matrix(n);
            for i in 0..geom.len() {
                let g = AffineElement::new(geom.position_of(i), a).unwrap();
                let direct = lift_at(&f, &k, &g);
                assert!((fast.value(n, i) - direct).abs() < 1e-12, "{n} {i}");
            }
        }
    }

    #[test]
    fn shifted_spatial_lattice_uses_same_sums() {
        let geom = GridGeometry::centered(10, 10, 1.0).unwrap();
        let spatial = GridGeometry::new(6, 7, [-2.5, -1.5], 1.0).unwrap();
        let f = blob(geom);
        let k = gaussian_kernel(1.0, 1.0, 3.0).unwrap();
        let c = chart();
        let fast = lift(&f, &k, &spatial, &c).unwrap();
        let off = GridGeometry::new(6, 7, [-2.25, -1.5], 1.0).unwrap();
        let slow = lift(&f, &k, &off, &c).unwrap();
        for n in [0, 7, c.len() - 1] {
            let a = c.matrix(n);
            for i in 0..spatial.len() {
                let g = AffineElement::new(spatial.position_of(i), a).unwrap();
                assert!((fast.value(n, i) - lift_at(&f, &k, &g)).abs() < 1e-12);
                let g = AffineElement::new(off.position_of(i), a).unwrap();
                assert_eq!(slow.value(n, i), lift_at(&f, &k, &g));
            }
        }
    }

    #[test]
    fn identity_fiber_is_planar_correlation() {
        let geom = GridGeometry::centered(9, 9, 0.5).unwrap();
        let f = blob(geom);
        let k = gaussian_kernel(0.6, 0.5, 3.0).unwrap();
        for &x in &[[0.0, 0.0], [1.0, -0.5], [-1.5, 2.0]] {
            let v = lift_at(&f, &k, &AffineElement::translation(x));
            let mut corr = 0.0;
            for i in 0..geom.len() {
                let p = geom.position_of(i);
                corr += k.sample([p[0] - x[0], p[1] - x[1]]) * f.values()[i];
            }
            assert!((v - corr * 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_signal_lifts_to_zero() {
        let geom = GridGeometry::centered(6, 6, 1.0).unwrap();
        let k = gaussian_kernel(1.0, 1.0, 3.0).unwrap();
        let out = lift(&Grid2::zeros(geom), &k, &geom, &chart()).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linearity() {
        let geom = GridGeometry::centered(8, 8, 1.0).unwrap();
        let f1 = blob(geom);
        let f2 = Grid2::from_fn(geom, |x, y| (x * 0.3).sin() * (-(y * y) / 4.0).exp());
        let k = gaussian_kernel(1.0, 1.0, 3.0).unwrap();
        let c = chart();
        let mix = f1.scale(2.0).add(&f2.scale(-0.5)).unwrap();
        let lhs = lift(&mix, &k, &geom, &c).unwrap();
        let rhs = lift(&f1, &k, &geom, &c).unwrap().scale(2.0).add(&lift(&f2, &k, &geom, &c).unwrap().scale(-0.5)).unwrap();
        let err = lhs.sub(&rhs).unwrap().sup_norm();
        assert!(err < 1e-12 * lhs.sup_norm());
    }

    #[test]
    fn sup_bound_holds() {
        let geom = GridGeometry::centered(10, 10, 1.0).unwrap();
        let f = blob(geom);
        let k = gaussian_kernel(1.0, 1.0, 3.0).unwrap();
        let c = chart();
        let out = lift(&f, &k, &geom, &c).unwrap();
        assert!(out.sup_norm() <= lift_sup_bound(&f, &k, &c));
    }

    #[test]
    fn pure_translation_gives_zero_deviation() {
        let geom = GridGeometry::centered(14, 14, 1.0).unwrap();
        let f1 = Grid2::from_fn(geom, |x, y| (-(x * x + y * y) / 4.0).exp());
        let g = AffineElement::translation([1.0, 0.0]);
        let f2 = f1.act(&g).unwrap();
        let k = gaussian_kernel(1.0, 1.0, 3.0).unwrap();
        let spatial = GridGeometry::centered(4, 4, 1.0).unwrap();
        let d = lift_invariance_deviation(&f1, &f2, &g, &k, &spatial, &chart(), 1).unwrap();
        assert!(d.epsilon_hat < 1e-3, "{:?}", d);
        assert!(d.lhs <= d.bound * 1.05 + 1e-9, "{:?}", d);

        let d2 = lift_invariance_deviation(&f1, &f2, &g, &k.scale(2.0), &spatial, &chart(), 1).unwrap();
        assert!((d2.bound - 2.0 * d.bound).abs() <= 1e-12 * d2.bound.max(1e-300));
        assert!((d2.lhs - 2.0 * d.lhs).abs() <= 1e-12 + 1e-12 * d2.lhs);
    }

    #[test]
    fn eval_at_uses_source_or_nearest_node() {
        let geom = GridGeometry::centered(8, 8, 1.0).unwrap();
        let f = blob(geom);
        let k = gaussian_kernel(1.0, 1.0, 3.0).unwrap();
        let c = chart();
        let lifted = lift(&f, &k, &geom, &c).unwrap();
        let node = AffineElement::new(geom.position_of(10), c.matrix(5)).unwrap();
        assert!((lifted.eval_at(&node) - lifted.value(5, 10)).abs() < 1e-12);
        let stored = lifted.clone().without_source();
        assert_eq!(stored.eval_at(&node), lifted.value(5, 10));
        let far = AffineElement::new([0.0, 0.0], Mat2::scalar(50.0)).unwrap();
        assert_eq!(stored.eval_at(&far), 0.0);
    }

    #[test]
    fn translate_matches_lift_of_moved_signal() {
        let geom = GridGeometry::centered(11, 11, 1.0).unwrap();
        let f = blob(GridGeometry::centered(21, 21, 0.5).unwrap());
        let k = gaussian_kernel(1.0, 0.25, 3.0).unwrap();
        let c = chart();
        let g = AffineElement::new([0.5, -0.25], Mat2::rotation(0.3)).unwrap();
        let lifted = lift(&f, &k, &geom, &c).unwrap();
        let moved = lifted.translate(&g).unwrap();
        // The re-lift resamples f; the exact value samples the warped kernel instead.
        let mut worst = 0.0f64;
        for n in 0..c.len() {
            for i in 0..geom.len() {
                let node = AffineElement::new(geom.position_of(i), c.matrix(n)).unwrap();
                let want = lift_at(&f, &k, &g.invert().unwrap().compose(&node));
                worst = worst.max((moved.value(n, i) - want).abs());
                if n % 7 == 0 && i % 13 == 0 {
                    assert!((moved.eval_at(&node) - want).abs() < 1e-12);
                }
            }
        }
        assert!(worst < 2e-2 * lifted.sup_norm(), "{worst} vs {}", lifted.sup_norm());
        let back = moved.translate(&g.invert().unwrap()).unwrap();
        assert!(back.sub(&lifted).unwrap().sup_norm() < 2e-2 * lifted.sup_norm());
    }

    #[test]
    fn clipping_to_the_lift_window_changes_nothing() {
        let geom = GridGeometry::centered(7, 7, 1.0).unwrap();
        let f = blob(GridGeometry::centered(41, 41, 0.5).unwrap());
        let k = gaussian_kernel(0.8, 0.25, 3.0).unwrap();
        let c = chart();
        let shift = AffineElement::new([0.3, 0.1], Mat2::new(1.2, 0.3, -0.1, 0.9)).unwrap().invert().unwrap();
        let full = resample_shifted(&f, &shift, &geom, 2, None).unwrap();
        let clipped = resample_shifted(&f, &shift, &geom, 2, Some(lift_window(&k, &geom, &c))).unwrap();
        assert!(clipped.values().len() < full.values().len());
        let a = lift(&full, &k, &geom, &c).unwrap();
        let b = lift(&clipped, &k, &geom, &c).unwrap();
        assert!(a.sub(&b).unwrap().sup_norm() < 1e-12 * a.sup_norm());
    }

    #[test]
    fn strided_fft_lift_matches_direct_sum() {
        let fine = GridGeometry::new(19, 17, [-4.5, -4.0], 0.5).unwrap();
        let f = blob(fine);
        let k = gaussian_kernel(0.8, 0.5, 3.0).unwrap();
        let spatial = GridGeometry::new(6, 5, [-3.5, -2.0], 1.5).unwrap();
        let c = chart();
        let lifted = lift(&f, &k, &spatial, &c).unwrap();
        for n in [0usize, 17, c.len() - 1] {
            for i in 0..spatial.len() {
                let node = AffineElement::new(spatial.position_of(i), c.matrix(n)).unwrap();
                assert!((lifted.value(n, i) - lift_at(&f, &k, &node)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn binary_round_trip() {
        let geom = GridGeometry::new(3, 4, [0.5, -1.0], 0.25).unwrap();
        let c = chart();
        let lifted = LiftedSignal::from_fn(geom, c, |g| g.x()[0] - 2.0 * g.matrix().det()).unwrap();
        let mut buf = Vec::new();
        lifted.write_to(&mut buf).unwrap();
        let back = LiftedSignal::read_from(&buf[..]).unwrap();
        assert_eq!(back, lifted);
        assert!(LiftedSignal::read_from(&buf[..buf.len() - 3]).is_err());
        assert!(LiftedSignal::read_from(&b"nope\n"[..]).is_err());
    }

    #[test]
    fn delta_limit_recovers_signal() {
        let geom = GridGeometry::centered(41, 41, 0.125).unwrap();
        let f = Grid2::from_fn(geom, |x, y| (-(x * x + 2.0 * y * y)).exp() + 0.3 * x);
        let x: [f64; 2] = [0.3, -0.2];
        let exact = (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp() + 0.3 * x[0];
        let mut last = f64::INFINITY;
        for mult in [2.0, 1.0, 0.5] {
            let k = normalized_gaussian_kernel(mult * 0.125 * 2.0, 0.125, 4.0).unwrap();
            let v = lift_at(&f, &k, &AffineElement::translation(x));
            let err = (v - exact).abs();
            assert!(err < last);
            last = err;
        }
    }
}
