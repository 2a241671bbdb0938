//! Haar-measure quadrature on `G1`, `GL2(R)` and `G2`.
//!
//! `GL2` is parametrized through the Iwasawa chart with `s + i t = e^rho e^{i theta}`
//! and `v = +-e^w`. The Haar measure `da db dc dd / det^2` pulls back to
//! `ds dt du dv / ((s^2 + t^2) |v|)`, which is exactly `d rho d theta du dw` on each
//! sign branch, so every node of the midpoint rule carries the same weight
//! `d rho * d theta * du * dw`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use crate::affine::{AffineElement, ChartPoint, Mat2, Sign, DET_EPSILON};
use crate::error::{Error, Result};
use crate::signal::GridGeometry;
use crate::sum::{pairwise_sum, par_blocks, BLOCK};

/// Fraction of absolute integrand mass on the chart boundary that triggers a warning.
pub const BOUNDARY_MASS_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisKind {
    /// Plain coordinate (`u`, `theta`, `y`).
    Linear,
    /// `rho = log |s + i t|`.
    LogRadial,
    /// `w = log |v|`, carrying both signs of `v`.
    LogSigned,
}

/// A midpoint-rule axis on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartAxis {
    pub kind: AxisKind,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl ChartAxis {
    pub fn new(kind: AxisKind, lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidAxis(format!("bounds must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        if count == 0 {
            return Err(Error::InvalidAxis("count must be at least 1".into()));
        }
        Ok(ChartAxis { kind, lo, hi, count })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.count as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.step()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.node(i)).collect()
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// True when the axis covers a full turn and should wrap.
    pub fn is_periodic(&self) -> bool {
        (self.length() - 2.0 * PI).abs() < 1e-12
    }

    /// Index of the cell containing `x` (wrapping when periodic).
    pub fn locate(&self, x: f64) -> Option<usize> {
        let x = if self.is_periodic() { crate::affine::wrap_angle(x, self.lo) } else { x };
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        Some((((x - self.lo) / self.step()).floor() as usize).min(self.count - 1))
    }

    /// Nearest node index, rounding to the closest midpoint.
    pub fn nearest(&self, x: f64) -> Option<usize> {
        self.locate(x)
    }

    fn with_count(&self, count: usize) -> ChartAxis {
        ChartAxis { count, ..*self }
    }
}

/// Nodes and weights for `d mu_GL2` in log-polar Iwasawa coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureChart {
    pub rho: ChartAxis,
    pub theta: ChartAxis,
    pub u: ChartAxis,
    pub w: ChartAxis,
}

impl Default for QuadratureChart {
    fn default() -> Self {
        QuadratureChart::new([-4.0, 4.0], [0.0, 2.0 * PI], [-8.0, 8.0], [-4.0, 4.0], [32, 32, 64, 32])
            .expect("default chart is valid")
    }
}

impl QuadratureChart {
    /// Bounds for `(rho, theta, u, w)` and counts in the same order.
    pub fn new(rho: [f64; 2], theta: [f64; 2], u: [f64; 2], w: [f64; 2], counts: [usize; 4]) -> Result<Self> {
        Ok(QuadratureChart {
            rho: ChartAxis::new(AxisKind::LogRadial, rho[0], rho[1], counts[0])?,
            theta: ChartAxis::new(AxisKind::Linear, theta[0], theta[1], counts[1])?,
            u: ChartAxis::new(AxisKind::Linear, u[0], u[1], counts[2])?,
            w: ChartAxis::new(AxisKind::LogSigned, w[0], w[1], counts[3])?,
        })
    }

    pub fn counts(&self) -> [usize; 4] {
        [self.rho.count, self.theta.count, self.u.count, self.w.count]
    }

    pub fn with_counts(&self, counts: [usize; 4]) -> Result<Self> {
        if counts.contains(&0) {
            return Err(Error::InvalidAxis("counts must be at least 1".into()));
        }
        Ok(QuadratureChart {
            rho: self.rho.with_count(counts[0]),
            theta: self.theta.with_count(counts[1]),
            u: self.u.with_count(counts[2]),
            w: self.w.with_count(counts[3]),
        })
    }

    /// Number of nodes including both sign branches.
    pub fn len(&self) -> usize {
        self.rho.count * self.theta.count * self.u.count * self.w.count * 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Common weight `d rho d theta du dw` of every node.
    pub fn weight(&self) -> f64 {
        self.rho.step() * self.theta.step() * self.u.step() * self.w.step()
    }

    /// Haar measure of the truncated chart, both branches.
    pub fn total_measure(&self) -> f64 {
        2.0 * self.rho.length() * self.theta.length() * self.u.length() * self.w.length()
    }

    /// Axis indices `(i_rho, i_theta, i_u, i_w, sign)` of node `n`.
    pub fn indices(&self, n: usize) -> [usize; 5] {
        let sign = n % 2;
        let mut r = n / 2;
        let iw = r % self.w.count;
        r /= self.w.count;
        let iu = r % self.u.count;
        r /= self.u.count;
        let it = r % self.theta.count;
        let ir = r / self.theta.count;
        [ir, it, iu, iw, sign]
    }

    pub fn index_of(&self, idx: [usize; 5]) -> usize {
        (((idx[0] * self.theta.count + idx[1]) * self.u.count + idx[2]) * self.w.count + idx[3]) * 2 + idx[4]
    }

    pub fn point(&self, n: usize) -> ChartPoint {
        let [ir, it, iu, iw, sign] = self.indices(n);
        ChartPoint {
            rho: self.rho.node(ir),
            theta: self.theta.node(it),
            u: self.u.node(iu),
            w: self.w.node(iw),
            sign: if sign == 0 { Sign::Positive } else { Sign::Negative },
        }
    }

    pub fn matrix(&self, n: usize) -> Mat2 {
        self.point(n).matrix()
    }

    pub fn matrices(&self) -> Vec<Mat2> {
        (0..self.len()).map(|n| self.matrix(n)).collect()
    }

    /// True for nodes in the outermost layer of a non-periodic axis.
    pub fn is_boundary(&self, n: usize) -> bool {
        let [ir, it, iu, iw, _] = self.indices(n);
        let edge = |i: usize, a: &ChartAxis| !a.is_periodic() && (i == 0 || i + 1 == a.count);
        edge(ir, &self.rho) || edge(it, &self.theta) || edge(iu, &self.u) || edge(iw, &self.w)
    }

    /// Node whose cell contains `p`, or `None` outside the chart.
    pub fn nearest_node(&self, p: &ChartPoint) -> Option<usize> {
        Some(self.index_of([
            self.rho.nearest(p.rho)?,
            self.theta.nearest(p.theta)?,
            self.u.nearest(p.u)?,
            self.w.nearest(p.w)?,
            p.sign.index(),
        ]))
    }

    /// Node whose cell contains `A`, or `None` outside the chart.
    pub fn nearest_node_of(&self, a: &Mat2) -> Option<usize> {
        let f = crate::affine::iwasawa(a).ok()?;
        self.nearest_node(&f.to_log_polar())
    }

    /// Parses `key=value` lines with keys `{rho,theta,u,w}.{lo,hi,count}`; missing
    /// keys keep their default values, unknown keys are rejected.
    pub fn from_config(text: &str) -> Result<Self> {
        let map = parse_key_values(text)?;
        let mut chart = QuadratureChart::default();
        chart.apply_config(&map)?;
        if let Some(k) = map.keys().find(|k| !is_chart_key(k)) {
            return Err(Error::Config(format!("unknown chart key {k:?}")));
        }
        Ok(chart)
    }

    /// Applies the chart keys present in `map`, ignoring all others.
    pub fn apply_config(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in map {
            if !is_chart_key(key) {
                continue;
            }
            let (axis, field) = key.split_once('.').expect("chart keys contain a dot");
            let a = match axis {
                "rho" => &mut self.rho,
                "theta" => &mut self.theta,
                "u" => &mut self.u,
                _ => &mut self.w,
            };
            match field {
                "lo" => a.lo = parse_real(key, value)?,
                "hi" => a.hi = parse_real(key, value)?,
                _ => a.count = value.parse().map_err(|_| Error::Config(format!("{key}: bad count {value:?}")))?,
            }
        }
        for a in [&self.rho, &self.theta, &self.u, &self.w] {
            ChartAxis::new(a.kind, a.lo, a.hi, a.count)?;
        }
        Ok(())
    }

    pub fn to_config(&self) -> String {
        let mut s = String::new();
        for (name, a) in [("rho", &self.rho), ("theta", &self.theta), ("u", &self.u), ("w", &self.w)] {
            s.push_str(&format!("{name}.lo={:?}\n{name}.hi={:?}\n{name}.count={}\n", a.lo, a.hi, a.count));
        }
        s
    }
}

impl fmt::Display for QuadratureChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rho[{}, {}]x{} theta[{}, {}]x{} u[{}, {}]x{} w[{}, {}]x{} x2",
            self.rho.lo,
            self.rho.hi,
            self.rho.count,
            self.theta.lo,
            self.theta.hi,
            self.theta.count,
            self.u.lo,
            self.u.hi,
            self.u.count,
            self.w.lo,
            self.w.hi,
            self.w.count
        )
    }
}

pub fn is_chart_key(key: &str) -> bool {
    match key.split_once('.') {
        Some((axis, field)) => {
            matches!(axis, "rho" | "theta" | "u" | "w") && matches!(field, "lo" | "hi" | "count")
        }
        None => false,
    }
}

fn parse_real(key: &str, value: &str) -> Result<f64> {
    let v = value.trim();
    let parsed = match v {
        "pi" => Ok(PI),
        "2pi" => Ok(2.0 * PI),
        "-pi" => Ok(-PI),
        _ => v.parse::<f64>(),
    };
    parsed.map_err(|_| Error::Config(format!("{key}: bad number {value:?}")))
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Value of a quadrature together with diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    /// Sum of `|integrand| * weight`.
    pub abs_mass: f64,
    /// Part of `abs_mass` on boundary nodes.
    pub boundary_mass: f64,
}

impl Quadrature {
    pub fn boundary_fraction(&self) -> f64 {
        if self.abs_mass > 0.0 {
            self.boundary_mass / self.abs_mass
        } else {
            0.0
        }
    }

    fn warn_if_truncated(&self, what: &str) {
        let frac = self.boundary_fraction();
        if frac > BOUNDARY_MASS_TOL {
            log::warn!("{what}: {frac:.3e} of the integrand mass sits on the chart boundary; the chart may be too small");
        }
    }
}

fn reduce(parts: Vec<Result<[f64; 3]>>) -> Result<Quadrature> {
    let mut v = Vec::with_capacity(parts.len());
    let mut a = Vec::with_capacity(parts.len());
    let mut b = Vec::with_capacity(parts.len());
    for p in parts {
        let [x, y, z] = p?;
        v.push(x);
        a.push(y);
        b.push(z);
    }
    Ok(Quadrature { value: pairwise_sum(&v), abs_mass: pairwise_sum(&a), boundary_mass: pairwise_sum(&b) })
}

/// Sums `g(n)` over chart nodes, multiplied by the node weight.
pub fn chart_quadrature<F>(chart: &QuadratureChart, g: F) -> Result<Quadrature>
where
    F: Fn(usize) -> f64 + Sync,
{
    let wgt = chart.weight();
    let parts = par_blocks(chart.len(), BLOCK, |range| {
        let mut vals = Vec::with_capacity(range.len());
        let mut abs = Vec::with_capacity(range.len());
        let mut bnd = 0.0;
        for n in range {
            let y = g(n);
            if !y.is_finite() {
                return Err(Error::NonFiniteSample(format!("chart node {n} ({:?})", chart.point(n))));
            }
            vals.push(y);
            abs.push(y.abs());
            if chart.is_boundary(n) {
                bnd += y.abs();
            }
        }
        Ok([pairwise_sum(&vals) * wgt, pairwise_sum(&abs) * wgt, bnd * wgt])
    });
    reduce(parts)
}

/// `int_GL2 f d mu` with diagnostics.
pub fn integrate_gl2_report<F>(f: F, chart: &QuadratureChart) -> Result<Quadrature>
where
    F: Fn(&Mat2) -> f64 + Sync,
{
    let q = chart_quadrature(chart, |n| f(&chart.matrix(n)))?;
    q.warn_if_truncated("GL2 integral");
    Ok(q)
}

/// `int_GL2 f d mu_GL2` by the midpoint rule on the Iwasawa chart.
pub fn integrate_gl2<F>(f: F, chart: &QuadratureChart) -> Result<f64>
where
    F: Fn(&Mat2) -> f64 + Sync,
{
    Ok(integrate_gl2_report(f, chart)?.value)
}

/// `int_G2 f d mu_G2 = int_GL2 int_R2 f[x, A] dx / |det A| d mu_GL2(A)`, with the
/// spatial integral taken as `spacing^2` times the sum over the nodes of `spatial`.
pub fn integrate_g2<F>(f: F, chart: &QuadratureChart, spatial: &GridGeometry) -> Result<f64>
where
    F: Fn(&AffineElement) -> f64 + Sync,
{
    let area = spatial.cell_area();
    let q = chart_quadrature(chart, |n| {
        let a = chart.matrix(n);
        let inner: Vec<f64> = (0..spatial.len())
            .map(|i| match AffineElement::new(spatial.position_of(i), a) {
                Ok(g) => f(&g),
                Err(_) => f64::NAN,
            })
            .collect();
        pairwise_sum(&inner) * area / a.det().abs()
    })?;
    q.warn_if_truncated("G2 integral");
    Ok(q.value)
}

/// Chart for `G1 = { [y, b] : b != 0 }` with `b = +-e^w`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct G1Chart {
    pub y: ChartAxis,
    pub w: ChartAxis,
}

impl Default for G1Chart {
    fn default() -> Self {
        G1Chart {
            y: ChartAxis::new(AxisKind::Linear, -8.0, 8.0, 128).expect("valid axis"),
            w: ChartAxis::new(AxisKind::LogSigned, -12.0, 3.0, 256).expect("valid axis"),
        }
    }
}

impl G1Chart {
    pub fn with_counts(&self, ny: usize, nw: usize) -> Result<Self> {
        Ok(G1Chart {
            y: ChartAxis::new(AxisKind::Linear, self.y.lo, self.y.hi, ny)?,
            w: ChartAxis::new(AxisKind::LogSigned, self.w.lo, self.w.hi, nw)?,
        })
    }
}

/// `int_G1 f dy db / b^2`. With `b = +-e^w` the measure becomes `e^{-w} dy dw` per branch.
pub fn integrate_g1<F>(f: F, chart: &G1Chart) -> Result<f64>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    let ny = chart.y.count;
    let nw = chart.w.count;
    let wgt = chart.y.step() * chart.w.step();
    let parts = par_blocks(ny * nw * 2, BLOCK, |range| {
        let mut vals = Vec::with_capacity(range.len());
        let mut abs = Vec::with_capacity(range.len());
        let mut bnd = 0.0;
        for n in range {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let iw = (n / 2) % nw;
            let iy = n / 2 / nw;
            let w = chart.w.node(iw);
            let y = chart.y.node(iy);
            let val = f(y, sign * w.exp());
            if !val.is_finite() {
                return Err(Error::NonFiniteSample(format!("G1 node y={y}, b={}", sign * w.exp())));
            }
            let val = val * (-w).exp();
            vals.push(val);
            abs.push(val.abs());
            if iw == 0 || iw + 1 == nw || iy == 0 || iy + 1 == ny {
                bnd += val.abs();
            }
        }
        Ok([pairwise_sum(&vals) * wgt, pairwise_sum(&abs) * wgt, bnd * wgt])
    });
    let q = reduce(parts)?;
    q.warn_if_truncated("G1 integral");
    Ok(q.value)
}

/// Entry-space reference: midpoint rule for `int f(A) da db dc dd / det(A)^2` over a
/// box of matrix entries, skipping cells whose midpoint has `|det| < DET_EPSILON`.
pub fn oracle_gl2<F>(f: F, bounds: [[f64; 2]; 4], counts: [usize; 4]) -> Result<f64>
where
    F: Fn(&Mat2) -> f64 + Sync,
{
    let axes: Vec<ChartAxis> = (0..4)
        .map(|k| ChartAxis::new(AxisKind::Linear, bounds[k][0], bounds[k][1], counts[k]))
        .collect::<Result<_>>()?;
    let wgt: f64 = axes.iter().map(|a| a.step()).product();
    let n = counts.iter().product();
    let parts = par_blocks(n, BLOCK, |range| {
        let mut vals = Vec::with_capacity(range.len());
        for idx in range {
            let id = idx % counts[3];
            let ic = (idx / counts[3]) % counts[2];
            let ib = (idx / counts[3] / counts[2]) % counts[1];
            let ia = idx / counts[3] / counts[2] / counts[1];
            let m = Mat2::new(axes[0].node(ia), axes[1].node(ib), axes[2].node(ic), axes[3].node(id));
            let det = m.det();
            if det.abs() < DET_EPSILON {
                continue;
            }
            let val = f(&m);
            if !val.is_finite() {
                return Err(Error::NonFiniteSample(format!("entry-space node {m}")));
            }
            vals.push(val / (det * det));
        }
        Ok([pairwise_sum(&vals) * wgt, 0.0, 0.0])
    });
    Ok(reduce(parts)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::iwasawa;

    fn small_chart() -> QuadratureChart {
        QuadratureChart::new([-1.0, 1.0], [0.0, 2.0 * PI], [-2.0, 2.0], [-1.0, 1.5], [4, 6, 5, 3]).unwrap()
    }

    #[test]
    fn axis_validation() {
        assert!(ChartAxis::new(AxisKind::Linear, 1.0, 1.0, 3).is_err());
        assert!(ChartAxis::new(AxisKind::Linear, 0.0, 1.0, 0).is_err());
        assert!(ChartAxis::new(AxisKind::Linear, f64::NAN, 1.0, 2).is_err());
        let a = ChartAxis::new(AxisKind::Linear, 0.0, 1.0, 4).unwrap();
        assert_eq!(a.nodes(), vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(a.locate(1.0), Some(3));
        assert_eq!(a.locate(1.01), None);
    }

    #[test]
    fn index_round_trip() {
        let c = small_chart();
        for n in 0..c.len() {
            assert_eq!(c.index_of(c.indices(n)), n);
        }
    }

    #[test]
    fn weights_and_total_measure() {
        let c = small_chart();
        assert!(c.weight() > 0.0);
        let one = integrate_gl2(|_| 1.0, &c).unwrap();
        assert!((one - c.total_measure()).abs() < 1e-12 * c.total_measure());
        assert!((c.total_measure() - 2.0 * 2.0 * 2.0 * PI * 4.0 * 2.5).abs() < 1e-12);
    }

    #[test]
    fn nodes_map_back_to_their_cells() {
        let c = small_chart();
        for n in 0..c.len() {
            assert_eq!(c.nearest_node_of(&c.matrix(n)), Some(n));
        }
        assert_eq!(c.nearest_node_of(&Mat2::scalar(10.0)), None);
    }

    #[test]
    fn theta_wraps() {
        let c = small_chart();
        let p = ChartPoint { rho: 0.0, theta: -0.1, u: 0.0, w: 0.0, sign: Sign::Positive };
        let n = c.nearest_node(&p).unwrap();
        assert_eq!(c.indices(n)[1], 5);
    }

    #[test]
    fn zero_integrands() {
        let c = small_chart();
        assert_eq!(integrate_gl2(|_| 0.0, &c).unwrap(), 0.0);
        let sp = GridGeometry::centered(3, 3, 1.0).unwrap();
        assert_eq!(integrate_g2(|_| 0.0, &c, &sp).unwrap(), 0.0);
        assert_eq!(integrate_g1(|_, _| 0.0, &G1Chart::default()).unwrap(), 0.0);
        assert_eq!(oracle_gl2(|_| 0.0, [[0.0, 1.0]; 4], [3; 4]).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_samples_are_reported() {
        let c = small_chart();
        assert!(matches!(integrate_gl2(|_| f64::NAN, &c), Err(Error::NonFiniteSample(_))));
        assert!(matches!(integrate_g1(|_, _| f64::INFINITY, &G1Chart::default()), Err(Error::NonFiniteSample(_))));
    }

    #[test]
    fn g1_gaussian_product() {
        let v = integrate_g1(|y, b| (-y * y).exp() * b * b * (-b * b).exp(), &G1Chart::default()).unwrap();
        assert!((v - PI).abs() / PI < 1e-3, "{v}");
    }

    #[test]
    fn monotone_in_integrand() {
        let c = small_chart();
        let f = |a: &Mat2| (-a.sub(&Mat2::IDENTITY).frobenius_sq()).exp();
        let lo = integrate_gl2(f, &c).unwrap();
        let hi = integrate_gl2(|a| f(a) + 0.1 * (-a.frobenius_sq()).exp(), &c).unwrap();
        assert!(hi >= lo);
    }

    #[test]
    fn constant_on_single_cell_is_exact() {
        let c = QuadratureChart::new([0.1, 0.4], [1.0, 1.5], [2.0, 2.2], [-0.3, 0.0], [1, 1, 1, 1]).unwrap();
        let v = integrate_gl2(|_| 1.0, &c).unwrap();
        assert!((v - 2.0 * 0.3 * 0.5 * 0.2 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn separable_g2_factorizes() {
        let c = QuadratureChart::new([-1.5, 1.5], [0.0, 2.0 * PI], [-3.0, 3.0], [-1.5, 1.5], [8, 8, 12, 8]).unwrap();
        let sp = GridGeometry::centered(21, 21, 0.5).unwrap();
        let phi = |x: [f64; 2]| (-(x[0] * x[0] + x[1] * x[1])).exp();
        let psi = |a: &Mat2| (-a.sub(&Mat2::IDENTITY).frobenius_sq() / 0.5).exp();
        let lhs = integrate_g2(|g| phi(g.x()) * psi(&g.matrix()), &c, &sp).unwrap();
        let phi_int: f64 = (0..sp.len()).map(|i| phi(sp.position_of(i))).sum::<f64>() * sp.cell_area();
        let psi_int = integrate_gl2(|a| psi(a) / a.det().abs(), &c).unwrap();
        assert!((lhs - phi_int * psi_int).abs() < 1e-12 * lhs.abs());
    }

    #[test]
    fn config_round_trip_and_rejection() {
        let c = small_chart();
        let back = QuadratureChart::from_config(&c.to_config()).unwrap();
        assert_eq!(back, c);
        let c2 = QuadratureChart::from_config("# comment\nrho.count = 4\ntheta.hi=2pi\n").unwrap();
        assert_eq!(c2.rho.count, 4);
        assert!(matches!(QuadratureChart::from_config("rho.step=1"), Err(Error::Config(_))));
        assert!(QuadratureChart::from_config("u.lo=5\nu.hi=1").is_err());
        assert!(QuadratureChart::from_config("w.count=0").is_err());
        assert!(QuadratureChart::from_config("nonsense").is_err());
    }

    #[test]
    fn boundary_detection() {
        let c = small_chart();
        let inner = c.index_of([1, 0, 2, 1, 0]);
        assert!(!c.is_boundary(inner));
        assert!(c.is_boundary(c.index_of([0, 3, 2, 1, 1])));
        let q = chart_quadrature(&c, |_| 1.0).unwrap();
        assert!(q.boundary_fraction() > 0.5);
    }

    #[test]
    fn identity_node_lies_in_default_chart() {
        let c = QuadratureChart::default();
        let n = c.nearest_node_of(&Mat2::IDENTITY).unwrap();
        let p = c.point(n);
        let f = iwasawa(&Mat2::IDENTITY).unwrap().to_log_polar();
        assert!((p.rho - f.rho).abs() <= c.rho.step());
        assert_eq!(p.sign, Sign::Positive);
    }
}
