//! Invariance criteria for pairs of planar signals: the convolution test, the scalar
//! functional `c(F) = int_G2 (F * k) d mu`, and a direct alignment baseline.
//!
//! Conventions: for a pair `(f1, f2)` with `f2 = rho(g^-1) f1`, alignment returns `g`
//! and `rho(g) K f2 = K f1`, so the lifted comparison uses `h~ = g`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::affine::{iwasawa, wrap_angle, AffineElement, ChartPoint, Mat2, Sign};
use crate::error::{Error, Result};
use crate::gconv::{FunctionalPlan, GaussianBump, GconvPlan, SeparableKernel};
use crate::haar::QuadratureChart;
use crate::lifting::{gaussian_kernel, lift, LiftedSignal};
use crate::signal::{Grid2, GridGeometry};
use crate::sum::pairwise_sum;

/// Multiplicative slack on theorem bounds.
pub const SLACK_REL: f64 = 0.05;
/// Additive slack on theorem bounds.
pub const SLACK_ABS: f64 = 1e-9;
/// Counts of the bump-resolving chart used for `||k||_1`.
pub const RESOLVING_COUNTS: [usize; 4] = [24, 24, 24, 24];

pub fn within_bound(value: f64, bound: f64) -> bool {
    value <= bound * (1.0 + SLACK_REL) + SLACK_ABS
}

/// `||k||_1^G2`, on a chart resolving the matrix factors when they are bumps and on
/// `fallback` otherwise.
pub fn kernel_l1(kern: &SeparableKernel, fallback: &QuadratureChart) -> Result<f64> {
    match kern.resolving_chart(RESOLVING_COUNTS) {
        Some(chart) => kern.l1_norm(&chart),
        None => kern.l1_norm(fallback),
    }
}

/// A kernel with its convolution plan, functional representer and norm on one grid.
pub struct PreparedKernel {
    pub name: String,
    pub kernel: SeparableKernel,
    pub plan: GconvPlan,
    pub functional: FunctionalPlan,
    pub l1: f64,
}

impl PreparedKernel {
    pub fn new(name: &str, kernel: SeparableKernel, spatial: &GridGeometry, chart: &QuadratureChart) -> Result<Self> {
        let plan = GconvPlan::new(&kernel, spatial, chart)?;
        let functional = FunctionalPlan::new(&plan)?;
        let l1 = kernel_l1(&kernel, chart)?;
        Ok(PreparedKernel { name: name.to_string(), kernel, plan, functional, l1 })
    }
}

/// Outcome of the convolution test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvInvariance {
    pub deviation: f64,
    pub bound: f64,
    pub epsilon_hat: f64,
    pub kernel_l1: f64,
}

impl ConvInvariance {
    pub fn holds(&self) -> bool {
        within_bound(self.deviation, self.bound)
    }
}

/// `sup |F1 * k - rho(h~)(F2 * k)|` against `sup |F1 - rho(h~) F2| * ||k||_1`.
///
/// Convolution commutes with `rho`, so the left side is evaluated as
/// `sup |(F1 - rho(h~) F2) * k|` on the nodes.
pub fn conv_invariance_test(
    f1: &LiftedSignal,
    f2: &LiftedSignal,
    h_tilde: &AffineElement,
    kern: &SeparableKernel,
) -> Result<ConvInvariance> {
    f1.check_compatible(f2)?;
    let diff = f1.sub(&f2.translate(h_tilde)?)?;
    let plan = GconvPlan::new(kern, f1.spatial(), f1.chart())?;
    conv_invariance_of_difference(&plan, &diff, kernel_l1(kern, f1.chart())?)
}

/// The convolution test for a precomputed difference `F1 - rho(h~) F2`.
pub fn conv_invariance_of_difference(plan: &GconvPlan, diff: &LiftedSignal, kernel_l1: f64) -> Result<ConvInvariance> {
    let epsilon_hat = diff.sup_norm();
    let deviation = plan.gconv(diff)?.sup_norm();
    Ok(ConvInvariance { deviation, bound: epsilon_hat * kernel_l1, epsilon_hat, kernel_l1 })
}

/// `c(F) = int_G2 (F * k) d mu_G2`, integrating the convolution node by node.
pub fn functional_c(f: &LiftedSignal, kern: &SeparableKernel) -> Result<f64> {
    Ok(crate::gconv::gconv(f, kern)?.integral())
}

/// Outcome of the functional test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalGap {
    pub c1: f64,
    pub c2: f64,
    pub gap: f64,
    pub bound: f64,
}

impl FunctionalGap {
    pub fn holds(&self) -> bool {
        within_bound(self.gap, self.bound)
    }
}

/// `|c(F1) - c(F2)|` against `epsilon_hat * ||k||_1`; `epsilon_hat` bounds
/// `||F1 - rho(h~) F2||_1` for some `h~`.
pub fn functional_gap_test(
    f1: &LiftedSignal,
    f2: &LiftedSignal,
    kern: &SeparableKernel,
    epsilon_hat: f64,
) -> Result<FunctionalGap> {
    f1.check_compatible(f2)?;
    let plan = GconvPlan::new(kern, f1.spatial(), f1.chart())?;
    let functional = FunctionalPlan::new(&plan)?;
    let (c1, c2) = (functional.evaluate(f1)?, functional.evaluate(f2)?);
    Ok(FunctionalGap { c1, c2, gap: (c1 - c2).abs(), bound: epsilon_hat * kernel_l1(kern, f1.chart())? })
}

/// Narrow kernel peaked at `h_prime`, used to probe the converse direction.
pub fn delta_kernel(h_prime: &AffineElement, k1_sigma: f64, k1_spacing: f64, k2_width: f64) -> Result<SeparableKernel> {
    let base = gaussian_kernel(k1_sigma, k1_spacing, 4.0)?;
    let t = h_prime.x();
    let geom = GridGeometry::new(base.height(), base.width(), [base.origin()[0] + t[0], base.origin()[1] + t[1]], k1_spacing)?;
    let k1 = Grid2::new(geom, base.into_values())?;
    let bump = GaussianBump::new(h_prime.matrix(), k2_width, 1.0)?;
    SeparableKernel::single(k1, Arc::new(bump))
}

/// Result of [`converse_probe`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConverseProbe {
    /// `sup |D|` over the nodes.
    pub epsilon_hat: f64,
    /// Largest normalized response `|D * k| / (1 * k)`.
    pub recovered: f64,
    /// Spread of `D` over the kernel footprint at the maximizer of `|D|`.
    pub oscillation: f64,
}

impl ConverseProbe {
    pub fn holds(&self) -> bool {
        let tol = SLACK_ABS + 1e-9 * self.epsilon_hat;
        self.recovered <= self.epsilon_hat + tol && self.recovered >= self.epsilon_hat - self.oscillation - tol
    }
}

/// Recovers `sup |D|` from convolutions of `D` with a nonnegative kernel peaked at
/// `h_prime`: `(D * k)(g) / (1 * k)(g)` averages `D` over the footprint of
/// `k(g^-1 .)`, which sits at `g h_prime`.
pub fn converse_probe(diff: &LiftedSignal, kern: &SeparableKernel, h_prime: &AffineElement) -> Result<ConverseProbe> {
    let plan = GconvPlan::new(kern, diff.spatial(), diff.chart())?;
    let ones = LiftedSignal::from_fn(*diff.spatial(), *diff.chart(), |_| 1.0)?;
    let conv = plan.gconv(diff)?;
    let mass = plan.gconv(&ones)?;
    let mmax = mass.sup_norm();
    let mut recovered = conv
        .values()
        .iter()
        .zip(mass.values())
        .filter(|(_, m)| **m > 1e-3 * mmax)
        .map(|(c, m)| c.abs() / m)
        .fold(0.0, f64::max);

    let s = diff.spatial().len();
    let (best, epsilon_hat) =
        diff.values().iter().enumerate().fold((0, 0.0f64), |acc, (j, v)| if v.abs() > acc.1 { (j, v.abs()) } else { acc });
    let (n, i) = (best / s, best % s);
    let gstar = AffineElement::new(diff.spatial().position_of(i), diff.chart().matrix(n))?;
    let target = gstar.compose(&h_prime.invert()?);
    let at = plan.gconv_at(diff, &target)?;
    let norm = plan.gconv_at(&ones, &target)?;
    if norm > 0.0 {
        recovered = recovered.max(at.abs() / norm);
    }
    let tinv = target.invert()?;
    let dstar = diff.values()[best];
    let chart = diff.chart();
    let oscillation = (0..chart.len())
        .into_par_iter()
        .map(|m| {
            let a = chart.matrix(m);
            (0..s).fold(0.0f64, |acc, j| {
                let node = AffineElement::new(diff.spatial().position_of(j), a).expect("chart nodes are invertible");
                if kern.eval(&tinv.compose(&node)) != 0.0 {
                    acc.max((diff.value(m, j) - dstar).abs())
                } else {
                    acc
                }
            })
        })
        .reduce(|| 0.0, f64::max);
    Ok(ConverseProbe { epsilon_hat, recovered, oscillation })
}

/// Box of the six alignment parameters `(tx, ty, rho, theta, u, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lo: [f64; 6],
    pub hi: [f64; 6],
    pub counts: [usize; 6],
    /// Number of refinements after the coarse pass; each halves the step and
    /// searches five nodes per parameter around the current best.
    pub levels: usize,
    pub sign: Sign,
}

impl SearchBox {
    pub fn new(lo: [f64; 6], hi: [f64; 6], counts: [usize; 6], levels: usize) -> Result<Self> {
        for k in 0..6 {
            if !(lo[k].is_finite() && hi[k].is_finite()) || lo[k] > hi[k] || counts[k] == 0 {
                return Err(Error::EmptySearchBox(format!(
                    "parameter {k}: [{}, {}] with {} nodes",
                    lo[k], hi[k], counts[k]
                )));
            }
        }
        Ok(SearchBox { lo, hi, counts, levels, sign: Sign::Positive })
    }

    /// Translations within `translation`, `rho, u, w` within the given radii, all angles.
    pub fn centered(translation: f64, rho: f64, u: f64, w: f64) -> Result<Self> {
        SearchBox::new(
            [-translation, -translation, -rho, 0.0, -u, -w],
            [translation, translation, rho, 2.0 * PI, u, w],
            [7, 7, 5, 13, 5, 5],
            3,
        )
    }

    pub fn element(&self, p: &[f64; 6]) -> AffineElement {
        let c = ChartPoint { rho: p[2], theta: p[3], u: p[4], w: p[5], sign: self.sign };
        AffineElement::new([p[0], p[1]], c.matrix()).expect("chart points are invertible")
    }

    /// Chart parameters of `g`, with `theta` in `[lo_theta, lo_theta + 2 pi)`.
    pub fn params_of(&self, g: &AffineElement) -> Result<[f64; 6]> {
        let c = iwasawa(&g.matrix())?.to_log_polar();
        let x = g.x();
        Ok([x[0], x[1], c.rho, wrap_angle(c.theta, self.lo[3]), c.u, c.w])
    }

    /// Spacing of the coarse pass; its nodes include both ends of each range.
    fn step(&self, k: usize) -> f64 {
        if self.counts[k] > 1 {
            (self.hi[k] - self.lo[k]) / (self.counts[k] - 1) as f64
        } else {
            0.0
        }
    }

    /// Cell widths after the last refinement.
    pub fn final_cell(&self) -> [f64; 6] {
        std::array::from_fn(|k| self.step(k) * 0.5f64.powi(self.levels as i32))
    }

    /// Whether `a` and `b` differ by at most `cells` final cells in every parameter.
    pub fn within_cells(&self, a: &[f64; 6], b: &[f64; 6], cells: f64) -> bool {
        let cell = self.final_cell();
        (0..6).all(|k| {
            let mut d = (a[k] - b[k]).abs();
            if k == 3 {
                d = d.min(2.0 * PI - d);
            }
            d <= cells * cell[k].max(1e-12)
        })
    }
}

/// Result of [`oracle_align`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub g: AffineElement,
    pub params: [f64; 6],
    pub residual_l1: f64,
    pub residual_sup: f64,
}

/// Row-by-row `||f1 - rho(g) f2||_1`, abandoned as soon as the partial sum reaches
/// `cutoff`. Partial sums never decrease, so an abandoned candidate cannot beat `cutoff`.
fn residual_l1_below(f1: &Grid2, f2: &Grid2, g: &AffineElement, cutoff: f64) -> f64 {
    let gi = g.invert().expect("search elements are invertible");
    let geom = f1.geometry();
    let limit = cutoff / geom.cell_area();
    let mut sum = 0.0;
    for r in 0..geom.height {
        for c in 0..geom.width {
            let i = r * geom.width + c;
            sum += (f1.values()[i] - f2.sample(gi.apply(geom.position(r, c)))).abs();
        }
        if sum >= limit {
            return f64::INFINITY;
        }
    }
    sum * geom.cell_area()
}

/// Coarse nodes refined independently by [`oracle_align`].
pub const ALIGN_STARTS: usize = 3;

/// The `keep` best nodes of a grid as `(residual, params)`, ordered by residual and
/// then by node index.
fn grid_search(
    f1: &Grid2,
    f2: &Grid2,
    search: &SearchBox,
    counts: [usize; 6],
    lo: [f64; 6],
    step: [f64; 6],
    keep: usize,
) -> Vec<(f64, [f64; 6])> {
    let n: usize = counts.iter().product();
    let node = |mut idx: usize| {
        let mut p = [0.0; 6];
        for k in (0..6).rev() {
            let c = counts[k];
            p[k] = lo[k] + (idx % c) as f64 * step[k];
            idx /= c;
        }
        p
    };
    let mut all: Vec<(f64, usize)> = crate::sum::par_blocks(n, 256, |range| {
        let mut top: Vec<(f64, usize)> = Vec::with_capacity(keep + 1);
        for i in range {
            let cutoff = if top.len() < keep { f64::INFINITY } else { top[keep - 1].0 };
            let r = residual_l1_below(f1, f2, &search.element(&node(i)), cutoff);
            if r < cutoff {
                let at = top.partition_point(|e| e.0 <= r);
                top.insert(at, (r, i));
                top.truncate(keep);
            }
        }
        top
    })
    .into_iter()
    .flatten()
    .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(keep);
    all.into_iter().map(|(r, i)| (r, node(i))).collect()
}

/// Zoom passes followed by pattern search, starting from one coarse node.
fn refine(f1: &Grid2, f2: &Grid2, search: &SearchBox, start: [f64; 6], start_value: f64) -> ([f64; 6], f64) {
    let (mut best, mut value) = (start, start_value);
    let mut step: [f64; 6] = std::array::from_fn(|k| search.step(k));
    let zoom: [usize; 6] = std::array::from_fn(|k| if search.counts[k] > 1 { 5 } else { 1 });
    for _ in 0..search.levels {
        let mut lo = [0.0; 6];
        for k in 0..6 {
            step[k] *= 0.5;
            lo[k] = best[k] - 2.0 * step[k];
        }
        if let Some(&(v, b)) = grid_search(f1, f2, search, zoom, lo, step, 1).first() {
            if v <= value {
                best = b;
                value = v;
            }
        }
    }
    // Hooke-Jeeves: coordinate exploration plus pattern moves along the last gain.
    let residual = |p: &[f64; 6], cutoff: f64| residual_l1_below(f1, f2, &search.element(p), cutoff);
    let explore = |mut p: [f64; 6], mut v: f64, h: &[f64; 6]| {
        for k in 0..6 {
            if search.counts[k] == 1 {
                continue;
            }
            for dir in [1.0, -1.0] {
                let mut q = p;
                q[k] += dir * h[k];
                let w = residual(&q, v);
                if w < v {
                    p = q;
                    v = w;
                    break;
                }
            }
        }
        (p, v)
    };
    let mut h = search.final_cell();
    for _ in 0..8 {
        loop {
            let (x, vx) = explore(best, value, &h);
            if vx >= value {
                break;
            }
            let (mut base, mut vbase) = (x, vx);
            loop {
                let pattern: [f64; 6] = std::array::from_fn(|k| 2.0 * base[k] - best[k]);
                best = base;
                value = vbase;
                let vp = residual(&pattern, f64::INFINITY);
                let (y, vy) = explore(pattern, vp, &h);
                if vy < value {
                    base = y;
                    vbase = vy;
                } else {
                    break;
                }
            }
        }
        h.iter_mut().for_each(|x| *x *= 0.5);
    }
    (best, value)
}

/// Minimizes `||f1 - rho(g) f2||_1` over the search box. The best
/// [`ALIGN_STARTS`] nodes of a coarse grid are each refined by `levels` zoomed grid
/// searches and a coordinate pattern search with halving steps; the lowest residual
/// wins.
pub fn oracle_align(f1: &Grid2, f2: &Grid2, search: &SearchBox) -> Result<Alignment> {
    f1.geometry().check_same(f2.geometry())?;
    let search = SearchBox::new(search.lo, search.hi, search.counts, search.levels).map(|s| SearchBox { sign: search.sign, ..s })?;
    let mut lo = search.lo;
    let mut step = [0.0; 6];
    for k in 0..6 {
        step[k] = search.step(k);
        if search.counts[k] == 1 {
            lo[k] = 0.5 * (search.lo[k] + search.hi[k]);
        }
    }
    let starts = grid_search(f1, f2, &search, search.counts, lo, step, ALIGN_STARTS);
    let (mut best, mut value) = (starts[0].1, f64::INFINITY);
    for (v0, p0) in starts {
        let (p, v) = refine(f1, f2, &search, p0, v0);
        if v < value {
            best = p;
            value = v;
        }
    }
    best[3] = wrap_angle(best[3], search.lo[3]);
    let g = search.element(&best);
    let gi = g.invert()?;
    let geom = f1.geometry();
    let residual_sup = (0..geom.len())
        .map(|i| (f1.values()[i] - f2.sample(gi.apply(geom.position_of(i)))).abs())
        .fold(0.0, f64::max);
    Ok(Alignment { g, params: best, residual_l1: value, residual_sup })
}

/// Matrix factor centers of the standard bank.
pub fn bank_centers() -> [Mat2; 3] {
    let at = |rho: f64, theta: f64, u: f64, w: f64| ChartPoint { rho, theta, u, w, sign: Sign::Positive }.matrix();
    [Mat2::IDENTITY, at(0.2, PI / 4.0, 0.3, -0.2), at(-0.2, -PI / 3.0, -0.3, 0.2)]
}

/// Five separable kernels: Gaussian `k1` of widths `spacing` and `2 spacing` paired
/// with bumps of width `k2_width` at `I` and at two interior matrices. Each kernel is
/// scaled to unit `||k||_1^G2`.
pub fn standard_bank(spacing: f64, k2_width: f64) -> Result<Vec<(String, SeparableKernel)>> {
    let centers = bank_centers();
    let picks = [(1.0, 0usize), (2.0, 0), (1.0, 1), (2.0, 1), (1.0, 2)];
    let names = ["narrow-I", "wide-I", "narrow-M1", "wide-M1", "narrow-M2"];
    picks
        .iter()
        .zip(names)
        .map(|(&(width, c), name)| {
            let k1 = gaussian_kernel(width * spacing, 0.5 * spacing, 3.0)?;
            let kern = SeparableKernel::single(k1, Arc::new(GaussianBump::new(centers[c], k2_width, 1.0)?))?;
            let chart = kern.resolving_chart(RESOLVING_COUNTS).expect("bump factors");
            let l1 = kern.l1_norm(&chart)?;
            Ok((name.to_string(), kern.scale(1.0 / l1)))
        })
        .collect()
}

/// `{x: [..], A: [[..], [..]]}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementJson {
    pub x: [f64; 2],
    #[serde(rename = "A")]
    pub a: [[f64; 2]; 2],
}

impl From<&AffineElement> for ElementJson {
    fn from(g: &AffineElement) -> Self {
        ElementJson { x: g.x(), a: g.matrix().rows() }
    }
}

/// Per-kernel part of an [`InvarianceReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub name: String,
    pub kernel_l1: f64,
    pub conv_deviation: f64,
    pub conv_bound: f64,
    pub conv_holds: bool,
    pub c1: f64,
    pub c2: f64,
    pub functional_gap: f64,
    /// `||F1 - rho(h~) F2||_1 * ||k||_1`.
    pub gap_bound: f64,
    pub gap_holds: bool,
}

/// Summary over a kernel bank. `epsilon_hat` is the lifted sup deviation
/// `sup |F1 - rho(g) F2|` at the aligned `g`; `conv_deviation` and `bound` are taken
/// from the kernel with the largest ratio of the two; `functional_gap` is the largest
/// gap over the bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub epsilon_hat: f64,
    pub conv_deviation: f64,
    pub bound: f64,
    pub functional_gap: f64,
    pub aligned_g: ElementJson,
    pub kernels: Vec<KernelReport>,
}

/// Lifting kernel, grids, kernel bank and alignment box for [`Pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub lift_kernel: Grid2,
    pub spatial: GridGeometry,
    pub chart: QuadratureChart,
    pub bank: Vec<(String, SeparableKernel)>,
    pub search: SearchBox,
}

/// Chart of the reduced pipeline: `rho` in `[-0.6, 0.6]`, all angles, `u` in
/// `[-0.8, 0.8]`, `w` in `[-0.6, 0.6]` with `8 x 8 x 16 x 8` nodes.
pub fn reduced_chart() -> QuadratureChart {
    QuadratureChart::new([-0.6, 0.6], [0.0, 2.0 * PI], [-0.8, 0.8], [-0.6, 0.6], [8, 8, 16, 8]).expect("valid chart")
}

/// Width of the bank's matrix bumps in the reduced pipeline.
pub const REDUCED_K2_WIDTH: f64 = 0.15;

impl PipelineConfig {
    /// Unit-spacing `16 x 16` spatial grid over [`reduced_chart`], Gaussian lifting
    /// kernel of width 1, the standard bank and a search box of translations up to 1
    /// and `rho, u, w` up to 0.3.
    pub fn reduced() -> Result<Self> {
        Ok(PipelineConfig {
            lift_kernel: gaussian_kernel(1.0, 0.5, 3.0)?,
            spatial: GridGeometry::centered(16, 16, 1.0)?,
            chart: reduced_chart(),
            bank: standard_bank(1.0, REDUCED_K2_WIDTH)?,
            search: SearchBox::centered(1.0, 0.3, 0.3, 0.3)?,
        })
    }
}

/// Prepared kernels for repeated comparisons on one grid.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub kernels: Vec<PreparedKernel>,
}

/// Lifted pair with the aligned difference.
pub struct LiftedPair {
    pub alignment: Alignment,
    pub f1: LiftedSignal,
    pub f2: LiftedSignal,
    /// `F1 - rho(g) F2`.
    pub diff: LiftedSignal,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let kernels = config
            .bank
            .iter()
            .map(|(name, k)| PreparedKernel::new(name, k.clone(), &config.spatial, &config.chart))
            .collect::<Result<_>>()?;
        Ok(Pipeline { config, kernels })
    }

    pub fn lift(&self, f: &Grid2) -> Result<LiftedSignal> {
        lift(f, &self.config.lift_kernel, &self.config.spatial, &self.config.chart)
    }

    /// Aligns `f2` to `f1` (or uses `given`) and lifts both.
    pub fn lift_pair(&self, f1: &Grid2, f2: &Grid2, given: Option<AffineElement>) -> Result<LiftedPair> {
        f1.geometry().check_same(f2.geometry())?;
        let alignment = match given {
            Some(g) => {
                let gi = g.invert()?;
                let geom = f1.geometry();
                let d: Vec<f64> =
                    (0..geom.len()).map(|i| (f1.values()[i] - f2.sample(gi.apply(geom.position_of(i)))).abs()).collect();
                Alignment {
                    g,
                    params: self.config.search.params_of(&g)?,
                    residual_l1: pairwise_sum(&d) * geom.cell_area(),
                    residual_sup: d.iter().cloned().fold(0.0, f64::max),
                }
            }
            None => oracle_align(f1, f2, &self.config.search)?,
        };
        let l1 = self.lift(f1)?;
        let l2 = self.lift(f2)?;
        let diff = l1.sub(&l2.translate(&alignment.g)?)?;
        Ok(LiftedPair { alignment, f1: l1, f2: l2, diff })
    }

    /// `(c1, c2)` for every kernel of the bank.
    pub fn functionals(&self, f1: &LiftedSignal, f2: &LiftedSignal) -> Result<Vec<(f64, f64)>> {
        self.kernels.iter().map(|k| Ok((k.functional.evaluate(f1)?, k.functional.evaluate(f2)?))).collect()
    }

    pub fn report(&self, f1: &Grid2, f2: &Grid2) -> Result<InvarianceReport> {
        let pair = self.lift_pair(f1, f2, None)?;
        self.report_lifted(&pair)
    }

    pub fn report_lifted(&self, pair: &LiftedPair) -> Result<InvarianceReport> {
        let eps_l1 = pair.diff.l1_norm();
        let mut kernels = Vec::with_capacity(self.kernels.len());
        let mut epsilon_hat = pair.diff.sup_norm();
        for k in &self.kernels {
            let conv = conv_invariance_of_difference(&k.plan, &pair.diff, k.l1)?;
            epsilon_hat = conv.epsilon_hat;
            let (c1, c2) = (k.functional.evaluate(&pair.f1)?, k.functional.evaluate(&pair.f2)?);
            let gap = FunctionalGap { c1, c2, gap: (c1 - c2).abs(), bound: eps_l1 * k.l1 };
            kernels.push(KernelReport {
                name: k.name.clone(),
                kernel_l1: k.l1,
                conv_deviation: conv.deviation,
                conv_bound: conv.bound,
                conv_holds: conv.holds(),
                c1,
                c2,
                functional_gap: gap.gap,
                gap_bound: gap.bound,
                gap_holds: gap.holds(),
            });
        }
        let ratio = |k: &KernelReport| if k.conv_bound > 0.0 { k.conv_deviation / k.conv_bound } else { 0.0 };
        let worst = kernels.iter().max_by(|a, b| ratio(a).total_cmp(&ratio(b)));
        Ok(InvarianceReport {
            epsilon_hat,
            conv_deviation: worst.map_or(0.0, |k| k.conv_deviation),
            bound: worst.map_or(0.0, |k| k.conv_bound),
            functional_gap: kernels.iter().map(|k| k.functional_gap).fold(0.0, f64::max),
            aligned_g: ElementJson::from(&pair.alignment.g),
            kernels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (GridGeometry, QuadratureChart, Grid2, Grid2) {
        let spatial = GridGeometry::centered(10, 10, 1.0).unwrap();
        let chart = QuadratureChart::new([-0.4, 0.4], [0.0, 2.0 * PI], [-0.5, 0.5], [-0.4, 0.4], [3, 6, 4, 3]).unwrap();
        let img = GridGeometry::centered(16, 16, 1.0).unwrap();
        let f = Grid2::from_fn(img, |x, y| (-((x - 0.5).powi(2) + 0.6 * y * y) / 4.0).exp());
        let k = gaussian_kernel(1.0, 0.5, 3.0).unwrap();
        (spatial, chart, f, k)
    }

    fn kernel() -> SeparableKernel {
        SeparableKernel::single(gaussian_kernel(1.0, 0.5, 3.0).unwrap(), Arc::new(GaussianBump::new(Mat2::IDENTITY, 0.3, 1.0).unwrap()))
            .unwrap()
    }

    #[test]
    fn identical_inputs_give_zero() {
        let (spatial, chart, f, k) = setup();
        let lifted = lift(&f, &k, &spatial, &chart).unwrap();
        let r = conv_invariance_test(&lifted, &lifted, &AffineElement::identity(), &kernel()).unwrap();
        assert_eq!(r.deviation, 0.0);
        assert_eq!(r.epsilon_hat, 0.0);
        let g = functional_gap_test(&lifted, &lifted, &kernel(), 0.0).unwrap();
        assert_eq!(g.gap, 0.0);
        assert!(g.holds());
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let (spatial, chart, f, k) = setup();
        let f1 = lift(&f, &k, &spatial, &chart).unwrap();
        let f2 = lift(&f.map(|v| v * v), &k, &spatial, &chart).unwrap();
        let r = conv_invariance_test(&f1, &f2, &AffineElement::identity(), &kernel().scale(0.0)).unwrap();
        assert_eq!((r.deviation, r.bound), (0.0, 0.0));
    }

    #[test]
    fn bound_holds_and_scales() {
        let (spatial, chart, f, k) = setup();
        let g = AffineElement::new([0.4, -0.3], Mat2::rotation(0.5)).unwrap();
        let f2 = Grid2::from_fn(*f.geometry(), |x, y| f.sample(g.apply([x, y])) + 0.02 * (0.3 * x).sin());
        let l1 = lift(&f, &k, &spatial, &chart).unwrap();
        let l2 = lift(&f2, &k, &spatial, &chart).unwrap();
        let r = conv_invariance_test(&l1, &l2, &g, &kernel()).unwrap();
        assert!(r.holds(), "{r:?}");
        assert!(r.deviation > 0.0);
        let r2 = conv_invariance_test(&l1, &l2, &g, &kernel().scale(3.0)).unwrap();
        assert!((r2.deviation - 3.0 * r.deviation).abs() <= 1e-9 * r2.deviation);
        assert!((r2.bound - 3.0 * r.bound).abs() <= 1e-9 * r2.bound);
        assert_eq!(r2.holds(), r.holds());
    }

    #[test]
    fn literal_and_fast_functional_agree() {
        let (spatial, chart, f, k) = setup();
        let lifted = lift(&f, &k, &spatial, &chart).unwrap();
        let literal = functional_c(&lifted, &kernel()).unwrap();
        let fast = functional_gap_test(&lifted, &LiftedSignal::zeros(spatial, chart), &kernel(), 0.0).unwrap();
        assert!((literal - fast.c1).abs() <= 1e-10 * literal.abs());
        assert_eq!(fast.c2, 0.0);
        let twice = functional_c(&lifted.scale(2.0).add(&lifted).unwrap(), &kernel()).unwrap();
        assert!((twice - 3.0 * literal).abs() <= 1e-10 * twice.abs());
    }

    #[test]
    fn converse_probe_brackets_the_deviation() {
        let (spatial, chart, f, k) = setup();
        let lifted = lift(&f, &k, &spatial, &chart).unwrap();
        let other = lift(&f.map(|v| v * (1.0 + 0.1 * v)), &k, &spatial, &chart).unwrap();
        let diff = lifted.sub(&other).unwrap();
        for hp in [AffineElement::identity(), AffineElement::translation([1.0, 0.0])] {
            let kern = delta_kernel(&hp, 0.7, 0.25, 0.1).unwrap();
            let p = converse_probe(&diff, &kern, &hp).unwrap();
            assert!(p.holds(), "{p:?}");
            assert!(p.oscillation < p.epsilon_hat);
        }
    }

    #[test]
    fn search_box_validation() {
        assert!(matches!(SearchBox::new([0.0; 6], [1.0, 1.0, -1.0, 1.0, 1.0, 1.0], [2; 6], 1), Err(Error::EmptySearchBox(_))));
        assert!(matches!(SearchBox::new([0.0; 6], [1.0; 6], [2, 2, 0, 2, 2, 2], 1), Err(Error::EmptySearchBox(_))));
        let b = SearchBox::centered(1.0, 0.3, 0.3, 0.3).unwrap();
        let g = b.element(&[0.5, -0.5, 0.1, 1.0, -0.2, 0.05]);
        let p = b.params_of(&g).unwrap();
        assert!(b.within_cells(&p, &[0.5, -0.5, 0.1, 1.0, -0.2, 0.05], 1e-6));
    }

    #[test]
    fn align_recovers_on_grid_translation() {
        let geom = GridGeometry::centered(24, 24, 1.0).unwrap();
        let f1 = Grid2::from_fn(geom, |x, y| (-((x - 1.0).powi(2) + 0.5 * (y + 0.5).powi(2)) / 3.0).exp() + 0.5 * (-(x + 2.0).powi(2) / 2.0 - y * y / 5.0).exp());
        let g0 = AffineElement::translation([2.0, -1.0]);
        let f2 = f1.act(&g0.invert().unwrap()).unwrap();
        let search = SearchBox::new([-3.0, -3.0, 0.0, 0.0, 0.0, 0.0], [3.0, 3.0, 0.0, 0.0, 0.0, 0.0], [7, 7, 1, 1, 1, 1], 2).unwrap();
        let a = oracle_align(&f1, &f2, &search).unwrap();
        assert!((a.g.x()[0] - 2.0).abs() < 1e-9 && (a.g.x()[1] + 1.0).abs() < 1e-9, "{:?}", a.g);
        assert!(a.residual_l1 < 1e-9);
    }
}
