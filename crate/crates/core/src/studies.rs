//! Refinement studies behind `affgroup convergence`: each compares a quadrature
//! against an independent reference along a ladder of resolutions.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::affine::{iwasawa, AffineElement, ChartPoint, Mat2, Sign};
use crate::error::{Error, Result};
use crate::gconv::{brute_force_gconv_at, GaussianBump, GconvPlan, SeparableKernel};
use crate::haar::{integrate_gl2, oracle_gl2, QuadratureChart};
use crate::invariance::{converse_probe, delta_kernel};
use crate::lifting::{gaussian_kernel, LiftedSignal};
use crate::signal::GridGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    Haar,
    Theorem4,
    Delta,
}

impl std::str::FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(Study::Haar),
            "theorem4" => Ok(Study::Theorem4),
            "delta" => Ok(Study::Delta),
            _ => Err(Error::Config(format!("unknown study {s:?}; expected haar, theorem4 or delta"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    /// Node count of the chart, or kernel width for the delta study.
    pub resolution: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyTable {
    pub study: Study,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error < w[0].error)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("resolution,error\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:e}\n", r.resolution, r.error));
        }
        s
    }
}

pub fn run(study: Study) -> Result<StudyTable> {
    let rows = match study {
        Study::Haar => haar_rows()?,
        Study::Theorem4 => theorem4_rows()?,
        Study::Delta => delta_rows()?,
    };
    Ok(StudyTable { study, rows })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Narrow bump at `I` on the default chart against the entry-space oracle.
fn haar_rows() -> Result<Vec<StudyRow>> {
    let bump = |a: &Mat2| (-a.sub(&Mat2::IDENTITY).frobenius_sq() / 0.04).exp();
    let reference = oracle_gl2(bump, [[0.0, 2.0], [-1.0, 1.0], [-1.0, 1.0], [0.0, 2.0]], [48; 4])?;
    let base = QuadratureChart::default();
    [[8, 8, 16, 8], [16, 16, 32, 16], base.counts()]
        .iter()
        .map(|c| {
            let chart = base.with_counts(*c)?;
            Ok(StudyRow { resolution: chart.len() as f64, error: rel(integrate_gl2(bump, &chart)?, reference) })
        })
        .collect()
}

const TINY: f64 = 0.9;

fn in_tiny_chart(a: &Mat2) -> bool {
    iwasawa(a).map_or(false, |f| {
        let p = f.to_log_polar();
        let theta = (p.theta + PI).rem_euclid(2.0 * PI) - PI;
        p.sign == Sign::Positive && [p.rho, theta, p.u, p.w].iter().all(|c| c.abs() <= TINY)
    })
}

/// `gconv_at` on `[-0.9, 0.9]^4` charts against the entry-space brute force restricted
/// to the same matrices.
fn theorem4_rows() -> Result<Vec<StudyRow>> {
    let spatial = GridGeometry::centered(8, 8, 0.5)?;
    let f = |g: &AffineElement| {
        let x = g.x();
        (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * 0.8 * 0.8)).exp()
            * (-g.matrix().sub(&Mat2::IDENTITY).frobenius_sq() / 0.35f64.powi(2)).exp()
    };
    let restricted = |g: &AffineElement| if in_tiny_chart(&g.matrix()) { f(g) } else { 0.0 };
    let kern = SeparableKernel::single(gaussian_kernel(0.7, 0.1, 3.0)?, Arc::new(GaussianBump::new(Mat2::IDENTITY, 0.35, 1.0)?))?;
    let target = AffineElement::new(
        [-0.25, 0.75],
        ChartPoint { rho: 0.1, theta: 0.2, u: -0.1, w: 0.05, sign: Sign::Positive }.matrix(),
    )?;
    let reference =
        brute_force_gconv_at(restricted, &kern, &target, &spatial, [[-0.3, 2.3], [-1.3, 1.3], [-1.3, 1.3], [-0.3, 2.3]], [40; 4])?;
    [6usize, 8, 10]
        .iter()
        .map(|&n| {
            let chart = QuadratureChart::new([-TINY, TINY], [-TINY, TINY], [-TINY, TINY], [-TINY, TINY], [n; 4])?;
            let lifted = LiftedSignal::from_fn(spatial, chart, f)?;
            let plan = GconvPlan::new(&kern, &spatial, &chart)?;
            Ok(StudyRow { resolution: chart.len() as f64, error: rel(plan.gconv_at(&lifted, &target)?, reference) })
        })
        .collect()
}

/// Shortfall `(sup|D| - recovered) / sup|D|` of the converse probe on a smooth `D`
/// as the probing kernel narrows.
fn delta_rows() -> Result<Vec<StudyRow>> {
    let spatial = GridGeometry::centered(12, 12, 0.5)?;
    let chart = QuadratureChart::new([-0.6, 0.6], [0.0, 2.0 * PI], [-0.8, 0.8], [-0.6, 0.6], [6, 8, 8, 6])?;
    let d = LiftedSignal::from_fn(spatial, chart, |g| {
        let x = g.x();
        (-((x[0] - 0.3).powi(2) + (x[1] + 0.2).powi(2)) / 2.0).exp()
            * (-g.matrix().sub(&Mat2::IDENTITY).frobenius_sq() / 0.5).exp()
    })?;
    let hp = AffineElement::identity();
    [1.0, 0.5, 0.25]
        .iter()
        .map(|&w| {
            let kern = delta_kernel(&hp, w, 0.25 * w, 0.4 * w)?;
            let p = converse_probe(&d, &kern, &hp)?;
            Ok(StudyRow { resolution: w, error: (p.epsilon_hat - p.recovered) / p.epsilon_hat })
        })
        .collect()
}
