//! Equivariance checked along two independent routes: transform the input and run
//! the operator, or run the operator and move the evaluation point.

use std::f64::consts::PI;
use std::sync::Arc;

use affgroup::corpus::{BlobImage, BlobSpec};
use affgroup::lifting::gaussian_kernel;
use affgroup::{lift, lift_at, AffineElement, ChartPoint, GaussianBump, GconvPlan, GridGeometry, LiftedSignal, Mat2, QuadratureChart, SeparableKernel, Sign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn element(x: [f64; 2], rho: f64, theta: f64, u: f64, w: f64) -> AffineElement {
    AffineElement::new(x, ChartPoint { rho, theta, u, w, sign: Sign::Positive }.matrix()).unwrap()
}

#[test]
fn lift_of_moved_signal_is_moved_lift() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let src = BlobImage::random(&mut rng, &BlobSpec::default());
    let geom = GridGeometry::centered(96, 96, 0.25).unwrap();
    let k = gaussian_kernel(1.0, 0.25, 3.0).unwrap();
    let spatial = GridGeometry::centered(4, 4, 1.5).unwrap();
    let chart = QuadratureChart::new([-0.3, 0.3], [0.0, 2.0 * PI], [-0.4, 0.4], [-0.3, 0.3], [2, 3, 2, 2]).unwrap();
    let g = element([0.7, -0.4], 0.15, 1.1, 0.2, -0.1);
    // rho(g) f = f o g^-1, in closed form.
    let moved = src.pullback(&g.invert().unwrap()).unwrap().sample(geom);
    let lifted = lift(&moved, &k, &spatial, &chart).unwrap();
    let f = src.sample(geom);
    let ginv = g.invert().unwrap();
    let mut worst = 0.0f64;
    let scale = lifted.sup_norm();
    for n in 0..chart.len() {
        for i in 0..spatial.len() {
            let h = AffineElement::new(spatial.position_of(i), chart.matrix(n)).unwrap();
            let direct = lift_at(&f, &k, &ginv.compose(&h));
            worst = worst.max((lifted.value(n, i) - direct).abs() / scale);
        }
    }
    assert!(worst < 1e-2, "relative deviation {worst:e}");
}

fn signal(g: &AffineElement) -> f64 {
    let x = g.x();
    let a = g.matrix();
    (-((x[0] - 0.2).powi(2) + 0.7 * (x[1] + 0.1).powi(2)) / 1.5).exp() * (-a.sub(&Mat2::IDENTITY).frobenius_sq() / 0.3).exp()
}

#[test]
fn gconv_commutes_with_left_translation() {
    // Rotations shift theta only, so the full-circle chart is mapped onto itself.
    let spatial = GridGeometry::centered(14, 14, 0.5).unwrap();
    let chart = QuadratureChart::new([-0.8, 0.8], [0.0, 2.0 * PI], [-0.8, 0.8], [-0.8, 0.8], [8, 16, 8, 8]).unwrap();
    let kern = SeparableKernel::single(gaussian_kernel(0.6, 0.15, 3.0).unwrap(), Arc::new(GaussianBump::new(Mat2::IDENTITY, 0.3, 1.0).unwrap()))
        .unwrap();
    let plan = GconvPlan::new(&kern, &spatial, &chart).unwrap();
    let g = AffineElement::new([0.5, -0.25], Mat2::rotation(0.9)).unwrap();
    let ginv = g.invert().unwrap();
    let f = LiftedSignal::from_fn(spatial, chart, signal).unwrap();
    let moved = LiftedSignal::from_fn(spatial, chart, |h| signal(&ginv.compose(h))).unwrap();
    let targets = [element([0.3, 0.2], 0.05, 0.5, 0.1, -0.05), element([-0.2, 0.6], -0.1, 2.0, -0.1, 0.1)];
    for t in &targets {
        let lhs = plan.gconv_at(&moved, t).unwrap();
        let rhs = plan.gconv_at(&f, &ginv.compose(t)).unwrap();
        assert!((lhs - rhs).abs() <= 2e-2 * rhs.abs(), "{lhs} vs {rhs}");
    }
}
