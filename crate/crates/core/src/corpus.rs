//! Synthetic test signals: sums of anisotropic Gaussian blobs, warped in closed form.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::affine::{AffineElement, ChartPoint, Mat2, Sign};
use crate::error::Result;
use crate::signal::{Grid2, GridGeometry};

/// `amplitude * exp(-(x - center)^T Q (x - center) / 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 2],
    pub precision: Mat2,
    pub amplitude: f64,
}

impl Blob {
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let q = self.precision.mul_vec(d);
        self.amplitude * (-0.5 * (d[0] * q[0] + d[1] * q[1])).exp()
    }

    /// The blob `x -> self(g x)`.
    pub fn pullback(&self, g: &AffineElement) -> Result<Blob> {
        let a = g.matrix();
        let ainv = a.inverse()?;
        let t = g.x();
        Ok(Blob {
            center: ainv.mul_vec([self.center[0] - t[0], self.center[1] - t[1]]),
            precision: a.transpose().mul(&self.precision).mul(&a),
            amplitude: self.amplitude,
        })
    }
}

/// A smooth planar signal given in closed form.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlobImage {
    pub blobs: Vec<Blob>,
}

/// Ranges for [`BlobImage::random`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobSpec {
    pub count: usize,
    pub center_radius: f64,
    pub sigma: [f64; 2],
    pub amplitude: [f64; 2],
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec { count: 3, center_radius: 2.0, sigma: [1.0, 2.0], amplitude: [0.4, 1.0] }
    }
}

impl BlobImage {
    pub fn random<R: Rng>(rng: &mut R, spec: &BlobSpec) -> BlobImage {
        let blobs = (0..spec.count)
            .map(|_| {
                let r = spec.center_radius * rng.gen::<f64>().sqrt();
                let phi = rng.gen_range(0.0..2.0 * PI);
                let s1 = rng.gen_range(spec.sigma[0]..=spec.sigma[1]);
                let s2 = rng.gen_range(spec.sigma[0]..=spec.sigma[1]);
                let rot = Mat2::rotation(rng.gen_range(0.0..PI));
                let precision = rot.mul(&Mat2::diag(1.0 / (s1 * s1), 1.0 / (s2 * s2))).mul(&rot.transpose());
                Blob {
                    center: [r * phi.cos(), r * phi.sin()],
                    precision,
                    amplitude: rng.gen_range(spec.amplitude[0]..=spec.amplitude[1]),
                }
            })
            .collect();
        BlobImage { blobs }
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.blobs.iter().map(|b| b.eval(p)).sum()
    }

    /// `x -> self(g x)`, i.e. `rho(g^-1) self`.
    pub fn pullback(&self, g: &AffineElement) -> Result<BlobImage> {
        Ok(BlobImage { blobs: self.blobs.iter().map(|b| b.pullback(g)).collect::<Result<_>>()? })
    }

    pub fn plus(&self, other: &BlobImage) -> BlobImage {
        let mut blobs = self.blobs.clone();
        blobs.extend_from_slice(&other.blobs);
        BlobImage { blobs }
    }

    pub fn sample(&self, geometry: GridGeometry) -> Grid2 {
        Grid2::from_fn(geometry, |x, y| self.eval([x, y]))
    }
}

/// Bounds for random affine elements `[t, from_chart(rho, theta, u, w, +)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineSpec {
    pub translation: f64,
    pub rho: f64,
    pub u: f64,
    pub w: f64,
}

impl Default for AffineSpec {
    fn default() -> Self {
        AffineSpec { translation: 1.0, rho: 0.3, u: 0.3, w: 0.3 }
    }
}

/// A random element with chart coordinates in the interior of typical charts and
/// `theta` uniform on the circle.
pub fn random_affine<R: Rng>(rng: &mut R, spec: &AffineSpec) -> AffineElement {
    let sym = |rng: &mut R, r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
    let x = [sym(rng, spec.translation), sym(rng, spec.translation)];
    let p = ChartPoint {
        rho: sym(rng, spec.rho),
        theta: rng.gen_range(0.0..2.0 * PI),
        u: sym(rng, spec.u),
        w: sym(rng, spec.w),
        sign: Sign::Positive,
    };
    AffineElement::new(x, p.matrix()).expect("chart points are invertible")
}

/// Two sampled signals; for matched pairs `f2 = rho(truth^-1) f1 + perturbation`.
#[derive(Clone, Debug)]
pub struct CorpusPair {
    pub f1: Grid2,
    pub f2: Grid2,
    pub truth: Option<AffineElement>,
    pub source1: BlobImage,
    pub source2: BlobImage,
}

impl CorpusPair {
    pub fn is_matched(&self) -> bool {
        self.truth.is_some()
    }
}

/// Settings shared by the generated pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusSpec {
    pub geometry: GridGeometry,
    pub blobs: BlobSpec,
    pub affine: AffineSpec,
    /// Amplitude of the smooth perturbation added to matched partners.
    pub perturbation: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            geometry: GridGeometry::centered(32, 32, 1.0).expect("valid geometry"),
            blobs: BlobSpec::default(),
            affine: AffineSpec::default(),
            perturbation: 0.05,
        }
    }
}

fn perturbation<R: Rng>(rng: &mut R, amplitude: f64) -> BlobImage {
    if amplitude == 0.0 {
        return BlobImage::default();
    }
    let spec = BlobSpec { count: 1, center_radius: 3.0, sigma: [2.5, 3.5], amplitude: [amplitude, amplitude] };
    BlobImage::random(rng, &spec)
}

pub fn matched_pair<R: Rng>(rng: &mut R, spec: &CorpusSpec) -> Result<CorpusPair> {
    let source1 = BlobImage::random(rng, &spec.blobs);
    let g = random_affine(rng, &spec.affine);
    let source2 = source1.pullback(&g)?.plus(&perturbation(rng, spec.perturbation));
    Ok(CorpusPair {
        f1: source1.sample(spec.geometry),
        f2: source2.sample(spec.geometry),
        truth: Some(g),
        source1,
        source2,
    })
}

pub fn unmatched_pair<R: Rng>(rng: &mut R, spec: &CorpusSpec) -> CorpusPair {
    let source1 = BlobImage::random(rng, &spec.blobs);
    let source2 = BlobImage::random(rng, &spec.blobs);
    CorpusPair { f1: source1.sample(spec.geometry), f2: source2.sample(spec.geometry), truth: None, source1, source2 }
}

/// `matched` matched pairs followed by `unmatched` unmatched pairs, from one seed.
pub fn generate(seed: u64, matched: usize, unmatched: usize, spec: &CorpusSpec) -> Result<Vec<CorpusPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(matched + unmatched);
    for _ in 0..matched {
        out.push(matched_pair(&mut rng, spec)?);
    }
    for _ in 0..unmatched {
        out.push(unmatched_pair(&mut rng, spec));
    }
    Ok(out)
}
