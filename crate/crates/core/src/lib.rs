//! Lifting, group convolution and projection over the affine group of the plane,
//! with Haar-measure quadrature through the Iwasawa chart of `GL2(R)`.

pub mod affine;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gconv;
pub mod haar;
pub mod invariance;
pub mod lifting;
pub mod signal;
pub mod studies;
pub mod sum;

pub use affine::{from_chart, iwasawa, AffineElement, ChartPoint, IwasawaFactors, Mat2, Sign};
pub use error::{Error, Result};
pub use signal::{Grid2, GridGeometry, Spectrum2};
pub use haar::{integrate_g1, integrate_g2, integrate_gl2, oracle_gl2, ChartAxis, G1Chart, QuadratureChart};
pub use lifting::{lift, lift_at, LiftedSignal};
pub use gconv::{gconv, gconv_at, project, GaussianBump, GconvPlan, MatrixFactor, SeparableKernel, SeparableTerm};
