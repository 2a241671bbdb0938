//! Sampled planar signals and their Fourier transforms.

pub mod fourier;
pub mod grid;
pub mod io;

pub use fourier::{affine_spectrum, circular_convolve, dft, dft_padded, idft, Fft2, Spectrum2};
pub use grid::{Grid2, GridGeometry};
