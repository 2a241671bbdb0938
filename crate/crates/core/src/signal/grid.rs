use serde::{Deserialize, Serialize};

use crate::affine::AffineElement;
use crate::error::{Error, Result};

/// Placement of a regular grid in the plane.
///
/// Node `(row, col)` sits at `(origin[0] + col * spacing, origin[1] + row * spacing)`,
/// so `x` runs along columns and `y` along rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub height: usize,
    pub width: usize,
    pub origin: [f64; 2],
    pub spacing: f64,
}

impl GridGeometry {
    pub fn new(height: usize, width: usize, origin: [f64; 2], spacing: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidGrid(format!("empty grid {height}x{width}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        if !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        Ok(GridGeometry { height, width, origin, spacing })
    }

    /// Grid whose node hull is centered on the origin of the plane.
    pub fn centered(height: usize, width: usize, spacing: f64) -> Result<Self> {
        let ox = -0.5 * (width as f64 - 1.0) * spacing;
        let oy = -0.5 * (height as f64 - 1.0) * spacing;
        Self::new(height, width, [ox, oy], spacing)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, row: usize, col: usize) -> [f64; 2] {
        [self.origin[0] + col as f64 * self.spacing, self.origin[1] + row as f64 * self.spacing]
    }

    pub fn position_of(&self, index: usize) -> [f64; 2] {
        self.position(index / self.width, index % self.width)
    }

    /// Area element `spacing^2`.
    pub fn cell_area(&self) -> f64 {
        self.spacing * self.spacing
    }

    /// Fractional `(col, row)` coordinates of a point.
    pub fn fractional(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.origin[0]) / self.spacing, (p[1] - self.origin[1]) / self.spacing]
    }

    pub fn same_as(&self, other: &GridGeometry) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.spacing == other.spacing
            && self.origin == other.origin
    }

    pub fn check_same(&self, other: &GridGeometry) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("grid {self:?} differs from {other:?}")))
        }
    }
}

/// A sampled planar signal, zero outside the hull of its nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    geometry: GridGeometry,
    values: Vec<f64>,
}

impl Grid2 {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                geometry.height,
                geometry.width
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at index {i}")));
        }
        Ok(Grid2 { geometry, values })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        Grid2 { values: vec![0.0; geometry.len()], geometry }
    }

    pub fn constant(geometry: GridGeometry, value: f64) -> Self {
        Grid2 { values: vec![value; geometry.len()], geometry }
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(geometry: GridGeometry, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..geometry.len())
            .map(|i| {
                let p = geometry.position_of(i);
                f(p[0], p[1])
            })
            .collect();
        Grid2 { geometry, values }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn spacing(&self) -> f64 {
        self.geometry.spacing
    }

    pub fn origin(&self) -> [f64; 2] {
        self.geometry.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.geometry.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.geometry.width + col] = value;
    }

    /// Bilinear interpolation inside the node hull, zero outside.
    pub fn sample(&self, p: [f64; 2]) -> f64 {
        let g = &self.geometry;
        let [fx, fy] = g.fractional(p);
        let wmax = (g.width - 1) as f64;
        let hmax = (g.height - 1) as f64;
        if !(fx >= 0.0 && fx <= wmax && fy >= 0.0 && fy <= hmax) {
            return 0.0;
        }
        let (j0, tx) = split_cell(fx, g.width);
        let (i0, ty) = split_cell(fy, g.height);
        let j1 = (j0 + 1).min(g.width - 1);
        let i1 = (i0 + 1).min(g.height - 1);
        let v00 = self.get(i0, j0);
        let v01 = self.get(i0, j1);
        let v10 = self.get(i1, j0);
        let v11 = self.get(i1, j1);
        let top = (1.0 - tx) * v00 + tx * v01;
        let bot = (1.0 - tx) * v10 + tx * v11;
        (1.0 - ty) * top + ty * bot
    }

    /// The regular representation `(rho(g) f)(x) = f(g^-1 x)` resampled on the same nodes.
    pub fn act(&self, g: &AffineElement) -> Result<Grid2> {
        let gi = g.invert()?;
        Ok(Grid2::from_fn(self.geometry, |x, y| self.sample(gi.apply([x, y]))))
    }

    /// `sum |v| * spacing^2`.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.geometry.cell_area()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `(l1, sup)`.
    pub fn norms(&self) -> (f64, f64) {
        (self.l1_norm(), self.sup_norm())
    }

    /// `sum v * spacing^2`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.geometry.cell_area()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2 {
        Grid2 { geometry: self.geometry, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, k: f64) -> Grid2 {
        self.map(|v| k * v)
    }

    pub fn zip_with(&self, other: &Grid2, f: impl Fn(f64, f64) -> f64) -> Result<Grid2> {
        self.geometry.check_same(&other.geometry)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Grid2 { geometry: self.geometry, values })
    }

    pub fn sub(&self, other: &Grid2) -> Result<Grid2> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Grid2) -> Result<Grid2> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Largest `|v|` on the support of the signal, i.e. the radius of the node hull.
    pub fn support_radius(&self) -> f64 {
        let g = &self.geometry;
        let corners = [
            g.position(0, 0),
            g.position(0, g.width - 1),
            g.position(g.height - 1, 0),
            g.position(g.height - 1, g.width - 1),
        ];
        corners.iter().map(|c| c[0].hypot(c[1])).fold(0.0, f64::max)
    }
}

fn split_cell(f: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    // Snap round-off so that nodes reproduce their stored values exactly.
    let r = f.round();
    let f = if (f - r).abs() < 1e-9 { r } else { f };
    let i = (f.floor() as usize).min(n - 2);
    (i, f - i as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::Mat2;
    use proptest::prelude::*;

    fn gaussian(geom: GridGeometry, sigma: f64, c: [f64; 2]) -> Grid2 {
        Grid2::from_fn(geom, |x, y| (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (2.0 * sigma * sigma)).exp())
    }

    #[test]
    fn geometry_validation() {
        assert!(GridGeometry::new(0, 3, [0.0, 0.0], 1.0).is_err());
        assert!(GridGeometry::new(3, 3, [0.0, 0.0], 0.0).is_err());
        assert!(GridGeometry::new(3, 3, [f64::NAN, 0.0], 1.0).is_err());
        let g = GridGeometry::centered(3, 5, 0.5).unwrap();
        assert_eq!(g.position(1, 2), [0.0, 0.0]);
        assert!(Grid2::new(g, vec![0.0; 14]).is_err());
        assert!(Grid2::new(g, vec![f64::INFINITY; 15]).is_err());
    }

    #[test]
    fn sample_conventions() {
        let g = GridGeometry::centered(4, 4, 1.0).unwrap();
        let ones = Grid2::constant(g, 1.0);
        assert_eq!(ones.sample([0.1, -0.3]), 1.0);
        assert_eq!(ones.sample([5.0, 0.0]), 0.0);
        assert_eq!(ones.sample([0.0, -1.6]), 0.0);

        let line = GridGeometry::new(1, 2, [0.0, 0.0], 1.0).unwrap();
        let f = Grid2::new(line, vec![0.0, 1.0]).unwrap();
        assert_eq!(f.sample([0.5, 0.0]), 0.5);
        assert_eq!(f.sample([1.0, 0.0]), 1.0);
    }

    #[test]
    fn on_grid_points_reproduce_values() {
        let g = GridGeometry::new(5, 7, [-1.0, 2.0], 0.25).unwrap();
        let f = Grid2::from_fn(g, |x, y| x * 3.0 - y * y);
        for i in 0..g.height {
            for j in 0..g.width {
                assert_eq!(f.sample(g.position(i, j)), f.get(i, j));
            }
        }
    }

    #[test]
    fn act_identity_and_translation() {
        let g = GridGeometry::centered(9, 9, 1.0).unwrap();
        let f = gaussian(g, 1.5, [0.0, 0.0]);
        assert_eq!(f.act(&AffineElement::identity()).unwrap(), f);
        let shifted = f.act(&AffineElement::translation([1.0, 0.0])).unwrap();
        for i in 0..9 {
            assert_eq!(shifted.get(i, 0), 0.0);
            for j in 1..9 {
                assert_eq!(shifted.get(i, j), f.get(i, j - 1));
            }
        }
    }

    #[test]
    fn norms_direct_formula() {
        let g = GridGeometry::new(1, 1, [0.0, 0.0], 0.5).unwrap();
        assert_eq!(Grid2::zeros(g).norms(), (0.0, 0.0));
        assert_eq!(Grid2::constant(g, 1.0).norms(), (0.25, 1.0));
    }

    #[test]
    fn gaussian_l1_matches_closed_form() {
        let sigma = 2.0;
        let g = GridGeometry::centered(81, 81, 0.25).unwrap();
        let f = gaussian(g, sigma, [0.0, 0.0]);
        let exact = 2.0 * std::f64::consts::PI * sigma * sigma;
        assert!((f.l1_norm() - exact).abs() / exact < 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        // Two bilinear resamplings of a Gaussian with sigma = 3 spacings already
        // differ from one by about 3%, so the width here is 5 spacings.
        fn representation_law(t1 in -0.4..0.4f64, t2 in -0.4..0.4f64, s1 in -0.2..0.2f64, s2 in -0.2..0.2f64,
                              x1 in -1.0..1.0f64, x2 in -1.0..1.0f64) {
            let geom = GridGeometry::centered(41, 41, 0.5).unwrap();
            let f = gaussian(geom, 2.5, [0.3, -0.2]);
            let g = AffineElement::new([x1, -x2], Mat2::rotation(t1).mul(&Mat2::diag(s1.exp(), 1.0))).unwrap();
            let h = AffineElement::new([x2, x1], Mat2::rotation(t2).mul(&Mat2::diag(1.0, s2.exp()))).unwrap();
            let two_step = f.act(&h).unwrap().act(&g).unwrap();
            let one_step = f.act(&g.compose(&h)).unwrap();
            let err = two_step.sub(&one_step).unwrap().sup_norm() / f.sup_norm();
            prop_assert!(err <= 2e-2, "err {}", err);
        }
    }
}
