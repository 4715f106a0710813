//! Rotary position embeddings for 2D token grids.
//!
//! Frequencies follow a geometric series `theta_d = theta_base^(d / (D - 1))`,
//! so `theta_0 = 1` and, with the default `theta_base = 1e-4`, frequencies
//! decrease with `d`. Axial application rotates the first half of every head
//! vector by the horizontal coordinate and the second half by the vertical one.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default `theta_base`, the reciprocal of the conventional base 10000.
pub const DEFAULT_THETA_BASE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    theta: Vec<f64>,
    wavelength: Vec<f64>,
    theta_base: f64,
}

impl FrequencyTable {
    /// Builds the geometric frequency table with `pairs` entries.
    pub fn new(pairs: usize, theta_base: f64) -> Result<Self> {
        if pairs < 2 {
            return Err(Error::InvalidDimension(format!(
                "frequency table needs at least 2 pairs, got {pairs}"
            )));
        }
        if !(theta_base > 0.0) || theta_base == 1.0 || !theta_base.is_finite() {
            return Err(Error::InvalidBase(theta_base));
        }
        let last = (pairs - 1) as f64;
        let theta = (0..pairs).map(|d| theta_base.powf(d as f64 / last)).collect();
        Ok(Self::from_parts(theta, theta_base))
    }

    fn from_parts(theta: Vec<f64>, theta_base: f64) -> Self {
        let wavelength = theta.iter().map(|&th| TAU / th).collect();
        Self {
            theta,
            wavelength,
            theta_base,
        }
    }

    /// A table sharing this table's base with transformed frequencies.
    pub(crate) fn with_theta(&self, theta: Vec<f64>) -> Self {
        debug_assert_eq!(theta.len(), self.theta.len());
        Self::from_parts(theta, self.theta_base)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn wavelength(&self) -> &[f64] {
        &self.wavelength
    }

    pub fn theta_base(&self) -> f64 {
        self.theta_base
    }

    /// Number of frequency pairs `D`.
    pub fn pairs(&self) -> usize {
        self.theta.len()
    }
}

/// Free-function form of [`FrequencyTable::new`].
pub fn build_frequency_table(pairs: usize, theta_base: f64) -> Result<FrequencyTable> {
    FrequencyTable::new(pairs, theta_base)
}

/// Training context `L` and inference context `L'` along one axis, in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisContext {
    pub train: usize,
    pub test: usize,
}

impl AxisContext {
    pub fn new(train: usize, test: usize) -> Result<Self> {
        if train == 0 || test == 0 {
            return Err(Error::InvalidParameter(format!(
                "context lengths must be positive (train {train}, test {test})"
            )));
        }
        Ok(Self { train, test })
    }

    /// Context equal to the token count, `s = 1`.
    pub fn native(len: usize) -> Self {
        Self { train: len, test: len }
    }

    /// `s = L' / L`.
    pub fn scale(&self) -> f64 {
        self.test as f64 / self.train as f64
    }
}

/// Token coordinates of a `height x width` grid, row-major (`y` outer).
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGrid {
    height: usize,
    width: usize,
    positions_y: Vec<f64>,
    positions_x: Vec<f64>,
    context_y: AxisContext,
    context_x: AxisContext,
}

impl PositionGrid {
    /// Integer token indices with each axis at its native context.
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty grid {height}x{width}")));
        }
        Ok(Self {
            height,
            width,
            positions_y: (0..height).map(|i| i as f64).collect(),
            positions_x: (0..width).map(|i| i as f64).collect(),
            context_y: AxisContext::native(height),
            context_x: AxisContext::native(width),
        })
    }

    pub fn with_context(mut self, context_x: AxisContext, context_y: AxisContext) -> Self {
        self.context_x = context_x;
        self.context_y = context_y;
        self
    }

    /// Applies the position maps `g_x(m) = m / divisor_x`, `g_y(m) = m / divisor_y`.
    pub fn remapped(&self, divisor_x: f64, divisor_y: f64) -> Result<Self> {
        for d in [divisor_x, divisor_y] {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "position divisor must be positive, got {d}"
                )));
            }
        }
        let mut out = self.clone();
        out.positions_x.iter_mut().for_each(|m| *m /= divisor_x);
        out.positions_y.iter_mut().for_each(|m| *m /= divisor_y);
        Ok(out)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn positions_x(&self) -> &[f64] {
        &self.positions_x
    }

    pub fn positions_y(&self) -> &[f64] {
        &self.positions_y
    }

    pub fn context_x(&self) -> AxisContext {
        self.context_x
    }

    pub fn context_y(&self) -> AxisContext {
        self.context_y
    }
}

/// Per-token query or key vectors of one attention head, token-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadVectors {
    tokens: usize,
    width: usize,
    values: Vec<f64>,
}

impl HeadVectors {
    pub fn new(tokens: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || !width.is_multiple_of(4) {
            return Err(Error::Shape(format!(
                "head width {width} must be a positive multiple of 4"
            )));
        }
        if values.len() != tokens * width {
            return Err(Error::Shape(format!(
                "expected {} values for {tokens} tokens of width {width}, got {}",
                tokens * width,
                values.len()
            )));
        }
        Ok(Self { tokens, width, values })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Embedding width of one token (`d_model` of the head).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Precomputed rotation angles for every token of a grid.
///
/// Row layout of a head vector of width `4 * D`: pairs `(2d, 2d + 1)` for
/// `d < D` rotate with the x coordinate, pairs starting at `2 * D` with y.
#[derive(Debug, Clone)]
pub struct AxialRotation {
    pairs: usize,
    width: usize,
    // Per token: D (cos, sin) for x, then D for y.
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl AxialRotation {
    pub fn new(grid: &PositionGrid, table_x: &FrequencyTable, table_y: &FrequencyTable) -> Result<Self> {
        let pairs = table_x.pairs();
        if table_y.pairs() != pairs {
            return Err(Error::Shape(format!(
                "axis tables disagree on pair count ({} vs {})",
                pairs,
                table_y.pairs()
            )));
        }
        let n = grid.tokens();
        let mut cos = Vec::with_capacity(n * 2 * pairs);
        let mut sin = Vec::with_capacity(n * 2 * pairs);
        for &my in grid.positions_y() {
            for &mx in grid.positions_x() {
                for (m, table) in [(mx, table_x), (my, table_y)] {
                    for &th in table.theta() {
                        let (s, c) = (m * th).sin_cos();
                        cos.push(c);
                        sin.push(s);
                    }
                }
            }
        }
        Ok(Self {
            pairs,
            width: 4 * pairs,
            cos,
            sin,
        })
    }

    pub fn tokens(&self) -> usize {
        self.cos.len() / (2 * self.pairs)
    }

    /// Head width this rotation applies to.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Rotates one head vector of `token` in place.
    #[inline]
    pub fn rotate(&self, token: usize, v: &mut [f64]) {
        self.rotate_signed(token, v, 1.0);
    }

    /// Applies the inverse (transpose) rotation, used for gradients.
    #[inline]
    pub fn rotate_inverse(&self, token: usize, v: &mut [f64]) {
        self.rotate_signed(token, v, -1.0);
    }

    #[inline]
    fn rotate_signed(&self, token: usize, v: &mut [f64], sign: f64) {
        debug_assert_eq!(v.len(), self.width);
        let base = token * 2 * self.pairs;
        let cos = &self.cos[base..base + 2 * self.pairs];
        let sin = &self.sin[base..base + 2 * self.pairs];
        for (k, (&c, &s)) in cos.iter().zip(sin).enumerate() {
            let s = sign * s;
            let a = v[2 * k];
            let b = v[2 * k + 1];
            v[2 * k] = a * c - b * s;
            v[2 * k + 1] = a * s + b * c;
        }
    }
}

/// Rotates every token of `vectors` by its grid coordinates.
pub fn apply_axial_rope(
    vectors: &HeadVectors,
    grid: &PositionGrid,
    table_x: &FrequencyTable,
    table_y: &FrequencyTable,
) -> Result<HeadVectors> {
    if vectors.width() / 4 != table_x.pairs() || vectors.width() / 4 != table_y.pairs() {
        return Err(Error::Shape(format!(
            "head width {} needs {} pairs per axis, tables have {} and {}",
            vectors.width(),
            vectors.width() / 4,
            table_x.pairs(),
            table_y.pairs()
        )));
    }
    if vectors.tokens() != grid.tokens() {
        return Err(Error::Shape(format!(
            "{} tokens for a {}x{} grid",
            vectors.tokens(),
            grid.height(),
            grid.width()
        )));
    }
    let rotation = AxialRotation::new(grid, table_x, table_y)?;
    let mut values = vectors.values.clone();
    for (i, row) in values.chunks_exact_mut(vectors.width).enumerate() {
        rotation.rotate(i, row);
    }
    HeadVectors::new(vectors.tokens, vectors.width, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_of_series() {
        let t = FrequencyTable::new(2, 1e-4).unwrap();
        assert_eq!(t.theta(), &[1.0, 1e-4]);
        let t = FrequencyTable::new(16, 0.37).unwrap();
        assert_eq!(t.theta()[0], 1.0);
    }

    #[test]
    fn mid_table_value() {
        // (1e-4)^(32/63) = 10^(-128/63), evaluated independently with mpmath at 30 digits.
        let expected = 9.295_097_898_806_491e-3_f64;
        let t = FrequencyTable::new(64, 1e-4).unwrap();
        assert!(((t.theta()[32] - expected) / expected).abs() < 1e-6);
    }

    #[test]
    fn table_errors() {
        assert!(matches!(FrequencyTable::new(1, 1e-4), Err(Error::InvalidDimension(_))));
        assert!(matches!(FrequencyTable::new(8, 0.0), Err(Error::InvalidBase(_))));
        assert!(matches!(FrequencyTable::new(8, -2.0), Err(Error::InvalidBase(_))));
        assert!(matches!(FrequencyTable::new(8, 1.0), Err(Error::InvalidBase(_))));
    }

    #[test]
    fn table_invariants() {
        for base in [1e-4, 10_000.0] {
            let t = FrequencyTable::new(12, base).unwrap();
            for w in t.theta().windows(2) {
                if base < 1.0 {
                    assert!(w[1] < w[0]);
                } else {
                    assert!(w[1] > w[0]);
                }
            }
            for (th, wl) in t.theta().iter().zip(t.wavelength()) {
                assert!((th * wl - TAU).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_position_is_identity() {
        let grid = PositionGrid::new(1, 1).unwrap();
        let table = FrequencyTable::new(2, 1e-4).unwrap();
        let v = HeadVectors::new(1, 8, (0..8).map(|i| i as f64 - 3.5).collect()).unwrap();
        let out = apply_axial_rope(&v, &grid, &table, &table).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn shape_mismatch() {
        let grid = PositionGrid::new(2, 2).unwrap();
        let table = FrequencyTable::new(2, 1e-4).unwrap();
        let v = HeadVectors::new(4, 12, vec![0.0; 48]).unwrap();
        assert!(matches!(
            apply_axial_rope(&v, &grid, &table, &table),
            Err(Error::Shape(_))
        ));
        let v = HeadVectors::new(3, 8, vec![0.0; 24]).unwrap();
        assert!(matches!(
            apply_axial_rope(&v, &grid, &table, &table),
            Err(Error::Shape(_))
        ));
        assert!(HeadVectors::new(2, 6, vec![0.0; 12]).is_err());
    }

    #[test]
    fn halves_rotate_by_their_own_axis() {
        // Token at (y=0, x=1): only the horizontal half moves.
        let grid = PositionGrid::new(1, 2).unwrap();
        let table = FrequencyTable::new(2, 0.5).unwrap();
        let v = HeadVectors::new(2, 8, vec![1.0; 16]).unwrap();
        let out = apply_axial_rope(&v, &grid, &table, &table).unwrap();
        let tok = out.token(1);
        assert_eq!(&tok[4..], &[1.0; 4]);
        let (s, c) = 1.0f64.sin_cos();
        assert!((tok[0] - (c - s)).abs() < 1e-15);
        assert!((tok[1] - (s + c)).abs() < 1e-15);
    }

    #[test]
    fn inverse_undoes_rotation() {
        let grid = PositionGrid::new(3, 5).unwrap();
        let table = FrequencyTable::new(3, 1e-2).unwrap();
        let rot = AxialRotation::new(&grid, &table, &table).unwrap();
        let orig: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut v = orig.clone();
        rot.rotate(13, &mut v);
        rot.rotate_inverse(13, &mut v);
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn rotation_preserves_norm(values in proptest::collection::vec(-10.0f64..10.0, 6 * 16)) {
            let grid = PositionGrid::new(2, 3).unwrap();
            let table = FrequencyTable::new(4, 1e-4).unwrap();
            let v = HeadVectors::new(6, 16, values).unwrap();
            let out = apply_axial_rope(&v, &grid, &table, &table).unwrap();
            for i in 0..6 {
                let a: f64 = v.token(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                let b: f64 = out.token(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
            }
        }
    }
}
