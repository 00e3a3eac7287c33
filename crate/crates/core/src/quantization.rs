//! Axis-aligned boxes, uniform grids and nearest-center quantization.
//!
//! All distances here are infinity-norm distances, so a `delta`-ball is a
//! hypercube of half-width `delta`. A grid of size `delta` over a box places
//! `k_i = max(1, ceil(w_i / 2delta))` centers per axis, evenly spread so that
//! every point of the box lies within `delta` of a center.

use crate::{ceil_tol, Error, Result};

/// Closed axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperbox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Hyperbox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                what: "box bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(Error::InvalidArgument("box must have dimension >= 1".into()));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::NonFinite {
                    context: "box bounds",
                    coordinate: i,
                });
            }
            if l > h {
                return Err(Error::InvalidArgument(format!(
                    "box lower bound {l} exceeds upper bound {h} on axis {i}"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// Cube `[lo, hi]^dim`.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// The closed infinity-norm ball `B(center, radius)`.
    pub fn ball(center: &[f64], radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ball radius must be >= 0, got {radius}"
            )));
        }
        Self::new(
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Infinity-norm diameter, `max_i (hi_i - lo_i)`.
    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).fold(0.0, f64::max)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    /// Membership with an absolute slack `tol` on every face.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    /// Infinity-norm distance from `x` to the box (0 inside).
    pub fn excess(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .fold(0.0_f64, |acc, (v, (l, h))| acc.max(l - v).max(v - h))
    }
}

/// Uniform grid of half-cell radius `delta` over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    bounds: Hyperbox,
    delta: f64,
    counts: Vec<usize>,
}

/// Result of quantizing a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub center: Vec<f64>,
    pub index: Vec<usize>,
    /// Whether the point was inside the grid's box (it is clamped otherwise).
    pub inside: bool,
}

impl Grid {
    /// Builds `grid(bounds, delta)`.
    pub fn new(bounds: Hyperbox, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid size delta must be positive and finite, got {delta}"
            )));
        }
        let counts = (0..bounds.dim())
            .map(|i| axis_count(bounds.width(i), delta))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bounds,
            delta,
            counts,
        })
    }

    pub fn bounds(&self) -> &Hyperbox {
        &self.bounds
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Total number of centers, `prod_i k_i`; `None` on `u64` overflow.
    pub fn len(&self) -> Option<u64> {
        self.counts
            .iter()
            .try_fold(1u64, |acc, &k| acc.checked_mul(k as u64))
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of the `j`-th center on `axis`.
    pub fn center_coord(&self, axis: usize, j: usize) -> f64 {
        let k = self.counts[axis] as f64;
        let w = self.bounds.width(axis);
        self.bounds.lo[axis] + (2.0 * j as f64 + 1.0) * w / (2.0 * k)
    }

    pub fn center(&self, index: &[usize]) -> Vec<f64> {
        index
            .iter()
            .enumerate()
            .map(|(axis, &j)| self.center_coord(axis, j))
            .collect()
    }

    /// Nearest center per axis; ties go to the lower index and points outside
    /// the box clamp to the boundary cell.
    pub fn quantize(&self, x: &[f64]) -> Result<Quantized> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "quantized point",
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut index = Vec::with_capacity(self.dim());
        for (axis, &v) in x.iter().enumerate() {
            let k = self.counts[axis];
            let w = self.bounds.width(axis);
            let j = if k == 1 || w == 0.0 {
                0
            } else {
                let spacing = w / k as f64;
                let pos = (v - self.bounds.lo[axis]) / spacing - 0.5;
                let lower = pos.floor().clamp(0.0, (k - 1) as f64) as usize;
                let upper = (lower + 1).min(k - 1);
                let dl = (v - self.center_coord(axis, lower)).abs();
                let du = (v - self.center_coord(axis, upper)).abs();
                if du < dl {
                    upper
                } else {
                    lower
                }
            };
            index.push(j);
        }
        Ok(Quantized {
            center: self.center(&index),
            inside: self.bounds.contains(x, 0.0),
            index,
        })
    }

    /// Mixed-radix symbol for a center index; the first axis is the most
    /// significant digit.
    pub fn encode_index(&self, index: &[usize]) -> Result<u64> {
        if index.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "grid index",
                expected: self.dim(),
                got: index.len(),
            });
        }
        let mut symbol = 0u64;
        for (&j, &k) in index.iter().zip(&self.counts) {
            if j >= k {
                return Err(Error::InvalidArgument(format!(
                    "grid index {j} out of range 0..{k}"
                )));
            }
            symbol = symbol
                .checked_mul(k as u64)
                .and_then(|s| s.checked_add(j as u64))
                .ok_or_else(|| Error::InvalidArgument("grid symbol overflows u64".into()))?;
        }
        Ok(symbol)
    }

    /// Inverse of [`Grid::encode_index`].
    pub fn decode_index(&self, symbol: u64) -> Result<Vec<usize>> {
        match self.len() {
            Some(total) if symbol < total => {}
            _ => {
                return Err(Error::CorruptStream(format!(
                    "symbol {symbol} outside alphabet of size {:?}",
                    self.len()
                )))
            }
        }
        let mut rest = symbol;
        let mut index = vec![0usize; self.dim()];
        for axis in (0..self.dim()).rev() {
            let k = self.counts[axis] as u64;
            index[axis] = (rest % k) as usize;
            rest /= k;
        }
        Ok(index)
    }

    /// Enumerates every center, in symbol order.
    pub fn centers(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let total = self.len().unwrap_or(u64::MAX);
        (0..total).map(move |s| {
            let idx = self.decode_index(s).expect("symbol in range");
            self.center(&idx)
        })
    }
}

fn axis_count(width: f64, delta: f64) -> Result<usize> {
    let k = ceil_tol(width / (2.0 * delta)).max(1.0);
    if k > u32::MAX as f64 {
        return Err(Error::InvalidArgument(format!(
            "grid too fine: {k} centers on one axis"
        )));
    }
    Ok(k as usize)
}

/// Cell count `ceil(diam / 2delta)^dim` with the inner value floored at 1.
pub fn grid_count(diam: f64, delta: f64, dim: usize) -> Result<u64> {
    if !(delta > 0.0) || dim == 0 {
        return Err(Error::InvalidArgument(
            "grid_count needs delta > 0 and dim >= 1".into(),
        ));
    }
    let per_axis = ceil_tol(diam / (2.0 * delta)).max(1.0) as u64;
    (0..dim)
        .try_fold(1u64, |acc, _| acc.checked_mul(per_axis))
        .ok_or_else(|| Error::InvalidArgument("grid count overflows u64".into()))
}
