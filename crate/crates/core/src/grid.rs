//! The Manhattan grid: quantization, cell centers, one-hot beliefs and
//! regression offsets.
//!
//! Flat indices are row-major with the row taken from `y` and the column
//! from `x`: `index = row * cols + col`.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-sum invariant of every belief map.
pub const BELIEF_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: (f64, f64),
    pub extent: (f64, f64),
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellIndex(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quantized {
    pub cell: CellIndex,
    /// The point lay outside the grid extent and was moved to the border.
    pub clamped: bool,
}

impl GridSpec {
    pub fn new(origin: (f64, f64), extent: (f64, f64), rows: usize, cols: usize) -> Result<Self> {
        let g = GridSpec {
            origin,
            extent,
            rows,
            cols,
        };
        g.validate()?;
        Ok(g)
    }

    /// A grid whose cells are unit squares starting at the origin.
    pub fn unit_cells(rows: usize, cols: usize) -> Result<Self> {
        GridSpec::new((0.0, 0.0), (cols as f64, rows as f64), rows, cols)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidArgument("grid needs at least one row and column".into()));
        }
        let (w, h) = self.extent;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidArgument("grid extent must be positive".into()));
        }
        if !(self.origin.0.is_finite() && self.origin.1.is_finite()) {
            return Err(Error::NonFinite("grid origin".into()));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (self.extent.0 / self.cols as f64, self.extent.1 / self.rows as f64)
    }

    pub fn index(&self, row: usize, col: usize) -> CellIndex {
        debug_assert!(row < self.rows && col < self.cols);
        CellIndex(row * self.cols + col)
    }

    pub fn row_col(&self, cell: CellIndex) -> (usize, usize) {
        (cell.0 / self.cols, cell.0 % self.cols)
    }

    pub fn check(&self, cell: CellIndex) -> Result<()> {
        if cell.0 < self.num_cells() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: cell.0,
                len: self.num_cells(),
            })
        }
    }

    /// The cell containing `p`; points outside the extent clamp to the
    /// nearest border cell with `clamped` set.
    pub fn quantize(&self, p: (f64, f64)) -> Result<Quantized> {
        if !(p.0.is_finite() && p.1.is_finite()) {
            return Err(Error::NonFinite(format!("point ({}, {})", p.0, p.1)));
        }
        let (cw, ch) = self.cell_size();
        let (col, cc) = axis_bin((p.0 - self.origin.0) / cw, self.cols);
        let (row, rc) = axis_bin((p.1 - self.origin.1) / ch, self.rows);
        Ok(Quantized {
            cell: self.index(row, col),
            clamped: cc || rc,
        })
    }

    pub fn cell_of(&self, p: (f64, f64)) -> Result<CellIndex> {
        self.quantize(p).map(|q| q.cell)
    }

    pub fn cell_center(&self, cell: CellIndex) -> Result<(f64, f64)> {
        self.check(cell)?;
        Ok(self.center_unchecked(cell))
    }

    pub(crate) fn center_unchecked(&self, cell: CellIndex) -> (f64, f64) {
        let (row, col) = self.row_col(cell);
        let (cw, ch) = self.cell_size();
        (
            self.origin.0 + (col as f64 + 0.5) * cw,
            self.origin.1 + (row as f64 + 0.5) * ch,
        )
    }

    /// Regression target `L - center(cell)`.
    pub fn offset_target(&self, p: (f64, f64), cell: CellIndex) -> Result<(f64, f64)> {
        let (cx, cy) = self.cell_center(cell)?;
        Ok((p.0 - cx, p.1 - cy))
    }

    pub fn one_hot(&self, cell: CellIndex) -> Result<BeliefMap> {
        self.check(cell)?;
        let mut values = vec![0.0; self.num_cells()];
        values[cell.0] = 1.0;
        Ok(BeliefMap::from_normalized(values))
    }

    /// Chebyshev distance between two cells, in cells.
    pub fn cell_distance(&self, a: CellIndex, b: CellIndex) -> usize {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        ra.abs_diff(rb).max(ca.abs_diff(cb))
    }
}

fn axis_bin(u: f64, n: usize) -> (usize, bool) {
    let k = u.floor();
    if k < 0.0 {
        (0, true)
    } else if k >= n as f64 {
        (n - 1, true)
    } else {
        (k as usize, false)
    }
}

/// A probability distribution over grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefMap {
    values: Vec<f64>,
}

impl BeliefMap {
    /// Validates non-negativity and unit sum.
    pub fn from_probs(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("belief map".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidDistribution("negative or non-finite mass".into()));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > BELIEF_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("mass sums to {sum}")));
        }
        Ok(BeliefMap::from_normalized(values))
    }

    /// Wraps values the caller has already normalized. Every such map is
    /// recorded by the belief audit.
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        audit::record(&values);
        BeliefMap { values }
    }

    pub fn uniform(n: usize) -> Self {
        BeliefMap::from_normalized(vec![1.0 / n as f64; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn prob(&self, cell: CellIndex) -> f64 {
        self.values[cell.0]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Most probable cell; ties go to the lowest index.
    pub fn argmax(&self) -> CellIndex {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        CellIndex(best)
    }
}

/// Per-cell 2D offsets from each cell center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetMap {
    pub offsets: Vec<(f64, f64)>,
}

impl OffsetMap {
    /// The same offset in every cell.
    pub fn constant(cells: usize, offset: (f64, f64)) -> Self {
        OffsetMap {
            offsets: vec![offset; cells],
        }
    }

    /// Continuous location `center(cell) + offset(cell)`.
    pub fn locate(&self, grid: &GridSpec, cell: CellIndex) -> Result<(f64, f64)> {
        let (cx, cy) = grid.cell_center(cell)?;
        let (dx, dy) = self.offsets[cell.0];
        Ok((cx + dx, cy + dy))
    }
}

/// Process-wide record of every belief map built by the toolkit, so tests can
/// assert the unit-sum invariant across a whole run.
pub mod audit {
    use super::*;

    static CHECKED: AtomicU64 = AtomicU64::new(0);
    static VIOLATIONS: AtomicU64 = AtomicU64::new(0);
    static WORST_BITS: AtomicU64 = AtomicU64::new(0);

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct BeliefAudit {
        pub checked: u64,
        pub violations: u64,
        /// Largest `|sum - 1|` (or a negative entry's magnitude) observed.
        pub worst_deviation: f64,
    }

    pub(super) fn record(values: &[f64]) {
        let sum: f64 = values.iter().sum();
        let neg = values.iter().fold(0.0f64, |m, &v| if v < 0.0 { m.max(-v) } else { m });
        let dev = (sum - 1.0).abs().max(neg);
        CHECKED.fetch_add(1, Ordering::Relaxed);
        if !(dev <= BELIEF_SUM_TOL) {
            VIOLATIONS.fetch_add(1, Ordering::Relaxed);
        }
        let dev = if dev.is_finite() { dev } else { f64::MAX };
        // non-negative floats order like their bit patterns
        WORST_BITS.fetch_max(dev.to_bits(), Ordering::Relaxed);
        debug_assert!(dev <= BELIEF_SUM_TOL, "belief map sums to {sum}");
    }

    pub fn snapshot() -> BeliefAudit {
        BeliefAudit {
            checked: CHECKED.load(Ordering::Relaxed),
            violations: VIOLATIONS.load(Ordering::Relaxed),
            worst_deviation: f64::from_bits(WORST_BITS.load(Ordering::Relaxed)),
        }
    }
}
