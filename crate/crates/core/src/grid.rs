//! The 2n×n multiplication grid and its network-facing encoding.
//!
//! Cell `(i, j)` carries weight `2^(i+j)`. The top `n` rows start as the
//! outer product `a_i · b_j`; the bottom `n` rows start empty and absorb
//! carries. Column 0 ends up holding the product, LSB at row 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::BitVec;
use crate::rule;

/// Integer cell lattice with `rows = 2n` and `cols = n`, stored row-major.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Grid {
    n: usize,
    cells: Vec<u32>,
}

impl Grid {
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::ZeroWidth);
        }
        Ok(Grid {
            n,
            cells: vec![0; 2 * n * n],
        })
    }

    /// Build from row-major rows; the shape must be `2n × n`.
    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 || height != 2 * width || rows.iter().any(|r| r.len() != width) {
            return Err(Error::ShapeMismatch {
                expected: (2 * width.max(1), width.max(1)),
                got: (height, width),
            });
        }
        Ok(Grid {
            n: width,
            cells: rows.concat(),
        })
    }

    pub(crate) fn from_cells(n: usize, cells: Vec<u32>) -> Self {
        debug_assert_eq!(cells.len(), 2 * n * n);
        Grid { n, cells }
    }

    /// Operand bit width.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        2 * self.n
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.cells[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: u32) {
        self.cells[i * self.n + j] = v;
    }

    /// Row-major cell values.
    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [u32] {
        &mut self.cells
    }

    pub fn column(&self, j: usize) -> Vec<u32> {
        (0..self.rows()).map(|i| self.get(i, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<u32>> {
        self.cells.chunks(self.n).map(<[u32]>::to_vec).collect()
    }

    /// `Σ cell(i,j) · 2^(i+j)` as an exact integer.
    pub fn weighted_sum(&self) -> BitVec {
        // Sum per anti-diagonal first (small integers), then shift-add.
        let mut diag = vec![0u64; self.rows() + self.cols()];
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                diag[i + j] += u64::from(self.get(i, j));
            }
        }
        diag.iter()
            .enumerate()
            .filter(|(_, &d)| d != 0)
            .fold(BitVec::zero(), |acc, (k, &d)| acc.add(&BitVec::from_u64(d).shl(k)))
    }

    pub fn max_cell(&self) -> u32 {
        self.cells.iter().copied().max().unwrap_or(0)
    }

    /// One line per row, cells separated by single spaces.
    pub fn to_ascii(&self) -> String {
        let mut out = String::new();
        for row in self.cells.chunks(self.n) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn to_frame(&self) -> GridFrame {
        GridFrame {
            n: self.n,
            rows: self.rows(),
            cols: self.cols(),
            cells: self.to_rows(),
        }
    }
}

/// Serialized trace frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridFrame {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Vec<u32>>,
}

impl TryFrom<GridFrame> for Grid {
    type Error = Error;

    fn try_from(frame: GridFrame) -> Result<Self> {
        let g = Grid::from_rows(&frame.cells)?;
        if g.n != frame.n || g.rows() != frame.rows || g.cols() != frame.cols {
            return Err(Error::ShapeMismatch {
                expected: (frame.rows, frame.cols),
                got: g.shape(),
            });
        }
        Ok(g)
    }
}

/// Lay two operands out as the outer product `cell(i,j) = a_i · b_j` in the
/// top `n` rows of a `2n × n` grid.
pub fn outer_product_encode(a: &BitVec, b: &BitVec, n: usize) -> Result<Grid> {
    if n == 0 {
        return Err(Error::ZeroWidth);
    }
    for x in [a, b] {
        // Zero is stored as one bit and fits any width.
        if !x.is_zero() && x.len() > n {
            return Err(Error::OperandTooWide { len: x.len(), n });
        }
    }
    let mut g = Grid::zeros(n)?;
    for i in 0..n {
        if a.bit(i) == 0 {
            continue;
        }
        for j in 0..n {
            g.set(i, j, u32::from(b.bit(j)));
        }
    }
    Ok(g)
}

/// Read the product from column 0 of a converged grid.
pub fn decode_product(g: &Grid) -> Result<BitVec> {
    if !rule::is_fixed_point(g) {
        return Err(Error::NotFixedPoint);
    }
    Ok(BitVec::from_bits(g.column(0).into_iter().map(|v| v as u8)))
}

/// Two-channel `{v, cos(πv)}` view of a grid with a one-cell halo of `-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedGrid {
    height: usize,
    width: usize,
    /// Channel-major: `[channel][y][x]`.
    data: Vec<f64>,
}

pub const HALO: f64 = -1.0;

/// Parity channel value. Integers map to exactly `±1`.
#[inline]
pub fn parity(v: f64) -> f64 {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        if (v as i64) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    } else {
        (std::f64::consts::PI * v).cos()
    }
}

impl EncodedGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Interior shape, i.e. the shape of the grid that was encoded.
    pub fn interior_shape(&self) -> (usize, usize) {
        (self.height - 2, self.width - 2)
    }

    #[inline]
    pub fn at(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }
}

pub fn parity_encode(g: &Grid) -> EncodedGrid {
    let (rows, cols) = g.shape();
    let height = rows + 2;
    let width = cols + 2;
    let plane = height * width;
    let mut data = vec![HALO; 2 * plane];
    for i in 0..rows {
        for j in 0..cols {
            let v = f64::from(g.get(i, j));
            let k = (i + 1) * width + (j + 1);
            data[k] = v;
            data[plane + k] = parity(v);
        }
    }
    EncodedGrid {
        height,
        width,
        data,
    }
}
