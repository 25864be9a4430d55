//! Regular lattice geometry.
//!
//! Cells live on an `n_rows x n_cols` grid and are identified by row-major
//! ids `0..n_cells`. Adjacency is the 4-neighborhood (N/S/E/W) with no
//! wrap-around; border cells simply have fewer neighbors. This is the graph
//! on which the spatial precision operator is built, so neighbor enumeration
//! order is fixed (north, south, west, east) to keep every assembled matrix
//! reproducible.

use crate::error::{Error, Result};

/// A rectangular grid of cells with row-major ids and 4-neighborhood adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lattice {
    n_rows: usize,
    n_cols: usize,
}

/// Build a lattice, validating that both dimensions are at least 1.
pub fn build_lattice(n_rows: usize, n_cols: usize) -> Result<Lattice> {
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "lattice dimensions must be positive, got {n_rows} x {n_cols}"
        )));
    }
    Ok(Lattice { n_rows, n_cols })
}

impl Lattice {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// Row-major id of the cell at `(row, col)`.
    pub fn cell_id(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        row * self.n_cols + col
    }

    /// Inverse of [`Lattice::cell_id`].
    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        debug_assert!(cell < self.n_cells());
        (cell / self.n_cols, cell % self.n_cols)
    }

    /// 4-neighbors of `cell` in fixed (north, south, west, east) order.
    pub fn neighbors(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = self.row_col(cell);
        let north = (r > 0).then(|| self.cell_id(r - 1, c));
        let south = (r + 1 < self.n_rows).then(|| self.cell_id(r + 1, c));
        let west = (c > 0).then(|| self.cell_id(r, c - 1));
        let east = (c + 1 < self.n_cols).then(|| self.cell_id(r, c + 1));
        [north, south, west, east].into_iter().flatten()
    }

    /// Number of 4-neighbors (2 at corners, 3 on edges, 4 in the interior).
    pub fn degree(&self, cell: usize) -> usize {
        self.neighbors(cell).count()
    }
}
