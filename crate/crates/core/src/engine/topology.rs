use std::ops::Range;

/// What occupies a grid position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    /// SRAM H-Unit paired with a B-ROM L-Unit.
    Matrix,
    Vector,
}

/// Unit grid: one row of vector units splitting two matrix-unit arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChipTopology {
    pub rows: usize,
    pub cols: usize,
    pub vector_row: usize,
}

impl ChipTopology {
    /// 17 × 16 grid, vector row in the middle.
    pub fn roma() -> Self {
        Self { rows: 17, cols: 16, vector_row: 8 }
    }

    pub fn unit_at(&self, row: usize, col: usize) -> Option<UnitKind> {
        if row >= self.rows || col >= self.cols {
            None
        } else if row == self.vector_row {
            Some(UnitKind::Vector)
        } else {
            Some(UnitKind::Matrix)
        }
    }

    pub fn matrix_units(&self) -> usize {
        (self.rows - 1) * self.cols
    }

    pub fn vector_units(&self) -> usize {
        self.cols
    }

    /// Matrix units above and below the vector row.
    pub fn matrix_arrays(&self) -> [(usize, usize); 2] {
        [(self.vector_row, self.cols), (self.rows - self.vector_row - 1, self.cols)]
    }

    /// Even split of `rows` output rows over the columns; earlier columns
    /// take the remainder.
    pub fn partition_rows(&self, rows: usize) -> Vec<Range<usize>> {
        let (base, extra) = (rows / self.cols, rows % self.cols);
        let mut start = 0;
        (0..self.cols)
            .map(|c| {
                let n = base + usize::from(c < extra);
                let r = start..start + n;
                start += n;
                r
            })
            .collect()
    }
}

impl Default for ChipTopology {
    fn default() -> Self {
        Self::roma()
    }
}
