use super::NumericError;

/// Boolean query × key permission matrix; `true` means the pair may attend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttendMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttendMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self { rows, cols, allowed: vec![true; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut permitted: impl FnMut(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(permitted(i, j));
            }
        }
        Self { rows, cols, allowed }
    }

    pub fn from_rows(rows: &[&[bool]]) -> Result<Self, NumericError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericError::Shape("ragged mask rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            allowed: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
    }

    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.allowed[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }

    /// Elementwise AND with another mask of the same shape.
    pub fn and(&self, other: &AttendMask) -> Result<AttendMask, NumericError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(NumericError::Shape(format!(
                "mask {}x{} combined with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            allowed: self.allowed.iter().zip(&other.allowed).map(|(a, b)| *a && *b).collect(),
        })
    }

    /// Forbids every key column flagged in `key_pad`.
    pub fn without_keys(mut self, key_pad: &[bool]) -> Self {
        assert_eq!(key_pad.len(), self.cols, "key pad length");
        for i in 0..self.rows {
            for (j, &pad) in key_pad.iter().enumerate() {
                if pad {
                    self.allowed[i * self.cols + j] = false;
                }
            }
        }
        self
    }

    /// True when every row has at least one permitted column.
    pub fn every_row_attends(&self) -> bool {
        (0..self.rows).all(|i| self.row(i).iter().any(|&a| a))
    }

    pub fn count_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }
}
