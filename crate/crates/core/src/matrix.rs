//! Minimal row-major f64 matrix used by the network and loss code.

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Matrix {
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self (n×m) · other (m×k)` → `n×k`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions disagree");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (j, &aj) in a.iter().enumerate() {
                if aj == 0.0 {
                    continue;
                }
                for (b, ob) in other.row(j).iter().zip(o.iter_mut()) {
                    *ob += aj * b;
                }
            }
        }
        out
    }

    /// `self (n×m) · otherᵀ (k×m)` → `n×k`.
    pub fn matmul_transpose_b(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "inner dimensions disagree");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                let dot: f64 = a.iter().zip(other.row(j)).map(|(x, y)| x * y).sum();
                out.set(i, j, dot);
            }
        }
        out
    }

    /// `selfᵀ (m×n) · other (m×k)` → `n×k`.
    pub fn matmul_transpose_a(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "inner dimensions disagree");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let o = out.row_mut(i);
                for (bj, oj) in b.iter().zip(o.iter_mut()) {
                    *oj += ai * bj;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree_on_a_known_product() {
        // A (2×3) · B (3×2)
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let b = Matrix::from_rows(&[vec![7.0, 8.0], vec![9.0, 10.0], vec![11.0, 12.0]]);
        let ab = a.matmul(&b);
        assert_eq!(ab.row(0), &[58.0, 64.0]);
        assert_eq!(ab.row(1), &[139.0, 154.0]);

        // A · Bᵀ via matmul_transpose_b with B stored transposed.
        let bt = Matrix::from_rows(&[vec![7.0, 9.0, 11.0], vec![8.0, 10.0, 12.0]]);
        assert_eq!(a.matmul_transpose_b(&bt), ab);

        // Aᵀ · C via matmul_transpose_a with A stored un-transposed.
        let c = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let at_c = a.matmul_transpose_a(&c);
        assert_eq!(at_c.row(0), &[1.0, 4.0]);
        assert_eq!(at_c.row(1), &[2.0, 5.0]);
        assert_eq!(at_c.row(2), &[3.0, 6.0]);
    }
}
