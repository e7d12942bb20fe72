use crate::error::{invalid_input, invalid_param, Result};

/// Row-major `f32` matrix whose entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid_input(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid_input(format!(
                "non-finite matrix entry at row {}, col {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid_input("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    /// Overwrites row `i`. Panics on length mismatch or non-finite values.
    pub fn set_row(&mut self, i: usize, values: &[f32]) {
        assert_eq!(values.len(), self.cols, "row width mismatch");
        assert!(values.iter().all(|v| v.is_finite()), "non-finite row");
        self.data[i * self.cols..(i + 1) * self.cols].copy_from_slice(values);
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Scales every row to unit Euclidean norm. All-zero rows pass through.
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    if m.rows == 0 || m.cols == 0 {
        return Err(invalid_input(format!(
            "cannot normalize a {}x{} matrix",
            m.rows, m.cols
        )));
    }
    let mut data = Vec::with_capacity(m.data.len());
    for row in m.iter_rows() {
        let norm = dot(row, row).sqrt();
        if norm == 0.0 {
            data.extend_from_slice(row);
        } else {
            data.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        }
    }
    Ok(Matrix {
        rows: m.rows,
        cols: m.cols,
        data,
    })
}

/// `a · bᵀ`, i.e. entry `(i, j)` is the dot product of row `i` of `a` with row `j` of `b`.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(invalid_input(format!(
            "inner dimension mismatch: {} vs {}",
            a.cols, b.cols
        )));
    }
    let mut data = Vec::with_capacity(a.rows * b.rows);
    for ra in a.iter_rows() {
        for rb in b.iter_rows() {
            data.push(dot(ra, rb) as f32);
        }
    }
    Ok(Matrix {
        rows: a.rows,
        cols: b.rows,
        data,
    })
}

/// Row-wise softmax of `m / tau`, max-subtracted, evaluated in `f64`.
pub fn row_softmax(m: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid_param(format!("temperature must be > 0, got {tau}")));
    }
    let mut data = Vec::with_capacity(m.data.len());
    let mut buf = vec![0.0f64; m.cols];
    for row in m.iter_rows() {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let mut sum = 0.0;
        for (e, &v) in buf.iter_mut().zip(row) {
            *e = ((v as f64 - max) / tau).exp();
            sum += *e;
        }
        data.extend(buf.iter().map(|e| (e / sum) as f32));
    }
    Ok(Matrix {
        rows: m.rows,
        cols: m.cols,
        data,
    })
}
