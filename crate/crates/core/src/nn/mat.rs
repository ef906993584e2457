//! Row-major `f64` matrices and a strided GEMM wrapper.

/// Strided read-only view into a buffer.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        Self { data, offset, rows, cols, rs, cs }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    fn check(&self, len: usize) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < len, "matrix view out of bounds");
        }
    }
}

/// `c = alpha·a·b + beta·c`, where `c` is the strided block of `out`
/// starting at `offset` with row stride `rs` and unit column stride.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, out: &mut [f64], offset: usize, rs: usize) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    a.check(a.data.len());
    b.check(b.data.len());
    assert!(offset + (m - 1) * rs + n <= out.len(), "gemm output out of bounds");
    if k == 0 {
        for i in 0..m {
            for v in &mut out[offset + i * rs..offset + i * rs + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: every index touched by dgemm lies inside the three slices, as
    // checked above, and `out` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr().add(offset),
            rs as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn view(&self) -> View<'_> {
        View::new(&self.data, 0, self.rows, self.cols, self.cols, 1)
    }

    /// `self · other`
    pub fn matmul(&self, other: &Mat) -> Mat {
        let mut out = Mat::zeros(self.rows, other.cols);
        gemm(1.0, self.view(), other.view(), 0.0, &mut out.data, 0, other.cols);
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        let mut out = Mat::zeros(self.cols, other.cols);
        gemm(1.0, self.view().t(), other.view(), 0.0, &mut out.data, 0, other.cols);
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        let mut out = Mat::zeros(self.rows, other.rows);
        gemm(1.0, self.view(), other.view().t(), 0.0, &mut out.data, 0, other.rows);
        out
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn hcat(parts: &[&Mat]) -> Mat {
        let rows = parts.first().map_or(0, |m| m.rows);
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                assert_eq!(m.rows, rows, "hcat row mismatch");
                data.extend_from_slice(m.row(i));
            }
        }
        Mat { rows, cols, data }
    }

    /// Columns `start..end`.
    pub fn col_slice(&self, start: usize, end: usize) -> Mat {
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Mat { rows: self.rows, cols: end - start, data }
    }

    /// Rows selected by `idx` (repeats allowed).
    pub fn gather_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat { rows: idx.len(), cols: self.cols, data }
    }

    /// Adjoint of [`Mat::gather_rows`]: row `k` of `self` is added into row
    /// `idx[k]` of an `n×cols` zero matrix.
    pub fn scatter_rows(&self, idx: &[usize], n: usize) -> Mat {
        assert_eq!(idx.len(), self.rows);
        let mut out = Mat::zeros(n, self.cols);
        for (k, &i) in idx.iter().enumerate() {
            for (o, v) in out.row_mut(i).iter_mut().zip(self.row(k)) {
                *o += v;
            }
        }
        out
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (a, b) in s.iter_mut().zip(self.row(i)) {
                *a += b;
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                out.data_mut()[i * b.cols() + j] = (0..a.cols()).map(|k| a.row(i)[k] * b.row(k)[j]).sum();
            }
        }
        out
    }

    fn transpose(a: &Mat) -> Mat {
        let mut out = Mat::zeros(a.cols(), a.rows());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                out.data_mut()[j * a.rows() + i] = a.row(i)[j];
            }
        }
        out
    }

    fn close(a: &Mat, b: &Mat) {
        assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn products_match_naive() {
        let a = Mat::from_vec(3, 4, (0..12).map(|v| v as f64 * 0.5 - 2.0).collect());
        let b = Mat::from_vec(4, 2, (0..8).map(|v| (v * v) as f64 * 0.1).collect());
        let c = Mat::from_vec(5, 4, (0..20).map(|v| v as f64 - 7.0).collect());
        close(&a.matmul(&b), &naive(&a, &b));
        close(&a.matmul_t(&c), &naive(&a, &transpose(&c)));
        close(&a.t_matmul(&a), &naive(&transpose(&a), &a));
    }

    #[test]
    fn scatter_is_adjoint_of_gather() {
        let x = Mat::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let idx = [2, 0, 2, 1];
        let g = x.gather_rows(&idx);
        assert_eq!(g.row(0), &[5.0, 6.0]);
        let d = Mat::from_vec(4, 2, vec![1.0; 8]);
        let s = d.scatter_rows(&idx, 3);
        assert_eq!(s.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
