use gsd_core::{Error, Result};

use crate::scalar::{gemm, Scalar, View};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| gsd_core::scalar::cast(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    fn check_inner(&self, other: &Self, a_k: usize, b_k: usize, what: &str) -> Result<()> {
        if a_k != b_k {
            return Err(Error::Shape(format!(
                "{what}: {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_inner(other, self.cols, other.rows, "matmul")?;
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            T::one(),
            &self.data,
            View::row_major(0, self.cols),
            &other.data,
            View::row_major(0, other.cols),
            T::zero(),
            &mut out.data,
            View::row_major(0, other.cols),
        );
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        self.check_inner(other, self.cols, other.cols, "matmul_nt")?;
        let mut out = Self::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            T::one(),
            &self.data,
            View::row_major(0, self.cols),
            &other.data,
            View::transposed(0, other.cols),
            T::zero(),
            &mut out.data,
            View::row_major(0, other.rows),
        );
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        self.check_inner(other, self.rows, other.rows, "matmul_tn")?;
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            T::one(),
            &self.data,
            View::transposed(0, self.cols),
            &other.data,
            View::row_major(0, other.cols),
            T::zero(),
            &mut out.data,
            View::row_major(0, other.cols),
        );
        Ok(out)
    }
}

/// Rearrange `views` stacked `h×w` grids of `r²·c` channels into `(h·r)×(w·r)`
/// grids of `c` channels. Input channel `(dy·r + dx)·c + ch` of cell `(y, x)`
/// lands on output pixel `(y·r + dy, x·r + dx)`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, views: usize, h: usize, w: usize, r: usize) -> Result<Tensor<T>> {
    check_grid(x, views, h, w)?;
    if r == 0 || x.cols % (r * r) != 0 {
        return Err(Error::Shape(format!("{} channels not divisible by {r}²", x.cols)));
    }
    let c = x.cols / (r * r);
    let mut out = Tensor::zeros(x.rows * r * r, c);
    for_each_shuffle(views, h, w, r, c, |src, dst| out.data[dst] = x.data[src]);
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]; `h`, `w` are the fine grid dimensions.
pub fn pixel_unshuffle<T: Scalar>(y: &Tensor<T>, views: usize, h: usize, w: usize, r: usize) -> Result<Tensor<T>> {
    check_grid(y, views, h, w)?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::Shape(format!("{h}x{w} grid not divisible by {r}")));
    }
    let c = y.cols;
    let mut out = Tensor::zeros(y.rows / (r * r), c * r * r);
    for_each_shuffle(views, h / r, w / r, r, c, |src, dst| out.data[src] = y.data[dst]);
    Ok(out)
}

fn check_grid<T>(x: &Tensor<T>, views: usize, h: usize, w: usize) -> Result<()> {
    if x.rows != views * h * w {
        return Err(Error::Shape(format!(
            "{} rows do not form {views} grids of {h}x{w}",
            x.rows
        )));
    }
    Ok(())
}

/// Visit `(coarse index, fine index)` pairs of a shuffle.
fn for_each_shuffle(views: usize, h: usize, w: usize, r: usize, c: usize, mut f: impl FnMut(usize, usize)) {
    let (fh, fw) = (h * r, w * r);
    for v in 0..views {
        for y in 0..h {
            for x in 0..w {
                let src_row = (v * h + y) * w + x;
                for dy in 0..r {
                    for dx in 0..r {
                        let dst_row = (v * fh + y * r + dy) * fw + x * r + dx;
                        for ch in 0..c {
                            f(src_row * c * r * r + (dy * r + dx) * c + ch, dst_row * c + ch);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(f).collect()).unwrap()
    }

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let mut out = Tensor::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                out.set(i, j, (0..a.cols).map(|l| a.get(i, l) * b.get(l, j)).sum());
            }
        }
        out
    }

    #[test]
    fn matmul_variants_match_naive() {
        let a = t(5, 3, |i| (i as f64 * 0.37).sin());
        let b = t(3, 4, |i| (i as f64 * 0.91).cos());
        let ab = naive(&a, &b);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&ab) < 1e-14);
        assert!(a.matmul_nt(&b.transpose()).unwrap().max_abs_diff(&ab) < 1e-14);
        assert!(a.transpose().matmul_tn(&b).unwrap().max_abs_diff(&ab) < 1e-14);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn shuffle_single_cell() {
        let x = Tensor::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 1, 1, 1, 2).unwrap();
        assert_eq!(y.shape(), (4, 1));
        assert_eq!(y.data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shuffle_shapes_and_inverse() {
        let x = t(2 * 8 * 8, 192, |i| i as f64);
        let y = pixel_shuffle(&x, 2, 8, 8, 2).unwrap();
        assert_eq!(y.shape(), (2 * 16 * 16, 48));
        assert_eq!(pixel_unshuffle(&y, 2, 16, 16, 2).unwrap(), x);
        assert!(pixel_shuffle(&t(4, 6, |i| i as f64), 1, 2, 2, 2).is_err());
    }
}
