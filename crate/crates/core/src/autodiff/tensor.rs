use std::fmt;

/// Dense row-major tensor of `f64` values.
///
/// Scalars carry shape `[1]`. Matrices are `[rows, cols]`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor extents must be positive, got {shape:?}"
        );
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} values",
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(&[1], vec![value])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self::new(&[r, c], rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.rank(), 2, "expected a matrix, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        let (_, c) = self.dims2();
        self.data[row * c + col]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "cannot reshape {:?} to {shape:?}",
            self.shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(&[c, r], out)
    }

    /// `op(a) · op(b)` with optional transposition of either operand.
    pub fn matmul_t(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool) -> Tensor {
        let (ar, ac) = a.dims2();
        let (br, bc) = b.dims2();
        let (n, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, m) = if trans_b { (bc, br) } else { (br, bc) };
        assert_eq!(
            k, k2,
            "matmul inner dimension mismatch: {:?}{} x {:?}{}",
            a.shape,
            if trans_a { "ᵀ" } else { "" },
            b.shape,
            if trans_b { "ᵀ" } else { "" }
        );
        let ad = &a.data;
        let bd = &b.data;
        let mut out = vec![0.0; n * m];
        match (trans_a, trans_b) {
            (false, false) => {
                for i in 0..n {
                    let row = &mut out[i * m..(i + 1) * m];
                    for p in 0..k {
                        let x = ad[i * ac + p];
                        if x == 0.0 {
                            continue;
                        }
                        let brow = &bd[p * bc..(p + 1) * bc];
                        for (o, &y) in row.iter_mut().zip(brow) {
                            *o += x * y;
                        }
                    }
                }
            }
            (true, false) => {
                for p in 0..k {
                    let arow = &ad[p * ac..(p + 1) * ac];
                    let brow = &bd[p * bc..(p + 1) * bc];
                    for (i, &x) in arow.iter().enumerate() {
                        if x == 0.0 {
                            continue;
                        }
                        let row = &mut out[i * m..(i + 1) * m];
                        for (o, &y) in row.iter_mut().zip(brow) {
                            *o += x * y;
                        }
                    }
                }
            }
            (false, true) => {
                for i in 0..n {
                    let arow = &ad[i * ac..(i + 1) * ac];
                    for j in 0..m {
                        let brow = &bd[j * bc..(j + 1) * bc];
                        out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
            }
            (true, true) => {
                for i in 0..n {
                    for j in 0..m {
                        let mut acc = 0.0;
                        for p in 0..k {
                            acc += ad[p * ac + i] * bd[j * bc + p];
                        }
                        out[i * m + j] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, m], out)
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        Self::matmul_t(self, other, false, false)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOW: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, x) in self.data.iter().take(SHOW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x:.6}")?;
        }
        if self.data.len() > SHOW {
            write!(f, ", … ({} more)", self.data.len() - SHOW)?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree_with_explicit_transpose() {
        let a = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::new(&[3, 2], vec![0.5, -1.0, 2.0, 0.0, 1.5, 3.0]);
        let ab = a.matmul(&b);
        assert_eq!(ab.data(), &[9.0, 8.0, 21.0, 14.0]);
        let at = a.transpose();
        let bt = b.transpose();
        assert_eq!(Tensor::matmul_t(&at, &b, true, false), ab);
        assert_eq!(Tensor::matmul_t(&a, &bt, false, true), ab);
        assert_eq!(Tensor::matmul_t(&at, &bt, true, true), ab);
    }

    #[test]
    #[should_panic(expected = "does not match")]
    fn shape_product_must_match_data() {
        Tensor::new(&[2, 2], vec![1.0; 3]);
    }

    #[test]
    #[should_panic(expected = "positive")]
    fn zero_extent_rejected() {
        Tensor::new(&[0], vec![]);
    }
}
