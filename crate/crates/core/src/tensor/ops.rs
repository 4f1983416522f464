use super::gemm::{gemm, Op};
use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

impl<T: Element> Tensor<T> {
    fn same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
        let a = self.data();
        let b = other.data();
        a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_shape(other, "add")?;
        let out = self.zip_with(other, |a, b| a + b);
        Tensor::from_op(
            out,
            self.shape(),
            "add",
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_shape(other, "sub")?;
        let out = self.zip_with(other, |a, b| a - b);
        Tensor::from_op(
            out,
            self.shape(),
            "sub",
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]),
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_shape(other, "mul")?;
        let out = self.zip_with(other, |a, b| a * b);
        let need = [self.requires_grad(), other.requires_grad()];
        let a = self.to_vec();
        let b = other.to_vec();
        Tensor::from_op(
            out,
            self.shape(),
            "mul",
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = need[0].then(|| g.iter().zip(&b).map(|(&g, &b)| g * b).collect());
                let gb = need[1].then(|| g.iter().zip(&a).map(|(&g, &a)| g * a).collect());
                vec![ga, gb]
            }),
        )
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let out = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(
            out,
            self.shape(),
            "scale",
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|&v| v * c).collect())]),
        )
        .expect("shape preserved")
    }

    /// Adds a per-channel bias along axis 1 of an `(N, C, ...)` tensor.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape.len() < 2 || bias.shape() != [shape[1]] {
            return Err(Error::dim("add_bias", shape, bias.shape()));
        }
        let (n, c) = (shape[0], shape[1]);
        let inner = numel(&shape[2..]);
        let mut out = self.to_vec();
        {
            let b = bias.data();
            for (i, chunk) in out.chunks_mut(inner).enumerate() {
                let bc = b[i % c];
                chunk.iter_mut().for_each(|v| *v = *v + bc);
            }
        }
        Tensor::from_op(
            out,
            shape,
            "add_bias",
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                let mut gb = vec![T::zero(); c];
                for s in 0..n {
                    for (ch, acc) in gb.iter_mut().enumerate() {
                        let base = (s * c + ch) * inner;
                        *acc = *acc + g[base..base + inner].iter().copied().sum::<T>();
                    }
                }
                vec![Some(g.to_vec()), Some(gb)]
            }),
        )
    }

    /// `(m, k) · (k, n) → (m, n)`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let a = self.to_vec();
        let b = other.to_vec();
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &a, Op::N, &b, Op::N, T::zero(), &mut out);
        let need = [self.requires_grad(), other.requires_grad()];
        Tensor::from_op(
            out,
            &[m, n],
            "matmul",
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = need[0].then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(m, n, k, g, Op::N, &b, Op::T, T::zero(), &mut ga);
                    ga
                });
                let gb = need[1].then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(k, m, n, &a, Op::T, g, Op::N, T::zero(), &mut gb);
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::dim("transpose", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose(&self.data(), r, c);
        Tensor::from_op(
            out,
            &[c, r],
            "transpose",
            vec![self.clone()],
            Box::new(move |g| vec![Some(transpose(g, c, r))]),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::dim("reshape", self.shape(), shape));
        }
        Tensor::from_op(
            self.to_vec(),
            shape,
            "reshape",
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        )
    }

    /// `(N, ...) → (N, prod(...))`.
    pub fn flatten(&self) -> Result<Tensor<T>> {
        let n = self.shape()[0];
        self.reshape(&[n, self.numel() / n])
    }

    pub fn sum(&self) -> Tensor<T> {
        let total: T = self.data().iter().copied().sum();
        let len = self.numel();
        Tensor::from_op(
            vec![total],
            &[1],
            "sum",
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; len])]),
        )
        .expect("scalar")
    }

    pub fn mean(&self) -> Tensor<T> {
        let len = self.numel();
        let inv = T::one() / T::cast(len as f64);
        let total: T = self.data().iter().copied().sum();
        Tensor::from_op(
            vec![total * inv],
            &[1],
            "mean",
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0] * inv; len])]),
        )
        .expect("scalar")
    }

    pub fn relu(&self) -> Tensor<T> {
        let x = self.to_vec();
        let out = x.iter().map(|&v| v.max(T::zero())).collect();
        Tensor::from_op(
            out,
            self.shape(),
            "relu",
            vec![self.clone()],
            Box::new(move |g| {
                let gx = g
                    .iter()
                    .zip(&x)
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                vec![Some(gx)]
            }),
        )
        .expect("shape preserved")
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let out: Vec<T> = self
            .data()
            .iter()
            .map(|&v| T::one() / (T::one() + (-v).exp()))
            .collect();
        let y = out.clone();
        Tensor::from_op(
            out,
            self.shape(),
            "sigmoid",
            vec![self.clone()],
            Box::new(move |g| {
                let gx = g
                    .iter()
                    .zip(&y)
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                vec![Some(gx)]
            }),
        )
        .expect("shape preserved")
    }

    /// Spatial mean of an `(N, C, H, W)` tensor, giving `(N, C)`.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::dim("global_avg_pool", s, &[]));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let inv = T::one() / T::cast(hw as f64);
        let out: Vec<T> = self
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        Tensor::from_op(
            out,
            &[n, c],
            "global_avg_pool",
            vec![self.clone()],
            Box::new(move |g| {
                let gx = g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, hw)).collect();
                vec![Some(gx)]
            }),
        )
    }
}

fn transpose<T: Copy>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for j in 0..cols {
        for i in 0..rows {
            out.push(x[i * cols + j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::parameter(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn add_componentwise() {
        let a = t(&[1.0, 2.0], &[2]);
        let b = t(&[3.0, 4.0], &[2]);
        assert_eq!(a.add(&b).unwrap().to_vec(), vec![4.0, 6.0]);
    }

    #[test]
    fn elementwise_shape_mismatch_names_both_shapes() {
        let a = t(&[1.0, 2.0], &[2]);
        let b = t(&[1.0, 2.0, 3.0], &[3]);
        let err = a.mul(&b).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn identity_matmul() {
        let eye = t(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
        let a: Vec<f64> = (0..12).map(|v| v as f64 - 4.5).collect();
        let a = t(&a, &[3, 4]);
        assert_eq!(eye.matmul(&a).unwrap().to_vec(), a.to_vec());
        assert!(a.matmul(&eye).is_err());
    }

    #[test]
    fn relu_forward_and_backward() {
        let x = t(&[-1.0, 0.0, 2.0], &[3]);
        let y = x.relu();
        assert_eq!(y.to_vec(), vec![0.0, 0.0, 2.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn bias_broadcasts_over_channels() {
        let x = Tensor::<f64>::zeros(&[2, 2, 1, 2]);
        let b = t(&[1.0, -1.0], &[2]);
        let y = x.add_bias(&b).unwrap();
        assert_eq!(
            y.to_vec(),
            vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0]
        );
        y.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0]);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let at = a.t().unwrap();
        assert_eq!(at.shape(), &[3, 2]);
        assert_eq!(at.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(at.t().unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn pool_averages_each_plane() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0], &[1, 2, 2, 2]);
        assert_eq!(x.global_avg_pool().unwrap().to_vec(), vec![2.5, 10.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let x = Tensor::<f32>::zeros(&[3]);
        assert_eq!(x.sigmoid().to_vec(), vec![0.5; 3]);
    }
}
