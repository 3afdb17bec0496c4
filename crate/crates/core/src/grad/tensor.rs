//! Dense row-major `f64` tensors and the kernels behind the tape ops.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd {
            a[i + a.len() - nd]
        } else {
            1
        };
        let db = if i + b.len() >= nd {
            b[i + b.len() - nd]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "cannot broadcast {a:?} with {b:?}"
                )))
            }
        };
    }
    Ok(out)
}

/// Offset into a tensor of shape `in_shape` for every element of the
/// broadcast shape `out_shape`, in row-major order.
fn broadcast_offsets(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let pad = nd - in_shape.len();
    let mut strides = vec![0; nd];
    let mut s = 1;
    for i in (0..in_shape.len()).rev() {
        if in_shape[i] != 1 {
            strides[i + pad] = s;
        }
        s *= in_shape[i];
    }
    let n: usize = out_shape.iter().product();
    let mut offs = Vec::with_capacity(n);
    let mut idx = vec![0; nd];
    let mut off = 0;
    for _ in 0..n {
        offs.push(off);
        let mut d = nd;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    offs
}

/// `C (m×n) = op(A) (m×k) · op(B) (k×n)`, all row-major. With `a_t` set,
/// `a` holds `Aᵀ` (`k×m`); likewise for `b_t`. With `accumulate` the
/// product is added to `c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Element-wise combination of two tensors of identical shape.
    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Element-wise combination with broadcasting; panics on incompatible
    /// shapes.
    pub fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        if a.shape == b.shape {
            return a.zip(b, f);
        }
        let shape = broadcast_shape(&a.shape, &b.shape).expect("broadcast");
        if b.numel() == 1 && shape == a.shape {
            let y = b.data[0];
            return a.map(|x| f(x, y));
        }
        let oa = broadcast_offsets(&shape, &a.shape);
        let ob = broadcast_offsets(&shape, &b.shape);
        let data = oa
            .iter()
            .zip(&ob)
            .map(|(&i, &j)| f(a.data[i], b.data[j]))
            .collect();
        Tensor { shape, data }
    }

    /// Sums a broadcast gradient back down to `target`.
    pub fn reduce_to(&self, target: &[usize]) -> Tensor {
        if self.shape == target {
            return self.clone();
        }
        let mut out = Tensor::zeros(target);
        if out.numel() == 1 {
            out.data[0] = self.data.iter().sum();
            return out;
        }
        let offs = broadcast_offsets(&self.shape, target);
        for (v, &o) in self.data.iter().zip(&offs) {
            out.data[o] += v;
        }
        out
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    pub fn reshaped(&self, shape: &[usize]) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), self.numel());
        Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        }
    }

    fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        (outer, shape[axis], inner)
    }

    pub fn sum_axis(&self, axis: usize) -> Tensor {
        let (outer, n, inner) = Self::split_at_axis(&self.shape, axis);
        let mut shape = self.shape.clone();
        shape[axis] = 1;
        let mut out = Tensor::zeros(&shape);
        for o in 0..outer {
            let dst = &mut out.data[o * inner..(o + 1) * inner];
            for j in 0..n {
                let src = &self.data[(o * n + j) * inner..(o * n + j + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        out
    }

    /// Inverse of [`Tensor::sum_axis`] for gradients: repeats along `axis`.
    pub fn expand_axis(&self, target: &[usize], axis: usize) -> Tensor {
        let (outer, n, inner) = Self::split_at_axis(target, axis);
        let mut out = Tensor::zeros(target);
        for o in 0..outer {
            let src = &self.data[o * inner..(o + 1) * inner];
            for j in 0..n {
                out.data[(o * n + j) * inner..(o * n + j + 1) * inner].copy_from_slice(src);
            }
        }
        out
    }

    pub fn diag(&self) -> Tensor {
        let nd = self.shape.len();
        assert!(
            nd >= 2 && self.shape[nd - 1] == self.shape[nd - 2],
            "diag of {:?}",
            self.shape
        );
        let n = self.shape[nd - 1];
        let batch = self.numel() / (n * n);
        let mut data = Vec::with_capacity(batch * n);
        for b in 0..batch {
            for i in 0..n {
                data.push(self.data[b * n * n + i * n + i]);
            }
        }
        Tensor {
            shape: self.shape[..nd - 1].to_vec(),
            data,
        }
    }

    pub fn diag_embed(&self) -> Tensor {
        let n = *self.shape.last().expect("diag_embed of a scalar");
        let mut shape = self.shape.clone();
        shape.push(n);
        let mut out = Tensor::zeros(&shape);
        for (b, chunk) in self.data.chunks(n).enumerate() {
            for (i, v) in chunk.iter().enumerate() {
                out.data[b * n * n + i * n + i] = *v;
            }
        }
        out
    }

    pub fn select_last(&self, index: usize) -> Tensor {
        let d = *self.shape.last().expect("select on a scalar");
        assert!(index < d);
        Tensor {
            shape: self.shape[..self.shape.len() - 1].to_vec(),
            data: self.data.iter().skip(index).step_by(d).copied().collect(),
        }
    }

    pub fn unselect_last(&self, target: &[usize], index: usize) -> Tensor {
        let d = *target.last().unwrap();
        let mut out = Tensor::zeros(target);
        for (i, v) in self.data.iter().enumerate() {
            out.data[i * d + index] = *v;
        }
        out
    }

    fn mat_dims(shape: &[usize], t: bool) -> (usize, usize) {
        let nd = shape.len();
        let (r, c) = (shape[nd - 2], shape[nd - 1]);
        if t {
            (c, r)
        } else {
            (r, c)
        }
    }

    pub fn check_bmm(a: &[usize], ta: bool, b: &[usize], tb: bool) -> Result<()> {
        let bad = || Error::ShapeMismatch(format!("bmm {a:?} (t={ta}) x {b:?} (t={tb})"));
        if a.len() < 2 || a.len() != b.len() || a[..a.len() - 2] != b[..b.len() - 2] {
            return Err(bad());
        }
        if Self::mat_dims(a, ta).1 != Self::mat_dims(b, tb).0 {
            return Err(bad());
        }
        Ok(())
    }

    pub fn bmm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
        let (m, k) = Self::mat_dims(&a.shape, ta);
        let (_, n) = Self::mat_dims(&b.shape, tb);
        let nd = a.shape.len();
        let mut shape = a.shape[..nd - 2].to_vec();
        shape.extend([m, n]);
        let mut out = Tensor::zeros(&shape);
        let batch = out.numel() / (m * n).max(1);
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data[i * m * k..(i + 1) * m * k],
                ta,
                &b.data[i * k * n..(i + 1) * k * n],
                tb,
                &mut out.data[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 1, 3], &[4, 1]).unwrap(), vec![2, 4, 3]);
        assert_eq!(broadcast_shape(&[], &[2, 2]).unwrap(), vec![2, 2]);
        assert!(broadcast_shape(&[2, 3], &[3, 2]).is_err());
    }

    #[test]
    fn zip_broadcast_and_reduce() {
        let a = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![3], vec![10.0, 20.0, 30.0]).unwrap();
        let c = Tensor::zip_broadcast(&a, &b, |x, y| x + y);
        assert_eq!(c.shape, vec![2, 3]);
        assert_eq!(c.data, vec![11.0, 21.0, 31.0, 12.0, 22.0, 32.0]);
        assert_eq!(c.reduce_to(&[2, 1]).data, vec![63.0, 66.0]);
        assert_eq!(c.reduce_to(&[3]).data, vec![23.0, 43.0, 63.0]);
    }

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn axis_sums_and_diag() {
        let t = Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(t.sum_axis(1).data, vec![2.0, 4.0, 10.0, 12.0]);
        assert_eq!(t.sum_axis(1).shape, vec![2, 1, 2]);
        assert_eq!(t.diag().data, vec![0.0, 3.0, 4.0, 7.0]);
        assert_eq!(t.diag().diag_embed().diag(), t.diag());
        assert_eq!(t.select_last(1).data, vec![1.0, 3.0, 5.0, 7.0]);
    }
}
