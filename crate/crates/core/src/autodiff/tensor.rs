use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single entry of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        // x·0 is NaN exactly when x is not finite; independent lanes vectorize
        let mut acc = [0.0f64; 8];
        let chunks = self.data.chunks_exact(8);
        let rest = chunks.remainder();
        for c in chunks {
            for k in 0..8 {
                acc[k] += c[k] * 0.0;
            }
        }
        acc.iter().all(|&a| a == 0.0) && rest.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Numpy-style broadcast of two shapes (right aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for k in 0..n {
        let da = if k + a.len() >= n { a[k + a.len() - n] } else { 1 };
        let db = if k + b.len() >= n { b[k + b.len() - n] } else { 1 };
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when viewed inside the larger `target` shape;
/// broadcast dimensions get stride zero.
fn aligned_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let n = target.len();
    let mut strides = vec![0; n];
    let mut acc = 1;
    for k in (0..shape.len()).rev() {
        let t = k + n - shape.len();
        strides[t] = if shape[k] == 1 { 0 } else { acc };
        acc *= shape[k];
    }
    strides
}

/// Walks every flat index of `target` in order, calling
/// `f(flat, offset_a, stride_a, offset_b, stride_b, inner)` once per run of
/// the last dimension, where the offsets index tensors of shapes `a` and
/// `b` that broadcast to `target`.
fn walk(target: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    let numel: usize = target.iter().product();
    if numel == 0 {
        return;
    }
    let n = target.len();
    if n == 0 {
        f(0, 0, 0, 0, 0, 1);
        return;
    }
    let (sa, sb) = (aligned_strides(a, target), aligned_strides(b, target));
    let inner = target[n - 1];
    let mut counter = vec![0usize; n - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut flat = 0;
    while flat < numel {
        f(flat, oa, sa[n - 1], ob, sb[n - 1], inner);
        flat += inner;
        for k in (0..n - 1).rev() {
            counter[k] += 1;
            oa += sa[k];
            ob += sb[k];
            if counter[k] < target[k] {
                break;
            }
            oa -= sa[k] * counter[k];
            ob -= sb[k] * counter[k];
            counter[k] = 0;
        }
    }
}

pub(crate) fn broadcast_to(x: &Tensor, target: &[usize]) -> Tensor {
    if x.shape == target {
        return x.clone();
    }
    let numel: usize = target.iter().product();
    let mut data = Vec::with_capacity(numel);
    if x.numel() == 1 {
        data.resize(numel, x.data[0]);
    } else {
        walk(target, &x.shape, &[], |_, oa, sa, _, _, inner| {
            if sa == 1 {
                data.extend_from_slice(&x.data[oa..oa + inner]);
            } else {
                data.extend((0..inner).map(|k| x.data[oa + k * sa]));
            }
        });
    }
    Tensor::from_parts(target.to_vec(), data)
}

/// Sums `x` down to `target`, which must broadcast to `x`'s shape.
pub(crate) fn sum_to(x: &Tensor, target: &[usize]) -> Tensor {
    if x.shape == target {
        return x.clone();
    }
    let numel: usize = target.iter().product();
    let mut data = vec![0.0; numel];
    if numel == 1 {
        data[0] = x.data.iter().sum();
    } else {
        walk(&x.shape, target, &[], |flat, od, sd, _, _, inner| {
            let src = &x.data[flat..flat + inner];
            if sd == 0 {
                data[od] += src.iter().sum::<f64>();
            } else {
                for (k, v) in src.iter().enumerate() {
                    data[od + k * sd] += v;
                }
            }
        });
    }
    Tensor::from_parts(target.to_vec(), data)
}

pub(crate) fn binary(a: &Tensor, b: &Tensor, out_shape: &[usize], f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data: Vec<f64> = if a.shape == b.shape {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    } else if b.numel() == 1 && a.shape == out_shape {
        let y = b.data[0];
        a.data.iter().map(|&x| f(x, y)).collect()
    } else if a.numel() == 1 && b.shape == out_shape {
        let x = a.data[0];
        b.data.iter().map(|&y| f(x, y)).collect()
    } else {
        let mut out = Vec::with_capacity(out_shape.iter().product());
        walk(out_shape, &a.shape, &b.shape, |_, oa, sa, ob, sb, inner| match (sa, sb) {
            (1, 1) => out.extend(a.data[oa..oa + inner].iter().zip(&b.data[ob..ob + inner]).map(|(&x, &y)| f(x, y))),
            (1, 0) => {
                let y = b.data[ob];
                out.extend(a.data[oa..oa + inner].iter().map(|&x| f(x, y)));
            }
            (0, 1) => {
                let x = a.data[oa];
                out.extend(b.data[ob..ob + inner].iter().map(|&y| f(x, y)));
            }
            _ => out.extend((0..inner).map(|k| f(a.data[oa + k * sa], b.data[ob + k * sb]))),
        });
        out
    };
    Tensor::from_parts(out_shape.to_vec(), data)
}
