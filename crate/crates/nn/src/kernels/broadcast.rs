//! Numpy-style broadcasting for binary elementwise kernels.

use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::tensor::{contiguous_strides, Tensor};

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for d in 0..n {
        let da = if d + a.len() >= n { a[d + a.len() - n] } else { 1 };
        let db = if d + b.len() >= n { b[d + b.len() - n] } else { 1 };
        out[d] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return shape_err("broadcast", format!("{a:?} vs {b:?}")),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (zero along broadcast axes).
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let own = contiguous_strides(shape);
    (0..n)
        .map(|d| {
            if d + shape.len() < n {
                0
            } else {
                let s = d + shape.len() - n;
                if shape[s] == 1 {
                    0
                } else {
                    own[s]
                }
            }
        })
        .collect()
}

/// Walks `out` row by row (last axis), yielding the base offsets of both
/// operands for each row.
fn for_each_row(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = out.len();
    if n == 0 {
        f(0, 0, 0);
        return;
    }
    let last = out[n - 1];
    let rows: usize = out[..n - 1].iter().product();
    let mut idx = vec![0usize; n.saturating_sub(1)];
    let (mut oa, mut ob) = (0usize, 0usize);
    for r in 0..rows {
        f(r * last, oa, ob);
        for d in (0..n - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub fn binary<F: Float>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    f: impl Fn(F, F) -> F + Send + Sync,
) -> Result<Tensor<F>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    if out_shape == a.shape() && b.len() == 1 {
        let s = b.data()[0];
        return Ok(a.map(move |v| f(v, s)));
    }
    let sa = aligned_strides(a.shape(), &out_shape);
    let sb = aligned_strides(b.shape(), &out_shape);
    let n = out_shape.len();
    let last = out_shape.last().copied().unwrap_or(1);
    let (la, lb) = (sa.last().copied().unwrap_or(0), sb.last().copied().unwrap_or(0));
    let mut out = vec![F::zero(); out_shape.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_row(&out_shape, &sa, &sb, |o, oa, ob| {
        let row = &mut out[o..o + last];
        if n == 0 {
            row[0] = f(ad[0], bd[0]);
            return;
        }
        for (j, v) in row.iter_mut().enumerate() {
            *v = f(ad[oa + j * la], bd[ob + j * lb]);
        }
    });
    Tensor::new(&out_shape, out)
}

/// Sums a broadcast result back down to `shape`.
pub fn sum_to_shape<F: Float>(g: &Tensor<F>, shape: &[usize]) -> Result<Tensor<F>> {
    if g.shape() == shape {
        return Ok(g.clone());
    }
    let full = broadcast_shape(shape, g.shape())?;
    if full != g.shape() {
        return shape_err("sum_to_shape", format!("{:?} -> {shape:?}", g.shape()));
    }
    let st = aligned_strides(shape, g.shape());
    let zero = vec![0; g.ndim()];
    let last = g.shape().last().copied().unwrap_or(1);
    let lt = st.last().copied().unwrap_or(0);
    let mut out = Tensor::zeros(shape);
    let (gd, od) = (g.data(), out.data_mut());
    if g.ndim() == 0 {
        od[0] = gd[0];
        return Ok(out);
    }
    for_each_row(g.shape(), &st, &zero, |o, ot, _| {
        let row = &gd[o..o + last];
        if lt == 0 {
            let s: F = row.iter().copied().sum();
            od[ot] += s;
        } else {
            for (j, &v) in row.iter().enumerate() {
                od[ot + j * lt] += v;
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_broadcast_and_reduce() {
        let a = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let b = Tensor::<f64>::from_f64(&[3, 1], &[10.0, 20.0, 30.0]).unwrap();
        let c = binary(&a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.shape(), &[2, 3, 4]);
        assert_eq!(c.get(&[1, 2, 3]), 23.0 + 30.0);
        let r = sum_to_shape(&Tensor::<f64>::ones(&[2, 3, 4]), &[3, 1]).unwrap();
        assert_eq!(r.data(), &[8.0, 8.0, 8.0]);
    }

    #[test]
    fn incompatible_shapes_error() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4]);
        assert!(binary(&a, &b, |x, y| x + y).is_err());
    }
}
