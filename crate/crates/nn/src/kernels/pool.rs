//! Pooling along the last axis of `[B, C, L]` tensors.

use crate::error::{invalid, shape_err, Result};
use crate::float::Float;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub ceil: bool,
}

impl PoolGeom {
    pub fn out_len(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.pad;
        if self.kernel == 0 || self.stride == 0 || padded < self.kernel {
            return invalid("pool", format!("{self:?} on length {len}"));
        }
        let span = padded - self.kernel;
        let mut n = if self.ceil {
            span.div_ceil(self.stride) + 1
        } else {
            span / self.stride + 1
        };
        // The last window must start inside the input or left padding.
        if self.ceil && (n - 1) * self.stride >= len + self.pad {
            n -= 1;
        }
        Ok(n)
    }

    fn window(&self, o: usize, len: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.pad as isize;
        let end = start + self.kernel as isize;
        (start.max(0) as usize, (end.max(0) as usize).min(len))
    }
}

fn check<F: Float>(x: &Tensor<F>) -> Result<(usize, usize, usize)> {
    if x.ndim() != 3 {
        return shape_err("pool", format!("expected [B, C, L], got {:?}", x.shape()));
    }
    Ok((x.dim(0), x.dim(1), x.dim(2)))
}

/// Max pooling; also returns the winning source index of every output.
pub fn max_pool<F: Float>(x: &Tensor<F>, geom: &PoolGeom) -> Result<(Tensor<F>, Vec<usize>)> {
    let (b, c, l) = check(x)?;
    let lo = geom.out_len(l)?;
    let mut out = Vec::with_capacity(b * c * lo);
    let mut arg = Vec::with_capacity(b * c * lo);
    for (r, row) in x.data().chunks(l).enumerate() {
        for o in 0..lo {
            let (s, e) = geom.window(o, l);
            let mut best = s;
            for i in s..e {
                if row[i] > row[best] {
                    best = i;
                }
            }
            out.push(row[best]);
            arg.push(r * l + best);
        }
    }
    Ok((Tensor::new(&[b, c, lo], out)?, arg))
}

pub fn max_pool_backward<F: Float>(
    input_shape: &[usize],
    arg: &[usize],
    grad: &Tensor<F>,
) -> Tensor<F> {
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&i, &g) in arg.iter().zip(grad.data()) {
        d[i] += g;
    }
    gx
}

/// Average pooling over the in-bounds part of each window.
pub fn avg_pool<F: Float>(x: &Tensor<F>, geom: &PoolGeom) -> Result<Tensor<F>> {
    let (b, c, l) = check(x)?;
    let lo = geom.out_len(l)?;
    let mut out = Vec::with_capacity(b * c * lo);
    for row in x.data().chunks(l) {
        for o in 0..lo {
            let (s, e) = geom.window(o, l);
            let sum: F = row[s..e].iter().copied().sum();
            out.push(sum / F::of((e - s).max(1) as f64));
        }
    }
    Tensor::new(&[b, c, lo], out)
}

pub fn avg_pool_backward<F: Float>(
    input_shape: &[usize],
    geom: &PoolGeom,
    grad: &Tensor<F>,
) -> Result<Tensor<F>> {
    let l = input_shape[2];
    let lo = geom.out_len(l)?;
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (r, grow) in grad.data().chunks(lo).enumerate() {
        for (o, &g) in grow.iter().enumerate() {
            let (s, e) = geom.window(o, l);
            let share = g / F::of((e - s).max(1) as f64);
            for v in &mut d[r * l + s..r * l + e] {
                *v += share;
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_mode_keeps_partial_window() {
        let g = PoolGeom { kernel: 2, stride: 2, pad: 0, ceil: true };
        assert_eq!(g.out_len(5).unwrap(), 3);
        let x = Tensor::<f64>::from_f64(&[1, 1, 5], &[1.0, 3.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(avg_pool(&x, &g).unwrap().data(), &[2.0, 6.0, 9.0]);
    }

    #[test]
    fn max_pool_with_padding() {
        let g = PoolGeom { kernel: 3, stride: 2, pad: 1, ceil: false };
        let x = Tensor::<f64>::from_f64(&[1, 1, 5], &[1.0, 3.0, 2.0, 7.0, 0.0]).unwrap();
        let (y, arg) = max_pool(&x, &g).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0, 7.0]);
        assert_eq!(arg, vec![1, 3, 3]);
    }
}
