//! Standardization kernels behind layer and batch normalization.

use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::tensor::Tensor;

/// Which elements of a `[B, C, L]` tensor share statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormAxes {
    /// One group per `(b, t)`, reduced over channels (layer norm).
    Channels,
    /// One group per channel, reduced over batch and time (batch norm).
    BatchTime,
}

pub struct Standardized<F> {
    pub xhat: Tensor<F>,
    /// Per-group mean and biased variance.
    pub mean: Vec<F>,
    pub var: Vec<F>,
    pub rstd: Vec<F>,
}

fn group_of(axes: NormAxes, b: usize, c: usize, t: usize, len: usize) -> usize {
    match axes {
        NormAxes::Channels => b * len + t,
        NormAxes::BatchTime => c,
    }
}

fn check<F: Float>(x: &Tensor<F>) -> Result<(usize, usize, usize)> {
    if x.ndim() != 3 || x.is_empty() {
        return shape_err("standardize", format!("expected non-empty [B, C, L], got {:?}", x.shape()));
    }
    Ok((x.dim(0), x.dim(1), x.dim(2)))
}

/// `(x - mean) / sqrt(var + eps)` per group.
pub fn standardize<F: Float>(x: &Tensor<F>, axes: NormAxes, eps: F) -> Result<Standardized<F>> {
    let (b, c, l) = check(x)?;
    let (groups, count) = match axes {
        NormAxes::Channels => (b * l, c),
        NormAxes::BatchTime => (c, b * l),
    };
    let inv = F::one() / F::of(count as f64);
    let xd = x.data();
    let mut mean = vec![F::zero(); groups];
    for bi in 0..b {
        for ci in 0..c {
            let row = &xd[(bi * c + ci) * l..(bi * c + ci + 1) * l];
            match axes {
                NormAxes::Channels => {
                    let m = &mut mean[bi * l..(bi + 1) * l];
                    for (a, &v) in m.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                NormAxes::BatchTime => mean[ci] += row.iter().copied().sum::<F>(),
            }
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv);
    let mut var = vec![F::zero(); groups];
    for bi in 0..b {
        for ci in 0..c {
            let row = &xd[(bi * c + ci) * l..(bi * c + ci + 1) * l];
            match axes {
                NormAxes::Channels => {
                    let (m, v) = (&mean[bi * l..(bi + 1) * l], &mut var[bi * l..(bi + 1) * l]);
                    for ((a, &x), &mu) in v.iter_mut().zip(row).zip(m) {
                        *a += (x - mu) * (x - mu);
                    }
                }
                NormAxes::BatchTime => {
                    let mu = mean[ci];
                    var[ci] += row.iter().map(|&x| (x - mu) * (x - mu)).sum::<F>();
                }
            }
        }
    }
    var.iter_mut().for_each(|v| *v *= inv);
    let rstd: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut xhat = x.clone();
    let hd = xhat.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * l;
            for t in 0..l {
                let g = group_of(axes, bi, ci, t, l);
                hd[base + t] = (hd[base + t] - mean[g]) * rstd[g];
            }
        }
    }
    Ok(Standardized {
        xhat,
        mean,
        var,
        rstd,
    })
}

pub fn standardize_backward<F: Float>(
    st: &Standardized<F>,
    grad: &Tensor<F>,
    axes: NormAxes,
) -> Result<Tensor<F>> {
    let (b, c, l) = check(&st.xhat)?;
    if grad.shape() != st.xhat.shape() {
        return shape_err("standardize_backward", format!("grad {:?}", grad.shape()));
    }
    let groups = st.rstd.len();
    let count = match axes {
        NormAxes::Channels => c,
        NormAxes::BatchTime => b * l,
    };
    let inv = F::one() / F::of(count as f64);
    let (gd, hd) = (grad.data(), st.xhat.data());
    let mut sum_g = vec![F::zero(); groups];
    let mut sum_gx = vec![F::zero(); groups];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * l;
            for t in 0..l {
                let g = group_of(axes, bi, ci, t, l);
                sum_g[g] += gd[base + t];
                sum_gx[g] += gd[base + t] * hd[base + t];
            }
        }
    }
    let mut out = vec![F::zero(); gd.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * l;
            for t in 0..l {
                let g = group_of(axes, bi, ci, t, l);
                out[base + t] = st.rstd[g]
                    * (gd[base + t] - sum_g[g] * inv - hd[base + t] * sum_gx[g] * inv);
            }
        }
    }
    Tensor::new(grad.shape(), out)
}
