//! 1-D convolution via im2col + GEMM, and dense matrix products.

use crate::error::{invalid, shape_err, Result};
use crate::float::Float;
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv1dGeom {
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            pad_left: (kernel - 1) / 2,
            pad_right: kernel / 2,
        }
    }

    pub fn valid() -> Self {
        Self {
            stride: 1,
            pad_left: 0,
            pad_right: 0,
        }
    }

    pub fn out_len(&self, len: usize, kernel: usize) -> Result<usize> {
        let padded = len + self.pad_left + self.pad_right;
        if self.stride == 0 || kernel == 0 || padded < kernel {
            return invalid(
                "conv1d",
                format!("kernel {kernel} stride {} on padded length {padded}", self.stride),
            );
        }
        Ok((padded - kernel) / self.stride + 1)
    }

    fn is_pointwise(&self, kernel: usize) -> bool {
        kernel == 1 && self.stride == 1 && self.pad_left == 0 && self.pad_right == 0
    }
}

struct ConvDims {
    batch: usize,
    cin: usize,
    len: usize,
    cout: usize,
    kernel: usize,
    lout: usize,
}

fn conv_dims<F: Float>(x: &Tensor<F>, w: &Tensor<F>, geom: &Conv1dGeom) -> Result<ConvDims> {
    if x.ndim() != 3 || w.ndim() != 3 || x.dim(1) != w.dim(1) {
        return shape_err(
            "conv1d",
            format!("input {:?} with weight {:?}", x.shape(), w.shape()),
        );
    }
    Ok(ConvDims {
        batch: x.dim(0),
        cin: x.dim(1),
        len: x.dim(2),
        cout: w.dim(0),
        kernel: w.dim(2),
        lout: geom.out_len(x.dim(2), w.dim(2))?,
    })
}

fn im2col<F: Float>(xb: &[F], d: &ConvDims, geom: &Conv1dGeom, cols: &mut [F]) {
    for ci in 0..d.cin {
        let row = &xb[ci * d.len..(ci + 1) * d.len];
        for k in 0..d.kernel {
            let dst = &mut cols[(ci * d.kernel + k) * d.lout..(ci * d.kernel + k + 1) * d.lout];
            for (t, v) in dst.iter_mut().enumerate() {
                let pos = (t * geom.stride + k) as isize - geom.pad_left as isize;
                *v = if pos >= 0 && (pos as usize) < d.len {
                    row[pos as usize]
                } else {
                    F::zero()
                };
            }
        }
    }
}

fn col2im<F: Float>(cols: &[F], d: &ConvDims, geom: &Conv1dGeom, gxb: &mut [F]) {
    for ci in 0..d.cin {
        let row = &mut gxb[ci * d.len..(ci + 1) * d.len];
        for k in 0..d.kernel {
            let src = &cols[(ci * d.kernel + k) * d.lout..(ci * d.kernel + k + 1) * d.lout];
            for (t, &v) in src.iter().enumerate() {
                let pos = (t * geom.stride + k) as isize - geom.pad_left as isize;
                if pos >= 0 && (pos as usize) < d.len {
                    row[pos as usize] += v;
                }
            }
        }
    }
}

/// `x: [B, Cin, L]`, `w: [Cout, Cin, K]` → `[B, Cout, Lout]`.
pub fn conv1d<F: Float>(x: &Tensor<F>, w: &Tensor<F>, geom: &Conv1dGeom) -> Result<Tensor<F>> {
    let d = conv_dims(x, w, geom)?;
    let ck = d.cin * d.kernel;
    let mut out = vec![F::zero(); d.batch * d.cout * d.lout];
    let (xd, wd) = (x.data(), w.data());
    let pointwise = geom.is_pointwise(d.kernel);
    par::for_each_chunk_mut(&mut out, d.cout * d.lout, |b, ob| {
        let xb = &xd[b * d.cin * d.len..(b + 1) * d.cin * d.len];
        let owned;
        let cols: &[F] = if pointwise {
            xb
        } else {
            let mut c = vec![F::zero(); ck * d.lout];
            im2col(xb, &d, geom, &mut c);
            owned = c;
            &owned
        };
        F::gemm(
            d.cout, ck, d.lout, F::one(), wd, ck as isize, 1, cols, d.lout as isize, 1,
            F::zero(), ob, d.lout as isize, 1,
        );
    });
    Tensor::new(&[d.batch, d.cout, d.lout], out)
}

/// Gradients of [`conv1d`] with respect to the input and the weight.
pub fn conv1d_backward<F: Float>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    grad: &Tensor<F>,
    geom: &Conv1dGeom,
    need_x: bool,
    need_w: bool,
) -> Result<(Option<Tensor<F>>, Option<Tensor<F>>)> {
    let d = conv_dims(x, w, geom)?;
    if grad.shape() != [d.batch, d.cout, d.lout] {
        return shape_err("conv1d_backward", format!("grad {:?}", grad.shape()));
    }
    let ck = d.cin * d.kernel;
    let (xd, wd, gd) = (x.data(), w.data(), grad.data());
    let pointwise = geom.is_pointwise(d.kernel);

    let gx = if need_x {
        let mut gx = vec![F::zero(); d.batch * d.cin * d.len];
        par::for_each_chunk_mut(&mut gx, d.cin * d.len, |b, gxb| {
            let gb = &gd[b * d.cout * d.lout..(b + 1) * d.cout * d.lout];
            if pointwise {
                F::gemm(
                    ck, d.cout, d.lout, F::one(), wd, 1, ck as isize, gb, d.lout as isize, 1,
                    F::zero(), gxb, d.lout as isize, 1,
                );
            } else {
                let mut cols = vec![F::zero(); ck * d.lout];
                F::gemm(
                    ck, d.cout, d.lout, F::one(), wd, 1, ck as isize, gb, d.lout as isize, 1,
                    F::zero(), &mut cols, d.lout as isize, 1,
                );
                col2im(&cols, &d, geom, gxb);
            }
        });
        Some(Tensor::new(&[d.batch, d.cin, d.len], gx)?)
    } else {
        None
    };

    let gw = if need_w {
        let partials = par::map_indices(d.batch, |b| {
            let xb = &xd[b * d.cin * d.len..(b + 1) * d.cin * d.len];
            let gb = &gd[b * d.cout * d.lout..(b + 1) * d.cout * d.lout];
            let owned;
            let cols: &[F] = if pointwise {
                xb
            } else {
                let mut c = vec![F::zero(); ck * d.lout];
                im2col(xb, &d, geom, &mut c);
                owned = c;
                &owned
            };
            let mut gwb = vec![F::zero(); d.cout * ck];
            F::gemm(
                d.cout, d.lout, ck, F::one(), gb, d.lout as isize, 1, cols, 1, d.lout as isize,
                F::zero(), &mut gwb, ck as isize, 1,
            );
            gwb
        });
        let mut gw = vec![F::zero(); d.cout * ck];
        for p in partials {
            for (a, b) in gw.iter_mut().zip(p) {
                *a += b;
            }
        }
        Some(Tensor::new(w.shape(), gw)?)
    } else {
        None
    };
    Ok((gx, gw))
}

/// `[M, K] @ [K, N]`.
pub fn matmul<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0) {
        return shape_err("matmul", format!("{:?} @ {:?}", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = vec![F::zero(); m * n];
    F::gemm(
        m, k, n, F::one(), a.data(), k as isize, 1, b.data(), n as isize, 1, F::zero(), &mut out,
        n as isize, 1,
    );
    Tensor::new(&[m, n], out)
}

/// `a^T @ b` for `a: [K, M]`, `b: [K, N]`.
pub fn matmul_tn<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0) {
        return shape_err("matmul_tn", format!("{:?}^T @ {:?}", a.shape(), b.shape()));
    }
    let (k, m, n) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = vec![F::zero(); m * n];
    F::gemm(
        m, k, n, F::one(), a.data(), 1, m as isize, b.data(), n as isize, 1, F::zero(), &mut out,
        n as isize, 1,
    );
    Tensor::new(&[m, n], out)
}

/// `a @ b^T` for `a: [M, K]`, `b: [N, K]`.
pub fn matmul_nt<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1) {
        return shape_err("matmul_nt", format!("{:?} @ {:?}^T", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(0));
    let mut out = vec![F::zero(); m * n];
    F::gemm(
        m, k, n, F::one(), a.data(), k as isize, 1, b.data(), 1, k as isize, F::zero(), &mut out,
        n as isize, 1,
    );
    Tensor::new(&[m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, g: &Conv1dGeom) -> Tensor<f64> {
        let (b, cin, l) = (x.dim(0), x.dim(1), x.dim(2));
        let (cout, k) = (w.dim(0), w.dim(2));
        let lout = g.out_len(l, k).unwrap();
        let mut out = Tensor::zeros(&[b, cout, lout]);
        for bi in 0..b {
            for co in 0..cout {
                for t in 0..lout {
                    let mut s = 0.0;
                    for ci in 0..cin {
                        for kk in 0..k {
                            let p = (t * g.stride + kk) as isize - g.pad_left as isize;
                            if p >= 0 && (p as usize) < l {
                                s += w.get(&[co, ci, kk]) * x.get(&[bi, ci, p as usize]);
                            }
                        }
                    }
                    out.set(&[bi, co, t], s);
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 11], |i| ((i * 7) % 5) as f64 - 2.0);
        let w = Tensor::<f64>::from_fn(&[4, 3, 3], |i| ((i * 3) % 7) as f64 * 0.1);
        for geom in [
            Conv1dGeom::same(3),
            Conv1dGeom { stride: 2, pad_left: 1, pad_right: 0 },
            Conv1dGeom::valid(),
        ] {
            let got = conv1d(&x, &w, &geom).unwrap();
            let want = direct_conv(&x, &w, &geom);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12, "{geom:?}");
        }
    }

    #[test]
    fn transposed_products() {
        let a = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[3, 4], |i| (i as f64).sin());
        let at = a.transpose_last().unwrap();
        let want = matmul(&at, &b).unwrap();
        assert!(matmul_tn(&a, &b).unwrap().max_abs_diff(&want).unwrap() < 1e-12);
        let bt = b.transpose_last().unwrap();
        let want = matmul(&at, &a).unwrap();
        let got = matmul_nt(&at, &at).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
        assert_eq!(bt.shape(), &[4, 3]);
    }
}
