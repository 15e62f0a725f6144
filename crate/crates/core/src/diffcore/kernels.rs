//! Raw numeric kernels behind the graph ops. All inputs are assumed
//! shape-checked by the caller.

use super::tensor::Tensor;

/// `op(a) · op(b)` where `op` optionally transposes a 2-D operand.
pub(crate) fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(
        k,
        k2,
        "matmul inner dimensions differ: {:?}{} x {:?}{}",
        a.shape(),
        if ta { "ᵀ" } else { "" },
        b.shape(),
        if tb { "ᵀ" } else { "" }
    );
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return Tensor::from_parts(vec![m, n], out);
    }
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    // SAFETY: the pointers cover m*k, k*n and m*n elements with the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Tensor::from_parts(vec![m, n], out)
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected NCHW tensor, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

/// Stride-1 2-D cross-correlation with symmetric zero padding.
/// `x`: [n, c, h, w], `w`: [o, c, kh, kw] -> [n, o, h + 2p - kh + 1, w + 2p - kw + 1].
pub(crate) fn conv2d(x: &Tensor, w: &Tensor, pad: usize) -> Tensor {
    let (n, c, h, wd) = dims4(x);
    let (o, c2, kh, kw) = dims4(w);
    assert_eq!(c, c2, "conv2d channel mismatch");
    let oh = h + 2 * pad + 1 - kh;
    let ow = wd + 2 * pad + 1 - kw;
    let xd = x.data();
    let wdat = w.data();
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            let obase = (ni * o + oi) * oh * ow;
            for ci in 0..c {
                let xbase = (ni * c + ci) * h * wd;
                let wbase = (oi * c + ci) * kh * kw;
                for a in 0..kh {
                    for b in 0..kw {
                        let wv = wdat[wbase + a * kw + b];
                        for i in 0..oh {
                            let xi = i + a;
                            if xi < pad || xi - pad >= h {
                                continue;
                            }
                            let xrow = xbase + (xi - pad) * wd;
                            let orow = obase + i * ow;
                            for j in 0..ow {
                                let xj = j + b;
                                if xj < pad || xj - pad >= wd {
                                    continue;
                                }
                                out[orow + j] += wv * xd[xrow + xj - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![n, o, oh, ow], out)
}

/// Adjoint of [`conv2d`] with respect to its input.
pub(crate) fn conv_input_grad(gy: &Tensor, w: &Tensor, pad: usize, h: usize, wd: usize) -> Tensor {
    let (n, o, oh, ow) = dims4(gy);
    let (o2, c, kh, kw) = dims4(w);
    assert_eq!(o, o2, "conv_input_grad channel mismatch");
    let gd = gy.data();
    let wdat = w.data();
    let mut out = vec![0.0; n * c * h * wd];
    for ni in 0..n {
        for oi in 0..o {
            let gbase = (ni * o + oi) * oh * ow;
            for ci in 0..c {
                let xbase = (ni * c + ci) * h * wd;
                let wbase = (oi * c + ci) * kh * kw;
                for a in 0..kh {
                    for b in 0..kw {
                        let wv = wdat[wbase + a * kw + b];
                        for i in 0..oh {
                            let xi = i + a;
                            if xi < pad || xi - pad >= h {
                                continue;
                            }
                            let xrow = xbase + (xi - pad) * wd;
                            let grow = gbase + i * ow;
                            for j in 0..ow {
                                let xj = j + b;
                                if xj < pad || xj - pad >= wd {
                                    continue;
                                }
                                out[xrow + xj - pad] += wv * gd[grow + j];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![n, c, h, wd], out)
}

/// Adjoint of [`conv2d`] with respect to its kernel.
pub(crate) fn conv_weight_grad(x: &Tensor, gy: &Tensor, pad: usize, kh: usize, kw: usize) -> Tensor {
    let (n, c, h, wd) = dims4(x);
    let (n2, o, oh, ow) = dims4(gy);
    assert_eq!(n, n2, "conv_weight_grad batch mismatch");
    let xd = x.data();
    let gd = gy.data();
    let mut out = vec![0.0; o * c * kh * kw];
    for ni in 0..n {
        for oi in 0..o {
            let gbase = (ni * o + oi) * oh * ow;
            for ci in 0..c {
                let xbase = (ni * c + ci) * h * wd;
                let wbase = (oi * c + ci) * kh * kw;
                for a in 0..kh {
                    for b in 0..kw {
                        let mut acc = 0.0;
                        for i in 0..oh {
                            let xi = i + a;
                            if xi < pad || xi - pad >= h {
                                continue;
                            }
                            let xrow = xbase + (xi - pad) * wd;
                            let grow = gbase + i * ow;
                            for j in 0..ow {
                                let xj = j + b;
                                if xj < pad || xj - pad >= wd {
                                    continue;
                                }
                                acc += gd[grow + j] * xd[xrow + xj - pad];
                            }
                        }
                        out[wbase + a * kw + b] += acc;
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![o, c, kh, kw], out)
}

/// Non-overlapping k×k mean pooling.
pub(crate) fn avg_pool(x: &Tensor, k: usize) -> Tensor {
    let (n, c, h, w) = dims4(x);
    assert!(h % k == 0 && w % k == 0, "avg_pool: {h}x{w} not divisible by {k}");
    let (oh, ow) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f64;
    let xd = x.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        for i in 0..h {
            for j in 0..w {
                out[plane * oh * ow + (i / k) * ow + j / k] += xd[plane * h * w + i * w + j] * scale;
            }
        }
    }
    Tensor::from_parts(vec![n, c, oh, ow], out)
}

/// Adjoint of [`avg_pool`]: spreads each value over its k×k block, divided by k².
pub(crate) fn avg_unpool(g: &Tensor, k: usize) -> Tensor {
    let (n, c, oh, ow) = dims4(g);
    let (h, w) = (oh * k, ow * k);
    let scale = 1.0 / (k * k) as f64;
    let gd = g.data();
    let mut out = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        for i in 0..h {
            for j in 0..w {
                out[plane * h * w + i * w + j] = gd[plane * oh * ow + (i / k) * ow + j / k] * scale;
            }
        }
    }
    Tensor::from_parts(vec![n, c, h, w], out)
}

pub(crate) fn sum_channels(x: &Tensor) -> Tensor {
    let (n, c, h, w) = dims4(x);
    let xd = x.data();
    let mut out = vec![0.0; c];
    for ni in 0..n {
        for (ci, o) in out.iter_mut().enumerate() {
            let base = (ni * c + ci) * h * w;
            *o += xd[base..base + h * w].iter().sum::<f64>();
        }
    }
    Tensor::from_parts(vec![c], out)
}

pub(crate) fn broadcast_channels(b: &Tensor, shape: &[usize]) -> Tensor {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    assert_eq!(b.len(), c, "broadcast_channels: bias length");
    let bd = b.data();
    let mut out = Vec::with_capacity(n * c * h * w);
    for _ in 0..n {
        for &v in bd {
            out.extend(std::iter::repeat_n(v, h * w));
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

pub(crate) fn log_softmax_rows(z: &Tensor) -> Tensor {
    let m = z.shape()[1];
    let mut out = Vec::with_capacity(z.len());
    for row in z.data().chunks(m) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    Tensor::from_parts(z.shape().to_vec(), out)
}
