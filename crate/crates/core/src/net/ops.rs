//! Convolution and resampling kernels with hand-written adjoints.
//!
//! Reductions run in a fixed order per output element, and parallel work is
//! split so no two tasks write the same location. Results are therefore
//! independent of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weights(&self) -> usize {
        self.kernel.pow(3) * self.cin * self.cout
    }

    pub fn params(&self) -> usize {
        self.weights() + self.cout
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_dims(&self, d: [usize; 3]) -> [usize; 3] {
        d.map(|n| (n + 2 * self.pad() - self.kernel) / self.stride + 1)
    }

    /// Per kernel offset, the half-open range of output indices whose tap
    /// lands inside the input.
    fn ranges(&self, n_in: usize, n_out: usize) -> Vec<(usize, usize)> {
        let (s, p) = (self.stride, self.pad());
        (0..self.kernel)
            .map(|d| {
                let lo = if d >= p { 0 } else { (p - d).div_ceil(s) };
                let hi = if n_in + p > d { ((n_in - 1 + p - d) / s + 1).min(n_out) } else { 0 };
                (lo, hi.max(lo))
            })
            .collect()
    }
}

struct Geometry {
    k: usize,
    s: usize,
    p: usize,
    din: [usize; 3],
    dout: [usize; 3],
    r: [Vec<(usize, usize)>; 3],
}

impl Geometry {
    fn new(shape: &ConvShape, din: [usize; 3]) -> Self {
        let dout = shape.out_dims(din);
        Geometry {
            k: shape.kernel,
            s: shape.stride,
            p: shape.pad(),
            din,
            dout,
            r: [0, 1, 2].map(|a| shape.ranges(din[a], dout[a])),
        }
    }

    /// Visit every (output row, input row, x range) pair for one kernel
    /// offset. `f(out_row_start, in_row_start, xlo, xhi, in_x_of_xlo)`.
    #[inline]
    fn rows(&self, dz: usize, dy: usize, dx: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let (zlo, zhi) = self.r[2][dz];
        let (ylo, yhi) = self.r[1][dy];
        let (xlo, xhi) = self.r[0][dx];
        if xlo >= xhi {
            return;
        }
        let ix0 = xlo * self.s + dx - self.p;
        for oz in zlo..zhi {
            let iz = oz * self.s + dz - self.p;
            for oy in ylo..yhi {
                let iy = oy * self.s + dy - self.p;
                f(
                    (oz * self.dout[1] + oy) * self.dout[0],
                    (iz * self.din[1] + iy) * self.din[0],
                    xlo,
                    xhi,
                    ix0,
                );
            }
        }
    }
}

/// Zero-padded 3D convolution. `params` holds `[cout][cin][kz][ky][kx]`
/// weights followed by `cout` biases.
pub fn conv_forward(shape: &ConvShape, params: &[f64], x: &Tensor) -> Tensor {
    debug_assert_eq!(x.channels, shape.cin);
    debug_assert_eq!(params.len(), shape.params());
    let g = Geometry::new(shape, x.dims);
    let mut out = Tensor::zeros(shape.cout, g.dout);
    let plane = out.plane();
    let (w, bias) = params.split_at(shape.weights());
    let k = g.k;
    let k3 = k * k * k;
    out.data.par_chunks_mut(plane).enumerate().for_each(|(o, oc)| {
        oc.fill(bias[o]);
        for i in 0..shape.cin {
            let ic = x.channel(i);
            let wk = &w[(o * shape.cin + i) * k3..][..k3];
            for dz in 0..k {
                for dy in 0..k {
                    for dx in 0..k {
                        let wv = wk[(dz * k + dy) * k + dx];
                        g.rows(dz, dy, dx, |orow, irow, xlo, xhi, ix0| {
                            let dst = &mut oc[orow + xlo..orow + xhi];
                            if g.s == 1 {
                                let src = &ic[irow + ix0..irow + ix0 + dst.len()];
                                for (a, b) in dst.iter_mut().zip(src) {
                                    *a += wv * b;
                                }
                            } else {
                                for (n, a) in dst.iter_mut().enumerate() {
                                    *a += wv * ic[irow + ix0 + n * g.s];
                                }
                            }
                        });
                    }
                }
            }
        }
    });
    out
}

/// Accumulate parameter gradients into `gparams` and return the input
/// gradient when `need_input` is set.
pub fn conv_backward(
    shape: &ConvShape,
    params: &[f64],
    x: &Tensor,
    gout: &Tensor,
    gparams: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let g = Geometry::new(shape, x.dims);
    debug_assert_eq!(gout.dims, g.dout);
    let k = g.k;
    let k3 = k * k * k;
    let (gw, gb) = gparams.split_at_mut(shape.weights());
    for (o, b) in gb.iter_mut().enumerate() {
        *b += gout.channel(o).iter().sum::<f64>();
    }
    gw.par_chunks_mut(shape.cin * k3).enumerate().for_each(|(o, gwo)| {
        let goc = gout.channel(o);
        for i in 0..shape.cin {
            let ic = x.channel(i);
            for dz in 0..k {
                for dy in 0..k {
                    for dx in 0..k {
                        let mut acc = 0.0;
                        g.rows(dz, dy, dx, |orow, irow, xlo, xhi, ix0| {
                            let go = &goc[orow + xlo..orow + xhi];
                            if g.s == 1 {
                                let src = &ic[irow + ix0..irow + ix0 + go.len()];
                                acc += go.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                            } else {
                                acc += go.iter().enumerate().map(|(n, a)| a * ic[irow + ix0 + n * g.s]).sum::<f64>();
                            }
                        });
                        gwo[i * k3 + (dz * k + dy) * k + dx] += acc;
                    }
                }
            }
        }
    });
    if !need_input {
        return None;
    }
    let w = &params[..shape.weights()];
    let mut gin = Tensor::zeros(shape.cin, x.dims);
    let plane = gin.plane();
    gin.data.par_chunks_mut(plane).enumerate().for_each(|(i, gic)| {
        for o in 0..shape.cout {
            let goc = gout.channel(o);
            let wk = &w[(o * shape.cin + i) * k3..][..k3];
            for dz in 0..k {
                for dy in 0..k {
                    for dx in 0..k {
                        let wv = wk[(dz * k + dy) * k + dx];
                        g.rows(dz, dy, dx, |orow, irow, xlo, xhi, ix0| {
                            let go = &goc[orow + xlo..orow + xhi];
                            if g.s == 1 {
                                let dst = &mut gic[irow + ix0..irow + ix0 + go.len()];
                                for (a, b) in dst.iter_mut().zip(go) {
                                    *a += wv * b;
                                }
                            } else {
                                for (n, b) in go.iter().enumerate() {
                                    gic[irow + ix0 + n * g.s] += wv * b;
                                }
                            }
                        });
                    }
                }
            }
        }
    });
    Some(gin)
}

/// Linear interpolation taps for resizing one axis from `n_in` to `n_out`
/// samples, with half-pixel alignment and edge clamping.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn resize_axis(t: &Tensor, axis: usize, n_new: usize, transpose: bool) -> Tensor {
    let mut dims = t.dims;
    let n_src = dims[axis];
    dims[axis] = n_new;
    let (n_in, n_out) = if transpose { (n_new, n_src) } else { (n_src, n_new) };
    let tp = taps(n_in, n_out);
    let inner: usize = t.dims[..axis].iter().product();
    let outer = t.channels * t.dims[axis + 1..].iter().product::<usize>();
    let mut out = Tensor::zeros(t.channels, dims);
    for o in 0..outer {
        let src = &t.data[o * n_src * inner..(o + 1) * n_src * inner];
        let dst = &mut out.data[o * n_new * inner..(o + 1) * n_new * inner];
        for (d, &(i0, i1, w)) in tp.iter().enumerate() {
            if transpose {
                // adjoint: scatter output sample d back onto its taps
                let g = &src[d * inner..(d + 1) * inner];
                for (j, &gv) in g.iter().enumerate() {
                    dst[i0 * inner + j] += (1.0 - w) * gv;
                    dst[i1 * inner + j] += w * gv;
                }
            } else {
                for j in 0..inner {
                    dst[d * inner + j] = (1.0 - w) * src[i0 * inner + j] + w * src[i1 * inner + j];
                }
            }
        }
    }
    out
}

/// Separable trilinear upsampling to `dims`.
pub fn upsample(t: &Tensor, dims: [usize; 3]) -> Tensor {
    let a = resize_axis(t, 0, dims[0], false);
    let b = resize_axis(&a, 1, dims[1], false);
    resize_axis(&b, 2, dims[2], false)
}

/// Adjoint of `upsample` back to the coarse `dims`.
pub fn upsample_backward(g: &Tensor, dims: [usize; 3]) -> Tensor {
    let a = resize_axis(g, 2, dims[2], true);
    let b = resize_axis(&a, 1, dims[1], true);
    resize_axis(&b, 0, dims[0], true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random(c: usize, dims: [usize; 3], key: u64) -> Tensor {
        let n = c * dims.iter().product::<usize>();
        Tensor::from_data(c, dims, (0..n).map(|i| rng::normal(&[key, i as u64])).collect()).unwrap()
    }

    /// Direct-definition convolution used as an oracle.
    fn naive(shape: &ConvShape, params: &[f64], x: &Tensor) -> Tensor {
        let dout = shape.out_dims(x.dims);
        let k = shape.kernel as isize;
        let p = (shape.kernel / 2) as isize;
        let mut out = Tensor::zeros(shape.cout, dout);
        let mut n = 0;
        for o in 0..shape.cout {
            for z in 0..dout[2] {
                for y in 0..dout[1] {
                    for xo in 0..dout[0] {
                        let mut acc = params[shape.weights() + o];
                        for i in 0..shape.cin {
                            for dz in 0..k {
                                for dy in 0..k {
                                    for dx in 0..k {
                                        let iz = (z * shape.stride) as isize + dz - p;
                                        let iy = (y * shape.stride) as isize + dy - p;
                                        let ix = (xo * shape.stride) as isize + dx - p;
                                        let inside = [ix, iy, iz].iter().zip(x.dims).all(|(&c, n)| c >= 0 && (c as usize) < n);
                                        if inside {
                                            let w = params[(((o * shape.cin + i) * shape.kernel + dz as usize) * shape.kernel + dy as usize) * shape.kernel + dx as usize];
                                            acc += w * x.at(i, ix as usize, iy as usize, iz as usize);
                                        }
                                    }
                                }
                            }
                        }
                        out.data[n] = acc;
                        n += 1;
                    }
                }
            }
        }
        out
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_direct_definition() {
        for (kernel, stride, dims) in [(3, 1, [5, 4, 3]), (3, 2, [6, 5, 4]), (1, 1, [3, 3, 2]), (3, 2, [1, 2, 3])] {
            let shape = ConvShape { cin: 2, cout: 3, kernel, stride };
            let params: Vec<f64> = (0..shape.params()).map(|i| rng::normal(&[5, i as u64])).collect();
            let x = random(2, dims, 9);
            let fast = conv_forward(&shape, &params, &x);
            let slow = naive(&shape, &params, &x);
            assert_eq!(fast.dims, slow.dims);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> is linear in x and in the weights; check both adjoints
        for stride in [1, 2] {
            let shape = ConvShape { cin: 2, cout: 2, kernel: 3, stride };
            let mut params: Vec<f64> = (0..shape.params()).map(|i| rng::normal(&[1, i as u64])).collect();
            for b in &mut params[shape.weights()..] {
                *b = 0.0;
            }
            let x = random(2, [6, 5, 4], 2);
            let y = conv_forward(&shape, &params, &x);
            let g = random(2, y.dims, 3);
            let mut gp = vec![0.0; shape.params()];
            let gx = conv_backward(&shape, &params, &x, &g, &mut gp, true).unwrap();
            let lhs = dot(&y.data, &g.data);
            assert!((lhs - dot(&gx.data, &x.data)).abs() < 1e-9 * lhs.abs().max(1.0));
            assert!((lhs - dot(&gp[..shape.weights()], &params[..shape.weights()])).abs() < 1e-9 * lhs.abs().max(1.0));
            let gsum: Vec<f64> = (0..2).map(|o| g.channel(o).iter().sum()).collect();
            assert_eq!(&gp[shape.weights()..], &gsum[..]);
        }
    }

    #[test]
    fn upsample_adjoint_and_constants() {
        let c = random(2, [2, 3, 2], 4);
        let up = upsample(&c, [4, 6, 4]);
        let g = random(2, [4, 6, 4], 5);
        let back = upsample_backward(&g, [2, 3, 2]);
        assert!((dot(&up.data, &g.data) - dot(&c.data, &back.data)).abs() < 1e-10);
        let ones = Tensor::from_data(1, [3, 2, 2], vec![1.0; 12]).unwrap();
        assert!(upsample(&ones, [12, 8, 8]).data.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let same = upsample(&c, c.dims);
        assert_eq!(same, c);
    }
}
