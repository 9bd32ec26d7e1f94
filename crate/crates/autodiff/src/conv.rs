//! Same-padded 2-d cross-correlation.
//!
//! `conv2d` supports 1x1 and 3x3 kernels and lowers to a matrix product
//! (direct for 1x1, through an im2col buffer for 3x3). Kernels are ordinary
//! graph values, so they may themselves be produced by another network.
//! `depthwise3x3` applies a small bank of 3x3 filters to every channel
//! independently, as used by the cellular automaton perception stage.

use crate::error::{AutodiffError, Result};
use crate::graph::{GradCtx, Graph, Op, Var};
use crate::real::{matmul, MatRef, Real};
use crate::tensor::Tensor;

fn im2col<T: Real>(input: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); channels * 9 * hw];
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * hw..][..hw];
                let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let (x0, x1) = valid_range(w, dx);
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    for x in x0..x1 {
                        dst[x] = src[(x as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(cols: &[T], channels: usize, h: usize, w: usize, out: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(c * 9 + ky * 3 + kx) * hw..][..hw];
                let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let (x0, x1) = valid_range(w, dx);
                    let src = &row[y * w..][..w];
                    let dst = &mut out[c * hw + sy as usize * w..][..w];
                    for x in x0..x1 {
                        dst[(x as isize + dx) as usize] += src[x];
                    }
                }
            }
        }
    }
}

/// Output columns `x` for which `x + dx` stays inside `0..w`.
fn valid_range(w: usize, dx: isize) -> (usize, usize) {
    let x0 = if dx < 0 { (-dx) as usize } else { 0 };
    let x1 = if dx > 0 { w.saturating_sub(dx as usize) } else { w };
    (x0, x1.max(x0))
}

impl<T: Real> Graph<T> {
    /// `input` (C,H,W), `kernel` (M,C,K,K) with K in {1,3}, optional `bias` (M).
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let is = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if is.len() != 3 || ks.len() != 4 || ks[1] != is[0] || ks[2] != ks[3] {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                lhs: is,
                rhs: ks,
            });
        }
        let k = ks[2];
        if k != 1 && k != 3 {
            return Err(AutodiffError::KernelSize {
                op: "conv2d",
                size: k,
            });
        }
        let (c, h, w, m) = (is[0], is[1], is[2], ks[0]);
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: ks,
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let hw = h * w;
        let mut out = vec![T::zero(); m * hw];
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_mut(hw).zip(self.value(b).data()) {
                row.iter_mut().for_each(|v| *v = bv);
            }
        }
        let x = self.value(input).data();
        let kd = self.value(kernel).data();
        let inner = c * k * k;
        if k == 1 {
            matmul(MatRef::new(kd, m, c), MatRef::new(x, c, hw), &mut out, true);
        } else {
            let cols = im2col(x, c, h, w);
            matmul(MatRef::new(kd, m, inner), MatRef::new(&cols, inner, hw), &mut out, true);
        }
        let out = Tensor::new(&[m, h, w], out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            &inputs,
        ))
    }

    /// Applies each of the F filters in `kernels` (F,3,3) to every channel
    /// of `input` (C,H,W). Output channel `f * C + c` holds filter `f`
    /// applied to channel `c`.
    pub fn depthwise3x3(&mut self, input: Var, kernels: Var) -> Result<Var> {
        let is = self.shape(input).to_vec();
        let ks = self.shape(kernels).to_vec();
        if is.len() != 3 || ks.len() != 3 || ks[1] != 3 || ks[2] != 3 {
            return Err(AutodiffError::ShapeMismatch {
                op: "depthwise3x3",
                lhs: is,
                rhs: ks,
            });
        }
        let (c, h, w, f) = (is[0], is[1], is[2], ks[0]);
        let hw = h * w;
        let x = self.value(input).data();
        let kd = self.value(kernels).data();
        let mut out = vec![T::zero(); f * c * hw];
        for fi in 0..f {
            for ci in 0..c {
                let src = &x[ci * hw..][..hw];
                let dst = &mut out[(fi * c + ci) * hw..][..hw];
                for tap in 0..9 {
                    let wv = kd[fi * 9 + tap];
                    if wv == T::zero() {
                        continue;
                    }
                    let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
                    let (x0, x1) = valid_range(w, dx);
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * w..][..w];
                        let drow = &mut dst[y * w..][..w];
                        for xx in x0..x1 {
                            drow[xx] += wv * srow[(xx as isize + dx) as usize];
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[f * c, h, w], out)?;
        Ok(self.push(out, Op::Depthwise3x3 { input, kernels }, &[input, kernels]))
    }
}

pub(crate) fn conv2d_backward<T: Real>(
    ctx: &mut GradCtx<'_, T>,
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    g: &[T],
) {
    let xv = ctx.value(input);
    let kv = ctx.value(kernel);
    let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
    let (m, k) = (kv.shape()[0], kv.shape()[2]);
    let hw = h * w;
    let inner = c * k * k;

    if let Some(b) = bias {
        if ctx.wants(b) {
            let slot = ctx.slot(b);
            for (d, row) in slot.iter_mut().zip(g.chunks(hw)) {
                *d += row.iter().copied().sum::<T>();
            }
        }
    }

    let gmat = MatRef::new(g, m, hw);
    let cols_owned;
    let cols: &[T] = if k == 1 {
        xv.data()
    } else if ctx.wants(kernel) {
        cols_owned = im2col(xv.data(), c, h, w);
        &cols_owned
    } else {
        &[]
    };

    if ctx.wants(kernel) {
        // dK (m x inner) += g (m x hw) * cols^T (hw x inner)
        matmul(gmat, MatRef::new(cols, inner, hw).t(), ctx.slot(kernel), true);
    }
    if ctx.wants(input) {
        let kmat = MatRef::new(kv.data(), m, inner).t();
        if k == 1 {
            matmul(kmat, gmat, ctx.slot(input), true);
        } else {
            let mut dcols = vec![T::zero(); inner * hw];
            matmul(kmat, gmat, &mut dcols, false);
            col2im_add(&dcols, c, h, w, ctx.slot(input));
        }
    }
}

pub(crate) fn depthwise3x3_backward<T: Real>(
    ctx: &mut GradCtx<'_, T>,
    input: Var,
    kernels: Var,
    g: &[T],
) {
    let xv = ctx.value(input);
    let kv = ctx.value(kernels);
    let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
    let f = kv.shape()[0];
    let hw = h * w;
    let x = xv.data();
    let kd = kv.data();

    if ctx.wants(input) {
        let slot = ctx.slot(input);
        for fi in 0..f {
            for ci in 0..c {
                let gsrc = &g[(fi * c + ci) * hw..][..hw];
                let dst = &mut slot[ci * hw..][..hw];
                for tap in 0..9 {
                    let wv = kd[fi * 9 + tap];
                    if wv == T::zero() {
                        continue;
                    }
                    let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
                    let (x0, x1) = valid_range(w, dx);
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let grow = &gsrc[y * w..][..w];
                        let drow = &mut dst[sy as usize * w..][..w];
                        for xx in x0..x1 {
                            drow[(xx as isize + dx) as usize] += wv * grow[xx];
                        }
                    }
                }
            }
        }
    }
    if ctx.wants(kernels) {
        let slot = ctx.slot(kernels);
        for fi in 0..f {
            for ci in 0..c {
                let gsrc = &g[(fi * c + ci) * hw..][..hw];
                let src = &x[ci * hw..][..hw];
                for tap in 0..9 {
                    let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
                    let (x0, x1) = valid_range(w, dx);
                    let mut acc = T::zero();
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let grow = &gsrc[y * w..][..w];
                        let srow = &src[sy as usize * w..][..w];
                        for xx in x0..x1 {
                            acc += grow[xx] * srow[(xx as isize + dx) as usize];
                        }
                    }
                    slot[fi * 9 + tap] += acc;
                }
            }
        }
    }
}
