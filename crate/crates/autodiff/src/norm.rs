use crate::error::{AutodiffError, Result};
use crate::graph::{GradCtx, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::Tensor;

impl<T: Real> Graph<T> {
    /// Per-channel normalization over all non-channel axes, without affine
    /// terms: `(x - mean) / sqrt(var + epsilon)` with the population variance.
    pub fn instance_norm(&mut self, input: Var, epsilon: T) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(AutodiffError::Invalid {
                op: "instance_norm",
                msg: format!("expected (C, ...spatial) input, got {shape:?}"),
            });
        }
        let c = shape[0];
        let n = self.value(input).numel() / c;
        let nf = T::lit(n as f64);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(c);
        for (src, dst) in x.chunks(n).zip(out.chunks_mut(n)) {
            let mean = src.iter().copied().sum::<T>() / nf;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let inv = T::one() / (var + epsilon).sqrt();
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::InstanceNorm { input, inv_std }, &[input]))
    }

    /// Softmax over the last axis.
    pub fn softmax_lastdim(&mut self, input: Var) -> Var {
        let shape = self.shape(input).to_vec();
        let last = *shape.last().expect("tensors have rank >= 1");
        let mut out = self.value(input).data().to_vec();
        for row in out.chunks_mut(last) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let out = Tensor::new(&shape, out).expect("same shape");
        self.push(out, Op::SoftmaxLast(input), &[input])
    }
}

pub(crate) fn instance_norm_backward<T: Real>(
    ctx: &mut GradCtx<'_, T>,
    input: Var,
    normalized: &Tensor<T>,
    inv_std: &[T],
    g: &[T],
) {
    if !ctx.wants(input) {
        return;
    }
    let c = inv_std.len();
    let n = normalized.numel() / c;
    let nf = T::lit(n as f64);
    let slot = ctx.slot(input);
    for ch in 0..c {
        let y = &normalized.data()[ch * n..][..n];
        let gy = &g[ch * n..][..n];
        let sum_g = gy.iter().copied().sum::<T>();
        let sum_gy = gy.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>();
        let scale = inv_std[ch] / nf;
        for ((d, &gv), &yv) in slot[ch * n..][..n].iter_mut().zip(gy).zip(y) {
            *d += scale * (nf * gv - sum_g - yv * sum_gy);
        }
    }
}

pub(crate) fn softmax_backward<T: Real>(
    ctx: &mut GradCtx<'_, T>,
    input: Var,
    probs: &Tensor<T>,
    g: &[T],
) {
    if !ctx.wants(input) {
        return;
    }
    let last = *probs.shape().last().expect("rank >= 1");
    let slot = ctx.slot(input);
    for ((d, p), gr) in slot
        .chunks_mut(last)
        .zip(probs.data().chunks(last))
        .zip(g.chunks(last))
    {
        let dot = p.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
        for ((dv, &pv), &gv) in d.iter_mut().zip(p).zip(gr) {
            *dv += pv * (gv - dot);
        }
    }
}
