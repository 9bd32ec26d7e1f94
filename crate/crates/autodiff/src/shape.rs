use crate::error::{AutodiffError, Result};
use crate::graph::{GradCtx, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// For every input position, the flat index of the output element it
/// contributes to when `axes` are reduced away.
fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let kept: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).collect();
    let mut out_shape: Vec<usize> = kept.iter().map(|&a| shape[a]).collect();
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    // stride in the output for each input axis (0 for reduced axes)
    let mut out_strides = vec![0usize; shape.len()];
    let mut stride = 1;
    for &a in kept.iter().rev() {
        out_strides[a] = stride;
        stride *= shape[a];
    }
    let total = numel(shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            offset += out_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            offset -= out_strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, map)
}

impl<T: Real> Graph<T> {
    /// Mean over the listed axes; reduced axes are removed from the shape.
    pub fn mean_over_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if let Some(&bad) = axes.iter().find(|&&ax| ax >= shape.len()) {
            return Err(AutodiffError::AxisOutOfRange {
                op: "mean_over_axes",
                axis: bad,
                rank: shape.len(),
            });
        }
        let (out_shape, map) = reduction_map(&shape, &axes);
        let count: usize = axes.iter().map(|&ax| shape[ax]).product();
        let inv = T::one() / T::lit(count as f64);
        let mut out = vec![T::zero(); numel(&out_shape)];
        for (&o, &x) in map.iter().zip(self.value(a).data()) {
            out[o] += x;
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.push(out, Op::MeanAxes { input: a, axes }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::new(shape, self.value(a).data().to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Contiguous sub-range `start..start + len` along axis 0.
    pub fn narrow(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if len == 0 || start + len > shape[0] {
            return Err(AutodiffError::Invalid {
                op: "narrow",
                msg: format!("range {start}..{} outside axis of length {}", start + len, shape[0]),
            });
        }
        let inner: usize = shape[1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let offset = start * inner;
        let data = self.value(a).data()[offset..offset + len * inner].to_vec();
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::Narrow { input: a, offset }, &[a]))
    }

    /// Concatenation along axis 0; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::Invalid {
                op: "concat",
                msg: "no inputs".into(),
            });
        };
        let trailing = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != trailing[..] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut out_shape = vec![lead];
        out_shape.extend(trailing);
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }
}

pub(crate) fn mean_axes_backward<T: Real>(
    ctx: &mut GradCtx<'_, T>,
    input: Var,
    axes: &[usize],
    g: &[T],
) {
    if !ctx.wants(input) {
        return;
    }
    let shape = ctx.value(input).shape();
    let (_, map) = reduction_map(shape, axes);
    let count: usize = axes.iter().map(|&ax| shape[ax]).product();
    let inv = T::one() / T::lit(count as f64);
    let slot = ctx.slot(input);
    for (d, &o) in slot.iter_mut().zip(&map) {
        *d += g[o] * inv;
    }
}

pub(crate) fn reshape_backward<T: Real>(ctx: &mut GradCtx<'_, T>, a: Var, g: &[T]) {
    if ctx.wants(a) {
        ctx.slot(a).iter_mut().zip(g).for_each(|(d, &x)| *d += x);
    }
}

pub(crate) fn narrow_backward<T: Real>(ctx: &mut GradCtx<'_, T>, a: Var, offset: usize, g: &[T]) {
    if ctx.wants(a) {
        let slot = &mut ctx.slot(a)[offset..offset + g.len()];
        slot.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
    }
}

pub(crate) fn concat_backward<T: Real>(ctx: &mut GradCtx<'_, T>, parts: &[Var], g: &[T]) {
    let mut offset = 0;
    for &p in parts {
        let n = ctx.value(p).numel();
        if ctx.wants(p) {
            let slice = &g[offset..offset + n];
            ctx.slot(p).iter_mut().zip(slice).for_each(|(d, &x)| *d += x);
        }
        offset += n;
    }
}
