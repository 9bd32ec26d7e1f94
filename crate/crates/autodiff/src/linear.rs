use crate::error::{AutodiffError, Result};
use crate::graph::{GradCtx, Graph, Op, Var};
use crate::real::{matmul, MatRef, Real};
use crate::tensor::Tensor;

impl<T: Real> Graph<T> {
    /// Affine map `weight · input + bias`.
    ///
    /// `input` is either a vector (N) or a batch of rows (B,N); `weight` is
    /// (P,N) and the optional `bias` is (P). Row batches apply the same map
    /// to every row independently.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let is = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let (rows, n) = match is.as_slice() {
            [n] => (1, *n),
            [b, n] => (*b, *n),
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "dense",
                    lhs: is,
                    rhs: ws,
                })
            }
        };
        if ws.len() != 2 || ws[1] != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "dense",
                lhs: is,
                rhs: ws,
            });
        }
        let p = ws[0];
        let mut out = vec![T::zero(); rows * p];
        if let Some(b) = bias {
            if self.shape(b) != [p] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "dense bias",
                    lhs: ws,
                    rhs: self.shape(b).to_vec(),
                });
            }
            let bd = self.value(b).data();
            for row in out.chunks_mut(p) {
                row.copy_from_slice(bd);
            }
        }
        matmul(
            MatRef::new(self.value(input).data(), rows, n),
            MatRef::new(self.value(weight).data(), p, n).t(),
            &mut out,
            true,
        );
        let out_shape = if is.len() == 1 { vec![p] } else { vec![rows, p] };
        let out = Tensor::new(&out_shape, out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            out,
            Op::Dense {
                input,
                weight,
                bias,
            },
            &inputs,
        ))
    }
}

pub(crate) fn dense_backward<T: Real>(
    ctx: &mut GradCtx<'_, T>,
    input: Var,
    weight: Var,
    bias: Option<Var>,
    g: &[T],
) {
    let xv = ctx.value(input);
    let wv = ctx.value(weight);
    let (p, n) = (wv.shape()[0], wv.shape()[1]);
    let rows = xv.numel() / n;
    let gmat = MatRef::new(g, rows, p);
    if let Some(b) = bias {
        if ctx.wants(b) {
            let slot = ctx.slot(b);
            for row in g.chunks(p) {
                slot.iter_mut().zip(row).for_each(|(d, &x)| *d += x);
            }
        }
    }
    if ctx.wants(weight) {
        // dW (p x n) += g^T (p x rows) * X (rows x n)
        matmul(gmat.t(), MatRef::new(xv.data(), rows, n), ctx.slot(weight), true);
    }
    if ctx.wants(input) {
        matmul(gmat, MatRef::new(wv.data(), p, n), ctx.slot(input), true);
    }
}
