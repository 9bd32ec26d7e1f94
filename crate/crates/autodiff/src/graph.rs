use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::{conv, elementwise, linear, norm, shape};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    Relu(Var),
    Sum(Var),
    Mse(Var, Var),
    MeanAxes { input: Var, axes: Vec<usize> },
    Reshape(Var),
    Narrow { input: Var, offset: usize },
    Concat(Vec<Var>),
    Conv2d { input: Var, kernel: Var, bias: Option<Var> },
    Depthwise3x3 { input: Var, kernels: Var },
    Dense { input: Var, weight: Var, bias: Option<Var> },
    InstanceNorm { input: Var, inv_std: Vec<T> },
    SoftmaxLast(Var),
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Tape of executed operations for one forward pass.
///
/// Values are computed eagerly as ops are recorded. A single call to
/// [`Graph::backward`] fills gradients for every node that depends on a
/// leaf created with `requires_grad`; a second call is rejected. Build a
/// fresh graph for each training step.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    differentiated: bool,
    grad_enabled: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            differentiated: false,
            grad_enabled: true,
        }
    }

    /// Evaluation-only graph: every leaf is treated as a constant.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.nodes.push(Node {
            value,
            requires_grad: rg,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grad(v)?;
        Tensor::new(self.shape(v), g.to_vec()).ok()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad: rg,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a single-element root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.differentiated {
            return Err(AutodiffError::BackwardTwice);
        }
        let root_shape = self.shape(root).to_vec();
        if self.value(root).numel() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_shape));
        }
        self.differentiated = true;
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        if !self.nodes[root.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.requires_grad {
                let mut ctx = GradCtx {
                    nodes: &self.nodes,
                    grads: &mut grads,
                };
                backprop(&mut ctx, node, &gout);
            }
            grads[i] = Some(gout);
        }
        self.grads = grads;
        Ok(())
    }
}

/// Gradient accumulation view used by the per-op backward rules.
pub(crate) struct GradCtx<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Real> GradCtx<'a, T> {
    pub fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulation buffer for `v`, zero-initialized on first use.
    pub fn slot(&mut self, v: Var) -> &mut [T] {
        let n = self.nodes[v.0].value.numel();
        self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }
}

fn backprop<T: Real>(ctx: &mut GradCtx<'_, T>, node: &Node<T>, gout: &[T]) {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => elementwise::add_backward(ctx, *a, *b, gout),
        Op::Sub(a, b) => elementwise::sub_backward(ctx, *a, *b, gout),
        Op::Mul(a, b) => elementwise::mul_backward(ctx, *a, *b, gout),
        Op::Scale(a, s) => elementwise::scale_backward(ctx, *a, *s, gout),
        Op::ScaleBy(a, s) => elementwise::scale_by_backward(ctx, *a, *s, gout),
        Op::Relu(a) => elementwise::relu_backward(ctx, *a, gout),
        Op::Sum(a) => elementwise::sum_backward(ctx, *a, gout),
        Op::Mse(a, b) => elementwise::mse_backward(ctx, *a, *b, gout),
        Op::MeanAxes { input, axes } => shape::mean_axes_backward(ctx, *input, axes, gout),
        Op::Reshape(a) => shape::reshape_backward(ctx, *a, gout),
        Op::Narrow { input, offset } => shape::narrow_backward(ctx, *input, *offset, gout),
        Op::Concat(parts) => shape::concat_backward(ctx, parts, gout),
        Op::Conv2d {
            input,
            kernel,
            bias,
        } => conv::conv2d_backward(ctx, *input, *kernel, *bias, gout),
        Op::Depthwise3x3 { input, kernels } => {
            conv::depthwise3x3_backward(ctx, *input, *kernels, gout)
        }
        Op::Dense {
            input,
            weight,
            bias,
        } => linear::dense_backward(ctx, *input, *weight, *bias, gout),
        Op::InstanceNorm { input, inv_std } => {
            norm::instance_norm_backward(ctx, *input, &node.value, inv_std, gout)
        }
        Op::SoftmaxLast(a) => norm::softmax_backward(ctx, *a, &node.value, gout),
    }
}
