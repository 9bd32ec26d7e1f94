use crate::error::{AutodiffError, Result};
use crate::graph::{GradCtx, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::Tensor;

impl<T: Real> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data).expect("shape checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// Multiplication by a differentiable single-element tensor.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "scale_by",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let factor = self.value(s).data()[0];
        let out = self.value(a).map(|x| x * factor);
        Ok(self.push(out, Op::ScaleBy(a, s), &[a, s]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a), &[a])
    }

    /// Sum of all elements, as a single-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let n = T::lit(va.numel() as f64);
        let total: T = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(total / n), Op::Mse(a, b), &[a, b]))
    }
}

pub(crate) fn add_backward<T: Real>(ctx: &mut GradCtx<'_, T>, a: Var, b: Var, g: &[T]) {
    for v in [a, b] {
        if ctx.wants(v) {
            ctx.slot(v).iter_mut().zip(g).for_each(|(d, &x)| *d += x);
        }
    }
}

pub(crate) fn sub_backward<T: Real>(ctx: &mut GradCtx<'_, T>, a: Var, b: Var, g: &[T]) {
    if ctx.wants(a) {
        ctx.slot(a).iter_mut().zip(g).for_each(|(d, &x)| *d += x);
    }
    if ctx.wants(b) {
        ctx.slot(b).iter_mut().zip(g).for_each(|(d, &x)| *d -= x);
    }
}

pub(crate) fn mul_backward<T: Real>(ctx: &mut GradCtx<'_, T>, a: Var, b: Var, g: &[T]) {
    let (va, vb) = (ctx.value(a), ctx.value(b));
    if ctx.wants(a) {
        let slot = ctx.slot(a);
        for ((d, &x), &y) in slot.iter_mut().zip(g).zip(vb.data()) {
            *d += x * y;
        }
    }
    if ctx.wants(b) {
        let slot = ctx.slot(b);
        for ((d, &x), &y) in slot.iter_mut().zip(g).zip(va.data()) {
            *d += x * y;
        }
    }
}

pub(crate) fn scale_backward<T: Real>(ctx: &mut GradCtx<'_, T>, a: Var, s: T, g: &[T]) {
    if ctx.wants(a) {
        ctx.slot(a).iter_mut().zip(g).for_each(|(d, &x)| *d += x * s);
    }
}

pub(crate) fn scale_by_backward<T: Real>(ctx: &mut GradCtx<'_, T>, a: Var, s: Var, g: &[T]) {
    let factor = ctx.value(s).data()[0];
    let va = ctx.value(a);
    if ctx.wants(a) {
        ctx.slot(a).iter_mut().zip(g).for_each(|(d, &x)| *d += x * factor);
    }
    if ctx.wants(s) {
        let dot: T = g.iter().zip(va.data()).map(|(&x, &y)| x * y).sum();
        ctx.slot(s)[0] += dot;
    }
}

pub(crate) fn relu_backward<T: Real>(ctx: &mut GradCtx<'_, T>, a: Var, g: &[T]) {
    if !ctx.wants(a) {
        return;
    }
    let va = ctx.value(a);
    let slot = ctx.slot(a);
    for ((d, &x), &inp) in slot.iter_mut().zip(g).zip(va.data()) {
        if inp > T::zero() {
            *d += x;
        }
    }
}

pub(crate) fn sum_backward<T: Real>(ctx: &mut GradCtx<'_, T>, a: Var, g: &[T]) {
    if ctx.wants(a) {
        let s = g[0];
        ctx.slot(a).iter_mut().for_each(|d| *d += s);
    }
}

pub(crate) fn mse_backward<T: Real>(ctx: &mut GradCtx<'_, T>, a: Var, b: Var, g: &[T]) {
    let (va, vb) = (ctx.value(a), ctx.value(b));
    let coef = g[0] * T::lit(2.0) / T::lit(va.numel() as f64);
    if ctx.wants(a) {
        let slot = ctx.slot(a);
        for ((d, &x), &y) in slot.iter_mut().zip(va.data()).zip(vb.data()) {
            *d += coef * (x - y);
        }
    }
    if ctx.wants(b) {
        let slot = ctx.slot(b);
        for ((d, &x), &y) in slot.iter_mut().zip(va.data()).zip(vb.data()) {
            *d -= coef * (x - y);
        }
    }
}
