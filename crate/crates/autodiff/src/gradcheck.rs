//! Central finite-difference gradient checks.
//!
//! The checker only ever evaluates the forward function, so it is an
//! independent reference for the analytic backward rules.

use crate::error::AutodiffError;
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Finite-difference step.
    pub step: f64,
    /// Inputs larger than this are checked on an evenly spaced subset.
    pub max_coords_per_input: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_coords_per_input: 512,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` per input tensor.
    pub relative_errors: Vec<f64>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn coords(numel: usize, limit: usize) -> Vec<usize> {
    if numel <= limit {
        return (0..numel).collect();
    }
    (0..limit).map(|i| i * numel / limit).collect()
}

impl GradCheck {
    pub fn with_step(step: f64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }

    /// Compares the backward pass of `f` against central differences.
    ///
    /// `f` receives a graph and one leaf per input and must return a
    /// single-element output.
    pub fn run<T, E, F>(&self, inputs: &[Tensor<T>], f: F) -> Result<GradCheckReport, E>
    where
        T: Real,
        E: From<AutodiffError>,
        F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, E>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.backward(out)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| match g.grad(v) {
                Some(gr) => gr.iter().map(|x| x.to_f64_lossy()).collect(),
                None => vec![0.0; t.numel()],
            })
            .collect();

        let eval = |probe: &[Tensor<T>]| -> Result<f64, E> {
            let mut g = Graph::no_grad();
            let vars: Vec<Var> = probe.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&mut g, &vars)?;
            Ok(g.value(out).data()[0].to_f64_lossy())
        };
        let step = T::lit(self.step);
        // the perturbation actually applied after rounding to T
        let width = |orig: T| ((orig + step) - (orig - step)).to_f64_lossy();

        let mut probe = inputs.to_vec();
        let mut relative_errors = Vec::with_capacity(inputs.len());
        let mut checked = 0;
        for (i, input) in inputs.iter().enumerate() {
            let mut diff2 = 0.0;
            let mut an2 = 0.0;
            let mut num2 = 0.0;
            for j in coords(input.numel(), self.max_coords_per_input) {
                let orig = input.data()[j];
                probe[i].data_mut()[j] = orig + step;
                let plus = eval(&probe)?;
                probe[i].data_mut()[j] = orig - step;
                let minus = eval(&probe)?;
                probe[i].data_mut()[j] = orig;
                let numeric = (plus - minus) / width(orig);
                let a = analytic[i][j];
                diff2 += (a - numeric).powi(2);
                an2 += a * a;
                num2 += numeric * numeric;
                checked += 1;
            }
            let denom = an2.sqrt().max(num2.sqrt()).max(1e-12);
            relative_errors.push(diff2.sqrt() / denom);
        }
        Ok(GradCheckReport {
            relative_errors,
            coords_checked: checked,
        })
    }
}
