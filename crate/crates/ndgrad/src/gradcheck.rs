//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, element)` where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradCheck {
    /// Compares analytic gradients of the scalar built by `f` against central
    /// differences, for every element of every input.
    pub fn run<F>(&self, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        let analytic: Vec<Tensor> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();

        let eval = |xs: &[Tensor]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars = xs.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
            let out = f(&mut tape, &vars)?;
            tape.value(out).item()
        };

        let mut numeric = Vec::with_capacity(inputs.len());
        let mut max_rel_err = 0.0;
        let mut worst = (0, 0);
        let mut work: Vec<Tensor> = inputs.to_vec();
        for (i, input) in inputs.iter().enumerate() {
            let mut num = Tensor::zeros(input.shape());
            for j in 0..input.numel() {
                let orig = input.data()[j];
                work[i].data_mut()[j] = orig + self.step;
                let plus = eval(&work)?;
                work[i].data_mut()[j] = orig - self.step;
                let minus = eval(&work)?;
                work[i].data_mut()[j] = orig;
                let n = (plus - minus) / (2.0 * self.step);
                num.data_mut()[j] = n;
                let a = analytic[i].data()[j];
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(self.floor);
                if rel > max_rel_err {
                    max_rel_err = rel;
                    worst = (i, j);
                }
            }
            numeric.push(num);
        }
        Ok(GradCheckReport {
            max_rel_err,
            worst,
            analytic,
            numeric,
        })
    }
}
