//! Central-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Where a gradient check disagreed the most.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

/// Compares reverse-mode gradients of `op` against central differences with
/// step `h` for every entry of every input.
///
/// Non-scalar outputs are reduced with a fixed pseudo-random projection so all
/// output positions contribute.
pub fn finite_diff_check<F>(op: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let out = op(&mut tape, &vars)?;
    let weights = projection(tape.value(out).len());
    let loss = tape.weighted_sum(out, &weights)?;
    let grads = tape.backward(loss);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = op(&mut tape, &vars)?;
        Ok(tape.data(out).iter().zip(&weights).map(|(a, b)| a * b).sum())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[i].len());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[j], numeric);
            report.entries += 1;
            if err > report.max_rel_error || report.entries == 1 {
                report = GradCheckReport {
                    max_rel_error: err,
                    input: i,
                    index: j,
                    analytic: analytic[j],
                    numeric,
                    entries: report.entries,
                };
            }
        }
    }
    Ok(report)
}

fn projection(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}
