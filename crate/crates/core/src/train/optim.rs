//! Adam and cosine annealing with warm restarts.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments for parameters of the given sizes.
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f64>> = sizes.into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn for_params<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self::new(params.into_iter().map(Tensor::len))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }
}

/// One bias-corrected Adam update. `names` label parameters in errors. The
/// state is left untouched if any gradient is non-finite.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]], names: &[&str], lr: f64) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(Error::shape(format!(
            "adam: {} moment slots, {} parameters, {} gradients",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).copied().unwrap_or("?");
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::shape(format!("adam: size mismatch for `{name}`")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training {
                param: name.to_string(),
                reason: "non-finite gradient".into(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `min + ½(base − min)(1 + cos(π t / period))`.
pub fn sgdr_lr(t: f64, period: f64, base_lr: f64, min_lr: f64) -> f64 {
    min_lr + 0.5 * (base_lr - min_lr) * (1.0 + (std::f64::consts::PI * t / period).cos())
}

/// Warm-restart schedule measured in (fractional) epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgdr {
    pub base_lr: f64,
    pub min_lr: f64,
    /// Length of the first period in epochs.
    pub period: f64,
    /// Each restart multiplies the period by this.
    pub multiplier: f64,
}

impl Default for Sgdr {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            min_lr: 1e-5,
            period: 10.0,
            multiplier: 2.0,
        }
    }
}

impl Sgdr {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.base_lr) {
            return Err(Error::config(format!(
                "learning rates need 0 < min_lr ({}) <= base_lr ({})",
                self.min_lr, self.base_lr
            )));
        }
        if !(self.period > 0.0) || !(self.multiplier >= 1.0) {
            return Err(Error::config("restart period must be positive and the multiplier at least 1"));
        }
        Ok(())
    }

    /// Position `(t, T_i)` within the current period at global epoch `epoch`.
    pub fn locate(&self, epoch: f64) -> (f64, f64) {
        let mut t = epoch;
        let mut period = self.period;
        while t >= period {
            t -= period;
            period *= self.multiplier;
        }
        (t, period)
    }

    pub fn lr(&self, epoch: f64) -> f64 {
        let (t, period) = self.locate(epoch);
        sgdr_lr(t, period, self.base_lr, self.min_lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgdr_closed_form_points() {
        assert_eq!(sgdr_lr(0.0, 10.0, 1e-3, 1e-5), 1e-3);
        assert!((sgdr_lr(10.0, 10.0, 1e-3, 1e-5) - 1e-5).abs() < 1e-18);
        assert!((sgdr_lr(5.0, 10.0, 1e-3, 1e-5) - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn schedule_restarts_and_grows() {
        let s = Sgdr::default();
        assert_eq!(s.locate(0.0), (0.0, 10.0));
        assert_eq!(s.locate(10.0), (0.0, 20.0));
        assert_eq!(s.locate(35.0), (5.0, 40.0));
        assert_eq!(s.lr(10.0), s.base_lr);
        assert_eq!(s.lr(30.0), s.base_lr);
        // continuous approaching the end of a period
        assert!((s.lr(9.999_999) - s.min_lr).abs() < 1e-12);
    }

    #[test]
    fn first_step_is_sign_of_gradient() {
        let mut st = AdamState::new([3]);
        let mut p = vec![1.0, 2.0, 3.0];
        let g = [0.5, -2.0, 1e-3];
        adam_step(&mut st, &mut [&mut p], &[&g], &["w"], 1e-3).unwrap();
        for (after, (before, g)) in p.iter().zip([1.0, 2.0, 3.0].iter().zip(g)) {
            let expected = -1e-3 * g.signum();
            assert!(((after - before) - expected).abs() / 1e-3 < 1e-5);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut st = AdamState::new([2]);
        let mut p = vec![0.3, -0.7];
        for _ in 0..5 {
            adam_step(&mut st, &mut [&mut p], &[&[0.0, 0.0]], &["w"], 1e-2).unwrap();
        }
        assert_eq!(p, vec![0.3, -0.7]);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut st = AdamState::new([1, 1]);
        let (mut a, mut b) = (vec![0.0], vec![0.0]);
        let err = adam_step(&mut st, &mut [&mut a, &mut b], &[&[1.0], &[f64::NAN]], &["a", "b"], 1e-3).unwrap_err();
        assert!(matches!(err, Error::Training { ref param, .. } if param == "b"));
        assert_eq!(st.step_count(), 0);
        assert_eq!(a, vec![0.0]);
    }

    #[test]
    fn invalid_schedules() {
        let bad = Sgdr {
            min_lr: 1e-2,
            ..Sgdr::default()
        };
        assert!(bad.validate().is_err());
        assert!(Sgdr::default().validate().is_ok());
    }
}
