//! Per-sample distillation objective evaluated directly, without a tape.

use crate::autodiff::kernels::{log_softmax_rows, softmax_rows};

/// Loss terms for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillTerms {
    /// `T² · CE(softmax(teacher/T), softmax(student/T))`.
    pub soft: f64,
    /// `CE(student, label)`.
    pub hard: f64,
    /// `w · soft + (1 − w) · hard`.
    pub total: f64,
}

pub const DEFAULT_SOFT_WEIGHT: f64 = 0.9;

pub fn distill_terms(student: &[f64], teacher: &[f64], label: usize, temperature: f64, soft_weight: f64) -> DistillTerms {
    let c = student.len();
    let t = temperature;
    let p = softmax_rows(&teacher.iter().map(|v| v / t).collect::<Vec<_>>(), c);
    let log_q = log_softmax_rows(&student.iter().map(|v| v / t).collect::<Vec<_>>(), c);
    let soft = -p.iter().zip(&log_q).map(|(p, q)| p * q).sum::<f64>() * t * t;
    let hard = -log_softmax_rows(student, c)[label];
    DistillTerms {
        soft,
        hard,
        total: soft_weight * soft + (1.0 - soft_weight) * hard,
    }
}

/// Gradient of the soft term alone with respect to the student logits: `T(q − p)`.
pub fn soft_gradient(student: &[f64], teacher: &[f64], temperature: f64) -> Vec<f64> {
    let c = student.len();
    let t = temperature;
    let p = softmax_rows(&teacher.iter().map(|v| v / t).collect::<Vec<_>>(), c);
    let q = softmax_rows(&student.iter().map(|v| v / t).collect::<Vec<_>>(), c);
    q.iter().zip(&p).map(|(q, p)| t * (q - p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_fixture() {
        // teacher [2,0,0] at T=2 gives p = [e, 1, 1] / (e + 2); the student is
        // uniform, so soft = T² ln 3 and hard = ln 3.
        let d = distill_terms(&[0.0; 3], &[2.0, 0.0, 0.0], 0, 2.0, 0.9);
        let ln3 = 3f64.ln();
        assert!((d.soft - 4.0 * ln3).abs() < 1e-12);
        assert!((d.hard - ln3).abs() < 1e-12);
        assert!((d.total - 3.7 * ln3).abs() < 1e-10);
    }

    #[test]
    fn matched_logits_have_no_soft_gradient() {
        for t in [0.5, 1.0, 4.0, 10.0] {
            let g = soft_gradient(&[1.0, -2.0, 0.3], &[1.0, -2.0, 0.3], t);
            assert!(g.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn high_temperature_flattens_to_log_n() {
        let t = 1e6;
        let d = distill_terms(&[3.0, -1.0, 0.0], &[5.0, 0.0, -4.0], 1, t, 1.0);
        assert!((d.soft / (t * t) - 3f64.ln()).abs() < 1e-9);
    }
}
