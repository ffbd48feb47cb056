//! Frame or clip scoring: accuracy, speech/non-speech accuracy, row-normalized
//! confusion and per-class F1.

use std::fmt;

use crate::class::{Class, FrameLabel, CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub n_scored: usize,
    pub accuracy: f64,
    /// Accuracy after merging noise and music into non-speech.
    pub sns_accuracy: f64,
    /// `counts[true][predicted]`.
    pub counts: [[usize; 3]; 3],
    /// Rows of `counts` divided by the true-class totals (zero rows stay zero).
    pub confusion: [[f64; 3]; 3],
    /// 1 for a class that is neither present nor predicted.
    pub f1: [f64; 3],
}

impl Score {
    pub fn mean_f1(&self) -> f64 {
        self.f1.iter().sum::<f64>() / 3.0
    }
}

/// Scores `predicted` against `truth`, skipping frames whose truth is `None`.
pub fn score_labels(predicted: &[usize], truth: &[Option<usize>]) -> Result<Score> {
    if predicted.len() != truth.len() {
        return Err(Error::Evaluation(format!(
            "{} predictions for {} reference labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut counts = [[0usize; 3]; 3];
    let mut sns_correct = 0;
    let speech = Class::Speech.index();
    for (&p, t) in predicted.iter().zip(truth) {
        let Some(t) = *t else { continue };
        if p >= 3 || t >= 3 {
            return Err(Error::Evaluation(format!("label {} out of range", p.max(t))));
        }
        counts[t][p] += 1;
        sns_correct += usize::from((p == speech) == (t == speech));
    }
    let n: usize = counts.iter().flatten().sum();
    if n == 0 {
        return Err(Error::Evaluation("no non-silence frames to score".into()));
    }
    let correct: usize = (0..3).map(|i| counts[i][i]).sum();
    let mut confusion = [[0.0; 3]; 3];
    let mut f1 = [0.0; 3];
    for i in 0..3 {
        let row: usize = counts[i].iter().sum();
        let col: usize = (0..3).map(|r| counts[r][i]).sum();
        if row > 0 {
            for j in 0..3 {
                confusion[i][j] = counts[i][j] as f64 / row as f64;
            }
        }
        f1[i] = if row + col == 0 {
            1.0
        } else {
            2.0 * counts[i][i] as f64 / (row + col) as f64
        };
    }
    Ok(Score {
        n_scored: n,
        accuracy: correct as f64 / n as f64,
        sns_accuracy: sns_correct as f64 / n as f64,
        counts,
        confusion,
        f1,
    })
}

/// Frame-wise score with silence frames excluded.
pub fn score(predicted: &[usize], truth: &[FrameLabel]) -> Result<Score> {
    let truth: Vec<Option<usize>> = truth.iter().map(|l| l.class().map(Class::index)).collect();
    score_labels(predicted, &truth)
}

impl fmt::Display for Score {
    /// Aligned plain-text tables.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames scored      {}", self.n_scored)?;
        writeln!(f, "accuracy           {:.2}%", 100.0 * self.accuracy)?;
        writeln!(f, "speech/non-speech  {:.2}%", 100.0 * self.sns_accuracy)?;
        writeln!(f, "mean F1            {:.4}", self.mean_f1())?;
        writeln!(f)?;
        writeln!(f, "{:<8} {:>8} {:>8} {:>8} {:>8}", "true\\pred", "noise", "music", "speech", "F1")?;
        for (i, c) in CLASSES.iter().enumerate() {
            writeln!(
                f,
                "{:<9} {:>7.2}% {:>7.2}% {:>7.2}% {:>8.4}",
                c.name(),
                100.0 * self.confusion[i][0],
                100.0 * self.confusion[i][1],
                100.0 * self.confusion[i][2],
                self.f1[i]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: Option<usize> = Some(0);
    const M: Option<usize> = Some(1);
    const S: Option<usize> = Some(2);

    #[test]
    fn perfect_predictions() {
        let truth = [N, M, S, S, M, N];
        let pred = [0, 1, 2, 2, 1, 0];
        let s = score_labels(&pred, &truth).unwrap();
        assert_eq!(s.accuracy, 1.0);
        assert_eq!(s.sns_accuracy, 1.0);
        assert_eq!(s.f1, [1.0; 3]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.confusion[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn hand_built_ten_frames() {
        // truth: N N N M M M S S S -, predictions below; the last frame is silence
        let truth = [N, N, N, M, M, M, S, S, S, None];
        let pred = [0, 1, 0, 1, 1, 0, 2, 2, 1, 2];
        let s = score_labels(&pred, &truth).unwrap();
        assert_eq!(s.n_scored, 9);
        assert_eq!(s.counts, [[2, 1, 0], [1, 2, 0], [0, 1, 2]]);
        assert!((s.accuracy - 6.0 / 9.0).abs() < 1e-15);
        // only the S→M frame crosses the speech boundary
        assert!((s.sns_accuracy - 8.0 / 9.0).abs() < 1e-15);
        assert!((s.confusion[2][1] - 1.0 / 3.0).abs() < 1e-15);
        // noise: tp 2, predicted 3, true 3; music: tp 2, predicted 4, true 3; speech: tp 2, predicted 2, true 3
        assert!((s.f1[0] - 4.0 / 6.0).abs() < 1e-15);
        assert!((s.f1[1] - 4.0 / 7.0).abs() < 1e-15);
        assert!((s.f1[2] - 4.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(score_labels(&[0, 1], &[None, None]), Err(Error::Evaluation(_))));
        assert!(matches!(score_labels(&[0], &[N, N]), Err(Error::Evaluation(_))));
    }

    #[test]
    fn relabelling_permutes_the_matrix() {
        let truth = [N, N, M, S, S, M, N, S];
        let pred = [0, 2, 1, 2, 1, 0, 0, 2];
        let perm = [2, 0, 1];
        let s = score_labels(&pred, &truth).unwrap();
        let pt: Vec<Option<usize>> = truth.iter().map(|t| t.map(|v| perm[v])).collect();
        let pp: Vec<usize> = pred.iter().map(|&v| perm[v]).collect();
        let q = score_labels(&pp, &pt).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.counts[i][j], q.counts[perm[i]][perm[j]]);
            }
        }
        assert_eq!(s.accuracy, q.accuracy);
    }
}
