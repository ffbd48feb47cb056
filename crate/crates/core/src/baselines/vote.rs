/// Plurality of per-frame `votes`; ties go to the class with the larger
/// `scores` entry (summed log-likelihood or probability).
pub fn majority_vote(votes: &[usize], scores: &[f64]) -> usize {
    let mut counts = vec![0usize; scores.len()];
    for &v in votes {
        counts[v] += 1;
    }
    (0..scores.len())
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(scores[a].total_cmp(&scores[b])).then(b.cmp(&a)))
        .unwrap_or(0)
}
