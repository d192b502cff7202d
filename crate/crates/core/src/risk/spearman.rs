use super::{RiskError, ScoreVector};

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let mean = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation of two equally long samples: Pearson correlation of
/// their average ranks.
pub fn spearman_slices(a: &[f64], b: &[f64]) -> Result<f64, RiskError> {
    if a.len() != b.len() {
        return Err(RiskError::MismatchedNodes);
    }
    if a.len() < 2 {
        return Err(RiskError::TooFewNodes(a.len()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    // Ranks always sum to n(n+1)/2.
    let mean = (n + 1.0) / 2.0;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(RiskError::UndefinedCorrelation);
    }
    Ok((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation between two score vectors over the same node set.
pub fn spearman(a: &ScoreVector, b: &ScoreVector) -> Result<f64, RiskError> {
    if a.scores.len() != b.scores.len() || a.scores.keys().any(|k| !b.scores.contains_key(k)) {
        return Err(RiskError::MismatchedNodes);
    }
    let xs: Vec<f64> = a.scores.values().copied().collect();
    let ys: Vec<f64> = a.scores.keys().map(|k| b.scores[k]).collect();
    spearman_slices(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        assert_eq!(average_ranks(&[0.0, 0.0, 0.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn perfect_and_reversed() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman_slices(&a, &a).unwrap(), 1.0);
        assert_eq!(spearman_slices(&a, &b).unwrap(), -1.0);
    }

    #[test]
    fn one_tied_pair_matches_hand_value() {
        // ranks a = [1,2,3,4,5], ranks b = [1,2.5,2.5,4,5];
        // rank-then-Pearson: cov = 9.5, var_a = 10, var_b = 9.5
        let r = spearman_slices(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 3.0, 4.0, 9.0]).unwrap();
        assert!((r - 9.5 / (10.0f64 * 9.5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_is_undefined() {
        assert_eq!(
            spearman_slices(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(RiskError::UndefinedCorrelation)
        );
        assert_eq!(spearman_slices(&[1.0], &[2.0]), Err(RiskError::TooFewNodes(1)));
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(v in proptest::collection::vec((0u8..6, 0u8..6), 2..20)) {
            let a: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
            match (spearman_slices(&a, &b), spearman_slices(&b, &a)) {
                (Ok(x), Ok(y)) => {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert!((-1.0..=1.0).contains(&x));
                }
                (Err(e1), Err(e2)) => prop_assert_eq!(e1, e2),
                _ => prop_assert!(false, "asymmetric error"),
            }
        }

        #[test]
        fn self_correlation_is_one(a in proptest::collection::vec(0u8..8, 2..20)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            if let Ok(r) = spearman_slices(&a, &a) {
                prop_assert!((r - 1.0).abs() < 1e-12);
            }
        }
    }
}
