use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Sample mean and standard deviation (`n - 1` denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Summary {
            mean,
            std: var.sqrt(),
            n,
        }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Below this many non-zero differences the null distribution is enumerated.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Non-zero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided.
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks of `values` (1-based), ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Paired signed-rank test on differences `d`. Zero differences are dropped.
/// Exact enumeration of the sign-flip distribution for fewer than
/// [`EXACT_LIMIT`] pairs, otherwise the normal approximation with tie and
/// continuity corrections.
pub fn wilcoxon_signed_rank(d: &[f64]) -> Wilcoxon {
    let nz: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    let n = nz.len();
    let ranks = average_ranks(&nz.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    if n == 0 {
        return Wilcoxon {
            n,
            w_plus,
            w_minus,
            p_value: 1.0,
            exact: true,
        };
    }
    let (p, exact) = if n < EXACT_LIMIT {
        // Doubled ranks are integers even with ties.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0f64; max + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = 2f64.powi(n as i32);
        let w = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
        let upper: f64 = counts[w..].iter().sum::<f64>() / all;
        ((2.0 * lower.min(upper)).min(1.0), true)
    } else {
        let nf = n as f64;
        let mut ties = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
            let t = j as f64;
            ties += t * t * t - t;
            i += j;
        }
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        let dev = (w_plus - mean).abs();
        let z = ((dev - 0.5).max(0.0)) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        ((2.0 * normal.sf(z)).min(1.0), false)
    };
    Wilcoxon {
        n,
        w_plus,
        w_minus,
        p_value: p,
        exact,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two-sided p by flipping every sign pattern.
    fn brute_force(d: &[f64]) -> f64 {
        let nz: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
        let ranks = average_ranks(&nz.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let observed: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        let n = nz.len();
        let (mut le, mut ge) = (0usize, 0usize);
        for mask in 0..1usize << n {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= observed + 1e-9 {
                le += 1;
            }
            if w >= observed - 1e-9 {
                ge += 1;
            }
        }
        (2.0 * le.min(ge) as f64 / (1usize << n) as f64).min(1.0)
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn summary_uses_sample_std() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Summary::of(&[7.0]).std, 0.0);
    }

    #[test]
    fn exact_matches_enumeration() {
        let cases: [&[f64]; 4] = [
            &[0.3, -0.1, 0.7, 0.2, 0.5, -0.4, 0.9],
            &[1.0, 1.0, -1.0, 2.0, 2.0, 0.0, 3.0, -2.0],
            &[0.1; 6],
            &[-0.5, 0.25, -0.75, 1.5, -2.0, 0.1, 0.2, 0.3, -0.4, 0.6, 0.8, -0.9],
        ];
        for d in cases {
            let w = wilcoxon_signed_rank(d);
            assert!(w.exact);
            assert!((w.p_value - brute_force(d)).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn all_positive_small_sample() {
        // Six positive differences: the extreme of 64 sign patterns.
        let w = wilcoxon_signed_rank(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert!((w.p_value - 2.0 / 64.0).abs() < 1e-15);
        assert_eq!(w.w_plus, 21.0);
        assert_eq!(w.w_minus, 0.0);
    }

    #[test]
    fn normal_approximation_reference() {
        // Thirty differences 1..=30 with every third negated. Reference from
        // an independent implementation with tie and continuity correction.
        let d: Vec<f64> = (1..=30).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 }).collect();
        let w = wilcoxon_signed_rank(&d);
        assert!(!w.exact);
        assert_eq!(w.w_minus, 165.0);
        assert!((w.p_value - 0.1681789797233525).abs() < 1e-9);
    }

    #[test]
    fn exact_reference() {
        let w = wilcoxon_signed_rank(&[0.3, -0.1, 0.7, 0.2, 0.5, -0.4, 0.9]);
        assert_eq!(w.w_minus, 5.0);
        assert!((w.p_value - 0.15625).abs() < 1e-15);
    }

    #[test]
    fn zeros_only_is_not_significant() {
        let w = wilcoxon_signed_rank(&[0.0, 0.0]);
        assert_eq!((w.n, w.p_value), (0, 1.0));
    }

    proptest! {
        #[test]
        fn exact_p_matches_enumeration(d in prop::collection::vec(-4i32..5, 1..13)) {
            let d: Vec<f64> = d.into_iter().map(|v| v as f64 * 0.5).collect();
            let w = wilcoxon_signed_rank(&d);
            prop_assert!((w.p_value - brute_force(&d)).abs() < 1e-12);
            prop_assert!((w.w_plus + w.w_minus - (w.n * (w.n + 1)) as f64 / 2.0).abs() < 1e-9);
        }
    }
}
