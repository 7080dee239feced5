//! Two-sample rank-sum and one-sample t tests used by the association gates.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::{Error, Result};

/// Largest combined sample size handled by exact enumeration.
pub const EXACT_LIMIT: usize = 16;

/// Midranks (1-based) of `values`, with the tie-group sizes.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 * 0.5;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(
            "rank-sum test needs at least two values per sample".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample value".into()));
    }
    Ok(())
}

/// Two-sided p-value of the Wilcoxon rank-sum statistic of `a`.
///
/// Exact null distribution (over all equally likely rank assignments, ties
/// kept as midranks) when `|a| + |b| <= 16`; otherwise a normal approximation
/// with tie-corrected variance and a 0.5 continuity correction.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    if all.iter().all(|v| *v == all[0]) {
        return Ok(1.0);
    }
    let (ranks, ties) = midranks(&all);
    let (n, m) = (a.len(), b.len());
    let total = n + m;
    let w: f64 = ranks[..n].iter().sum();
    let mean = n as f64 * (total as f64 + 1.0) * 0.5;
    if total <= EXACT_LIMIT {
        return Ok(exact_p(&ranks, n, w - mean));
    }
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>()
        / (total as f64 * (total as f64 - 1.0));
    let var = n as f64 * m as f64 / 12.0 * ((total as f64 + 1.0) - tie_term);
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(erfc(z / std::f64::consts::SQRT_2).min(1.0))
}

// Counts subsets of size n by doubled rank sum (midranks are half-integers).
fn exact_p(ranks: &[f64], n: usize, dev: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let mut ways = vec![vec![0f64; max_sum + 1]; n + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=n).rev() {
            for s in (r..=max_sum).rev() {
                let add = ways[k - 1][s - r];
                if add != 0.0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let mean2 = n as f64 * (ranks.len() as f64 + 1.0);
    let thresh = 2.0 * dev.abs() - 1e-9;
    let (mut hit, mut all) = (0.0, 0.0);
    for (s, &c) in ways[n].iter().enumerate() {
        all += c;
        if (s as f64 - mean2).abs() >= thresh {
            hit += c;
        }
    }
    (hit / all).min(1.0)
}

/// Two-sided p-value of the one-sample t test of `xs` against mean `mu0`.
pub fn t_test_one_sample(xs: &[f64], mu0: f64) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "t test needs at least two values".into(),
        ));
    }
    if xs.iter().any(|v| !v.is_finite()) || !mu0.is_finite() {
        return Err(Error::Numeric("non-finite sample value".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = mean.abs().max(mu0.abs()).max(1.0);
    if var <= (1e-12 * scale).powi(2) {
        return Ok(if (mean - mu0).abs() <= 1e-12 * scale {
            1.0
        } else {
            0.0
        });
    }
    let t = (mean - mu0) / (var / n).sqrt();
    Ok(student_t_two_sided(t, n - 1.0))
}

/// `P(|T| >= |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    beta_reg(dof * 0.5, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates every n-subset of the pooled midranks.
    pub(crate) fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
        let all: Vec<f64> = a.iter().chain(b).copied().collect();
        let (ranks, _) = midranks(&all);
        let n = a.len();
        let total = all.len();
        let w: f64 = ranks[..n].iter().sum();
        let mean = n as f64 * (total as f64 + 1.0) / 2.0;
        let (mut hit, mut cnt) = (0u64, 0u64);
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let s: f64 = (0..total)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum();
            cnt += 1;
            if (s - mean).abs() >= (w - mean).abs() - 1e-9 {
                hit += 1;
            }
        }
        hit as f64 / cnt as f64
    }

    #[test]
    fn wilcoxon_examples() {
        assert!((wilcoxon_rank_sum(&[1.0, 2.0], &[3.0, 4.0]).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(
            wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0
        );
        assert_eq!(
            wilcoxon_rank_sum(&[5.0, 5.0], &[5.0, 5.0, 5.0]).unwrap(),
            1.0
        );
        let a: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        assert!(wilcoxon_rank_sum(&a, &b).unwrap() < 1e-6);
        assert!(wilcoxon_rank_sum(&[1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn t_test_examples() {
        let p = t_test_one_sample(&[1.0, 2.0, 3.0], 0.0).unwrap();
        assert!((p - (1.0 - 12f64.sqrt() / 14f64.sqrt())).abs() < 1e-12);
        assert!((p - 0.0742).abs() < 1e-4);
        assert_eq!(t_test_one_sample(&[1.0, 3.0], 2.0).unwrap(), 1.0);
        assert_eq!(t_test_one_sample(&[2.0, 2.0], 2.0).unwrap(), 1.0);
        assert_eq!(t_test_one_sample(&[2.0, 2.0], 3.0).unwrap(), 0.0);
        assert!(t_test_one_sample(&[2.0], 3.0).is_err());
    }

    #[test]
    fn t_test_monotone_in_offset() {
        let xs = [0.1, -0.4, 0.3, 0.9, -0.2];
        let mut last = 2.0;
        for k in 0..40 {
            let p = t_test_one_sample(&xs, 0.12 - 0.05 * k as f64).unwrap();
            assert!(p <= last);
            last = p;
        }
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(
            a in prop::collection::vec(0u8..6, 2..8),
            b in prop::collection::vec(0u8..6, 2..8),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let p = wilcoxon_rank_sum(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!((p - enumerate_p(&a, &b)).abs() <= 1e-12);
        }

        #[test]
        fn rank_sum_symmetric(
            a in prop::collection::vec(-5.0f64..5.0, 2..20),
            b in prop::collection::vec(-5.0f64..5.0, 2..20),
        ) {
            let p = wilcoxon_rank_sum(&a, &b).unwrap();
            let q = wilcoxon_rank_sum(&b, &a).unwrap();
            prop_assert!((p - q).abs() < 1e-9);
        }
    }
}
