//! Minimum-cost perfect assignment on a square cost matrix
//! (shortest augmenting paths with row/column potentials, O(n^3)).

/// `cost` is row-major `n x n`. Returns the column assigned to each row and
/// the total cost.
pub fn assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based potentials; column 0 is a virtual start
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = vec![0usize; n];
    for j in 1..=n {
        cols[owner[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i * n + cols[i]]).sum();
    (cols, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..n {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute(cost: &[f64], n: usize) -> f64 {
        permutations(n)
            .iter()
            .map(|p| (0..n).map(|i| cost[i * n + p[i]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn hand_case_3x3() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (cols, total) = assignment(&cost, 3);
        assert_eq!(total, 5.0);
        assert_eq!(total, brute(&cost, 3));
        let mut seen = cols.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn matches_enumeration_up_to_six() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in 1..=6 {
            for _ in 0..30 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0..20) as f64).collect();
                assert_eq!(assignment(&cost, n).1, brute(&cost, n));
            }
        }
    }
}
