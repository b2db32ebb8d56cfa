//! Minimum-cost perfect matching on dense square cost matrices.

/// Exact solver: shortest augmenting paths with row/column potentials, O(n^3).
///
/// Returns `assignment[row] = col`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    // 1-based internally; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of[0] = row;
        let mut col0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = row_of[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[(r0 - 1) * n + (col - 1)] - u[r0] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if row_of[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            row_of[col0] = row_of[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for col in 1..=n {
        assignment[row_of[col] - 1] = col - 1;
    }
    assignment
}

/// Epsilon-scaling forward auction. The returned matching costs at most
/// `n * final_eps` more than the optimum.
pub fn auction(cost: &[f64], n: usize, final_eps: f64) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    assert!(final_eps > 0.0);
    if n == 0 {
        return Vec::new();
    }
    let max_cost = cost.iter().cloned().fold(0.0f64, f64::max);
    let mut prices = vec![0.0f64; n];
    let mut eps = (max_cost / 4.0).max(final_eps);
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    loop {
        owner.iter_mut().for_each(|o| *o = None);
        assigned.iter_mut().for_each(|a| *a = None);
        let mut queue: std::collections::VecDeque<usize> = (0..n).collect();
        while let Some(person) = queue.pop_front() {
            // Benefit of object j is -cost - price; find best and second best.
            let row = &cost[person * n..(person + 1) * n];
            let mut best = usize::MAX;
            let mut best_val = f64::NEG_INFINITY;
            let mut second_val = f64::NEG_INFINITY;
            for (j, (&c, &p)) in row.iter().zip(&prices).enumerate() {
                let val = -c - p;
                if val > best_val {
                    second_val = best_val;
                    best_val = val;
                    best = j;
                } else if val > second_val {
                    second_val = val;
                }
            }
            let increment = if second_val.is_finite() {
                best_val - second_val + eps
            } else {
                eps
            };
            prices[best] += increment;
            if let Some(prev) = owner[best].replace(person) {
                assigned[prev] = None;
                queue.push_back(prev);
            }
            assigned[person] = Some(best);
        }
        if eps <= final_eps {
            break;
        }
        eps = (eps / 5.0).max(final_eps);
    }
    assigned.into_iter().map(|a| a.expect("auction terminates with a perfect matching")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for col in 0..n {
                if !used[col] {
                    used[col] = true;
                    rec(cost, n, row + 1, used, acc + cost[row * n + col], best);
                    used[col] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    fn total(cost: &[f64], n: usize, a: &[usize]) -> f64 {
        a.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=7 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect();
                let a = hungarian(&cost, n);
                let mut seen = a.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                assert!((total(&cost, n, &a) - brute_force(&cost, n)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn auction_within_gap_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [1, 5, 40, 120] {
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..3.0)).collect();
            let exact = total(&cost, n, &hungarian(&cost, n));
            let approx = total(&cost, n, &auction(&cost, n, 1e-3));
            assert!(approx >= exact - 1e-9);
            assert!(approx - exact <= 1e-3 * n as f64 + 1e-9, "{approx} vs {exact}");
        }
    }
}
