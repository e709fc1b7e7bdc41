//! Maximum-weight one-to-one matching between clusters and labels.

/// Minimum-cost perfect assignment on a square matrix (O(n³) potentials
/// method). Returns `assignment[row] = column`.
pub(crate) fn min_cost_assignment(costs: &[Vec<i64>]) -> Vec<usize> {
    let n = costs.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs[i0 - 1][j - 1] - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Best total weight of an injective row→column matching restricted to the
/// given rows and columns (rows may go unmatched when columns run out).
pub(crate) fn max_weight(weights: &[Vec<u64>], rows: &[usize], cols: &[usize]) -> u64 {
    let n = rows.len().max(cols.len());
    if n == 0 {
        return 0;
    }
    let top = weights
        .iter()
        .flat_map(|r| r.iter())
        .copied()
        .max()
        .unwrap_or(0) as i64;
    let cell = |r: usize, c: usize| -> i64 {
        match (rows.get(r), cols.get(c)) {
            (Some(&i), Some(&j)) => weights[i][j] as i64,
            _ => 0,
        }
    };
    let costs: Vec<Vec<i64>> = (0..n)
        .map(|r| (0..n).map(|c| top - cell(r, c)).collect())
        .collect();
    let a = min_cost_assignment(&costs);
    (0..n).map(|r| cell(r, a[r]) as u64).sum()
}

/// Optimal injective mapping with a lexicographic tie-break: cluster 0 takes
/// the smallest label that still allows an optimal completion, then cluster
/// 1, and so on. `None` means the cluster is left unmatched (more clusters
/// than labels).
pub(crate) fn lexicographic_matching(weights: &[Vec<u64>], n_labels: usize) -> (Vec<Option<usize>>, u64) {
    let m = weights.len();
    let mut rows: Vec<usize> = (0..m).collect();
    let mut cols: Vec<usize> = (0..n_labels).collect();
    let best = max_weight(weights, &rows, &cols);
    let mut remaining = best;
    let mut mapping = vec![None; m];
    for c in 0..m {
        rows.retain(|&r| r != c);
        let mut chosen = None;
        for (pos, &l) in cols.iter().enumerate() {
            let mut rest = cols.clone();
            rest.remove(pos);
            if weights[c][l] + max_weight(weights, &rows, &rest) == remaining {
                chosen = Some((pos, l));
                break;
            }
        }
        match chosen {
            Some((pos, l)) => {
                remaining -= weights[c][l];
                cols.remove(pos);
                mapping[c] = Some(l);
            }
            // Leaving `c` unmatched must then be optimal.
            None => debug_assert_eq!(max_weight(weights, &rows, &cols), remaining),
        }
    }
    (mapping, best)
}
