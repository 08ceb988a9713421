//! Maximum-weight one-to-one assignment (Hungarian method).

/// Maximum-weight matching on a dense `rows × cols` integer weight matrix.
///
/// Every row is matched when `rows <= cols` (and every column otherwise);
/// callers drop zero-weight pairs afterwards. Returns `(row, col)` pairs.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<(usize, usize)> {
    let rows = weights.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = weights[0].len();
    if cols == 0 {
        return Vec::new();
    }
    if rows > cols {
        let transposed: Vec<Vec<i64>> = (0..cols)
            .map(|c| (0..rows).map(|r| weights[r][c]).collect())
            .collect();
        return max_weight_assignment(&transposed)
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
    }
    // Minimum cost on negated weights with 1-based potentials.
    let n = rows;
    let m = cols;
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut out: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(w: &[Vec<i64>], pairs: &[(usize, usize)]) -> i64 {
        pairs.iter().map(|&(r, c)| w[r][c]).sum()
    }

    #[test]
    fn picks_crossing_assignment() {
        let w = vec![vec![5, 4], vec![4, 0]];
        let a = max_weight_assignment(&w);
        assert_eq!(total(&w, &a), 8);
        assert_eq!(a, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular_both_ways() {
        let w = vec![vec![1, 7, 3]];
        assert_eq!(max_weight_assignment(&w), vec![(0, 1)]);
        let wt = vec![vec![1], vec![7], vec![3]];
        assert_eq!(max_weight_assignment(&wt), vec![(1, 0)]);
        assert!(max_weight_assignment(&[]).is_empty());
    }

    #[test]
    fn agrees_with_permutation_search() {
        let w = vec![vec![3, 9, 2, 7], vec![8, 1, 6, 4], vec![5, 5, 9, 0], vec![2, 8, 4, 6]];
        let mut best = 0;
        let mut perm = [0usize, 1, 2, 3];
        permute(&mut perm, 0, &mut |p| {
            best = best.max((0..4).map(|i| w[i][p[i]]).sum());
        });
        assert_eq!(total(&w, &max_weight_assignment(&w)), best);
    }

    fn permute(p: &mut [usize; 4], k: usize, f: &mut impl FnMut(&[usize; 4])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }
}
