//! Rectangular assignment (Hungarian method with potentials).

/// Minimum-cost assignment of every row to a distinct column.
///
/// `cost` is row-major `rows x cols` with `rows <= cols`. Returns the column
/// chosen for each row.
pub fn min_cost_assignment(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    assert!(rows <= cols && cost.len() == rows * cols);
    if rows == 0 {
        return Vec::new();
    }
    let at = |i: usize, j: usize| cost[(i - 1) * cols + (j - 1)];
    // 1-based arrays; column 0 is the virtual start column
    let mut u = vec![0.0_f64; rows + 1];
    let mut v = vec![0.0_f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = at(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
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
    let mut assignment = vec![0usize; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Largest total weight of a one-to-one matching between rows and columns.
pub fn max_weight_matching(weight: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let (t_rows, t_cols, cost): (usize, usize, Vec<f64>) = if rows <= cols {
        (rows, cols, weight.iter().map(|w| -w).collect())
    } else {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = -weight[i * cols + j];
            }
        }
        (cols, rows, t)
    };
    min_cost_assignment(&cost, t_rows, t_cols)
        .iter()
        .enumerate()
        .map(|(i, &j)| -cost[i * t_cols + j])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(weight: &[f64], rows: usize, cols: usize) -> f64 {
        fn go(i: usize, rows: usize, cols: usize, w: &[f64], used: &mut Vec<bool>) -> f64 {
            if i == rows {
                return 0.0;
            }
            // row i may also stay unmatched when rows > cols
            let mut best = if rows > cols { go(i + 1, rows, cols, w, used) } else { f64::NEG_INFINITY };
            for j in 0..cols {
                if !used[j] {
                    used[j] = true;
                    best = best.max(w[i * cols + j] + go(i + 1, rows, cols, w, used));
                    used[j] = false;
                }
            }
            best
        }
        go(0, rows, cols, weight, &mut vec![false; cols])
    }

    #[test]
    fn square_case() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = min_cost_assignment(&cost, 3, 3);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i * 3 + j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn matches_brute_force_on_rectangles() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for rows in 1..=4 {
            for cols in 1..=4 {
                let w: Vec<f64> = (0..rows * cols).map(|_| next()).collect();
                let got = max_weight_matching(&w, rows, cols);
                assert!((got - brute(&w, rows, cols)).abs() < 1e-12, "{rows}x{cols}");
            }
        }
    }
}
