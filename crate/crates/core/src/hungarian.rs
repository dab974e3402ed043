//! Maximum-weight one-to-one assignment (Kuhn-Munkres with potentials).

use nalgebra::DMatrix;

/// Assigns rows to columns maximizing the summed weight. Rectangular inputs
/// are padded with zero-weight dummies. Returns, per row, the chosen column
/// (`None` when the row landed on a dummy column).
pub fn max_weight_assignment(weights: &DMatrix<f64>) -> Vec<Option<usize>> {
    let rows = weights.nrows();
    let cols = weights.ncols();
    if rows == 0 {
        return Vec::new();
    }
    if cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            -weights[(i, j)]
        } else {
            0.0
        }
    };

    // 1-based arrays; index 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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

    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefers_global_optimum_over_greedy() {
        let w = DMatrix::from_row_slice(2, 2, &[0.9, 0.8, 0.85, 0.1]);
        assert_eq!(max_weight_assignment(&w), vec![Some(1), Some(0)]);
    }

    #[test]
    fn rectangular_inputs() {
        let wide = DMatrix::from_row_slice(1, 3, &[0.1, 0.7, 0.3]);
        assert_eq!(max_weight_assignment(&wide), vec![Some(1)]);
        let tall = DMatrix::from_row_slice(3, 1, &[0.1, 0.7, 0.3]);
        assert_eq!(max_weight_assignment(&tall), vec![None, Some(0), None]);
        let empty = DMatrix::<f64>::zeros(2, 0);
        assert_eq!(max_weight_assignment(&empty), vec![None, None]);
    }
}
