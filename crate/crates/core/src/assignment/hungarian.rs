use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Minimum-cost perfect assignment of a square matrix.
///
/// Shortest augmenting paths with row/column potentials, O(n^3). Returns
/// `sigma` with row `i` assigned to column `sigma[i]`, and the total cost.
pub fn hungarian(cost: &Tensor) -> Result<(Vec<usize>, f64)> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::NotSquare {
            rows: n,
            cols: cost.cols(),
        });
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite("assignment cost"));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based bookkeeping; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0; n];
    for j in 1..=n {
        sigma[row_of[j] - 1] = j - 1;
    }
    let total = sigma.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
    Ok((sigma, total))
}

/// 0/1 matrix with ones at `(i, sigma[i])`.
pub fn permutation_matrix(sigma: &[usize]) -> Tensor {
    let n = sigma.len();
    Tensor::from_fn(n, n, |i, j| (sigma[i] == j) as u8 as f64)
}
