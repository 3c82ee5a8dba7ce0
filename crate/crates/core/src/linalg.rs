//! Small dense solves used by the fitters.

use crate::scalar::Real;

/// Gaussian elimination with partial pivoting. Returns `None` for a singular system.
pub fn solve_dense<T: Real>(mut m: Vec<Vec<T>>, mut rhs: Vec<T>) -> Option<Vec<T>> {
    let n = rhs.len();
    let scale = m
        .iter()
        .flat_map(|row| row.iter())
        .fold(T::zero(), |acc, v| acc.max(v.abs()));
    if scale == T::zero() {
        return None;
    }
    let eps = scale * T::epsilon() * T::lit(n as f64 * 8.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if m[pivot][col].abs() <= eps {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..n {
                let v = m[col][k];
                m[row][k] = m[row][k] - factor * v;
            }
            let v = rhs[col];
            rhs[row] = rhs[row] - factor * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc = acc - m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Least squares `min |A x - y|` via the normal equations.
pub fn least_squares<T: Real>(rows: &[Vec<T>], y: &[T]) -> Option<Vec<T>> {
    let n = rows.first()?.len();
    let mut ata = vec![vec![T::zero(); n]; n];
    let mut aty = vec![T::zero(); n];
    for (row, &yi) in rows.iter().zip(y) {
        for i in 0..n {
            aty[i] = aty[i] + row[i] * yi;
            for j in 0..n {
                ata[i][j] = ata[i][j] + row[i] * row[j];
            }
        }
    }
    solve_dense(ata, aty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_three_by_three() {
        let m: Vec<Vec<f64>> = vec![vec![2.0, 1.0, -1.0], vec![-3.0, -1.0, 2.0], vec![-2.0, 1.0, 2.0]];
        let x = solve_dense(m, vec![8.0, -11.0, -3.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
        assert!((x[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_is_none() {
        let m = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve_dense(m, vec![1.0, 2.0]).is_none());
    }
}
