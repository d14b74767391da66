//! Kron reduction: Schur-complement elimination of passive buses from a
//! susceptance matrix.

use nalgebra::DMatrix;

use crate::error::{CoreError, Result};

/// Eliminates every bus not listed in `retained` and returns the Schur
/// complement `B_rr - B_re B_ee^{-1} B_er`, with rows/columns ordered as in
/// `retained`. Retaining all buses returns the (re-ordered) input unchanged.
pub fn kron_reduce(b_full: &DMatrix<f64>, retained: &[usize]) -> Result<DMatrix<f64>> {
    let n = b_full.nrows();
    if b_full.ncols() != n {
        return Err(CoreError::InvalidInput(format!(
            "susceptance matrix is {}x{}, not square",
            n,
            b_full.ncols()
        )));
    }
    let mut seen = vec![false; n];
    for &i in retained {
        if i >= n {
            return Err(CoreError::InvalidInput(format!("retained bus {i} out of range")));
        }
        if seen[i] {
            return Err(CoreError::InvalidInput(format!("retained bus {i} listed twice")));
        }
        seen[i] = true;
    }
    let eliminated: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();

    let r = retained.len();
    let m = eliminated.len();
    let mut b_rr = DMatrix::zeros(r, r);
    for (a, &i) in retained.iter().enumerate() {
        for (b, &j) in retained.iter().enumerate() {
            b_rr[(a, b)] = b_full[(i, j)];
        }
    }
    if m == 0 {
        return Ok(b_rr);
    }

    let mut b_re = DMatrix::zeros(r, m);
    let mut b_ee = DMatrix::zeros(m, m);
    for (a, &i) in retained.iter().enumerate() {
        for (b, &j) in eliminated.iter().enumerate() {
            b_re[(a, b)] = b_full[(i, j)];
        }
    }
    for (a, &i) in eliminated.iter().enumerate() {
        for (b, &j) in eliminated.iter().enumerate() {
            b_ee[(a, b)] = b_full[(i, j)];
        }
    }

    let lu = b_ee.lu();
    let solved = lu
        .solve(&b_re.transpose())
        .ok_or(CoreError::SingularEliminatedBlock { buses: eliminated })?;
    let mut reduced = b_rr - &b_re * solved;
    // A Schur complement of a symmetric matrix is symmetric; remove the
    // rounding skew the LU solve introduces.
    for i in 0..r {
        for j in (i + 1)..r {
            let s = 0.5 * (reduced[(i, j)] + reduced[(j, i)]);
            reduced[(i, j)] = s;
            reduced[(j, i)] = s;
        }
    }
    Ok(reduced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn retaining_all_buses_is_identity() {
        let b = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 1.0, -2.0, 1.0, 0.0, 1.0, -1.0]);
        let reduced = kron_reduce(&b, &[0, 1, 2]).unwrap();
        assert_abs_diff_eq!((&reduced - &b).norm(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn three_bus_chain_eliminating_middle() {
        let b = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 1.0, -2.0, 1.0, 0.0, 1.0, -1.0]);
        let reduced = kron_reduce(&b, &[0, 2]).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]);
        assert_abs_diff_eq!((&reduced - &expected).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_eliminated_block_reports_buses() {
        // Bus 2 is isolated: eliminating it leaves a zero (singular) block.
        let mut b = DMatrix::zeros(3, 3);
        b[(0, 1)] = 1.0;
        b[(1, 0)] = 1.0;
        b[(0, 0)] = -1.0;
        b[(1, 1)] = -1.0;
        match kron_reduce(&b, &[0, 1]) {
            Err(CoreError::SingularEliminatedBlock { buses }) => assert_eq!(buses, vec![2]),
            other => panic!("expected singular-block error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_range_and_duplicate_retained() {
        let b = DMatrix::zeros(2, 2);
        assert!(kron_reduce(&b, &[0, 5]).is_err());
        assert!(kron_reduce(&b, &[0, 0]).is_err());
    }

    fn random_laplacian(n: usize, weights: &[f64]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                let w = weights[k % weights.len()].abs() + 0.1;
                k += 1;
                b[(i, j)] = w;
                b[(j, i)] = w;
            }
        }
        for i in 0..n {
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| b[(i, j)]).sum();
            b[(i, i)] = -s;
        }
        b
    }

    proptest! {
        #[test]
        fn reduction_preserves_symmetry_and_zero_row_sums(
            weights in proptest::collection::vec(0.1f64..10.0, 10),
            keep_mask in 0b00001u32..0b11111,
        ) {
            let b = random_laplacian(5, &weights);
            let retained: Vec<usize> = (0..5).filter(|i| keep_mask & (1 << i) != 0).collect();
            prop_assume!(retained.len() >= 2 && retained.len() < 5);
            let reduced = kron_reduce(&b, &retained).unwrap();
            let r = retained.len();
            for i in 0..r {
                let row_sum: f64 = (0..r).map(|j| reduced[(i, j)]).sum();
                prop_assert!(row_sum.abs() < 1e-9);
                for j in 0..r {
                    prop_assert!((reduced[(i, j)] - reduced[(j, i)]).abs() < 1e-12);
                }
            }
        }
    }
}
