use ahgnn::{spmm, spspmm, DenseMatrix, SparseMatrix};
use proptest::prelude::*;

fn sparse(rows: usize, cols: usize) -> impl Strategy<Value = SparseMatrix> {
    proptest::collection::vec(proptest::option::weighted(0.3, 1u8..=4), rows * cols).prop_map(
        move |cells| {
            let t: Vec<(usize, usize, f64)> = cells
                .iter()
                .enumerate()
                .filter_map(|(k, v)| v.map(|w| (k / cols, k % cols, f64::from(w))))
                .collect();
            SparseMatrix::from_triplets(rows, cols, &t).unwrap()
        },
    )
}

fn dense(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    proptest::collection::vec(-4i8..=4, rows * cols).prop_map(move |v| {
        DenseMatrix::from_vec(rows, cols, v.into_iter().map(f64::from).collect()).unwrap()
    })
}

fn chain() -> impl Strategy<Value = (SparseMatrix, SparseMatrix, SparseMatrix)> {
    (1usize..7, 1usize..7, 1usize..7, 1usize..7)
        .prop_flat_map(|(a, b, c, d)| (sparse(a, b), sparse(b, c), sparse(c, d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spmm_matches_dense((a, x) in (1usize..8, 1usize..8, 1usize..5).prop_flat_map(|(r, k, c)| (sparse(r, k), dense(k, c)))) {
        let want = a.to_dense().matmul(&x).unwrap();
        prop_assert_eq!(spmm(&a, &x).unwrap(), want);
    }

    #[test]
    fn spspmm_is_associative((a, b, c) in chain()) {
        let left = spspmm(&spspmm(&a, &b).unwrap(), &c).unwrap();
        let right = spspmm(&a, &spspmm(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(left.to_dense(), right.to_dense());
        let dense = a.to_dense().matmul(&b.to_dense()).unwrap().matmul(&c.to_dense()).unwrap();
        prop_assert_eq!(left.to_dense(), dense);
    }

    #[test]
    fn transpose_is_an_involution(a in (1usize..8, 1usize..8).prop_flat_map(|(r, c)| sparse(r, c))) {
        prop_assert_eq!(a.transpose().transpose(), a.clone());
        prop_assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
    }

    #[test]
    fn normalized_symmetric_stays_symmetric(a in (1usize..8).prop_flat_map(|n| sparse(n, n))) {
        let t = a.transpose();
        let both: Vec<_> = a.iter().chain(t.iter()).collect();
        let s = SparseMatrix::from_triplets(a.rows(), a.cols(), &both).unwrap();
        let n = ahgnn::normalize_relation(&s).unwrap();
        prop_assert!(n.is_symmetric(1e-12));
        prop_assert!(n.values().iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-12));
    }
}
