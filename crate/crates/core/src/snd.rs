//! Structural nilpotence degree: the nilpotence index of the boolean support
//! of L − I, which bounds how many sweeps the fixed-point rounding iterations
//! need. Computed by longest-path DP over the dependency DAG; a boolean
//! matrix-power routine is kept alongside as an independent brute-force route.

use crate::matrix::Matrix;

/// Threshold below which numeric L entries are treated as structural zeros.
pub const STRUCTURAL_ZERO: f64 = 1e-14;

/// Strictly lower triangular boolean support mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportPattern {
    n: usize,
    /// mask[i][j] for i > j only.
    mask: Vec<Vec<bool>>,
}

impl SupportPattern {
    pub fn empty(n: usize) -> Self {
        SupportPattern { n, mask: vec![vec![false; n]; n] }
    }

    /// All entries below the diagonal set.
    pub fn dense(n: usize) -> Self {
        let mut p = SupportPattern::empty(n);
        for i in 0..n {
            for j in 0..i {
                p.mask[i][j] = true;
            }
        }
        p
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut p = SupportPattern::empty(n);
        for &(i, j) in edges {
            p.set(i, j);
        }
        p
    }

    /// Support of L − I for a numeric unit lower triangular L.
    pub fn from_unit_lower(l: &Matrix) -> Self {
        let n = l.rows();
        let mut p = SupportPattern::empty(n);
        for i in 0..n {
            for j in 0..i {
                if l[(i, j)].abs() > STRUCTURAL_ZERO {
                    p.mask[i][j] = true;
                }
            }
        }
        p
    }

    /// A 0/1 matrix (e.g. from CSV) as a pattern; entries on or above the
    /// diagonal must be zero.
    pub fn from_mask_matrix(m: &Matrix) -> crate::error::Result<Self> {
        if !m.is_square() {
            return Err(crate::error::Error::ShapeMismatch(format!(
                "mask must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let n = m.rows();
        let mut p = SupportPattern::empty(n);
        for i in 0..n {
            for j in 0..n {
                match m[(i, j)] {
                    v if v == 0.0 => {}
                    v if v == 1.0 && i > j => p.mask[i][j] = true,
                    v => {
                        return Err(crate::error::Error::ShapeMismatch(format!(
                            "mask entry ({i},{j}) = {v} is not a strictly-lower 0/1"
                        )))
                    }
                }
            }
        }
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize) {
        assert!(i > j, "support must be strictly lower triangular");
        self.mask[i][j] = true;
    }

    pub fn edge_count(&self) -> usize {
        self.mask.iter().map(|r| r.iter().filter(|&&b| b).count()).sum()
    }
}

/// Smallest k ≥ 1 with N^k = 0 over the boolean semiring, i.e. one plus the
/// longest path length in the DAG whose adjacency is the mask. snd of the
/// empty mask is 1 (N = 0 already satisfies N¹ = 0).
pub fn snd(pattern: &SupportPattern) -> usize {
    let n = pattern.n;
    // depth[i] = longest path (edge count) starting at node i. Edges i -> j
    // exist for mask[i][j], always toward smaller indices, so ascending index
    // order is already topological.
    let mut depth = vec![0usize; n];
    let mut longest = 0usize;
    for i in 0..n {
        for j in 0..i {
            if pattern.mask[i][j] {
                depth[i] = depth[i].max(depth[j] + 1);
            }
        }
        longest = longest.max(depth[i]);
    }
    longest + 1
}

/// snd of the support of L − I for a numeric unit lower triangular L.
pub fn snd_of_ldl(l: &Matrix) -> usize {
    snd(&SupportPattern::from_unit_lower(l))
}

/// Support of (L_a ⊗ L_b) − I where L = I + N for each mask, assuming generic
/// nonzero values on the masks (no cancellation).
pub fn kron_support(a: &SupportPattern, b: &SupportPattern) -> SupportPattern {
    let (na, nb) = (a.n, b.n);
    let n = na * nb;
    let mut out = SupportPattern::empty(n);
    for i1 in 0..na {
        for j1 in 0..=i1 {
            let a_entry = if i1 == j1 { true } else { a.mask[i1][j1] };
            if !a_entry {
                continue;
            }
            for i2 in 0..nb {
                for j2 in 0..nb {
                    let b_entry = if i2 == j2 { true } else { i2 > j2 && b.mask[i2][j2] };
                    if !b_entry {
                        continue;
                    }
                    if i1 == j1 && i2 == j2 {
                        continue; // diagonal of the Kronecker product
                    }
                    out.mask[i1 * nb + i2][j1 * nb + j2] = true;
                }
            }
        }
    }
    out
}

/// Brute-force snd by repeated boolean matrix powers. Independent of the
/// longest-path route; used as its oracle.
pub fn boolean_power_snd(pattern: &SupportPattern) -> usize {
    let n = pattern.n;
    let mut cur: Vec<Vec<bool>> = pattern.mask.clone();
    let is_zero = |m: &Vec<Vec<bool>>| m.iter().all(|r| r.iter().all(|&b| !b));
    if is_zero(&cur) {
        return 1;
    }
    let mut k = 1usize;
    while !is_zero(&cur) {
        let mut next = vec![vec![false; n]; n];
        for i in 0..n {
            for l in 0..n {
                if !cur[i][l] {
                    continue;
                }
                for j in 0..n {
                    if pattern.mask[l][j] {
                        next[i][j] = true;
                    }
                }
            }
        }
        cur = next;
        k += 1;
        debug_assert!(k <= n + 1, "strictly triangular masks are nilpotent");
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ldl, SymMatrix};
    use proptest::prelude::*;

    #[test]
    fn snd_of_empty_mask_is_one() {
        assert_eq!(snd(&SupportPattern::empty(4)), 1);
        assert_eq!(boolean_power_snd(&SupportPattern::empty(4)), 1);
    }

    #[test]
    fn mask_matrix_parse() {
        let m = Matrix::from_rows(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let p = SupportPattern::from_mask_matrix(&m).unwrap();
        assert_eq!(snd(&p), 3);
        let bad = Matrix::from_rows(2, 2, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(SupportPattern::from_mask_matrix(&bad).is_err());
    }

    #[test]
    fn snd_of_dense_lower_is_n() {
        // Dense strictly lower support has a full chain, so snd equals the
        // dimension.
        assert_eq!(snd(&SupportPattern::dense(3)), 3);
        assert_eq!(boolean_power_snd(&SupportPattern::dense(3)), 3);
    }

    #[test]
    fn snd_of_kron_of_dense_masks() {
        let a = SupportPattern::dense(2);
        let b = SupportPattern::dense(3);
        let k = kron_support(&a, &b);
        let by_dag = snd(&k);
        let by_power = boolean_power_snd(&k);
        assert_eq!(by_dag, by_power);
        // Both factors dense: 2 + 3 - 1.
        assert_eq!(by_dag, 4);
    }

    #[test]
    fn kron_support_structure() {
        let a = SupportPattern::empty(2);
        let b = SupportPattern::dense(3);
        let k = kron_support(&a, &b);
        // Block-diagonal copies of b's mask.
        assert_eq!(k.edge_count(), 2 * b.edge_count());
        for i in 0..3 {
            for j in 0..i {
                assert!(k.get(i, j));
                assert!(k.get(3 + i, 3 + j));
                assert!(!k.get(3 + i, j));
            }
        }
        let both_empty = kron_support(&SupportPattern::empty(2), &SupportPattern::empty(2));
        assert_eq!(both_empty.edge_count(), 0);
        assert_eq!(snd(&both_empty), 1);
    }

    #[test]
    fn snd_of_ldl_factor_of_dense_spd() {
        let h = crate::gen::random_spd(5, 0.5, 77);
        let f = ldl(&h, 0.0).unwrap();
        assert_eq!(snd_of_ldl(&f.l), 5);
    }

    #[test]
    fn snd_of_block_diagonal_ldl_is_one() {
        // Two decoupled blocks still give a nontrivial L inside each block,
        // but an L that is block diagonal has snd from within-block chains.
        let mut h = SymMatrix::eye(4);
        h.set(1, 0, 0.3);
        h.set(3, 2, 0.2);
        let f = ldl(&h, 0.0).unwrap();
        // chain length 1 inside each 2x2 block
        assert_eq!(snd_of_ldl(&f.l), 2);
        // identity L
        let id = ldl(&SymMatrix::eye(4), 0.0).unwrap();
        assert_eq!(snd_of_ldl(&id.l), 1);
        // Block LDL of a block-diagonal H gives L = I: no cross-block
        // feedback, one sweep.
        let a = crate::gen::random_spd(3, 0.2, 5);
        let b = crate::gen::random_spd(3, 0.2, 6);
        let mut hb = crate::matrix::Matrix::zeros(6, 6);
        hb.set_block(0, 0, a.as_matrix());
        hb.set_block(3, 3, b.as_matrix());
        let fb = crate::linalg::block_ldl(&SymMatrix::new(hb).unwrap(), 3, 0.0).unwrap();
        assert_eq!(snd_of_ldl(&fb.l), 1);
    }

    #[test]
    fn structural_zero_threshold_ignores_rounding_noise() {
        let mut l = Matrix::eye(3);
        l[(1, 0)] = 3e-15; // below the structural-zero threshold
        l[(2, 1)] = 0.4;
        let p = SupportPattern::from_unit_lower(&l);
        assert!(!p.get(1, 0));
        assert!(p.get(2, 1));
        assert_eq!(snd_of_ldl(&l), 2);
    }

    proptest! {
        #[test]
        fn dag_equals_boolean_powers(n in 1usize..24, seed in 0u64..1000) {
            let p = crate::gen::random_mask(n, 0.3, seed);
            prop_assert_eq!(snd(&p), boolean_power_snd(&p));
        }

        #[test]
        fn kron_snd_within_proof_bound(na in 1usize..6, nb in 1usize..6, seed in 0u64..500) {
            let a = crate::gen::random_mask(na, 0.5, seed);
            let b = crate::gen::random_mask(nb, 0.5, seed.wrapping_add(1));
            let k = kron_support(&a, &b);
            let bound = snd(&a) + snd(&b) - 1;
            prop_assert!(snd(&k) <= bound);
            prop_assert_eq!(snd(&k), boolean_power_snd(&k));
        }
    }
}
