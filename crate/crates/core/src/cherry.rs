//! Cherry tensors and the iFCTN network built from them.
//!
//! An iFCTN model of an order-`N` tensor keeps one small matrix
//! `G[k,i]` (`R[k,i] x I_k`) per ordered mode pair `k != i`. Each rank index
//! `r[p,q]` is shared by exactly two factors, `G[p,q]` and `G[q,p]`, so the
//! nested rank sum factorizes pair by pair:
//!
//! ```text
//! X(i_1, ..., i_N) = prod_{p<q} H[p,q](i_p, i_q),   H[p,q] = G[p,q]^T G[q,p]
//! ```
//!
//! [`ifctn_reconstruct`] evaluates that product; [`ifctn_eval_naive`] keeps the
//! literal nested sum around as an oracle.
//!
//! Modes are 0-based throughout the API.

use crate::error::{Error, Result};
use crate::tensor::{
    broadcast_hadamard, fold, khatri_rao_all, kronecker_all, next_index, DenseTensor, Matrix,
};

/// Symmetric `N x N` matrix of pairwise ranks with an unused zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMatrix {
    n: usize,
    r: Vec<usize>,
}

impl RankMatrix {
    /// Builds from full rows. Rejects asymmetry, a nonzero diagonal or a zero
    /// off-diagonal rank.
    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::InvalidRanks(format!(
                "rank matrix must be at least 2x2, got {n}x{n}"
            )));
        }
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != n) {
            return Err(Error::InvalidRanks(format!(
                "row {} has {} entries, expected {n}",
                i + 1,
                row.len()
            )));
        }
        for i in 0..n {
            if rows[i][i] != 0 {
                return Err(Error::InvalidRanks(format!(
                    "nonzero diagonal entry R[{0},{0}] = {1}",
                    i + 1,
                    rows[i][i]
                )));
            }
            for j in 0..n {
                if rows[i][j] != rows[j][i] {
                    return Err(Error::InvalidRanks(format!(
                        "asymmetric: R[{},{}] = {} but R[{},{}] = {}",
                        i + 1,
                        j + 1,
                        rows[i][j],
                        j + 1,
                        i + 1,
                        rows[j][i]
                    )));
                }
                if i != j && rows[i][j] == 0 {
                    return Err(Error::InvalidRanks(format!(
                        "off-diagonal rank R[{},{}] must be at least 1",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(RankMatrix {
            n,
            r: rows.iter().flatten().copied().collect(),
        })
    }

    /// Builds from the strict upper triangle in row-major order
    /// (`R[1,2], R[1,3], ..., R[N-1,N]`).
    pub fn from_upper(n: usize, upper: &[usize]) -> Result<Self> {
        let expected = n * n.saturating_sub(1) / 2;
        if n < 2 || upper.len() != expected {
            return Err(Error::InvalidRanks(format!(
                "order {n} needs {expected} upper-triangle ranks, got {}",
                upper.len()
            )));
        }
        let mut rows = vec![vec![0; n]; n];
        let mut it = upper.iter();
        for i in 0..n {
            for j in i + 1..n {
                let r = *it.next().expect("length checked");
                rows[i][j] = r;
                rows[j][i] = r;
            }
        }
        Self::from_rows(&rows)
    }

    pub fn uniform(n: usize, r: usize) -> Result<Self> {
        Self::from_upper(n, &vec![r; n * n.saturating_sub(1) / 2])
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.r[i * self.n + j]
    }

    /// Strict upper triangle, row-major.
    pub fn upper(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n * (self.n - 1) / 2);
        for i in 0..self.n {
            for j in i + 1..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        self.r.chunks(self.n).map(<[usize]>::to_vec).collect()
    }
}

/// All unordered mode pairs `(p, q)` with `p < q`, row-major.
pub fn mode_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
        .collect()
}

/// The full iFCTN factor set `{G[k,i] : k != i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CherryFactors {
    shape: Vec<usize>,
    ranks: RankMatrix,
    g: Vec<Matrix>,
}

impl CherryFactors {
    /// `factors` lists `G[k,i]` for `k` ascending, then `i != k` ascending.
    pub fn new(shape: Vec<usize>, ranks: RankMatrix, factors: Vec<Matrix>) -> Result<Self> {
        let n = shape.len();
        if ranks.order() != n {
            return Err(Error::InvalidRanks(format!(
                "rank matrix is {0}x{0} but the tensor has order {n}",
                ranks.order()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidShape(format!("zero-length mode in {shape:?}")));
        }
        if factors.len() != n * (n - 1) {
            return Err(Error::ShapeMismatch(format!(
                "order {n} needs {} cherry factors, got {}",
                n * (n - 1),
                factors.len()
            )));
        }
        let mut slots = factors.iter();
        for k in 0..n {
            for i in (0..n).filter(|&i| i != k) {
                let m = slots.next().expect("length checked");
                if m.rows() != ranks.get(k, i) || m.cols() != shape[k] {
                    return Err(Error::ShapeMismatch(format!(
                        "G[{},{}] is {}x{}, expected {}x{}",
                        k + 1,
                        i + 1,
                        m.rows(),
                        m.cols(),
                        ranks.get(k, i),
                        shape[k]
                    )));
                }
            }
        }
        Ok(CherryFactors {
            shape,
            ranks,
            g: factors,
        })
    }

    /// Fills every `G[k,i]` entry from `f(k, i, row, col)`, visiting factors in
    /// storage order and entries column-major.
    pub fn from_fn(
        shape: &[usize],
        ranks: &RankMatrix,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let n = shape.len();
        if ranks.order() != n {
            return Err(Error::InvalidRanks(format!(
                "rank matrix is {0}x{0} but the tensor has order {n}",
                ranks.order()
            )));
        }
        if n < 2 || shape.contains(&0) {
            return Err(Error::InvalidShape(format!("invalid shape {shape:?}")));
        }
        let mut factors = Vec::with_capacity(n * (n - 1));
        for k in 0..n {
            for i in (0..n).filter(|&i| i != k) {
                factors.push(Matrix::from_fn(ranks.get(k, i), shape[k], |r, c| f(k, i, r, c)));
            }
        }
        Self::new(shape.to_vec(), ranks.clone(), factors)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ranks(&self) -> &RankMatrix {
        &self.ranks
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    fn slot(&self, k: usize, i: usize) -> usize {
        let n = self.order();
        assert!(k < n && i < n && k != i, "no cherry factor G[{k},{i}]");
        k * (n - 1) + if i < k { i } else { i - 1 }
    }

    pub fn factor(&self, k: usize, i: usize) -> &Matrix {
        &self.g[self.slot(k, i)]
    }

    pub fn factor_mut(&mut self, k: usize, i: usize) -> &mut Matrix {
        let s = self.slot(k, i);
        &mut self.g[s]
    }

    /// Factors in storage order.
    pub fn factors(&self) -> &[Matrix] {
        &self.g
    }

    pub fn param_count(&self) -> usize {
        self.g.iter().map(|m| m.rows() * m.cols()).sum()
    }

    /// `H[p,q] = G[p,q]^T G[q,p]`, an `I_p x I_q` matrix.
    pub fn pair_gram(&self, p: usize, q: usize) -> Matrix {
        self.factor(p, q)
            .t_matmul(self.factor(q, p))
            .expect("rank matrix is symmetric")
    }

    /// Sum of squared entries over all factors.
    pub fn squared_norm(&self) -> f64 {
        self.g
            .iter()
            .flat_map(|m| m.values())
            .map(|v| v * v)
            .sum()
    }

    /// `sum_{k,i} ||self[k,i] - other[k,i]||_F^2`.
    pub fn squared_distance(&self, other: &CherryFactors) -> f64 {
        self.g
            .iter()
            .zip(&other.g)
            .flat_map(|(a, b)| a.values().iter().zip(b.values()))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn max_abs_diff(&self, other: &CherryFactors) -> f64 {
        self.g
            .iter()
            .zip(&other.g)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.g.iter().flat_map(|m| m.values()).all(|v| v.is_finite())
    }

    /// The mode-`k` cherry tensor `CT_k({G[k,i]}_{i != k})`.
    pub fn cherry_tensor(&self, k: usize) -> Result<CherryTensor> {
        let n = self.order();
        if k >= n {
            return Err(Error::ModeOutOfRange { mode: k, order: n });
        }
        CherryTensor::new(
            k,
            (0..n).filter(|&i| i != k).map(|i| self.factor(k, i).clone()).collect(),
        )
    }
}

/// Cache of the pairwise Gram matrices `H[p,q]`, `p < q`.
#[derive(Debug, Clone)]
pub struct PairGrams {
    n: usize,
    h: Vec<Matrix>,
}

impl PairGrams {
    pub fn new(g: &CherryFactors) -> Self {
        let n = g.order();
        let h = mode_pairs(n).into_iter().map(|(p, q)| g.pair_gram(p, q)).collect();
        PairGrams { n, h }
    }

    fn slot(&self, p: usize, q: usize) -> usize {
        debug_assert!(p < q && q < self.n);
        // index of (p, q) in row-major strict upper triangle
        p * (2 * self.n - p - 1) / 2 + (q - p - 1)
    }

    /// `H[p,q]` for `p < q`.
    pub fn get(&self, p: usize, q: usize) -> &Matrix {
        &self.h[self.slot(p, q)]
    }

    /// Recomputes the Gram of the pair `{a, b}` after one of its factors changed.
    pub fn refresh(&mut self, g: &CherryFactors, a: usize, b: usize) {
        let (p, q) = if a < b { (a, b) } else { (b, a) };
        let s = self.slot(p, q);
        self.h[s] = g.pair_gram(p, q);
    }
}

/// A mode-`k` cherry tensor: `(G_(k))^T = M_N ⊙ ... ⊙ M_{k+1} ⊙ M_{k-1} ⊙ ... ⊙ M_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CherryTensor {
    mode: usize,
    /// One factor per mode other than `mode`, in ascending mode order.
    factors: Vec<Matrix>,
}

impl CherryTensor {
    pub fn new(mode: usize, factors: Vec<Matrix>) -> Result<Self> {
        let order = factors.len() + 1;
        if factors.is_empty() {
            return Err(Error::InvalidArgument("a cherry tensor needs at least one factor".into()));
        }
        if mode >= order {
            return Err(Error::ModeOutOfRange { mode, order });
        }
        let outer = factors[0].cols();
        if let Some(bad) = factors.iter().find(|m| m.cols() != outer) {
            return Err(Error::ShapeMismatch(format!(
                "cherry factors must share the column count {outer}, found {}",
                bad.cols()
            )));
        }
        Ok(CherryTensor { mode, factors })
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn order(&self) -> usize {
        self.factors.len() + 1
    }

    pub fn outer_dim(&self) -> usize {
        self.factors[0].cols()
    }

    /// Factor attached to tensor mode `m` (`m != mode`).
    pub fn factor_at(&self, m: usize) -> Option<&Matrix> {
        if m == self.mode || m >= self.order() {
            return None;
        }
        Some(&self.factors[if m < self.mode { m } else { m - 1 }])
    }

    pub fn shape(&self) -> Vec<usize> {
        (0..self.order())
            .map(|m| match self.factor_at(m) {
                Some(f) => f.rows(),
                None => self.outer_dim(),
            })
            .collect()
    }

    /// Transposed mode-`k` unfolding: the Khatri-Rao product of the factors
    /// in descending mode order.
    pub fn unfolding_transpose(&self) -> Matrix {
        khatri_rao_all(self.factors.iter().rev())
            .expect("column counts checked at construction")
            .expect("at least one factor")
    }
}

/// Materializes a cherry tensor by folding its Khatri-Rao unfolding.
pub fn materialize_cherry(ct: &CherryTensor) -> Result<DenseTensor> {
    fold(&ct.unfolding_transpose().transpose(), ct.mode(), &ct.shape())
}

/// Contracts rank mode `alpha` of `a` with rank mode `beta` of `b`.
///
/// The result has the modes of `a` except `alpha` followed by the modes of `b`
/// except `beta`, each group in its original order. Entry-wise it is the
/// product of the remaining cherry entries of both tensors times
/// `(A_alpha^T B_beta)(i_k, j_t)`.
pub fn cherry_product(
    a: &CherryTensor,
    b: &CherryTensor,
    alpha: usize,
    beta: usize,
) -> Result<DenseTensor> {
    let fa = a.factor_at(alpha).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "mode {} is not a rank mode of the left cherry (order {}, physical mode {})",
            alpha + 1,
            a.order(),
            a.mode() + 1
        ))
    })?;
    let fb = b.factor_at(beta).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "mode {} is not a rank mode of the right cherry (order {}, physical mode {})",
            beta + 1,
            b.order(),
            b.mode() + 1
        ))
    })?;
    if fa.rows() != fb.rows() {
        return Err(Error::ShapeMismatch(format!(
            "contracted dimensions differ: {} vs {}",
            fa.rows(),
            fb.rows()
        )));
    }
    let bridge = fa.t_matmul(fb)?;

    // Position lists: which source mode each output mode comes from.
    let a_modes: Vec<usize> = (0..a.order()).filter(|&m| m != alpha).collect();
    let b_modes: Vec<usize> = (0..b.order()).filter(|&m| m != beta).collect();
    let a_shape = a.shape();
    let b_shape = b.shape();
    let out_shape: Vec<usize> = a_modes
        .iter()
        .map(|&m| a_shape[m])
        .chain(b_modes.iter().map(|&m| b_shape[m]))
        .collect();
    let a_phys = a_modes.iter().position(|&m| m == a.mode()).expect("physical mode kept");
    let b_phys = b_modes.iter().position(|&m| m == b.mode()).expect("physical mode kept");
    let na = a_modes.len();

    DenseTensor::from_fn(&out_shape, |idx| {
        let (ia, jb) = idx.split_at(na);
        let ik = ia[a_phys];
        let jt = jb[b_phys];
        let mut v = bridge[(ik, jt)];
        for (pos, &m) in a_modes.iter().enumerate() {
            if let Some(f) = a.factor_at(m) {
                v *= f[(ia[pos], ik)];
            }
        }
        for (pos, &m) in b_modes.iter().enumerate() {
            if let Some(f) = b.factor_at(m) {
                v *= f[(jb[pos], jt)];
            }
        }
        v
    })
}

fn check_index(shape: &[usize], index: &[usize]) -> Result<()> {
    if index.len() != shape.len() || index.iter().zip(shape).any(|(i, d)| i >= d) {
        return Err(Error::IndexOutOfRange {
            index: index.to_vec(),
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

/// One entry of the iFCTN tensor by the literal nested rank sum.
///
/// Cost is `prod_{p<q} R[p,q]` terms of `N(N-1)` factors each; only meant as
/// an oracle for small instances.
pub fn ifctn_eval_naive(g: &CherryFactors, index: &[usize]) -> Result<f64> {
    check_index(g.shape(), index)?;
    let n = g.order();
    let pairs = mode_pairs(n);
    let extents: Vec<usize> = pairs.iter().map(|&(p, q)| g.ranks().get(p, q)).collect();
    // rank_of[k][i] = position of the pair {k, i} in `pairs`
    let mut rank_of = vec![vec![usize::MAX; n]; n];
    for (s, &(p, q)) in pairs.iter().enumerate() {
        rank_of[p][q] = s;
        rank_of[q][p] = s;
    }
    let mut r = vec![0; pairs.len()];
    let mut total = 0.0;
    loop {
        let mut term = 1.0;
        for k in 0..n {
            for i in (0..n).filter(|&i| i != k) {
                term *= g.factor(k, i)[(r[rank_of[k][i]], index[k])];
            }
        }
        total += term;
        if !next_index(&mut r, &extents) {
            break;
        }
    }
    Ok(total)
}

/// Product of the cached pair Grams at a full multi-index, skipping the pair
/// `skip` when given.
pub(crate) fn pair_product(
    grams: &PairGrams,
    pairs: &[(usize, usize)],
    idx: &[usize],
    skip: Option<(usize, usize)>,
) -> f64 {
    let mut v = 1.0;
    for &(p, q) in pairs {
        if Some((p, q)) != skip {
            v *= grams.get(p, q)[(idx[p], idx[q])];
        }
    }
    v
}

/// Full iFCTN tensor via the pairwise-Gram product.
pub fn ifctn_reconstruct(g: &CherryFactors) -> DenseTensor {
    reconstruct_with(g, &PairGrams::new(g))
}

pub(crate) fn reconstruct_with(g: &CherryFactors, grams: &PairGrams) -> DenseTensor {
    let pairs = mode_pairs(g.order());
    DenseTensor::from_fn(g.shape(), |idx| pair_product(grams, &pairs, idx, None))
        .expect("factor shape is valid")
}

/// `S_k`: the order-`(N-1)` tensor over the modes other than `k` holding
/// `prod_{p<q, p,q != k} H[p,q](i_p, i_q)`.
pub fn build_s(g: &CherryFactors, k: usize) -> Result<DenseTensor> {
    let n = g.order();
    if k >= n {
        return Err(Error::ModeOutOfRange { mode: k, order: n });
    }
    let rest: Vec<usize> = (0..n).filter(|&m| m != k).collect();
    let dims: Vec<usize> = rest.iter().map(|&m| g.shape()[m]).collect();
    let mut s = DenseTensor::ones(&dims)?;
    for (a, &p) in rest.iter().enumerate() {
        for (b, &q) in rest.iter().enumerate().skip(a + 1) {
            let mut bshape = vec![1; rest.len()];
            bshape[a] = g.shape()[p];
            bshape[b] = g.shape()[q];
            let h = g.pair_gram(p, q).into_tensor().reshape(bshape)?;
            s = broadcast_hadamard(&s, &h)?;
        }
    }
    Ok(s)
}

/// Mode-`k` cherry sub-network
/// `Z_k = diag(vec(S_k)) * (G[N,k]^T ⊗ ... ⊗ G[1,k]^T)` (mode `k` skipped),
/// so that `unfold(X, k)^T = Z_k * (G_(k))^T`.
///
/// Size `prod_{i != k} I_i x prod_{i != k} R[k,i]`; for tests and small problems.
pub fn build_z(g: &CherryFactors, k: usize) -> Result<Matrix> {
    let s = build_s(g, k)?;
    let transposed: Vec<Matrix> = (0..g.order())
        .rev()
        .filter(|&i| i != k)
        .map(|i| g.factor(i, k).transpose())
        .collect();
    let kron = kronecker_all(&transposed).expect("order >= 2");
    kron.scale_rows(s.values())
}

/// `(G_(k))^T`: Khatri-Rao of `G[k,i]` over `i != k` in descending order.
pub fn mode_khatri_rao(g: &CherryFactors, k: usize) -> Result<Matrix> {
    Ok(g.cherry_tensor(k)?.unfolding_transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::unfold;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_factors(shape: &[usize], ranks: &RankMatrix, seed: u64) -> CherryFactors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CherryFactors::from_fn(shape, ranks, |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn rank_matrix_validation() {
        let r = RankMatrix::from_upper(3, &[4, 4, 4]).unwrap();
        assert_eq!(r.get(0, 1), 4);
        assert_eq!(r.get(2, 1), 4);
        assert_eq!(r.get(1, 1), 0);
        assert!(RankMatrix::from_rows(&[vec![0, 2], vec![3, 0]]).is_err());
        assert!(RankMatrix::from_rows(&[vec![1, 2], vec![2, 0]]).is_err());
        assert!(RankMatrix::from_rows(&[vec![0, 0], vec![0, 0]]).is_err());
        assert!(RankMatrix::from_upper(3, &[1, 2]).is_err());
        let full = RankMatrix::from_rows(&[vec![0, 2, 3], vec![2, 0, 4], vec![3, 4, 0]]).unwrap();
        assert_eq!(full.upper(), vec![2, 3, 4]);
    }

    #[test]
    fn pair_slots_are_row_major() {
        let ranks = RankMatrix::uniform(5, 2).unwrap();
        let g = random_factors(&[2, 3, 2, 3, 2], &ranks, 3);
        let grams = PairGrams::new(&g);
        for (p, q) in mode_pairs(5) {
            assert_eq!(grams.get(p, q), &g.pair_gram(p, q));
        }
    }

    #[test]
    fn factor_shape_is_checked() {
        let ranks = RankMatrix::uniform(3, 2).unwrap();
        let g = random_factors(&[2, 3, 4], &ranks, 1);
        let mut fs = g.factors().to_vec();
        fs[0] = Matrix::zeros(3, 2);
        assert!(CherryFactors::new(vec![2, 3, 4], ranks.clone(), fs).is_err());
        assert_eq!(g.param_count(), 2 * 2 * (2 + 3 + 4));
    }

    #[test]
    fn one_factor_cherry_is_its_transpose() {
        let m = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        let ct = CherryTensor::new(0, vec![m.clone()]).unwrap();
        let t = materialize_cherry(&ct).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.into_matrix().unwrap(), m.transpose());
    }

    #[test]
    fn cherry_slices_are_rank_one_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m1 = random_matrix(&mut rng, 2, 3);
        let m3 = random_matrix(&mut rng, 2, 3);
        let ct = CherryTensor::new(1, vec![m1.clone(), m3.clone()]).unwrap();
        let t = materialize_cherry(&ct).unwrap();
        assert_eq!(t.shape(), &[2, 3, 2]);
        for m in 0..3 {
            for a in 0..2 {
                for c in 0..2 {
                    let expected = m1[(a, m)] * m3[(c, m)];
                    assert!((t.get(&[a, m, c]).unwrap() - expected).abs() < 1e-15);
                }
            }
        }
        let ones = CherryTensor::new(2, vec![Matrix::filled(2, 3, 1.0); 2]).unwrap();
        assert!(materialize_cherry(&ones).unwrap().values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cherry_rejects_ragged_factors() {
        assert!(CherryTensor::new(0, vec![Matrix::zeros(2, 3), Matrix::zeros(2, 4)]).is_err());
        assert!(CherryTensor::new(2, vec![Matrix::zeros(2, 3)]).is_err());
    }

    #[test]
    fn single_pair_product_matches_loop_and_matricized_form() {
        let (p, i, r, q, j) = (2, 2, 2, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a1 = random_matrix(&mut rng, p, i);
        let a3 = random_matrix(&mut rng, r, i);
        let b1 = random_matrix(&mut rng, q, j);
        let b2 = random_matrix(&mut rng, r, j);
        let a = CherryTensor::new(1, vec![a1.clone(), a3.clone()]).unwrap();
        let b = CherryTensor::new(2, vec![b1.clone(), b2.clone()]).unwrap();
        let c = cherry_product(&a, &b, 2, 1).unwrap();
        assert_eq!(c.shape(), &[p, i, q, j]);
        let w = a3.t_matmul(&b2).unwrap();
        for ii in 0..p {
            for jj in 0..i {
                for kk in 0..q {
                    for ll in 0..j {
                        let expected = a1[(ii, jj)] * b1[(kk, ll)] * w[(jj, ll)];
                        let got = c.get(&[ii, jj, kk, ll]).unwrap();
                        assert!((got - expected).abs() < 1e-15);
                    }
                }
            }
        }
        // C = diag(vec(A3^T B2)) (B1 ⊗ A1)^T, rows (j_I, l_J), cols (i_P, k_Q)
        let cm = crate::tensor::kronecker(&b1, &a1)
            .transpose()
            .scale_rows(w.values())
            .unwrap();
        for ii in 0..p {
            for jj in 0..i {
                for kk in 0..q {
                    for ll in 0..j {
                        let got = cm[(jj + i * ll, ii + p * kk)];
                        assert!((got - c.get(&[ii, jj, kk, ll]).unwrap()).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn identity_contraction_moves_the_absorbed_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = CherryTensor::new(
            1,
            vec![random_matrix(&mut rng, 2, 3), random_matrix(&mut rng, 4, 3)],
        )
        .unwrap();
        // B(r, j) = I(r, j): an order-2 cherry whose only factor is the identity
        let b = CherryTensor::new(1, vec![Matrix::identity(4)]).unwrap();
        let c = cherry_product(&a, &b, 2, 0).unwrap();
        let dense = materialize_cherry(&a).unwrap();
        assert_eq!(c.shape(), dense.shape());
        assert!(c.max_abs_diff(&dense).unwrap() < 1e-15);
    }

    #[test]
    fn all_ones_contraction_is_constant_rank() {
        let r = 3;
        let a = CherryTensor::new(0, vec![Matrix::filled(r, 2, 1.0), Matrix::filled(2, 2, 1.0)])
            .unwrap();
        let b = CherryTensor::new(1, vec![Matrix::filled(r, 3, 1.0)]).unwrap();
        let c = cherry_product(&a, &b, 1, 0).unwrap();
        assert_eq!(c.shape(), &[2, 2, 3]);
        assert!(c.values().iter().all(|&v| v == r as f64));
    }

    #[test]
    fn cherry_product_errors() {
        let a = CherryTensor::new(0, vec![Matrix::zeros(2, 2), Matrix::zeros(3, 2)]).unwrap();
        let b = CherryTensor::new(0, vec![Matrix::zeros(4, 2)]).unwrap();
        assert!(cherry_product(&a, &b, 1, 1).is_err());
        assert!(cherry_product(&a, &b, 0, 1).is_err());
        assert!(cherry_product(&a, &b, 2, 1).is_err());
    }

    #[test]
    fn naive_eval_small_cases() {
        let ranks = RankMatrix::uniform(3, 1).unwrap();
        let g = CherryFactors::from_fn(&[2, 2, 2], &ranks, |_, _, _, _| 1.0).unwrap();
        assert_eq!(ifctn_eval_naive(&g, &[1, 0, 1]).unwrap(), 1.0);
        assert!(ifctn_eval_naive(&g, &[2, 0, 0]).is_err());
        assert!(ifctn_eval_naive(&g, &[0, 0]).is_err());

        let ranks = RankMatrix::uniform(3, 2).unwrap();
        let g = random_factors(&[2, 2, 2], &ranks, 9);
        let x = ifctn_reconstruct(&g);
        let mut scaled = g.clone();
        scaled.factor_mut(0, 1).values_mut().iter_mut().for_each(|v| *v *= 2.5);
        let xs = ifctn_reconstruct(&scaled);
        for idx in [[0, 0, 0], [1, 0, 1], [1, 1, 1]] {
            let naive = ifctn_eval_naive(&g, &idx).unwrap();
            assert!((naive - x.get(&idx).unwrap()).abs() < 1e-12);
            let ns = ifctn_eval_naive(&scaled, &idx).unwrap();
            assert!((ns - 2.5 * naive).abs() < 1e-12);
            assert!((xs.get(&idx).unwrap() - 2.5 * naive).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_reconstruction_is_broadcast_gram_product() {
        let ranks = RankMatrix::uniform(3, 1).unwrap();
        let g = random_factors(&[2, 3, 4], &ranks, 2);
        let h12 = g.pair_gram(0, 1).into_tensor().reshape(vec![2, 3, 1]).unwrap();
        let h13 = g.pair_gram(0, 2).into_tensor().reshape(vec![2, 1, 4]).unwrap();
        let h23 = g.pair_gram(1, 2).into_tensor().reshape(vec![1, 3, 4]).unwrap();
        let expected = broadcast_hadamard(&broadcast_hadamard(&h12, &h13).unwrap(), &h23).unwrap();
        assert!(ifctn_reconstruct(&g).max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn reconstruct_matches_naive_orders_3_and_4() {
        for (shape, seed) in [(vec![3, 3, 3], 1u64), (vec![2, 2, 2, 2], 2)] {
            let ranks = RankMatrix::uniform(shape.len(), 2).unwrap();
            let g = random_factors(&shape, &ranks, seed);
            let x = ifctn_reconstruct(&g);
            let mut idx = vec![0; shape.len()];
            loop {
                let naive = ifctn_eval_naive(&g, &idx).unwrap();
                assert!((naive - x.get(&idx).unwrap()).abs() <= 1e-12);
                if !next_index(&mut idx, &shape) {
                    break;
                }
            }
        }
    }

    #[test]
    fn s_for_single_remaining_pair_is_its_gram() {
        let ranks = RankMatrix::uniform(3, 2).unwrap();
        let g = random_factors(&[2, 3, 4], &ranks, 4);
        let s = build_s(&g, 2).unwrap();
        assert_eq!(s.into_matrix().unwrap(), g.pair_gram(0, 1));
        assert!(build_s(&g, 3).is_err());
    }

    #[test]
    fn s_order_four_loop_oracle() {
        let ranks = RankMatrix::from_upper(4, &[2, 1, 3, 2, 2, 1]).unwrap();
        let shape = [2, 3, 2, 3];
        let g = random_factors(&shape, &ranks, 8);
        let s = build_s(&g, 1).unwrap();
        assert_eq!(s.shape(), &[2, 2, 3]);
        let (h13, h14, h34) = (g.pair_gram(0, 2), g.pair_gram(0, 3), g.pair_gram(2, 3));
        for a in 0..2 {
            for c in 0..2 {
                for d in 0..3 {
                    let expected = h13[(a, c)] * h14[(a, d)] * h34[(c, d)];
                    assert!((s.get(&[a, c, d]).unwrap() - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn s_of_all_ones_is_rank_power() {
        let r = 3;
        let ranks = RankMatrix::uniform(4, r).unwrap();
        let g = CherryFactors::from_fn(&[2, 2, 3, 2], &ranks, |_, _, _, _| 1.0).unwrap();
        for k in 0..4 {
            let s = build_s(&g, k).unwrap();
            // three pairs remain among the other three modes
            assert!(s.values().iter().all(|&v| v == (r as f64).powi(3)));
        }
    }

    #[test]
    fn z_identity_matches_unfolding() {
        let ranks = RankMatrix::from_upper(3, &[2, 3, 2]).unwrap();
        let g = random_factors(&[3, 2, 4], &ranks, 21);
        let x = ifctn_reconstruct(&g);
        for k in 0..3 {
            let z = build_z(&g, k).unwrap();
            let lhs = unfold(&x, k).unwrap().transpose();
            let rhs = z.matmul(&mode_khatri_rao(&g, k).unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-12, "mode {k}");
        }
    }

    #[test]
    fn z_rank_one_loop_oracle() {
        let ranks = RankMatrix::uniform(3, 1).unwrap();
        let g = random_factors(&[2, 3, 2], &ranks, 13);
        let z = build_z(&g, 1).unwrap();
        let s = build_s(&g, 1).unwrap();
        assert_eq!((z.rows(), z.cols()), (4, 1));
        for a in 0..2 {
            for c in 0..2 {
                let expected = s.get(&[a, c]).unwrap() * g.factor(2, 1)[(0, c)] * g.factor(0, 1)[(0, a)];
                assert!((z[(a + 2 * c, 0)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn z_with_identity_factors_is_diag_s() {
        // R[i,k] = I_i and G[i,k] = I for every i != k = 0
        let shape = [2, 2, 3];
        let ranks = RankMatrix::from_upper(3, &[2, 3, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = CherryFactors::from_fn(&shape, &ranks, |k, i, r, c| {
            if i == 0 {
                if r == c {
                    1.0
                } else {
                    0.0
                }
            } else {
                let _ = k;
                rng.gen_range(-1.0..1.0)
            }
        })
        .unwrap();
        let z = build_z(&g, 0).unwrap();
        let s = build_s(&g, 0).unwrap();
        let n = s.len();
        assert_eq!((z.rows(), z.cols()), (n, n));
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j { s.values()[i] } else { 0.0 };
                assert_eq!(z[(i, j)], expected);
            }
        }
    }

    #[test]
    fn permuted_modes_give_permuted_reconstruction() {
        let shape = [2, 3, 4];
        let ranks = RankMatrix::from_upper(3, &[1, 2, 3]).unwrap();
        let g = random_factors(&shape, &ranks, 31);
        let x = ifctn_reconstruct(&g);
        // swap modes 0 and 2
        let perm = [2usize, 1, 0];
        let pshape: Vec<usize> = perm.iter().map(|&m| shape[m]).collect();
        let prow: Vec<Vec<usize>> = (0..3)
            .map(|a| (0..3).map(|b| ranks.get(perm[a], perm[b])).collect())
            .collect();
        let pranks = RankMatrix::from_rows(&prow).unwrap();
        let pg = CherryFactors::from_fn(&pshape, &pranks, |k, i, r, c| {
            g.factor(perm[k], perm[i])[(r, c)]
        })
        .unwrap();
        let px = ifctn_reconstruct(&pg);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    let d = x.get(&[a, b, c]).unwrap() - px.get(&[c, b, a]).unwrap();
                    assert!(d.abs() < 1e-14);
                }
            }
        }
    }
}
