//! Monomial lifting of the extended linear system.
//!
//! The extended state `z = [x; v]` is mapped to the stacked vector of all of
//! its monomials up to degree `p`. Under `z+ = phi * z` the lifted vector
//! evolves linearly, `Z+ = Phi * Z`, so polynomial constraints on `z` become
//! linear constraints on `Z`.
//!
//! Monomials of degree `r` are identified with non-decreasing index tuples
//! `i1 <= i2 <= ... <= ir` and ordered lexicographically. This is the order
//! produced by the recursion `z^(r+1) = [z1 z[1]^(r); z2 z[2]^(r); ...]` where
//! `z[i]` is the suffix `(z_i, ..., z_d)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::sparse::SparseMatrix;
use crate::spectral;

/// Highest supported lifting degree.
pub const MAX_DEGREE: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiftError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degree {0} outside supported range 1..={MAX_DEGREE}")]
    UnsupportedDegree(usize),
    #[error("extended matrix is not of the form [[A, B], [0, I]]: {0}")]
    NotExtended(String),
    #[error("plant matrix A is not Schur stable (spectral radius {0:.6})")]
    Unstable(f64),
}

/// Number of monomials of degree exactly `r` in `d` variables.
pub fn sigma(d: usize, r: usize) -> usize {
    binomial(d + r - 1, r)
}

/// Number of monomials of degree `1..=p` in `d` variables.
pub fn sigma_sum(d: usize, p: usize) -> usize {
    (1..=p).map(|r| sigma(d, r)).sum()
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// A monomial stored as its sorted variable-index tuple. The empty tuple is
/// the constant monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial(Vec<u8>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(i: usize) -> Self {
        Monomial(vec![i as u8])
    }

    pub fn from_indices(mut idx: Vec<u8>) -> Self {
        idx.sort_unstable();
        Monomial(idx)
    }

    /// Build from an exponent vector (multi-index).
    pub fn from_exponents(exps: &[u32]) -> Self {
        let mut idx = Vec::new();
        for (i, &e) in exps.iter().enumerate() {
            for _ in 0..e {
                idx.push(i as u8);
            }
        }
        Monomial(idx)
    }

    pub fn indices(&self) -> &[u8] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn exponents(&self, dim: usize) -> Vec<u32> {
        let mut e = vec![0u32; dim];
        for &i in &self.0 {
            e[i as usize] += 1;
        }
        e
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut v = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut a, mut b) = (0, 0);
        while a < self.0.len() && b < other.0.len() {
            if self.0[a] <= other.0[b] {
                v.push(self.0[a]);
                a += 1;
            } else {
                v.push(other.0[b]);
                b += 1;
            }
        }
        v.extend_from_slice(&self.0[a..]);
        v.extend_from_slice(&other.0[b..]);
        Monomial(v)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.0.iter().map(|&i| z[i as usize]).product()
    }

    /// True when every variable index is at least `first`.
    pub fn only_vars_from(&self, first: usize) -> bool {
        self.0.iter().all(|&i| i as usize >= first)
    }

    fn key(&self) -> u64 {
        pack(&self.0)
    }
}

fn pack(idx: &[u8]) -> u64 {
    // 8 bits per index, degree <= 6, length in the top byte.
    let mut k = (idx.len() as u64) << 56;
    for (s, &i) in idx.iter().enumerate() {
        k |= (i as u64) << (8 * s);
    }
    k
}

/// Ordered basis of all degree-`r` monomials in `d` variables.
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    dim: usize,
    degree: usize,
    monomials: Vec<Monomial>,
    index: HashMap<u64, usize>,
}

impl MonomialBasis {
    pub fn new(dim: usize, degree: usize) -> Result<Self, LiftError> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(LiftError::UnsupportedDegree(degree));
        }
        if dim == 0 || dim > 255 {
            return Err(LiftError::DimensionMismatch { expected: 1, got: dim });
        }
        let mut monomials = Vec::with_capacity(sigma(dim, degree));
        let mut cur = Vec::with_capacity(degree);
        enumerate(dim, degree, 0, &mut cur, &mut monomials);
        let index = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.key(), i))
            .collect();
        Ok(MonomialBasis { dim, degree, monomials, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    /// Exponent vectors, one per basis entry.
    pub fn exponents(&self) -> Vec<Vec<u32>> {
        self.monomials.iter().map(|m| m.exponents(self.dim)).collect()
    }

    pub fn index_of(&self, m: &Monomial) -> Option<usize> {
        self.index.get(&m.key()).copied()
    }
}

fn enumerate(dim: usize, left: usize, start: usize, cur: &mut Vec<u8>, out: &mut Vec<Monomial>) {
    if left == 0 {
        out.push(Monomial(cur.clone()));
        return;
    }
    for i in start..dim {
        cur.push(i as u8);
        enumerate(dim, left - 1, i, cur, out);
        cur.pop();
    }
}

/// Degree-`r` monomials of `z` without repetition, via the suffix recursion.
pub fn lift_no_rep(z: &[f64], r: usize) -> Result<Vec<f64>, LiftError> {
    if r == 0 || r > MAX_DEGREE {
        return Err(LiftError::UnsupportedDegree(r));
    }
    // suffix[i] holds z[i]^(k) for the current k.
    let d = z.len();
    let mut suffix: Vec<Vec<f64>> = (0..d).map(|i| z[i..].to_vec()).collect();
    for _ in 1..r {
        let mut next: Vec<Vec<f64>> = vec![Vec::new(); d];
        // z[i]^(k+1) = [z_i z[i]^(k); z[i+1]^(k+1)]
        for i in (0..d).rev() {
            let mut v: Vec<f64> = suffix[i].iter().map(|s| z[i] * s).collect();
            if i + 1 < d {
                v.extend_from_slice(&next[i + 1]);
            }
            next[i] = v;
        }
        suffix = next;
    }
    Ok(suffix.into_iter().next().unwrap_or_default())
}

/// Kronecker power `z ⊗ z ⊗ ... ⊗ z` (`r` factors).
pub fn lift_with_rep(z: &[f64], r: usize) -> Result<Vec<f64>, LiftError> {
    if r == 0 || r > MAX_DEGREE {
        return Err(LiftError::UnsupportedDegree(r));
    }
    let mut acc = z.to_vec();
    for _ in 1..r {
        let mut next = Vec::with_capacity(acc.len() * z.len());
        for &a in z {
            next.extend(acc.iter().map(|b| a * b));
        }
        acc = next;
    }
    Ok(acc)
}

/// Conversion matrices between the Kronecker power and the monomial vector,
/// stored as index maps.
#[derive(Debug, Clone)]
pub struct LiftMatrices {
    pub dim: usize,
    pub degree: usize,
    /// For each basis monomial, the Kronecker index it is read from.
    pub select: Vec<usize>,
    /// For each Kronecker index, the basis monomial it equals.
    pub expand: Vec<usize>,
}

impl LiftMatrices {
    pub fn new(dim: usize, degree: usize) -> Result<Self, LiftError> {
        let basis = MonomialBasis::new(dim, degree)?;
        let total = dim.pow(degree as u32);
        let mut expand = Vec::with_capacity(total);
        let mut select = vec![usize::MAX; basis.len()];
        let mut tuple = vec![0u8; degree];
        for k in 0..total {
            // Kronecker index with the first factor most significant.
            let mut rem = k;
            for s in (0..degree).rev() {
                tuple[s] = (rem % dim) as u8;
                rem /= dim;
            }
            let m = Monomial::from_indices(tuple.clone());
            let j = basis.index_of(&m).expect("monomial in basis");
            expand.push(j);
            if select[j] == usize::MAX {
                select[j] = k;
            }
        }
        Ok(LiftMatrices { dim, degree, select, expand })
    }

    /// `M_c`, of shape `sigma(d, r) x d^r`.
    pub fn mc(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.select.len(), self.expand.len());
        for (i, &k) in self.select.iter().enumerate() {
            m[(i, k)] = 1.0;
        }
        m
    }

    /// `M_e`, of shape `d^r x sigma(d, r)`.
    pub fn me(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.expand.len(), self.select.len());
        for (k, &j) in self.expand.iter().enumerate() {
            m[(k, j)] = 1.0;
        }
        m
    }
}

/// Expand `prod_k (row_{idx_k} . z)` into degree-`r` monomial coefficients,
/// returned as (basis index, coefficient) pairs.
fn expand_product(
    rows: &[Vec<(u8, f64)>],
    idx: &[u8],
    basis: &MonomialBasis,
) -> Vec<(usize, f64)> {
    let mut terms: HashMap<Vec<u8>, f64> = HashMap::new();
    terms.insert(Vec::new(), 1.0);
    for &i in idx {
        let mut next: HashMap<Vec<u8>, f64> = HashMap::with_capacity(terms.len() * 4);
        for (mono, c) in &terms {
            for &(j, a) in &rows[i as usize] {
                let mut m = mono.clone();
                let pos = m.partition_point(|&x| x <= j);
                m.insert(pos, j);
                *next.entry(m).or_insert(0.0) += c * a;
            }
        }
        terms = next;
    }
    let mut out: Vec<(usize, f64)> = terms
        .into_iter()
        .filter(|(_, c)| *c != 0.0)
        .map(|(m, c)| (basis.index[&pack(&m)], c))
        .collect();
    out.sort_unstable_by_key(|e| e.0);
    out
}

fn sparse_rows(phi: &DMatrix<f64>) -> Vec<Vec<(u8, f64)>> {
    (0..phi.nrows())
        .map(|i| {
            (0..phi.ncols())
                .filter(|&j| phi[(i, j)] != 0.0)
                .map(|j| (j as u8, phi[(i, j)]))
                .collect()
        })
        .collect()
}

fn phi_r_sparse(phi: &DMatrix<f64>, basis: &MonomialBasis) -> SparseMatrix {
    let rows = sparse_rows(phi);
    let n = basis.len();
    let mut triplets = Vec::new();
    for (i, m) in basis.monomials().iter().enumerate() {
        for (j, c) in expand_product(&rows, m.indices(), basis) {
            triplets.push((i, j, c));
        }
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

/// The induced action of `phi` on degree-`r` monomials:
/// `lift_no_rep(phi z, r) = phi_r * lift_no_rep(z, r)`.
///
/// Built row by row from the expansion of products of rows of `phi`; this is
/// equal to `M_c (phi ⊗ ... ⊗ phi) M_e` without forming the Kronecker power.
pub fn build_phi_r(phi: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>, LiftError> {
    if !phi.is_square() {
        return Err(LiftError::DimensionMismatch { expected: phi.nrows(), got: phi.ncols() });
    }
    let basis = MonomialBasis::new(phi.nrows(), r)?;
    Ok(phi_r_sparse(phi, &basis).to_dense())
}

/// The permuted lifted system `Z+ = Phi Z` with `Phi = [[F, G], [0, I]]`.
#[derive(Debug, Clone)]
pub struct LiftedSystem {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// Lifted coordinates in `Z` order: all monomials containing a state
    /// variable first (by degree), then pure-input monomials (by degree).
    monomials: Vec<Monomial>,
    index: HashMap<u64, usize>,
    /// `perm[k]` is the position in the unpermuted stack `[z^(1); ...; z^(p)]`
    /// of the `k`-th entry of `Z`.
    perm: Vec<usize>,
    phi: SparseMatrix,
    nx: usize,
    ext: DMatrix<f64>,
}

impl LiftedSystem {
    /// Build from the extended matrix `[[A, B], [0, I_m]]`.
    pub fn new(phi: &DMatrix<f64>, m: usize, p: usize) -> Result<Self, LiftError> {
        let d = phi.nrows();
        if !phi.is_square() || m == 0 || m >= d {
            return Err(LiftError::NotExtended(format!("{}x{} with m={m}", phi.nrows(), phi.ncols())));
        }
        let n = d - m;
        for i in n..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                if phi[(i, j)] != want {
                    return Err(LiftError::NotExtended(format!("entry ({i},{j}) = {}", phi[(i, j)])));
                }
            }
        }
        let a = phi.view((0, 0), (n, n)).into_owned();
        let rho = spectral::spectral_radius(&a);
        if rho >= 1.0 {
            return Err(LiftError::Unstable(rho));
        }
        if p == 0 || p > MAX_DEGREE {
            return Err(LiftError::UnsupportedDegree(p));
        }

        let bases: Vec<MonomialBasis> =
            (1..=p).map(|r| MonomialBasis::new(d, r)).collect::<Result<_, _>>()?;
        let mut offsets = Vec::with_capacity(p);
        let mut acc = 0;
        for b in &bases {
            offsets.push(acc);
            acc += b.len();
        }
        let total = acc;

        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (r, b) in bases.iter().enumerate() {
            for (i, mono) in b.monomials().iter().enumerate() {
                let entry = (offsets[r] + i, mono.clone());
                if mono.only_vars_from(n) {
                    vs.push(entry);
                } else {
                    xs.push(entry);
                }
            }
        }
        let nx = xs.len();
        let (perm, monomials): (Vec<usize>, Vec<Monomial>) = xs.into_iter().chain(vs).unzip();
        let index: HashMap<u64, usize> =
            monomials.iter().enumerate().map(|(k, m)| (m.key(), k)).collect();

        // Assemble Phi = T blockdiag(phi^(r)) T^T directly in Z coordinates.
        let mut inv = vec![0usize; total];
        for (k, &s) in perm.iter().enumerate() {
            inv[s] = k;
        }
        let mut triplets = Vec::new();
        for (r, b) in bases.iter().enumerate() {
            let block = phi_r_sparse(phi, b);
            for (i, j, v) in block.triplets() {
                triplets.push((inv[offsets[r] + i], inv[offsets[r] + j], v));
            }
        }
        let phi_big = SparseMatrix::from_triplets(total, total, triplets);

        Ok(LiftedSystem { n, m, p, monomials, index, perm, phi: phi_big, nx, ext: phi.clone() })
    }

    /// Length of `Z`, `Sigma(n+m, p)`.
    pub fn dim(&self) -> usize {
        self.monomials.len()
    }

    /// Length of `Z_x`.
    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Length of `V`, `Sigma(m, p)`.
    pub fn nv(&self) -> usize {
        self.dim() - self.nx
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn index_of(&self, m: &Monomial) -> Option<usize> {
        self.index.get(&m.key()).copied()
    }

    /// The extended matrix the system was built from.
    pub fn extended(&self) -> &DMatrix<f64> {
        &self.ext
    }

    pub fn phi(&self) -> &SparseMatrix {
        &self.phi
    }

    /// The permutation `T` as a dense matrix, `Z = T Zbar`.
    pub fn t_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut t = DMatrix::zeros(n, n);
        for (k, &s) in self.perm.iter().enumerate() {
            t[(k, s)] = 1.0;
        }
        t
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Stable block `F` (dense).
    pub fn f_block(&self) -> DMatrix<f64> {
        self.phi.dense_block(0..self.nx, 0..self.nx)
    }

    /// Coupling block `G` (dense).
    pub fn g_block(&self) -> DMatrix<f64> {
        self.phi.dense_block(0..self.nx, self.nx..self.dim())
    }

    /// Lifting map `eta(z)`.
    pub fn eta(&self, z: &[f64]) -> Result<DVector<f64>, LiftError> {
        let d = self.n + self.m;
        if z.len() != d {
            return Err(LiftError::DimensionMismatch { expected: d, got: z.len() });
        }
        Ok(DVector::from_iterator(self.dim(), self.monomials.iter().map(|m| m.eval(z))))
    }

    /// `eta(z)` restricted to the listed coordinates.
    pub fn eta_subset(&self, z: &[f64], coords: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.extend(coords.iter().map(|&k| self.monomials[k].eval(z)));
    }

    /// Smallest coordinate set containing `seed` that is closed under the
    /// dependency `row k of Phi reads column j`. Any row vector supported on
    /// the closure stays supported there after right-multiplication by `Phi`.
    pub fn observable_closure(&self, seed: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut seen = vec![false; self.dim()];
        let mut stack: Vec<usize> = Vec::new();
        for k in seed {
            if !seen[k] {
                seen[k] = true;
                stack.push(k);
            }
        }
        while let Some(k) = stack.pop() {
            for (j, _) in self.phi.row(k) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        (0..self.dim()).filter(|&k| seen[k]).collect()
    }
}

/// Extended matrix `[[A, B], [0, I]]`.
pub fn extended_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut phi = DMatrix::zeros(n + m, n + m);
    phi.view_mut((0, 0), (n, n)).copy_from(a);
    phi.view_mut((0, n), (n, m)).copy_from(b);
    for i in 0..m {
        phi[(n + i, n + i)] = 1.0;
    }
    phi
}
