//! Eigenvalue utilities.
//!
//! Large lifted matrices are reduced to their block-triangular (Frobenius)
//! form through the strongly connected components of their sparsity graph;
//! the spectrum is the union of the spectra of the diagonal blocks.

use nalgebra::{Complex, DMatrix, Schur};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::sparse::SparseMatrix;

/// Eigenvalues of a dense square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    if m.nrows() == 1 {
        return vec![Complex::new(m[(0, 0)], 0.0)];
    }
    let n = m.nrows();
    // The unshifted QR iteration can stall on the repeated unit eigenvalues of
    // lifted matrices; a diagonal shift moves the spectrum and breaks the cycle.
    for shift in [0.0, 0.31, -0.57, 0.73, 1.37] {
        let shifted = m + DMatrix::identity(n, n) * shift;
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, 200 * n) {
            return schur.complex_eigenvalues().iter().map(|l| l - shift).collect();
        }
    }
    panic!("eigenvalue iteration did not converge for a {n}x{n} matrix");
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Eigenvalues of a sparse square matrix via its irreducible diagonal blocks.
pub fn eigenvalues_sparse(m: &SparseMatrix) -> Vec<Complex<f64>> {
    let n = m.nrows();
    let mut g = DiGraph::<(), ()>::with_capacity(n, m.nnz());
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (i, j, _) in m.triplets() {
        if i != j {
            g.add_edge(nodes[i], nodes[j], ());
        }
    }
    let mut out = Vec::with_capacity(n);
    for comp in tarjan_scc(&g) {
        let mut idx: Vec<usize> = comp.iter().map(|v| v.index()).collect();
        idx.sort_unstable();
        out.extend(eigenvalues(&m.principal(&idx)));
    }
    out
}

/// Number of eigenvalues with modulus at least `1 - tol`.
pub fn count_unit(eigs: &[Complex<f64>], tol: f64) -> usize {
    eigs.iter().filter(|l| l.norm() >= 1.0 - tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_and_triangular() {
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&r) - 0.5).abs() < 1e-12);
        let t = DMatrix::from_row_slice(3, 3, &[0.3, 1.0, 2.0, 0.0, 1.0, 5.0, 0.0, 0.0, -0.7]);
        let mut e: Vec<f64> = eigenvalues_sparse(&SparseMatrix::from_dense(&t)).iter().map(|c| c.re).collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(e, vec![-0.7, 0.3, 1.0]);
    }

    #[test]
    fn cyclic_permutation_converges() {
        let mut p = DMatrix::zeros(4, 4);
        for i in 0..4 {
            p[((i + 1) % 4, i)] = 1.0;
        }
        let e = eigenvalues(&p);
        assert_eq!(e.len(), 4);
        assert_eq!(count_unit(&e, 1e-10), 4);
        let prod = e.iter().fold(Complex::new(1.0, 0.0), |a, l| a * l);
        assert!((prod - Complex::new(-1.0, 0.0)).norm() < 1e-10);
    }
}
