//! Dense linear-algebra helpers bridging `ndarray` storage and `nalgebra`
//! decompositions.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn to_dmatrix(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigen-decomposition of the (optionally centered) second-moment matrix,
/// sorted by descending eigenvalue. Returns `(values, D × D vectors)`.
pub(crate) fn principal_axes(data: ArrayView2<f64>, mean: Option<&Array1<f64>>) -> (Vec<f64>, Array2<f64>) {
    let n = data.nrows().max(1) as f64;
    let centered;
    let x = match mean {
        Some(m) => {
            centered = &data - m;
            centered.view()
        }
        None => data,
    };
    let moment = x.t().dot(&x) / n;
    let eig = SymmetricEigen::new(to_dmatrix(moment.view()));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let dim = data.ncols();
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut vectors = Array2::zeros((dim, dim));
    for (col, &i) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        // Fix the sign so the largest-magnitude entry is positive.
        let pivot = (0..dim).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..dim {
            vectors[[r, col]] = sign * v[r];
        }
    }
    (values, vectors)
}

/// Top-`k` principal directions as a `D × k` matrix. Directions whose
/// eigenvalue is negligible are replaced with seeded random vectors
/// orthonormalized against the kept ones.
pub(crate) fn top_directions(data: ArrayView2<f64>, k: usize, seed: u64) -> Array2<f64> {
    let (values, vectors) = principal_axes(data, None);
    let dim = data.ncols();
    let scale = values.first().copied().unwrap_or(0.0);
    let kept = values.iter().take(k).take_while(|&&v| v > 1e-12 * scale && v > 1e-300).count();
    let mut basis: Vec<Vec<f64>> = (0..kept).map(|c| vectors.column(c).to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b7a_5e5);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    Array2::from_shape_fn((dim, k), |(r, c)| basis[c][r])
}

/// Solve the ridge system `(XᵀX + λI) W = XᵀY (+ λ W₀)` given the
/// accumulated Gram and cross matrices.
pub(crate) fn solve_ridge(gram: &Array2<f64>, cross: &Array2<f64>, lambda: f64, prior: Option<&Array2<f64>>) -> Array2<f64> {
    let f = gram.nrows();
    let mut a = to_dmatrix(gram.view());
    for i in 0..f {
        a[(i, i)] += lambda;
    }
    let mut rhs = to_dmatrix(cross.view());
    if let Some(p) = prior {
        rhs += to_dmatrix(p.view()) * lambda;
    }
    let solution = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DMatrix::zeros(f, rhs.ncols())),
    };
    from_dmatrix(&solution)
}
