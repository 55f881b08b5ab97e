//! Normalized Laplacian of the channel graph, its eigendecomposition, and the
//! sign-canonical spectral embedding built from selected eigenvectors.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;

mod jacobi;

pub use jacobi::MAX_SWEEPS;

/// Minimum positive degree accepted by [`degree_and_laplacian`].
pub const MIN_DEGREE: f64 = 1e-12;
/// Eigenvalue separation below which eigenvectors are considered non-unique.
pub const DEGENERACY_GAP: f64 = 1e-6;
/// Magnitudes within this distance of the column maximum count as tied when
/// picking the sign pivot.
pub const SIGN_TIE_EPS: f64 = 1e-10;

/// Degree vector and symmetric normalized Laplacian of an adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPair<T> {
    pub degree: Array1<T>,
    pub laplacian: Array2<T>,
}

/// `D_ii = Σ_j A_ij` and `L = I − D^{-1/2} A D^{-1/2}`.
pub fn degree_and_laplacian<T: Real>(adjacency: ArrayView2<'_, T>) -> Result<LaplacianPair<T>> {
    let (r, c) = adjacency.dim();
    if r != c {
        return Err(Error::DimensionMismatch(format!(
            "adjacency must be square, got {r}x{c}"
        )));
    }
    let degree: Array1<T> = adjacency.rows().into_iter().map(|row| row.sum()).collect();
    let min = T::lit(MIN_DEGREE);
    if let Some((index, d)) = degree.iter().enumerate().find(|(_, d)| **d <= min || d.is_nan()) {
        return Err(Error::NonPositiveDegree {
            index,
            value: d.to_f64_lossy(),
        });
    }
    let inv_sqrt = degree.mapv(|d| T::one() / d.sqrt());
    let mut laplacian = Array2::zeros((c, c));
    for i in 0..c {
        for j in i..c {
            let v = -(inv_sqrt[i] * adjacency[[i, j]] * inv_sqrt[j]);
            let v = if i == j { T::one() + v } else { v };
            laplacian[[i, j]] = v;
            laplacian[[j, i]] = v;
        }
    }
    Ok(LaplacianPair { degree, laplacian })
}

/// Ascending eigenvalues with matching orthonormal eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigendecomposition<T> {
    pub eigenvalues: Array1<T>,
    pub basis: Array2<T>,
}

/// Full symmetric eigendecomposition; the input is symmetrized first.
pub fn eigendecompose<T: Real>(matrix: ArrayView2<'_, T>) -> Result<Eigendecomposition<T>> {
    let (r, c) = matrix.dim();
    if r != c {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {r}x{c}"
        )));
    }
    let (values, vectors) = jacobi::jacobi_eigh(matrix)?;
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let eigenvalues = order.iter().map(|&k| values[k]).collect();
    let basis = Array2::from_shape_fn((c, c), |(i, j)| vectors[[i, order[j]]]);
    Ok(Eigendecomposition { eigenvalues, basis })
}

/// Which end of the spectrum feeds the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenSelection {
    #[default]
    Largest,
    /// Conventional spectral-clustering choice, kept for ablations.
    Smallest,
}

/// `N` eigenvectors of the normalized Laplacian, sign-fixed, plus the full
/// decomposition they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding<T> {
    /// Ascending.
    pub eigenvalues: Array1<T>,
    /// Orthonormal columns, aligned with `eigenvalues`.
    pub basis: Array2<T>,
    /// `C x N`; column `j` is `signs[j] * basis[:, selected[j]]`.
    pub embedding: Array2<T>,
    /// Basis column feeding each embedding column.
    pub selected: Vec<usize>,
    /// `±1` applied to each selected column.
    pub signs: Vec<T>,
    /// Smallest distance from any selected eigenvalue to any other eigenvalue.
    pub min_gap: T,
    pub degenerate: bool,
}

impl<T: Real> SpectralEmbedding<T> {
    pub fn n_selected(&self) -> usize {
        self.selected.len()
    }

    pub fn channels(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Top-`n` (largest eigenvalue first) embedding.
pub fn embed<T: Real>(decomposition: &Eigendecomposition<T>, n: usize) -> Result<SpectralEmbedding<T>> {
    embed_with(decomposition, n, EigenSelection::Largest)
}

pub fn embed_with<T: Real>(
    decomposition: &Eigendecomposition<T>,
    n: usize,
    selection: EigenSelection,
) -> Result<SpectralEmbedding<T>> {
    let c = decomposition.eigenvalues.len();
    if n == 0 || n > c {
        return Err(Error::BadN { n, channels: c });
    }
    let selected: Vec<usize> = match selection {
        EigenSelection::Largest => (0..c).rev().take(n).collect(),
        EigenSelection::Smallest => (0..n).collect(),
    };
    let basis = &decomposition.basis;
    let mut embedding = Array2::zeros((c, n));
    let mut signs = Vec::with_capacity(n);
    for (j, &k) in selected.iter().enumerate() {
        let column = basis.column(k);
        let sign = canonical_sign(column.iter().copied());
        embedding.column_mut(j).assign(&column.mapv(|v| v * sign));
        signs.push(sign);
    }
    let min_gap = selection_gap(&decomposition.eigenvalues, &selected);
    Ok(SpectralEmbedding {
        eigenvalues: decomposition.eigenvalues.clone(),
        basis: basis.clone(),
        embedding,
        selected,
        signs,
        min_gap,
        degenerate: min_gap < T::lit(DEGENERACY_GAP),
    })
}

/// Adjacency → Laplacian → eigendecomposition → embedding.
pub fn spectral_embedding<T: Real>(
    adjacency: ArrayView2<'_, T>,
    n: usize,
    selection: EigenSelection,
) -> Result<(LaplacianPair<T>, SpectralEmbedding<T>)> {
    let pair = degree_and_laplacian(adjacency)?;
    let decomposition = eigendecompose(pair.laplacian.view())?;
    let emb = embed_with(&decomposition, n, selection)?;
    Ok((pair, emb))
}

/// `+1` when the largest-magnitude entry (lowest index among ties) is
/// non-negative, `-1` otherwise.
pub fn canonical_sign<T: Real>(column: impl Iterator<Item = T> + Clone) -> T {
    let max = column.clone().fold(T::zero(), |m, v| m.max(v.abs()));
    let tie = T::lit(SIGN_TIE_EPS);
    let pivot = column.into_iter().find(|v| v.abs() >= max - tie).unwrap_or(T::zero());
    if pivot < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

fn selection_gap<T: Real>(eigenvalues: &Array1<T>, selected: &[usize]) -> T {
    let mut gap = T::infinity();
    for &a in selected {
        for (b, &lb) in eigenvalues.iter().enumerate() {
            if b != a {
                gap = gap.min((eigenvalues[a] - lb).abs());
            }
        }
    }
    gap
}

/// Smallest distance between consecutive ascending eigenvalues.
pub fn min_adjacent_gap<T: Real>(eigenvalues: &Array1<T>) -> T {
    eigenvalues
        .windows(2)
        .into_iter()
        .map(|w| w[1] - w[0])
        .fold(T::infinity(), |m, g| m.min(g))
}

/// Largest `N` for a fraction of `C`, floored, at least 1.
pub fn n_from_fraction(channels: usize, fraction: f64) -> usize {
    ((channels as f64 * fraction).floor() as usize).clamp(1, channels.max(1))
}

/// `floor(C / 2)`, at least 1.
pub fn default_n(channels: usize) -> usize {
    (channels / 2).max(1)
}
