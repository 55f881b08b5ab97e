//! Channel relational graph: channels are vertices, pairwise cosine
//! similarities of the flattened channels are the edge weights.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::scalar::Real;
use crate::tensor_io::FeatureMap;

/// Channels whose 2-norm falls below this are treated as isolated vertices.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// How edge weights are derived from the channel vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdjacencyKind {
    /// Cosine similarity of the flattened channels.
    #[default]
    Cosine,
    /// Raw inner products `V Vᵀ`, without normalization.
    UnnormalizedGram,
}

/// Vertex set (flattened channels) and weighted adjacency of one map.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGraph<T> {
    channel_vectors: Array2<T>,
    adjacency: Array2<T>,
    source_shape: (usize, usize, usize),
    kind: AdjacencyKind,
}

impl<T: Real> ChannelGraph<T> {
    pub fn channel_vectors(&self) -> &Array2<T> {
        &self.channel_vectors
    }

    pub fn adjacency(&self) -> &Array2<T> {
        &self.adjacency
    }

    pub fn into_adjacency(self) -> Array2<T> {
        self.adjacency
    }

    pub fn source_shape(&self) -> (usize, usize, usize) {
        self.source_shape
    }

    pub fn kind(&self) -> AdjacencyKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.source_shape.0
    }
}

/// `C x (H*W)` matrix whose row `k` is channel `k` flattened height-major.
pub fn vectorize_channels<T: Real>(map: &FeatureMap<T>) -> Array2<T> {
    map.channel_rows().to_owned()
}

/// Cosine-similarity channel graph.
pub fn build_adjacency<T: Real>(map: &FeatureMap<T>) -> ChannelGraph<T> {
    build_adjacency_with(map, AdjacencyKind::Cosine)
}

pub fn build_adjacency_with<T: Real>(map: &FeatureMap<T>, kind: AdjacencyKind) -> ChannelGraph<T> {
    let channel_vectors = vectorize_channels(map);
    let adjacency = match kind {
        AdjacencyKind::Cosine => cosine_adjacency(channel_vectors.view()),
        AdjacencyKind::UnnormalizedGram => gram(channel_vectors.view()),
    };
    ChannelGraph {
        channel_vectors,
        adjacency,
        source_shape: map.shape(),
        kind,
    }
}

/// Row 2-norms.
pub fn row_norms<T: Real>(vectors: ArrayView2<'_, T>) -> Array1<T> {
    vectors.map_axis(Axis(1), |row| row.dot(&row).sqrt())
}

/// Rows scaled to unit length; zero-norm rows stay zero. Also returns the norms.
pub fn normalized_rows<T: Real>(vectors: ArrayView2<'_, T>) -> (Array2<T>, Array1<T>) {
    let norms = row_norms(vectors);
    let eps = T::lit(ZERO_NORM_EPS);
    let mut unit = vectors.to_owned();
    for (mut row, &n) in unit.rows_mut().into_iter().zip(norms.iter()) {
        if n < eps {
            row.fill(T::zero());
        } else {
            row.mapv_inplace(|v| v / n);
        }
    }
    (unit, norms)
}

/// Cosine similarity of every row pair. Zero-norm rows get a unit self-loop
/// and no other edges.
pub fn cosine_adjacency<T: Real>(vectors: ArrayView2<'_, T>) -> Array2<T> {
    let (unit, _) = normalized_rows(vectors);
    let mut a = gram(unit.view());
    for i in 0..a.nrows() {
        a[[i, i]] = T::one();
    }
    a
}

/// `V Vᵀ` with the lower triangle mirrored from the upper one.
fn gram<T: Real>(vectors: ArrayView2<'_, T>) -> Array2<T> {
    let mut a = vectors.dot(&vectors.t());
    let c = a.nrows();
    for i in 0..c {
        for j in (i + 1)..c {
            a[[j, i]] = a[[i, j]];
        }
    }
    a
}
