//! Teacher-derived attention masks weighting the vertex and edge losses.
//!
//! Spatial and channel masks are softmaxes of mean absolute activations,
//! rescaled so they average to one. The relation mask is a softmax of the
//! absolute teacher adjacency.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor_io::FeatureMap;

/// Normalization axis of the relation mask softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RelationSoftmax {
    /// One softmax over all `C²` entries; the mask sums to 1.
    #[default]
    Global,
    /// Independent softmax per row; every row sums to 1.
    Row,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMasks<T> {
    /// `H x W`, sums to `H·W`.
    pub spatial: Array2<T>,
    /// Length `C`, sums to `C`.
    pub channel: Array1<T>,
    /// `C x C`.
    pub relation: Array2<T>,
}

impl<T: Real> AttentionMasks<T> {
    /// All three masks from the teacher map and the teacher adjacency.
    pub fn from_teacher(
        teacher: &FeatureMap<T>,
        teacher_adjacency: ArrayView2<'_, T>,
        axis: RelationSoftmax,
    ) -> Result<Self> {
        if teacher_adjacency.dim() != (teacher.channels(), teacher.channels()) {
            return Err(Error::DimensionMismatch(format!(
                "adjacency {:?} does not match {} teacher channels",
                teacher_adjacency.dim(),
                teacher.channels()
            )));
        }
        Ok(Self {
            spatial: spatial_mask(teacher),
            channel: channel_mask(teacher),
            relation: relation_mask_with(teacher_adjacency, axis)?,
        })
    }
}

/// Max-shifted softmax in place.
pub fn softmax_in_place<'a, T: Real>(scores: impl IntoIterator<Item = &'a mut T>) {
    let mut items: Vec<&mut T> = scores.into_iter().collect();
    let max = items
        .iter()
        .fold(T::neg_infinity(), |m, v| if **v > m { **v } else { m });
    let mut total = T::zero();
    for v in items.iter_mut() {
        **v = (**v - max).exp();
        total += **v;
    }
    for v in items {
        *v /= total;
    }
}

/// Scale-free spatial scores: channel mean of `|F|` at each position.
pub fn spatial_scores<T: Real>(teacher: &FeatureMap<T>) -> Array2<T> {
    let c = T::count(teacher.channels());
    teacher.view().mapv(|v| v.abs()).sum_axis(Axis(0)).mapv(|s| s / c)
}

/// Per-channel spatial mean of `|F|`.
pub fn channel_scores<T: Real>(teacher: &FeatureMap<T>) -> Array1<T> {
    let hw = T::count(teacher.height() * teacher.width());
    teacher
        .channel_rows()
        .map_axis(Axis(1), |row| row.iter().map(|v| v.abs()).sum::<T>() / hw)
}

/// Spatial mask from precomputed scores: `H·W · softmax(scores)`.
pub fn spatial_mask_from_scores<T: Real>(mut scores: Array2<T>) -> Array2<T> {
    let n = T::count(scores.len());
    softmax_in_place(scores.iter_mut());
    scores.mapv_inplace(|v| v * n);
    scores
}

/// Channel mask from precomputed scores: `C · softmax(scores)`.
pub fn channel_mask_from_scores<T: Real>(mut scores: Array1<T>) -> Array1<T> {
    let n = T::count(scores.len());
    softmax_in_place(scores.iter_mut());
    scores.mapv_inplace(|v| v * n);
    scores
}

pub fn spatial_mask<T: Real>(teacher: &FeatureMap<T>) -> Array2<T> {
    spatial_mask_from_scores(spatial_scores(teacher))
}

pub fn channel_mask<T: Real>(teacher: &FeatureMap<T>) -> Array1<T> {
    channel_mask_from_scores(channel_scores(teacher))
}

/// Joint softmax of `|A|` over all entries.
pub fn relation_mask<T: Real>(teacher_adjacency: ArrayView2<'_, T>) -> Result<Array2<T>> {
    relation_mask_with(teacher_adjacency, RelationSoftmax::Global)
}

pub fn relation_mask_with<T: Real>(teacher_adjacency: ArrayView2<'_, T>, axis: RelationSoftmax) -> Result<Array2<T>> {
    let (r, c) = teacher_adjacency.dim();
    if r != c {
        return Err(Error::DimensionMismatch(format!(
            "relation mask needs a square adjacency, got {r}x{c}"
        )));
    }
    let mut mask = teacher_adjacency.mapv(|v| v.abs());
    match axis {
        RelationSoftmax::Global => softmax_in_place(mask.iter_mut()),
        RelationSoftmax::Row => {
            for mut row in mask.rows_mut() {
                softmax_in_place(row.iter_mut());
            }
        }
    }
    Ok(mask)
}

/// Outer product `M^c_k · M^s_{ij}` as a `C x H x W` weight tensor.
pub(crate) fn vertex_weights<T: Real>(
    spatial: Option<&Array2<T>>,
    channel: Option<&Array1<T>>,
    shape: (usize, usize, usize),
) -> ndarray::Array3<T> {
    let mut w = ndarray::Array3::from_elem(shape, T::one());
    if let Some(s) = spatial {
        for mut plane in w.outer_iter_mut() {
            Zip::from(&mut plane).and(s).for_each(|w, &s| *w *= s);
        }
    }
    if let Some(c) = channel {
        for (mut plane, &m) in w.outer_iter_mut().zip(c.iter()) {
            plane.mapv_inplace(|v| v * m);
        }
    }
    w
}
