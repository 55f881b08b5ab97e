//! Feature-map tensors and their NPY persistence.
//!
//! A [`FeatureMap`] is one layer's activations for one sample, laid out
//! `(C, H, W)` row-major. Files hold either a single map (rank 3) or a batch
//! (rank 4, leading batch axis).

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::scalar::Real;

mod npy;

/// Element type of the on-disk representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn descr(self) -> &'static str {
        match self {
            Precision::F32 => "<f4",
            Precision::F64 => "<f8",
        }
    }

    pub fn item_size(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Activations of one layer for one sample, shape `(C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    data: Array3<T>,
    precision: Precision,
}

impl<T: Real> FeatureMap<T> {
    /// Wraps an array; every axis must be non-empty.
    pub fn new(data: Array3<T>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!(
                "feature map dims must be >= 1, got ({c}, {h}, {w})"
            )));
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Ok(Self {
            data,
            precision: Precision::default(),
        })
    }

    pub fn from_vec(shape: (usize, usize, usize), values: Vec<T>) -> Result<Self> {
        let (c, h, w) = shape;
        if values.len() != c * h * w {
            return Err(Error::InvalidShape(format!(
                "{} values cannot fill ({c}, {h}, {w})",
                values.len()
            )));
        }
        let data = Array3::from_shape_vec(shape, values).expect("length checked");
        Self::new(data)
    }

    pub fn from_f64_slice(shape: (usize, usize, usize), values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| T::lit(v)).collect())
    }

    /// Constant map, mostly useful in tests.
    pub fn filled(shape: (usize, usize, usize), value: T) -> Result<Self> {
        Self::new(Array3::from_elem(shape, value))
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Stored precision; computation always happens in `T`.
    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn view(&self) -> ArrayView3<'_, T> {
        self.data.view()
    }

    pub fn array(&self) -> &Array3<T> {
        &self.data
    }

    pub fn into_array(self) -> Array3<T> {
        self.data
    }

    pub fn as_slice(&self) -> &[T] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        self.data.as_slice_mut().expect("standard layout")
    }

    /// Channels flattened to rows, `C x (H*W)`.
    pub fn channel_rows(&self) -> ArrayView2<'_, T> {
        let (c, h, w) = self.shape();
        self.data
            .view()
            .into_shape_with_order((c, h * w))
            .expect("standard layout")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> FeatureMap<U> {
        FeatureMap {
            data: self.data.mapv(f),
            precision: self.precision,
        }
    }
}

/// Non-empty, shape-homogeneous list of feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapBatch<T> {
    samples: Vec<FeatureMap<T>>,
}

impl<T: Real> FeatureMapBatch<T> {
    pub fn new(samples: Vec<FeatureMap<T>>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyBatch)?;
        let shape = first.shape();
        if let Some((i, m)) = samples.iter().enumerate().find(|(_, m)| m.shape() != shape) {
            return Err(Error::ShapeMismatch(format!(
                "sample {i} has shape {:?}, sample 0 has {shape:?}",
                m.shape()
            )));
        }
        Ok(Self { samples })
    }

    pub fn single(map: FeatureMap<T>) -> Self {
        Self { samples: vec![map] }
    }

    pub fn samples(&self) -> &[FeatureMap<T>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<FeatureMap<T>> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn map_shape(&self) -> (usize, usize, usize) {
        self.samples[0].shape()
    }

    /// Precision of the first sample; batches loaded from disk are uniform.
    pub fn precision(&self) -> Precision {
        self.samples[0].precision()
    }

    pub fn with_precision(self, precision: Precision) -> Self {
        Self {
            samples: self.samples.into_iter().map(|m| m.with_precision(precision)).collect(),
        }
    }
}

fn read_file(path: &Path) -> Result<npy::NpyArray> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    npy::read_npy(&mut bytes.as_slice())
}

/// Loads a rank-3 `(C,H,W)` or rank-4 `(B,C,H,W)` NPY file.
pub fn load_feature_maps<T: Real>(path: impl AsRef<Path>) -> Result<FeatureMapBatch<T>> {
    let arr = read_file(path.as_ref())?;
    let (b, shape) = match arr.shape[..] {
        [c, h, w] => (1, (c, h, w)),
        [b, c, h, w] => (b, (c, h, w)),
        _ => {
            return Err(Error::RankError {
                expected: "3 or 4",
                found: arr.shape.len(),
            })
        }
    };
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let per = shape.0 * shape.1 * shape.2;
    let samples = (0..b)
        .map(|i| {
            let chunk = &arr.data[i * per..(i + 1) * per];
            FeatureMap::<T>::from_f64_slice(shape, chunk).map(|m| m.with_precision(arr.precision))
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMapBatch::new(samples)
}

/// Writes the batch as rank 4 (or rank 3 when it holds a single map) at the
/// batch's stored precision.
pub fn save_feature_maps<T: Real>(batch: &FeatureMapBatch<T>, path: impl AsRef<Path>) -> Result<()> {
    let (c, h, w) = batch.map_shape();
    let shape: Vec<usize> = if batch.len() == 1 {
        vec![c, h, w]
    } else {
        vec![batch.len(), c, h, w]
    };
    let values = batch
        .samples()
        .iter()
        .flat_map(|m| m.as_slice().iter().map(|v| v.to_f64_lossy()));
    write_file(path.as_ref(), &shape, values, batch.precision())
}

/// Loads a rank-2 NPY matrix, e.g. 1x1 adapter weights `(C_out, C_in)`.
pub fn load_matrix<T: Real>(path: impl AsRef<Path>) -> Result<Array2<T>> {
    let arr = read_file(path.as_ref())?;
    match arr.shape[..] {
        [r, c] => Ok(
            Array2::from_shape_vec((r, c), arr.data.into_iter().map(T::lit).collect())
                .expect("length validated by reader"),
        ),
        _ => Err(Error::RankError {
            expected: "2",
            found: arr.shape.len(),
        }),
    }
}

pub fn save_matrix<T: Real>(matrix: &Array2<T>, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
    let (r, c) = matrix.dim();
    let values = matrix.iter().map(|v| v.to_f64_lossy());
    write_file(path.as_ref(), &[r, c], values, precision)
}

fn write_file(path: &Path, shape: &[usize], values: impl IntoIterator<Item = f64>, precision: Precision) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    npy::write_npy(&mut writer, shape, values, precision).map_err(io_err)?;
    std::io::Write::flush(&mut writer).map_err(io_err)
}
