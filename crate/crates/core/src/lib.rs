//! Graph-based multi-level feature distillation losses.
//!
//! Each feature map `(C, H, W)` is turned into a channel relational graph
//! whose vertices are channels and whose edges are cosine similarities. The
//! student is pulled towards the teacher at three levels:
//!
//! * vertices: attention-weighted feature MSE ([`losses::vertex_loss`]),
//! * edges: relation-weighted adjacency MSE ([`losses::edge_loss`]),
//! * spectrum: MSE between sign-canonical embeddings formed by the
//!   eigenvectors of the largest normalized-Laplacian eigenvalues
//!   ([`losses::spectral_loss`]).
//!
//! All three come with analytic gradients w.r.t. the student map
//! ([`gradients`]) and a finite-difference oracle to certify them.
//!
//! The numerics are generic over [`Real`]; the `*64` aliases below are what
//! the CLI uses.

pub mod attention;
pub mod crg;
pub mod error;
pub mod gradients;
pub mod losses;
pub mod scalar;
pub mod simulate;
pub mod spectral;
pub mod tensor_io;

pub use attention::{AttentionMasks, RelationSoftmax};
pub use crg::{AdjacencyKind, ChannelGraph};
pub use error::{Error, Result};
pub use gradients::{GradientCheckReport, GradientField, GradientMode, GradientTolerances, TermCheck};
pub use losses::{
    ChannelAdapter, EmbeddingSize, LossConfig, LossReport, LossWeights, MaskToggles, SpectralVariant, TeacherContext,
    TermToggles,
};
pub use scalar::Real;
pub use spectral::{EigenSelection, LaplacianPair, SpectralEmbedding};
pub use tensor_io::{FeatureMap, FeatureMapBatch, Precision};

pub type FeatureMap64 = FeatureMap<f64>;
pub type FeatureMap32 = FeatureMap<f32>;
pub type FeatureMapBatch64 = FeatureMapBatch<f64>;
pub type ChannelGraph64 = ChannelGraph<f64>;
pub type AttentionMasks64 = AttentionMasks<f64>;
pub type SpectralEmbedding64 = SpectralEmbedding<f64>;
pub type LossConfig64 = LossConfig<f64>;
pub type LossReport64 = LossReport<f64>;
pub type LossWeights64 = LossWeights<f64>;
pub type GradientField64 = GradientField<f64>;
pub type TeacherContext64 = TeacherContext<f64>;
pub type ChannelAdapter64 = ChannelAdapter<f64>;

/// Version string shared with language bindings.
pub const VERSION: &str = concat!("crg-distill ", env!("CARGO_PKG_VERSION"));
