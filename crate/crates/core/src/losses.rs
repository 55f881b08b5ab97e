//! Vertex, edge and spectral losses, their weighted combination, and the
//! 1x1 channel adapter used to align student channels with the teacher.

use ndarray::{Array1, Array2, Array3, ArrayView2, Zip};

use crate::attention::{vertex_weights, AttentionMasks, RelationSoftmax};
use crate::crg::{build_adjacency_with, AdjacencyKind};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{n_from_fraction, spectral_embedding, EigenSelection, SpectralEmbedding};
use crate::tensor_io::FeatureMap;

/// `α`, `β`, `γ` in `L_M = α·L_V + β·L_E + γ·L_S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            alpha: T::one(),
            beta: T::one(),
            gamma: T::one(),
        }
    }
}

impl<T: Real> LossWeights<T> {
    pub fn new(alpha: T, beta: T, gamma: T) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::InvalidWeights(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Which loss terms enter `L_M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermToggles {
    pub vertex: bool,
    pub edge: bool,
    pub spectral: bool,
}

impl Default for TermToggles {
    fn default() -> Self {
        Self::all()
    }
}

impl TermToggles {
    pub fn all() -> Self {
        Self {
            vertex: true,
            edge: true,
            spectral: true,
        }
    }

    pub fn none() -> Self {
        Self {
            vertex: false,
            edge: false,
            spectral: false,
        }
    }

    /// Parses letters from `{V, E, S}`; commas and whitespace are ignored,
    /// an empty string or `none` disables every term.
    pub fn parse(letters: &str) -> Option<Self> {
        let mut t = Self::none();
        if letters.trim().eq_ignore_ascii_case("none") {
            return Some(t);
        }
        for ch in letters.chars().filter(|c| !c.is_whitespace() && *c != ',') {
            match ch.to_ascii_uppercase() {
                'V' => t.vertex = true,
                'E' => t.edge = true,
                'S' => t.spectral = true,
                _ => return None,
            }
        }
        Some(t)
    }
}

/// Which attention masks weight the vertex and edge losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskToggles {
    pub spatial: bool,
    pub channel: bool,
    pub relation: bool,
}

impl Default for MaskToggles {
    fn default() -> Self {
        Self {
            spatial: true,
            channel: true,
            relation: true,
        }
    }
}

/// Spectral term flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectralVariant {
    /// Mean squared difference of the sign-canonical embeddings.
    #[default]
    Eigenvector,
    /// Mean squared difference of the ascending eigenvalue vectors.
    Eigenvalue,
}

/// Embedding size `N`, absolute or as a fraction of `C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmbeddingSize {
    Count(usize),
    Fraction(f64),
}

impl Default for EmbeddingSize {
    fn default() -> Self {
        EmbeddingSize::Fraction(0.5)
    }
}

impl EmbeddingSize {
    pub fn resolve(self, channels: usize) -> usize {
        match self {
            EmbeddingSize::Count(n) => n,
            EmbeddingSize::Fraction(f) => n_from_fraction(channels, f),
        }
    }
}

/// Everything that shapes `L_M` besides the two feature maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    pub weights: LossWeights<T>,
    pub n: EmbeddingSize,
    pub terms: TermToggles,
    pub masks: MaskToggles,
    pub relation_softmax: RelationSoftmax,
    pub selection: EigenSelection,
    pub variant: SpectralVariant,
    pub adjacency: AdjacencyKind,
}

impl<T: Real> Default for LossConfig<T> {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            n: EmbeddingSize::default(),
            terms: TermToggles::default(),
            masks: MaskToggles::default(),
            relation_softmax: RelationSoftmax::default(),
            selection: EigenSelection::default(),
            variant: SpectralVariant::default(),
            adjacency: AdjacencyKind::default(),
        }
    }
}

/// Per-term values and their weighted combination.
///
/// Disabled terms are still evaluated and reported; they only drop out of
/// `multi_level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport<T> {
    pub vertex: T,
    pub edge: T,
    pub spectral: T,
    pub multi_level: T,
    /// Either embedding had a selected eigenvalue closer than the
    /// degeneracy gap to another eigenvalue.
    pub spectral_degenerate: bool,
}

impl<T: Real> LossReport<T> {
    pub fn zero() -> Self {
        Self {
            vertex: T::zero(),
            edge: T::zero(),
            spectral: T::zero(),
            multi_level: T::zero(),
            spectral_degenerate: false,
        }
    }

    pub fn combine(vertex: T, edge: T, spectral: T, weights: &LossWeights<T>, terms: TermToggles) -> Self {
        let mut multi_level = T::zero();
        if terms.vertex {
            multi_level += weights.alpha * vertex;
        }
        if terms.edge {
            multi_level += weights.beta * edge;
        }
        if terms.spectral {
            multi_level += weights.gamma * spectral;
        }
        Self {
            vertex,
            edge,
            spectral,
            multi_level,
            spectral_degenerate: false,
        }
    }

    /// Component-wise sum, used for left-to-right aggregation.
    pub fn accumulate(&mut self, other: &Self) {
        self.vertex += other.vertex;
        self.edge += other.edge;
        self.spectral += other.spectral;
        self.multi_level += other.multi_level;
        self.spectral_degenerate |= other.spectral_degenerate;
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            vertex: self.vertex * factor,
            edge: self.edge * factor,
            spectral: self.spectral * factor,
            multi_level: self.multi_level * factor,
            spectral_degenerate: self.spectral_degenerate,
        }
    }
}

/// Reports for several layers, summed in order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLayerReport<T> {
    pub layers: Vec<LossReport<T>>,
    pub total: LossReport<T>,
}

/// Spectral loss value plus the degeneracy warning of either side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralTerm<T> {
    pub value: T,
    pub degenerate: bool,
}

fn check_same_shape<T: Real>(teacher: &FeatureMap<T>, student: &FeatureMap<T>) -> Result<()> {
    if teacher.shape() != student.shape() {
        return Err(Error::ShapeMismatch(format!(
            "teacher {:?} vs student {:?}; apply a channel adapter first",
            teacher.shape(),
            student.shape()
        )));
    }
    Ok(())
}

fn check_square<T>(name: &str, m: &ArrayView2<'_, T>, c: usize) -> Result<()> {
    if m.dim() != (c, c) {
        return Err(Error::ShapeMismatch(format!(
            "{name} is {:?}, expected ({c}, {c})",
            m.dim()
        )));
    }
    Ok(())
}

/// Per-entry weights of the vertex loss, honoring the mask toggles.
pub fn vertex_weight_tensor<T: Real>(
    masks: &AttentionMasks<T>,
    shape: (usize, usize, usize),
    use_spatial: bool,
    use_channel: bool,
) -> Result<Array3<T>> {
    let (c, h, w) = shape;
    if masks.spatial.dim() != (h, w) || masks.channel.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "masks sized for spatial {:?} / {} channels, maps are {shape:?}",
            masks.spatial.dim(),
            masks.channel.len()
        )));
    }
    Ok(vertex_weights(
        use_spatial.then_some(&masks.spatial),
        use_channel.then_some(&masks.channel),
        shape,
    ))
}

/// Attention-weighted mean squared feature difference.
pub fn vertex_loss<T: Real>(
    teacher: &FeatureMap<T>,
    student: &FeatureMap<T>,
    masks: &AttentionMasks<T>,
    use_spatial: bool,
    use_channel: bool,
) -> Result<T> {
    check_same_shape(teacher, student)?;
    let weights = vertex_weight_tensor(masks, teacher.shape(), use_spatial, use_channel)?;
    let mut sum = T::zero();
    Zip::from(teacher.array())
        .and(student.array())
        .and(&weights)
        .for_each(|&t, &s, &m| {
            let d = t - s;
            sum += d * d * m;
        });
    Ok(sum / T::count(teacher.len()))
}

/// Relation-weighted mean squared adjacency difference over `C x C`.
pub fn edge_loss<T: Real>(
    teacher_adj: ArrayView2<'_, T>,
    student_adj: ArrayView2<'_, T>,
    relation_mask: ArrayView2<'_, T>,
    use_relation: bool,
) -> Result<T> {
    let c = teacher_adj.nrows();
    check_square("teacher adjacency", &teacher_adj, c)?;
    check_square("student adjacency", &student_adj, c)?;
    check_square("relation mask", &relation_mask, c)?;
    let mut sum = T::zero();
    Zip::from(teacher_adj)
        .and(student_adj)
        .and(relation_mask)
        .for_each(|&t, &s, &m| {
            let d = t - s;
            sum += if use_relation { d * d * m } else { d * d };
        });
    Ok(sum / T::count(c * c))
}

/// Mean squared difference of two `C x N` embeddings.
pub fn spectral_loss<T: Real>(
    teacher_emb: &SpectralEmbedding<T>,
    student_emb: &SpectralEmbedding<T>,
) -> Result<SpectralTerm<T>> {
    let (te, se) = (&teacher_emb.embedding, &student_emb.embedding);
    if te.dim() != se.dim() {
        return Err(Error::ShapeMismatch(format!(
            "teacher embedding {:?} vs student embedding {:?}",
            te.dim(),
            se.dim()
        )));
    }
    let value = Zip::from(te)
        .and(se)
        .fold(T::zero(), |acc, &t, &s| acc + (t - s) * (t - s))
        / T::count(te.len());
    Ok(SpectralTerm {
        value,
        degenerate: teacher_emb.degenerate || student_emb.degenerate,
    })
}

/// Mean squared difference of two ascending eigenvalue vectors.
pub fn spectral_value_loss_variant<T: Real>(teacher_vals: &Array1<T>, student_vals: &Array1<T>) -> Result<T> {
    if teacher_vals.len() != student_vals.len() || teacher_vals.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "eigenvalue vectors of length {} and {}",
            teacher_vals.len(),
            student_vals.len()
        )));
    }
    let sum = Zip::from(teacher_vals)
        .and(student_vals)
        .fold(T::zero(), |acc, &t, &s| acc + (t - s) * (t - s));
    Ok(sum / T::count(teacher_vals.len()))
}

/// Teacher-side quantities, computed once and reused for every student.
#[derive(Debug, Clone)]
pub struct TeacherContext<T> {
    pub map: FeatureMap<T>,
    pub adjacency: Array2<T>,
    pub masks: AttentionMasks<T>,
    pub spectrum: SpectralEmbedding<T>,
}

impl<T: Real> TeacherContext<T> {
    pub fn new(teacher: &FeatureMap<T>, config: &LossConfig<T>) -> Result<Self> {
        config.weights.validate()?;
        let adjacency = build_adjacency_with(teacher, config.adjacency).into_adjacency();
        let masks = AttentionMasks::from_teacher(teacher, adjacency.view(), config.relation_softmax)?;
        let n = config.n.resolve(teacher.channels());
        let (_, spectrum) = spectral_embedding(adjacency.view(), n, config.selection)?;
        Ok(Self {
            map: teacher.clone(),
            adjacency,
            masks,
            spectrum,
        })
    }

    pub fn n(&self) -> usize {
        self.spectrum.n_selected()
    }
}

/// Student-side graph quantities.
#[derive(Debug, Clone)]
pub struct StudentState<T> {
    pub adjacency: Array2<T>,
    pub spectrum: SpectralEmbedding<T>,
}

impl<T: Real> StudentState<T> {
    pub fn new(student: &FeatureMap<T>, n: usize, config: &LossConfig<T>) -> Result<Self> {
        let adjacency = build_adjacency_with(student, config.adjacency).into_adjacency();
        let (_, spectrum) = spectral_embedding(adjacency.view(), n, config.selection)?;
        Ok(Self { adjacency, spectrum })
    }
}

/// `L_M` for one teacher/student pair.
pub fn multi_level_loss<T: Real>(
    teacher: &FeatureMap<T>,
    student: &FeatureMap<T>,
    config: &LossConfig<T>,
) -> Result<LossReport<T>> {
    check_same_shape(teacher, student)?;
    let ctx = TeacherContext::new(teacher, config)?;
    multi_level_loss_with(&ctx, student, config)
}

pub fn multi_level_loss_with<T: Real>(
    ctx: &TeacherContext<T>,
    student: &FeatureMap<T>,
    config: &LossConfig<T>,
) -> Result<LossReport<T>> {
    check_same_shape(&ctx.map, student)?;
    let state = StudentState::new(student, ctx.n(), config)?;
    loss_from_state(ctx, student, &state, config)
}

pub(crate) fn loss_from_state<T: Real>(
    ctx: &TeacherContext<T>,
    student: &FeatureMap<T>,
    state: &StudentState<T>,
    config: &LossConfig<T>,
) -> Result<LossReport<T>> {
    let vertex = vertex_loss(
        &ctx.map,
        student,
        &ctx.masks,
        config.masks.spatial,
        config.masks.channel,
    )?;
    let edge = edge_loss(
        ctx.adjacency.view(),
        state.adjacency.view(),
        ctx.masks.relation.view(),
        config.masks.relation,
    )?;
    let (spectral, degenerate) = match config.variant {
        SpectralVariant::Eigenvector => {
            let term = spectral_loss(&ctx.spectrum, &state.spectrum)?;
            (term.value, term.degenerate)
        }
        SpectralVariant::Eigenvalue => (
            spectral_value_loss_variant(&ctx.spectrum.eigenvalues, &state.spectrum.eigenvalues)?,
            false,
        ),
    };
    let mut report = LossReport::combine(vertex, edge, spectral, &config.weights, config.terms);
    report.spectral_degenerate = degenerate;
    Ok(report)
}

/// Sums per-layer reports left to right.
pub fn multi_layer_loss<T: Real>(
    layers: &[(FeatureMap<T>, FeatureMap<T>)],
    config: &LossConfig<T>,
) -> Result<MultiLayerReport<T>> {
    let layers = layers
        .iter()
        .map(|(t, s)| multi_level_loss(t, s, config))
        .collect::<Result<Vec<_>>>()?;
    let mut total = LossReport::zero();
    for r in &layers {
        total.accumulate(r);
    }
    Ok(MultiLayerReport { layers, total })
}

/// Pointwise (1x1) channel projection `out_m = Σ_k W_mk·F_k + b_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAdapter<T> {
    weights: Array2<T>,
    bias: Array1<T>,
}

impl<T: Real> ChannelAdapter<T> {
    /// `weights` is `C_out x C_in`; a missing bias is zero.
    pub fn new(weights: Array2<T>, bias: Option<Array1<T>>) -> Result<Self> {
        let (c_out, c_in) = weights.dim();
        if c_out == 0 || c_in == 0 {
            return Err(Error::InvalidShape(format!("adapter weights {c_out}x{c_in}")));
        }
        let bias = bias.unwrap_or_else(|| Array1::zeros(c_out));
        if bias.len() != c_out {
            return Err(Error::ShapeMismatch(format!(
                "adapter bias has {} entries for {c_out} outputs",
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidShape("adapter entries must be finite".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            weights: Array2::eye(channels),
            bias: Array1::zeros(channels),
        }
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<T> {
        &self.bias
    }

    pub fn in_channels(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_channels(&self) -> usize {
        self.weights.nrows()
    }
}

pub fn apply_adapter<T: Real>(student: &FeatureMap<T>, adapter: &ChannelAdapter<T>) -> Result<FeatureMap<T>> {
    let (c, h, w) = student.shape();
    if adapter.in_channels() != c {
        return Err(Error::ShapeMismatch(format!(
            "adapter expects {} input channels, student has {c}",
            adapter.in_channels()
        )));
    }
    let mut projected = adapter.weights.dot(&student.channel_rows());
    for (mut row, &b) in projected.rows_mut().into_iter().zip(adapter.bias.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    let data = projected
        .into_shape_with_order((adapter.out_channels(), h, w))
        .expect("contiguous projection");
    Ok(FeatureMap::new(data)?.with_precision(student.precision()))
}
