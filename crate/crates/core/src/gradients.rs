//! Hand-derived gradients of the vertex, edge and spectral losses with
//! respect to the student feature map, and the central-difference oracle
//! used to certify them.
//!
//! Backward chain for the graph terms:
//!
//! ```text
//! F  ->  V (C x HW)  ->  A (cosine)  ->  L = I - D^-1/2 A D^-1/2  ->  (Λ, U)  ->  E
//! ```
//!
//! Masks are teacher-only and therefore constants. The embedding sign is
//! treated as locally constant.

use ndarray::{Array2, Array3, ArrayView2, Zip};

use crate::attention::AttentionMasks;
use crate::crg::{build_adjacency_with, normalized_rows, AdjacencyKind, ZERO_NORM_EPS};
use crate::error::{Error, Result};
use crate::losses::{
    edge_loss, loss_from_state, spectral_loss, spectral_value_loss_variant, vertex_loss, vertex_weight_tensor,
    LossConfig, LossReport, SpectralVariant, StudentState, TeacherContext,
};
use crate::scalar::Real;
use crate::spectral::{min_adjacent_gap, spectral_embedding, EigenSelection, SpectralEmbedding, DEGENERACY_GAP};
use crate::tensor_io::FeatureMap;

/// Default relative step of [`fd_gradient`].
pub const FD_STEP: f64 = 1e-6;
/// Floor of the denominator in the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-12;
/// Analytic and FD gradients both below this in max-norm agree exactly;
/// at a minimum the FD quotient is pure roundoff.
pub const VANISHING_GRADIENT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

/// `∂L/∂F^S`, shaped like the student map.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField<T> {
    pub values: Array3<T>,
    pub loss_at_point: T,
    pub mode: GradientMode,
}

impl<T: Real> GradientField<T> {
    pub fn max_abs(&self) -> T {
        max_abs(&self.values)
    }
}

fn max_abs<T: Real>(a: &Array3<T>) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

fn check_same_shape<T: Real>(teacher: &FeatureMap<T>, student: &FeatureMap<T>) -> Result<()> {
    if teacher.shape() != student.shape() {
        return Err(Error::ShapeMismatch(format!(
            "teacher {:?} vs student {:?}",
            teacher.shape(),
            student.shape()
        )));
    }
    Ok(())
}

fn rows_to_map<T: Real>(rows: Array2<T>, shape: (usize, usize, usize)) -> Array3<T> {
    rows.into_shape_with_order(shape).expect("C x HW rows")
}

/// `-(2/CHW)·(F^T − F^S)·M^s·M^c`.
pub fn grad_vertex<T: Real>(
    teacher: &FeatureMap<T>,
    student: &FeatureMap<T>,
    masks: &AttentionMasks<T>,
    use_spatial: bool,
    use_channel: bool,
) -> Result<GradientField<T>> {
    check_same_shape(teacher, student)?;
    let loss = vertex_loss(teacher, student, masks, use_spatial, use_channel)?;
    let mut values = vertex_weight_tensor(masks, teacher.shape(), use_spatial, use_channel)?;
    let scale = -T::lit(2.0) / T::count(teacher.len());
    Zip::from(&mut values)
        .and(teacher.array())
        .and(student.array())
        .for_each(|g, &t, &s| *g = scale * (t - s) * *g);
    Ok(GradientField {
        values,
        loss_at_point: loss,
        mode: GradientMode::Analytic,
    })
}

/// Edge loss gradient through the student's adjacency.
pub fn grad_edge<T: Real>(
    teacher_adj: ArrayView2<'_, T>,
    student: &FeatureMap<T>,
    relation_mask: ArrayView2<'_, T>,
    use_relation: bool,
    kind: AdjacencyKind,
) -> Result<GradientField<T>> {
    let c = student.channels();
    let student_adj = build_adjacency_with(student, kind).into_adjacency();
    let loss = edge_loss(teacher_adj, student_adj.view(), relation_mask, use_relation)?;
    let scale = -T::lit(2.0) / T::count(c * c);
    let mut grad_adj = Array2::zeros((c, c));
    Zip::from(&mut grad_adj)
        .and(teacher_adj)
        .and(&student_adj)
        .and(relation_mask)
        .for_each(|g, &t, &s, &m| {
            let w = if use_relation { m } else { T::one() };
            *g = scale * (t - s) * w;
        });
    let rows = adjacency_backward(&grad_adj, student.channel_rows(), kind)?;
    Ok(GradientField {
        values: rows_to_map(rows, student.shape()),
        loss_at_point: loss,
        mode: GradientMode::Analytic,
    })
}

/// Eigenvector-embedding loss gradient. Refuses degenerate student spectra.
pub fn grad_spectral<T: Real>(
    teacher_emb: &SpectralEmbedding<T>,
    student: &FeatureMap<T>,
    selection: EigenSelection,
    kind: AdjacencyKind,
) -> Result<GradientField<T>> {
    let adjacency = build_adjacency_with(student, kind).into_adjacency();
    let (_, student_emb) = spectral_embedding(adjacency.view(), teacher_emb.n_selected(), selection)?;
    let loss = spectral_loss(teacher_emb, &student_emb)?.value;
    if student_emb.degenerate {
        return Err(Error::DegenerateSpectrum {
            gap: student_emb.min_gap.to_f64_lossy(),
        });
    }
    let scale = -T::lit(2.0) / T::count(student_emb.embedding.len());
    let grad_emb = (&teacher_emb.embedding - &student_emb.embedding) * scale;
    let grad_lap = eigenvector_backward(&student_emb, &grad_emb);
    let grad_adj = laplacian_backward(&grad_lap, &adjacency);
    let rows = adjacency_backward(&grad_adj, student.channel_rows(), kind)?;
    Ok(GradientField {
        values: rows_to_map(rows, student.shape()),
        loss_at_point: loss,
        mode: GradientMode::Analytic,
    })
}

/// Eigenvalue-variant loss gradient; refuses repeated student eigenvalues.
pub fn grad_spectral_value<T: Real>(
    teacher_emb: &SpectralEmbedding<T>,
    student: &FeatureMap<T>,
    selection: EigenSelection,
    kind: AdjacencyKind,
) -> Result<GradientField<T>> {
    let adjacency = build_adjacency_with(student, kind).into_adjacency();
    let (_, student_emb) = spectral_embedding(adjacency.view(), teacher_emb.n_selected(), selection)?;
    let loss = spectral_value_loss_variant(&teacher_emb.eigenvalues, &student_emb.eigenvalues)?;
    let gap = min_adjacent_gap(&student_emb.eigenvalues);
    if gap < T::lit(DEGENERACY_GAP) {
        return Err(Error::DegenerateSpectrum {
            gap: gap.to_f64_lossy(),
        });
    }
    let c = student.channels();
    let scale = -T::lit(2.0) / T::count(c);
    let grad_vals = (&teacher_emb.eigenvalues - &student_emb.eigenvalues) * scale;
    let u = &student_emb.basis;
    let weighted = u * &grad_vals.view().insert_axis(ndarray::Axis(0));
    let grad_lap = weighted.dot(&u.t());
    let grad_adj = laplacian_backward(&grad_lap, &adjacency);
    let rows = adjacency_backward(&grad_adj, student.channel_rows(), kind)?;
    Ok(GradientField {
        values: rows_to_map(rows, student.shape()),
        loss_at_point: loss,
        mode: GradientMode::Analytic,
    })
}

/// First-order eigenvector perturbation: `U (F ∘ Uᵀ Ḡ) Uᵀ` with
/// `F_ba = 1/(λ_a − λ_b)`, restricted to the selected columns `a`.
fn eigenvector_backward<T: Real>(emb: &SpectralEmbedding<T>, grad_emb: &Array2<T>) -> Array2<T> {
    let u = &emb.basis;
    let lambda = &emb.eigenvalues;
    let c = lambda.len();
    let mut grad_u = Array2::zeros((c, c));
    for (j, (&a, &sign)) in emb.selected.iter().zip(emb.signs.iter()).enumerate() {
        grad_u.column_mut(a).assign(&grad_emb.column(j).mapv(|v| v * sign));
    }
    let projected = u.t().dot(&grad_u);
    let mut k = Array2::zeros((c, c));
    for &a in &emb.selected {
        for b in 0..c {
            if b != a {
                k[[b, a]] = projected[[b, a]] / (lambda[a] - lambda[b]);
            }
        }
    }
    u.dot(&k).dot(&u.t())
}

/// Pulls `∂/∂L` back to `∂/∂A` through `L = I − D^{-1/2} A D^{-1/2}` with
/// `D_ii = Σ_j A_ij`.
fn laplacian_backward<T: Real>(grad_lap: &Array2<T>, adjacency: &Array2<T>) -> Array2<T> {
    let c = adjacency.nrows();
    let inv_sqrt: Vec<T> = adjacency
        .rows()
        .into_iter()
        .map(|row| T::one() / row.sum().sqrt())
        .collect();
    let half = T::lit(0.5);
    let mut grad_adj = Array2::zeros((c, c));
    for i in 0..c {
        let mut r = T::zero();
        for j in 0..c {
            r += -(grad_lap[[i, j]] + grad_lap[[j, i]]) * adjacency[[i, j]] * inv_sqrt[j];
        }
        let ni = inv_sqrt[i];
        let degree_term = half * ni * ni * ni * r;
        for k in 0..c {
            grad_adj[[i, k]] = -grad_lap[[i, k]] * ni * inv_sqrt[k] - degree_term;
        }
    }
    grad_adj
}

/// Pulls `∂/∂A` back to the channel vectors `V` (`C x HW`).
pub fn adjacency_backward<T: Real>(
    grad_adj: &Array2<T>,
    vectors: ArrayView2<'_, T>,
    kind: AdjacencyKind,
) -> Result<Array2<T>> {
    let mut sym = grad_adj + &grad_adj.t();
    match kind {
        AdjacencyKind::UnnormalizedGram => Ok(sym.dot(&vectors)),
        AdjacencyKind::Cosine => {
            let (unit, norms) = normalized_rows(vectors);
            let eps = T::lit(ZERO_NORM_EPS);
            if let Some(index) = norms.iter().position(|n| *n < eps) {
                return Err(Error::DegenerateChannel { index });
            }
            // unit diagonal is constant
            sym.diag_mut().fill(T::zero());
            let mut grad = sym.dot(&unit);
            for ((mut g, u), &n) in grad.rows_mut().into_iter().zip(unit.rows()).zip(norms.iter()) {
                let radial = g.dot(&u);
                Zip::from(&mut g).and(&u).for_each(|g, &u| *g = (*g - radial * u) / n);
            }
            Ok(grad)
        }
    }
}

/// Central differences of `evaluator` around `student`; the step for entry
/// `x` is `step·max(1, |x|)`, `step` defaulting to [`FD_STEP`].
pub fn fd_gradient<T, F>(mut evaluator: F, student: &FeatureMap<T>, step: Option<T>) -> Result<GradientField<T>>
where
    T: Real,
    F: FnMut(&FeatureMap<T>) -> Result<T>,
{
    let step = step.unwrap_or_else(|| T::lit(FD_STEP));
    let loss_at_point = evaluator(student)?;
    let mut probe = student.clone();
    let mut values = Array3::zeros(student.shape());
    for (idx, g) in values.as_slice_mut().expect("standard layout").iter_mut().enumerate() {
        let x = student.as_slice()[idx];
        let h = step * x.abs().max(T::one());
        let (xp, xm) = (x + h, x - h);
        probe.as_mut_slice()[idx] = xp;
        let fp = evaluator(&probe)?;
        probe.as_mut_slice()[idx] = xm;
        let fm = evaluator(&probe)?;
        probe.as_mut_slice()[idx] = x;
        *g = (fp - fm) / (xp - xm);
    }
    Ok(GradientField {
        values,
        loss_at_point,
        mode: GradientMode::FiniteDifference,
    })
}

/// What to do with the spectral term when its analytic gradient is refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    /// Return the `DegenerateSpectrum` error.
    #[default]
    Error,
    /// Use central differences for that term.
    FiniteDifference,
    /// Leave the term out of the gradient.
    Drop,
}

/// Weighted gradient of `L_M` plus the report at the same point.
#[derive(Debug, Clone)]
pub struct MultiLevelGradient<T> {
    pub report: LossReport<T>,
    pub gradient: Array3<T>,
    /// `None` when the spectral term is disabled or was dropped.
    pub spectral_mode: Option<GradientMode>,
}

/// Analytic gradient of one spectral term (either variant).
pub fn grad_spectral_term<T: Real>(
    ctx: &TeacherContext<T>,
    student: &FeatureMap<T>,
    config: &LossConfig<T>,
) -> Result<GradientField<T>> {
    match config.variant {
        SpectralVariant::Eigenvector => grad_spectral(&ctx.spectrum, student, config.selection, config.adjacency),
        SpectralVariant::Eigenvalue => grad_spectral_value(&ctx.spectrum, student, config.selection, config.adjacency),
    }
}

fn spectral_only<T: Real>(ctx: &TeacherContext<T>, student: &FeatureMap<T>, config: &LossConfig<T>) -> Result<T> {
    let state = StudentState::new(student, ctx.n(), config)?;
    Ok(loss_from_state(ctx, student, &state, config)?.spectral)
}

pub fn multi_level_gradient<T: Real>(
    ctx: &TeacherContext<T>,
    student: &FeatureMap<T>,
    config: &LossConfig<T>,
    policy: DegeneratePolicy,
) -> Result<MultiLevelGradient<T>> {
    check_same_shape(&ctx.map, student)?;
    let state = StudentState::new(student, ctx.n(), config)?;
    let report = loss_from_state(ctx, student, &state, config)?;
    let w = &config.weights;
    let mut gradient = Array3::zeros(student.shape());
    if config.terms.vertex {
        let g = grad_vertex(
            &ctx.map,
            student,
            &ctx.masks,
            config.masks.spatial,
            config.masks.channel,
        )?;
        gradient.scaled_add(w.alpha, &g.values);
    }
    if config.terms.edge {
        let g = grad_edge(
            ctx.adjacency.view(),
            student,
            ctx.masks.relation.view(),
            config.masks.relation,
            config.adjacency,
        )?;
        gradient.scaled_add(w.beta, &g.values);
    }
    let mut spectral_mode = None;
    if config.terms.spectral {
        let g = match grad_spectral_term(ctx, student, config) {
            Ok(g) => Some(g),
            Err(Error::DegenerateSpectrum { gap }) => match policy {
                DegeneratePolicy::Error => return Err(Error::DegenerateSpectrum { gap }),
                DegeneratePolicy::Drop => None,
                DegeneratePolicy::FiniteDifference => {
                    Some(fd_gradient(|s| spectral_only(ctx, s, config), student, None)?)
                }
            },
            Err(e) => return Err(e),
        };
        if let Some(g) = g {
            gradient.scaled_add(w.gamma, &g.values);
            spectral_mode = Some(g.mode);
        }
    }
    Ok(MultiLevelGradient {
        report,
        gradient,
        spectral_mode,
    })
}

/// Per-term tolerances on the relative FD error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientTolerances {
    pub vertex: f64,
    pub edge: f64,
    pub spectral: f64,
}

impl Default for GradientTolerances {
    fn default() -> Self {
        Self {
            vertex: 1e-6,
            edge: 1e-5,
            spectral: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Vertex,
    Edge,
    Spectral,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TermCheck {
    Checked {
        max_rel_error: f64,
        analytic_max: f64,
        fd_max: f64,
    },
    Skipped {
        reason: String,
    },
}

impl TermCheck {
    pub fn within(&self, tolerance: f64) -> bool {
        match self {
            TermCheck::Checked { max_rel_error, .. } => *max_rel_error <= tolerance,
            TermCheck::Skipped { .. } => true,
        }
    }

    pub fn rel_error(&self) -> Option<f64> {
        match self {
            TermCheck::Checked { max_rel_error, .. } => Some(*max_rel_error),
            TermCheck::Skipped { .. } => None,
        }
    }

    pub fn is_skipped(&self) -> bool {
        matches!(self, TermCheck::Skipped { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub vertex: TermCheck,
    pub edge: TermCheck,
    pub spectral: TermCheck,
}

impl GradientCheckReport {
    pub fn passes(&self, tol: &GradientTolerances) -> bool {
        self.vertex.within(tol.vertex) && self.edge.within(tol.edge) && self.spectral.within(tol.spectral)
    }
}

/// `‖a − f‖∞ / max(‖f‖∞, 1e-12)`, or 0 when both gradients vanish.
pub fn relative_error<T: Real>(analytic: &Array3<T>, fd: &Array3<T>) -> f64 {
    let (a_max, f_max) = (max_abs(analytic).to_f64_lossy(), max_abs(fd).to_f64_lossy());
    if a_max <= VANISHING_GRADIENT && f_max <= VANISHING_GRADIENT {
        return 0.0;
    }
    let diff = Zip::from(analytic)
        .and(fd)
        .fold(T::zero(), |m, &a, &f| m.max((a - f).abs()));
    diff.to_f64_lossy() / f_max.max(REL_ERROR_FLOOR)
}

/// Certifies all three analytic gradients against central differences.
pub fn check_gradients<T: Real>(
    teacher: &FeatureMap<T>,
    student: &FeatureMap<T>,
    config: &LossConfig<T>,
) -> Result<GradientCheckReport> {
    check_gradients_with(teacher, student, config, None, |_, _| {})
}

/// As [`check_gradients`], with an FD step override and a hook that may
/// alter each analytic gradient before comparison.
pub fn check_gradients_with<T, H>(
    teacher: &FeatureMap<T>,
    student: &FeatureMap<T>,
    config: &LossConfig<T>,
    fd_step: Option<T>,
    mut tamper: H,
) -> Result<GradientCheckReport>
where
    T: Real,
    H: FnMut(Term, &mut Array3<T>),
{
    check_same_shape(teacher, student)?;
    let ctx = TeacherContext::new(teacher, config)?;
    let masks = config.masks;

    let mut compare = |term: Term,
                       analytic: Result<GradientField<T>>,
                       fd: &mut dyn FnMut() -> Result<GradientField<T>>|
     -> Result<TermCheck> {
        let mut analytic = match analytic {
            Ok(g) => g.values,
            Err(Error::DegenerateSpectrum { gap }) => {
                return Ok(TermCheck::Skipped {
                    reason: format!("degenerate spectrum (gap {gap:e})"),
                })
            }
            Err(Error::DegenerateChannel { index }) => {
                return Ok(TermCheck::Skipped {
                    reason: format!("zero-norm student channel {index}"),
                })
            }
            Err(e) => return Err(e),
        };
        tamper(term, &mut analytic);
        let fd = fd()?.values;
        Ok(TermCheck::Checked {
            max_rel_error: relative_error(&analytic, &fd),
            analytic_max: max_abs(&analytic).to_f64_lossy(),
            fd_max: max_abs(&fd).to_f64_lossy(),
        })
    };

    let vertex = compare(
        Term::Vertex,
        grad_vertex(teacher, student, &ctx.masks, masks.spatial, masks.channel),
        &mut || {
            fd_gradient(
                |s| vertex_loss(teacher, s, &ctx.masks, masks.spatial, masks.channel),
                student,
                fd_step,
            )
        },
    )?;
    let edge = compare(
        Term::Edge,
        grad_edge(
            ctx.adjacency.view(),
            student,
            ctx.masks.relation.view(),
            masks.relation,
            config.adjacency,
        ),
        &mut || {
            fd_gradient(
                |s| {
                    let a = build_adjacency_with(s, config.adjacency).into_adjacency();
                    edge_loss(
                        ctx.adjacency.view(),
                        a.view(),
                        ctx.masks.relation.view(),
                        masks.relation,
                    )
                },
                student,
                fd_step,
            )
        },
    )?;
    let spectral = compare(Term::Spectral, grad_spectral_term(&ctx, student, config), &mut || {
        fd_gradient(|s| spectral_only(&ctx, s, config), student, fd_step)
    })?;
    Ok(GradientCheckReport { vertex, edge, spectral })
}
