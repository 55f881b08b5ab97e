//! The four subcommands. Each returns a serializable report plus the exit status.

use std::path::{Path, PathBuf};

use crg_distill::crg::build_adjacency_with;
use crg_distill::gradients::{check_gradients_with, GradientTolerances, Term, TermCheck};
use crg_distill::losses::{apply_adapter, multi_level_loss, LossReport};
use crg_distill::simulate::{gradient_descent, DescentConfig};
use crg_distill::spectral::spectral_embedding;
use crg_distill::tensor_io::{load_feature_maps, load_matrix};
use crg_distill::{ChannelAdapter, Error, FeatureMap, FeatureMapBatch, TeacherContext};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Diverged(String),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Output { .. } => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } => CliError::Diverged(e.to_string()),
            e => CliError::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn annotate(path: &Path, e: Error) -> CliError {
    match e {
        Error::Io { .. } => CliError::Input(e.to_string()),
        e => CliError::Input(format!("{}: {e}", path.display())),
    }
}

fn sample_error(teacher: &Path, student: &Path, index: usize, e: Error) -> CliError {
    CliError::Input(format!(
        "{} / {} sample {index}: {e}",
        teacher.display(),
        student.display()
    ))
}

fn load(path: &Path) -> CliResult<FeatureMapBatch<f64>> {
    load_feature_maps(path).map_err(|e| annotate(path, e))
}

fn load_adapter(config: &RunConfig) -> CliResult<Option<ChannelAdapter<f64>>> {
    let Some(path) = &config.adapter else {
        return Ok(None);
    };
    let weights = load_matrix(path).map_err(|e| annotate(path, e))?;
    ChannelAdapter::new(weights, None)
        .map(Some)
        .map_err(|e| annotate(path, e))
}

fn load_pair(teacher: &Path, student: &Path, config: &RunConfig) -> CliResult<Vec<(FeatureMap<f64>, FeatureMap<f64>)>> {
    let t = load(teacher)?;
    let s = load(student)?;
    let adapter = load_adapter(config)?;
    if t.len() != s.len() {
        return Err(CliError::Input(format!(
            "{}: batch of {} does not match teacher batch of {} in {}",
            student.display(),
            s.len(),
            t.len(),
            teacher.display()
        )));
    }
    let students = match &adapter {
        Some(a) => s
            .samples()
            .iter()
            .map(|m| apply_adapter(m, a))
            .collect::<crg_distill::Result<Vec<_>>>()
            .map_err(|e| annotate(student, e))?,
        None => s.into_samples(),
    };
    if students[0].shape() != t.map_shape() {
        return Err(CliError::Input(format!(
            "{}: student shape {:?} does not match teacher shape {:?} in {}",
            student.display(),
            students[0].shape(),
            t.map_shape(),
            teacher.display()
        )));
    }
    Ok(t.into_samples().into_iter().zip(students).collect())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Terms {
    pub vertex: f64,
    pub edge: f64,
    pub spectral: f64,
    pub multi_level: f64,
}

impl From<&LossReport<f64>> for Terms {
    fn from(r: &LossReport<f64>) -> Self {
        Self {
            vertex: r.vertex,
            edge: r.edge,
            spectral: r.spectral,
            multi_level: r.multi_level,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SampleLoss {
    #[serde(flatten)]
    pub terms: Terms,
    pub spectral_degenerate: bool,
}

#[derive(Debug, Serialize)]
pub struct LossOutput {
    pub per_sample: Vec<SampleLoss>,
    pub mean: Terms,
    pub config_echo: RunConfig,
}

pub fn cmd_loss(teacher: &Path, student: &Path, config: &RunConfig) -> CliResult<LossOutput> {
    let loss_config = config.loss_config()?;
    let pairs = load_pair(teacher, student, config)?;
    let reports: Vec<LossReport<f64>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (t, s))| multi_level_loss(t, s, &loss_config).map_err(|e| sample_error(teacher, student, i, e)))
        .collect::<CliResult<_>>()?;

    let mut sum = LossReport::zero();
    for r in &reports {
        sum.accumulate(r);
    }
    let mean = sum.scaled(1.0 / reports.len() as f64);
    Ok(LossOutput {
        per_sample: reports
            .iter()
            .map(|r| SampleLoss {
                terms: r.into(),
                spectral_degenerate: r.spectral_degenerate,
            })
            .collect(),
        mean: (&mean).into(),
        config_echo: config.clone(),
    })
}

#[derive(Debug, Serialize)]
pub struct SampleSpectrum {
    /// All Laplacian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// `C × N`, one row per channel.
    pub embedding: Vec<Vec<f64>>,
    pub selected_eigenvalues: Vec<f64>,
    pub min_gap: f64,
    pub degeneracy_flag: bool,
}

#[derive(Debug, Serialize)]
pub struct SpectrumOutput {
    pub per_sample: Vec<SampleSpectrum>,
    pub config_echo: RunConfig,
}

pub fn cmd_spectrum(input: &Path, config: &RunConfig) -> CliResult<SpectrumOutput> {
    let loss_config = config.loss_config()?;
    let batch = load(input)?;
    let per_sample = batch
        .samples()
        .par_iter()
        .map(|map| {
            let n = loss_config.n.resolve(map.channels());
            let adjacency = build_adjacency_with(map, loss_config.adjacency).into_adjacency();
            let (_, emb) = spectral_embedding(adjacency.view(), n, loss_config.selection)?;
            Ok(SampleSpectrum {
                eigenvalues: emb.eigenvalues.to_vec(),
                embedding: emb.embedding.rows().into_iter().map(|r| r.to_vec()).collect(),
                selected_eigenvalues: emb.selected.iter().map(|&i| emb.eigenvalues[i]).collect(),
                min_gap: emb.min_gap,
                degeneracy_flag: emb.degenerate,
            })
        })
        .collect::<crg_distill::Result<_>>()
        .map_err(|e| annotate(input, e))?;
    Ok(SpectrumOutput {
        per_sample,
        config_echo: config.clone(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TermResult {
    pub status: &'static str,
    pub max_rel_error: Option<f64>,
    pub analytic_max: Option<f64>,
    pub fd_max: Option<f64>,
    pub reason: Option<String>,
}

impl From<&TermCheck> for TermResult {
    fn from(c: &TermCheck) -> Self {
        match c {
            TermCheck::Checked {
                max_rel_error,
                analytic_max,
                fd_max,
            } => Self {
                status: "checked",
                max_rel_error: Some(*max_rel_error),
                analytic_max: Some(*analytic_max),
                fd_max: Some(*fd_max),
                reason: None,
            },
            TermCheck::Skipped { reason } => Self {
                status: "skipped",
                max_rel_error: None,
                analytic_max: None,
                fd_max: None,
                reason: Some(reason.clone()),
            },
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SampleCheck {
    pub vertex: TermResult,
    pub edge: TermResult,
    pub spectral: TermResult,
}

#[derive(Debug, Serialize)]
pub struct TermErrors {
    pub vertex: Option<f64>,
    pub edge: Option<f64>,
    pub spectral: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CheckOutput {
    pub per_sample: Vec<SampleCheck>,
    /// Worst error per term over the checked samples; `null` if every sample skipped it.
    pub max_rel_error: TermErrors,
    pub tolerances: TermErrors,
    pub certified: bool,
    pub config_echo: RunConfig,
}

pub fn cmd_check(teacher: &Path, student: &Path, config: &RunConfig, corrupt: bool) -> CliResult<CheckOutput> {
    let loss_config = config.loss_config()?;
    let pairs = load_pair(teacher, student, config)?;
    let tol = GradientTolerances::default();
    let reports = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (t, s))| {
            check_gradients_with(t, s, &loss_config, None, |_: Term, g: &mut ndarray::Array3<f64>| {
                if corrupt {
                    let bump = 1.0 + g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    g[[0, 0, 0]] += bump;
                }
            })
            .map_err(|e| sample_error(teacher, student, i, e))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let worst = |pick: fn(&crg_distill::GradientCheckReport) -> &TermCheck| {
        reports
            .iter()
            .filter_map(|r| pick(r).rel_error())
            .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))))
    };
    let max_rel_error = TermErrors {
        vertex: worst(|r| &r.vertex),
        edge: worst(|r| &r.edge),
        spectral: worst(|r| &r.spectral),
    };
    let within = |e: Option<f64>, t: f64| e.is_some_and(|e| e <= t);
    let certified = within(max_rel_error.vertex, tol.vertex)
        && within(max_rel_error.edge, tol.edge)
        && within(max_rel_error.spectral, tol.spectral);

    Ok(CheckOutput {
        per_sample: reports
            .iter()
            .map(|r| SampleCheck {
                vertex: (&r.vertex).into(),
                edge: (&r.edge).into(),
                spectral: (&r.spectral).into(),
            })
            .collect(),
        max_rel_error,
        tolerances: TermErrors {
            vertex: Some(tol.vertex),
            edge: Some(tol.edge),
            spectral: Some(tol.spectral),
        },
        certified,
        config_echo: config.clone(),
    })
}

#[derive(Debug, Serialize)]
pub struct SampleTrajectory {
    pub trajectory: Vec<f64>,
    pub initial: Terms,
    #[serde(rename = "final")]
    pub last: Terms,
    pub fd_fallback_steps: usize,
}

#[derive(Debug, Serialize)]
pub struct SimOutput {
    pub steps: usize,
    pub lr: f64,
    pub per_sample: Vec<SampleTrajectory>,
    pub config_echo: RunConfig,
}

/// Unit-normal student of the given shape, drawn from the run seed.
pub fn initial_student(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> crg_distill::Result<FeatureMap<f64>> {
    let values = (0..shape.0 * shape.1 * shape.2)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    FeatureMap::from_vec(shape, values)
}

pub fn cmd_distill_sim(teacher: &Path, config: &RunConfig, steps: usize, lr: f64) -> CliResult<SimOutput> {
    if !lr.is_finite() || lr <= 0.0 {
        return Err(CliError::Input(format!(
            "learning rate {lr} must be finite and positive"
        )));
    }
    let loss_config = config.loss_config()?;
    let batch = load(teacher)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let students = batch
        .samples()
        .iter()
        .map(|t| initial_student(&mut rng, t.shape()))
        .collect::<crg_distill::Result<Vec<_>>>()?;

    let descent = DescentConfig {
        steps,
        learning_rate: lr,
    };
    let per_sample = batch
        .samples()
        .par_iter()
        .zip(students.par_iter())
        .map(|(t, s)| {
            let ctx = TeacherContext::new(t, &loss_config).map_err(|e| annotate(teacher, e))?;
            let traj = gradient_descent(&ctx, s, &loss_config, descent)?;
            Ok(SampleTrajectory {
                trajectory: traj.multi_level,
                initial: (&traj.initial).into(),
                last: (&traj.last).into(),
                fd_fallback_steps: traj.fd_fallback_steps,
            })
        })
        .collect::<CliResult<_>>()?;
    Ok(SimOutput {
        steps,
        lr,
        per_sample,
        config_echo: config.clone(),
    })
}
