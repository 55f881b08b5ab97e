//! Plain gradient descent on a raw student tensor against a fixed teacher.

use crate::error::{Error, Result};
use crate::gradients::{multi_level_gradient, DegeneratePolicy, GradientMode};
use crate::losses::{LossConfig, LossReport, TeacherContext};
use crate::scalar::Real;
use crate::tensor_io::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig<T> {
    pub steps: usize,
    pub learning_rate: T,
}

#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    /// `L_M` before each step and after the last one (`steps + 1` entries).
    pub multi_level: Vec<T>,
    pub initial: LossReport<T>,
    pub last: LossReport<T>,
    /// Steps whose spectral gradient came from finite differences.
    pub fd_fallback_steps: usize,
    pub student: FeatureMap<T>,
}

/// Runs `steps` updates `S ← S − lr·∇L_M`. Degenerate spectra fall back to
/// finite differences for that step. Fails with `Diverged` on a non-finite
/// loss or gradient, including a student adjacency whose degree leaves the
/// positive range (the normalized Laplacian is undefined there).
pub fn gradient_descent<T: Real>(
    ctx: &TeacherContext<T>,
    initial_student: &FeatureMap<T>,
    config: &LossConfig<T>,
    descent: DescentConfig<T>,
) -> Result<Trajectory<T>> {
    let mut student = initial_student.clone();
    let mut multi_level = Vec::with_capacity(descent.steps + 1);
    let mut fd_fallback_steps = 0;
    let mut initial = None;

    for step in 0..=descent.steps {
        let out = match multi_level_gradient(ctx, &student, config, DegeneratePolicy::FiniteDifference) {
            Ok(out) => out,
            Err(e @ Error::NonPositiveDegree { .. }) => {
                return Err(Error::Diverged {
                    step,
                    reason: format!("student {e}"),
                })
            }
            Err(e) => return Err(e),
        };
        let loss = out.report.multi_level;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: "non-finite loss".into(),
            });
        }
        multi_level.push(loss);
        initial.get_or_insert(out.report);
        if step == descent.steps {
            return Ok(Trajectory {
                multi_level,
                initial: initial.expect("set on the first step"),
                last: out.report,
                fd_fallback_steps,
                student,
            });
        }
        if out.spectral_mode == Some(GradientMode::FiniteDifference) {
            fd_fallback_steps += 1;
        }
        if out.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                reason: "non-finite gradient".into(),
            });
        }
        let mut data = student.into_array();
        data.scaled_add(-descent.learning_rate, &out.gradient);
        student = FeatureMap::new(data)?.with_precision(initial_student.precision());
    }
    unreachable!("loop returns on the final step")
}
