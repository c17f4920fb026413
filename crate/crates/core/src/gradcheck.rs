//! Central finite-difference oracle for the hand-written backward pass.
//!
//! The numeric side only ever evaluates loss *values* through
//! [`forward`] and the loss function; it never touches [`backward`].

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::LossOutput;
use crate::model::{backward, forward, ForwardTrace, Model};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates with `|fd| <= fd_floor` are not compared: below it the
    /// round-off in the difference quotient (~1e-11) dominates the ratio.
    pub fd_floor: f64,
    /// Negates `∂L/∂f` from the feature-norm pathway before backprop.
    /// Only used to confirm that the check catches a sign error.
    pub flip_feature_gradient: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, fd_floor: 1e-6, flip_feature_gradient: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub compared: usize,
    pub skipped: usize,
    /// `(tensor index, flat offset)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares analytic parameter gradients of `loss_fn` against central
/// differences on every coordinate of `model`.
pub fn check_gradients<F>(
    model: &Model,
    x: ArrayView2<'_, f64>,
    loss_fn: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&ForwardTrace) -> Result<LossOutput>,
{
    let trace = forward(model, x)?;
    let out = loss_fn(&trace)?;
    let extra = out.dl_df_extra.map(|e| if cfg.flip_feature_gradient { -e } else { e });
    let grads = backward(model, &trace, &out.dl_dz, extra.as_ref())?;

    let loss_at = |m: &Model| -> Result<f64> { Ok(loss_fn(&forward(m, x)?)?.loss) };

    let mut report = GradCheckReport { max_rel_error: 0.0, compared: 0, skipped: 0, worst: None };
    let mut probe = model.clone();
    for (tensor, analytic) in grads.params().iter().enumerate() {
        for (k, &a) in analytic.iter().enumerate() {
            let orig = probe.params()[tensor][k];
            probe.params_mut()[tensor][k] = orig + cfg.step;
            let up = loss_at(&probe)?;
            probe.params_mut()[tensor][k] = orig - cfg.step;
            let down = loss_at(&probe)?;
            probe.params_mut()[tensor][k] = orig;

            let fd = (up - down) / (2.0 * cfg.step);
            if fd.abs() <= cfg.fd_floor {
                report.skipped += 1;
                continue;
            }
            report.compared += 1;
            let err = relative_error(a, fd);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((tensor, k));
            }
        }
    }
    Ok(report)
}
