use rand::seq::index::sample;
use rand::Rng;

use super::ParameterStore;
use crate::error::{Result, StarError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Coordinates sampled per parameter (all of them when smaller).
    pub samples_per_param: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is zero are judged by absolute error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            samples_per_param: 200,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

impl GradCheckReport {
    /// Turns the report into an error when `max_rel_error > tolerance`.
    pub fn ensure(&self, tolerance: f64) -> Result<()> {
        if self.max_rel_error > tolerance {
            return Err(StarError::GradientCheck {
                name: self.worst_param.clone(),
                index: self.worst_index,
                error: self.max_rel_error,
            });
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradients stored in `store` against central
/// differences of `f`.
pub fn finite_difference_check<F, R>(
    store: &mut ParameterStore,
    mut f: F,
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> GradCheckReport
where
    F: FnMut(&ParameterStore) -> f64,
    R: Rng + ?Sized,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    for pi in 0..store.len() {
        let id = super::ParamId(pi);
        let len = store.get(id).value.len();
        let picks = sample(rng, len, cfg.samples_per_param.min(len)).into_vec();
        for idx in picks {
            let orig = store.get(id).value.data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + cfg.epsilon;
            let plus = f(store);
            store.get_mut(id).value.data_mut()[idx] = orig - cfg.epsilon;
            let minus = f(store);
            store.get_mut(id).value.data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let analytic = store.get(id).grad.data()[idx];
            let err = relative_error(analytic, numeric, cfg.floor);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = idx;
            }
        }
    }
    report
}
