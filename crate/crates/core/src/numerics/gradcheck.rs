//! Finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::ParamSet;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

/// Compare analytic gradients against central differences.
///
/// `run(params, with_grad)` must evaluate the loss; when `with_grad` is true
/// it must also accumulate gradients into the parameter set. Per parameter,
/// up to `samples_per_param` entries are checked (a seeded subsample for
/// large tensors). The relative error of an entry is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(
    params: &mut ParamSet,
    mut run: impl FnMut(&mut ParamSet, bool) -> Result<f64>,
    epsilon: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    params.zero_grads();
    run(params, true)?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_error: f64 = 0.0;
    let mut entries_checked = 0;

    for (pi, param_grads) in analytic.iter().enumerate() {
        let len = params.get(pi).value.len();
        let mut indices: Vec<usize> = (0..len).collect();
        if len > samples_per_param {
            indices.shuffle(&mut rng);
            indices.truncate(samples_per_param);
            indices.sort_unstable();
        }
        for idx in indices {
            let orig = params.get(pi).value.data()[idx];
            params.get_mut(pi).value.data_mut()[idx] = orig + epsilon;
            let f_plus = run(params, false)?;
            params.get_mut(pi).value.data_mut()[idx] = orig - epsilon;
            let f_minus = run(params, false)?;
            params.get_mut(pi).value.data_mut()[idx] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let a = param_grads[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel_error {
                max_rel_error = rel;
            }
            entries_checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_rel_error,
        entries_checked,
    })
}
