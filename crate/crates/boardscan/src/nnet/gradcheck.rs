//! Central finite-difference verification of analytic gradients.
//!
//! The checker is generic over the objective: callers provide a closure
//! that evaluates the loss for a perturbed parameter arena. The closure
//! receives the group being perturbed so it can skip recomputing stages
//! upstream of that parameter.

use super::net::ParamGroup;

pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error with an absolute floor, symmetric in its arguments.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare `grads` against central differences of `eval` for every
/// parameter in every group.
///
/// `eval(params, group_idx)` must return the loss for the given arena; the
/// arena differs from the original in at most one entry of `groups[group_idx]`.
pub fn fd_check(
    params: &[f64],
    grads: &[f64],
    groups: &[ParamGroup],
    eval: impl FnMut(&[f64], usize) -> f64,
) -> FdReport {
    fd_check_strided(params, grads, groups, 1, eval)
}

/// Like [`fd_check`] but probing every `stride`-th parameter of each group;
/// unit tests use this to keep runtimes reasonable, the acceptance suite
/// runs stride 1.
pub fn fd_check_strided(
    params: &[f64],
    grads: &[f64],
    groups: &[ParamGroup],
    stride: usize,
    eval: impl FnMut(&[f64], usize) -> f64,
) -> FdReport {
    fd_check_with(params, grads, groups, stride, FD_STEP, eval)
}

/// Difference scheme: two-point central (error O(h^2)) or four-point
/// central (error O(h^4), twice the evaluations).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdScheme {
    Central2,
    Central4,
}

pub fn fd_check_with(
    params: &[f64],
    grads: &[f64],
    groups: &[ParamGroup],
    stride: usize,
    step: f64,
    eval: impl FnMut(&[f64], usize) -> f64,
) -> FdReport {
    fd_check_scheme(params, grads, groups, stride, step, FdScheme::Central2, eval)
}

pub fn fd_check_scheme(
    params: &[f64],
    grads: &[f64],
    groups: &[ParamGroup],
    stride: usize,
    step: f64,
    scheme: FdScheme,
    mut eval: impl FnMut(&[f64], usize) -> f64,
) -> FdReport {
    let mut work = params.to_vec();
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for (gi, group) in groups.iter().enumerate() {
        for i in (group.offset..group.offset + group.len).step_by(stride) {
            let orig = work[i];
            let mut at = |delta: f64, work: &mut Vec<f64>| {
                work[i] = orig + delta;
                eval(work, gi)
            };
            let numeric = match scheme {
                FdScheme::Central2 => {
                    (at(step, &mut work) - at(-step, &mut work)) / (2.0 * step)
                }
                FdScheme::Central4 => {
                    (-at(2.0 * step, &mut work) + 8.0 * at(step, &mut work)
                        - 8.0 * at(-step, &mut work)
                        + at(-2.0 * step, &mut work))
                        / (12.0 * step)
                }
            };
            work[i] = orig;
            let err = rel_err(grads[i], numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = group.name.clone();
                report.worst_index = i - group.offset;
            }
        }
    }
    report
}
