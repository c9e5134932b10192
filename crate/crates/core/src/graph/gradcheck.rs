//! Gradient verification by central finite differences.

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::params::{BoundParams, ParamSet};

/// Test hook: mutate the analytic gradient of the named parameter before
/// comparison, so a deliberately wrong gradient is reported as a failure.
pub type GradTamper<'a> = dyn Fn(&str, &mut [f64]) + 'a;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked_elements: usize,
    pub tol: f64,
    pub worst_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_fd: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} elements, tol {:.1e}): worst rel err {:.3e} at {}[{}] (analytic {:.6e}, fd {:.6e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.checked_elements,
            self.tol,
            self.worst_rel_err,
            self.worst_param,
            self.worst_index,
            self.worst_analytic,
            self.worst_fd,
        )
    }
}

fn eval<F>(params: &ParamSet, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let loss = f(&mut g, &bound)?;
    if g.value(loss).numel() != 1 {
        return Err(CoreError::InvalidArgument(
            "grad_check: computation must produce a scalar".into(),
        ));
    }
    Ok(g.value(loss).data()[0])
}

/// Compare the analytic gradient of `f` against `(f(t+eps) - f(t-eps)) / 2eps`
/// for every element of every parameter.
///
/// Relative error is `|a - fd| / max(|a|, |fd|, 1)`, so tiny gradients are
/// compared absolutely. The computation is run twice first; differing bits
/// mean it is not deterministic and the check refuses to proceed.
pub fn grad_check<F>(params: &mut ParamSet, eps: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<Var>,
{
    grad_check_with_tamper(params, eps, tol, f, None)
}

pub fn grad_check_with_tamper<F>(
    params: &mut ParamSet,
    eps: f64,
    tol: f64,
    f: F,
    tamper: Option<&GradTamper>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<Var>,
{
    if eps <= 0.0 || tol <= 0.0 {
        return Err(CoreError::InvalidArgument(
            "grad_check: eps and tol must be positive".into(),
        ));
    }

    let first = eval(params, &f)?;
    let second = eval(params, &f)?;
    if first.to_bits() != second.to_bits() {
        return Err(CoreError::NonDeterministic(format!(
            "forward produced {first} then {second}"
        )));
    }

    // Analytic gradients, one backward pass.
    let mut analytic: Vec<Vec<f64>> = Vec::with_capacity(params.len());
    {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let loss = f(&mut g, &bound)?;
        g.backward(loss)?;
        for (i, var) in bound.vars().iter().enumerate() {
            let n = params.entry(i).value.numel();
            analytic.push(match g.grad(*var) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; n],
            });
        }
    }
    if let Some(tamper) = tamper {
        for (i, grads) in analytic.iter_mut().enumerate() {
            tamper(&params.entry(i).name, grads);
        }
    }

    let mut report = GradCheckReport {
        checked_elements: 0,
        tol,
        worst_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_fd: 0.0,
        passed: true,
    };

    for pi in 0..params.len() {
        let numel = params.entry(pi).value.numel();
        for ei in 0..numel {
            params.nudge(pi, ei, eps);
            let plus = eval(params, &f)?;
            params.nudge(pi, ei, -2.0 * eps);
            let minus = eval(params, &f)?;
            params.nudge(pi, ei, eps);
            let fd = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][ei];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            report.checked_elements += 1;
            if rel > report.worst_rel_err {
                report.worst_rel_err = rel;
                report.worst_param = params.entry(pi).name.clone();
                report.worst_index = ei;
                report.worst_analytic = a;
                report.worst_fd = fd;
            }
        }
    }
    report.passed = report.worst_rel_err <= tol;
    Ok(report)
}
