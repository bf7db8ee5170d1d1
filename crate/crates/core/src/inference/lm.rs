//! Damped least squares with gain-ratio damping updates and diagonal scaling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iter: usize,
    /// Relative scaled step size below which the iteration stops.
    pub xtol: f64,
    /// Largest cosine between the residual and any Jacobian column.
    pub gtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            xtol: 1e-8,
            gtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub x: DVector<f64>,
    /// Sum of squared residuals at `x`.
    pub cost: f64,
    pub jacobian: DMatrix<f64>,
    pub converged: bool,
    pub n_iter: usize,
}

fn gradient_cosine(jtj: &DMatrix<f64>, g: &DVector<f64>, cost: f64) -> f64 {
    if cost == 0.0 {
        return 0.0;
    }
    (0..g.len())
        .map(|j| {
            let norm = jtj[(j, j)].sqrt();
            if norm > 0.0 {
                g[j].abs() / (norm * cost.sqrt())
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Minimizes `‖r(x)‖²`. `eval` returns residuals and Jacobian, or `None` when
/// `x` is outside the model's domain; such trial steps are rejected.
pub(crate) fn levenberg_marquardt<F>(x0: DVector<f64>, mut eval: F, opts: LmOptions) -> Result<LmOutcome>
where
    F: FnMut(&DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)>,
{
    let (mut r, mut jac) =
        eval(&x0).ok_or_else(|| Error::DegenerateFit("initial parameters are outside the model domain".into()))?;
    let mut x = x0;
    let mut cost = r.norm_squared();
    let mut jtj = jac.tr_mul(&jac);
    let mut g = jac.tr_mul(&r);
    let mut scale: DVector<f64> = jtj.diagonal();
    let floor = 1e-30 * scale.max().max(1e-300);
    scale.apply(|d| *d = d.max(floor));

    if gradient_cosine(&jtj, &g, cost) <= opts.gtol {
        return Ok(LmOutcome {
            x,
            cost,
            jacobian: jac,
            converged: true,
            n_iter: 0,
        });
    }

    let mut mu = 1e-3 * scale.max();
    let mut nu = 2.0;
    let mut converged = false;
    let mut iter = 0;
    while iter < opts.max_iter {
        iter += 1;
        let mut lhs = jtj.clone();
        for j in 0..x.len() {
            lhs[(j, j)] += mu * scale[j];
        }
        let Some(chol) = lhs.cholesky() else {
            mu *= nu;
            nu *= 2.0;
            continue;
        };
        let step = chol.solve(&(-&g));
        let step_norm = step.component_mul(&scale.map(f64::sqrt)).norm();
        let x_norm = x.component_mul(&scale.map(f64::sqrt)).norm();
        let small = step_norm <= opts.xtol * (x_norm + opts.xtol);
        let trial = &x + &step;
        let accepted = match eval(&trial) {
            Some((r_new, j_new)) => {
                let cost_new = r_new.norm_squared();
                let predicted = -2.0 * step.dot(&g) - step.dot(&(&jtj * &step));
                let rho = if predicted > 0.0 {
                    (cost - cost_new) / predicted
                } else {
                    -1.0
                };
                if rho > 0.0 && cost_new.is_finite() {
                    x = trial;
                    r = r_new;
                    jac = j_new;
                    cost = cost_new;
                    jtj = jac.tr_mul(&jac);
                    g = jac.tr_mul(&r);
                    for j in 0..x.len() {
                        scale[j] = scale[j].max(jtj[(j, j)]);
                    }
                    mu *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                    nu = 2.0;
                    true
                } else {
                    false
                }
            }
            None => false,
        };
        if small {
            // the final short step is still taken when it lowers the cost
            converged = true;
            break;
        }
        if accepted {
            if gradient_cosine(&jtj, &g, cost) <= opts.gtol {
                converged = true;
                break;
            }
        } else {
            mu *= nu;
            nu *= 2.0;
            if !mu.is_finite() {
                break;
            }
        }
    }
    Ok(LmOutcome {
        x,
        cost,
        jacobian: jac,
        converged,
        n_iter: iter,
    })
}

/// `s²·(JᵀJ)⁻¹` with `s² = cost/(n - p)`. Fails on a numerically singular
/// normal matrix.
pub(crate) fn covariance(jacobian: &DMatrix<f64>, cost: f64) -> Result<DMatrix<f64>> {
    let (n, p) = jacobian.shape();
    if n <= p {
        return Err(Error::DegenerateFit(format!("{n} residuals for {p} parameters")));
    }
    let jtj = jacobian.tr_mul(jacobian);
    let d: DVector<f64> = jtj.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    if d.iter().any(|&v| v == 0.0) {
        return Err(Error::DegenerateFit("a parameter has no influence on the residuals".into()));
    }
    // unit-diagonal form so the conditioning test is scale free
    let scaled = DMatrix::from_fn(p, p, |i, j| jtj[(i, j)] * d[i] * d[j]);
    let eig = scaled.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(lo > 1e-12 * hi) {
        return Err(Error::DegenerateFit(format!(
            "normal matrix is singular (condition number {:.3e})",
            hi / lo.max(0.0)
        )));
    }
    let inv = scaled
        .cholesky()
        .ok_or_else(|| Error::DegenerateFit("normal matrix is not positive definite".into()))?
        .inverse();
    let s2 = cost / (n - p) as f64;
    Ok(DMatrix::from_fn(p, p, |i, j| s2 * inv[(i, j)] * d[i] * d[j]))
}
