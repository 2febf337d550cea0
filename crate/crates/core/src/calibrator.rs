//! Levenberg-Marquardt calibration of [`HestonParams`] to a [`QuoteChain`].
//!
//! The residual is model price minus market price for every quote and the
//! objective is `f = ½‖r‖²`. Each iteration solves the damped normal
//! equations `(JJᵀ + μI)Δθ = -Jr` on the 5×5 system and accepts the trial
//! point when both the predicted and the actual reduction are positive.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix5, Vector5};

use crate::charfn::{HestonParams, Param};
use crate::error::{HestonError, Result};
use crate::gradient::jacobian;
use crate::pricer::{price_chain, QuoteChain};
use crate::quadrature::QuadratureRule;

/// Smallest value accepted for variances, `kappa` and `sigma` on a trial step.
pub const DOMAIN_FLOOR: f64 = 1e-8;
/// Largest `|rho|` accepted on a trial step.
pub const RHO_LIMIT: f64 = 0.999;
/// Attempts to factorise the normal equations before giving up.
const MAX_FACTORIZATION_RETRIES: usize = 60;

/// Closed per-parameter intervals in `[v0, v̄, ρ, κ, σ]` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    lower: [f64; 5],
    upper: [f64; 5],
}

impl Bounds {
    pub fn new(lower: [f64; 5], upper: [f64; 5]) -> Result<Self> {
        for i in 0..5 {
            if !(upper[i] > lower[i]) || !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(HestonError::domain(format!(
                    "bounds for {} must have positive width, got [{}, {}]",
                    Param::ALL[i].name(),
                    lower[i],
                    upper[i]
                )));
            }
        }
        let b = Bounds { lower, upper };
        // Every corner must be a valid parameter set.
        HestonParams::from_array(lower)?;
        HestonParams::from_array(upper)?;
        Ok(b)
    }

    /// The sampling ranges used for randomised validation.
    pub fn standard() -> Self {
        Bounds {
            lower: [0.05, 0.05, -0.9, 0.5, 0.05],
            upper: [0.95, 0.95, -0.1, 5.0, 0.95],
        }
    }

    pub fn lower(&self) -> [f64; 5] {
        self.lower
    }

    pub fn upper(&self) -> [f64; 5] {
        self.upper
    }

    pub fn contains(&self, theta: &[f64; 5]) -> bool {
        (0..5).all(|i| theta[i] >= self.lower[i] && theta[i] <= self.upper[i])
    }

    pub fn project(&self, theta: &[f64; 5]) -> [f64; 5] {
        std::array::from_fn(|i| theta[i].clamp(self.lower[i], self.upper[i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOptions {
    pub tau: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub max_iterations: usize,
    pub bounds: Option<Bounds>,
    pub rule: QuadratureRule,
    /// Keep `μ` unchanged after an accepted step instead of applying the
    /// gain-ratio update.
    pub strict_damping: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            tau: 1e-3,
            eps1: 1e-10,
            eps2: 1e-10,
            eps3: 1e-10,
            max_iterations: 100,
            bounds: None,
            rule: QuadratureRule::default(),
            strict_damping: false,
        }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau", self.tau), ("eps1", self.eps1), ("eps2", self.eps2), ("eps3", self.eps3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HestonError::domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopReason {
    /// `‖r‖ ≤ eps1`
    Residual,
    /// `‖Jr‖∞ ≤ eps2`
    Gradient,
    /// `‖Δθ‖ ≤ eps3·‖θ‖`
    Step,
    MaxIter,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Residual => "RESIDUAL",
            StopReason::Gradient => "GRADIENT",
            StopReason::Step => "STEP",
            StopReason::MaxIter => "MAX_ITER",
        })
    }
}

impl FromStr for StopReason {
    type Err = HestonError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RESIDUAL" => Ok(StopReason::Residual),
            "GRADIENT" => Ok(StopReason::Gradient),
            "STEP" => Ok(StopReason::Step),
            "MAX_ITER" => Ok(StopReason::MaxIter),
            other => Err(HestonError::domain(format!("unknown stop reason {other:?}"))),
        }
    }
}

/// One linear solve of the iteration. The first entry records the start.
///
/// `residual_norm` is infinite for trial points that were rejected without
/// pricing because they left the admissible domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub theta: HestonParams,
    pub residual_norm: f64,
    pub mu: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub theta_final: HestonParams,
    pub residual_norm: f64,
    pub grad_inf_norm: f64,
    pub last_step_norm: f64,
    pub stop_reason: StopReason,
    /// Accepted steps.
    pub iterations: usize,
    pub n_price_evals: usize,
    pub n_gradient_evals: usize,
    pub n_linear_solves: usize,
    /// Trial points rejected before pricing.
    pub n_infeasible_steps: usize,
    pub final_mu: f64,
    pub trace: Vec<TraceEntry>,
    pub wall_time: f64,
}

impl CalibrationReport {
    pub fn rejected_steps(&self) -> usize {
        self.n_linear_solves - self.iterations
    }
}

/// Mutable state of one LM iteration. `j` is 5×n.
#[derive(Debug, Clone)]
pub struct LmState {
    pub mu: f64,
    pub nu: f64,
    pub theta: HestonParams,
    pub r: DVector<f64>,
    pub j: DMatrix<f64>,
}

/// Residual vector (model minus market, in chain order) and `½‖r‖²`.
pub fn residual_vector(params: &HestonParams, chain: &QuoteChain, rule: &QuadratureRule) -> Result<(DVector<f64>, f64)> {
    let prices = price_chain(params, chain, rule)?;
    let r = DVector::from_iterator(
        chain.len(),
        prices.iter().zip(chain.quotes()).map(|(m, q)| m - q.price),
    );
    let f = 0.5 * r.norm_squared();
    Ok((r, f))
}

/// Solves `(JJᵀ + μI)Δθ = -Jr` by Cholesky, falling back to LU.
pub fn lm_step(state: &LmState) -> Result<[f64; 5]> {
    let g: Vector5<f64> = fixed_gradient(&state.j, &state.r);
    let h = gram(&state.j);
    solve_damped(&h, &g, state.mu)
}

fn fixed_gradient(j: &DMatrix<f64>, r: &DVector<f64>) -> Vector5<f64> {
    let g = j * r;
    Vector5::from_fn(|i, _| g[i])
}

fn gram(j: &DMatrix<f64>) -> Matrix5<f64> {
    let h = j * j.transpose();
    Matrix5::from_fn(|a, b| h[(a, b)])
}

fn solve_damped(h: &Matrix5<f64>, g: &Vector5<f64>, mu: f64) -> Result<[f64; 5]> {
    let a = h + Matrix5::identity() * mu;
    let rhs = -g;
    let step = match a.cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => a.lu().solve(&rhs).ok_or(HestonError::Singular)?,
    };
    if step.iter().all(|x| x.is_finite()) {
        Ok(step.into())
    } else {
        Err(HestonError::Singular)
    }
}

fn in_hard_domain(theta: &[f64; 5]) -> bool {
    let [v0, v_bar, rho, kappa, sigma] = *theta;
    [v0, v_bar, kappa, sigma].iter().all(|&x| x >= DOMAIN_FLOOR && x.is_finite()) && rho.abs() <= RHO_LIMIT
}

fn norm5(x: &[f64; 5]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Gauss-Newton Hessian `JJᵀ` and its 2-norm condition number, computed as
/// the squared ratio of the extreme singular values of `J`. The condition
/// number is infinite when `J` has rank below 5.
pub fn gauss_newton_hessian(j: &DMatrix<f64>) -> (Matrix5<f64>, f64) {
    let h = gram(j);
    let sv = j.clone().svd(false, false).singular_values;
    if sv.len() < 5 {
        return (h, f64::INFINITY);
    }
    let max = sv.max();
    let min = sv.min();
    let cond = if min <= max * f64::EPSILON * j.ncols().max(5) as f64 {
        f64::INFINITY
    } else {
        (max / min).powi(2)
    };
    (h, cond)
}

/// Runs the Levenberg-Marquardt iteration from `theta0`.
///
/// Exhausting `max_iterations` is reported through
/// [`StopReason::MaxIter`], not as an error.
pub fn calibrate(chain: &QuoteChain, theta0: &HestonParams, opts: &LmOptions) -> Result<CalibrationReport> {
    opts.validate()?;
    if let Some(b) = &opts.bounds {
        if !b.contains(&theta0.to_array()) {
            return Err(HestonError::domain(format!("initial guess {theta0} lies outside the bounds")));
        }
    }
    let start = Instant::now();
    let rule = &opts.rule;

    let (r, _) = residual_vector(theta0, chain, rule)?;
    let j = jacobian(theta0, chain, rule)?;
    let mut n_price_evals = 1;
    let mut n_gradient_evals = 1;
    let mut n_linear_solves = 0;
    let mut n_infeasible_steps = 0;

    let mut h = gram(&j);
    let mut g = fixed_gradient(&j, &r);
    let max_diag = (0..5).map(|i| h[(i, i)]).fold(0.0, f64::max);
    let mu0 = opts.tau * max_diag;
    let mut state = LmState {
        mu: if mu0 > 0.0 { mu0 } else { opts.tau },
        nu: 2.0,
        theta: *theta0,
        r,
        j,
    };
    let mut r_norm = state.r.norm();
    let mut trace = vec![TraceEntry {
        theta: state.theta,
        residual_norm: r_norm,
        mu: state.mu,
        accepted: true,
    }];
    let mut last_step_norm = 0.0;
    let mut iterations = 0;

    let converged = |r_norm: f64, g: &Vector5<f64>| {
        if r_norm <= opts.eps1 {
            Some(StopReason::Residual)
        } else if g.amax() <= opts.eps2 {
            Some(StopReason::Gradient)
        } else {
            None
        }
    };

    let mut stop = converged(r_norm, &g);
    while stop.is_none() {
        if iterations >= opts.max_iterations {
            stop = Some(StopReason::MaxIter);
            break;
        }
        let theta = state.theta.to_array();
        let theta_norm = norm5(&theta);

        // Inner loop: escalate μ until a step is accepted or the step test fires.
        loop {
            let mut delta = None;
            for _ in 0..MAX_FACTORIZATION_RETRIES {
                match solve_damped(&h, &g, state.mu) {
                    Ok(d) => {
                        delta = Some(d);
                        break;
                    }
                    Err(_) => {
                        state.mu *= state.nu;
                        state.nu *= 2.0;
                    }
                }
            }
            let delta = delta.ok_or(HestonError::Singular)?;
            n_linear_solves += 1;
            last_step_norm = norm5(&delta);
            if last_step_norm <= opts.eps3 * theta_norm {
                trace.push(TraceEntry {
                    theta: state.theta,
                    residual_norm: r_norm,
                    mu: state.mu,
                    accepted: false,
                });
                stop = Some(StopReason::Step);
                break;
            }

            let raw: [f64; 5] = std::array::from_fn(|i| theta[i] + delta[i]);
            let (trial, projected) = match &opts.bounds {
                Some(b) => {
                    let p = b.project(&raw);
                    (p, p != raw)
                }
                None => (raw, false),
            };
            let step: [f64; 5] = std::array::from_fn(|i| trial[i] - theta[i]);
            let step_v = Vector5::from(step);
            let delta_l = if projected {
                // Reduction of ‖r‖² predicted by the linear model.
                -2.0 * step_v.dot(&g) - (step_v.transpose() * h * step_v)[(0, 0)]
            } else {
                step_v.dot(&(step_v * state.mu - g))
            };

            let candidate = if step.iter().all(|&s| s == 0.0) || !in_hard_domain(&trial) {
                None
            } else {
                HestonParams::from_array(trial).ok()
            };
            let evaluated = match candidate {
                Some(p) => {
                    n_price_evals += 1;
                    residual_vector(&p, chain, rule).ok().map(|(r, _)| (p, r))
                }
                None => {
                    n_infeasible_steps += 1;
                    None
                }
            };

            let accepted = match evaluated {
                Some((p, r_new)) => {
                    let new_norm = r_new.norm();
                    let delta_f = r_norm - new_norm;
                    let ok = delta_l > 0.0 && delta_f > 0.0;
                    trace.push(TraceEntry {
                        theta: p,
                        residual_norm: new_norm,
                        mu: state.mu,
                        accepted: ok,
                    });
                    if ok {
                        let gain = (r_norm * r_norm - new_norm * new_norm) / delta_l;
                        if !opts.strict_damping {
                            state.mu *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
                            state.nu = 2.0;
                        }
                        state.j = jacobian(&p, chain, rule)?;
                        n_gradient_evals += 1;
                        state.theta = p;
                        state.r = r_new;
                        r_norm = new_norm;
                        h = gram(&state.j);
                        g = fixed_gradient(&state.j, &state.r);
                    }
                    ok
                }
                None => {
                    trace.push(TraceEntry {
                        theta: HestonParams::from_array(trial).unwrap_or(state.theta),
                        residual_norm: f64::INFINITY,
                        mu: state.mu,
                        accepted: false,
                    });
                    false
                }
            };
            if accepted {
                iterations += 1;
                break;
            }
            state.mu *= state.nu;
            state.nu *= 2.0;
        }
        if stop.is_none() {
            stop = converged(r_norm, &g);
        }
    }

    Ok(CalibrationReport {
        theta_final: state.theta,
        residual_norm: r_norm,
        grad_inf_norm: g.amax(),
        last_step_norm,
        stop_reason: stop.unwrap_or(StopReason::MaxIter),
        iterations,
        n_price_evals,
        n_gradient_evals,
        n_linear_solves,
        n_infeasible_steps,
        final_mu: state.mu,
        trace,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
