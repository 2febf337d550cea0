//! Experiment drivers: synthetic delta-quoted surfaces, randomised validation,
//! realistic parameter sets, contour and integrand dumps, and the quadrature
//! error study.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::blackscholes::{implied_vol, strike_from_delta};
use crate::calibrator::{calibrate, residual_vector, CalibrationReport, LmOptions, StopReason};
use crate::charfn::{HestonParams, MarketContext, Param};
use crate::error::{HestonError, Result};
use crate::gradient::{combined_integrands, fd_gradient, price_gradient, FD_EPSILON};
use crate::pricer::{integrand_block, price, truncation_bound, OptionSpec, OptionType, Quote, QuoteChain};
use crate::quadrature::{
    gauss_legendre_rule, integral_evaluations, integrate, reset_integral_evaluations, trapezoid_rule, QuadratureRule,
    RuleKind,
};
use crate::TRADING_DAYS_PER_YEAR;

/// Strike tolerance of the delta fixed point.
const STRIKE_TOLERANCE: f64 = 1e-10;
const MAX_FIXED_POINT_ITERATIONS: usize = 500;

pub fn reference_params() -> HestonParams {
    HestonParams::new(0.08, 0.1, -0.8, 3.0, 0.25).expect("valid constants")
}

pub fn reference_market() -> MarketContext {
    MarketContext::new(1.0, 0.02).expect("valid constants")
}

/// Starting point of the representative calibration.
pub fn representative_start() -> HestonParams {
    // κ = 1.2, v̄ = 0.2, σ = 0.3, ρ = -0.6, v0 = 0.2
    HestonParams::new(0.2, 0.2, -0.6, 1.2, 0.3).expect("valid constants")
}

/// Sampling intervals for random parameters, in `[v0, v̄, ρ, κ, σ]` order.
pub const PARAM_RANGES: [(f64, f64); 5] = [(0.05, 0.95), (0.05, 0.95), (-0.9, -0.1), (0.5, 5.0), (0.05, 0.95)];

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub maturities_days: Vec<u32>,
    /// Signed spot deltas with their option type.
    pub deltas: Vec<(f64, OptionType)>,
}

impl Default for SurfaceGrid {
    fn default() -> Self {
        SurfaceGrid {
            maturities_days: vec![30, 60, 90, 120, 150, 180, 252, 360],
            deltas: vec![
                (-0.10, OptionType::Put),
                (-0.25, OptionType::Put),
                (0.50, OptionType::Call),
                (0.25, OptionType::Call),
                (0.10, OptionType::Call),
            ],
        }
    }
}

impl SurfaceGrid {
    pub fn len(&self) -> usize {
        self.maturities_days.len() * self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub maturity_days: u32,
    pub delta: f64,
    pub option_type: OptionType,
    pub strike: f64,
    pub price: f64,
    pub implied_vol: f64,
}

/// A generated surface. `chain` holds the prices as calibration targets, in
/// the same order as `points` (maturity-major).
#[derive(Debug, Clone)]
pub struct Surface {
    pub points: Vec<SurfacePoint>,
    pub chain: QuoteChain,
}

/// Resolves one delta-quoted grid point: strike from delta at the current
/// vol, Heston price at that strike, implied vol of the price, repeated until
/// the strike settles.
fn resolve_point(
    theta: &HestonParams,
    market: &MarketContext,
    days: u32,
    delta: f64,
    option_type: OptionType,
    rule: &QuadratureRule,
) -> Result<SurfacePoint> {
    let t = days as f64 / TRADING_DAYS_PER_YEAR;
    let heston_point = |strike: f64| -> Result<(f64, f64)> {
        let opt = OptionSpec::new(strike, t, option_type)?;
        let p = price(theta, market, &opt, rule)?;
        let v = implied_vol(p, market.spot, market.rate, strike, t, option_type)?;
        Ok((p, v))
    };
    let mut vol = theta.v0().sqrt();
    let mut strike = strike_from_delta(delta, vol, market.spot, market.rate, t, option_type)?;
    for _ in 0..MAX_FIXED_POINT_ITERATIONS {
        let (p, v) = heston_point(strike)?;
        vol = v;
        let next = strike_from_delta(delta, vol, market.spot, market.rate, t, option_type)?;
        if (next - strike).abs() <= STRIKE_TOLERANCE {
            return Ok(SurfacePoint {
                maturity_days: days,
                delta,
                option_type,
                strike,
                price: p,
                implied_vol: v,
            });
        }
        strike = next;
    }
    Err(HestonError::domain(format!(
        "delta fixed point for delta {delta} at {days} days did not settle"
    )))
}

/// Prices the delta-quoted grid under `theta_star`. A grid point whose
/// implied vol cannot be inverted fails the whole surface with its index.
pub fn generate_surface(
    theta_star: &HestonParams,
    market: &MarketContext,
    grid: &SurfaceGrid,
    rule: &QuadratureRule,
) -> Result<Surface> {
    let mut points = Vec::with_capacity(grid.len());
    for &days in &grid.maturities_days {
        for &(delta, ty) in &grid.deltas {
            let idx = points.len();
            points.push(resolve_point(theta_star, market, days, delta, ty, rule).map_err(|e| e.at_quote(idx))?);
        }
    }
    let quotes = points
        .iter()
        .map(|p| {
            Ok(Quote {
                option: OptionSpec::new(p.strike, p.maturity_days as f64 / TRADING_DAYS_PER_YEAR, p.option_type)?,
                price: p.price,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Surface {
        points,
        chain: QuoteChain::new(*market, quotes)?,
    })
}

/// Draws each parameter uniformly from [`PARAM_RANGES`].
pub fn draw_params_with<R: Rng>(rng: &mut R) -> HestonParams {
    let theta: [f64; 5] = std::array::from_fn(|i| {
        let (lo, hi) = PARAM_RANGES[i];
        rng.random_range(lo..hi)
    });
    HestonParams::from_array(theta).expect("ranges lie inside the domain")
}

pub fn draw_random_params(seed: u64) -> HestonParams {
    draw_params_with(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Independent stream for case `(i, j)`; `tag` separates optimum and guess draws.
fn case_rng(seed: u64, i: u64, j: u64, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&i.to_le_bytes());
    key[16..24].copy_from_slice(&j.to_le_bytes());
    key[24..].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Absolute deviation thresholds for a successful recovery, `[v0, v̄, ρ, κ, σ]`.
pub const SUCCESS_DEVIATION: [f64; 5] = [1e-3, 1e-3, 1e-3, 1e-2, 1e-3];

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub optimum: usize,
    pub guess: usize,
    pub theta_star: HestonParams,
    pub theta0: HestonParams,
    pub report: std::result::Result<CalibrationReport, HestonError>,
}

impl CaseOutcome {
    pub fn deviations(&self) -> Option<[f64; 5]> {
        let rep = self.report.as_ref().ok()?;
        let a = rep.theta_final.to_array();
        let b = self.theta_star.to_array();
        Some(std::array::from_fn(|i| (a[i] - b[i]).abs()))
    }

    pub fn is_success(&self, eps1: f64) -> bool {
        match (&self.report, self.deviations()) {
            (Ok(rep), Some(dev)) => {
                rep.residual_norm <= eps1 * 1e3 && dev.iter().zip(SUCCESS_DEVIATION).all(|(d, lim)| *d < lim)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationStats {
    pub n_cases: usize,
    pub n_success: usize,
    /// Cases that ended in an error instead of a report.
    pub n_errors: usize,
    /// Mean absolute deviation per parameter in `[v0, v̄, ρ, κ, σ]` order.
    pub mean_abs_deviation: [f64; 5],
    pub mean_residual_norm: f64,
    pub mean_iterations: f64,
    pub mean_price_evals: f64,
    pub mean_gradient_evals: f64,
    pub mean_linear_solves: f64,
    pub mean_wall_time: f64,
    /// Counts of RESIDUAL, GRADIENT, STEP and MAX_ITER stops.
    pub stop_counts: [usize; 4],
}

impl ValidationStats {
    pub fn success_rate(&self) -> f64 {
        if self.n_cases == 0 {
            0.0
        } else {
            self.n_success as f64 / self.n_cases as f64
        }
    }

    /// Equality ignoring timings.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.mean_wall_time = other.mean_wall_time;
        a == *other
    }

    pub fn aggregate(outcomes: &[CaseOutcome], eps1: f64) -> Self {
        let reports: Vec<(&CaseOutcome, &CalibrationReport)> =
            outcomes.iter().filter_map(|o| o.report.as_ref().ok().map(|r| (o, r))).collect();
        let m = reports.len().max(1) as f64;
        let mean = |f: &dyn Fn(&CalibrationReport) -> f64| reports.iter().map(|(_, r)| f(r)).sum::<f64>() / m;
        let mut dev = [0.0; 5];
        for (o, _) in &reports {
            let d = o.deviations().expect("report present");
            for i in 0..5 {
                dev[i] += d[i] / m;
            }
        }
        let mut stop_counts = [0; 4];
        for (_, r) in &reports {
            let k = match r.stop_reason {
                StopReason::Residual => 0,
                StopReason::Gradient => 1,
                StopReason::Step => 2,
                StopReason::MaxIter => 3,
            };
            stop_counts[k] += 1;
        }
        ValidationStats {
            n_cases: outcomes.len(),
            n_success: outcomes.iter().filter(|o| o.is_success(eps1)).count(),
            n_errors: outcomes.len() - reports.len(),
            mean_abs_deviation: dev,
            mean_residual_norm: mean(&|r| r.residual_norm),
            mean_iterations: mean(&|r| r.iterations as f64),
            mean_price_evals: mean(&|r| r.n_price_evals as f64),
            mean_gradient_evals: mean(&|r| r.n_gradient_evals as f64),
            mean_linear_solves: mean(&|r| r.n_linear_solves as f64),
            mean_wall_time: mean(&|r| r.wall_time),
            stop_counts,
        }
    }
}

/// Randomised validation: `n_optima` random optima, each calibrated from
/// `n_guesses` random starts. Cases run in parallel; each draws from its own
/// stream so results do not depend on scheduling.
pub fn run_validation_cases(
    n_optima: usize,
    n_guesses: usize,
    seed: u64,
    opts: &LmOptions,
) -> Result<Vec<CaseOutcome>> {
    if n_optima == 0 || n_guesses == 0 {
        return Err(HestonError::domain("validation needs at least one optimum and one guess"));
    }
    let market = reference_market();
    let grid = SurfaceGrid::default();
    let optima: Vec<(HestonParams, std::result::Result<Surface, HestonError>)> = (0..n_optima)
        .into_par_iter()
        .map(|i| {
            let theta = draw_params_with(&mut case_rng(seed, i as u64, 0, 0));
            (theta, generate_surface(&theta, &market, &grid, &opts.rule))
        })
        .collect();
    let cases: Vec<(usize, usize)> = (0..n_optima).flat_map(|i| (0..n_guesses).map(move |j| (i, j))).collect();
    Ok(cases
        .into_par_iter()
        .map(|(i, j)| {
            let theta0 = draw_params_with(&mut case_rng(seed, i as u64, j as u64, 1));
            let (theta_star, surface) = &optima[i];
            let report = match surface {
                Ok(s) => calibrate(&s.chain, &theta0, opts),
                Err(e) => Err(e.clone()),
            };
            CaseOutcome {
                optimum: i,
                guess: j,
                theta_star: *theta_star,
                theta0,
                report,
            }
        })
        .collect())
}

pub fn run_validation(n_optima: usize, n_guesses: usize, seed: u64, opts: &LmOptions) -> Result<ValidationStats> {
    let outcomes = run_validation_cases(n_optima, n_guesses, seed, opts)?;
    Ok(ValidationStats::aggregate(&outcomes, opts.eps1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealisticCase {
    pub name: &'static str,
    pub theta: HestonParams,
    pub description: &'static str,
}

/// Three parameter sets seen in equity and FX markets.
pub fn realistic_cases() -> [RealisticCase; 3] {
    let p = |kappa, v_bar, sigma, rho, v0| HestonParams::new(v0, v_bar, rho, kappa, sigma).expect("valid constants");
    [
        RealisticCase {
            name: "I",
            theta: p(0.5, 0.04, 1.0, -0.9, 0.04),
            description: "slow mean reversion, high vol-of-vol, strong negative correlation",
        },
        RealisticCase {
            name: "II",
            theta: p(0.3, 0.04, 0.9, -0.5, 0.04),
            description: "very slow mean reversion, high vol-of-vol",
        },
        RealisticCase {
            name: "III",
            theta: p(1.0, 0.09, 1.0, -0.3, 0.09),
            description: "moderate mean reversion, unit vol-of-vol, mild correlation",
        },
    ]
}

/// Relative half-width of the start perturbation around a realistic optimum.
pub const PERTURBATION: f64 = 0.1;

/// Each component drawn uniformly within ±10% of the optimum.
pub fn perturb<R: Rng>(theta: &HestonParams, rng: &mut R) -> HestonParams {
    let a = theta.to_array();
    let out: [f64; 5] = std::array::from_fn(|i| a[i] * (1.0 + rng.random_range(-PERTURBATION..PERTURBATION)));
    HestonParams::from_array(out).expect("a 10% perturbation of a valid set stays valid")
}

/// Calibrates `case` from `n_starts` perturbed starts on its generated surface.
pub fn run_realistic_case(
    case: &RealisticCase,
    n_starts: usize,
    seed: u64,
    opts: &LmOptions,
) -> Result<Vec<CaseOutcome>> {
    let surface = generate_surface(&case.theta, &reference_market(), &SurfaceGrid::default(), &opts.rule)?;
    Ok((0..n_starts)
        .into_par_iter()
        .map(|j| {
            let theta0 = perturb(&case.theta, &mut case_rng(seed, u64::MAX, j as u64, 2));
            CaseOutcome {
                optimum: 0,
                guess: j,
                theta_star: case.theta,
                theta0,
                report: calibrate(&surface.chain, &theta0, opts),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourGrid {
    pub resolution: usize,
    /// Relative half-width around the centre value of each axis.
    pub half_width: f64,
}

impl Default for ContourGrid {
    fn default() -> Self {
        ContourGrid {
            resolution: 51,
            half_width: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourDump {
    pub pair: (Param, Param),
    /// `(x, y, ‖r‖)`; `None` where the parameters are invalid or pricing fails.
    pub values: Vec<(f64, f64, Option<f64>)>,
    /// Calibration iterates projected onto the pair, with their `‖r‖`.
    pub path: Vec<(f64, f64, f64)>,
}

fn axis(centre: f64, grid: &ContourGrid) -> Vec<f64> {
    let n = grid.resolution;
    (0..n)
        .map(|k| {
            if 2 * k + 1 == n {
                centre
            } else {
                centre * (1.0 + grid.half_width * (2.0 * k as f64 / (n - 1) as f64 - 1.0))
            }
        })
        .collect()
}

/// `‖r‖` over a slice through `theta_star` in the `pair` plane.
pub fn dump_contour(
    theta_star: &HestonParams,
    pair: (Param, Param),
    grid: &ContourGrid,
    chain: &QuoteChain,
    rule: &QuadratureRule,
    path_from: Option<&CalibrationReport>,
) -> Result<ContourDump> {
    if pair.0 == pair.1 {
        return Err(HestonError::domain("contour axes must be distinct parameters"));
    }
    if grid.resolution < 10 || !(grid.half_width > 0.0) {
        return Err(HestonError::domain("contour grid needs at least 10x10 points and a positive width"));
    }
    let xs = axis(theta_star.get(pair.0), grid);
    let ys = axis(theta_star.get(pair.1), grid);
    let points: Vec<(f64, f64)> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))).collect();
    let values = points
        .into_par_iter()
        .map(|(x, y)| {
            let norm = theta_star
                .with(pair.0, x)
                .and_then(|p| p.with(pair.1, y))
                .and_then(|p| residual_vector(&p, chain, rule))
                .ok()
                .map(|(r, _)| r.norm());
            (x, y, norm)
        })
        .collect();
    let path = path_from
        .map(|rep| {
            rep.trace
                .iter()
                .filter(|e| e.accepted)
                .map(|e| (e.theta.get(pair.0), e.theta.get(pair.1), e.residual_norm))
                .collect()
        })
        .unwrap_or_default();
    Ok(ContourDump { pair, values, path })
}

/// Spacing of the u grid in integrand dumps.
pub const INTEGRAND_DUMP_STEP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandTrace {
    pub option: OptionSpec,
    pub u_bar: f64,
    pub capped: bool,
    /// `(u, [price, d_v0, d_v̄, d_ρ, d_κ, d_σ])` integrand values.
    pub rows: Vec<(f64, [f64; 6])>,
}

/// Price and gradient integrands on `(0, 200]` together with the truncation
/// bound `ū` for each option.
pub fn dump_integrand_convergence(
    params: &HestonParams,
    market: &MarketContext,
    options: &[OptionSpec],
    tol: f64,
) -> Result<Vec<IntegrandTrace>> {
    options
        .iter()
        .map(|opt| {
            let bound = truncation_bound(params, market, opt, tol)?;
            let n = (200.0 / INTEGRAND_DUMP_STEP).round() as usize;
            let rows = (1..=n)
                .map(|k| {
                    let u = k as f64 * INTEGRAND_DUMP_STEP;
                    combined_integrands(params, market, opt, u).map(|v| (u, v))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(IntegrandTrace {
                option: *opt,
                u_bar: bound.u_bar,
                capped: bound.capped,
                rows,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadErrorRow {
    pub n_nodes: usize,
    pub mean: f64,
    pub max: f64,
    pub min: f64,
}

/// Value of the pricing integral `∫ Re(K^{-iu}(φ(u-i) - Kφ(u))/(iu)) du`.
fn pricing_integral(params: &HestonParams, market: &MarketContext, opt: &OptionSpec, rule: &QuadratureRule) -> Result<f64> {
    integrate(rule, |u| {
        let [a, b] = integrand_block(params, market, opt, u)?;
        Ok(a - opt.strike * b)
    })
}

/// Integration error `|Φ(N) - Φ(N_max)|` over the chain for each `N`, with the
/// same rule kind and upper limit for the reference.
pub fn quadrature_error_study(
    params: &HestonParams,
    chain: &QuoteChain,
    kind: RuleKind,
    n_sweep: &[usize],
    n_max: usize,
    u_max: f64,
) -> Result<Vec<QuadErrorRow>> {
    let market = chain.market();
    let build = |n: usize| match kind {
        RuleKind::GaussLegendre => gauss_legendre_rule(n, u_max),
        RuleKind::Trapezoid => trapezoid_rule(n, u_max),
    };
    let reference_rule = build(n_max)?;
    let reference = chain
        .options()
        .map(|o| pricing_integral(params, market, o, &reference_rule))
        .collect::<Result<Vec<_>>>()?;
    n_sweep
        .iter()
        .map(|&n| {
            let rule = build(n)?;
            let errs = chain
                .options()
                .zip(&reference)
                .map(|(o, r)| pricing_integral(params, market, o, &rule).map(|v| (v - r).abs()))
                .collect::<Result<Vec<_>>>()?;
            Ok(QuadErrorRow {
                n_nodes: n,
                mean: errs.iter().sum::<f64>() / errs.len() as f64,
                max: errs.iter().cloned().fold(0.0, f64::max),
                min: errs.iter().cloned().fold(f64::INFINITY, f64::min),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCost {
    pub analytic_integrals: u64,
    pub fd_integrals: u64,
    pub analytic_seconds: f64,
    pub fd_seconds: f64,
}

/// Integral counts and wall-clock of the analytic and central-difference
/// chain gradients.
pub fn gradient_cost(params: &HestonParams, chain: &QuoteChain, rule: &QuadratureRule) -> Result<GradientCost> {
    let market = chain.market();
    reset_integral_evaluations();
    let start = Instant::now();
    for opt in chain.options() {
        std::hint::black_box(price_gradient(params, market, opt, rule)?);
    }
    let analytic_seconds = start.elapsed().as_secs_f64();
    let analytic_integrals = integral_evaluations();

    reset_integral_evaluations();
    let start = Instant::now();
    for opt in chain.options() {
        std::hint::black_box(fd_gradient(params, market, opt, FD_EPSILON, rule)?);
    }
    let fd_seconds = start.elapsed().as_secs_f64();
    Ok(GradientCost {
        analytic_integrals,
        fd_integrals: integral_evaluations(),
        analytic_seconds,
        fd_seconds,
    })
}
