//! Heston characteristic function.
//!
//! Four algebraically equivalent representations are provided. Only
//! [`Representation::Cui`] and [`Representation::Schoutens`] are continuous in
//! the frequency for long maturities; the other two follow the principal
//! branch of a complex logarithm and jump whenever their argument spirals
//! across the negative real axis. The continuous, easily differentiated form
//! is the one used for pricing and for the analytical gradient.

use std::cell::Cell;
use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{HestonError, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Above this value of `Re(d)·t` the hyperbolic functions are rescaled by
/// `exp(-Re(d)·t/2)` so that `A1` and `A2` stay finite.
const RESCALE_THRESHOLD: f64 = 50.0;

thread_local! {
    static TERMS_EVALUATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`cf_terms`] evaluations performed on the current thread.
pub fn terms_evaluations() -> u64 {
    TERMS_EVALUATIONS.with(Cell::get)
}

/// Resets the per-thread [`cf_terms`] counter.
pub fn reset_terms_evaluations() {
    TERMS_EVALUATIONS.with(|c| c.set(0));
}

/// Index of each model parameter in the parameter vector `[v0, v̄, ρ, κ, σ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    V0 = 0,
    VBar = 1,
    Rho = 2,
    Kappa = 3,
    Sigma = 4,
}

impl Param {
    pub const ALL: [Param; 5] = [Param::V0, Param::VBar, Param::Rho, Param::Kappa, Param::Sigma];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::V0 => "v0",
            Param::VBar => "v_bar",
            Param::Rho => "rho",
            Param::Kappa => "kappa",
            Param::Sigma => "sigma",
        }
    }
}

impl FromStr for Param {
    type Err = HestonError;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HestonError::domain(format!("unknown parameter `{s}`")))
    }
}

/// The five Heston model parameters.
///
/// The canonical vector ordering is `[v0, v̄, ρ, κ, σ]`; see [`Param`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonParams {
    v0: f64,
    v_bar: f64,
    rho: f64,
    kappa: f64,
    sigma: f64,
}

impl HestonParams {
    /// Builds a validated parameter set. Variances, `kappa` and `sigma` must be
    /// positive and `rho` must lie strictly inside `(-1, 1)`.
    pub fn new(v0: f64, v_bar: f64, rho: f64, kappa: f64, sigma: f64) -> Result<Self> {
        let p = HestonParams {
            v0,
            v_bar,
            rho,
            kappa,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds from a vector in `[v0, v̄, ρ, κ, σ]` order.
    pub fn from_array(theta: [f64; 5]) -> Result<Self> {
        Self::new(theta[0], theta[1], theta[2], theta[3], theta[4])
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.v0, self.v_bar, self.rho, self.kappa, self.sigma]
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("v0", self.v0),
            ("v_bar", self.v_bar),
            ("kappa", self.kappa),
            ("sigma", self.sigma),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(HestonError::domain(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(HestonError::domain(format!(
                "rho must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        Ok(())
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn v_bar(&self) -> f64 {
        self.v_bar
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn get(&self, p: Param) -> f64 {
        self.to_array()[p.index()]
    }

    /// Returns a copy with one component replaced, validating the result.
    pub fn with(&self, p: Param, value: f64) -> Result<Self> {
        let mut theta = self.to_array();
        theta[p.index()] = value;
        Self::from_array(theta)
    }
}

impl fmt::Display for HestonParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kappa={} v_bar={} sigma={} rho={} v0={}",
            self.kappa, self.v_bar, self.sigma, self.rho, self.v0
        )
    }
}

/// Spot price and flat continuously compounded rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketContext {
    pub spot: f64,
    pub rate: f64,
}

impl MarketContext {
    pub fn new(spot: f64, rate: f64) -> Result<Self> {
        if !(spot > 0.0 && spot.is_finite()) {
            return Err(HestonError::domain(format!("spot must be positive, got {spot}")));
        }
        if !rate.is_finite() {
            return Err(HestonError::domain("rate must be finite"));
        }
        Ok(MarketContext { spot, rate })
    }

    pub fn forward(&self, t: f64) -> f64 {
        self.spot * (self.rate * t).exp()
    }

    pub fn discount(&self, t: f64) -> f64 {
        (-self.rate * t).exp()
    }
}

/// Which algebraic form of the characteristic function to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Representation {
    /// The original form with `g = (ξ + d)/(ξ - d)` and growing exponentials;
    /// discontinuous at long maturities.
    Heston,
    /// The form with `g = (ξ - d)/(ξ + d)` and decaying exponentials;
    /// continuous.
    Schoutens,
    /// The `A`/`B`/`D` form with the drift term restored; discontinuous at
    /// long maturities.
    DelBano,
    /// The `A`/`B`/`D` form with `log B` rewritten so that no principal
    /// logarithm wraps. Continuous and used for pricing.
    #[default]
    Cui,
}

impl Representation {
    pub const ALL: [Representation; 4] = [
        Representation::Heston,
        Representation::Schoutens,
        Representation::DelBano,
        Representation::Cui,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Representation::Heston => "heston",
            Representation::Schoutens => "schoutens",
            Representation::DelBano => "delbano",
            Representation::Cui => "cui",
        }
    }
}

impl FromStr for Representation {
    type Err = HestonError;

    fn from_str(s: &str) -> Result<Self> {
        Representation::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HestonError::domain(format!("unknown representation `{s}`")))
    }
}

/// Intermediate complex quantities shared by the characteristic function and
/// its parameter derivatives.
///
/// When `Re(d)·t` is large, `a1`, `a2`, `sinh_half` and `cosh_half` are all
/// multiplied by `exp(-log_scale)`. Every consumer uses them in ratios that are
/// homogeneous of degree zero, so the common factor cancels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharFnTerms {
    pub u: Complex64,
    pub t: f64,
    pub xi: Complex64,
    pub d: Complex64,
    pub a1: Complex64,
    pub a2: Complex64,
    pub a: Complex64,
    /// The continuous form of `log B`, called `D`.
    pub log_b: Complex64,
    /// `D - σρiu·t/2`; the part of `D` that survives once the drift
    /// correction `-tκv̄ρiu/σ` is absorbed.
    pub log_b_reduced: Complex64,
    /// `sinh(d·t/2)`, possibly rescaled.
    pub sinh_half: Complex64,
    /// `cosh(d·t/2)`, possibly rescaled.
    pub cosh_half: Complex64,
    /// Natural log of the factor removed from the hyperbolic terms (0 if none).
    pub log_scale: f64,
}

/// `log(1 + z)` accurate for small `|z|`.
fn ln_1p(z: Complex64) -> Complex64 {
    let (x, y) = (z.re, z.im);
    Complex64::new(0.5 * (x * (2.0 + x) + y * y).ln_1p(), y.atan2(1.0 + x))
}

fn check_maturity(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(HestonError::domain(format!("maturity must be positive, got {t}")))
    }
}

fn overflow(u: Complex64, t: f64) -> HestonError {
    HestonError::Overflow {
        u_re: u.re,
        u_im: u.im,
        t,
    }
}

/// Computes `ξ`, `d`, `A1`, `A2`, `A` and the continuous `D = log B` at a
/// complex frequency `u` and maturity `t`.
pub fn cf_terms(params: &HestonParams, u: Complex64, t: f64) -> Result<CharFnTerms> {
    check_maturity(t)?;
    TERMS_EVALUATIONS.with(|c| c.set(c.get() + 1));

    let (kappa, sigma, rho) = (params.kappa, params.sigma, params.rho);
    let iu = I * u;
    let w = u * u + iu;
    let xi = kappa - sigma * rho * iu;
    let d = (xi * xi + sigma * sigma * w).sqrt();
    let dt = d * t;
    let e = (-dt).exp();

    let (sinh_half, cosh_half, log_scale) = if dt.re > RESCALE_THRESHOLD {
        // exp(±d t/2) * exp(-Re(d) t/2)
        let up = Complex64::from_polar(1.0, dt.im / 2.0);
        let down = e * up;
        ((up - down) * 0.5, (up + down) * 0.5, dt.re / 2.0)
    } else {
        let half = dt * 0.5;
        (half.sinh(), half.cosh(), 0.0)
    };

    let a1 = w * sinh_half;
    let a2 = d * cosh_half + xi * sinh_half;
    let a = a1 / a2;

    // D = log d + (κ - d)t/2 - log X with X = (d+ξ)/2 + (d-ξ)/2·e^{-dt}.
    // With δ = d - ξ, log d - log X = log1p(δ(1-e)/(2X)) and κ - d = σρiu - δ.
    // Both forms avoid the cancellation that 2κv̄/σ² would amplify for small σ;
    // the branch is pinned to that of the principal logarithms.
    let delta = sigma * sigma * w / (d + xi);
    let x = (d + xi) * 0.5 + delta * 0.5 * e;
    let principal = d.ln() - x.ln();
    let mut log_ratio = ln_1p(delta * (1.0 - e) * 0.5 / x);
    let turns = ((principal.im - log_ratio.im) / (2.0 * PI)).round();
    log_ratio.im += 2.0 * PI * turns;
    let log_b_reduced = log_ratio - delta * (t / 2.0);
    let log_b = log_b_reduced + sigma * rho * iu * (t / 2.0);

    let terms = CharFnTerms {
        u,
        t,
        xi,
        d,
        a1,
        a2,
        a,
        log_b,
        log_b_reduced,
        sinh_half,
        cosh_half,
        log_scale,
    };
    let finite = [a1, a2, a, log_b_reduced].iter().all(|z| z.is_finite());
    if finite {
        Ok(terms)
    } else {
        Err(overflow(u, t))
    }
}

/// The characteristic function in the continuous form, from precomputed terms.
pub fn char_fn_from_terms(
    params: &HestonParams,
    market: &MarketContext,
    terms: &CharFnTerms,
) -> Complex64 {
    let iu = I * terms.u;
    let t = terms.t;
    let (kappa, v_bar, sigma) = (params.kappa, params.v_bar, params.sigma);
    // iu(log S0 + rt) - tκv̄ρiu/σ - v0·A + (2κv̄/σ²)·D, with the ρ terms cancelled
    let exponent = iu * (market.spot.ln() + market.rate * t) - params.v0 * terms.a
        + (2.0 * kappa * v_bar / (sigma * sigma)) * terms.log_b_reduced;
    exponent.exp()
}

/// Evaluates `φ(θ; u, t) = E[exp(iu log S_t)]` in the requested representation.
pub fn char_fn(
    rep: Representation,
    params: &HestonParams,
    market: &MarketContext,
    u: Complex64,
    t: f64,
) -> Result<Complex64> {
    check_maturity(t)?;
    let value = match rep {
        Representation::Cui => {
            let terms = cf_terms(params, u, t)?;
            char_fn_from_terms(params, market, &terms)
        }
        Representation::Schoutens => schoutens(params, market, u, t),
        Representation::Heston => heston(params, market, u, t),
        Representation::DelBano => del_bano(params, market, u, t),
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(overflow(u, t))
    }
}

struct Basic {
    iu: Complex64,
    w: Complex64,
    xi: Complex64,
    d: Complex64,
    /// `ξ - d`, formed without cancellation as `-σ²(u²+iu)/(ξ+d)`.
    xi_minus_d: Complex64,
    drift: Complex64,
}

fn basic(params: &HestonParams, market: &MarketContext, u: Complex64, t: f64) -> Basic {
    let (kappa, sigma, rho) = (params.kappa, params.sigma, params.rho);
    let iu = I * u;
    let w = u * u + iu;
    let xi = kappa - sigma * rho * iu;
    let d = (xi * xi + sigma * sigma * w).sqrt();
    let xi_minus_d = -sigma * sigma * w / (xi + d);
    Basic {
        iu,
        w,
        xi,
        d,
        xi_minus_d,
        drift: iu * (market.spot.ln() + market.rate * t),
    }
}

fn schoutens(params: &HestonParams, market: &MarketContext, u: Complex64, t: f64) -> Complex64 {
    let b = basic(params, market, u, t);
    let s2 = params.sigma * params.sigma;
    let g2 = b.xi_minus_d / (b.xi + b.d);
    let e = (-b.d * t).exp();
    let log_g = ((1.0 - g2 * e) / (1.0 - g2)).ln();
    let exponent = b.drift
        + (params.kappa * params.v_bar / s2) * (b.xi_minus_d * t - 2.0 * log_g)
        + (params.v0 / s2) * b.xi_minus_d * (1.0 - e) / (1.0 - g2 * e);
    exponent.exp()
}

fn heston(params: &HestonParams, market: &MarketContext, u: Complex64, t: f64) -> Complex64 {
    // g1 = (ξ+d)/(ξ-d) is infinite at u = 0, so numerator and denominator of
    // every ratio involving g1 are multiplied through by (ξ-d). The complex
    // numbers whose logarithm is taken are unchanged.
    let b = basic(params, market, u, t);
    let s2 = params.sigma * params.sigma;
    let xi_plus_d = b.xi + b.d;
    let edt = (b.d * t).exp();
    let g = (xi_plus_d * edt - b.xi_minus_d) / (2.0 * b.d);
    let exponent = b.drift
        + (params.kappa * params.v_bar / s2) * (xi_plus_d * t - 2.0 * g.ln())
        + (params.v0 / s2) * xi_plus_d * b.xi_minus_d * (1.0 - edt)
            / (b.xi_minus_d - xi_plus_d * edt);
    exponent.exp()
}

fn del_bano(params: &HestonParams, market: &MarketContext, u: Complex64, t: f64) -> Complex64 {
    let b = basic(params, market, u, t);
    let (kappa, v_bar, sigma, rho) = (params.kappa, params.v_bar, params.sigma, params.rho);
    let half = b.d * (t / 2.0);
    let (sh, ch) = (half.sinh(), half.cosh());
    let a2 = b.d * ch + b.xi * sh;
    let a = b.w * sh / a2;
    let big_b = b.d * (kappa * t / 2.0).exp() / a2;
    let exponent = b.drift - b.iu * (t * kappa * v_bar * rho / sigma) - params.v0 * a
        + (2.0 * kappa * v_bar / (sigma * sigma)) * big_b.ln();
    exponent.exp()
}

/// One node of the `A2` spiral trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiralPoint {
    pub u: f64,
    /// `A2·log(log|A2|)/|A2|`.
    pub gamma: Complex64,
    /// Principal logarithm of `A2` evaluated directly.
    pub log_a2_principal: Complex64,
    /// `d t/2 + log((d+ξ)/2 + (d-ξ)/2·e^{-dt})`.
    pub log_a2_continuous: Complex64,
}

/// Trajectory data for the spiral of `A2(u)` and the two forms of `log A2`.
pub fn spiral_diagnostic(params: &HestonParams, t: f64, u_grid: &[f64]) -> Result<Vec<SpiralPoint>> {
    check_maturity(t)?;
    if u_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HestonError::domain("frequency grid must be strictly increasing"));
    }
    let (kappa, sigma, rho) = (params.kappa, params.sigma, params.rho);
    u_grid
        .iter()
        .map(|&u| {
            if u < 0.0 {
                return Err(HestonError::domain("frequency grid must be non-negative"));
            }
            let uc = Complex64::new(u, 0.0);
            let iu = I * uc;
            let xi = kappa - sigma * rho * iu;
            let d = (xi * xi + sigma * sigma * (uc * uc + iu)).sqrt();
            let half = d * (t / 2.0);
            let a2 = d * half.cosh() + xi * half.sinh();
            let r = a2.norm();
            if !(r > E) || !r.is_finite() {
                return Err(HestonError::domain(format!(
                    "|A2| = {r} at u = {u}; the double logarithm needs |A2| > e"
                )));
            }
            let continuous = half + ((d + xi) * 0.5 + (d - xi) * 0.5 * (-d * t).exp()).ln();
            Ok(SpiralPoint {
                u,
                gamma: a2 * (r.ln().ln() / r),
                log_a2_principal: a2.ln(),
                log_a2_continuous: continuous,
            })
        })
        .collect()
}

/// Indices `k` where the step `values[k+1] - values[k]` exceeds `ratio` times
/// both neighbouring steps and `floor` in magnitude.
///
/// On a smooth curve sampled finely, consecutive differences change slowly,
/// so an isolated large step marks a discontinuity.
pub fn detect_jumps(values: &[f64], ratio: f64, floor: f64) -> Vec<usize> {
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    (1..diffs.len().saturating_sub(1))
        .filter(|&k| {
            let step = diffs[k].abs();
            let local = diffs[k - 1].abs().max(diffs[k + 1].abs());
            step > floor && step > ratio * local
        })
        .collect()
}

/// Indices where the imaginary part jumps by more than `π` between nodes.
pub fn phase_jumps(values: &[Complex64]) -> Vec<usize> {
    values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| (w[1].im - w[0].im).abs() > PI)
        .map(|(k, _)| k)
        .collect()
}
