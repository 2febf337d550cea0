//! Black-Scholes prices, spot deltas, implied volatility and delta-to-strike
//! conversion for a flat rate and no dividends.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{HestonError, Result};
use crate::pricer::OptionType;

const MAX_IV_ITERATIONS: usize = 100;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Inverse of [`norm_cdf`] on `(0, 1)`, polished with two Newton steps.
pub fn norm_inv(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let pdf = norm_pdf(x);
        if pdf > 0.0 {
            x -= (norm_cdf(x) - p) / pdf;
        }
    }
    x
}

fn d1(spot: f64, rate: f64, strike: f64, maturity: f64, vol: f64) -> f64 {
    let sd = vol * maturity.sqrt();
    ((spot / strike).ln() + (rate + 0.5 * vol * vol) * maturity) / sd
}

pub fn bs_price(spot: f64, rate: f64, strike: f64, maturity: f64, vol: f64, option_type: OptionType) -> f64 {
    let df = (-rate * maturity).exp();
    let d1 = d1(spot, rate, strike, maturity, vol);
    let d2 = d1 - vol * maturity.sqrt();
    match option_type {
        OptionType::Call => spot * norm_cdf(d1) - strike * df * norm_cdf(d2),
        OptionType::Put => strike * df * norm_cdf(-d2) - spot * norm_cdf(-d1),
    }
}

/// Spot delta: `N(d1)` for calls, `N(d1) - 1` for puts.
pub fn bs_delta(spot: f64, rate: f64, strike: f64, maturity: f64, vol: f64, option_type: OptionType) -> f64 {
    let n = norm_cdf(d1(spot, rate, strike, maturity, vol));
    match option_type {
        OptionType::Call => n,
        OptionType::Put => n - 1.0,
    }
}

pub fn bs_vega(spot: f64, rate: f64, strike: f64, maturity: f64, vol: f64) -> f64 {
    spot * norm_pdf(d1(spot, rate, strike, maturity, vol)) * maturity.sqrt()
}

/// No-arbitrage price interval `(lower, upper)` of a European option.
pub fn price_bounds(spot: f64, rate: f64, strike: f64, maturity: f64, option_type: OptionType) -> (f64, f64) {
    let pv_strike = strike * (-rate * maturity).exp();
    match option_type {
        OptionType::Call => ((spot - pv_strike).max(0.0), spot),
        OptionType::Put => ((pv_strike - spot).max(0.0), pv_strike),
    }
}

/// Volatility at which [`bs_price`] reproduces `price`.
///
/// The out-of-the-money side of the parity pair is inverted by Newton's
/// method on a shrinking bracket, with bisection whenever the Newton step
/// leaves the bracket.
pub fn implied_vol(
    price: f64,
    spot: f64,
    rate: f64,
    strike: f64,
    maturity: f64,
    option_type: OptionType,
) -> Result<f64> {
    if !(spot > 0.0 && strike > 0.0 && maturity > 0.0) {
        return Err(HestonError::domain("spot, strike and maturity must be positive"));
    }
    let (lower, upper) = price_bounds(spot, rate, strike, maturity, option_type);
    if !(price > lower && price < upper) {
        return Err(HestonError::NoSolution { price, lower, upper });
    }
    let pv_strike = strike * (-rate * maturity).exp();
    let otm_type = if strike >= spot * (rate * maturity).exp() {
        OptionType::Call
    } else {
        OptionType::Put
    };
    let target = match (option_type, otm_type) {
        (OptionType::Call, OptionType::Put) => price - spot + pv_strike,
        (OptionType::Put, OptionType::Call) => price + spot - pv_strike,
        _ => price,
    };
    if !(target > 0.0) {
        // Parity conversion lost the time value entirely.
        return Err(HestonError::NoSolution { price, lower, upper });
    }

    let f = |v: f64| bs_price(spot, rate, strike, maturity, v, otm_type) - target;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Err(HestonError::NoSolution { price, lower, upper });
        }
    }

    let mut vol = 0.5 * (lo + hi);
    for _ in 0..MAX_IV_ITERATIONS {
        let diff = f(vol);
        if diff == 0.0 {
            break;
        }
        if diff < 0.0 {
            lo = vol;
        } else {
            hi = vol;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let vega = bs_vega(spot, rate, strike, maturity, vol);
        let newton = vol - diff / vega;
        vol = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(vol)
}

/// Strike whose spot delta at volatility `vol` equals `delta`.
///
/// Calls need `delta ∈ (0, 1)` and puts `delta ∈ (-1, 0)`.
pub fn strike_from_delta(
    delta: f64,
    vol: f64,
    spot: f64,
    rate: f64,
    maturity: f64,
    option_type: OptionType,
) -> Result<f64> {
    let p = match option_type {
        OptionType::Call if delta > 0.0 && delta < 1.0 => delta,
        OptionType::Put if delta > -1.0 && delta < 0.0 => delta + 1.0,
        _ => {
            return Err(HestonError::domain(format!(
                "delta {delta} is out of range for a {option_type}"
            )))
        }
    };
    if !(vol > 0.0 && spot > 0.0 && maturity > 0.0) {
        return Err(HestonError::domain("vol, spot and maturity must be positive"));
    }
    let d1 = norm_inv(p);
    let sd = vol * maturity.sqrt();
    Ok(spot * (-d1 * sd + (rate + 0.5 * vol * vol) * maturity).exp())
}
