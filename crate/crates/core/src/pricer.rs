//! European option prices under Heston by the two-integral Fourier formula.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::charfn::{cf_terms, char_fn, char_fn_from_terms, HestonParams, MarketContext, Representation};
use crate::error::{HestonError, Result};
use crate::gradient;
use crate::quadrature::{integrate, QuadratureRule};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptionType {
    Call,
    Put,
}

impl fmt::Display for OptionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptionType::Call => "CALL",
            OptionType::Put => "PUT",
        })
    }
}

impl FromStr for OptionType {
    type Err = HestonError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CALL" | "C" => Ok(OptionType::Call),
            "PUT" | "P" => Ok(OptionType::Put),
            other => Err(HestonError::domain(format!("unknown option type `{other}`"))),
        }
    }
}

/// A vanilla European contract. Maturity is a year fraction (252 trading days).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionSpec {
    pub strike: f64,
    pub maturity: f64,
    pub option_type: OptionType,
}

impl OptionSpec {
    pub fn new(strike: f64, maturity: f64, option_type: OptionType) -> Result<Self> {
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(HestonError::domain(format!("strike must be positive, got {strike}")));
        }
        if !(maturity > 0.0 && maturity.is_finite()) {
            return Err(HestonError::domain(format!(
                "maturity must be positive, got {maturity}"
            )));
        }
        Ok(OptionSpec {
            strike,
            maturity,
            option_type,
        })
    }

    pub fn call(strike: f64, maturity: f64) -> Result<Self> {
        Self::new(strike, maturity, OptionType::Call)
    }

    pub fn put(strike: f64, maturity: f64) -> Result<Self> {
        Self::new(strike, maturity, OptionType::Put)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quote {
    pub option: OptionSpec,
    pub price: f64,
}

/// Market context plus a non-empty list of quoted prices.
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteChain {
    market: MarketContext,
    quotes: Vec<Quote>,
}

impl QuoteChain {
    pub fn new(market: MarketContext, quotes: Vec<Quote>) -> Result<Self> {
        if quotes.is_empty() {
            return Err(HestonError::domain("quote chain is empty"));
        }
        for (i, q) in quotes.iter().enumerate() {
            let upper = match q.option.option_type {
                OptionType::Call => market.spot,
                OptionType::Put => q.option.strike * market.discount(q.option.maturity),
            };
            if !(q.price >= 0.0 && q.price <= upper) {
                return Err(HestonError::domain(format!(
                    "price {} outside [0, {upper}]",
                    q.price
                ))
                .at_quote(i));
            }
        }
        Ok(QuoteChain { market, quotes })
    }

    pub fn market(&self) -> &MarketContext {
        &self.market
    }

    pub fn quotes(&self) -> &[Quote] {
        &self.quotes
    }

    pub fn len(&self) -> usize {
        self.quotes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }

    pub fn options(&self) -> impl Iterator<Item = &OptionSpec> {
        self.quotes.iter().map(|q| &q.option)
    }
}

/// `e^{-iu log K}/(iu)` for real `u`.
pub(crate) fn fourier_kernel(log_strike: f64, u: f64) -> Complex64 {
    Complex64::from_polar(1.0, -u * log_strike) / (I * u)
}

/// The two integrands of the call formula at real `u > 0`:
/// `Re(e^{-iu log K} φ(u-i)/(iu))` and `Re(e^{-iu log K} φ(u)/(iu))`.
pub fn integrand_block(
    params: &HestonParams,
    market: &MarketContext,
    opt: &OptionSpec,
    u: f64,
) -> Result<[f64; 2]> {
    Ok([
        shifted_integrand(params, market, opt, u)?,
        plain_integrand(params, market, opt, u)?,
    ])
}

fn shifted_integrand(params: &HestonParams, market: &MarketContext, opt: &OptionSpec, u: f64) -> Result<f64> {
    let terms = cf_terms(params, Complex64::new(u, -1.0), opt.maturity)?;
    let phi = char_fn_from_terms(params, market, &terms);
    Ok((fourier_kernel(opt.strike.ln(), u) * phi).re)
}

fn plain_integrand(params: &HestonParams, market: &MarketContext, opt: &OptionSpec, u: f64) -> Result<f64> {
    let terms = cf_terms(params, Complex64::new(u, 0.0), opt.maturity)?;
    let phi = char_fn_from_terms(params, market, &terms);
    Ok((fourier_kernel(opt.strike.ln(), u) * phi).re)
}

fn call_value(params: &HestonParams, market: &MarketContext, opt: &OptionSpec, rule: &QuadratureRule) -> Result<f64> {
    let t = opt.maturity;
    let k = opt.strike;
    let first = integrate(rule, |u| shifted_integrand(params, market, opt, u))?;
    let second = integrate(rule, |u| plain_integrand(params, market, opt, u))?;
    let df = market.discount(t);
    Ok(0.5 * (market.spot - df * k) + df / PI * (first - k * second))
}

/// Call price; the option type must be [`OptionType::Call`].
pub fn price_call(
    params: &HestonParams,
    market: &MarketContext,
    opt: &OptionSpec,
    rule: &QuadratureRule,
) -> Result<f64> {
    if opt.option_type != OptionType::Call {
        return Err(HestonError::domain("price_call needs a call option"));
    }
    call_value(params, market, opt, rule)
}

/// Put price by parity with the call on the same strike and maturity.
pub fn price_put(
    params: &HestonParams,
    market: &MarketContext,
    opt: &OptionSpec,
    rule: &QuadratureRule,
) -> Result<f64> {
    if opt.option_type != OptionType::Put {
        return Err(HestonError::domain("price_put needs a put option"));
    }
    let call = call_value(params, market, opt, rule)?;
    Ok(call - market.spot + opt.strike * market.discount(opt.maturity))
}

/// Price of either option type.
pub fn price(params: &HestonParams, market: &MarketContext, opt: &OptionSpec, rule: &QuadratureRule) -> Result<f64> {
    match opt.option_type {
        OptionType::Call => price_call(params, market, opt, rule),
        OptionType::Put => price_put(params, market, opt, rule),
    }
}

/// Price using an explicit characteristic-function representation.
///
/// The discontinuous forms are only safe for short maturities; they exist to
/// compare representations and are never used by the calibrator.
pub fn price_with_representation(
    rep: Representation,
    params: &HestonParams,
    market: &MarketContext,
    opt: &OptionSpec,
    rule: &QuadratureRule,
) -> Result<f64> {
    if rep == Representation::Cui {
        return price(params, market, opt, rule);
    }
    let (t, k) = (opt.maturity, opt.strike);
    let log_k = k.ln();
    let first = integrate(rule, |u| {
        let phi = char_fn(rep, params, market, Complex64::new(u, -1.0), t)?;
        Ok((fourier_kernel(log_k, u) * phi).re)
    })?;
    let second = integrate(rule, |u| {
        let phi = char_fn(rep, params, market, Complex64::new(u, 0.0), t)?;
        Ok((fourier_kernel(log_k, u) * phi).re)
    })?;
    let df = market.discount(t);
    let call = 0.5 * (market.spot - df * k) + df / PI * (first - k * second);
    Ok(match opt.option_type {
        OptionType::Call => call,
        OptionType::Put => call - market.spot + k * df,
    })
}

/// Model prices for every quote of a chain, in chain order.
pub fn price_chain(params: &HestonParams, chain: &QuoteChain, rule: &QuadratureRule) -> Result<Vec<f64>> {
    chain
        .options()
        .enumerate()
        .map(|(i, opt)| price(params, chain.market(), opt, rule).map_err(|e| e.at_quote(i)))
        .collect()
}

pub const TRUNCATION_SCAN_START: f64 = 0.5;
pub const TRUNCATION_SCAN_STEP: f64 = 0.5;
pub const TRUNCATION_CAP: f64 = 200.0;
pub const TRUNCATION_TAIL: f64 = 50.0;
/// Spacing of the verification grid inside each tail window.
const TRUNCATION_PROBE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationBound {
    pub u_bar: f64,
    /// Set when no bound up to [`TRUNCATION_CAP`] satisfies the tolerance.
    pub capped: bool,
}

/// Smallest `ū` on a 0.5-spaced scan such that the price integrand and all
/// five gradient integrands stay below `tol` in magnitude on `[ū, ū + 50]`.
pub fn truncation_bound(
    params: &HestonParams,
    market: &MarketContext,
    opt: &OptionSpec,
    tol: f64,
) -> Result<TruncationBound> {
    if !(tol > 0.0) {
        return Err(HestonError::domain("tolerance must be positive"));
    }
    let n_probe = ((TRUNCATION_CAP + TRUNCATION_TAIL - TRUNCATION_SCAN_START) / TRUNCATION_PROBE)
        .round() as usize;
    // Index of the last probe that exceeds the tolerance, if any.
    let mut last_bad: Option<usize> = None;
    for k in 0..=n_probe {
        let u = TRUNCATION_SCAN_START + k as f64 * TRUNCATION_PROBE;
        let values = gradient::combined_integrands(params, market, opt, u)?;
        if values.iter().any(|v| !(v.abs() < tol)) {
            last_bad = Some(k);
        }
    }
    let per_step = (TRUNCATION_SCAN_STEP / TRUNCATION_PROBE).round() as usize;
    let first_ok = match last_bad {
        None => 0,
        Some(k) => k / per_step + 1,
    };
    let u_bar = TRUNCATION_SCAN_START + first_ok as f64 * TRUNCATION_SCAN_STEP;
    if u_bar > TRUNCATION_CAP {
        Ok(TruncationBound {
            u_bar: TRUNCATION_CAP,
            capped: true,
        })
    } else {
        Ok(TruncationBound { u_bar, capped: false })
    }
}
