//! Text formats read and written by the command-line tool.
//!
//! Key-value documents hold one `key=value` pair per line; blank lines and
//! lines starting with `#` are ignored. Chain files are comma-separated with a
//! mandatory header, preceded by `# spot=...` and `# rate=...` lines. Every
//! floating-point number is written with 17 significant digits so that a
//! write-read-write cycle reproduces the text exactly.

use std::collections::HashMap;

use heston_core::blackscholes::{bs_price, strike_from_delta};
use heston_core::calibrator::CalibrationReport;
use heston_core::charfn::Param;
use heston_core::harness::ValidationStats;
use heston_core::pricer::Quote;
use heston_core::{HestonParams, MarketContext, OptionSpec, OptionType, QuoteChain, StopReason, TRADING_DAYS_PER_YEAR};

use crate::error::{CliError, CliResult};

pub const DEFAULT_SPOT: f64 = 1.0;
pub const DEFAULT_RATE: f64 = 0.02;

pub const CHAIN_HEADER: [&str; 6] = ["maturity_days", "strike", "delta", "option_type", "quote_kind", "quote"];

/// Parameter keys in the order they are written.
const PARAM_ORDER: [Param; 5] = [Param::Kappa, Param::VBar, Param::Sigma, Param::Rho, Param::V0];

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_num(key: &str, s: &str) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::format(format!("`{key}`: `{s}` is not a number")))
}

fn parse_count(key: &str, s: &str) -> CliResult<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| CliError::format(format!("`{key}`: `{s}` is not a non-negative integer")))
}

/// Ordered `key=value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    pairs: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::format(format!("line {}: expected key=value", line_no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(CliError::format(format!("line {}: empty key", line_no + 1)));
            }
            if pairs.iter().any(|(q, _)| q == k) {
                return Err(CliError::format(format!("duplicate key `{k}`")));
            }
            pairs.push((k.to_string(), v.to_string()));
        }
        Ok(KeyValues { pairs })
    }

    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.pairs.push((key.to_string(), value.into()));
    }

    pub fn push_num(&mut self, key: &str, value: f64) {
        self.push(key, fmt_num(value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key).ok_or_else(|| CliError::format(format!("missing key `{key}`")))
    }

    pub fn num(&self, key: &str) -> CliResult<f64> {
        parse_num(key, self.require(key)?)
    }

    pub fn opt_num(&self, key: &str) -> CliResult<Option<f64>> {
        self.get(key).map(|v| parse_num(key, v)).transpose()
    }

    pub fn count(&self, key: &str) -> CliResult<usize> {
        parse_count(key, self.require(key)?)
    }

    pub fn to_text(&self) -> String {
        self.pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn push_params(kv: &mut KeyValues, params: &HestonParams) {
    for p in PARAM_ORDER {
        kv.push_num(p.name(), params.get(p));
    }
}

fn read_params(kv: &KeyValues) -> CliResult<HestonParams> {
    let mut theta = [0.0; 5];
    for p in Param::ALL {
        theta[p.index()] = kv.num(p.name())?;
    }
    Ok(HestonParams::from_array(theta)?)
}

/// Model parameters with an optional market. Unknown keys are ignored, so a
/// calibration report can be used where a parameter file is expected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamsFile {
    pub params: HestonParams,
    pub spot: Option<f64>,
    pub rate: Option<f64>,
}

impl ParamsFile {
    pub fn new(params: HestonParams) -> Self {
        ParamsFile {
            params,
            spot: None,
            rate: None,
        }
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let kv = KeyValues::parse(text)?;
        Ok(ParamsFile {
            params: read_params(&kv)?,
            spot: kv.opt_num("spot")?,
            rate: kv.opt_num("rate")?,
        })
    }

    /// Market from the file, defaulting to spot 1 and rate 0.02.
    pub fn market(&self) -> CliResult<MarketContext> {
        Ok(MarketContext::new(
            self.spot.unwrap_or(DEFAULT_SPOT),
            self.rate.unwrap_or(DEFAULT_RATE),
        )?)
    }

    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::default();
        push_params(&mut kv, &self.params);
        if let Some(s) = self.spot {
            kv.push_num("spot", s);
        }
        if let Some(r) = self.rate {
            kv.push_num("rate", r);
        }
        kv.to_text()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuoteKind {
    Price,
    Vol,
}

impl QuoteKind {
    fn parse(s: &str) -> CliResult<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PRICE" => Ok(QuoteKind::Price),
            "VOL" => Ok(QuoteKind::Vol),
            _ => Err(CliError::format(format!("unknown quote kind `{s}`"))),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            QuoteKind::Price => "PRICE",
            QuoteKind::Vol => "VOL",
        }
    }
}

/// How a row fixes its strike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pin {
    Strike(f64),
    Delta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainRow {
    pub maturity_days: u32,
    pub pin: Pin,
    pub option_type: OptionType,
    pub quote_kind: QuoteKind,
    pub quote: f64,
}

impl ChainRow {
    pub fn maturity(&self) -> f64 {
        self.maturity_days as f64 / TRADING_DAYS_PER_YEAR
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainFile {
    pub spot: f64,
    pub rate: f64,
    pub rows: Vec<ChainRow>,
}

/// A chain file converted to prices at explicit strikes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedChain {
    pub chain: QuoteChain,
    pub maturity_days: Vec<u32>,
}

impl ChainFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut meta = HashMap::new();
        for line in text.lines() {
            if let Some(rest) = line.trim().strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
        }
        let meta_num = |key: &str| -> CliResult<f64> {
            let v = meta
                .get(key)
                .ok_or_else(|| CliError::format(format!("missing `# {key}=...` line")))?;
            parse_num(key, v)
        };
        let (spot, rate) = (meta_num("spot")?, meta_num("rate")?);

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| CliError::format(format!("chain header: {e}")))?
            .clone();
        if header.iter().ne(CHAIN_HEADER.iter().copied()) {
            return Err(CliError::format(format!(
                "chain header must be `{}`",
                CHAIN_HEADER.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| CliError::format(format!("chain row {}: {e}", i + 1)))?;
            rows.push(parse_row(&record).map_err(|e| CliError::format(format!("chain row {}: {e}", i + 1)))?);
        }
        if rows.is_empty() {
            return Err(CliError::format("chain has no rows"));
        }
        Ok(ChainFile { spot, rate, rows })
    }

    pub fn market(&self) -> CliResult<MarketContext> {
        Ok(MarketContext::new(self.spot, self.rate)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# spot={}\n# rate={}\n{}\n",
            fmt_num(self.spot),
            fmt_num(self.rate),
            CHAIN_HEADER.join(",")
        );
        for row in &self.rows {
            let (strike, delta) = match row.pin {
                Pin::Strike(k) => (fmt_num(k), String::new()),
                Pin::Delta(d) => (String::new(), fmt_num(d)),
            };
            out.push_str(&format!(
                "{},{strike},{delta},{},{},{}\n",
                row.maturity_days,
                row.option_type,
                row.quote_kind.as_str(),
                fmt_num(row.quote)
            ));
        }
        out
    }

    /// Converts every row to a price at an explicit strike. Vol quotes are
    /// priced by Black-Scholes; delta-quoted rows take the strike whose spot
    /// delta at the quoted vol equals the quoted delta.
    pub fn resolve(&self) -> CliResult<ResolvedChain> {
        let market = self.market()?;
        let quotes = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| resolve_row(row, &market).map_err(|e| at_row(e, i)))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(ResolvedChain {
            chain: QuoteChain::new(market, quotes)?,
            maturity_days: self.rows.iter().map(|r| r.maturity_days).collect(),
        })
    }
}

fn at_row(e: CliError, i: usize) -> CliError {
    match e {
        CliError::Domain(inner) => CliError::Domain(heston_core::HestonError::Quote {
            index: i,
            source: Box::new(inner),
        }),
        other => other,
    }
}

fn parse_row(record: &csv::StringRecord) -> CliResult<ChainRow> {
    let field = |i: usize| record.get(i).unwrap_or("");
    let maturity_days = field(0)
        .parse::<u32>()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| CliError::format(format!("maturity_days `{}` is not a positive integer", field(0))))?;
    let pin = match (field(1), field(2)) {
        (k, "") if !k.is_empty() => Pin::Strike(parse_num("strike", k)?),
        ("", d) if !d.is_empty() => Pin::Delta(parse_num("delta", d)?),
        _ => return Err(CliError::format("exactly one of strike and delta must be given")),
    };
    let option_type: OptionType = field(3)
        .parse()
        .map_err(|_| CliError::format(format!("unknown option type `{}`", field(3))))?;
    let quote_kind = QuoteKind::parse(field(4))?;
    let quote = parse_num("quote", field(5))?;
    if !(quote >= 0.0) || !quote.is_finite() {
        return Err(CliError::format(format!("quote {quote} must be finite and non-negative")));
    }
    if matches!(pin, Pin::Delta(_)) && quote_kind == QuoteKind::Price {
        return Err(CliError::format("delta-quoted rows must quote a VOL"));
    }
    Ok(ChainRow {
        maturity_days,
        pin,
        option_type,
        quote_kind,
        quote,
    })
}

fn resolve_row(row: &ChainRow, market: &MarketContext) -> CliResult<Quote> {
    let t = row.maturity();
    let (s, r) = (market.spot, market.rate);
    let strike = match row.pin {
        Pin::Strike(k) => k,
        Pin::Delta(d) => strike_from_delta(d, row.quote, s, r, t, row.option_type)?,
    };
    let option = OptionSpec::new(strike, t, row.option_type)?;
    let price = match row.quote_kind {
        QuoteKind::Price => row.quote,
        QuoteKind::Vol => bs_price(s, r, strike, t, row.quote, row.option_type),
    };
    Ok(Quote { option, price })
}

/// Calibration report without the per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportDoc {
    pub theta: HestonParams,
    pub stop_reason: StopReason,
    pub residual_norm: f64,
    pub grad_inf_norm: f64,
    pub last_step_norm: f64,
    pub iterations: usize,
    pub n_price_evals: usize,
    pub n_gradient_evals: usize,
    pub n_linear_solves: usize,
    pub n_infeasible_steps: usize,
    pub final_mu: f64,
    pub wall_time: f64,
}

impl From<&CalibrationReport> for ReportDoc {
    fn from(r: &CalibrationReport) -> Self {
        ReportDoc {
            theta: r.theta_final,
            stop_reason: r.stop_reason,
            residual_norm: r.residual_norm,
            grad_inf_norm: r.grad_inf_norm,
            last_step_norm: r.last_step_norm,
            iterations: r.iterations,
            n_price_evals: r.n_price_evals,
            n_gradient_evals: r.n_gradient_evals,
            n_linear_solves: r.n_linear_solves,
            n_infeasible_steps: r.n_infeasible_steps,
            final_mu: r.final_mu,
            wall_time: r.wall_time,
        }
    }
}

impl ReportDoc {
    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::default();
        kv.push("stop_reason", self.stop_reason.to_string());
        push_params(&mut kv, &self.theta);
        kv.push_num("residual_norm", self.residual_norm);
        kv.push_num("grad_inf_norm", self.grad_inf_norm);
        kv.push_num("last_step_norm", self.last_step_norm);
        kv.push("iterations", self.iterations.to_string());
        kv.push("n_price_evals", self.n_price_evals.to_string());
        kv.push("n_gradient_evals", self.n_gradient_evals.to_string());
        kv.push("n_linear_solves", self.n_linear_solves.to_string());
        kv.push("n_infeasible_steps", self.n_infeasible_steps.to_string());
        kv.push_num("final_mu", self.final_mu);
        kv.push_num("wall_time_seconds", self.wall_time);
        kv.to_text()
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let kv = KeyValues::parse(text)?;
        let stop = kv.require("stop_reason")?;
        Ok(ReportDoc {
            theta: read_params(&kv)?,
            stop_reason: stop
                .parse()
                .map_err(|_| CliError::format(format!("unknown stop reason `{stop}`")))?,
            residual_norm: kv.num("residual_norm")?,
            grad_inf_norm: kv.num("grad_inf_norm")?,
            last_step_norm: kv.num("last_step_norm")?,
            iterations: kv.count("iterations")?,
            n_price_evals: kv.count("n_price_evals")?,
            n_gradient_evals: kv.count("n_gradient_evals")?,
            n_linear_solves: kv.count("n_linear_solves")?,
            n_infeasible_steps: kv.count("n_infeasible_steps")?,
            final_mu: kv.num("final_mu")?,
            wall_time: kv.num("wall_time_seconds")?,
        })
    }
}

/// One line per linear solve, preceded by the starting point (step 0).
pub fn trace_csv(report: &CalibrationReport) -> String {
    let mut out = String::from("step,accepted,residual_norm,mu");
    for p in PARAM_ORDER {
        out.push(',');
        out.push_str(p.name());
    }
    out.push('\n');
    for (i, e) in report.trace.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{}", e.accepted, fmt_num(e.residual_norm), fmt_num(e.mu)));
        for p in PARAM_ORDER {
            out.push(',');
            out.push_str(&fmt_num(e.theta.get(p)));
        }
        out.push('\n');
    }
    out
}

const STOP_KEYS: [&str; 4] = ["stops_residual", "stops_gradient", "stops_step", "stops_max_iter"];

pub fn stats_to_text(s: &ValidationStats) -> String {
    let mut kv = KeyValues::default();
    kv.push("n_cases", s.n_cases.to_string());
    kv.push("n_success", s.n_success.to_string());
    kv.push("n_errors", s.n_errors.to_string());
    kv.push_num("success_rate", s.success_rate());
    for p in PARAM_ORDER {
        kv.push_num(&format!("mean_abs_deviation_{}", p.name()), s.mean_abs_deviation[p.index()]);
    }
    kv.push_num("mean_residual_norm", s.mean_residual_norm);
    kv.push_num("mean_iterations", s.mean_iterations);
    kv.push_num("mean_price_evals", s.mean_price_evals);
    kv.push_num("mean_gradient_evals", s.mean_gradient_evals);
    kv.push_num("mean_linear_solves", s.mean_linear_solves);
    kv.push_num("mean_wall_time_seconds", s.mean_wall_time);
    for (k, c) in STOP_KEYS.iter().zip(s.stop_counts) {
        kv.push(k, c.to_string());
    }
    kv.to_text()
}

/// Reads a document written by [`stats_to_text`]; `success_rate` is derived
/// and therefore not stored.
pub fn parse_stats(text: &str) -> CliResult<ValidationStats> {
    let kv = KeyValues::parse(text)?;
    let mut mean_abs_deviation = [0.0; 5];
    for p in Param::ALL {
        mean_abs_deviation[p.index()] = kv.num(&format!("mean_abs_deviation_{}", p.name()))?;
    }
    let mut stop_counts = [0; 4];
    for (slot, k) in stop_counts.iter_mut().zip(STOP_KEYS) {
        *slot = kv.count(k)?;
    }
    Ok(ValidationStats {
        n_cases: kv.count("n_cases")?,
        n_success: kv.count("n_success")?,
        n_errors: kv.count("n_errors")?,
        mean_abs_deviation,
        mean_residual_norm: kv.num("mean_residual_norm")?,
        mean_iterations: kv.num("mean_iterations")?,
        mean_price_evals: kv.num("mean_price_evals")?,
        mean_gradient_evals: kv.num("mean_gradient_evals")?,
        mean_linear_solves: kv.num("mean_linear_solves")?,
        mean_wall_time: kv.num("mean_wall_time_seconds")?,
        stop_counts,
    })
}
