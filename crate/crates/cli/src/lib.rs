//! Command-line front end: argument parsing, file formats and subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod formats;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use heston_core::calibrator::Bounds;
use heston_core::charfn::Param;
use heston_core::gradient::{fd_gradient, price_gradient, FD_EPSILON};
use heston_core::harness::{
    dump_contour, dump_integrand_convergence, generate_surface, quadrature_error_study, run_validation, ContourGrid,
    SurfaceGrid,
};
use heston_core::pricer::price_with_representation;
use heston_core::quadrature::RuleKind;
use heston_core::{
    calibrate, HestonParams, LmOptions, MarketContext, OptionSpec, QuadratureRule, QuoteChain, Representation,
    StopReason, TRADING_DAYS_PER_YEAR,
};

use crate::error::{CliError, CliResult};
use crate::formats::{fmt_num, stats_to_text, trace_csv, ChainFile, ChainRow, ParamsFile, Pin, QuoteKind, ReportDoc};

/// Relative tolerance of `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "heston", version, about = "Heston model pricing, calibration and diagnostics")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    Gl,
    Tr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RepArg {
    Cui,
    Schoutens,
    Heston,
    Delbano,
}

#[derive(Debug, Args)]
struct Global {
    /// Quadrature nodes.
    #[arg(long, global = true, default_value_t = 64)]
    nodes: usize,
    /// Upper integration limit.
    #[arg(long, global = true, default_value_t = 200.0)]
    umax: f64,
    /// Quadrature rule.
    #[arg(long, global = true, value_enum, default_value_t = RuleArg::Gl)]
    rule: RuleArg,
    /// Tolerance used for all three stopping tests.
    #[arg(long, global = true, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long = "max-iter", global = true, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, global = true, default_value_t = 2024)]
    seed: u64,
    /// Project iterates onto the standard parameter box.
    #[arg(long, global = true, value_enum, default_value_t = Switch::Off)]
    bounds: Switch,
    /// Keep the damping unchanged after accepted steps.
    #[arg(long = "strict-paper-lm", global = true, value_enum, default_value_t = Switch::Off)]
    strict_lm: Switch,
    /// Characteristic-function form used by `price`.
    #[arg(long, global = true, value_enum, default_value_t = RepArg::Cui)]
    rep: RepArg,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Price every option of a chain.
    Price {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference price gradients.
    Gradcheck {
        /// Defaults to the reference parameter set.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Defaults to the synthetic surface of the parameters.
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Per-component comparison table.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the model to a chain by Levenberg-Marquardt.
    Calibrate {
        #[arg(long)]
        chain: PathBuf,
        /// Starting parameters.
        #[arg(long)]
        start: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-iteration trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Fitted parameters with the chain's market.
        #[arg(long = "params-out")]
        params_out: Option<PathBuf>,
    },
    /// Randomised calibration campaign over synthetic surfaces.
    Validate {
        #[arg(long, default_value_t = 20)]
        optima: usize,
        #[arg(long, default_value_t = 20)]
        guesses: usize,
        /// Run 100 x 100 cases.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic 40-point surface of a parameter set.
    Surface {
        #[arg(long)]
        params: PathBuf,
        /// PRICE rows at resolved strikes, or VOL rows at deltas.
        #[arg(long = "quote-kind", value_enum, default_value_t = QuoteKindArg::Price)]
        quote_kind: QuoteKindArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Residual norm over a two-parameter slice.
    DumpContour {
        #[arg(long)]
        params: PathBuf,
        /// Two parameter names, e.g. `kappa,v_bar`.
        #[arg(long, value_delimiter = ',', default_values_t = ["kappa".to_string(), "v_bar".to_string()])]
        pair: Vec<String>,
        #[arg(long, default_value_t = 51)]
        resolution: usize,
        /// Relative half-width of each axis.
        #[arg(long = "half-width", default_value_t = 0.5)]
        half_width: f64,
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Calibrate from this start and write its path.
        #[arg(long, requires = "path_out")]
        start: Option<PathBuf>,
        #[arg(long = "path-out")]
        path_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Price and gradient integrands with their truncation bounds.
    DumpIntegrand {
        #[arg(long)]
        params: PathBuf,
        /// Options to trace; defaults to at-the-money calls at `--maturities`.
        #[arg(long)]
        chain: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [30u32, 60, 90, 120, 150, 180, 252, 360])]
        maturities: Vec<u32>,
        /// Integrand magnitude defining the truncation bound.
        #[arg(long = "integrand-tol", default_value_t = 1e-8)]
        integrand_tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Truncation bound per option.
        #[arg(long = "ubar-out")]
        ubar_out: Option<PathBuf>,
    },
    /// Integration error against a high-order reference for a node sweep.
    DumpQuaderr {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        chain: Option<PathBuf>,
        #[arg(long = "n-min", default_value_t = 10)]
        n_min: usize,
        #[arg(long = "n-max", default_value_t = 100)]
        n_max: usize,
        #[arg(long = "n-ref", default_value_t = 1000)]
        n_ref: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QuoteKindArg {
    Price,
    Vol,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("heston: {e}");
            e.exit_code()
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| CliError::Io {
            path: p.display().to_string(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}

fn read_params(path: &Path) -> CliResult<ParamsFile> {
    ParamsFile::parse(&read_text(path)?)
}

impl Global {
    fn rule(&self) -> CliResult<QuadratureRule> {
        self.rule_with(self.nodes)
    }

    fn rule_kind(&self) -> RuleKind {
        match self.rule {
            RuleArg::Gl => RuleKind::GaussLegendre,
            RuleArg::Tr => RuleKind::Trapezoid,
        }
    }

    fn rule_with(&self, nodes: usize) -> CliResult<QuadratureRule> {
        QuadratureRule::new(self.rule_kind(), nodes, self.umax).map_err(|e| CliError::Usage(e.to_string()))
    }

    fn lm_options(&self) -> CliResult<LmOptions> {
        let opts = LmOptions {
            eps1: self.tol,
            eps2: self.tol,
            eps3: self.tol,
            max_iterations: self.max_iter,
            bounds: (self.bounds == Switch::On).then(Bounds::standard),
            rule: self.rule()?,
            strict_damping: self.strict_lm == Switch::On,
            ..LmOptions::default()
        };
        opts.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(opts)
    }

    fn representation(&self) -> Representation {
        match self.rep {
            RepArg::Cui => Representation::Cui,
            RepArg::Schoutens => Representation::Schoutens,
            RepArg::Heston => Representation::Heston,
            RepArg::Delbano => Representation::DelBano,
        }
    }
}

/// Chain from a file, or the synthetic surface of `params` when absent.
fn chain_or_surface(
    chain: Option<&Path>,
    params: &HestonParams,
    market: &MarketContext,
    rule: &QuadratureRule,
) -> CliResult<(QuoteChain, Vec<u32>)> {
    match chain {
        Some(p) => {
            let resolved = ChainFile::parse(&read_text(p)?)?.resolve()?;
            Ok((resolved.chain, resolved.maturity_days))
        }
        None => {
            let surface = generate_surface(params, market, &SurfaceGrid::default(), rule)?;
            let days = surface.points.iter().map(|p| p.maturity_days).collect();
            Ok((surface.chain, days))
        }
    }
}

fn days_of(opt: &OptionSpec) -> u32 {
    (opt.maturity * TRADING_DAYS_PER_YEAR).round() as u32
}

fn execute(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Price { params, chain, out } => {
            let params = read_params(params)?.params;
            let resolved = ChainFile::parse(&read_text(chain)?)?.resolve()?;
            let rule = g.rule()?;
            let rep = g.representation();
            let market = resolved.chain.market();
            let mut text = String::from("maturity_days,strike,option_type,price\n");
            for (i, (q, days)) in resolved.chain.quotes().iter().zip(&resolved.maturity_days).enumerate() {
                let v = price_with_representation(rep, &params, market, &q.option, &rule)
                    .map_err(|e| CliError::Domain(heston_core::HestonError::Quote { index: i, source: Box::new(e) }))?;
                text.push_str(&format!("{days},{},{},{}\n", fmt_num(q.option.strike), q.option.option_type, fmt_num(v)));
            }
            emit(out.as_deref(), &text)
        }
        Command::Gradcheck { params, chain, table, out } => {
            let file = match params {
                Some(p) => read_params(p)?,
                None => ParamsFile::new(heston_core::harness::reference_params()),
            };
            let rule = g.rule()?;
            let market = file.market()?;
            let (chain, days) = chain_or_surface(chain.as_deref(), &file.params, &market, &rule)?;
            gradcheck(&file.params, &chain, &days, &rule, table.as_deref(), out.as_deref())
        }
        Command::Calibrate {
            chain,
            start,
            out,
            trace,
            params_out,
        } => {
            let opts = g.lm_options()?;
            let resolved = ChainFile::parse(&read_text(chain)?)?.resolve()?;
            let theta0 = read_params(start)?.params;
            let report = calibrate(&resolved.chain, &theta0, &opts)?;
            emit(out.as_deref(), &ReportDoc::from(&report).to_text())?;
            if let Some(p) = trace {
                emit(Some(p), &trace_csv(&report))?;
            }
            if let Some(p) = params_out {
                let m = resolved.chain.market();
                let file = ParamsFile {
                    params: report.theta_final,
                    spot: Some(m.spot),
                    rate: Some(m.rate),
                };
                emit(Some(p), &file.to_text())?;
            }
            if report.stop_reason == StopReason::MaxIter {
                return Err(CliError::NotConverged);
            }
            Ok(())
        }
        Command::Validate {
            optima,
            guesses,
            full,
            out,
        } => {
            let (n, m) = if *full { (100, 100) } else { (*optima, *guesses) };
            if n == 0 || m == 0 {
                return Err(CliError::Usage("case counts must be at least 1".into()));
            }
            let stats = run_validation(n, m, g.seed, &g.lm_options()?)?;
            emit(out.as_deref(), &stats_to_text(&stats))
        }
        Command::Surface { params, quote_kind, out } => {
            let file = read_params(params)?;
            let market = file.market()?;
            let surface = generate_surface(&file.params, &market, &SurfaceGrid::default(), &g.rule()?)?;
            let rows = surface
                .points
                .iter()
                .map(|p| match quote_kind {
                    QuoteKindArg::Price => ChainRow {
                        maturity_days: p.maturity_days,
                        pin: Pin::Strike(p.strike),
                        option_type: p.option_type,
                        quote_kind: QuoteKind::Price,
                        quote: p.price,
                    },
                    QuoteKindArg::Vol => ChainRow {
                        maturity_days: p.maturity_days,
                        pin: Pin::Delta(p.delta),
                        option_type: p.option_type,
                        quote_kind: QuoteKind::Vol,
                        quote: p.implied_vol,
                    },
                })
                .collect();
            let doc = ChainFile {
                spot: market.spot,
                rate: market.rate,
                rows,
            };
            emit(out.as_deref(), &doc.to_text())
        }
        Command::DumpContour {
            params,
            pair,
            resolution,
            half_width,
            chain,
            start,
            path_out,
            out,
        } => {
            let pair = match pair.as_slice() {
                [a, b] => (parse_param(a)?, parse_param(b)?),
                _ => return Err(CliError::Usage("--pair needs two parameter names".into())),
            };
            let file = read_params(params)?;
            let rule = g.rule()?;
            let market = file.market()?;
            let (chain, _) = chain_or_surface(chain.as_deref(), &file.params, &market, &rule)?;
            let report = match start {
                Some(s) => Some(calibrate(&chain, &read_params(s)?.params, &g.lm_options()?)?),
                None => None,
            };
            let grid = ContourGrid {
                resolution: *resolution,
                half_width: *half_width,
            };
            let dump = dump_contour(&file.params, pair, &grid, &chain, &rule, report.as_ref())?;
            let header = format!("{},{},residual_norm\n", pair.0.name(), pair.1.name());
            let mut text = header.clone();
            for (x, y, v) in &dump.values {
                let v = v.map(fmt_num).unwrap_or_default();
                text.push_str(&format!("{},{},{v}\n", fmt_num(*x), fmt_num(*y)));
            }
            emit(out.as_deref(), &text)?;
            if let Some(p) = path_out {
                let mut text = header;
                for (x, y, v) in &dump.path {
                    text.push_str(&format!("{},{},{}\n", fmt_num(*x), fmt_num(*y), fmt_num(*v)));
                }
                emit(Some(p), &text)?;
            }
            Ok(())
        }
        Command::DumpIntegrand {
            params,
            chain,
            maturities,
            integrand_tol,
            out,
            ubar_out,
        } => {
            let file = read_params(params)?;
            let market = file.market()?;
            let options = match chain {
                Some(p) => {
                    let resolved = ChainFile::parse(&read_text(p)?)?.resolve()?;
                    resolved.chain.options().copied().collect::<Vec<_>>()
                }
                None => maturities
                    .iter()
                    .map(|&d| OptionSpec::call(market.spot, d as f64 / TRADING_DAYS_PER_YEAR))
                    .collect::<heston_core::Result<Vec<_>>>()?,
            };
            let traces = dump_integrand_convergence(&file.params, &market, &options, *integrand_tol)?;
            let mut text = String::from("option,maturity_days,strike,option_type,u,price,d_v0,d_v_bar,d_rho,d_kappa,d_sigma\n");
            let mut bounds = String::from("option,maturity_days,strike,option_type,u_bar,capped\n");
            for (i, tr) in traces.iter().enumerate() {
                let o = &tr.option;
                let lead = format!("{i},{},{},{}", days_of(o), fmt_num(o.strike), o.option_type);
                for (u, vals) in &tr.rows {
                    text.push_str(&format!("{lead},{}", fmt_num(*u)));
                    for v in vals {
                        text.push(',');
                        text.push_str(&fmt_num(*v));
                    }
                    text.push('\n');
                }
                bounds.push_str(&format!("{lead},{},{}\n", fmt_num(tr.u_bar), tr.capped));
            }
            emit(out.as_deref(), &text)?;
            if let Some(p) = ubar_out {
                emit(Some(p), &bounds)?;
            }
            Ok(())
        }
        Command::DumpQuaderr {
            params,
            chain,
            n_min,
            n_max,
            n_ref,
            out,
        } => {
            if *n_min < 2 || n_min > n_max {
                return Err(CliError::Usage("need 2 <= --n-min <= --n-max".into()));
            }
            let file = read_params(params)?;
            let market = file.market()?;
            let (chain, _) = chain_or_surface(chain.as_deref(), &file.params, &market, &g.rule()?)?;
            let sweep: Vec<usize> = (*n_min..=*n_max).collect();
            let rows = quadrature_error_study(&file.params, &chain, g.rule_kind(), &sweep, *n_ref, g.umax)?;
            let mut text = String::from("n_nodes,mean_error,max_error,min_error\n");
            for r in rows {
                text.push_str(&format!("{},{},{},{}\n", r.n_nodes, fmt_num(r.mean), fmt_num(r.max), fmt_num(r.min)));
            }
            emit(out.as_deref(), &text)
        }
    }
}

fn parse_param(s: &str) -> CliResult<Param> {
    s.parse().map_err(|_| CliError::Usage(format!("unknown parameter `{s}`")))
}

fn gradcheck(
    params: &HestonParams,
    chain: &QuoteChain,
    days: &[u32],
    rule: &QuadratureRule,
    table: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let market = chain.market();
    let mut rows = String::from("option,maturity_days,strike,option_type,parameter,analytic,finite_difference,relative_error\n");
    let mut errors = Vec::new();
    for (i, (opt, d)) in chain.options().zip(days).enumerate() {
        let analytic = price_gradient(params, market, opt, rule)?.to_array();
        let fd = fd_gradient(params, market, opt, FD_EPSILON, rule)?.to_array();
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for p in Param::ALL {
            let (a, f) = (analytic[p.index()], fd[p.index()]);
            let rel = (a - f).abs() / f.abs().max(1e-6 * scale).max(f64::MIN_POSITIVE);
            errors.push(rel);
            rows.push_str(&format!(
                "{i},{d},{},{},{},{},{},{}\n",
                fmt_num(opt.strike),
                opt.option_type,
                p.name(),
                fmt_num(a),
                fmt_num(f),
                fmt_num(rel)
            ));
        }
    }
    if let Some(p) = table {
        emit(Some(p), &rows)?;
    }
    let max = errors.iter().cloned().fold(0.0, f64::max);
    let pass = max < GRADCHECK_TOLERANCE;
    let mut kv = formats::KeyValues::default();
    kv.push("n_options", chain.len().to_string());
    kv.push_num("max_relative_error", max);
    kv.push_num("tolerance", GRADCHECK_TOLERANCE);
    kv.push("result", if pass { "PASS" } else { "FAIL" });
    emit(out, &kv.to_text())?;
    if pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed)
    }
}
