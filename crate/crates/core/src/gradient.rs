//! Analytical gradient of the call price with respect to `[v0, v̄, ρ, κ, σ]`.
//!
//! Differentiating the continuous characteristic function gives
//! `∇φ(u) = φ(u)·h(u)`, where every component of `h` is assembled from a
//! small set of shared partial derivatives ([`HFragments`]). One evaluation of
//! the characteristic-function terms per quadrature node therefore serves all
//! five gradient integrands.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::charfn::{cf_terms, char_fn_from_terms, CharFnTerms, HestonParams, MarketContext, Param};
use crate::error::{HestonError, Result};
use crate::pricer::{fourier_kernel, price, OptionSpec, QuoteChain};
use crate::quadrature::{integrate_vectorized, QuadratureRule};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default central-difference increment.
pub const FD_EPSILON: f64 = 1e-4;

/// Price sensitivities in `[v0, v̄, ρ, κ, σ]` order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradientVector {
    pub d_v0: f64,
    pub d_v_bar: f64,
    pub d_rho: f64,
    pub d_kappa: f64,
    pub d_sigma: f64,
}

impl GradientVector {
    pub fn from_array(g: [f64; 5]) -> Self {
        GradientVector {
            d_v0: g[0],
            d_v_bar: g[1],
            d_rho: g[2],
            d_kappa: g[3],
            d_sigma: g[4],
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.d_v0, self.d_v_bar, self.d_rho, self.d_kappa, self.d_sigma]
    }

    pub fn get(&self, p: Param) -> f64 {
        self.to_array()[p.index()]
    }
}

/// Partial derivatives of the characteristic-function terms.
///
/// `B` itself is never formed; only `(∂B/∂ρ)/B` and `(∂B/∂κ)/B` are needed.
/// Like the terms they derive from, `a1_*` and `a2_*` may carry the common
/// rescaling factor of [`CharFnTerms`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HFragments {
    pub d_rho: Complex64,
    pub a2_rho: Complex64,
    pub b_rho_over_b: Complex64,
    pub a1_rho: Complex64,
    pub a_rho: Complex64,
    pub a_kappa: Complex64,
    pub b_kappa_over_b: Complex64,
    pub d_sigma: Complex64,
    pub a1_sigma: Complex64,
    pub a2_sigma: Complex64,
    pub a_sigma: Complex64,
}

pub fn fragments(params: &HestonParams, terms: &CharFnTerms) -> HFragments {
    let (sigma, rho) = (params.sigma(), params.rho());
    let CharFnTerms {
        u,
        t,
        xi,
        d,
        a1,
        a2,
        a,
        sinh_half: sh,
        cosh_half: ch,
        ..
    } = *terms;
    let iu = I * u;
    let w = u * u + iu;

    let d_rho = -xi * sigma * iu / d;
    let a2_rho = -sigma * iu * (2.0 + t * xi) / (2.0 * d) * (xi * ch + d * sh);
    let b_rho_over_b = d_rho / d - a2_rho / a2;
    let a1_rho = -iu * w * t * xi * sigma / (2.0 * d) * ch;
    let a_rho = a1_rho / a2 - a / a2 * a2_rho;

    // κ and ρ enter A and d only through ξ = κ - σρiu, hence ∂/∂κ = i/(σu)·∂/∂ρ.
    let to_kappa = I / (sigma * u);
    let a_kappa = to_kappa * a_rho;
    let b_kappa_over_b = to_kappa * b_rho_over_b + t / 2.0;

    let d_sigma = (rho / sigma - 1.0 / xi) * d_rho + sigma * u * u / d;
    let a1_sigma = w * t / 2.0 * d_sigma * ch;
    let a2_sigma = rho / sigma * a2_rho - (2.0 + t * xi) / (iu * t * xi) * a1_rho + sigma * t * a1 / 2.0;
    let a_sigma = a1_sigma / a2 - a / a2 * a2_sigma;

    HFragments {
        d_rho,
        a2_rho,
        b_rho_over_b,
        a1_rho,
        a_rho,
        a_kappa,
        b_kappa_over_b,
        d_sigma,
        a1_sigma,
        a2_sigma,
        a_sigma,
    }
}

/// `h(u)` from precomputed terms, so that `∂φ/∂θ_j = φ·h_j`.
pub fn h_from_terms(params: &HestonParams, terms: &CharFnTerms) -> [Complex64; 5] {
    let (v0, v_bar, rho, kappa, sigma) = (
        params.v0(),
        params.v_bar(),
        params.rho(),
        params.kappa(),
        params.sigma(),
    );
    let f = fragments(params, terms);
    let (u, t, d, a2) = (terms.u, terms.t, terms.d, terms.a2);
    let iu = I * u;
    let s2 = sigma * sigma;
    // `log_b_reduced` = D - σρiu·t/2 absorbs the ρ-drift terms of h2, h4 and h5.
    let reduced = terms.log_b_reduced;

    let h1 = -terms.a;
    let h2 = (2.0 * kappa / s2) * reduced;
    let h3 = -v0 * f.a_rho + (2.0 * kappa * v_bar) / (s2 * d) * (f.d_rho - d / a2 * f.a2_rho)
        - iu * (t * kappa * v_bar / sigma);
    let h4 = v0 / (sigma * iu) * f.a_rho
        + (2.0 * v_bar / s2) * reduced
        + (2.0 * kappa * v_bar / s2) * f.b_kappa_over_b;
    let h5 = -v0 * f.a_sigma - (4.0 * kappa * v_bar / (s2 * sigma)) * reduced
        + (2.0 * kappa * v_bar) / (s2 * d) * (f.d_sigma - d / a2 * f.a2_sigma)
        - iu * (t * kappa * v_bar * rho / s2);
    [h1, h2, h3, h4, h5]
}

/// `h(u)` at complex frequency `u` and maturity `t`.
pub fn h_vector(params: &HestonParams, u: Complex64, t: f64) -> Result<[Complex64; 5]> {
    let terms = cf_terms(params, u, t)?;
    Ok(h_from_terms(params, &terms))
}

/// `Re(e^{-iu log K}/(iu)·φ(z)·h(z))` for the five components, `z = u + shift`.
fn gradient_integrands(
    params: &HestonParams,
    market: &MarketContext,
    opt: &OptionSpec,
    u: f64,
    shift: f64,
) -> Result<[f64; 5]> {
    let terms = cf_terms(params, Complex64::new(u, shift), opt.maturity)?;
    let phi = char_fn_from_terms(params, market, &terms);
    let h = h_from_terms(params, &terms);
    let z = fourier_kernel(opt.strike.ln(), u) * phi;
    Ok(h.map(|hj| (z * hj).re))
}

/// The price integrand followed by the five gradient integrands, each in the
/// combined form `Re(κ(u)φ(u-i)h(u-i)) - K·Re(κ(u)φ(u)h(u))` with
/// `κ(u) = e^{-iu log K}/(iu)` and `h = 1` for the price.
pub fn combined_integrands(
    params: &HestonParams,
    market: &MarketContext,
    opt: &OptionSpec,
    u: f64,
) -> Result<[f64; 6]> {
    let kern = fourier_kernel(opt.strike.ln(), u);
    let shifted = cf_terms(params, Complex64::new(u, -1.0), opt.maturity)?;
    let plain = cf_terms(params, Complex64::new(u, 0.0), opt.maturity)?;
    let z1 = kern * char_fn_from_terms(params, market, &shifted);
    let z2 = kern * char_fn_from_terms(params, market, &plain);
    let h1 = h_from_terms(params, &shifted);
    let h2 = h_from_terms(params, &plain);
    let k = opt.strike;
    let mut out = [z1.re - k * z2.re, 0.0, 0.0, 0.0, 0.0, 0.0];
    for j in 0..5 {
        out[j + 1] = (z1 * h1[j]).re - k * (z2 * h2[j]).re;
    }
    Ok(out)
}

/// Analytical price gradient: two vectorised integrals per option, one over
/// `φ(u-i)h(u-i)` and one over `φ(u)h(u)`. Puts share the call gradient since
/// the parity adjustment does not depend on the model parameters.
pub fn price_gradient(
    params: &HestonParams,
    market: &MarketContext,
    opt: &OptionSpec,
    rule: &QuadratureRule,
) -> Result<GradientVector> {
    let first = integrate_vectorized(rule, |u| gradient_integrands(params, market, opt, u, -1.0))?;
    let second = integrate_vectorized(rule, |u| gradient_integrands(params, market, opt, u, 0.0))?;
    let scale = market.discount(opt.maturity) / PI;
    let mut g = [0.0; 5];
    for j in 0..5 {
        g[j] = scale * (first[j] - opt.strike * second[j]);
    }
    Ok(GradientVector::from_array(g))
}

/// Central differences `(C(θ+εe_j) - C(θ-εe_j))/(2ε)` with the same `ε` on
/// every parameter.
pub fn fd_gradient(
    params: &HestonParams,
    market: &MarketContext,
    opt: &OptionSpec,
    epsilon: f64,
    rule: &QuadratureRule,
) -> Result<GradientVector> {
    if !(epsilon > 0.0) {
        return Err(HestonError::domain("finite-difference increment must be positive"));
    }
    let mut g = [0.0; 5];
    for p in Param::ALL {
        let x = params.get(p);
        let up = params.with(p, x + epsilon).map_err(|e| perturbation_error(p, e))?;
        let down = params.with(p, x - epsilon).map_err(|e| perturbation_error(p, e))?;
        g[p.index()] = (price(&up, market, opt, rule)? - price(&down, market, opt, rule)?) / (2.0 * epsilon);
    }
    Ok(GradientVector::from_array(g))
}

fn perturbation_error(p: Param, e: HestonError) -> HestonError {
    HestonError::domain(format!("perturbing {} leaves the domain: {e}", p.name()))
}

/// The 5×n Jacobian of the residual vector: column `i` is the price gradient
/// of quote `i`.
pub fn jacobian(params: &HestonParams, chain: &QuoteChain, rule: &QuadratureRule) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(5, chain.len());
    for (i, opt) in chain.options().enumerate() {
        let g = price_gradient(params, chain.market(), opt, rule).map_err(|e| e.at_quote(i))?;
        for (j, v) in g.to_array().into_iter().enumerate() {
            jac[(j, i)] = v;
        }
    }
    Ok(jac)
}

/// Jacobian assembled column by column from [`fd_gradient`].
pub fn fd_jacobian(
    params: &HestonParams,
    chain: &QuoteChain,
    epsilon: f64,
    rule: &QuadratureRule,
) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(5, chain.len());
    for (i, opt) in chain.options().enumerate() {
        let g = fd_gradient(params, chain.market(), opt, epsilon, rule).map_err(|e| e.at_quote(i))?;
        for (j, v) in g.to_array().into_iter().enumerate() {
            jac[(j, i)] = v;
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charfn::{char_fn, Representation};
    use crate::pricer::{price_call, Quote};
    use crate::quadrature::integrate;

    fn reference() -> HestonParams {
        HestonParams::new(0.08, 0.1, -0.8, 3.0, 0.25).unwrap()
    }

    fn market() -> MarketContext {
        MarketContext::new(1.0, 0.02).unwrap()
    }

    /// Central difference of a complex-valued function of one parameter.
    fn fd_param<F>(params: &HestonParams, p: Param, h: f64, f: F) -> Complex64
    where
        F: Fn(&HestonParams) -> Complex64,
    {
        let x = params.get(p);
        let up = params.with(p, x + h).unwrap();
        let down = params.with(p, x - h).unwrap();
        (f(&up) - f(&down)) / (2.0 * h)
    }

    fn rel(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn h_matches_finite_differences_of_char_fn() {
        let p = reference();
        let m = market();
        for &t in &[0.1, 1.0, 15.0] {
            for &u in &[0.5, 5.0, 50.0] {
                let uc = Complex64::new(u, 0.0);
                let phi = char_fn(Representation::Cui, &p, &m, uc, t).unwrap();
                let h = h_vector(&p, uc, t).unwrap();
                for param in Param::ALL {
                    let fd = fd_param(&p, param, 1e-6, |q| {
                        char_fn(Representation::Cui, q, &m, uc, t).unwrap()
                    });
                    let analytic = phi * h[param.index()];
                    if fd.norm() < 1e-250 {
                        continue;
                    }
                    let err = rel(analytic, fd);
                    assert!(err < 1e-5, "t={t} u={u} {param:?}: {analytic} vs {fd} (rel {err})");
                }
            }
        }
    }

    #[test]
    fn h_matches_finite_differences_at_shifted_argument() {
        let p = reference();
        let m = market();
        for &t in &[0.25, 2.0] {
            for &u in &[0.05, 1.0, 8.0] {
                let uc = Complex64::new(u, -1.0);
                let phi = char_fn(Representation::Cui, &p, &m, uc, t).unwrap();
                let h = h_vector(&p, uc, t).unwrap();
                for param in Param::ALL {
                    let fd = fd_param(&p, param, 1e-6, |q| {
                        char_fn(Representation::Cui, q, &m, uc, t).unwrap()
                    });
                    assert!(rel(phi * h[param.index()], fd) < 1e-5, "t={t} u={u} {param:?}");
                }
            }
        }
    }

    #[test]
    fn h1_vanishes_at_zero_frequency() {
        let h = h_vector(&reference(), Complex64::new(0.0, 0.0), 1.0).unwrap();
        assert_eq!(h[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn fragments_match_finite_differences() {
        let p = reference();
        let t = 1.0;
        let u = Complex64::new(3.0, 0.0);
        let terms = cf_terms(&p, u, t).unwrap();
        let f = fragments(&p, &terms);
        let h = 1e-6;
        let term = |q: &HestonParams, pick: fn(&CharFnTerms) -> Complex64| pick(&cf_terms(q, u, t).unwrap());
        let checks: [(Param, Complex64, fn(&CharFnTerms) -> Complex64); 9] = [
            (Param::Rho, f.d_rho, |c| c.d),
            (Param::Rho, f.a2_rho, |c| c.a2),
            (Param::Rho, f.a1_rho, |c| c.a1),
            (Param::Rho, f.a_rho, |c| c.a),
            (Param::Kappa, f.a_kappa, |c| c.a),
            (Param::Sigma, f.d_sigma, |c| c.d),
            (Param::Sigma, f.a1_sigma, |c| c.a1),
            (Param::Sigma, f.a2_sigma, |c| c.a2),
            (Param::Sigma, f.a_sigma, |c| c.a),
        ];
        for (k, (param, analytic, pick)) in checks.into_iter().enumerate() {
            let fd = fd_param(&p, param, h, |q| term(q, pick));
            assert!(rel(analytic, fd) < 1e-6, "check {k}: {analytic} vs {fd}");
        }
        // log B is continuous here, so its derivatives follow from D.
        let b_rho = fd_param(&p, Param::Rho, h, |q| cf_terms(q, u, t).unwrap().log_b);
        let b_kappa = fd_param(&p, Param::Kappa, h, |q| cf_terms(q, u, t).unwrap().log_b);
        assert!(rel(f.b_rho_over_b, b_rho) < 1e-6);
        assert!(rel(f.b_kappa_over_b, b_kappa) < 1e-6);
    }

    #[test]
    fn kappa_fragment_is_rotated_rho_fragment() {
        let p = reference();
        let u = 2.0;
        let terms = cf_terms(&p, Complex64::new(u, 0.0), 1.0).unwrap();
        let f = fragments(&p, &terms);
        let direct = fd_param(&p, Param::Kappa, 1e-6, |q| cf_terms(q, Complex64::new(u, 0.0), 1.0).unwrap().a);
        let rotated = I / (p.sigma() * u) * f.a_rho;
        assert!(rel(rotated, f.a_kappa) < 1e-12);
        assert!(rel(rotated, direct) < 1e-6);
    }

    #[test]
    fn price_gradient_matches_central_differences() {
        let (p, m) = (reference(), market());
        let rule = QuadratureRule::default();
        let opt = OptionSpec::call(1.1, 1.0).unwrap();
        let g = price_gradient(&p, &m, &opt, &rule).unwrap().to_array();
        let fd = fd_gradient(&p, &m, &opt, FD_EPSILON, &rule).unwrap().to_array();
        for j in 0..5 {
            let err = (g[j] - fd[j]).abs() / fd[j].abs();
            assert!(err < 1e-5, "component {j}: {} vs {} ({err})", g[j], fd[j]);
        }
        assert!(g[Param::V0.index()] > 0.0);
        assert!(g[Param::VBar.index()] > 0.0);
    }

    #[test]
    fn vectorised_equals_scalar_components() {
        let (p, m) = (reference(), market());
        let rule = QuadratureRule::default();
        let opt = OptionSpec::call(0.95, 0.5).unwrap();
        let g = price_gradient(&p, &m, &opt, &rule).unwrap().to_array();
        for j in 0..5 {
            let first = integrate(&rule, |u| Ok(gradient_integrands(&p, &m, &opt, u, -1.0)?[j])).unwrap();
            let second = integrate(&rule, |u| Ok(gradient_integrands(&p, &m, &opt, u, 0.0)?[j])).unwrap();
            let scalar = m.discount(0.5) / PI * (first - 0.95 * second);
            assert!((g[j] - scalar).abs() <= 1e-13 * scalar.abs().max(1.0), "{j}");
        }
    }

    #[test]
    fn integrands_are_conjugate_symmetric() {
        // g(u) + g(-u) is real for the full-line extension of every integrand.
        let (p, m) = (reference(), market());
        let opt = OptionSpec::call(1.1, 1.0).unwrap();
        for &u in &[0.3, 4.0, 30.0] {
            for shift in [-1.0, 0.0] {
                let eval = |v: f64| {
                    let terms = cf_terms(&p, Complex64::new(v, shift), 1.0).unwrap();
                    let z = fourier_kernel(opt.strike.ln(), v) * char_fn_from_terms(&p, &m, &terms);
                    h_from_terms(&p, &terms).map(|h| z * h)
                };
                let (a, b) = (eval(u), eval(-u));
                for j in 0..5 {
                    let s = a[j] + b[j];
                    assert!(s.im.abs() < 1e-12 * a[j].norm().max(1.0), "u={u} shift={shift} j={j}");
                }
            }
        }
    }

    #[test]
    fn tiny_increment_degrades_fd_gradient() {
        let (p, m) = (reference(), market());
        let rule = QuadratureRule::default();
        let opt = OptionSpec::call(1.1, 1.0).unwrap();
        let g = price_gradient(&p, &m, &opt, &rule).unwrap().to_array();
        let err = |eps: f64| {
            let fd = fd_gradient(&p, &m, &opt, eps, &rule).unwrap().to_array();
            (0..5).map(|j| (fd[j] - g[j]).abs() / g[j].abs()).fold(0.0, f64::max)
        };
        assert!(err(1e-12) > 100.0 * err(1e-4));
    }

    #[test]
    fn fd_gradient_rejects_out_of_domain_perturbation() {
        let p = HestonParams::new(0.08, 0.1, 0.99995, 3.0, 0.25).unwrap();
        let opt = OptionSpec::call(1.0, 1.0).unwrap();
        let err = fd_gradient(&p, &market(), &opt, 1e-4, &QuadratureRule::default()).unwrap_err();
        assert!(matches!(err, HestonError::Domain(_)));
    }

    #[test]
    fn put_and_call_share_gradient() {
        let (p, m) = (reference(), market());
        let rule = QuadratureRule::default();
        let call = fd_gradient(&p, &m, &OptionSpec::call(1.1, 1.0).unwrap(), 1e-4, &rule).unwrap();
        let put = fd_gradient(&p, &m, &OptionSpec::put(1.1, 1.0).unwrap(), 1e-4, &rule).unwrap();
        assert!((call.d_v0 - put.d_v0).abs() < 1e-10);
    }

    #[test]
    fn single_quote_jacobian_is_the_gradient() {
        let (p, m) = (reference(), market());
        let rule = QuadratureRule::default();
        let opt = OptionSpec::call(1.1, 1.0).unwrap();
        let c = price_call(&p, &m, &opt, &rule).unwrap();
        let chain = QuoteChain::new(m, vec![Quote { option: opt, price: c }]).unwrap();
        let jac = jacobian(&p, &chain, &rule).unwrap();
        let g = price_gradient(&p, &m, &opt, &rule).unwrap().to_array();
        assert_eq!(jac.shape(), (5, 1));
        for j in 0..5 {
            assert_eq!(jac[(j, 0)], g[j]);
        }
    }
}
