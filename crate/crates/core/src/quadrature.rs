//! Fixed quadrature rules on a truncated half-line `[0, ū]`.

use std::cell::Cell;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{HestonError, Result};

/// Lower endpoint of the trapezoid rule; the pricing integrands carry a
/// `1/(iu)` factor that cannot be evaluated at zero.
pub const TRAPEZOID_START: f64 = 1e-8;

/// Default production rule: 64 Gauss-Legendre nodes on `[0, 200]`.
pub const DEFAULT_NODES: usize = 64;
pub const DEFAULT_U_MAX: f64 = 200.0;

thread_local! {
    static INTEGRALS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`integrate_vectorized`] calls made on the current thread.
pub fn integral_evaluations() -> u64 {
    INTEGRALS.with(Cell::get)
}

pub fn reset_integral_evaluations() {
    INTEGRALS.with(|c| c.set(0));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleKind {
    GaussLegendre,
    Trapezoid,
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleKind::GaussLegendre => "gl",
            RuleKind::Trapezoid => "tr",
        })
    }
}

impl FromStr for RuleKind {
    type Err = HestonError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gl" | "gauss-legendre" => Ok(RuleKind::GaussLegendre),
            "tr" | "trapezoid" => Ok(RuleKind::Trapezoid),
            _ => Err(HestonError::domain(format!("unknown quadrature rule `{s}`"))),
        }
    }
}

/// Immutable nodes and weights for integration over `(0, u_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    kind: RuleKind,
    u_max: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(kind: RuleKind, n_nodes: usize, u_max: f64) -> Result<Self> {
        match kind {
            RuleKind::GaussLegendre => gauss_legendre_rule(n_nodes, u_max),
            RuleKind::Trapezoid => trapezoid_rule(n_nodes, u_max),
        }
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        gauss_legendre_rule(DEFAULT_NODES, DEFAULT_U_MAX).expect("default rule is valid")
    }
}

fn check_args(n_nodes: usize, u_max: f64) -> Result<()> {
    if n_nodes < 2 {
        return Err(HestonError::domain(format!("need at least 2 nodes, got {n_nodes}")));
    }
    if !(u_max > 0.0 && u_max.is_finite()) {
        return Err(HestonError::domain(format!("u_max must be positive, got {u_max}")));
    }
    Ok(())
}

/// Legendre polynomial `P_n(x)` and its derivative by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre_reference(n_nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let n = n_nodes;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        // Tricomi-type initial guess for the (k+1)-th largest root.
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - k] = x;
        nodes[k] = -x;
        weights[n - 1 - k] = w;
        weights[k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// The `n_nodes`-point Gauss-Legendre rule mapped affinely onto `[0, u_max]`.
/// Exact for polynomials of degree up to `2·n_nodes - 1`.
pub fn gauss_legendre_rule(n_nodes: usize, u_max: f64) -> Result<QuadratureRule> {
    check_args(n_nodes, u_max)?;
    let (x, w) = gauss_legendre_reference(n_nodes);
    let half = u_max / 2.0;
    Ok(QuadratureRule {
        kind: RuleKind::GaussLegendre,
        u_max,
        nodes: x.iter().map(|&x| half * (x + 1.0)).collect(),
        weights: w.iter().map(|&w| half * w).collect(),
    })
}

/// Composite trapezoid rule with equispaced nodes on `[TRAPEZOID_START, u_max]`.
pub fn trapezoid_rule(n_nodes: usize, u_max: f64) -> Result<QuadratureRule> {
    check_args(n_nodes, u_max)?;
    if u_max <= TRAPEZOID_START {
        return Err(HestonError::domain("u_max must exceed the trapezoid start"));
    }
    let h = (u_max - TRAPEZOID_START) / (n_nodes - 1) as f64;
    let nodes = (0..n_nodes)
        .map(|k| {
            if k == n_nodes - 1 {
                u_max
            } else {
                TRAPEZOID_START + k as f64 * h
            }
        })
        .collect();
    let mut weights = vec![h; n_nodes];
    weights[0] = h / 2.0;
    weights[n_nodes - 1] = h / 2.0;
    Ok(QuadratureRule {
        kind: RuleKind::Trapezoid,
        u_max,
        nodes,
        weights,
    })
}

/// Integrates `J` integrands at once: the block is called exactly once per
/// node and the weighted sums are accumulated componentwise in node order.
pub fn integrate_vectorized<const J: usize, F>(rule: &QuadratureRule, mut block: F) -> Result<[f64; J]>
where
    F: FnMut(f64) -> Result<[f64; J]>,
{
    INTEGRALS.with(|c| c.set(c.get() + 1));
    let mut acc = [0.0; J];
    for (node, (&u, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let values = block(u)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HestonError::Integration { node, u });
        }
        for (a, v) in acc.iter_mut().zip(values) {
            *a += w * v;
        }
    }
    Ok(acc)
}

/// Scalar convenience wrapper over [`integrate_vectorized`].
pub fn integrate<F>(rule: &QuadratureRule, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    integrate_vectorized::<1, _>(rule, |u| Ok([f(u)?])).map(|[v]| v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_rule() {
        let rule = gauss_legendre_rule(2, 2.0).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!((rule.nodes()[0] - (1.0 - s)).abs() < 1e-15);
        assert!((rule.nodes()[1] - (1.0 + s)).abs() < 1e-15);
        assert!((rule.weights()[0] - 1.0).abs() < 1e-15);
        assert!((rule.weights()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degree_exactness() {
        let rule = gauss_legendre_rule(5, 1.0).unwrap();
        let v = integrate(&rule, |x| Ok(x.powi(9))).unwrap();
        assert!((v - 0.1).abs() < 1e-14);
        for n in 2..=20 {
            let rule = gauss_legendre_rule(n, 1.0).unwrap();
            let deg = 2 * n as i32 - 1;
            let v = integrate(&rule, |x| Ok(x.powi(deg))).unwrap();
            assert!((v - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn reference_nodes_are_symmetric() {
        for n in [2, 3, 7, 64, 1000] {
            let (x, w) = gauss_legendre_reference(n);
            for k in 0..n {
                assert!((x[k] + x[n - 1 - k]).abs() < 1e-14);
                assert!((w[k] - w[n - 1 - k]).abs() < 1e-14);
            }
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn rule_invariants() {
        for n in [2, 10, 64, 1000] {
            let rule = gauss_legendre_rule(n, 200.0).unwrap();
            let sum: f64 = rule.weights().iter().sum();
            assert!((sum - 200.0).abs() < 1e-12 * 200.0, "n={n} sum={sum}");
            assert!(rule.weights().iter().all(|&w| w > 0.0));
            assert!(rule.nodes().windows(2).all(|p| p[0] < p[1]));
            assert!(rule.nodes()[0] > 0.0 && rule.nodes()[n - 1] < 200.0);
        }
    }

    #[test]
    fn trapezoid_basics() {
        let rule = trapezoid_rule(2, 1.0).unwrap();
        assert_eq!(rule.nodes(), &[TRAPEZOID_START, 1.0]);
        assert!((rule.weights()[0] - 0.5).abs() < 1e-8);
        let rule = trapezoid_rule(101, 1.0).unwrap();
        // exact for linear integrands on [TRAPEZOID_START, 1]
        let v = integrate(&rule, Ok).unwrap();
        assert!((v - 0.5 * (1.0 - TRAPEZOID_START * TRAPEZOID_START)).abs() < 1e-15);
    }

    #[test]
    fn bad_arguments() {
        assert!(gauss_legendre_rule(1, 1.0).is_err());
        assert!(gauss_legendre_rule(4, 0.0).is_err());
        assert!(trapezoid_rule(1, 1.0).is_err());
    }

    #[test]
    fn vectorized_moments() {
        let rule = gauss_legendre_rule(8, 1.0).unwrap();
        let mut calls = 0;
        let v = integrate_vectorized(&rule, |x| {
            calls += 1;
            Ok([1.0, x, x * x])
        })
        .unwrap();
        assert_eq!(calls, 8);
        assert!((v[0] - 1.0).abs() < 1e-14);
        assert!((v[1] - 0.5).abs() < 1e-14);
        assert!((v[2] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn non_finite_integrand_names_node() {
        let rule = gauss_legendre_rule(4, 1.0).unwrap();
        let third = rule.nodes()[2];
        let err = integrate(&rule, |x| Ok(if x == third { f64::NAN } else { x })).unwrap_err();
        assert_eq!(err, HestonError::Integration { node: 2, u: third });
    }

    #[test]
    fn counts_integral_calls() {
        reset_integral_evaluations();
        let rule = QuadratureRule::default();
        integrate(&rule, |_| Ok(1.0)).unwrap();
        integrate_vectorized(&rule, |_| Ok([1.0; 5])).unwrap();
        assert_eq!(integral_evaluations(), 2);
    }

    proptest::proptest! {
        #[test]
        fn vectorized_equals_scalar(a in -3.0f64..3.0, b in -3.0f64..3.0, n in 2usize..80) {
            let rule = gauss_legendre_rule(n, 7.0).unwrap();
            let f = |x: f64| [(a * x).sin(), (b * x).exp() / (1.0 + x), x.powf(1.5)];
            let v = integrate_vectorized(&rule, |x| Ok(f(x))).unwrap();
            for j in 0..3 {
                let s = integrate(&rule, |x| Ok(f(x)[j])).unwrap();
                proptest::prop_assert!((v[j] - s).abs() <= 1e-14 * s.abs().max(1.0));
            }
        }
    }
}
