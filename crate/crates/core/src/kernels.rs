//! Closed-form evaluation of the deterministic power-law kernels, the
//! truncation/rate schedules and the per-segment antiderivatives they admit.
//!
//! Every kernel used by the approximants is a short sum of terms
//! `coef * (center - s)^exponent` with `center - s > 0` on the kernel's
//! validity domain. Keeping that decomposition explicit is what makes exact
//! Riemann–Stieltjes integration against piecewise-linear paths possible:
//! each path segment contributes a closed-form primitive, never quadrature.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Model parameters shared by every module.
///
/// `eps_n` and `alpha_n` are derived from `(hurst, beta, level)` via
/// [`schedules`]; `c_norm` is the kernel normalization constant, usually
/// obtained from `oracles::calibrate_c`.
#[derive(Debug, Clone, Serialize)]
pub struct ModelParams {
    /// Hurst parameter, in (0,1) excluding 1/2.
    pub hurst: f64,
    /// Truncation exponent, |H - 1/2| < beta < 1/2.
    pub beta: f64,
    /// Horizon T > 0.
    pub horizon: f64,
    /// Tail anchor a < -T.
    pub anchor: f64,
    /// Approximation level n >= 2.
    pub level: u32,
    /// Truncation point -n^(-beta/|H-1/2|), in (-1, 0).
    pub eps_n: f64,
    /// Rate n^(-(1/2-beta)) (log n)^(5/2).
    pub alpha_n: f64,
    /// Kernel normalization constant C > 0.
    pub c_norm: f64,
}

/// Regime dispatch on the Hurst parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    AboveHalf,
    BelowHalf,
}

impl ModelParams {
    pub fn new(
        hurst: f64,
        beta: f64,
        horizon: f64,
        anchor: f64,
        level: u32,
        c_norm: f64,
    ) -> Result<Self> {
        let (eps_n, alpha_n) = schedules(hurst, beta, level)?;
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon T must be positive and finite, got {horizon}"
            )));
        }
        if !(anchor < -horizon) {
            return Err(Error::InvalidParameter(format!(
                "anchor a must satisfy a < -T, got a = {anchor}, T = {horizon}"
            )));
        }
        if !(c_norm > 0.0) || !c_norm.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "normalization C must be positive, got {c_norm}"
            )));
        }
        Ok(Self {
            hurst,
            beta,
            horizon,
            anchor,
            level,
            eps_n,
            alpha_n,
            c_norm,
        })
    }

    /// Same parameters at a different approximation level.
    pub fn with_level(&self, level: u32) -> Result<Self> {
        Self::new(
            self.hurst,
            self.beta,
            self.horizon,
            self.anchor,
            level,
            self.c_norm,
        )
    }

    /// Same parameters at a different tail anchor.
    pub fn with_anchor(&self, anchor: f64) -> Result<Self> {
        Self::new(
            self.hurst, self.beta, self.horizon, anchor, self.level, self.c_norm,
        )
    }

    pub fn regime(&self) -> Regime {
        if self.hurst > 0.5 {
            Regime::AboveHalf
        } else {
            Regime::BelowHalf
        }
    }

    /// Default tail anchor -4 * max(T, 1).
    pub fn default_anchor(horizon: f64) -> f64 {
        -4.0 * horizon.max(1.0)
    }
}

/// Validates `(H, beta, n)` and returns `(eps_n, alpha_n)`.
///
/// `eps_n = -n^(-beta/|H-1/2|)` so that `(-eps_n)^{|H-1/2|} = n^{-beta}`;
/// `alpha_n = n^(-(1/2-beta)) (ln n)^{5/2}` (natural logarithm).
pub fn schedules(hurst: f64, beta: f64, level: u32) -> Result<(f64, f64)> {
    let gap = check_hurst(hurst)?;
    if !(beta > gap && beta < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "beta must satisfy |H-1/2| < beta < 1/2, got beta = {beta}, |H-1/2| = {gap}"
        )));
    }
    if level < 2 {
        return Err(Error::InvalidParameter(format!(
            "level n must be at least 2, got {level}"
        )));
    }
    let n = f64::from(level);
    let eps_n = -n.powf(-beta / gap);
    let alpha_n = n.powf(-(0.5 - beta)) * n.ln().powf(2.5);
    Ok((eps_n, alpha_n))
}

fn check_hurst(hurst: f64) -> Result<f64> {
    if !(hurst > 0.0 && hurst < 1.0) || !hurst.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Hurst parameter must lie in (0,1), got {hurst}"
        )));
    }
    let gap = (hurst - 0.5).abs();
    if gap == 0.0 {
        return Err(Error::InvalidParameter(
            "Hurst parameter 1/2 is excluded".into(),
        ));
    }
    Ok(gap)
}

/// The kernel families of the integral representations.
///
/// With `p = H - 1/2` and `shift <= 0`:
/// - `Forward`:        (t - shift - s)^p        (the causal kernel, optionally shifted)
/// - `History`:        (t-s)^p - (-s)^p         (two-sided history kernel)
/// - `Reflected`:      (-t-s)^p - (-s)^p        (reflected-time kernel of the Y part)
/// - `Power`:          (-s)^p
/// - `ShiftedPower`:   (-s-shift)^p
/// - `ReflectedDiff`:  (-t-s)^p - (-t-shift-s)^p
/// - `ReflectedDeriv`: d/ds of `Reflected` = p [ (-s)^{p-1} - (-t-s)^{p-1} ]
/// - `HistoryDeriv`:   d/ds of `History`   = p [ (-s)^{p-1} - (t-s)^{p-1} ]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Forward,
    History,
    Reflected,
    Power,
    ShiftedPower,
    ReflectedDiff,
    ReflectedDeriv,
    HistoryDeriv,
}

/// Symbolic description of a power-law integrand.
#[derive(Debug, Clone, Copy)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub t: f64,
    pub hurst: f64,
    pub shift: f64,
}

/// One `coef * (center - s)^exponent` term.
#[derive(Debug, Clone, Copy)]
pub struct PowerTerm {
    pub coef: f64,
    pub center: f64,
    pub exponent: f64,
}

impl KernelSpec {
    fn build(kind: KernelKind, t: f64, hurst: f64, shift: f64) -> Result<Self> {
        check_hurst(hurst)?;
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel time argument must be nonnegative, got {t}"
            )));
        }
        if !(shift <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel shift must be nonpositive, got {shift}"
            )));
        }
        Ok(Self {
            kind,
            t,
            hurst,
            shift,
        })
    }

    pub fn forward(t: f64, hurst: f64) -> Result<Self> {
        Self::build(KernelKind::Forward, t, hurst, 0.0)
    }

    /// `Forward` evaluated at `s + shift`, i.e. `(t - shift - s)^p`.
    pub fn forward_shifted(t: f64, hurst: f64, shift: f64) -> Result<Self> {
        Self::build(KernelKind::Forward, t, hurst, shift)
    }

    pub fn history(t: f64, hurst: f64) -> Result<Self> {
        Self::build(KernelKind::History, t, hurst, 0.0)
    }

    pub fn reflected(t: f64, hurst: f64) -> Result<Self> {
        Self::build(KernelKind::Reflected, t, hurst, 0.0)
    }

    pub fn power(hurst: f64) -> Result<Self> {
        Self::build(KernelKind::Power, 0.0, hurst, 0.0)
    }

    pub fn shifted_power(hurst: f64, shift: f64) -> Result<Self> {
        Self::build(KernelKind::ShiftedPower, 0.0, hurst, shift)
    }

    pub fn reflected_diff(t: f64, hurst: f64, shift: f64) -> Result<Self> {
        Self::build(KernelKind::ReflectedDiff, t, hurst, shift)
    }

    pub fn reflected_deriv(t: f64, hurst: f64) -> Result<Self> {
        Self::build(KernelKind::ReflectedDeriv, t, hurst, 0.0)
    }

    pub fn history_deriv(t: f64, hurst: f64) -> Result<Self> {
        Self::build(KernelKind::HistoryDeriv, t, hurst, 0.0)
    }

    /// Decomposition into `coef (center - s)^exponent` terms.
    pub fn terms(&self) -> Vec<PowerTerm> {
        let p = self.hurst - 0.5;
        let t = self.t;
        match self.kind {
            KernelKind::Forward => vec![PowerTerm {
                coef: 1.0,
                center: t - self.shift,
                exponent: p,
            }],
            KernelKind::History => vec![
                PowerTerm {
                    coef: 1.0,
                    center: t,
                    exponent: p,
                },
                PowerTerm {
                    coef: -1.0,
                    center: 0.0,
                    exponent: p,
                },
            ],
            KernelKind::Reflected => vec![
                PowerTerm {
                    coef: 1.0,
                    center: -t,
                    exponent: p,
                },
                PowerTerm {
                    coef: -1.0,
                    center: 0.0,
                    exponent: p,
                },
            ],
            KernelKind::Power => vec![PowerTerm {
                coef: 1.0,
                center: 0.0,
                exponent: p,
            }],
            KernelKind::ShiftedPower => vec![PowerTerm {
                coef: 1.0,
                center: -self.shift,
                exponent: p,
            }],
            KernelKind::ReflectedDiff => vec![
                PowerTerm {
                    coef: 1.0,
                    center: -t,
                    exponent: p,
                },
                PowerTerm {
                    coef: -1.0,
                    center: -t - self.shift,
                    exponent: p,
                },
            ],
            KernelKind::ReflectedDeriv => vec![
                PowerTerm {
                    coef: p,
                    center: 0.0,
                    exponent: p - 1.0,
                },
                PowerTerm {
                    coef: -p,
                    center: -t,
                    exponent: p - 1.0,
                },
            ],
            KernelKind::HistoryDeriv => vec![
                PowerTerm {
                    coef: p,
                    center: 0.0,
                    exponent: p - 1.0,
                },
                PowerTerm {
                    coef: -p,
                    center: t,
                    exponent: p - 1.0,
                },
            ],
        }
    }

    /// Supremum of the open validity domain: the kernel is defined for
    /// `s < domain_sup()`.
    pub fn domain_sup(&self) -> f64 {
        match self.kind {
            KernelKind::Forward => self.t - self.shift,
            KernelKind::History | KernelKind::HistoryDeriv | KernelKind::Power => 0.0,
            KernelKind::Reflected | KernelKind::ReflectedDeriv | KernelKind::ReflectedDiff => {
                -self.t
            }
            KernelKind::ShiftedPower => -self.shift,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self.kind {
            KernelKind::Forward => "forward kernel",
            KernelKind::History => "history kernel",
            KernelKind::Reflected => "reflected kernel",
            KernelKind::Power => "power kernel",
            KernelKind::ShiftedPower => "shifted power kernel",
            KernelKind::ReflectedDiff => "reflected difference kernel",
            KernelKind::ReflectedDeriv => "reflected kernel derivative",
            KernelKind::HistoryDeriv => "history kernel derivative",
        }
    }
}

/// Evaluates `spec` at `s`. Outside the validity domain this is a domain
/// error, never a silent NaN.
pub fn eval_kernel(spec: &KernelSpec, s: f64) -> Result<f64> {
    if !(s < spec.domain_sup()) {
        return Err(Error::OutOfDomain {
            kernel: spec.kind_name().to_string(),
            s,
            reason: format!("requires s < {}", spec.domain_sup()),
        });
    }
    let mut acc = 0.0;
    for term in spec.terms() {
        acc += term.coef * (term.center - s).powf(term.exponent);
    }
    Ok(acc)
}

/// Closed form of `int_{s0}^{s1} (c - s)^p ds`.
///
/// Requires `c - s > 0` on the open interval; an endpoint singularity at
/// `s1 = c` is integrated exactly when `p > -1`. `s0` may be `-inf` when
/// `p < -1` (convergent tail). The degenerate interval returns 0.
pub fn power_primitive(c: f64, p: f64, s0: f64, s1: f64) -> Result<f64> {
    if s0 == s1 {
        return Ok(0.0);
    }
    if s0 > s1 {
        return Err(Error::InvalidParameter(format!(
            "power_primitive needs s0 <= s1, got [{s0}, {s1}]"
        )));
    }
    if c < s1 {
        if c >= s0 && p < 0.0 {
            return Err(Error::NonIntegrableSingularity {
                exponent: p,
                location: c,
                lo: s0,
                hi: s1,
            });
        }
        return Err(Error::OutOfDomain {
            kernel: "power primitive".into(),
            s: c,
            reason: format!("base c - s is nonpositive on part of [{s0}, {s1}]"),
        });
    }
    let q = p + 1.0;
    if c == s1 && p <= -1.0 {
        return Err(Error::NonIntegrableSingularity {
            exponent: p,
            location: c,
            lo: s0,
            hi: s1,
        });
    }
    if s0 == f64::NEG_INFINITY {
        if q >= 0.0 {
            return Err(Error::OutOfDomain {
                kernel: "power primitive".into(),
                s: s0,
                reason: format!("tail integral diverges for exponent {p}"),
            });
        }
        return Ok(-(c - s1).powf(q) / q);
    }
    if p == -1.0 {
        return Ok(((c - s0) / (c - s1)).ln());
    }
    Ok(((c - s0).powf(q) - (c - s1).powf(q)) / q)
}

/// Signed integral of a kernel over `[s0, s1]` by summing term primitives.
pub fn kernel_primitive(spec: &KernelSpec, s0: f64, s1: f64) -> Result<f64> {
    let mut acc = 0.0;
    for term in spec.terms() {
        acc += term.coef * power_primitive(term.center, term.exponent, s0, s1)?;
    }
    Ok(acc)
}

/// One violating sample of a checked inequality.
#[derive(Debug, Clone, Serialize)]
pub struct BoundViolation {
    pub t: f64,
    pub x: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Outcome of a randomized inequality check.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub trials: usize,
    /// Largest observed lhs/rhs (rhs > 0 samples only).
    pub max_ratio: f64,
    pub violations: Vec<BoundViolation>,
}

impl BoundReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            trials: 0,
            max_ratio: 0.0,
            violations: Vec::new(),
        }
    }

    /// Records one `lhs <= rhs` sample with relative slack `1e-12`.
    pub fn record(&mut self, t: f64, x: f64, lhs: f64, rhs: f64) {
        self.trials += 1;
        if rhs > 0.0 {
            let ratio = lhs / rhs;
            if ratio > self.max_ratio {
                self.max_ratio = ratio;
            }
        }
        if lhs > rhs * (1.0 + 1e-12) + 1e-300 {
            self.violations.push(BoundViolation { t, x, lhs, rhs });
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Report of [`validate_kernel_bounds`].
#[derive(Debug, Clone, Serialize)]
pub struct KernelBoundReport {
    pub derivative_bound: BoundReport,
    /// Pointwise domination of the tail integrand by `(-s)^{H+gamma-2}`.
    pub tail_domination: BoundReport,
    /// Closed-form value of the dominating tail integral (finite by construction).
    pub tail_integral_bound: f64,
    pub gamma: f64,
}

impl KernelBoundReport {
    pub fn passed(&self) -> bool {
        self.derivative_bound.passed()
            && self.tail_domination.passed()
            && self.tail_integral_bound.is_finite()
    }
}

/// Randomized check of the reflected-kernel derivative inequality
/// `|d/ds K_t(s)| <= |H-1/2| t (3/2-H) (-t-s)^{H-5/2}` on `s < -t`, plus the
/// tail-integrand domination that makes
/// `int_{-inf}^{a} |d/ds K_t(s)| (-s)^{1/2+gamma} ds` finite for
/// `gamma < (1-H) and 1/2`.
pub fn validate_kernel_bounds(
    hurst: f64,
    horizon: f64,
    anchor: f64,
    trials: usize,
    seed: u64,
) -> Result<KernelBoundReport> {
    check_hurst(hurst)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    if !(anchor < -horizon) {
        return Err(Error::InvalidParameter(format!(
            "anchor a must satisfy a < -T, got a = {anchor}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma_cap = (1.0 - hurst).min(0.5);
    let gamma = rng.random_range(0.05..0.95) * gamma_cap;
    let factor = (hurst - 0.5).abs() * (1.5 - hurst);

    let mut derivative_bound = BoundReport::new("reflected derivative bound");
    let mut tail_domination = BoundReport::new("tail integrand domination");

    for _ in 0..trials {
        let t = rng.random_range(0.0..horizon).max(1e-12);
        // Log-uniform offsets cover both the near-singular and far-tail ranges.
        let offset = 10f64.powf(rng.random_range(-6.0..2.5));
        let s = -t - offset;
        let deriv = eval_kernel(&KernelSpec::reflected_deriv(t, hurst)?, s)?;
        let rhs = factor * t * (-t - s).powf(hurst - 2.5);
        derivative_bound.record(t, s, deriv.abs(), rhs);

        // Domination is asserted on the tail s <= a.
        let s_tail = anchor - 10f64.powf(rng.random_range(-6.0..3.0));
        let deriv_tail = eval_kernel(&KernelSpec::reflected_deriv(t, hurst)?, s_tail)?;
        let lhs = deriv_tail.abs() * (-s_tail).powf(0.5 + gamma);
        let dom_const = factor * t * (1.0 - t / (-anchor)).powf(hurst - 2.5);
        let rhs_tail = dom_const * (-s_tail).powf(hurst + gamma - 2.0);
        tail_domination.record(t, s_tail, lhs, rhs_tail);
    }

    // int_{-inf}^{a} (-s)^{H+gamma-2} ds converges since H + gamma - 2 < -1.
    let dom_const = factor * horizon * (1.0 - horizon / (-anchor)).powf(hurst - 2.5);
    let tail_integral_bound =
        dom_const * power_primitive(0.0, hurst + gamma - 2.0, f64::NEG_INFINITY, anchor)?;

    Ok(KernelBoundReport {
        derivative_bound,
        tail_domination,
        tail_integral_bound,
        gamma,
    })
}
