//! Assembly of the approximating processes from a driver triple, regime by
//! regime, plus the exact fBm/sfBm covariance functions they are validated
//! against.
//!
//! The time-inverted tail terms are taken with the leading minus sign in both
//! regimes: the Fubini reduction of the iterated integral (with the drivers
//! anchored at 0) must match the exact tail contribution of the
//! reflected-kernel reduction, and only the minus convention does. A debug
//! switch flips it so the covariance suite can discriminate empirically.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{eval_kernel, KernelSpec, ModelParams, Regime};
use crate::paths::DriverSet;
use crate::stieltjes::{integrate_dz, z3_tail_term, TailKind};

/// Which process to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Target {
    W,
    Y,
    S,
}

impl Target {
    pub fn label(&self) -> &'static str {
        match self {
            Target::W => "W",
            Target::Y => "Y",
            Target::S => "S",
        }
    }
}

/// Sign convention for the `dZ3` tail terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TailSign {
    /// The Fubini-consistent minus convention (default).
    Reduced,
    /// Debug switch: flipped sign, kept to let the covariance suite
    /// discriminate the conventions.
    Flipped,
}

/// Deterministic evaluator of `W^(n)`, `Y^(n)`, `S^(n)` for one driver set.
#[derive(Debug, Clone)]
pub struct ApproximantEvaluator<'a> {
    pub params: &'a ModelParams,
    pub drivers: &'a DriverSet,
    pub regime: Regime,
    tail_sign: TailSign,
    tail_tol: f64,
}

impl<'a> ApproximantEvaluator<'a> {
    pub fn new(params: &'a ModelParams, drivers: &'a DriverSet) -> Result<Self> {
        if drivers.z1.lo() != 0.0
            || drivers.z1.hi() != params.horizon
            || drivers.z2.lo() != params.anchor
            || drivers.z2.hi() != 0.0
            || drivers.z3.lo() != 1.0 / params.anchor
            || drivers.z3.hi() != 0.0
        {
            return Err(Error::InvalidParameter(
                "driver domains do not match the model window".into(),
            ));
        }
        Ok(Self {
            params,
            drivers,
            regime: params.regime(),
            tail_sign: TailSign::Reduced,
            tail_tol: 1e-9,
        })
    }

    pub fn with_tail_sign(mut self, sign: TailSign) -> Self {
        self.tail_sign = sign;
        self
    }

    pub fn with_tail_tol(mut self, tol: f64) -> Self {
        self.tail_tol = tol;
        self
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(0.0..=self.params.horizon).contains(&t) {
            return Err(Error::OutOfPathDomain {
                t,
                lo: 0.0,
                hi: self.params.horizon,
            });
        }
        Ok(())
    }

    fn tail(&self, kind: TailKind, t: f64, cutoff: f64) -> Result<f64> {
        let v = z3_tail_term(
            kind,
            t,
            self.params.hurst,
            self.params.anchor,
            cutoff,
            &self.drivers.z3,
            self.tail_tol,
        )?;
        Ok(match self.tail_sign {
            TailSign::Reduced => v,
            TailSign::Flipped => -v,
        })
    }

    /// `W^(n)(t)`.
    pub fn eval_w(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        let p = self.params;
        let h = p.hurst;
        let (a, eps) = (p.anchor, p.eps_n);
        let z1 = &self.drivers.z1;
        let z2 = &self.drivers.z2;

        let history = KernelSpec::history(t, h)?;
        let history_at_a = eval_kernel(&history, a)?;
        let z2_at_a = self.drivers.z2.values()[0];

        let value = match self.regime {
            Regime::AboveHalf => {
                let forward = KernelSpec::forward(t, h)?;
                integrate_dz(&forward, 0.0, t, z1)?
                    + integrate_dz(&history, a, 0.0, z2)?
                    + history_at_a * z2_at_a
                    + self.tail(TailKind::History, t, eps.max(1.0 / a))?
            }
            Regime::BelowHalf => {
                let split = (t + eps).max(0.0);
                let forward = KernelSpec::forward(t, h)?;
                let forward_shifted = KernelSpec::forward_shifted(t, h, eps)?;
                integrate_dz(&forward, 0.0, split, z1)?
                    + integrate_dz(&forward_shifted, split, t, z1)?
                    + integrate_dz(&history, a, eps, z2)?
                    + history_at_a * z2_at_a
                    + self.tail(TailKind::History, t, 0.0)?
            }
        };
        Ok(p.c_norm * value)
    }

    /// `Y^(n)(t)`.
    pub fn eval_y(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        let p = self.params;
        let h = p.hurst;
        let (a, eps) = (p.anchor, p.eps_n);
        let z2 = &self.drivers.z2;

        let reflected = KernelSpec::reflected(t, h)?;
        let reflected_at_a = eval_kernel(&reflected, a)?;
        let z2_at_a = self.drivers.z2.values()[0];
        let power = KernelSpec::power(h)?;

        let value = match self.regime {
            Regime::AboveHalf => {
                -integrate_dz(&power, -t, 0.0, z2)?
                    + integrate_dz(&reflected, a, -t, z2)?
                    + reflected_at_a * z2_at_a
                    + self.tail(TailKind::Reflected, t, eps.max(1.0 / a))?
            }
            Regime::BelowHalf => {
                let near_split = eps.max(-t);
                let far_split = a.max(-t + eps);
                let shifted_power = KernelSpec::shifted_power(h, eps)?;
                let mut acc = -integrate_dz(&power, -t, near_split, z2)?
                    - integrate_dz(&shifted_power, near_split, 0.0, z2)?
                    + reflected_at_a * z2_at_a
                    + self.tail(TailKind::Reflected, t, 0.0)?
                    + integrate_dz(&reflected, a, far_split, z2)?;
                // Indicator uses <= exactly as printed; at t = -eps the
                // integrand is identically zero, so either branch agrees.
                if -eps <= t {
                    let reflected_late = KernelSpec::reflected(t + eps, h)?;
                    acc += integrate_dz(&reflected_late, far_split, -t, z2)?;
                }
                acc
            }
        };
        Ok(p.c_norm * value)
    }

    /// `S^(n)(t) = W^(n)(t) + Y^(n)(t)`.
    pub fn eval_s(&self, t: f64) -> Result<f64> {
        Ok(self.eval_w(t)? + self.eval_y(t)?)
    }

    pub fn eval(&self, target: Target, t: f64) -> Result<f64> {
        match target {
            Target::W => self.eval_w(t),
            Target::Y => self.eval_y(t),
            Target::S => self.eval_s(t),
        }
    }

    /// Evaluates the target on a time grid. Kernel integrals are recomputed
    /// per grid point; only the sorted segment arrays are shared.
    pub fn eval_on_grid(&self, target: Target, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter().map(|&t| self.eval(target, t)).collect()
    }
}

/// Exact covariance model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CovModel {
    Fbm,
    Sfbm,
}

impl CovModel {
    pub fn label(&self) -> &'static str {
        match self {
            CovModel::Fbm => "fbm",
            CovModel::Sfbm => "sfbm",
        }
    }
}

/// Closed-form covariance of fBm or sfBm, symmetric in `(s, t)`.
pub fn exact_covariance(model: CovModel, s: f64, t: f64, hurst: f64) -> Result<f64> {
    if s < 0.0 || t < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "covariance times must be nonnegative, got ({s}, {t})"
        )));
    }
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Hurst parameter must lie in (0,1), got {hurst}"
        )));
    }
    let two_h = 2.0 * hurst;
    let value = match model {
        CovModel::Fbm => {
            0.5 * (s.powf(two_h) + t.powf(two_h) - (s - t).abs().powf(two_h))
        }
        CovModel::Sfbm => {
            s.powf(two_h) + t.powf(two_h)
                - 0.5 * ((s + t).powf(two_h) + (s - t).abs().powf(two_h))
        }
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{DriverMode, PiecewisePath, SeedRecord};
    use approx::assert_abs_diff_eq;

    fn zero_path(lo: f64, hi: f64) -> PiecewisePath {
        PiecewisePath::new(vec![lo, hi], vec![0.0, 0.0], 1).unwrap()
    }

    fn transport_drivers(params: &ModelParams, seed: u64) -> DriverSet {
        DriverSet::generate(params, DriverMode::Transport, seed, 0).unwrap()
    }

    #[test]
    fn processes_vanish_at_time_zero() {
        for (h, beta) in [(0.7, 0.3), (0.3, 0.35)] {
            let params = ModelParams::new(h, beta, 1.0, -4.0, 25, 0.8).unwrap();
            let drivers = transport_drivers(&params, 7);
            let ev = ApproximantEvaluator::new(&params, &drivers).unwrap();
            assert_eq!(ev.eval_w(0.0).unwrap(), 0.0);
            assert_eq!(ev.eval_y(0.0).unwrap(), 0.0);
            assert_eq!(ev.eval_s(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_drivers_give_zero_processes() {
        let params = ModelParams::new(0.7, 0.3, 1.0, -4.0, 25, 1.0).unwrap();
        let drivers = DriverSet {
            z1: zero_path(0.0, 1.0),
            z2: zero_path(-4.0, 0.0),
            z3: zero_path(-0.25, 0.0),
            mode: DriverMode::Transport,
            seed: SeedRecord {
                master_seed: 0,
                replica: 0,
            },
        };
        let ev = ApproximantEvaluator::new(&params, &drivers).unwrap();
        for t in [0.0, 0.3, 0.7, 1.0] {
            assert_abs_diff_eq!(ev.eval_w(t).unwrap(), 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(ev.eval_y(t).unwrap(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn s_is_the_sum_of_w_and_y() {
        for (h, beta) in [(0.7, 0.3), (0.3, 0.35)] {
            let params = ModelParams::new(h, beta, 1.0, -4.0, 18, 1.3).unwrap();
            let drivers = transport_drivers(&params, 11);
            let ev = ApproximantEvaluator::new(&params, &drivers).unwrap();
            for t in [0.1, 0.25, 0.5, 0.9, 1.0] {
                let w = ev.eval_w(t).unwrap();
                let y = ev.eval_y(t).unwrap();
                let s = ev.eval_s(t).unwrap();
                assert!((s - w - y).abs() <= 1e-12 * (1.0 + s.abs()));
            }
        }
    }

    #[test]
    fn linear_integrator_reproduces_hand_assembled_y() {
        // H = 0.7, Z3 = 0 and Z2(s) = s: the three Z2 terms in closed form.
        let params = ModelParams::new(0.7, 0.3, 1.0, -4.0, 100, 1.0).unwrap();
        let a = params.anchor;
        let drivers = DriverSet {
            z1: zero_path(0.0, 1.0),
            z2: PiecewisePath::new(vec![a, 0.0], vec![a, 0.0], 1).unwrap(),
            z3: zero_path(1.0 / a, 0.0),
            mode: DriverMode::Transport,
            seed: SeedRecord {
                master_seed: 0,
                replica: 0,
            },
        };
        let ev = ApproximantEvaluator::new(&params, &drivers).unwrap();
        for t in [0.25, 0.6, 1.0] {
            let got = ev.eval_y(t).unwrap();
            // -int_{-t}^0 (-s)^{0.2} ds + int_a^{-t} F_t ds + F_t(a) a.
            let q = 1.2;
            let term1 = -t.powf(q) / q;
            let term2 =
                (t.powf(q) + (-t - a).powf(q) - (-a).powf(q)) / q;
            let term3 = a * ((-t - a).powf(0.2) - (-a).powf(0.2));
            assert_abs_diff_eq!(got, term1 + term2 + term3, epsilon = 1e-12);
        }
    }

    #[test]
    fn evaluation_is_linear_in_the_drivers() {
        for (h, beta) in [(0.7, 0.3), (0.3, 0.35)] {
            let params = ModelParams::new(h, beta, 1.0, -4.0, 30, 0.9).unwrap();
            let drivers = transport_drivers(&params, 3);
            let scaled = drivers.scaled(-2.5);
            let ev = ApproximantEvaluator::new(&params, &drivers).unwrap();
            let ev_scaled = ApproximantEvaluator::new(&params, &scaled).unwrap();
            for t in [0.2, 0.55, 1.0] {
                for target in [Target::W, Target::Y, Target::S] {
                    let v = ev.eval(target, t).unwrap();
                    let vs = ev_scaled.eval(target, t).unwrap();
                    assert!(
                        (vs - -2.5 * v).abs() <= 1e-12 * (1.0 + vs.abs()),
                        "target {target:?} t {t}"
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_time_outside_horizon() {
        let params = ModelParams::new(0.7, 0.3, 1.0, -4.0, 10, 1.0).unwrap();
        let drivers = transport_drivers(&params, 1);
        let ev = ApproximantEvaluator::new(&params, &drivers).unwrap();
        assert!(ev.eval_w(1.5).is_err());
        assert!(ev.eval_y(-0.1).is_err());
    }

    #[test]
    fn continuity_at_regime_breakpoints() {
        // No jump at t = -eps_n where the indicator and max/min switch.
        let params = ModelParams::new(0.3, 0.45, 1.0, -2.0, 4, 1.0).unwrap();
        let t_star = -params.eps_n;
        assert!(t_star > 0.0 && t_star < 1.0);
        let drivers = transport_drivers(&params, 23);
        let ev = ApproximantEvaluator::new(&params, &drivers).unwrap();
        let base = ev.eval_s(t_star).unwrap();
        let mut prev_gap = f64::INFINITY;
        for k in [6, 9, 12, 15, 18] {
            let delta = 2f64.powi(-k);
            let gap = (ev.eval_s(t_star + delta).unwrap() - base)
                .abs()
                .max((ev.eval_s(t_star - delta).unwrap() - base).abs());
            assert!(gap <= prev_gap * 1.5 + 1e-9, "gap {gap} at k {k}");
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-3);
    }

    #[test]
    fn exact_covariance_examples() {
        let v = exact_covariance(CovModel::Sfbm, 1.0, 1.0, 0.7).unwrap();
        assert_abs_diff_eq!(v, 2.0 - 2f64.powf(0.4), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.680492, epsilon = 1e-6);

        for h in [0.3, 0.5, 0.7] {
            assert_abs_diff_eq!(
                exact_covariance(CovModel::Fbm, 1.0, 1.0, h).unwrap(),
                1.0,
                epsilon = 1e-15
            );
            assert_eq!(exact_covariance(CovModel::Sfbm, 0.0, 0.8, h).unwrap(), 0.0);
        }
        // Symmetry.
        let a = exact_covariance(CovModel::Sfbm, 0.3, 0.9, 0.3).unwrap();
        let b = exact_covariance(CovModel::Sfbm, 0.9, 0.3, 0.3).unwrap();
        assert_eq!(a, b);
        assert!(exact_covariance(CovModel::Sfbm, -1.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn tail_sign_flip_changes_values_when_tail_is_active() {
        let params = ModelParams::new(0.7, 0.3, 1.0, -4.0, 100, 1.0).unwrap();
        let drivers = transport_drivers(&params, 2);
        let ev = ApproximantEvaluator::new(&params, &drivers).unwrap();
        let flipped = ApproximantEvaluator::new(&params, &drivers)
            .unwrap()
            .with_tail_sign(TailSign::Flipped);
        let t = 0.8;
        let v = ev.eval_y(t).unwrap();
        let vf = flipped.eval_y(t).unwrap();
        assert!((v - vf).abs() > 1e-12);
    }
}
