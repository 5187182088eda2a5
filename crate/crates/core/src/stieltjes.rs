//! Riemann–Stieltjes integration of power-law kernels against
//! piecewise-linear paths.
//!
//! Because every kernel is a short sum of `coef (center - s)^exponent` terms
//! and every integrator is piecewise linear, `int K dZ` reduces per segment
//! to closed-form power primitives; quadrature only ever appears for the
//! time-inverted tail integrand, which is not of power form in `v`.

use crate::error::{Error, Result};
use crate::kernels::{power_primitive, KernelSpec, PowerTerm};
use crate::paths::PiecewisePath;

/// Result of an adaptive quadrature run.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    /// False when some subinterval exhausted the depth budget before meeting
    /// its local tolerance.
    pub converged: bool,
}

/// Adaptive Simpson quadrature with a local Richardson error estimate.
pub fn adaptive_quad<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> QuadResult {
    if lo == hi {
        return QuadResult {
            value: 0.0,
            converged: true,
        };
    }
    let m = 0.5 * (lo + hi);
    let (fa, fm, fb) = (f(lo), f(m), f(hi));
    let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    let mut converged = true;
    let value = simpson_rec(f, lo, hi, fa, fm, fb, whole, tol, 52, &mut converged);
    QuadResult { value, converged }
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    converged: &mut bool,
) -> f64 {
    let m = 0.5 * (lo + hi);
    let lm = 0.5 * (lo + m);
    let rm = 0.5 * (m + hi);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - lo) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (hi - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // Bisection can stall once the midpoints are no longer representable.
    if delta.abs() <= 15.0 * tol || lm <= lo || rm >= hi {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *converged = false;
        return left + right + delta / 15.0;
    }
    simpson_rec(f, lo, m, fa, flm, fm, left, 0.5 * tol, depth - 1, converged)
        + simpson_rec(f, m, hi, fm, frm, fb, right, 0.5 * tol, depth - 1, converged)
}

fn check_range(path: &PiecewisePath, lo: f64, hi: f64) -> Result<()> {
    if lo > hi {
        return Err(Error::InvalidParameter(format!(
            "integration range [{lo}, {hi}] is reversed"
        )));
    }
    if lo < path.lo() || hi > path.hi() {
        return Err(Error::DomainMismatch {
            lo_a: lo,
            hi_a: hi,
            lo_b: path.lo(),
            hi_b: path.hi(),
        });
    }
    Ok(())
}

/// `int_{lo}^{hi} K(s) dZ(s)` for a raw power-term sum, exactly per segment.
pub fn integrate_terms_dz(
    terms: &[PowerTerm],
    lo: f64,
    hi: f64,
    path: &PiecewisePath,
) -> Result<f64> {
    check_range(path, lo, hi)?;
    if lo == hi {
        return Ok(0.0);
    }
    let bps = path.breakpoints();
    // First segment whose right end exceeds lo.
    let mut k = match bps.binary_search_by(|b| b.partial_cmp(&lo).unwrap()) {
        Ok(i) => i,
        Err(i) => i - 1,
    };
    if k == bps.len() - 1 {
        k -= 1;
    }
    let mut acc = 0.0;
    while k + 1 < bps.len() && bps[k] < hi {
        let s0 = bps[k].max(lo);
        let s1 = bps[k + 1].min(hi);
        if s1 > s0 {
            let slope = path.slope(k);
            if slope != 0.0 {
                for term in terms {
                    acc += slope * term.coef * power_primitive(term.center, term.exponent, s0, s1)?;
                }
            }
        }
        k += 1;
    }
    Ok(acc)
}

/// `int_{lo}^{hi} K(s) dZ(s)` with the kernel's closed-form segment
/// primitives. Endpoint singularities of integrable exponent are handled
/// exactly by the power primitive; a non-integrable singularity inside the
/// range is an error.
pub fn integrate_dz(spec: &KernelSpec, lo: f64, hi: f64, path: &PiecewisePath) -> Result<f64> {
    integrate_terms_dz(&spec.terms(), lo, hi, path)
}

/// Same integral through the integration-by-parts identity
/// `K(hi) Z(hi) - K(lo) Z(lo) - int K'(s) Z(s) ds`, requiring the kernel to
/// be C^1 on the closed range. The remaining integrand is `power * linear`
/// per segment, again in closed form.
pub fn integrate_terms_by_parts(
    terms: &[PowerTerm],
    lo: f64,
    hi: f64,
    path: &PiecewisePath,
) -> Result<f64> {
    check_range(path, lo, hi)?;
    if lo == hi {
        return Ok(0.0);
    }
    for term in terms {
        if term.coef != 0.0 && term.center >= lo && term.center <= hi && term.exponent < 1.0 {
            return Err(Error::SingularityInInterval {
                location: term.center,
                lo,
                hi,
            });
        }
    }
    let eval = |s: f64| -> f64 {
        terms
            .iter()
            .map(|t| t.coef * (t.center - s).powf(t.exponent))
            .sum()
    };
    let mut acc = eval(hi) * path.evaluate_unchecked(hi) - eval(lo) * path.evaluate_unchecked(lo);

    let bps = path.breakpoints();
    let mut k = match bps.binary_search_by(|b| b.partial_cmp(&lo).unwrap()) {
        Ok(i) => i,
        Err(i) => i - 1,
    };
    if k == bps.len() - 1 {
        k -= 1;
    }
    while k + 1 < bps.len() && bps[k] < hi {
        let s0 = bps[k].max(lo);
        let s1 = bps[k + 1].min(hi);
        if s1 > s0 {
            let slope = path.slope(k);
            let v0 = path.evaluate_unchecked(s0);
            for term in terms {
                // K' term: -coef * exponent * (c - s)^(exponent - 1).
                let dcoef = -term.coef * term.exponent;
                if dcoef == 0.0 {
                    continue;
                }
                // Z(s) = v0 + slope (s - s0) = [v0 + slope (c - s0)] - slope (c - s).
                let const_part = v0 + slope * (term.center - s0);
                let i_base = power_primitive(term.center, term.exponent - 1.0, s0, s1)?;
                let i_next = power_primitive(term.center, term.exponent, s0, s1)?;
                acc -= dcoef * (const_part * i_base - slope * i_next);
            }
        }
        k += 1;
    }
    Ok(acc)
}

/// See [`integrate_terms_by_parts`].
pub fn integrate_by_parts(
    spec: &KernelSpec,
    lo: f64,
    hi: f64,
    path: &PiecewisePath,
) -> Result<f64> {
    integrate_terms_by_parts(&spec.terms(), lo, hi, path)
}

/// Kernel family of the time-inverted tail term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailKind {
    /// History kernel derivative (the W part).
    History,
    /// Reflected kernel derivative (the Y part).
    Reflected,
}

/// Derivative-composite integrand of the tail term,
/// `psi(v) = d/ds K_t(1/v) / v^3`.
pub fn tail_integrand(kind: TailKind, t: f64, hurst: f64) -> Result<impl Fn(f64) -> f64> {
    let spec = match kind {
        TailKind::History => KernelSpec::history_deriv(t, hurst)?,
        TailKind::Reflected => KernelSpec::reflected_deriv(t, hurst)?,
    };
    let terms = spec.terms();
    Ok(move |v: f64| -> f64 {
        if v == 0.0 {
            return 0.0;
        }
        let s = 1.0 / v;
        let mut acc = 0.0;
        for term in &terms {
            acc += term.coef * (term.center - s).powf(term.exponent);
        }
        acc / (v * v * v)
    })
}

/// Fubini-reduced value of the iterated tail term:
/// `-int_{1/a}^{cutoff} d/ds K_t(1/v) v^{-3} Z3(v) dv`.
///
/// The overall sign is fixed so the term approximates the exact tail
/// contribution `-int d/ds K_t(1/v) v^{-3} B3(v) dv` of the reflected-kernel
/// reduction. Quadrature is adaptive Simpson subdivided at the path
/// breakpoints, absolute tolerance `tol`.
pub fn z3_tail_term(
    kind: TailKind,
    t: f64,
    hurst: f64,
    anchor: f64,
    cutoff: f64,
    z3: &PiecewisePath,
    tol: f64,
) -> Result<f64> {
    let inv_a = 1.0 / anchor;
    if !(cutoff >= inv_a && cutoff <= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tail cutoff must lie in [1/a, 0] = [{inv_a}, 0], got {cutoff}"
        )));
    }
    if t == 0.0 || cutoff == inv_a {
        return Ok(0.0);
    }
    check_range(z3, inv_a, cutoff)?;
    let psi = tail_integrand(kind, t, hurst)?;
    let total_len = cutoff - inv_a;

    let bps = z3.breakpoints();
    let mut k = match bps.binary_search_by(|b| b.partial_cmp(&inv_a).unwrap()) {
        Ok(i) => i,
        Err(i) => i - 1,
    };
    if k == bps.len() - 1 {
        k -= 1;
    }
    let mut acc = 0.0;
    while k + 1 < bps.len() && bps[k] < cutoff {
        let v0 = bps[k].max(inv_a);
        let v1 = bps[k + 1].min(cutoff);
        if v1 > v0 {
            let z0 = z3.evaluate_unchecked(v0);
            let slope = z3.slope(k);
            let f = |v: f64| {
                if v == 0.0 {
                    0.0
                } else {
                    psi(v) * (z0 + slope * (v - v0))
                }
            };
            let cell_tol = tol * ((v1 - v0) / total_len).max(1e-3);
            acc += adaptive_quad(&f, v0, v1, cell_tol).value;
        }
        k += 1;
    }
    Ok(-acc)
}

/// Iterated-form evaluation of the same term: the inner integral
/// `phi(s) = -int_{1/a}^{cutoff /\ s} psi(v) dv` is tabulated numerically and
/// then Stieltjes-integrated against `Z3`, with the module-wide leading sign.
/// Used to verify the Fubini reduction; `z3_tail_term` is the production
/// route.
pub fn z3_tail_term_iterated(
    kind: TailKind,
    t: f64,
    hurst: f64,
    anchor: f64,
    cutoff: f64,
    z3: &PiecewisePath,
    tol: f64,
) -> Result<f64> {
    let inv_a = 1.0 / anchor;
    if !(cutoff >= inv_a && cutoff <= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tail cutoff must lie in [1/a, 0] = [{inv_a}, 0], got {cutoff}"
        )));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    check_range(z3, inv_a, 0.0)?;
    let psi = tail_integrand(kind, t, hurst)?;

    // Integration nodes: path breakpoints with the cutoff inserted.
    let mut nodes: Vec<f64> = z3
        .breakpoints()
        .iter()
        .copied()
        .filter(|&b| b >= inv_a)
        .collect();
    if !nodes.contains(&cutoff) {
        nodes.push(cutoff);
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }

    // Cumulative inner integral at every node, clamped at the cutoff.
    let mut cum = vec![0.0f64; nodes.len()];
    let inner_tol = tol / (nodes.len() as f64);
    for i in 1..nodes.len() {
        let lo = nodes[i - 1].min(cutoff);
        let hi = nodes[i].min(cutoff);
        cum[i] = cum[i - 1] + adaptive_quad(&psi, lo, hi, inner_tol).value;
    }
    let phi = |s: f64, seg: usize| -> f64 {
        let base = nodes[seg].min(cutoff);
        let upto = s.min(cutoff);
        -(cum[seg] + adaptive_quad(&psi, base, upto, inner_tol).value)
    };

    let mut acc = 0.0;
    for i in 0..nodes.len() - 1 {
        let (s0, s1) = (nodes[i], nodes[i + 1]);
        let z_s0 = z3.evaluate_unchecked(s0);
        let z_s1 = z3.evaluate_unchecked(s1);
        let slope = (z_s1 - z_s0) / (s1 - s0);
        if slope == 0.0 {
            continue;
        }
        let g = |s: f64| phi(s, i);
        let q = adaptive_quad(&g, s0, s1, tol * 1e-2 / (nodes.len() as f64));
        acc += slope * q.value;
    }
    Ok(-acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::ModelParams;
    use crate::paths::{generate_transport, AnchorEnd, PiecewisePath};
    use approx::assert_abs_diff_eq;

    fn linear_path(lo: f64, hi: f64, slope: f64) -> PiecewisePath {
        // Anchored at lo.
        PiecewisePath::new(vec![lo, hi], vec![0.0, slope * (hi - lo)], 0).unwrap()
    }

    #[test]
    fn constant_kernel_telescopes() {
        let path = generate_transport(6, 0.0, 1.0, AnchorEnd::Left, 21).unwrap();
        let one = [PowerTerm {
            coef: 1.0,
            center: 10.0,
            exponent: 0.0,
        }];
        let v = integrate_terms_dz(&one, 0.2, 0.9, &path).unwrap();
        let expected = path.evaluate(0.9).unwrap() - path.evaluate(0.2).unwrap();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
    }

    #[test]
    fn forward_kernel_on_linear_path_matches_quadrature() {
        // g, H=0.75, t=1, Z(s) = 2s on [0, 0.5].
        let path = linear_path(0.0, 0.5, 2.0);
        let spec = KernelSpec::forward(1.0, 0.75).unwrap();
        let v = integrate_dz(&spec, 0.0, 0.5, &path).unwrap();
        assert_abs_diff_eq!(v, 0.927283, epsilon = 1e-6);
        let oracle = adaptive_quad(&|s: f64| 2.0 * (1.0 - s).powf(0.25), 0.0, 0.5, 1e-12);
        assert!(oracle.converged);
        assert_abs_diff_eq!(v, oracle.value, epsilon = 1e-10);
    }

    #[test]
    fn shifted_power_is_bounded_for_low_hurst() {
        // H < 1/2: integrand bounded by (-eps)^{H-1/2}, finite result.
        let params = ModelParams::new(0.3, 0.35, 1.0, -2.0, 50, 1.0).unwrap();
        let eps = params.eps_n;
        let path = generate_transport(10, -2.0, 0.0, AnchorEnd::Right, 5).unwrap();
        let spec = KernelSpec::shifted_power(0.3, eps).unwrap();
        let t = 0.6;
        let lo = eps.max(-t);
        let v = integrate_dz(&spec, lo, 0.0, &path).unwrap();
        assert!(v.is_finite());
        let psi = |s: f64| (-s - eps).powf(-0.2) * 10.0;
        let bound = adaptive_quad(&psi, lo, 0.0, 1e-10).value;
        assert!(v.abs() <= bound * (1.0 + 1e-9));
        // Quadrature oracle over the same path.
        let mut oracle = 0.0;
        for k in 0..path.segment_count() {
            let (s0, s1) = (
                path.breakpoints()[k].max(lo),
                path.breakpoints()[k + 1].min(0.0),
            );
            if s1 > s0 {
                let slope = path.slope(k);
                oracle += slope
                    * adaptive_quad(&|s: f64| (-s - eps).powf(-0.2), s0, s1, 1e-12).value;
            }
        }
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-9);
    }

    #[test]
    fn by_parts_agrees_with_direct_on_smooth_range() {
        // f_t on [a, -t], H = 0.7, random transport path.
        let (a, t) = (-3.0, 0.8);
        let path = generate_transport(12, a, 0.0, AnchorEnd::Right, 17).unwrap();
        let spec = KernelSpec::history(t, 0.7).unwrap();
        let direct = integrate_dz(&spec, a, -t, &path).unwrap();
        let parts = integrate_by_parts(&spec, a, -t, &path).unwrap();
        assert_abs_diff_eq!(direct, parts, epsilon = 1e-9);
    }

    #[test]
    fn by_parts_constant_and_identity_kernels() {
        let path = generate_transport(5, -2.0, -0.5, AnchorEnd::Left, 31).unwrap();
        let c = 3.25;
        let const_terms = [PowerTerm {
            coef: c,
            center: 5.0,
            exponent: 0.0,
        }];
        let v = integrate_terms_by_parts(&const_terms, -1.8, -0.7, &path).unwrap();
        let expected = c * (path.evaluate(-0.7).unwrap() - path.evaluate(-1.8).unwrap());
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);

        // Kernel(s) = s as -(0 - s)^1, on a linear path, against hand value.
        let id_terms = [PowerTerm {
            coef: -1.0,
            center: 0.0,
            exponent: 1.0,
        }];
        let lin = linear_path(-2.0, -1.0, 1.0); // Z(s) = s + 2
        let v = integrate_terms_by_parts(&id_terms, -2.0, -1.0, &lin).unwrap();
        // int_{-2}^{-1} s dZ = int s ds = -3/2.
        assert_abs_diff_eq!(v, -1.5, epsilon = 1e-12);
        let direct = integrate_terms_dz(&id_terms, -2.0, -1.0, &lin).unwrap();
        assert_abs_diff_eq!(v, direct, epsilon = 1e-12);
    }

    #[test]
    fn by_parts_rejects_interior_singularity() {
        let path = generate_transport(5, -2.0, 0.0, AnchorEnd::Right, 31).unwrap();
        let spec = KernelSpec::reflected(1.0, 0.7).unwrap();
        // -t = -1 lies inside [-2, -0.5].
        assert!(integrate_by_parts(&spec, -2.0, -0.5, &path).is_err());
    }

    #[test]
    fn non_integrable_singularity_is_an_error() {
        let path = generate_transport(5, -1.0, 0.0, AnchorEnd::Right, 3).unwrap();
        let deriv = KernelSpec::reflected_deriv(0.5, 0.7).unwrap();
        // Exponent H - 3/2 < -1 at the interior point -t.
        assert!(integrate_dz(&deriv, -1.0, 0.0, &path).is_err());
    }

    #[test]
    fn linearity_in_the_integrator() {
        let p = generate_transport(6, -2.0, 0.0, AnchorEnd::Right, 51).unwrap();
        let spec = KernelSpec::history(0.7, 0.7).unwrap();
        let v1 = integrate_dz(&spec, -2.0, -0.7, &p).unwrap();
        let v2 = integrate_dz(&spec, -2.0, -0.7, &p.scaled(2.5)).unwrap();
        assert_abs_diff_eq!(2.5 * v1, v2, epsilon = 1e-12 * v1.abs().max(1.0));

        // alpha P + beta Q with shared breakpoints.
        let q = p.scaled(-0.4);
        let combo = PiecewisePath::new(
            p.breakpoints().to_vec(),
            p.values()
                .iter()
                .zip(q.values())
                .map(|(a, b)| 1.5 * a + 2.0 * b)
                .collect(),
            p.breakpoints().len() - 1,
        )
        .unwrap();
        let vq = integrate_dz(&spec, -2.0, -0.7, &q).unwrap();
        let vc = integrate_dz(&spec, -2.0, -0.7, &combo).unwrap();
        assert_abs_diff_eq!(vc, 1.5 * v1 + 2.0 * vq, epsilon = 1e-12);
    }

    #[test]
    fn tail_term_trivial_cases() {
        let z3 = generate_transport(8, -0.25, 0.0, AnchorEnd::Right, 9).unwrap();
        // t = 0: derivative kernel vanishes identically.
        let v = z3_tail_term(TailKind::Reflected, 0.0, 0.7, -4.0, -0.01, &z3, 1e-10).unwrap();
        assert_eq!(v, 0.0);
        // Z3 = 0 path.
        let zero = PiecewisePath::new(vec![-0.25, 0.0], vec![0.0, 0.0], 1).unwrap();
        let v = z3_tail_term(TailKind::Reflected, 1.0, 0.7, -4.0, -0.01, &zero, 1e-10).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        // Cutoff at the left end gives an empty range.
        let v = z3_tail_term(TailKind::History, 1.0, 0.7, -4.0, -0.25, &z3, 1e-10).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn tail_term_matches_brute_force_riemann() {
        // kind = Reflected, H = 0.7, t = 1, a = -4, cutoff = eps_n(n = 100).
        let params = ModelParams::new(0.7, 0.3, 1.0, -4.0, 100, 1.0).unwrap();
        let z3 = generate_transport(20, -0.25, 0.0, AnchorEnd::Right, 77).unwrap();
        let cutoff = params.eps_n.max(1.0 / params.anchor);
        let v = z3_tail_term(TailKind::Reflected, 1.0, 0.7, -4.0, cutoff, &z3, 1e-10).unwrap();

        let psi = tail_integrand(TailKind::Reflected, 1.0, 0.7).unwrap();
        let panels = 1_000_000usize;
        let lo = 1.0 / -4.0;
        let h = (cutoff - lo) / panels as f64;
        let mut riemann = 0.0;
        for i in 0..panels {
            let m = lo + (i as f64 + 0.5) * h;
            riemann += psi(m) * z3.evaluate_unchecked(m) * h;
        }
        assert_abs_diff_eq!(v, -riemann, epsilon = 1e-8);
    }

    #[test]
    fn iterated_and_reduced_tail_terms_agree() {
        let z3 = generate_transport(10, -0.5, 0.0, AnchorEnd::Right, 23).unwrap();
        for (kind, h, cutoff) in [
            (TailKind::Reflected, 0.7, -0.05),
            (TailKind::History, 0.7, -0.02),
            (TailKind::Reflected, 0.3, 0.0),
            (TailKind::History, 0.3, 0.0),
        ] {
            let reduced = z3_tail_term(kind, 0.8, h, -2.0, cutoff, &z3, 1e-10).unwrap();
            let iterated = z3_tail_term_iterated(kind, 0.8, h, -2.0, cutoff, &z3, 1e-9).unwrap();
            assert_abs_diff_eq!(reduced, iterated, epsilon = 1e-7);
        }
    }

    #[test]
    fn adaptive_quad_known_integrals() {
        let q = adaptive_quad(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!(q.converged);
        assert_abs_diff_eq!(q.value, 2.0, epsilon = 1e-11);
        // Integrable endpoint singularity.
        let q = adaptive_quad(&|x: f64| x.max(0.0).powf(-0.4), 0.0, 1.0, 1e-10);
        assert_abs_diff_eq!(q.value, 1.0 / 0.6, epsilon = 1e-7);
    }
}
