//! Piecewise-linear paths: transport (telegraph) processes, grid Brownian
//! motions, the derived driver triple and the sup-distance between paths.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::ModelParams;

/// Streams reserved per replica in the counter-based seed scheme.
pub const STREAMS_PER_REPLICA: u64 = 8;

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeedRecord {
    pub master_seed: u64,
    pub replica: u64,
}

impl SeedRecord {
    /// Deterministic generator for `stream` within this replica.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        debug_assert!(stream < STREAMS_PER_REPLICA);
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.replica.wrapping_mul(STREAMS_PER_REPLICA) + stream);
        rng
    }
}

/// Which end of the interval the path is anchored (value 0) at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorEnd {
    Left,
    Right,
}

/// A continuous piecewise-linear function on a closed interval.
#[derive(Debug, Clone)]
pub struct PiecewisePath {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    anchor_index: usize,
}

impl PiecewisePath {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>, anchor_index: usize) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "path needs matching breakpoint/value lists of length >= 2, got {} and {}",
                breakpoints.len(),
                values.len()
            )));
        }
        if anchor_index >= breakpoints.len() {
            return Err(Error::InvalidParameter("anchor index out of range".into()));
        }
        for w in breakpoints.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidParameter(format!(
                    "breakpoints must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite path value".into()));
        }
        if values[anchor_index] != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "anchor value must be exactly 0, got {}",
                values[anchor_index]
            )));
        }
        Ok(Self {
            breakpoints,
            values,
            anchor_index,
        })
    }

    pub fn lo(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn hi(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn anchor(&self) -> f64 {
        self.breakpoints[self.anchor_index]
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn segment_count(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// Exact linear interpolation; breakpoints evaluate to their stored value.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if !(t >= self.lo() && t <= self.hi()) {
            return Err(Error::OutOfPathDomain {
                t,
                lo: self.lo(),
                hi: self.hi(),
            });
        }
        Ok(self.evaluate_unchecked(t))
    }

    pub(crate) fn evaluate_unchecked(&self, t: f64) -> f64 {
        let i = match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&t).unwrap())
        {
            Ok(i) => return self.values[i],
            Err(i) => i,
        };
        // t lies strictly inside segment (i-1, i).
        let (x0, x1) = (self.breakpoints[i - 1], self.breakpoints[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * ((t - x0) / (x1 - x0))
    }

    /// Slope of segment `k`.
    pub fn slope(&self, k: usize) -> f64 {
        (self.values[k + 1] - self.values[k]) / (self.breakpoints[k + 1] - self.breakpoints[k])
    }

    /// New path with every value scaled by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v * lambda).collect(),
            anchor_index: self.anchor_index,
        }
    }

    /// CSV export with header `t,value`, one row per breakpoint. Values are
    /// printed in Rust's shortest round-trip form, exact to 17 significant
    /// digits.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "t,value")?;
        for (t, v) in self.breakpoints.iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

/// Exact sup-distance between two piecewise-linear paths on a common domain.
///
/// The maximum of `|P - Q|` over the union of both breakpoint sets and the
/// probe grid; exact for piecewise-linear pairs because `P - Q` is itself
/// piecewise linear with breakpoints in that union.
pub fn sup_distance(p: &PiecewisePath, q: &PiecewisePath, probes: &[f64]) -> Result<f64> {
    if p.lo() != q.lo() || p.hi() != q.hi() {
        return Err(Error::DomainMismatch {
            lo_a: p.lo(),
            hi_a: p.hi(),
            lo_b: q.lo(),
            hi_b: q.hi(),
        });
    }
    let mut best = 0.0f64;
    for &x in p
        .breakpoints
        .iter()
        .chain(q.breakpoints.iter())
        .chain(probes.iter())
    {
        if x < p.lo() || x > p.hi() {
            continue;
        }
        let d = (p.evaluate_unchecked(x) - q.evaluate_unchecked(x)).abs();
        if d > best {
            best = d;
        }
    }
    Ok(best)
}

/// Generates a uniform transport path at level `n` on `[lo, hi]`.
///
/// Velocity `+n` or `-n` with probability 1/2 from the anchor end, switching
/// sign at i.i.d. Exp(n^2) times; the value at the anchor end is exactly 0.
/// Right-anchored paths are produced by reflecting the time axis of a forward
/// path, which has the same law.
pub fn generate_transport_with<R: Rng>(
    level: u32,
    lo: f64,
    hi: f64,
    anchor_end: AnchorEnd,
    rng: &mut R,
) -> Result<PiecewisePath> {
    if level < 1 {
        return Err(Error::InvalidParameter("level must be >= 1".into()));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "interval [{lo}, {hi}] must be nonempty and finite"
        )));
    }
    let n = f64::from(level);
    let rate = n * n;
    let len = hi - lo;

    let mut times = vec![0.0f64];
    let mut values = vec![0.0f64];
    let mut sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut t = 0.0f64;
    let mut v = 0.0f64;
    loop {
        let mut dur: f64 = rng.sample(Exp1);
        while dur == 0.0 {
            dur = rng.sample(Exp1);
        }
        dur /= rate;
        let t_next = t + dur;
        if t_next >= len {
            values.push(v + sign * n * (len - t));
            times.push(len);
            break;
        }
        v += sign * n * dur;
        if t_next > t {
            times.push(t_next);
            values.push(v);
        }
        sign = -sign;
        t = t_next;
    }

    match anchor_end {
        AnchorEnd::Left => {
            let breakpoints = times.iter().map(|u| lo + u).collect::<Vec<_>>();
            PiecewisePath::new(breakpoints, values, 0)
        }
        AnchorEnd::Right => {
            let k = times.len() - 1;
            let breakpoints = times.iter().rev().map(|u| hi - u).collect::<Vec<_>>();
            let values = values.into_iter().rev().collect::<Vec<_>>();
            PiecewisePath::new(breakpoints, values, k)
        }
    }
}

/// Seeded convenience wrapper around [`generate_transport_with`].
pub fn generate_transport(
    level: u32,
    lo: f64,
    hi: f64,
    anchor_end: AnchorEnd,
    seed: u64,
) -> Result<PiecewisePath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_transport_with(level, lo, hi, anchor_end, &mut rng)
}

/// Builds the grid Brownian driver triple from one two-sided Brownian motion.
///
/// `B1` is the restriction to `[0, T]`, `B2` the restriction to `[a, 0]`
/// (anchored at 0), and `B3(s) = s B(1/s)` on a uniform grid of `[1/a, 0]`
/// with `B3(0) = 0`. The tail of `B` on `(-inf, a]` is generated on the image
/// grid `{1/s}`, continuing from `B(a)`, so the seam `B3(1/a) = B2(a)/a`
/// holds exactly.
pub fn sample_grid_bm_with<R: Rng>(
    step: f64,
    horizon: f64,
    anchor: f64,
    rng: &mut R,
) -> Result<(PiecewisePath, PiecewisePath, PiecewisePath)> {
    if !(step > 0.0) || step > horizon || step > -anchor {
        return Err(Error::InvalidParameter(format!(
            "grid step must satisfy 0 < step <= min(T, |a|), got {step}"
        )));
    }
    if !(anchor < -horizon) {
        return Err(Error::InvalidParameter(format!(
            "anchor a must satisfy a < -T, got {anchor}"
        )));
    }

    // B1 on [0, T], forward from B(0) = 0.
    let m1 = (horizon / step).ceil() as usize;
    let d1 = horizon / m1 as f64;
    let sd1 = d1.sqrt();
    let mut b1_vals = Vec::with_capacity(m1 + 1);
    b1_vals.push(0.0);
    let mut acc = 0.0;
    for _ in 0..m1 {
        let g: f64 = rng.sample(StandardNormal);
        acc += sd1 * g;
        b1_vals.push(acc);
    }
    let b1_pts = (0..=m1).map(|j| j as f64 * d1).collect::<Vec<_>>();
    let b1 = PiecewisePath::new(b1_pts, b1_vals, 0)?;

    // B2 on [a, 0], generated backwards from B(0) = 0.
    let m2 = ((-anchor) / step).ceil() as usize;
    let d2 = -anchor / m2 as f64;
    let sd2 = d2.sqrt();
    let mut b2_vals = vec![0.0f64; m2 + 1];
    for j in (0..m2).rev() {
        let g: f64 = rng.sample(StandardNormal);
        b2_vals[j] = b2_vals[j + 1] + sd2 * g;
    }
    let mut b2_pts = (0..=m2).map(|j| anchor + j as f64 * d2).collect::<Vec<_>>();
    b2_pts[m2] = 0.0;
    b2_pts[0] = anchor;
    let b2_at_a = b2_vals[0];
    let b2 = PiecewisePath::new(b2_pts, b2_vals, m2)?;

    // B3 on [1/a, 0], uniform in s; the tail of B is generated on the image
    // grid {1/s_j} continuing from B(a).
    let inv_a = 1.0 / anchor;
    let m3 = m1.max(2);
    let d3 = -inv_a / m3 as f64;
    let mut b3_pts = (0..=m3).map(|j| inv_a + j as f64 * d3).collect::<Vec<_>>();
    b3_pts[0] = inv_a;
    b3_pts[m3] = 0.0;
    let mut b3_vals = Vec::with_capacity(m3 + 1);
    b3_vals.push(inv_a * b2_at_a);
    let mut tail_val = b2_at_a;
    let mut prev_x = anchor;
    for &s in b3_pts.iter().take(m3).skip(1) {
        let x = 1.0 / s;
        let g: f64 = rng.sample(StandardNormal);
        tail_val += (prev_x - x).sqrt() * g;
        prev_x = x;
        b3_vals.push(s * tail_val);
    }
    b3_vals.push(0.0);
    let b3 = PiecewisePath::new(b3_pts, b3_vals, m3)?;

    Ok((b1, b2, b3))
}

/// How the driver triple is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DriverMode {
    /// Three mutually independent transport paths at the model level.
    Transport,
    /// Coupled grid Brownian paths derived from one two-sided motion.
    GridBm { step: f64 },
}

impl DriverMode {
    pub fn grid_bm_default(params: &ModelParams) -> Self {
        DriverMode::GridBm {
            step: params.horizon / 2048.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DriverMode::Transport => "transport",
            DriverMode::GridBm { .. } => "grid_bm",
        }
    }
}

/// The driver triple `(Z1, Z2, Z3)` substituted for `(B1, B2, B3)`.
#[derive(Debug, Clone)]
pub struct DriverSet {
    pub z1: PiecewisePath,
    pub z2: PiecewisePath,
    pub z3: PiecewisePath,
    pub mode: DriverMode,
    pub seed: SeedRecord,
}

impl DriverSet {
    /// Streams 0..2 of the replica are used for Z1, Z2, Z3 in transport mode;
    /// stream 0 drives the single shared Brownian motion in grid mode.
    pub fn generate(
        params: &ModelParams,
        mode: DriverMode,
        master_seed: u64,
        replica: u64,
    ) -> Result<Self> {
        let seed = SeedRecord {
            master_seed,
            replica,
        };
        let (z1, z2, z3) = match mode {
            DriverMode::Transport => {
                let z1 = generate_transport_with(
                    params.level,
                    0.0,
                    params.horizon,
                    AnchorEnd::Left,
                    &mut seed.rng(0),
                )?;
                let z2 = generate_transport_with(
                    params.level,
                    params.anchor,
                    0.0,
                    AnchorEnd::Right,
                    &mut seed.rng(1),
                )?;
                let z3 = generate_transport_with(
                    params.level,
                    1.0 / params.anchor,
                    0.0,
                    AnchorEnd::Right,
                    &mut seed.rng(2),
                )?;
                (z1, z2, z3)
            }
            DriverMode::GridBm { step } => {
                sample_grid_bm_with(step, params.horizon, params.anchor, &mut seed.rng(0))?
            }
        };
        Ok(Self {
            z1,
            z2,
            z3,
            mode,
            seed,
        })
    }

    /// All three paths scaled by `lambda` (for linearity checks).
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            z1: self.z1.scaled(lambda),
            z2: self.z2.scaled(lambda),
            z3: self.z3.scaled(lambda),
            mode: self.mode,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_transport_segment_is_linear_from_zero() {
        let path = generate_transport(10, 0.0, 1.0, AnchorEnd::Left, 7).unwrap();
        let tau1 = path.breakpoints()[1];
        let v1 = path.values()[1];
        assert_eq!(path.values()[0], 0.0);
        assert!((v1 - path.slope(0) * tau1).abs() < 1e-15);
        assert_eq!(path.slope(0).abs(), 10.0);
    }

    #[test]
    fn transport_slopes_alternate_with_magnitude_n() {
        for seed in 0..20u64 {
            let path = generate_transport(7, -2.0, 0.5, AnchorEnd::Left, seed).unwrap();
            let mut prev = 0.0f64;
            for k in 0..path.segment_count() {
                let s = path.slope(k);
                assert!((s.abs() - 7.0).abs() < 1e-9, "slope magnitude {s}");
                if k > 0 {
                    assert!(s * prev < 0.0, "slopes must alternate");
                }
                prev = s;
            }
        }
    }

    #[test]
    fn right_anchored_transport_ends_at_zero() {
        let path = generate_transport(5, -3.0, 0.0, AnchorEnd::Right, 11).unwrap();
        assert_eq!(path.anchor(), 0.0);
        assert_eq!(path.evaluate(0.0).unwrap(), 0.0);
        assert_eq!(path.lo(), -3.0);
        assert_eq!(path.hi(), 0.0);
    }

    #[test]
    fn evaluate_is_exact_at_anchor_and_rejects_outside() {
        let path = generate_transport(4, 0.0, 1.0, AnchorEnd::Left, 3).unwrap();
        assert_eq!(path.evaluate(path.anchor()).unwrap(), 0.0);
        assert!(path.evaluate(1.5).is_err());
        assert!(path.evaluate(-0.1).is_err());
    }

    #[test]
    fn path_is_lipschitz_with_constant_n() {
        let n = 9u32;
        let path = generate_transport(n, 0.0, 2.0, AnchorEnd::Left, 13).unwrap();
        let mut x = 0.0f64;
        while x < 2.0 {
            let y = (x + 0.013).min(2.0);
            let dv = (path.evaluate(y).unwrap() - path.evaluate(x).unwrap()).abs();
            assert!(dv <= f64::from(n) * (y - x) + 1e-12);
            x = y;
        }
    }

    #[test]
    fn sup_distance_examples() {
        let p = PiecewisePath::new(vec![0.0, 1.0], vec![0.0, 1.0], 0).unwrap();
        let q = PiecewisePath::new(vec![0.0, 1.0], vec![0.0, -1.0], 0).unwrap();
        assert_eq!(sup_distance(&p, &p, &[]).unwrap(), 0.0);
        assert_eq!(sup_distance(&p, &q, &[]).unwrap(), 2.0);

        let r = PiecewisePath::new(vec![0.0, 2.0], vec![0.0, 2.0], 0).unwrap();
        assert!(sup_distance(&p, &r, &[]).is_err());
    }

    #[test]
    fn sup_distance_is_a_metric_on_sampled_triples() {
        let paths: Vec<PiecewisePath> = (0..6)
            .map(|s| generate_transport(3, 0.0, 1.0, AnchorEnd::Left, 100 + s).unwrap())
            .collect();
        for p in &paths {
            for q in &paths {
                let dpq = sup_distance(p, q, &[]).unwrap();
                let dqp = sup_distance(q, p, &[]).unwrap();
                assert!((dpq - dqp).abs() < 1e-15, "symmetry");
                for r in &paths {
                    let dpr = sup_distance(p, r, &[]).unwrap();
                    let drq = sup_distance(r, q, &[]).unwrap();
                    assert!(dpq <= dpr + drq + 1e-12, "triangle inequality");
                }
            }
        }
    }

    #[test]
    fn grid_bm_endpoints_and_seam() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (b1, b2, b3) = sample_grid_bm_with(1.0 / 256.0, 1.0, -4.0, &mut rng).unwrap();
        assert_eq!(b1.evaluate(0.0).unwrap(), 0.0);
        assert_eq!(b2.evaluate(0.0).unwrap(), 0.0);
        assert_eq!(b3.evaluate(0.0).unwrap(), 0.0);
        // Seam: B3(1/a) = B2(a)/a exactly, by construction.
        assert_eq!(b3.values()[0], (1.0 / -4.0) * b2.values()[0]);
    }

    #[test]
    fn grid_bm_rejects_bad_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_grid_bm_with(2.0, 1.0, -4.0, &mut rng).is_err());
        assert!(sample_grid_bm_with(0.0, 1.0, -4.0, &mut rng).is_err());
    }

    #[test]
    fn driver_set_domains_match_params() {
        let params = ModelParams::new(0.7, 0.3, 1.0, -4.0, 20, 1.0).unwrap();
        for mode in [
            DriverMode::Transport,
            DriverMode::grid_bm_default(&params),
        ] {
            let d = DriverSet::generate(&params, mode, 42, 0).unwrap();
            assert_eq!(d.z1.lo(), 0.0);
            assert_eq!(d.z1.hi(), 1.0);
            assert_eq!(d.z2.lo(), -4.0);
            assert_eq!(d.z2.hi(), 0.0);
            assert_eq!(d.z3.lo(), 1.0 / -4.0);
            assert_eq!(d.z3.hi(), 0.0);
            assert_eq!(d.z2.evaluate(0.0).unwrap(), 0.0);
            assert_eq!(d.z3.evaluate(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn driver_set_is_reproducible() {
        let params = ModelParams::new(0.3, 0.35, 1.0, -4.0, 15, 1.0).unwrap();
        let a = DriverSet::generate(&params, DriverMode::Transport, 5, 3).unwrap();
        let b = DriverSet::generate(&params, DriverMode::Transport, 5, 3).unwrap();
        assert_eq!(a.z1.values(), b.z1.values());
        assert_eq!(a.z2.breakpoints(), b.z2.breakpoints());
        let c = DriverSet::generate(&params, DriverMode::Transport, 5, 4).unwrap();
        assert_ne!(a.z1.values(), c.z1.values());
    }

    #[test]
    fn csv_export_shape() {
        let p = PiecewisePath::new(vec![0.0, 0.5, 1.0], vec![0.0, 2.0, -1.0], 0).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,value"));
        assert_eq!(lines.next(), Some("0,0"));
        assert_eq!(lines.next(), Some("0.5,2"));
    }
}
