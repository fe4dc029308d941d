//! Small-time large-deviation experiments.
//!
//! All tail estimates run the rescaled process on `[0, 1]` with sample `i`
//! drawing its increments from stream `(cfg.seed, stream_key(family, i))`.
//! Hit counts are folded in sample order, so estimates do not depend on the
//! worker count.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diagnostics::fmt_f64;
use crate::exec::Execution;
use crate::integrator::{advance, check_epsilon, step_diffusion_only, Scaling, SimConfig, SimState};
use crate::noise::{sample_increment, NoiseKind, NoiseModel};
use crate::rng::{stream_key, RandomStream};
use crate::stats::{wilson, Z95};
use crate::{Error, Result, SpectralVelocity};

pub const LDP_HEADER: [&str; 9] = ["epsilon", "event_id", "M_or_delta", "n", "hits", "p_hat", "eps_log_p", "ci_low", "ci_high"];

/// Monte Carlo estimate of a tail probability at one `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpEstimate {
    pub epsilon: f64,
    pub event_id: String,
    /// Threshold of the event (`δ`, `M` or the tube radius).
    pub threshold: f64,
    pub n_samples: u64,
    pub hits: u64,
    pub p_hat: f64,
    /// `ε log p̂`; with zero hits the one-sided bound `ε log(3/n)`.
    pub eps_log_p: f64,
    /// `true` when `eps_log_p` is only an upper bound.
    pub upper_bound_only: bool,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl LdpEstimate {
    pub fn from_counts(epsilon: f64, event_id: impl Into<String>, threshold: f64, hits: u64, n: u64) -> Self {
        let p_hat = hits as f64 / n as f64;
        let (ci_low, ci_high) = wilson(hits, n, Z95);
        let (eps_log_p, upper_bound_only) =
            if hits == 0 { (epsilon * (3.0 / n as f64).ln(), true) } else { (epsilon * p_hat.ln(), false) };
        LdpEstimate { epsilon, event_id: event_id.into(), threshold, n_samples: n, hits, p_hat, eps_log_p, upper_bound_only, ci_low, ci_high }
    }

    /// Wilson interval mapped through `p ↦ ε log p`.
    pub fn eps_log_interval(&self) -> (f64, f64) {
        (self.epsilon * self.ci_low.ln(), self.epsilon * self.ci_high.ln())
    }
}

pub fn write_ldp_csv<W: Write>(w: W, rows: &[LdpEstimate]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(LDP_HEADER)?;
    for r in rows {
        wr.write_record([
            fmt_f64(r.epsilon),
            r.event_id.clone(),
            fmt_f64(r.threshold),
            r.n_samples.to_string(),
            r.hits.to_string(),
            fmt_f64(r.p_hat),
            fmt_f64(r.eps_log_p),
            fmt_f64(r.ci_low),
            fmt_f64(r.ci_high),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Stream family for the sample streams at position `i` of an `ε` list.
fn family(base: u32, i: usize) -> u32 {
    base + i as u32
}

const FAMILY_TAIL: u32 = 0x100;
const FAMILY_BALL: u32 = 0x200;
const FAMILY_TUBE: u32 = 0x300;

fn horizon_steps(cfg: &SimConfig) -> Result<u64> {
    let n = (1.0 / cfg.dt).round();
    if (n * cfg.dt - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter { name: "dt", reason: format!("1/dt must be an integer, got dt = {}", cfg.dt) });
    }
    Ok(n as u64)
}

fn check_samples(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::InvalidParameter { name: "n_samples", reason: format!("needs ≥ {min}, got {n}") });
    }
    Ok(())
}

/// Whether `sup_{[0,1]} |u^ε − v^ε|_H^2 > δ` for one sample path, with `u^ε`
/// the rescaled process and `v^ε` the diffusion-only process driven by the
/// same increments. Stops at the first exceedance.
pub fn tail_event(cfg: &SimConfig, epsilon: f64, delta: f64, stream: &mut RandomStream) -> Result<bool> {
    let steps = horizon_steps(cfg)?;
    let eps_cfg = cfg.clone().with_epsilon(Some(epsilon));
    let xi = cfg.initial_state()?;
    let mut u = xi.clone();
    let mut v = xi;
    let sc = Scaling::rescaled(epsilon);
    for _ in 0..steps {
        let dw = sample_increment(&cfg.noise, cfg.dt, stream)?;
        let eval = u.u.evaluate();
        let nu = advance(&u, &eval, &eps_cfg, &dw, sc)?.state;
        v = step_diffusion_only(&v, &eps_cfg, &dw)?;
        u = nu;
        if u.u.sub(&v.u).h_norm_sq() > delta {
            return Ok(true);
        }
    }
    Ok(false)
}

pub fn tail_equivalence(cfg: &SimConfig, epsilons: &[f64], delta: f64, n_samples: usize, exec: Execution) -> Result<Vec<LdpEstimate>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter { name: "delta", reason: format!("must be > 0, got {delta}") });
    }
    check_samples(n_samples, 1000)?;
    cfg.validate()?;
    epsilons.iter().try_for_each(|&e| check_epsilon(e))?;
    epsilons
        .iter()
        .enumerate()
        .map(|(ei, &eps)| {
            let hits = exec.try_map_indexed(n_samples, |i| {
                let mut s = RandomStream::new(cfg.seed, stream_key(family(FAMILY_TAIL, ei), i));
                tail_event(cfg, eps, delta, &mut s)
            })?;
            let h = hits.iter().filter(|&&b| b).count() as u64;
            Ok(LdpEstimate::from_counts(eps, "tail-equivalence", delta, h, n_samples as u64))
        })
        .collect()
}

/// Energy-ball functional `sup|u^ε|² + 2ε∫‖u^ε‖²` of one rescaled path on
/// `[0, 1]`, trapezoid rule in time.
pub fn energy_ball_sample(cfg: &SimConfig, epsilon: f64, stream: &mut RandomStream) -> Result<f64> {
    let steps = horizon_steps(cfg)?;
    let eps_cfg = cfg.clone().with_epsilon(Some(epsilon));
    let sc = Scaling::rescaled(epsilon);
    let mut s: SimState = cfg.initial_state()?;
    let mut sup = s.u.h_norm_sq();
    let mut v_prev = s.u.v_norm_sq();
    let mut integral = 0.0;
    for _ in 0..steps {
        let dw = sample_increment(&cfg.noise, cfg.dt, stream)?;
        let eval = s.u.evaluate();
        s = advance(&s, &eval, &eps_cfg, &dw, sc)?.state;
        let v = s.u.v_norm_sq();
        integral += 0.5 * cfg.dt * (v + v_prev);
        v_prev = v;
        sup = sup.max(s.u.h_norm_sq());
    }
    Ok(sup + 2.0 * epsilon * integral)
}

/// Energy-ball functional values for `n_samples` rescaled paths.
pub fn energy_ball_values(cfg: &SimConfig, epsilon: f64, n_samples: usize, exec: Execution) -> Result<Vec<f64>> {
    check_epsilon(epsilon)?;
    cfg.validate()?;
    exec.try_map_indexed(n_samples, |i| {
        let mut s = RandomStream::new(cfg.seed, stream_key(FAMILY_BALL, i));
        energy_ball_sample(cfg, epsilon, &mut s)
    })
}

pub fn energy_ball_tail(cfg: &SimConfig, epsilon: f64, thresholds: &[f64], n_samples: usize, exec: Execution) -> Result<Vec<LdpEstimate>> {
    if thresholds.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter { name: "thresholds", reason: "must be strictly increasing".into() });
    }
    check_samples(n_samples, 1)?;
    let values = energy_ball_values(cfg, epsilon, n_samples, exec)?;
    Ok(thresholds
        .iter()
        .map(|&m| {
            let hits = values.iter().filter(|&&f| f > m).count() as u64;
            LdpEstimate::from_counts(epsilon, "energy-ball", m, hits, n_samples as u64)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// rate function

/// Minimal-energy control reproducing a discrete path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    pub times: Vec<f64>,
    /// `ḣ` per interval in noise-basis coordinates.
    pub h_dot: Vec<Vec<f64>>,
    /// `½ ∫ |Q^{-1/2} ḣ|^2 dt`, infinite for unreachable paths.
    pub cost: f64,
    pub reachable: bool,
    /// Largest relative residual `|ġ − G ḣ|_H / |ġ|_H` over the intervals.
    pub residual: f64,
}

impl ControlPath {
    /// Per-interval contributions `½ Σ_j ḣ_j² / q_j · Δt`.
    pub fn interval_costs(&self, noise: &NoiseModel) -> Vec<f64> {
        self.h_dot
            .iter()
            .zip(self.times.windows(2))
            .map(|(h, w)| 0.5 * (w[1] - w[0]) * h.iter().enumerate().map(|(j, x)| x * x / noise.q(j)).sum::<f64>())
            .collect()
    }
}

pub const RESIDUAL_TOL: f64 = 1e-8;

/// Solve `G(g(s)) ḣ = ġ` per interval by least squares on the noise basis
/// and return the minimal-norm control. The gain is evaluated at the interval
/// midpoint.
pub fn rate_function_eval(xi: &SpectralVelocity, g_path: &[SpectralVelocity], noise: &NoiseModel, times: &[f64]) -> Result<ControlPath> {
    if g_path.len() != times.len() || times.len() < 2 {
        return Err(Error::RejectedInput(format!("path has {} fields for {} times (need ≥ 2, equal)", g_path.len(), times.len())));
    }
    if times[0] != 0.0 || (times[times.len() - 1] - 1.0).abs() > 1e-12 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::RejectedInput("time grid must increase strictly from 0 to 1".into()));
    }
    if g_path.iter().any(|g| !g.same_grid(xi)) || !xi.grid().spec().eq(noise.grid().spec()) {
        return Err(Error::GridMismatch("path, initial datum and noise model must share a grid".into()));
    }
    let scale = xi.h_norm_sq().sqrt().max(1.0);
    if g_path[0].sub(xi).h_norm_sq().sqrt() > 1e-10 * scale {
        return Err(Error::RejectedInput("path must start at the initial datum".into()));
    }
    let mut h_dot = Vec::with_capacity(times.len() - 1);
    let mut cost = 0.0;
    let mut residual: f64 = 0.0;
    let mut reachable = true;
    for (w, gw) in times.windows(2).zip(g_path.windows(2)) {
        let dt = w[1] - w[0];
        let gdot = gw[1].sub(&gw[0]).scale(1.0 / dt);
        let norm = gdot.h_norm_sq().sqrt();
        let c = noise.coordinates(&gdot);
        let fitted = noise.realise(&crate::noise::WienerIncrement { coords: c.clone() });
        let res = gdot.sub(&fitted).h_norm_sq().sqrt();
        let rel = if norm > 0.0 { res / norm } else { 0.0 };
        residual = residual.max(rel);
        let mid = gw[0].add_scaled(&gw[1], 1.0).scale(0.5);
        let phi = match noise.kind() {
            NoiseKind::Additive => 1.0,
            NoiseKind::DiagonalMultiplicative => noise.gain(&mid),
        };
        let mut hd = Vec::with_capacity(c.len());
        for (j, cj) in c.iter().enumerate() {
            let x = if *cj == 0.0 { 0.0 } else { cj / phi };
            let q = noise.q(j);
            if x != 0.0 && !(q > 0.0 && x.is_finite()) {
                reachable = false;
            } else if x != 0.0 {
                cost += 0.5 * x * x / q * dt;
            }
            hd.push(x);
        }
        if rel > RESIDUAL_TOL {
            reachable = false;
        }
        h_dot.push(hd);
    }
    Ok(ControlPath { times: times.to_vec(), h_dot, cost: if reachable { cost } else { f64::INFINITY }, reachable, residual })
}

/// Straight path `g(t) = ξ + t·v` sampled on `times`.
pub fn straight_path(xi: &SpectralVelocity, v: &SpectralVelocity, times: &[f64]) -> Vec<SpectralVelocity> {
    times.iter().map(|&t| xi.add_scaled(v, t)).collect()
}

pub fn uniform_times(intervals: usize) -> Vec<f64> {
    (0..=intervals).map(|i| i as f64 / intervals as f64).collect()
}

// ---------------------------------------------------------------------------
// tube consistency

/// Tube `{ sup_t |v^ε(t) − (ξ + t·v)|_H < radius }` around a straight path.
#[derive(Clone, Debug)]
pub struct Tube {
    pub direction: SpectralVelocity,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub estimate: LdpEstimate,
    /// `−ε log p̂` (a lower bound when there were no hits)
    pub neg_eps_log_p: f64,
    /// `−ε log p̂ − inf I`
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Cost of the centre path.
    pub centre_cost: f64,
    /// Smallest cost over the bundle of scaled straight paths in the tube.
    pub rate_inf: f64,
    pub rows: Vec<ConsistencyRow>,
    /// `|gap|` nonincreasing as `ε` decreases.
    pub gap_shrinks: bool,
    /// Set when some `ε` produced no hits; widen the tube and rerun.
    pub insufficient_hits: bool,
}

/// Whether the diffusion-only path stays inside the tube on `[0, 1]`.
pub fn tube_event(cfg: &SimConfig, epsilon: f64, tube: &Tube, stream: &mut RandomStream) -> Result<bool> {
    let steps = horizon_steps(cfg)?;
    let eps_cfg = cfg.clone().with_epsilon(Some(epsilon));
    let xi = cfg.initial_state()?;
    let r2 = tube.radius * tube.radius;
    let mut v = xi.clone();
    for k in 0..steps {
        let dw = sample_increment(&cfg.noise, cfg.dt, stream)?;
        v = step_diffusion_only(&v, &eps_cfg, &dw)?;
        let t = (k + 1) as f64 * cfg.dt;
        if v.u.sub(&xi.u.add_scaled(&tube.direction, t)).h_norm_sq() >= r2 {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn ldp_consistency_report(cfg: &SimConfig, tube: &Tube, epsilons: &[f64], n_samples: usize, exec: Execution) -> Result<ConsistencyReport> {
    if cfg.noise.kind() != NoiseKind::Additive {
        return Err(Error::RejectedInput("tube consistency needs additive noise (closed-form rate)".into()));
    }
    if !(tube.radius > 0.0) {
        return Err(Error::InvalidParameter { name: "radius", reason: "must be > 0".into() });
    }
    cfg.validate()?;
    epsilons.iter().try_for_each(|&e| check_epsilon(e))?;
    check_samples(n_samples, 1)?;
    let xi = cfg.initial_state()?.u;
    let times = uniform_times(16);
    let centre = rate_function_eval(&xi, &straight_path(&xi, &tube.direction, &times), &cfg.noise, &times)?;
    // the bundle: paths ξ + t·λv with |λ − 1|·|v| < radius
    let vn = tube.direction.h_norm_sq().sqrt();
    let span = if vn > 0.0 { (tube.radius / vn).min(1.0) } else { 0.0 };
    let rate_inf = (0..=20)
        .map(|i| 1.0 - span + 2.0 * span * i as f64 / 20.0)
        .filter(|l| (l - 1.0).abs() * vn < tube.radius)
        .map(|l| rate_function_eval(&xi, &straight_path(&xi, &tube.direction.scale(l), &times), &cfg.noise, &times).map(|c| c.cost))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(centre.cost, f64::min);
    let mut rows = Vec::with_capacity(epsilons.len());
    for (ei, &eps) in epsilons.iter().enumerate() {
        let ins = exec.try_map_indexed(n_samples, |i| {
            let mut s = RandomStream::new(cfg.seed, stream_key(family(FAMILY_TUBE, ei), i));
            tube_event(cfg, eps, tube, &mut s)
        })?;
        let hits = ins.iter().filter(|&&b| b).count() as u64;
        let estimate = LdpEstimate::from_counts(eps, "tube", tube.radius, hits, n_samples as u64);
        let neg = -estimate.eps_log_p;
        rows.push(ConsistencyRow { gap: neg - rate_inf, neg_eps_log_p: neg, estimate });
    }
    let mut order: Vec<&ConsistencyRow> = rows.iter().collect();
    order.sort_by(|a, b| b.estimate.epsilon.total_cmp(&a.estimate.epsilon));
    let gap_shrinks = order.windows(2).all(|w| w[1].gap.abs() <= w[0].gap.abs());
    let insufficient_hits = rows.iter().any(|r| r.estimate.hits == 0);
    Ok(ConsistencyReport { centre_cost: centre.cost, rate_inf, rows, gap_shrinks, insufficient_hits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Grid, GridSpec};
    use crate::integrator::{Forcing, InitialData, Scheme};
    use crate::noise::{NoiseSpec, WienerIncrement};
    use crate::operators::DampingParams;

    fn cfg(sigma: f64) -> SimConfig {
        let grid = Grid::new(GridSpec::new(4)).unwrap();
        SimConfig {
            noise: NoiseModel::new(NoiseSpec { sigma, ..NoiseSpec::default() }, grid.clone()).unwrap(),
            grid,
            damping: DampingParams::new(1.0, 3.0).unwrap(),
            mu: 1.0,
            forcing: Forcing::Zero,
            initial: InitialData::Shear { amplitude: 1.0 },
            dt: 0.1,
            t_end: 1.0,
            scheme: Scheme::SemiImplicit,
            epsilon: None,
            seed: 11,
        }
    }

    #[test]
    fn estimate_zero_hits_is_one_sided() {
        let e = LdpEstimate::from_counts(0.1, "x", 1.0, 0, 1000);
        assert!(e.upper_bound_only);
        assert!((e.eps_log_p - 0.1 * (0.003f64).ln()).abs() < 1e-15);
        assert!(e.ci_low <= e.p_hat && e.p_hat <= e.ci_high);
    }

    #[test]
    fn huge_delta_has_no_hits_and_zero_noise_is_deterministic() {
        let c = cfg(0.2);
        let r = tail_equivalence(&c, &[0.5], 1e12, 1000, Execution::Sequential).unwrap();
        assert_eq!(r[0].hits, 0);
        let c0 = cfg(0.0);
        let a = tail_event(&c0, 0.5, 1e-6, &mut RandomStream::new(1, 1)).unwrap();
        for i in 0..20 {
            assert_eq!(tail_event(&c0, 0.5, 1e-6, &mut RandomStream::new(9, i)).unwrap(), a);
        }
        let r = tail_equivalence(&c0, &[0.5], 1e-6, 1000, Execution::Sequential).unwrap();
        assert!(r[0].hits == 0 || r[0].hits == 1000);
    }

    #[test]
    fn ball_below_initial_energy_always_hit() {
        let c = cfg(0.2);
        let xi = c.initial_state().unwrap().u.h_norm_sq();
        let r = energy_ball_tail(&c, 0.1, &[0.5 * xi, 1e9], 50, Execution::Sequential).unwrap();
        assert_eq!(r[0].p_hat, 1.0);
        assert_eq!(r[0].eps_log_p, 0.0);
        assert_eq!(r[1].hits, 0);
        assert!(energy_ball_tail(&c, 0.1, &[2.0, 1.0], 50, Execution::Sequential).is_err());
    }

    #[test]
    fn constant_path_costs_nothing() {
        let c = cfg(0.2);
        let xi = c.initial_state().unwrap().u;
        let times = uniform_times(8);
        let path = vec![xi.clone(); times.len()];
        let cp = rate_function_eval(&xi, &path, &c.noise, &times).unwrap();
        assert_eq!(cp.cost, 0.0);
        assert!(cp.reachable);
        assert!(cp.h_dot.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn straight_path_closed_form() {
        let c = cfg(0.2);
        let xi = c.initial_state().unwrap().u;
        let mut r = RandomStream::new(4, 4);
        let coords: Vec<f64> = (0..c.noise.dim()).map(|_| r.normal()).collect();
        let v = c.noise.realise(&WienerIncrement { coords: coords.clone() });
        let times = uniform_times(10);
        let cp = rate_function_eval(&xi, &straight_path(&xi, &v, &times), &c.noise, &times).unwrap();
        let oracle: f64 = coords.iter().enumerate().map(|(j, x)| 0.5 * x * x / c.noise.q(j)).sum();
        assert!((cp.cost - oracle).abs() < 1e-10 * oracle);
        let costs: f64 = cp.interval_costs(&c.noise).iter().sum();
        assert!((costs - cp.cost).abs() < 1e-12 * oracle);
    }

    #[test]
    fn unforced_direction_is_unreachable() {
        let grid = Grid::new(GridSpec::new(8)).unwrap();
        let noise = NoiseModel::new(NoiseSpec { forced: crate::noise::ForcedModes::MaxK2(1), ..NoiseSpec::default() }, grid.clone()).unwrap();
        let xi = SpectralVelocity::zeros(grid.clone());
        let v = SpectralVelocity::from_mode_fn(grid.clone(), |k| {
            let z = num_complex::Complex64::new(0.0, 0.0);
            if k == [1, 1, 0] { [z, z, num_complex::Complex64::new(1.0, 0.0)] } else { [z; 3] }
        });
        let times = uniform_times(4);
        let cp = rate_function_eval(&xi, &straight_path(&xi, &v, &times), &noise, &times).unwrap();
        assert!(!cp.reachable);
        assert_eq!(cp.cost, f64::INFINITY);
        let bad = vec![v.clone(); times.len()];
        assert!(rate_function_eval(&xi, &bad, &noise, &times).is_err());
    }

    #[test]
    fn tube_around_initial_datum_has_zero_rate() {
        let c = cfg(0.2);
        let tube = Tube { direction: SpectralVelocity::zeros(c.grid.clone()), radius: 0.5 };
        let r = ldp_consistency_report(&c, &tube, &[0.2, 0.05], 200, Execution::Sequential).unwrap();
        assert_eq!(r.rate_inf, 0.0);
        assert!(r.rows[1].neg_eps_log_p <= r.rows[0].neg_eps_log_p);
    }
}
