//! Energy ledgers and the ensemble functionals built on them.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::fields::{compute_norms_with, grad_magnitude_power_field, FieldEval};
use crate::integrator::{advance, Scaling, SimConfig, SimState, TwinRow};
use crate::noise::{admissible_p_range, hs_norm_sq, sample_increment};
use crate::rng::RandomStream;
use crate::stats::{estimate, mean_stderr, Estimate};
use crate::{Error, Result};

pub const LEDGER_HEADER: [&str; 10] = ["t", "h2", "v2", "lp", "g_h2", "g_v2", "mixed", "sqrtpow", "hs2", "stoch_acc"];

/// One row of the energy ledger.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: f64,
    /// `|u|_H^2`
    pub h2: f64,
    /// `‖u‖^2`
    pub v2: f64,
    /// `|u|_{β+1}^{β+1}`
    pub lp: f64,
    /// `|∇u|_2^2`
    pub g_h2: f64,
    /// `‖∇u‖^2`, read as `|Δu|_2^2`
    pub g_v2: f64,
    /// `∫|u|^{β-1}|∇u|^2 dx`
    pub mixed: f64,
    /// `|∇|u|^{(β+1)/2}|_2^2`
    pub sqrtpow: f64,
    /// `|G(t,u)|_{L_Q}^2`
    pub hs2: f64,
    /// `Σ ⟨u, G ΔW⟩` up to this row
    pub stoch_acc: f64,
}

impl LedgerRow {
    pub fn values(&self) -> [f64; 10] {
        [self.t, self.h2, self.v2, self.lp, self.g_h2, self.g_v2, self.mixed, self.sqrtpow, self.hs2, self.stoch_acc]
    }

    pub fn from_values(v: [f64; 10]) -> Self {
        LedgerRow { t: v[0], h2: v[1], v2: v[2], lp: v[3], g_h2: v[4], g_v2: v[5], mixed: v[6], sqrtpow: v[7], hs2: v[8], stoch_acc: v[9] }
    }
}

pub type EnergyLedger = Vec<LedgerRow>;

pub trait LedgerSink {
    fn push(&mut self, row: LedgerRow) -> Result<()>;
}

impl LedgerSink for Vec<LedgerRow> {
    fn push(&mut self, row: LedgerRow) -> Result<()> {
        Vec::push(self, row);
        Ok(())
    }
}

/// Discards rows; useful when only the final state matters.
pub struct NullSink;

impl LedgerSink for NullSink {
    fn push(&mut self, _row: LedgerRow) -> Result<()> {
        Ok(())
    }
}

/// Streams rows as CSV with 17 significant digits.
pub struct CsvLedgerSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvLedgerSink<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(LEDGER_HEADER)?;
        Ok(Self { writer })
    }

    pub fn finish(mut self) -> Result<W> {
        self.writer.flush()?;
        self.writer.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

impl<W: Write> LedgerSink for CsvLedgerSink<W> {
    fn push(&mut self, row: LedgerRow) -> Result<()> {
        self.writer.write_record(row.values().iter().map(|v| fmt_f64(*v)))?;
        Ok(())
    }
}

/// 17 significant digits in scientific notation; round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_ledger_csv<R: Read>(r: R) -> Result<EnergyLedger> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != LEDGER_HEADER {
        return Err(Error::RejectedInput(format!("unexpected ledger header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let mut v = [0.0; 10];
        for (slot, field) in v.iter_mut().zip(rec.iter()) {
            *slot = field.parse().map_err(|_| Error::RejectedInput(format!("bad number {field:?}")))?;
        }
        rows.push(LedgerRow::from_values(v));
    }
    Ok(rows)
}

pub fn ledger_row(state: &SimState, cfg: &SimConfig) -> LedgerRow {
    ledger_row_with(state, &state.u.evaluate(), cfg, 0.0)
}

pub(crate) fn ledger_row_with(state: &SimState, eval: &FieldEval, cfg: &SimConfig, stoch_acc: f64) -> LedgerRow {
    let beta = cfg.damping.beta;
    let norms = compute_norms_with(&state.u, eval, beta);
    let mixed = eval
        .u
        .samples()
        .iter()
        .zip(&eval.grad)
        .map(|(u, d)| {
            let m2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
            let g2 = d.iter().flatten().map(|x| x * x).sum::<f64>();
            if m2 == 0.0 {
                0.0
            } else {
                m2.powf((beta - 1.0) / 2.0) * g2
            }
        })
        .sum::<f64>()
        * cfg.grid.cell_volume();
    let time_arg = cfg.epsilon.unwrap_or(1.0) * state.t;
    LedgerRow {
        t: state.t,
        h2: norms.h_norm_sq,
        v2: norms.v_norm_sq,
        lp: norms.lp_norm,
        g_h2: norms.grad_h_norm_sq,
        g_v2: norms.grad_v_norm_sq,
        mixed,
        sqrtpow: grad_magnitude_power_field(&eval.u, beta),
        hs2: hs_norm_sq(&cfg.noise, time_arg, &state.u),
        stoch_acc,
    }
}

/// `∫ f dt` over the ledger by the trapezoid rule.
pub fn trapezoid(ledger: &[LedgerRow], f: impl Fn(&LedgerRow) -> f64) -> f64 {
    ledger.windows(2).map(|w| 0.5 * (w[1].t - w[0].t) * (f(&w[0]) + f(&w[1]))).sum()
}

/// Per-step residuals of the discrete Itô energy balance
/// `|u⁺|² − |u|² + 2h μ‖u⁺‖² + 2h α|u|_{β+1}^{β+1} − 2⟨u, GΔW⟩ − |GΔW|²`
/// with `h` the drift step, together with the scale
/// `sup_t |u|_H^2 + Σ |GΔW|^2` of the energy moved in the run.
pub fn energy_balance_residuals(cfg: &SimConfig, stream: &mut RandomStream) -> Result<(Vec<f64>, f64)> {
    cfg.validate()?;
    if cfg.forcing.at(0.0).is_some() {
        return Err(Error::RejectedInput("energy balance check expects zero forcing".into()));
    }
    let sc = cfg.epsilon.map_or(Scaling::UNIT, Scaling::rescaled);
    let h = sc.drift * cfg.dt;
    let mut state = cfg.initial_state()?;
    let mut out = Vec::with_capacity(cfg.n_steps() as usize);
    let mut sup = state.u.h_norm_sq();
    let mut injected = 0.0;
    for _ in 0..cfg.n_steps() {
        let eval = state.u.evaluate();
        let lp = crate::fields::lp_norm(&eval.u, cfg.damping.beta + 1.0);
        let dw = sample_increment(&cfg.noise, cfg.dt, stream)?;
        let step = advance(&state, &eval, cfg, &dw, sc)?;
        let gdw2 = step.noise.h_norm_sq();
        let res = step.state.u.h_norm_sq() - state.u.h_norm_sq()
            + 2.0 * h * cfg.mu * step.state.u.v_norm_sq()
            + 2.0 * h * cfg.damping.alpha * lp
            - 2.0 * state.u.inner_h(&step.noise)
            - gdw2;
        out.push(res);
        injected += gdw2;
        state = step.state;
        sup = sup.max(state.u.h_norm_sq());
    }
    Ok((out, sup + injected))
}

// ---------------------------------------------------------------------------
// moment estimates

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    pub eta: f64,
    pub admissible: (f64, f64),
    pub n_trajectories: usize,
    /// `E sup_t |u|_H^p`
    pub sup_h_p: Estimate,
    /// `E ∫ |u|_H^{p-2} ‖u‖^2 dt`
    pub int_h_v: Estimate,
    /// `E ∫ |u|_{β+1}^{β+1} dt`
    pub int_lp: Estimate,
}

pub fn check_p_range(p: f64, eta: f64) -> Result<(f64, f64)> {
    let (lo, hi) = admissible_p_range(eta);
    if !(p >= lo && p < hi) {
        return Err(Error::Gate(format!(
            "moment exponent p = {p} violates p ∈ [2, 2 + η/(2 − η)) with η = {eta}; admissible interval is [{lo}, {hi})"
        )));
    }
    Ok((lo, hi))
}

pub fn moment_estimates(ensemble: &[EnergyLedger], p: f64, eta: f64) -> Result<MomentReport> {
    let admissible = check_p_range(p, eta)?;
    if ensemble.len() < 30 {
        return Err(Error::InvalidParameter { name: "ensemble", reason: format!("needs ≥ 30 trajectories, got {}", ensemble.len()) });
    }
    let half = p / 2.0;
    let sup: Vec<f64> = ensemble.iter().map(|l| l.iter().map(|r| r.h2.powf(half)).fold(0.0, f64::max)).collect();
    let ihv: Vec<f64> = ensemble.iter().map(|l| trapezoid(l, |r| pow0(r.h2, half - 1.0) * r.v2)).collect();
    let ilp: Vec<f64> = ensemble.iter().map(|l| trapezoid(l, |r| r.lp)).collect();
    Ok(MomentReport {
        p,
        eta,
        admissible,
        n_trajectories: ensemble.len(),
        sup_h_p: estimate(&sup, 1),
        int_h_v: estimate(&ihv, 2),
        int_lp: estimate(&ilp, 3),
    })
}

// `x^e` with `0^0 = 1` and `0^e = 0` for `e > 0`
fn pow0(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        x.powf(e)
    }
}

/// Verdict on a statistic measured across a resolution ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderVerdict {
    pub values: Vec<f64>,
    pub ratio: f64,
    pub stable: bool,
}

/// Stable when `max / min ≤ 2`; an all-zero ladder is stable.
pub fn ladder_stability(values: &[f64]) -> LadderVerdict {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio = if max == 0.0 && min == 0.0 { 1.0 } else { max / min };
    LadderVerdict { values: values.to_vec(), ratio, stable: ratio.is_finite() && ratio <= 2.0 }
}

// ---------------------------------------------------------------------------
// gradient functional

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub n_trajectories: usize,
    /// `E[sup|∇u|² + ∫‖∇u‖² + ∫∫|u|^{β-1}|∇u|² + ∫|∇|u|^{(β+1)/2}|²]`
    pub lhs: Estimate,
    /// `E|∇u(0)|_2^2`
    pub initial_grad: f64,
    /// `lhs / (E|∇u(0)|² + 1)`
    pub implied_c: f64,
}

pub fn gradient_bound_check(ensemble: &[EnergyLedger], cfg: &SimConfig) -> Result<GradientReport> {
    cfg.damping.require_strong_mode()?;
    if ensemble.is_empty() || ensemble.iter().any(|l| l.is_empty()) {
        return Err(Error::IncompleteTrajectory("empty ensemble or ledger".into()));
    }
    let lhs: Vec<f64> = ensemble
        .iter()
        .map(|l| {
            l.iter().map(|r| r.g_h2).fold(0.0, f64::max)
                + trapezoid(l, |r| r.g_v2)
                + trapezoid(l, |r| r.mixed)
                + trapezoid(l, |r| r.sqrtpow)
        })
        .collect();
    let initial: Vec<f64> = ensemble.iter().map(|l| l[0].g_h2).collect();
    let lhs = estimate(&lhs, 4);
    let initial_grad = mean_stderr(&initial).0;
    Ok(GradientReport { n_trajectories: ensemble.len(), implied_c: lhs.mean / (initial_grad + 1.0), lhs, initial_grad })
}

// ---------------------------------------------------------------------------
// energy ball and exit times

const TIME_TOL: f64 = 1e-9;

/// `sup_{[0,1]} |u|_H^2 + 2ε ∫_0^1 ‖u‖^2 dt` for a rescaled-time ledger.
pub fn energy_ball_functional(ledger: &[LedgerRow], epsilon: f64) -> Result<f64> {
    let covers = ledger.len() >= 2 && ledger[0].t.abs() <= TIME_TOL && ledger.last().map_or(false, |r| r.t >= 1.0 - TIME_TOL);
    if !covers {
        return Err(Error::IncompleteTrajectory(format!(
            "ledger spans [{}, {}], need [0, 1]",
            ledger.first().map_or(f64::NAN, |r| r.t),
            ledger.last().map_or(f64::NAN, |r| r.t)
        )));
    }
    let end = ledger.iter().position(|r| r.t >= 1.0 - TIME_TOL).unwrap();
    let window = &ledger[..=end];
    let sup = window.iter().map(|r| r.h2).fold(0.0, f64::max);
    Ok(sup + 2.0 * epsilon * trapezoid(window, |r| r.v2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitCriterion {
    /// `ε ∫_0^t ‖u‖^2 > M`
    IntegratedV,
    /// `|u(t)|_H^2 > M`
    EnergyH,
    /// `‖u(t)‖^2 > M`
    EnergyV,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    /// Exit time, `f64::INFINITY` when no criterion fires.
    pub tau: f64,
    pub threshold_m: f64,
    pub criterion: Option<ExitCriterion>,
}

impl ExitRecord {
    pub fn exited(&self) -> bool {
        self.tau.is_finite()
    }
}

/// First time any functional exceeds `M`, linearly interpolated inside the
/// crossing step.
pub fn detect_exit(ledger: &[LedgerRow], m: f64, epsilon: f64) -> Result<ExitRecord> {
    if !(m >= 0.0) {
        return Err(Error::InvalidParameter { name: "M", reason: format!("must be ≥ 0, got {m}") });
    }
    let mut integral = Vec::with_capacity(ledger.len());
    let mut acc = 0.0;
    for (i, r) in ledger.iter().enumerate() {
        if i > 0 {
            let p = &ledger[i - 1];
            acc += 0.5 * (r.t - p.t) * (r.v2 + p.v2);
        }
        integral.push(epsilon * acc);
    }
    let series: [(ExitCriterion, Vec<f64>); 3] = [
        (ExitCriterion::IntegratedV, integral),
        (ExitCriterion::EnergyH, ledger.iter().map(|r| r.h2).collect()),
        (ExitCriterion::EnergyV, ledger.iter().map(|r| r.v2).collect()),
    ];
    let mut best = ExitRecord { tau: f64::INFINITY, threshold_m: m, criterion: None };
    for (crit, f) in &series {
        if let Some(i) = f.iter().position(|&x| x > m) {
            let tau = if i == 0 {
                ledger[0].t
            } else {
                let (t0, t1) = (ledger[i - 1].t, ledger[i].t);
                t0 + (m - f[i - 1]) / (f[i] - f[i - 1]) * (t1 - t0)
            };
            if tau < best.tau {
                best = ExitRecord { tau, threshold_m: m, criterion: Some(*crit) };
            }
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// twin runs

/// `e^{-r(t)} |U(t)|_H^2` along a twin ledger.
pub fn weighted_twin_difference(ledger: &[TwinRow]) -> Vec<f64> {
    ledger.iter().map(|r| r.weighted).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinReport {
    pub n_pairs: usize,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Largest weighted difference seen in any pair at any time.
    pub max_weighted: f64,
    pub initial: f64,
    pub final_mean: f64,
    pub final_stderr: f64,
    /// `final_mean ≤ initial + 3·final_stderr`
    pub final_bound_ok: bool,
    /// `mean[i+1] ≤ mean[i] + 3·(stderr[i] + stderr[i+1])` for every step
    pub nonincreasing_within_3se: bool,
}

pub fn twin_ensemble_report(ensemble: &[Vec<TwinRow>]) -> Result<TwinReport> {
    let len = ensemble.first().map_or(0, Vec::len);
    if len == 0 || ensemble.iter().any(|l| l.len() != len) {
        return Err(Error::IncompleteTrajectory("twin ledgers empty or of unequal length".into()));
    }
    let mut mean = Vec::with_capacity(len);
    let mut stderr = Vec::with_capacity(len);
    for i in 0..len {
        let col: Vec<f64> = ensemble.iter().map(|l| l[i].weighted).collect();
        let (m, s) = mean_stderr(&col);
        mean.push(m);
        stderr.push(s);
    }
    let max_weighted = ensemble.iter().flatten().map(|r| r.weighted).fold(0.0, f64::max);
    let initial = mean[0];
    let final_mean = mean[len - 1];
    let final_stderr = stderr[len - 1];
    let nonincreasing = (1..len).all(|i| mean[i] <= mean[i - 1] + 3.0 * (stderr[i] + stderr[i - 1]));
    Ok(TwinReport {
        n_pairs: ensemble.len(),
        times: ensemble[0].iter().map(|r| r.t).collect(),
        final_bound_ok: final_mean <= initial + 3.0 * final_stderr,
        nonincreasing_within_3se: nonincreasing,
        mean,
        stderr,
        max_weighted,
        initial,
        final_mean,
        final_stderr,
    })
}
