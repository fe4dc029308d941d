//! Experiment drivers behind the `dampns` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{parse_config, parse_config_str, GateResults, PathSpec, RunConfig};
use crate::diagnostics::{
    fmt_f64, gradient_bound_check, ladder_stability, moment_estimates, trapezoid, twin_ensemble_report, CsvLedgerSink, GradientReport,
    LadderVerdict, MomentReport, TwinReport,
};
use crate::exec::{with_workers, Execution};
use crate::fields::snapshot::write_snapshot;
use crate::integrator::{integrate, integrate_ensemble, integrate_twin, TwinRow, TwinState};
use crate::ldp::{
    energy_ball_tail, ldp_consistency_report, rate_function_eval, straight_path, tail_equivalence, uniform_times, write_ldp_csv, LdpEstimate,
    Tube,
};
use crate::noise::{validate_hypotheses, RandomFieldSampler, WienerIncrement};
use crate::properties::run_properties;
use crate::rng::{stream_key, RandomStream};
use crate::{Error, Result, SpectralVelocity};

pub const OUT_ENV: &str = "DAMPNS_OUT";

/// Stream families for the ensemble experiments.
pub const FAMILY_SIMULATE: u32 = 1;
pub const FAMILY_TWIN: u32 = 2;

#[derive(Parser, Debug, Clone)]
#[command(name = "dampns", version, about = "Stochastic damped Navier-Stokes Galerkin simulator")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Rerun from a manifest written by an earlier run.
    #[arg(long, global = true, conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for ensembles.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "dampns-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Single trajectory ledger, or ensemble statistics over a resolution ladder.
    Simulate,
    /// Twin runs sharing the noise, weighted difference.
    Twin,
    /// Tail probabilities of sup|u^ε − v^ε|².
    LdpTail,
    /// Energy-ball exit probabilities.
    LdpBall,
    /// Rate function of a path, optionally with a tube Monte Carlo.
    LdpRate,
    /// Check the noise hypotheses on random fields.
    ValidateNoise,
    /// Run the invariant suite; exits nonzero on failure.
    Properties,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Twin => "twin",
            Command::LdpTail => "ldp-tail",
            Command::LdpBall => "ldp-ball",
            Command::LdpRate => "ldp-rate",
            Command::ValidateNoise => "validate-noise",
            Command::Properties => "properties",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    /// Exact configuration used, seed included.
    pub config: String,
    pub seed: u64,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub workers: usize,
    /// Output files, relative to the output directory.
    pub outputs: Vec<String>,
    pub gates: GateResults,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::Config { path: path.to_owned(), message: e.to_string() })?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
    /// Set when a checked property failed.
    pub failed: bool,
}

/// Built-in model used by `properties` when no config is given.
pub const DEFAULT_CONFIG: &str = r#"
seed = 1
[grid]
n = 8
[physics]
mu = 1.0
alpha = 1.0
beta = 3.0
[noise]
kind = "additive"
sigma = 0.1
gamma = 2.0
[initial]
kind = "random-smooth"
seed = 1
max_k2 = 6
h1_norm = 1.0
[time]
dt = 1e-3
t_end = 0.05
"#;

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn load(cli: &Cli) -> Result<(RunConfig, Option<Command>)> {
    let (cfg, cmd) = if let Some(m) = &cli.manifest {
        let man = RunManifest::read(m)?;
        (parse_config_str(&man.config, m)?.with_seed(man.seed), Some(man.command))
    } else if let Some(c) = &cli.config {
        (parse_config(c)?, None)
    } else if cli.command == Command::Properties {
        (parse_config_str(DEFAULT_CONFIG, Path::new("<default>"))?, None)
    } else {
        return Err(Error::RejectedInput(format!("{} needs --config or --manifest", cli.command.name())));
    };
    Ok((if let Some(s) = cli.seed { cfg.with_seed(s) } else { cfg }, cmd))
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.push(name.to_owned());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

fn execution() -> Execution {
    if cfg!(feature = "parallel") {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Run one subcommand and write its outputs plus `manifest.json`.
pub fn run(cli: &Cli) -> Result<RunOutcome> {
    let started = now();
    let (cfg, manifest_cmd) = load(cli)?;
    if let Some(c) = manifest_cmd {
        if c != cli.command {
            return Err(Error::RejectedInput(format!("manifest was written by {}, not {}", c.name(), cli.command.name())));
        }
    }
    if cli.workers == 0 {
        return Err(Error::InvalidParameter { name: "workers", reason: "must be ≥ 1".into() });
    }
    std::fs::create_dir_all(&cli.out)?;
    let mut out = Outputs { dir: cli.out.clone(), files: vec![] };
    let exec = execution();
    let command = cli.command;
    let (summary, failed) = with_workers(cli.workers, || dispatch(command, &cfg, &mut out, exec))?;
    let manifest = RunManifest {
        command,
        config: cfg.snapshot(),
        seed: cfg.sim.seed,
        version: env!("CARGO_PKG_VERSION").to_owned(),
        started_unix: started,
        finished_unix: now(),
        workers: cli.workers,
        outputs: out.files.clone(),
        gates: cfg.gates.clone(),
    };
    let f = File::create(cli.out.join("manifest.json"))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(RunOutcome { manifest, summary, failed })
}

fn dispatch(cmd: Command, cfg: &RunConfig, out: &mut Outputs, exec: Execution) -> Result<(Vec<String>, bool)> {
    match cmd {
        Command::Simulate => simulate(cfg, out, exec).map(|s| (s, false)),
        Command::Twin => twin(cfg, out, exec).map(|s| (s, false)),
        Command::LdpTail => ldp_tail(cfg, out, exec).map(|s| (s, false)),
        Command::LdpBall => ldp_ball(cfg, out, exec).map(|s| (s, false)),
        Command::LdpRate => ldp_rate(cfg, out, exec).map(|s| (s, false)),
        Command::ValidateNoise => validate_noise(cfg, out).map(|s| (s, false)),
        Command::Properties => properties(cfg, out),
    }
}

fn section<T: Clone>(s: &Option<T>, name: &str) -> Result<T> {
    s.clone().ok_or_else(|| Error::RejectedInput(format!("config has no [{name}] section")))
}

#[derive(Serialize)]
struct RungReport {
    n: usize,
    moments: Option<MomentReport>,
    gradient: Option<GradientReport>,
}

#[derive(Serialize)]
struct LadderReport {
    rungs: Vec<RungReport>,
    sup_h_p: Option<LadderVerdict>,
    int_h_v: Option<LadderVerdict>,
    implied_c: Option<LadderVerdict>,
}

fn simulate(cfg: &RunConfig, out: &mut Outputs, exec: Execution) -> Result<Vec<String>> {
    let sec = cfg.simulate();
    if sec.ensemble == 1 && sec.ladder.is_empty() && sec.moment_p.is_none() && !sec.gradient_check {
        let mut sink = CsvLedgerSink::new(out.create("ledger.csv")?)?;
        let mut stream = RandomStream::new(cfg.sim.seed, stream_key(FAMILY_SIMULATE, 0));
        let traj = integrate(&cfg.sim, &mut stream, &mut sink)?;
        sink.finish()?.flush()?;
        let mut w = out.create("final.snsd")?;
        write_snapshot(&mut w, &traj.final_state.u)?;
        w.flush()?;
        return Ok(vec![
            format!("steps = {}", traj.n_steps),
            format!("ledger rows = {}", traj.n_steps + 1),
            format!("final |u|_H^2 = {}", fmt_f64(traj.final_state.u.h_norm_sq())),
        ]);
    }
    let rungs = if sec.ladder.is_empty() { vec![cfg.sim.grid.n()] } else { sec.ladder.clone() };
    let mut csv = csv::Writer::from_writer(out.create("ensemble.csv")?);
    csv.write_record(["n", "trajectory", "sup_h2", "int_v2", "int_lp", "grad_lhs", "g_h2_0", "final_h2"])?;
    let mut reports = Vec::new();
    let mut lines = Vec::new();
    for &n in &rungs {
        let sim = if n == cfg.sim.grid.n() { cfg.sim.clone() } else { cfg.at_resolution(n)? };
        let ledgers = integrate_ensemble(&sim, sec.ensemble, FAMILY_SIMULATE, exec)?;
        for (i, l) in ledgers.iter().enumerate() {
            let sup = l.iter().map(|r| r.h2).fold(0.0, f64::max);
            let grad = l.iter().map(|r| r.g_h2).fold(0.0, f64::max)
                + trapezoid(l, |r| r.g_v2)
                + trapezoid(l, |r| r.mixed)
                + trapezoid(l, |r| r.sqrtpow);
            csv.write_record([
                n.to_string(),
                i.to_string(),
                fmt_f64(sup),
                fmt_f64(trapezoid(l, |r| r.v2)),
                fmt_f64(trapezoid(l, |r| r.lp)),
                fmt_f64(grad),
                fmt_f64(l[0].g_h2),
                fmt_f64(l[l.len() - 1].h2),
            ])?;
        }
        let moments = match sec.moment_p {
            Some(p) => Some(moment_estimates(&ledgers, p, sec.eta.unwrap_or(2.0))?),
            None => None,
        };
        let gradient = if sec.gradient_check { Some(gradient_bound_check(&ledgers, &sim)?) } else { None };
        if let Some(m) = &moments {
            lines.push(format!("n = {n}: E sup|u|^p = {} ± {}, E∫|u|^(p-2)‖u‖² = {}", fmt_f64(m.sup_h_p.mean), fmt_f64(m.sup_h_p.stderr), fmt_f64(m.int_h_v.mean)));
        }
        if let Some(g) = &gradient {
            lines.push(format!("n = {n}: gradient LHS = {}, implied C = {}", fmt_f64(g.lhs.mean), fmt_f64(g.implied_c)));
        }
        reports.push(RungReport { n, moments, gradient });
    }
    csv.flush()?;
    let pick = |f: &dyn Fn(&RungReport) -> Option<f64>| -> Option<LadderVerdict> {
        let v: Option<Vec<f64>> = reports.iter().map(f).collect();
        v.filter(|v| v.len() > 1).map(|v| ladder_stability(&v))
    };
    let report = LadderReport {
        sup_h_p: pick(&|r| r.moments.as_ref().map(|m| m.sup_h_p.mean)),
        int_h_v: pick(&|r| r.moments.as_ref().map(|m| m.int_h_v.mean)),
        implied_c: pick(&|r| r.gradient.as_ref().map(|g| g.implied_c)),
        rungs: reports,
    };
    for (name, v) in [("sup_h_p", &report.sup_h_p), ("int_h_v", &report.int_h_v), ("implied_c", &report.implied_c)] {
        if let Some(v) = v {
            lines.push(format!("ladder {name}: ratio = {:.4}, stable = {}", v.ratio, v.stable));
        }
    }
    out.json("report.json", &report)?;
    Ok(lines)
}

/// `U(0)`: a smooth field with `|U(0)|_H^2 = size`.
pub fn twin_perturbation(grid: &std::sync::Arc<crate::Grid>, seed: u64, size: f64) -> SpectralVelocity {
    let d = SpectralVelocity::random_smooth(grid.clone(), seed, 6, 1.0);
    let n = d.h_norm_sq();
    if size == 0.0 || n == 0.0 {
        SpectralVelocity::zeros(grid.clone())
    } else {
        d.scale((size / n).sqrt())
    }
}

/// Twin ensemble with unit weight coefficient; other coefficients follow by
/// rescaling `r`.
pub fn twin_ensemble(cfg: &RunConfig, pairs: usize, size: f64, seed: u64, exec: Execution) -> Result<Vec<Vec<TwinRow>>> {
    let sim = &cfg.sim;
    let u0 = sim.initial_state()?.u;
    let pert = twin_perturbation(&sim.grid, seed, size);
    let u1 = u0.add_scaled(&pert, 1.0);
    exec.try_map_indexed(pairs, |i| {
        let mut s = RandomStream::new(sim.seed, stream_key(FAMILY_TWIN, i));
        integrate_twin(sim, TwinState::new(u1.clone(), u0.clone(), 1.0)?, &mut s)
    })
}

pub fn reweight(ens: &[Vec<TwinRow>], a: f64) -> Vec<Vec<TwinRow>> {
    ens.iter()
        .map(|l| {
            l.iter()
                .map(|r| {
                    let r_accum = a * r.r_accum;
                    TwinRow { t: r.t, diff_sq: r.diff_sq, r_accum, weighted: (-r_accum).exp() * r.diff_sq }
                })
                .collect()
        })
        .collect()
}

#[derive(Serialize)]
struct TwinSummary {
    a_coeff: f64,
    report: TwinReport,
}

fn twin(cfg: &RunConfig, out: &mut Outputs, exec: Execution) -> Result<Vec<String>> {
    let sec = section(&cfg.file.twin, "twin")?;
    if sec.a_coeff.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::InvalidParameter { name: "a_coeff", reason: "must be ≥ 0".into() });
    }
    let base = twin_ensemble(cfg, sec.pairs, sec.perturbation, sec.perturbation_seed, exec)?;
    let mut csv = csv::Writer::from_writer(out.create("twin.csv")?);
    csv.write_record(["a_coeff", "t", "mean_weighted", "stderr", "max_weighted"])?;
    let mut summaries = Vec::new();
    let mut lines = Vec::new();
    for &a in &sec.a_coeff {
        let ens = reweight(&base, a);
        let rep = twin_ensemble_report(&ens)?;
        for (i, t) in rep.times.iter().enumerate() {
            let mx = ens.iter().map(|l| l[i].weighted).fold(0.0, f64::max);
            csv.write_record([fmt_f64(a), fmt_f64(*t), fmt_f64(rep.mean[i]), fmt_f64(rep.stderr[i]), fmt_f64(mx)])?;
        }
        lines.push(format!(
            "a = {a}: max weighted difference = {}, final mean = {} ± {}, bound ok = {}",
            rep.max_weighted, fmt_f64(rep.final_mean), fmt_f64(rep.final_stderr), rep.final_bound_ok
        ));
        summaries.push(TwinSummary { a_coeff: a, report: rep });
    }
    csv.flush()?;
    out.json("report.json", &summaries)?;
    Ok(lines)
}

fn ldp_lines(rows: &[LdpEstimate]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            format!(
                "{} ε = {} threshold = {}: hits {}/{}, p = {:.6}, ε log p {} {:.6}",
                r.event_id,
                r.epsilon,
                r.threshold,
                r.hits,
                r.n_samples,
                r.p_hat,
                if r.upper_bound_only { "≤" } else { "=" },
                r.eps_log_p
            )
        })
        .collect()
}

fn ldp_tail(cfg: &RunConfig, out: &mut Outputs, exec: Execution) -> Result<Vec<String>> {
    let sec = section(&cfg.file.ldp_tail, "ldp-tail")?;
    let mut rows = tail_equivalence(&cfg.sim, &sec.epsilons, sec.delta, sec.n_samples, exec)?;
    for (j, xi) in sec.initial_ladder.iter().enumerate() {
        let mut sim = cfg.sim.clone();
        sim.initial = xi.clone();
        for mut r in tail_equivalence(&sim, &sec.epsilons, sec.delta, sec.n_samples, exec)? {
            r.event_id = format!("tail-equivalence/xi{}", j + 1);
            rows.push(r);
        }
    }
    write_ldp_csv(out.create("ldp.csv")?, &rows)?;
    Ok(ldp_lines(&rows))
}

fn ldp_ball(cfg: &RunConfig, out: &mut Outputs, exec: Execution) -> Result<Vec<String>> {
    let sec = section(&cfg.file.ldp_ball, "ldp-ball")?;
    let rows = energy_ball_tail(&cfg.sim, sec.epsilon, &sec.thresholds, sec.n_samples, exec)?;
    write_ldp_csv(out.create("ldp.csv")?, &rows)?;
    Ok(ldp_lines(&rows))
}

/// Velocity `v` of the straight path described by a [`PathSpec`].
pub fn path_direction(cfg: &RunConfig, spec: &PathSpec) -> Result<SpectralVelocity> {
    let sim = &cfg.sim;
    Ok(match spec {
        PathSpec::Constant => SpectralVelocity::zeros(sim.grid.clone()),
        PathSpec::Straight { coords, seed, scale } => {
            let coords = match coords {
                Some(c) if c.len() == sim.noise.dim() => c.clone(),
                Some(c) => {
                    return Err(Error::RejectedInput(format!("path has {} coordinates, noise basis has {}", c.len(), sim.noise.dim())))
                }
                None => {
                    let mut r = RandomStream::new(*seed, 0x7A7E);
                    (0..sim.noise.dim()).map(|_| r.normal()).collect()
                }
            };
            sim.noise.realise(&WienerIncrement { coords }).scale(*scale)
        }
        PathSpec::Mode { k, polarisation, amplitude } => {
            use num_complex::Complex64;
            let (k, e, a) = (*k, *polarisation, *amplitude);
            if sim.grid.mode_index(k).is_none() {
                return Err(Error::RejectedInput(format!("wavevector {k:?} is not retained on this grid")));
            }
            let neg = [-k[0], -k[1], -k[2]];
            let raw = SpectralVelocity::from_mode_fn(sim.grid.clone(), |q| {
                let s = if q == k || q == neg { a / 2.0 } else { 0.0 };
                [Complex64::new(s * e[0], 0.0), Complex64::new(s * e[1], 0.0), Complex64::new(s * e[2], 0.0)]
            });
            if raw.h_norm_sq() == 0.0 {
                return Err(Error::RejectedInput("polarisation is parallel to k; the divergence-free part vanishes".into()));
            }
            raw
        }
    })
}

#[derive(Serialize)]
struct RateReport {
    cost: f64,
    reachable: bool,
    residual: f64,
    tube: Option<crate::ldp::ConsistencyReport>,
}

fn ldp_rate(cfg: &RunConfig, out: &mut Outputs, exec: Execution) -> Result<Vec<String>> {
    let sec = section(&cfg.file.ldp_rate, "ldp-rate")?;
    let xi = cfg.sim.initial_state()?.u;
    let v = path_direction(cfg, &sec.path)?;
    let times = uniform_times(sec.intervals.max(1));
    let cp = rate_function_eval(&xi, &straight_path(&xi, &v, &times), &cfg.sim.noise, &times)?;
    let mut csv = csv::Writer::from_writer(out.create("rate.csv")?);
    csv.write_record(["interval", "t0", "t1", "cost"])?;
    for (i, (w, c)) in cp.times.windows(2).zip(cp.interval_costs(&cfg.sim.noise)).enumerate() {
        csv.write_record([i.to_string(), fmt_f64(w[0]), fmt_f64(w[1]), fmt_f64(if cp.reachable { c } else { f64::INFINITY })])?;
    }
    csv.flush()?;
    let mut lines = vec![format!("cost = {}", cp.cost), format!("reachable = {}", cp.reachable)];
    let tube = match &sec.tube {
        Some(t) => {
            let rep = ldp_consistency_report(&cfg.sim, &Tube { direction: v, radius: t.radius }, &t.epsilons, t.n_samples, exec)?;
            write_ldp_csv(out.create("tube.csv")?, &rep.rows.iter().map(|r| r.estimate.clone()).collect::<Vec<_>>())?;
            lines.push(format!("tube rate inf = {}", rep.rate_inf));
            for r in &rep.rows {
                lines.push(format!("ε = {}: −ε log p = {:.6}, gap = {:.6}", r.estimate.epsilon, r.neg_eps_log_p, r.gap));
            }
            if rep.insufficient_hits {
                lines.push("some ε had no hits inside the tube; widen the tube radius and rerun".into());
            }
            Some(rep)
        }
        None => None,
    };
    out.json("report.json", &RateReport { cost: cp.cost, reachable: cp.reachable, residual: cp.residual, tube })?;
    Ok(lines)
}

fn validate_noise(cfg: &RunConfig, out: &mut Outputs) -> Result<Vec<String>> {
    let sec = cfg.file.validate_noise.clone().unwrap_or_default();
    let sampler = RandomFieldSampler { seed: sec.sampler_seed, ..RandomFieldSampler::default() };
    let r = validate_hypotheses(&cfg.sim.noise, &sampler, sec.n_samples)?;
    out.json("noise.json", &r)?;
    let (lo, hi) = r.admissible_p_range();
    Ok(vec![
        format!("growth L = {:.6e}, Lipschitz K = {:.6e}, K < 2: {}", r.l_hat_growth, r.k_hat_lip, r.lipschitz_ok_for_uniqueness),
        format!("V-growth = {:.6e}, V-Lipschitz = {:.6e}", r.l_grad, r.k_grad),
        format!("η = {}, λ₀ = {}, ρ = {:.6e}, admissible p ∈ [{lo}, {hi})", r.eta, r.lambda0, r.rho),
        format!("failures: {}", if r.failures.is_empty() { "none".to_string() } else { r.failures.join(", ") }),
    ])
}

fn properties(cfg: &RunConfig, out: &mut Outputs) -> Result<(Vec<String>, bool)> {
    let results = run_properties(&cfg.sim)?;
    let mut csv = csv::Writer::from_writer(out.create("properties.csv")?);
    csv.write_record(["name", "passed", "detail"])?;
    for r in &results {
        csv.write_record([r.name.as_str(), if r.passed { "true" } else { "false" }, r.detail.as_str()])?;
    }
    csv.flush()?;
    let failed = results.iter().any(|r| !r.passed);
    let lines = results.iter().map(|r| format!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail)).collect();
    Ok((lines, failed))
}
