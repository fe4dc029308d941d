//! Run configuration files.
//!
//! Configs are TOML. Top-level sections describe the model; one optional
//! section per subcommand holds experiment parameters:
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! n = 8                      # points per axis
//! # box_length = 6.283185307179586
//! # dealias_fraction = 0.6666666666666666
//!
//! [physics]
//! mu = 1.0
//! alpha = 1.0
//! beta = 3.0
//! strong_mode = false        # enforce the strong-solution gate
//!
//! [noise]
//! kind = "additive"          # or "diagonal-multiplicative"
//! sigma = 0.1
//! gamma = 2.0
//! max_k2 = 2                 # or: modes = [[1, 0, 0], [0, 1, 1]]
//!
//! [forcing]
//! kind = "zero"              # or: kind = "shear", amplitude = 0.5
//!
//! [initial]
//! kind = "random-smooth"     # "zero" | "shear" (amplitude) | "random-smooth"
//! seed = 1
//! max_k2 = 6
//! h1_norm = 1.0
//!
//! [time]
//! dt = 1e-3
//! t_end = 1.0
//! scheme = "semi-implicit"   # or "tamed-semi-implicit"
//! # epsilon = 0.1            # run the small-time process
//!
//! [simulate]
//! ensemble = 1
//! ```
//!
//! Unknown keys are rejected. Parse errors carry line and column.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fields::{Grid, GridSpec};
use crate::integrator::{shear_mode, Forcing, InitialData, Scheme, SimConfig};
use crate::noise::{admissible_p_range, validate_hypotheses, ForcedModes, NoiseKind, NoiseModel, NoiseSpec, RandomFieldSampler};
use crate::operators::{DampingParams, STRONG_MODE_CONDITION};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSection,
    pub physics: PhysicsSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub forcing: ForcingSection,
    #[serde(default)]
    pub initial: InitialData,
    pub time: TimeSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub twin: Option<TwinSection>,
    #[serde(default, rename = "ldp-tail", skip_serializing_if = "Option::is_none")]
    pub ldp_tail: Option<LdpTailSection>,
    #[serde(default, rename = "ldp-ball", skip_serializing_if = "Option::is_none")]
    pub ldp_ball: Option<LdpBallSection>,
    #[serde(default, rename = "ldp-rate", skip_serializing_if = "Option::is_none")]
    pub ldp_rate: Option<LdpRateSection>,
    #[serde(default, rename = "validate-noise", skip_serializing_if = "Option::is_none")]
    pub validate_noise: Option<ValidateNoiseSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dealias_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub strong_mode: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_k2: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<[i32; 3]>>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let d = NoiseSpec::default();
        Self { kind: d.kind, sigma: d.sigma, gamma: d.gamma, max_k2: None, modes: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ForcingSection {
    #[default]
    Zero,
    /// Steady `f = (A sin y, 0, 0)`.
    Shear { amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default = "one")]
    pub ensemble: usize,
    /// Points per axis for each rung of a resolution ladder.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ladder: Vec<usize>,
    /// Moment order for the moment estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_p: Option<f64>,
    /// Coercivity exponent used by the moment gate; defaults to the value
    /// the noise validator reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default)]
    pub gradient_check: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { ensemble: 1, ladder: vec![], moment_p: None, eta: None, gradient_check: false }
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwinSection {
    pub pairs: usize,
    /// Weight coefficients `a`; one ensemble per value.
    pub a_coeff: Vec<f64>,
    /// `|U(0)|_H^2`.
    pub perturbation: f64,
    #[serde(default = "perturbation_seed")]
    pub perturbation_seed: u64,
    #[serde(default = "yes")]
    pub require_uniqueness: bool,
}

fn perturbation_seed() -> u64 {
    0xD1FF
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpTailSection {
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub n_samples: usize,
    /// Extra initial data; the experiment is repeated for each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial_ladder: Vec<InitialData>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpBallSection {
    pub epsilon: f64,
    pub thresholds: Vec<f64>,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpRateSection {
    pub path: PathSpec,
    #[serde(default = "intervals")]
    pub intervals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube: Option<TubeSection>,
}

fn intervals() -> usize {
    16
}

/// Target path `g(t) = ξ + t·v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum PathSpec {
    /// `v = 0`.
    Constant,
    /// `v` with the given coordinates on the noise basis; when absent the
    /// coordinates are standard normal draws from `seed`, times `scale`.
    Straight {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coords: Option<Vec<f64>>,
        #[serde(default)]
        seed: u64,
        #[serde(default = "unit")]
        scale: f64,
    },
    /// `v` on a single wavevector with polarisation `e`.
    Mode { k: [i32; 3], polarisation: [f64; 3], amplitude: f64 },
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeSection {
    pub radius: f64,
    pub epsilons: Vec<f64>,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateNoiseSection {
    #[serde(default = "thousand")]
    pub n_samples: usize,
    #[serde(default = "sampler_seed")]
    pub sampler_seed: u64,
}

impl Default for ValidateNoiseSection {
    fn default() -> Self {
        Self { n_samples: 1000, sampler_seed: sampler_seed() }
    }
}

fn thousand() -> usize {
    1000
}

fn sampler_seed() -> u64 {
    0x5eed
}

/// Outcome of one admissibility gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateCheck {
    pub condition: String,
    pub satisfied: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct GateResults {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strong_mode: Option<GateCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_range: Option<GateCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<GateCheck>,
}

impl GateResults {
    pub fn violations(&self) -> Vec<&GateCheck> {
        [&self.strong_mode, &self.p_range, &self.lipschitz].into_iter().flatten().filter(|g| !g.satisfied).collect()
    }
}

/// A parsed and validated configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub file: ConfigFile,
    pub sim: SimConfig,
    pub gates: GateResults,
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config { path: path.to_owned(), message: e.to_string() })?;
    parse_config_str(&text, path)
}

pub fn parse_config_str(text: &str, origin: &Path) -> Result<RunConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config { path: origin.to_owned(), message: annotate(text, &e) })?;
    RunConfig::from_file(file, origin)
}

fn annotate(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let (line, col) = line_col(text, span.start);
            format!("line {line}, column {col}: {}", e.message())
        }
        None => e.message().to_string(),
    }
}

/// 1-based line and column of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

impl RunConfig {
    pub fn from_file(file: ConfigFile, origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::Config { path: origin.to_owned(), message };
        let mut spec = GridSpec::new(file.grid.n);
        if let Some(l) = file.grid.box_length {
            spec = spec.with_box_length(l);
        }
        if let Some(f) = file.grid.dealias_fraction {
            spec = spec.with_dealias_fraction(f);
        }
        let sim = build_sim(&file, spec).map_err(|e| bad(e.to_string()))?;
        let gates = evaluate_gates(&file, &sim)?;
        let violations = gates.violations();
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|g| format!("{} ({})", g.condition, g.detail)).collect();
            return Err(Error::Gate(format!("refused: {}", list.join("; "))));
        }
        Ok(RunConfig { file, sim, gates })
    }

    /// Replace the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.file.seed = seed;
        self.sim.seed = seed;
        self
    }

    /// The configuration as TOML; parsing it back reproduces this config.
    pub fn snapshot(&self) -> String {
        toml::to_string(&self.file).expect("config serialises")
    }

    /// The simulation config at another resolution.
    pub fn at_resolution(&self, n: usize) -> Result<SimConfig> {
        let mut file = self.file.clone();
        file.grid.n = n;
        Ok(RunConfig::from_file(file, Path::new("<ladder>"))?.sim)
    }

    pub fn simulate(&self) -> SimulateSection {
        self.file.simulate.clone().unwrap_or_default()
    }
}

pub fn noise_spec(s: &NoiseSection) -> Result<NoiseSpec> {
    let forced = match (&s.max_k2, &s.modes) {
        (Some(_), Some(_)) => return Err(Error::RejectedInput("noise: give either max_k2 or modes, not both".into())),
        (Some(m), None) => ForcedModes::MaxK2(*m),
        (None, Some(list)) => ForcedModes::List(list.clone()),
        (None, None) => NoiseSpec::default().forced,
    };
    Ok(NoiseSpec { kind: s.kind, forced, sigma: s.sigma, gamma: s.gamma })
}

fn build_sim(file: &ConfigFile, spec: GridSpec) -> Result<SimConfig> {
    let grid = Grid::new(spec)?;
    let damping = DampingParams::new(file.physics.alpha, file.physics.beta)?;
    let noise = NoiseModel::new(noise_spec(&file.noise)?, grid.clone())?;
    let forcing = match file.forcing {
        ForcingSection::Zero => Forcing::Zero,
        ForcingSection::Shear { amplitude } => Forcing::Steady(shear_mode(&grid, amplitude)),
    };
    let sim = SimConfig {
        grid,
        damping,
        mu: file.physics.mu,
        noise,
        forcing,
        initial: file.initial.clone(),
        dt: file.time.dt,
        t_end: file.time.t_end,
        scheme: file.time.scheme,
        epsilon: file.time.epsilon,
        seed: file.seed,
    };
    sim.validate()?;
    sim.initial_state()?;
    Ok(sim)
}

fn evaluate_gates(file: &ConfigFile, sim: &SimConfig) -> Result<GateResults> {
    let mut gates = GateResults::default();
    let sim_section = file.simulate.clone().unwrap_or_default();
    if file.physics.strong_mode || sim_section.gradient_check {
        let d = sim.damping;
        gates.strong_mode = Some(GateCheck {
            condition: STRONG_MODE_CONDITION.into(),
            satisfied: d.strong_mode_ok(),
            detail: format!("α = {}, β = {}", d.alpha, d.beta),
        });
    }
    let needs_lipschitz = file.twin.as_ref().map_or(false, |t| t.require_uniqueness);
    let needs_eta = sim_section.moment_p.is_some() && sim_section.eta.is_none();
    let report = if needs_lipschitz || needs_eta {
        let vn = file.validate_noise.clone().unwrap_or_default();
        let sampler = RandomFieldSampler { seed: vn.sampler_seed, ..RandomFieldSampler::default() };
        Some(validate_hypotheses(&sim.noise, &sampler, vn.n_samples)?)
    } else {
        None
    };
    if let Some(p) = sim_section.moment_p {
        let eta = sim_section.eta.or(report.as_ref().map(|r| r.eta)).unwrap_or(2.0);
        let (lo, hi) = admissible_p_range(eta);
        gates.p_range = Some(GateCheck {
            condition: "p ∈ [2, 2 + η/(2 − η))".into(),
            satisfied: p >= lo && p < hi,
            detail: format!("p = {p}, η = {eta}, admissible [{lo}, {hi})"),
        });
    }
    if needs_lipschitz {
        let r = report.as_ref().expect("validator ran");
        gates.lipschitz = Some(GateCheck {
            condition: "L < 2 with |G(u) − G(v)|²_LQ ≤ L|u − v|²_H".into(),
            satisfied: r.lipschitz_ok_for_uniqueness,
            detail: format!("measured L = {:.6e}", r.k_hat_lip),
        });
    }
    Ok(gates)
}

/// Resolve a path relative to the directory of the config that named it.
pub fn relative_to(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3
[grid]
n = 8
[physics]
mu = 1.0
alpha = 0.5
beta = 3.0
strong_mode = true
[noise]
kind = "additive"
sigma = 0.1
gamma = 2.0
[initial]
kind = "shear"
amplitude = 0.5
[time]
dt = 1e-3
t_end = 0.01
"#;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_str(text, Path::new("test.toml"))
    }

    #[test]
    fn boundary_case_accepted() {
        let c = parse(BASE).unwrap();
        assert!(c.gates.strong_mode.as_ref().unwrap().satisfied);
        assert_eq!(c.sim.seed, 3);
    }

    #[test]
    fn weak_damping_refused_in_strong_mode() {
        let t = BASE.replace("beta = 3.0", "beta = 2.0");
        match parse(&t) {
            Err(Error::Gate(m)) => assert!(m.contains("β > 3"), "{m}"),
            other => panic!("{other:?}"),
        }
        let t = BASE.replace("alpha = 0.5", "alpha = 0.4");
        assert!(matches!(parse(&t), Err(Error::Gate(_))));
    }

    #[test]
    fn p_gate_refuses_p10_eta1() {
        let t = format!("{BASE}\n[simulate]\nensemble = 30\nmoment_p = 10.0\neta = 1.0\n");
        match parse(&t) {
            Err(Error::Gate(m)) => assert!(m.contains("admissible [2, 3)"), "{m}"),
            other => panic!("{other:?}"),
        }
        let t = format!("{BASE}\n[simulate]\nensemble = 30\nmoment_p = 2.5\neta = 1.0\n");
        assert!(parse(&t).is_ok());
    }

    #[test]
    fn parse_errors_have_positions() {
        let t = BASE.replace("mu = 1.0", "mu = = 1.0");
        match parse(&t) {
            Err(Error::Config { message, .. }) => assert!(message.starts_with("line 6,"), "{message}"),
            other => panic!("{other:?}"),
        }
        let t = BASE.replace("mu = 1.0", "mu = 1.0\nnu = 2.0");
        assert!(matches!(parse(&t), Err(Error::Config { .. })));
    }

    #[test]
    fn snapshot_round_trips() {
        let c = parse(BASE).unwrap().with_seed(99);
        let again = parse(&c.snapshot()).unwrap();
        assert_eq!(again.file, c.file);
        assert_eq!(again.sim.seed, 99);
    }

    #[test]
    fn ladder_rebuilds_grid() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.at_resolution(16).unwrap().grid.n(), 16);
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
        assert_eq!(line_col("ab", 0), (1, 1));
    }
}
