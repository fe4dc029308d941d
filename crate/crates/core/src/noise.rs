//! Finite-mode Q-Wiener noise and the diffusion coefficient `G(t, u)`.
//!
//! The noise lives on a real H-orthonormal basis of the forced modes: for
//! every forced pair `±k` and each of the two polarisations `e ⊥ k` there is
//! a cosine and a sine basis function
//!
//! ```text
//! φ_cos = √(2/L³) e cos(κ·x),   φ_sin = √(2/L³) e sin(κ·x)
//! ```
//!
//! all sharing the covariance eigenvalue `q_k = σ² |k|^{-γ}`. An increment
//! stores one real coordinate per basis function, with variance `q_k dt`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fields::{is_positive_half, CVec3, Grid, SpectralVelocity};
use crate::rng::RandomStream;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `G(t, u) = I` on the forced span.
    Additive,
    /// `G(t, u) = φ(u) I` with `φ(u) = σ (1 + tanh |u|_H^2) / 2`.
    DiagonalMultiplicative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcedModes {
    /// All wavevectors with `0 < |k|^2 ≤ max_k2`.
    MaxK2(i32),
    /// Explicit wavevectors; `-k` is added for every listed `k`.
    List(Vec<[i32; 3]>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub forced: ForcedModes,
    pub sigma: f64,
    pub gamma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Additive,
            forced: ForcedModes::MaxK2(2),
            sigma: 0.1,
            gamma: 2.0,
        }
    }
}

#[derive(Clone, Debug)]
struct BasisFn {
    mode: usize,
    conj: usize,
    polarisation: [f64; 3],
    sine: bool,
    q: f64,
    kappa2: f64,
}

/// Noise parameters bound to a grid. Forced modes outside the grid's
/// retained set are dropped, which realises the Galerkin projection `P_n G`.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    spec: NoiseSpec,
    grid: Arc<Grid>,
    basis: Vec<BasisFn>,
    trace: f64,
    trace_v: f64,
}

/// Real noise coordinates `√q_j Δβ_j`, one per basis function.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerIncrement {
    pub coords: Vec<f64>,
}

impl WienerIncrement {
    pub fn zeros(model: &NoiseModel) -> Self {
        Self { coords: vec![0.0; model.dim()] }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { coords: self.coords.iter().map(|c| c * s).collect() }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalise(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Two real unit vectors spanning the plane orthogonal to `k`.
fn polarisations(k: [i32; 3]) -> [[f64; 3]; 2] {
    let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
    let axis = (0..3)
        .min_by(|&a, &b| kf[a].abs().partial_cmp(&kf[b].abs()).unwrap())
        .unwrap();
    let mut a = [0.0; 3];
    a[axis] = 1.0;
    let e1 = normalise(cross(kf, a));
    let e2 = normalise(cross(kf, e1));
    [e1, e2]
}

impl NoiseModel {
    pub fn new(spec: NoiseSpec, grid: Arc<Grid>) -> Result<Self> {
        if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
            return Err(Error::InvalidParameter { name: "sigma", reason: format!("must be ≥ 0, got {}", spec.sigma) });
        }
        if !(spec.gamma >= 0.0 && spec.gamma.is_finite()) {
            return Err(Error::InvalidParameter { name: "gamma", reason: format!("must be ≥ 0, got {}", spec.gamma) });
        }
        let mut positive: Vec<usize> = match &spec.forced {
            ForcedModes::MaxK2(max) => grid
                .modes()
                .iter()
                .enumerate()
                .filter(|(_, k)| is_positive_half(**k) && k[0] * k[0] + k[1] * k[1] + k[2] * k[2] <= *max)
                .map(|(m, _)| m)
                .collect(),
            ForcedModes::List(list) => {
                let mut out = Vec::new();
                for &k in list {
                    if k == [0, 0, 0] {
                        return Err(Error::InvalidParameter { name: "forced_modes", reason: "k = 0 cannot be forced".into() });
                    }
                    let k = if is_positive_half(k) { k } else { [-k[0], -k[1], -k[2]] };
                    if let Some(m) = grid.mode_index(k) {
                        out.push(m);
                    }
                }
                out
            }
        };
        positive.sort_unstable();
        positive.dedup();

        let mut basis = Vec::with_capacity(4 * positive.len());
        for &m in &positive {
            let k = grid.modes()[m];
            let kn = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
            let q = spec.sigma * spec.sigma * kn.powf(-spec.gamma);
            for e in polarisations(k) {
                for sine in [false, true] {
                    basis.push(BasisFn {
                        mode: m,
                        conj: grid.conj_index(m),
                        polarisation: e,
                        sine,
                        q,
                        kappa2: grid.kappa2(m),
                    });
                }
            }
        }
        let trace = basis.iter().map(|b| b.q).sum();
        let trace_v = basis.iter().map(|b| b.q * b.kappa2).sum();
        Ok(Self { spec, grid, basis, trace, trace_v })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn kind(&self) -> NoiseKind {
        self.spec.kind
    }

    /// Number of real noise coordinates.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Covariance eigenvalue of coordinate `j`.
    pub fn q(&self, j: usize) -> f64 {
        self.basis[j].q
    }

    /// Retained wavevectors carrying noise (positive half).
    pub fn forced_modes(&self) -> Vec<[i32; 3]> {
        let mut v: Vec<[i32; 3]> = self.basis.iter().map(|b| self.grid.modes()[b.mode]).collect();
        v.dedup();
        v
    }

    /// `Tr Q = Σ_j q_j`.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// Scalar gain `φ(u)` of the diffusion coefficient.
    pub fn gain(&self, u: &SpectralVelocity) -> f64 {
        match self.spec.kind {
            NoiseKind::Additive => 1.0,
            NoiseKind::DiagonalMultiplicative => self.gain_at(u.h_norm_sq()),
        }
    }

    /// Gain as a function of `|u|_H^2`.
    pub fn gain_at(&self, h_norm_sq: f64) -> f64 {
        match self.spec.kind {
            NoiseKind::Additive => 1.0,
            NoiseKind::DiagonalMultiplicative => self.spec.sigma * (1.0 + h_norm_sq.tanh()) / 2.0,
        }
    }

    /// Spectral field `Σ_j w_j φ_j`.
    pub fn realise(&self, dw: &WienerIncrement) -> SpectralVelocity {
        assert_eq!(dw.coords.len(), self.dim());
        let zero = Complex64::new(0.0, 0.0);
        let mut coeffs: Vec<CVec3> = vec![[zero; 3]; self.grid.n_modes()];
        let norm = 1.0 / (2.0 * self.grid.volume()).sqrt();
        for (b, &w) in self.basis.iter().zip(&dw.coords) {
            let amp = if b.sine { Complex64::new(0.0, -w * norm) } else { Complex64::new(w * norm, 0.0) };
            for i in 0..3 {
                coeffs[b.mode][i] += amp * b.polarisation[i];
                coeffs[b.conj][i] += amp.conj() * b.polarisation[i];
            }
        }
        SpectralVelocity::from_coeffs_unchecked(self.grid.clone(), coeffs)
    }

    /// H-coordinates `⟨v, φ_j⟩` of a field on the noise basis.
    pub fn coordinates(&self, v: &SpectralVelocity) -> Vec<f64> {
        let scale = self.grid.volume() * (2.0 / self.grid.volume()).sqrt();
        self.basis
            .iter()
            .map(|b| {
                let c = v.coeffs()[b.mode];
                let dot = c[0] * b.polarisation[0] + c[1] * b.polarisation[1] + c[2] * b.polarisation[2];
                // ⟨v, φ⟩ = L³ Σ_{±k} c·conj(φ̂) = 2 L³ Re(c(k)·conj(φ̂(k)))
                if b.sine {
                    -dot.im * scale
                } else {
                    dot.re * scale
                }
            })
            .collect()
    }
}

pub fn sample_increment(model: &NoiseModel, dt: f64, stream: &mut RandomStream) -> Result<WienerIncrement> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter { name: "dt", reason: format!("must be > 0, got {dt}") });
    }
    let coords = model.basis.iter().map(|b| (b.q * dt).sqrt() * stream.normal()).collect();
    Ok(WienerIncrement { coords })
}

/// `G(t, u) dW`, divergence-free by construction.
pub fn diffusion_apply(model: &NoiseModel, _t: f64, u: &SpectralVelocity, dw: &WienerIncrement) -> SpectralVelocity {
    let field = model.realise(dw);
    match model.kind() {
        NoiseKind::Additive => field,
        NoiseKind::DiagonalMultiplicative => field.scale(model.gain(u)),
    }
}

/// `|G(t, u)|^2_{L_Q} = Tr(G Q G*)`.
pub fn hs_norm_sq(model: &NoiseModel, _t: f64, u: &SpectralVelocity) -> f64 {
    let g = model.gain(u);
    g * g * model.trace
}

/// `|G(t, u)|^2_{L_Q^V}`, the same trace measured in the V norm.
pub fn hs_norm_sq_v(model: &NoiseModel, _t: f64, u: &SpectralVelocity) -> f64 {
    let g = model.gain(u);
    g * g * model.trace_v
}

/// Source of field pairs for the hypothesis validator.
pub trait FieldSampler: Sync {
    fn sample_pair(&self, grid: &Arc<Grid>, index: usize) -> (SpectralVelocity, SpectralVelocity);
}

/// Random smooth fields with `|u|_H` log-uniform in `[min_radius, max_radius]`.
/// Partners are radial or random-direction perturbations of relative size
/// log-uniform in `[1e-4, 1]`.
#[derive(Clone, Debug)]
pub struct RandomFieldSampler {
    pub seed: u64,
    pub max_k2: i32,
    pub min_radius: f64,
    pub max_radius: f64,
}

impl Default for RandomFieldSampler {
    fn default() -> Self {
        Self { seed: 0x5eed, max_k2: 6, min_radius: 1e-2, max_radius: 1e2 }
    }
}

impl FieldSampler for RandomFieldSampler {
    fn sample_pair(&self, grid: &Arc<Grid>, index: usize) -> (SpectralVelocity, SpectralVelocity) {
        let mut rng = RandomStream::new(self.seed, index as u64);
        let base = SpectralVelocity::random_smooth(grid.clone(), self.seed ^ (index as u64).wrapping_mul(0x9e37_79b9), self.max_k2, 0.5);
        let log_r = self.min_radius.ln() + rng.uniform() * (self.max_radius / self.min_radius).ln();
        let n = base.h_norm_sq().sqrt().max(1e-300);
        let u = base.scale(log_r.exp() / n);
        let rel = (1e-4f64.ln() * rng.uniform()).exp();
        let v = if rng.uniform() < 0.5 {
            u.scale(1.0 + rel)
        } else {
            let dir = SpectralVelocity::random_smooth(grid.clone(), !self.seed ^ index as u64, self.max_k2, 0.5);
            let dn = dir.h_norm_sq().sqrt().max(1e-300);
            u.add_scaled(&dir, rel * log_r.exp() / dn)
        };
        (u, v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// `L` with `|G(t,u)|^2_{L_Q} ≤ L(1 + |u|^2)`.
    pub l_hat_growth: f64,
    /// `K` with `|G(t,u) − G(t,v)|^2_{L_Q} ≤ K|u − v|^2`.
    pub k_hat_lip: f64,
    /// `L̂` with `|G(t,u)|^2_{L_Q^V} ≤ L̂(1 + ‖u‖^2)`.
    pub l_grad: f64,
    /// `K̂` with `|G(t,u) − G(t,v)|^2_{L_Q^V} ≤ K̂‖u − v‖^2`.
    pub k_grad: f64,
    /// Coercivity `|G(u)|^2 ≤ (2 − η)‖u‖^2 + λ₀|u|^2_H + ρ`.
    pub eta: f64,
    pub lambda0: f64,
    pub rho: f64,
    /// `K < 2`.
    pub lipschitz_ok_for_uniqueness: bool,
    pub n_samples: usize,
    /// Hypotheses whose ratio kept growing with the sample radius.
    pub failures: Vec<String>,
}

/// Admissible moment orders `[2, 2 + η/(2 − η))`, or `[2, ∞)` when `η = 2`.
pub fn admissible_p_range(eta: f64) -> (f64, f64) {
    if eta >= 2.0 {
        (2.0, f64::INFINITY)
    } else {
        (2.0, 2.0 + eta / (2.0 - eta))
    }
}

impl HypothesisReport {
    pub fn admissible_p_range(&self) -> (f64, f64) {
        admissible_p_range(self.eta)
    }
}

/// Flags a ratio that keeps growing with the sample radius: the maximum over
/// the top radius quartile exceeds twice the maximum over the lower half.
pub fn ratio_grows_without_bound(radii: &[f64], ratios: &[f64]) -> bool {
    let mut idx: Vec<usize> = (0..radii.len()).filter(|&i| ratios[i].is_finite()).collect();
    if idx.len() < 8 {
        return false;
    }
    idx.sort_by(|&a, &b| radii[a].partial_cmp(&radii[b]).unwrap());
    let q = idx.len() / 4;
    let top = idx[idx.len() - q..].iter().map(|&i| ratios[i]).fold(0.0, f64::max);
    let next = idx[..idx.len() / 2].iter().map(|&i| ratios[i]).fold(0.0, f64::max);
    top > 2.0 * next && top > 0.0
}

pub fn validate_hypotheses(model: &NoiseModel, sampler: &dyn FieldSampler, n_samples: usize) -> Result<HypothesisReport> {
    if n_samples < 100 {
        return Err(Error::InvalidParameter { name: "n_samples", reason: format!("need ≥ 100, got {n_samples}") });
    }
    let grid = model.grid();
    let zero = SpectralVelocity::zeros(grid.clone());
    let mut radii = Vec::with_capacity(n_samples);
    let (mut growth, mut lip, mut ggrad, mut lgrad) = (vec![], vec![], vec![], vec![]);
    let mut rho = hs_norm_sq(model, 0.0, &zero);
    for i in 0..n_samples {
        let (u, v) = sampler.sample_pair(grid, i);
        let g_u = hs_norm_sq(model, 0.0, &u);
        rho = rho.max(g_u);
        radii.push(u.h_norm_sq().sqrt());
        growth.push(g_u / (1.0 + u.h_norm_sq()));
        ggrad.push(hs_norm_sq_v(model, 0.0, &u) / (1.0 + u.v_norm_sq()));
        let d = u.sub(&v);
        let dg = model.gain(&u) - model.gain(&v);
        let (dh, dv) = (d.h_norm_sq(), d.v_norm_sq());
        lip.push(if dh > 0.0 { dg * dg * model.trace / dh } else { 0.0 });
        lgrad.push(if dv > 0.0 { dg * dg * model.trace_v / dv } else { 0.0 });
    }
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let mut failures = Vec::new();
    for (name, r) in [("growth |G|²_LQ ≤ L(1+|u|²)", &growth), ("V-growth |G|²_LQV ≤ L̂(1+‖u‖²)", &ggrad)] {
        if ratio_grows_without_bound(&radii, r) {
            failures.push(name.to_string());
        }
    }
    let k_hat_lip = max(&lip);
    Ok(HypothesisReport {
        l_hat_growth: max(&growth),
        k_hat_lip,
        l_grad: max(&ggrad),
        k_grad: max(&lgrad),
        eta: 2.0,
        lambda0: 0.0,
        rho,
        lipschitz_ok_for_uniqueness: k_hat_lip < 2.0,
        n_samples,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GridSpec;

    fn model(kind: NoiseKind, sigma: f64) -> NoiseModel {
        let g = Grid::new(GridSpec::new(8)).unwrap();
        NoiseModel::new(NoiseSpec { kind, sigma, ..NoiseSpec::default() }, g).unwrap()
    }

    #[test]
    fn default_forcing_covers_k2_up_to_two() {
        let m = model(NoiseKind::Additive, 0.1);
        assert_eq!(m.forced_modes().len(), 9);
        assert_eq!(m.dim(), 36);
        // q_k = σ²|k|^{-γ}: three pairs at |k|²=1, six at |k|²=2
        let expect = 4.0 * 0.01 * (3.0 + 6.0 * 0.5);
        assert!((m.trace() - expect).abs() < 1e-15);
    }

    #[test]
    fn basis_is_orthonormal() {
        let m = model(NoiseKind::Additive, 1.0);
        for j in 0..m.dim() {
            let mut w = WienerIncrement::zeros(&m);
            w.coords[j] = 1.0;
            let f = m.realise(&w);
            assert!((f.h_norm_sq() - 1.0).abs() < 1e-13);
            assert!(f.max_divergence() < 1e-15);
            let c = m.coordinates(&f);
            for (i, ci) in c.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((ci - e).abs() < 1e-13, "{i} {j} {ci}");
            }
        }
    }

    #[test]
    fn increments_are_real_in_physical_space() {
        let m = model(NoiseKind::Additive, 0.3);
        let mut s = RandomStream::new(4, 0);
        let dw = sample_increment(&m, 0.01, &mut s).unwrap();
        let raw = m.realise(&dw).to_raw();
        let mut z: Vec<Complex64> = raw.component(1).to_vec();
        m.grid().fft3(&mut z, true);
        let im = z.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        assert!(im < 1e-12);
    }

    #[test]
    fn sampling_rejects_bad_dt_and_is_deterministic() {
        let m = model(NoiseKind::Additive, 0.1);
        assert!(sample_increment(&m, 0.0, &mut RandomStream::new(1, 1)).is_err());
        let a = sample_increment(&m, 0.1, &mut RandomStream::new(1, 1)).unwrap();
        let b = sample_increment(&m, 0.1, &mut RandomStream::new(1, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_variance_matches_q_dt() {
        let m = model(NoiseKind::Additive, 0.5);
        let dt = 0.01;
        let n = 100_000;
        let mut s = RandomStream::new(8, 0);
        let mut acc = vec![0.0; m.dim()];
        let mut acc4 = vec![0.0; m.dim()];
        for _ in 0..n {
            let w = sample_increment(&m, dt, &mut s).unwrap();
            for j in 0..m.dim() {
                acc[j] += w.coords[j] * w.coords[j];
                acc4[j] += w.coords[j].powi(4);
            }
        }
        for j in 0..m.dim() {
            let var = acc[j] / n as f64;
            let se = ((acc4[j] / n as f64 - var * var) / n as f64).sqrt();
            // 4 standard errors keeps the family-wise level below 0.3% over 36 coordinates
            assert!((var - m.q(j) * dt).abs() < 4.0 * se, "coord {j}");
        }
    }

    #[test]
    fn additive_diffusion_ignores_state() {
        let m = model(NoiseKind::Additive, 0.2);
        let g = m.grid().clone();
        let dw = sample_increment(&m, 0.1, &mut RandomStream::new(3, 0)).unwrap();
        let u1 = SpectralVelocity::random_smooth(g.clone(), 1, 5, 0.0);
        let u2 = SpectralVelocity::random_smooth(g.clone(), 2, 5, 0.0);
        assert_eq!(diffusion_apply(&m, 0.0, &u1, &dw).coeffs(), diffusion_apply(&m, 0.0, &u2, &dw).coeffs());
        assert_eq!(diffusion_apply(&m, 0.0, &u1, &WienerIncrement::zeros(&m)).h_norm_sq(), 0.0);
        assert_eq!(hs_norm_sq(&m, 0.0, &u1), m.trace());
        assert_eq!(hs_norm_sq(&m, 0.0, &u2), m.trace());
        assert_eq!(hs_norm_sq(&model(NoiseKind::Additive, 0.0), 0.0, &u1), 0.0);
    }

    #[test]
    fn multiplicative_at_zero_is_scaled_additive() {
        let add = model(NoiseKind::Additive, 0.4);
        let mul = model(NoiseKind::DiagonalMultiplicative, 0.4);
        let zero = SpectralVelocity::zeros(add.grid().clone());
        let dw = sample_increment(&add, 0.1, &mut RandomStream::new(5, 0)).unwrap();
        let a = diffusion_apply(&add, 0.0, &zero, &dw);
        let b = diffusion_apply(&mul, 0.0, &zero, &dw);
        let phi0 = 0.4 * 0.5;
        for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
            for i in 0..3 {
                assert!((x[i] * phi0 - y[i]).norm() < 1e-16);
            }
        }
    }

    #[test]
    fn hs_norm_matches_basis_brute_force() {
        let m = model(NoiseKind::DiagonalMultiplicative, 0.7);
        for seed in 0..5 {
            let u = SpectralVelocity::random_smooth(m.grid().clone(), seed, 6, 0.5).scale(0.1 * seed as f64 + 0.05);
            let mut brute = 0.0;
            for j in 0..m.dim() {
                let mut w = WienerIncrement::zeros(&m);
                w.coords[j] = 1.0;
                brute += m.q(j) * diffusion_apply(&m, 0.0, &u, &w).h_norm_sq();
            }
            let fast = hs_norm_sq(&m, 0.0, &u);
            assert!((brute - fast).abs() < 1e-12 * fast);
        }
    }

    #[test]
    fn additive_and_silent_hypotheses() {
        let m = model(NoiseKind::Additive, 0.3);
        let r = validate_hypotheses(&m, &RandomFieldSampler::default(), 200).unwrap();
        assert_eq!(r.k_hat_lip, 0.0);
        assert_eq!(r.k_grad, 0.0);
        assert_eq!(r.eta, 2.0);
        assert_eq!(r.lambda0, 0.0);
        assert!((r.rho - m.trace()).abs() < 1e-15);
        assert!(r.lipschitz_ok_for_uniqueness);
        assert!(r.failures.is_empty());
        assert_eq!(r.admissible_p_range(), (2.0, f64::INFINITY));

        let z = model(NoiseKind::DiagonalMultiplicative, 0.0);
        let r = validate_hypotheses(&z, &RandomFieldSampler::default(), 100).unwrap();
        assert_eq!((r.l_hat_growth, r.k_hat_lip, r.l_grad, r.k_grad, r.rho), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert!(validate_hypotheses(&z, &RandomFieldSampler::default(), 99).is_err());
    }

    #[test]
    fn multiplicative_lipschitz_matches_analytic_gain_bound() {
        let sigma = 0.8;
        let m = model(NoiseKind::DiagonalMultiplicative, sigma);
        // |dφ/ds| = σ s sech²(s²) for s = |u|_H; maximise on a fine grid
        let slope = (1..200_000)
            .map(|i| {
                let s = i as f64 * 1e-5;
                s / (s * s).cosh().powi(2)
            })
            .fold(0.0, f64::max)
            * sigma;
        let k_analytic = slope * slope * m.trace();
        let r = validate_hypotheses(&m, &RandomFieldSampler::default(), 4000).unwrap();
        assert!(r.k_hat_lip <= k_analytic * (1.0 + 1e-6), "{} vs {}", r.k_hat_lip, k_analytic);
        assert!(r.k_hat_lip >= 0.8 * k_analytic, "{} vs {}", r.k_hat_lip, k_analytic);
        // |G|² ≤ σ² Tr Q for every state
        assert!(r.l_hat_growth <= sigma * sigma * m.trace());
        assert!(r.rho <= sigma * sigma * m.trace());
        assert!(r.failures.is_empty());
    }

    #[test]
    fn unbounded_ratio_detection() {
        let radii: Vec<f64> = (1..100).map(|i| i as f64).collect();
        let quadratic: Vec<f64> = radii.iter().map(|r| r * r).collect();
        let bounded: Vec<f64> = radii.iter().map(|r| 1.0 / (1.0 + r)).collect();
        assert!(ratio_grows_without_bound(&radii, &quadratic));
        assert!(!ratio_grows_without_bound(&radii, &bounded));
    }

    #[test]
    fn p_range_gate() {
        assert_eq!(admissible_p_range(1.0), (2.0, 3.0));
        assert_eq!(admissible_p_range(2.0).1, f64::INFINITY);
    }
}
