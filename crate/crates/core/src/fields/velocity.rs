use std::sync::Arc;

use num_complex::Complex64;

use super::grid::{is_positive_half, Grid};
use crate::rng::RandomStream;
use crate::{Error, Result};

pub type CVec3 = [Complex64; 3];

const CZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Velocity samples on the physical grid, one real 3-vector per point.
#[derive(Clone, Debug)]
pub struct PhysicalVelocity {
    grid: Arc<Grid>,
    samples: Vec<[f64; 3]>,
}

impl PhysicalVelocity {
    pub fn new(grid: Arc<Grid>, samples: Vec<[f64; 3]>) -> Result<Self> {
        if samples.len() != grid.n_points() {
            return Err(Error::GridMismatch(format!(
                "expected {} samples, got {}",
                grid.n_points(),
                samples.len()
            )));
        }
        if samples.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::RejectedInput("non-finite velocity sample".into()));
        }
        Ok(Self { grid, samples })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        let samples = (0..grid.n_points()).map(|p| f(grid.point(p))).collect();
        Self::new(grid, samples)
    }

    pub(crate) fn new_unchecked(grid: Arc<Grid>, samples: Vec<[f64; 3]>) -> Self {
        Self { grid, samples }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn samples(&self) -> &[[f64; 3]] {
        &self.samples
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[c]).collect()
    }

    /// Quadrature of `∫ f(u(x)) dx`.
    pub fn integrate(&self, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
        self.samples.iter().map(f).sum::<f64>() * self.grid.cell_volume()
    }
}

/// Full-grid Fourier coefficients of a real vector field, with no
/// truncation, projection or mean removal.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Arc<Grid>,
    comps: [Vec<Complex64>; 3],
}

impl SpectralField {
    pub fn new(grid: Arc<Grid>, comps: [Vec<Complex64>; 3]) -> Result<Self> {
        if comps.iter().any(|c| c.len() != grid.n_points()) {
            return Err(Error::GridMismatch("component length".into()));
        }
        Ok(Self { grid, comps })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        &self.comps[c]
    }

    /// Coefficient vector at integer wavevector `k`.
    pub fn coeff(&self, k: [i32; 3]) -> CVec3 {
        let n = self.grid.n() as i32;
        let b = |v: i32| v.rem_euclid(n) as usize;
        let f = (b(k[0]) * n as usize + b(k[1])) * n as usize + b(k[2]);
        [self.comps[0][f], self.comps[1][f], self.comps[2][f]]
    }
}

/// Divergence-free, zero-mean velocity in the span of the retained Fourier
/// modes. Coefficients are stored in the grid's mode order and satisfy
/// `coeff(-k) = conj(coeff(k))`.
#[derive(Clone, Debug)]
pub struct SpectralVelocity {
    grid: Arc<Grid>,
    coeffs: Vec<CVec3>,
}

/// Physical-space velocity and velocity gradient of a spectral field.
/// `grad[p][i][j] = ∂_j u_i` at point `p`.
#[derive(Clone, Debug)]
pub struct FieldEval {
    pub u: PhysicalVelocity,
    pub grad: Vec<[[f64; 3]; 3]>,
}

pub fn forward_transform(p: &PhysicalVelocity) -> Result<SpectralField> {
    if p.samples.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::RejectedInput("non-finite velocity sample".into()));
    }
    let g = &p.grid;
    let (c0, c1) = g.forward_pair(&p.component(0), &p.component(1));
    let c2 = g.forward_real(&p.component(2));
    SpectralField::new(g.clone(), [c0, c1, c2])
}

pub fn inverse_transform(s: &SpectralField) -> PhysicalVelocity {
    let g = &s.grid;
    let (u0, u1) = g.inverse_pair(&s.comps[0], &s.comps[1]);
    let (u2, _) = g.inverse_pair(&s.comps[2], &vec![CZERO; g.n_points()]);
    let samples = (0..g.n_points()).map(|p| [u0[p], u1[p], u2[p]]).collect();
    PhysicalVelocity::new_unchecked(g.clone(), samples)
}

/// Project onto divergence-free fields in the retained mode set:
/// `c(k) ← c(k) − κ(κ·c(k))/|κ|^2`, with the mean and every unretained mode
/// set to zero.
pub fn leray_project(s: &SpectralField) -> SpectralVelocity {
    let g = &s.grid;
    let coeffs = (0..g.n_modes())
        .map(|m| {
            let f = g.full_index(m);
            [s.comps[0][f], s.comps[1][f], s.comps[2][f]]
        })
        .collect();
    SpectralVelocity::project_coeffs(g.clone(), coeffs)
}

fn project_mode(q: [f64; 3], q2: f64, c: CVec3) -> CVec3 {
    let dot = c[0] * q[0] + c[1] * q[1] + c[2] * q[2];
    let s = dot / q2;
    [c[0] - s * q[0], c[1] - s * q[1], c[2] - s * q[2]]
}

impl SpectralVelocity {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.n_modes();
        Self { grid, coeffs: vec![[CZERO; 3]; n] }
    }

    /// Build from coefficients in mode order, symmetrising and projecting.
    pub fn project_coeffs(grid: Arc<Grid>, mut coeffs: Vec<CVec3>) -> Self {
        assert_eq!(coeffs.len(), grid.n_modes());
        for m in 0..grid.n_modes() {
            let c = grid.conj_index(m);
            if c < m {
                continue;
            }
            let mut v = [CZERO; 3];
            for i in 0..3 {
                v[i] = 0.5 * (coeffs[m][i] + coeffs[c][i].conj());
            }
            let v = project_mode(grid.kappa(m), grid.kappa2(m), v);
            coeffs[m] = v;
            coeffs[c] = [v[0].conj(), v[1].conj(), v[2].conj()];
        }
        Self { grid, coeffs }
    }

    /// Build from coefficients already known to be symmetric and
    /// divergence-free.
    pub(crate) fn from_coeffs_unchecked(grid: Arc<Grid>, coeffs: Vec<CVec3>) -> Self {
        Self { grid, coeffs }
    }

    /// Coefficients given by `f(k)` on the positive half, mirrored to `-k`
    /// and projected.
    pub fn from_mode_fn(grid: Arc<Grid>, f: impl Fn([i32; 3]) -> CVec3) -> Self {
        let coeffs = grid
            .modes()
            .iter()
            .map(|&k| {
                if is_positive_half(k) {
                    f(k)
                } else {
                    let v = f([-k[0], -k[1], -k[2]]);
                    [v[0].conj(), v[1].conj(), v[2].conj()]
                }
            })
            .collect();
        Self::project_coeffs(grid, coeffs)
    }

    /// Smooth random field whose coefficient at each `k` depends only on
    /// `(seed, k)`, so the same seed gives the Galerkin truncation of one
    /// underlying field on every grid. Modes with `|k|^2 > max_k2` are zero
    /// and amplitudes decay like `(1+|k|^2)^{-decay/2}`.
    pub fn random_smooth(grid: Arc<Grid>, seed: u64, max_k2: i32, decay: f64) -> Self {
        Self::from_mode_fn(grid, |k| {
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 > max_k2 {
                return [CZERO; 3];
            }
            let key = k
                .iter()
                .fold(0u64, |acc, &c| (acc << 16) | ((c + 1024) as u64 & 0xffff));
            let mut rng = RandomStream::new(seed, key);
            let amp = (1.0 + k2 as f64).powf(-decay / 2.0);
            let mut v = [CZERO; 3];
            for c in v.iter_mut() {
                *c = Complex64::new(rng.normal(), rng.normal()) * amp;
            }
            v
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[CVec3] {
        &self.coeffs
    }

    pub fn coeff(&self, k: [i32; 3]) -> Option<CVec3> {
        self.grid.mode_index(k).map(|m| self.coeffs[m])
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().flatten().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn same_grid(&self, other: &SpectralVelocity) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.spec() == other.grid.spec()
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_modes(|_, c| [c[0] * s, c[1] * s, c[2] * s])
    }

    /// Per-mode map that must preserve symmetry and divergence-freeness
    /// (e.g. real multipliers depending on `|k|`).
    pub fn map_modes(&self, f: impl Fn(usize, CVec3) -> CVec3) -> Self {
        let coeffs = self.coeffs.iter().enumerate().map(|(m, &c)| f(m, c)).collect();
        Self { grid: self.grid.clone(), coeffs }
    }

    pub fn add_scaled(&self, other: &SpectralVelocity, s: f64) -> Self {
        debug_assert!(self.same_grid(other));
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| [a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s])
            .collect();
        Self { grid: self.grid.clone(), coeffs }
    }

    pub fn sub(&self, other: &SpectralVelocity) -> Self {
        self.add_scaled(other, -1.0)
    }

    /// `⟨u, v⟩_H = ∫ u·v dx`.
    pub fn inner_h(&self, other: &SpectralVelocity) -> f64 {
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a[0] * b[0].conj() + a[1] * b[1].conj() + a[2] * b[2].conj()).re)
            .sum();
        s * self.grid.volume()
    }

    pub fn h_norm_sq(&self) -> f64 {
        self.weighted_sum(|_| 1.0)
    }

    /// `‖u‖^2 = |∇u|_2^2`.
    pub fn v_norm_sq(&self) -> f64 {
        let g = self.grid.clone();
        self.weighted_sum(|m| g.kappa2(m))
    }

    /// `|Δu|_2^2`.
    pub fn h2_seminorm_sq(&self) -> f64 {
        let g = self.grid.clone();
        self.weighted_sum(|m| g.kappa2(m) * g.kappa2(m))
    }

    fn weighted_sum(&self, w: impl Fn(usize) -> f64) -> f64 {
        let s: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| w(m) * (c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr()))
            .sum();
        s * self.grid.volume()
    }

    /// `max_k |κ·c(k)| / max_k |c(k)|` (0 for the zero field).
    pub fn max_divergence(&self) -> f64 {
        let mut div: f64 = 0.0;
        let mut mag: f64 = 0.0;
        for (m, c) in self.coeffs.iter().enumerate() {
            let q = self.grid.kappa(m);
            let d = (c[0] * q[0] + c[1] * q[1] + c[2] * q[2]).norm() / self.grid.kappa2(m).sqrt();
            div = div.max(d);
            mag = mag.max((c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr()).sqrt());
        }
        if mag == 0.0 {
            0.0
        } else {
            div / mag
        }
    }

    /// `max_k |c(-k) − conj(c(k))|`.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|m| {
                let a = self.coeffs[m];
                let b = self.coeffs[self.grid.conj_index(m)];
                (0..3).map(|i| (b[i] - a[i].conj()).norm()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Scatter onto the full grid.
    pub fn to_raw(&self) -> SpectralField {
        let g = &self.grid;
        let mut comps = [
            vec![CZERO; g.n_points()],
            vec![CZERO; g.n_points()],
            vec![CZERO; g.n_points()],
        ];
        for (m, c) in self.coeffs.iter().enumerate() {
            let f = g.full_index(m);
            for i in 0..3 {
                comps[i][f] = c[i];
            }
        }
        SpectralField { grid: g.clone(), comps }
    }

    pub fn to_physical(&self) -> PhysicalVelocity {
        inverse_transform(&self.to_raw())
    }

    /// Velocity and full gradient in physical space.
    pub fn evaluate(&self) -> FieldEval {
        let g = &self.grid;
        let np = g.n_points();
        // 12 real fields: u_i then ∂_j u_i, packed two per complex transform
        let mut spectra: Vec<Vec<Complex64>> = vec![vec![CZERO; np]; 12];
        for (m, c) in self.coeffs.iter().enumerate() {
            let f = g.full_index(m);
            let q = g.kappa(m);
            for i in 0..3 {
                spectra[i][f] = c[i];
                for j in 0..3 {
                    spectra[3 + 3 * i + j][f] = Complex64::new(0.0, q[j]) * c[i];
                }
            }
        }
        let mut real: Vec<Vec<f64>> = Vec::with_capacity(12);
        for pair in spectra.chunks(2) {
            let (a, b) = g.inverse_pair(&pair[0], &pair[1]);
            real.push(a);
            real.push(b);
        }
        let samples = (0..np).map(|p| [real[0][p], real[1][p], real[2][p]]).collect();
        let grad = (0..np)
            .map(|p| {
                let mut d = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        d[i][j] = real[3 + 3 * i + j][p];
                    }
                }
                d
            })
            .collect();
        FieldEval {
            u: PhysicalVelocity::new_unchecked(g.clone(), samples),
            grad,
        }
    }
}

/// Project a physical vector field onto the retained divergence-free span.
pub fn project_physical(grid: &Arc<Grid>, samples: &[[f64; 3]]) -> SpectralVelocity {
    let c: Vec<Vec<f64>> = (0..3).map(|i| samples.iter().map(|s| s[i]).collect()).collect();
    let (s0, s1) = grid.forward_pair(&c[0], &c[1]);
    let s2 = grid.forward_real(&c[2]);
    let coeffs = (0..grid.n_modes())
        .map(|m| {
            let f = grid.full_index(m);
            [s0[f], s1[f], s2[f]]
        })
        .collect();
    SpectralVelocity::project_coeffs(grid.clone(), coeffs)
}
