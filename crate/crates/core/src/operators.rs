//! Deterministic right-hand-side operators: Stokes, dealiased convection,
//! the trilinear form and the damping nonlinearity `g(u) = α|u|^{β-1}u`.

use serde::{Deserialize, Serialize};

use crate::fields::{project_physical, FieldEval, PhysicalVelocity, SpectralVelocity};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingParams {
    pub alpha: f64,
    pub beta: f64,
}

/// Human-readable statement of the strong-solution admissibility condition.
pub const STRONG_MODE_CONDITION: &str = "β > 3 with any α > 0, or α ≥ 1/2 when β = 3";

impl DampingParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must be > 0, got {alpha}"),
            });
        }
        crate::fields::check_beta(beta)?;
        Ok(Self { alpha, beta })
    }

    /// Strong-solution regime: `β > 3`, or `β = 3` with `α ≥ 1/2`.
    pub fn strong_mode_ok(&self) -> bool {
        self.beta > 3.0 || (self.beta == 3.0 && self.alpha >= 0.5)
    }

    pub fn require_strong_mode(&self) -> Result<()> {
        if self.strong_mode_ok() {
            Ok(())
        } else {
            Err(Error::Gate(format!(
                "strong-solution estimates require {STRONG_MODE_CONDITION}; got α = {}, β = {}",
                self.alpha, self.beta
            )))
        }
    }

    /// `g(u)` at one point.
    #[inline]
    pub fn apply(&self, u: [f64; 3]) -> [f64; 3] {
        let r2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        if r2 == 0.0 {
            return [0.0; 3];
        }
        let s = self.alpha * r2.powf((self.beta - 1.0) / 2.0);
        [s * u[0], s * u[1], s * u[2]]
    }

    /// `α|u|^{β-1}`.
    #[inline]
    pub fn coefficient(&self, u: [f64; 3]) -> f64 {
        let r2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        if r2 == 0.0 {
            0.0
        } else {
            self.alpha * r2.powf((self.beta - 1.0) / 2.0)
        }
    }

    /// `g'(u) = α|u|^{β-3}((β-1) u uᵀ + |u|^2 I)`, extended by `g'(0) = 0`.
    pub fn jacobian(&self, u: [f64; 3]) -> [[f64; 3]; 3] {
        let r2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        let mut j = [[0.0; 3]; 3];
        if r2 == 0.0 {
            return j;
        }
        let pre = self.alpha * r2.powf((self.beta - 3.0) / 2.0);
        let s = pre * (self.beta - 1.0);
        for a in 0..3 {
            for b in 0..3 {
                j[a][b] = s * (u[a] * u[b]);
            }
            j[a][a] += pre * r2;
        }
        j
    }

    /// Constant `C` in the local Lipschitz bound
    /// `|g(u)-g(v)| ≤ α|u|^{β-1}|u-v| + Cα|v|(|u|^{β-2}+|v|^{β-2})|u-v|`.
    pub fn local_lipschitz_constant(&self) -> f64 {
        self.beta
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn stokes_apply(u: &SpectralVelocity, mu: f64) -> Result<SpectralVelocity> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidViscosity(mu));
    }
    let g = u.grid().clone();
    Ok(u.map_modes(|m, c| {
        let s = mu * g.kappa2(m);
        [c[0] * s, c[1] * s, c[2] * s]
    }))
}

/// `(u·∇)u` sampled on the grid, from a precomputed evaluation.
pub(crate) fn advection_samples(e: &FieldEval) -> Vec<[f64; 3]> {
    e.u.samples()
        .iter()
        .zip(&e.grad)
        .map(|(u, d)| {
            let mut n = [0.0; 3];
            for (i, ni) in n.iter_mut().enumerate() {
                *ni = u[0] * d[i][0] + u[1] * d[i][1] + u[2] * d[i][2];
            }
            n
        })
        .collect()
}

/// Leray-projected, dealiased `B(u) = (u·∇)u`, computed pseudo-spectrally.
pub fn convective_term(u: &SpectralVelocity) -> SpectralVelocity {
    let e = u.evaluate();
    project_physical(u.grid(), &advection_samples(&e))
}

/// `b(u, v, w) = ∫ (u·∇v)·w dx` by grid quadrature, which is exact when all
/// three fields lie in the dealiased mode set.
pub fn trilinear_form(u: &SpectralVelocity, v: &SpectralVelocity, w: &SpectralVelocity) -> f64 {
    let up = u.to_physical();
    let ve = v.evaluate();
    let wp = w.to_physical();
    let sum: f64 = up
        .samples()
        .iter()
        .zip(&ve.grad)
        .zip(wp.samples())
        .map(|((a, d), c)| {
            (0..3)
                .map(|i| (a[0] * d[i][0] + a[1] * d[i][1] + a[2] * d[i][2]) * c[i])
                .sum::<f64>()
        })
        .sum();
    sum * u.grid().cell_volume()
}

pub fn damping_apply(p: &PhysicalVelocity, d: &DampingParams) -> PhysicalVelocity {
    let samples = p.samples().iter().map(|&u| d.apply(u)).collect();
    PhysicalVelocity::new(p.grid().clone(), samples).expect("damping of finite samples")
}

/// Pointwise `g'(u(x))`.
#[derive(Clone, Debug)]
pub struct JacobianField {
    pub matrices: Vec<[[f64; 3]; 3]>,
}

pub fn damping_jacobian(p: &PhysicalVelocity, d: &DampingParams) -> JacobianField {
    JacobianField {
        matrices: p.samples().iter().map(|&u| d.jacobian(u)).collect(),
    }
}

/// `(g(u) - g(v))·(u - v)`.
pub fn damping_monotonicity_check(u: [f64; 3], v: [f64; 3], d: &DampingParams) -> f64 {
    let gu = d.apply(u);
    let gv = d.apply(v);
    (0..3).map(|i| (gu[i] - gv[i]) * (u[i] - v[i])).sum()
}

/// Returns `(|g(u)-g(v)|, bound)` for the local Lipschitz estimate with
/// `C = DampingParams::local_lipschitz_constant`.
pub fn damping_local_lipschitz_check(u: [f64; 3], v: [f64; 3], d: &DampingParams) -> Result<(f64, f64)> {
    if d.beta < 2.0 {
        return Err(Error::InvalidExponent {
            beta: d.beta,
            reason: "local Lipschitz check needs β ≥ 2",
        });
    }
    let gu = d.apply(u);
    let gv = d.apply(v);
    let diff = [u[0] - v[0], u[1] - v[1], u[2] - v[2]];
    let lhs = norm3([gu[0] - gv[0], gu[1] - gv[1], gu[2] - gv[2]]);
    let (nu, nv, nd) = (norm3(u), norm3(v), norm3(diff));
    let first = d.alpha * nu.powf(d.beta - 1.0) * nd;
    let second = if nv == 0.0 {
        0.0
    } else {
        d.local_lipschitz_constant()
            * d.alpha
            * nv
            * (nu.powf(d.beta - 2.0) + nv.powf(d.beta - 2.0))
            * nd
    };
    Ok((lhs, first + second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{forward_transform, leray_project, Grid, GridSpec};
    use crate::rng::RandomStream;

    fn rand3(rng: &mut RandomStream, scale: f64) -> [f64; 3] {
        [rng.normal() * scale, rng.normal() * scale, rng.normal() * scale]
    }

    #[test]
    fn params_validation_and_gate() {
        assert!(DampingParams::new(0.0, 3.0).is_err());
        assert!(DampingParams::new(1.0, 0.9).is_err());
        assert!(DampingParams::new(0.5, 3.0).unwrap().strong_mode_ok());
        assert!(!DampingParams::new(0.4, 3.0).unwrap().strong_mode_ok());
        assert!(DampingParams::new(0.01, 3.5).unwrap().strong_mode_ok());
        assert!(DampingParams::new(10.0, 2.0).unwrap().require_strong_mode().is_err());
    }

    #[test]
    fn stokes_examples() {
        let g = Grid::new(GridSpec::new(8)).unwrap();
        assert!(stokes_apply(&SpectralVelocity::zeros(g.clone()), 1.0).unwrap().h_norm_sq() == 0.0);
        assert!(matches!(
            stokes_apply(&SpectralVelocity::zeros(g.clone()), -1.0),
            Err(Error::InvalidViscosity(_))
        ));
        let p = PhysicalVelocity::from_fn(g.clone(), |x| [x[1].sin(), 0.0, 0.0]).unwrap();
        let u = leray_project(&forward_transform(&p).unwrap());
        let a = stokes_apply(&u, 1.0).unwrap();
        assert!(a.sub(&u).h_norm_sq().sqrt() < 1e-14);
        let r = SpectralVelocity::random_smooth(g, 5, 7, 0.5);
        let lhs = stokes_apply(&r, 1.0).unwrap().inner_h(&r);
        assert!((lhs - r.v_norm_sq()).abs() < 1e-10 * lhs);
    }

    #[test]
    fn shear_flow_has_no_convection() {
        let g = Grid::new(GridSpec::new(8)).unwrap();
        let p = PhysicalVelocity::from_fn(g.clone(), |x| [x[1].sin(), 0.0, 0.0]).unwrap();
        let u = leray_project(&forward_transform(&p).unwrap());
        assert!(convective_term(&u).h_norm_sq().sqrt() < 1e-12);
        assert_eq!(convective_term(&SpectralVelocity::zeros(g)).h_norm_sq(), 0.0);
    }

    #[test]
    fn trilinear_identities() {
        let g = Grid::new(GridSpec::new(8)).unwrap();
        for s in 0..10 {
            let u = SpectralVelocity::random_smooth(g.clone(), 3 * s, 7, 0.0);
            let v = SpectralVelocity::random_smooth(g.clone(), 3 * s + 1, 7, 0.0);
            let w = SpectralVelocity::random_smooth(g.clone(), 3 * s + 2, 7, 0.0);
            let scale = u.v_norm_sq().sqrt() * v.v_norm_sq() * w.h_norm_sq().sqrt().max(1.0);
            assert!(trilinear_form(&u, &v, &v).abs() < 1e-10 * scale);
            assert!((trilinear_form(&u, &w, &v) + trilinear_form(&u, &v, &w)).abs() < 1e-10 * scale);
            let b = convective_term(&u);
            assert!(b.inner_h(&u).abs() < 1e-10 * scale);
        }
        let z = SpectralVelocity::zeros(g.clone());
        let v = SpectralVelocity::random_smooth(g.clone(), 1, 7, 0.0);
        assert_eq!(trilinear_form(&z, &v, &v), 0.0);
    }

    #[test]
    fn damping_pointwise_examples() {
        let d = DampingParams::new(1.0, 3.0).unwrap();
        assert_eq!(d.apply([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
        let d2 = DampingParams::new(2.0, 3.0).unwrap();
        let g = d2.apply([3.0, 4.0, 0.0]);
        assert!((g[0] - 150.0).abs() < 1e-12 && (g[1] - 200.0).abs() < 1e-12 && g[2] == 0.0);
        assert_eq!(d.apply([0.0; 3]), [0.0; 3]);
        let j = d.jacobian([1.0, 0.0, 0.0]);
        assert_eq!(j, [[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(d.jacobian([0.0; 3]), [[0.0; 3]; 3]);
    }

    #[test]
    fn damping_homogeneity() {
        let mut rng = RandomStream::new(9, 0);
        for _ in 0..1000 {
            let d = DampingParams::new(0.1 + rng.uniform(), 1.0 + 4.0 * rng.uniform()).unwrap();
            let u = rand3(&mut rng, 1.0);
            let lam = 0.1 + 3.0 * rng.uniform();
            let a = d.apply([lam * u[0], lam * u[1], lam * u[2]]);
            let b = d.apply(u);
            for i in 0..3 {
                let e = lam.powf(d.beta) * b[i];
                assert!((a[i] - e).abs() <= 1e-12 * e.abs().max(norm3(a)));
            }
        }
    }

    #[test]
    fn damping_field_dissipation_identity() {
        let g = Grid::new(GridSpec::new(8)).unwrap();
        let d = DampingParams::new(0.7, 4.0).unwrap();
        let u = SpectralVelocity::random_smooth(g.clone(), 2, 7, 0.0);
        let p = u.to_physical();
        let gu = project_physical(&g, damping_apply(&p, &d).samples());
        let lhs = gu.inner_h(&u);
        let rhs = d.alpha * crate::fields::lp_norm(&p, d.beta + 1.0);
        assert!((lhs - rhs).abs() < 1e-10 * rhs);
    }

    #[test]
    fn jacobian_symmetric_psd_and_bounded() {
        let mut rng = RandomStream::new(10, 0);
        for _ in 0..2000 {
            let d = DampingParams::new(0.1 + rng.uniform(), 1.0 + 4.0 * rng.uniform()).unwrap();
            let u = rand3(&mut rng, 2.0);
            let j = d.jacobian(u);
            for a in 0..3 {
                for b in 0..3 {
                    assert_eq!(j[a][b], j[b][a]);
                }
            }
            let v = rand3(&mut rng, 1.0);
            let w = rand3(&mut rng, 1.0);
            let quad: f64 = (0..3).map(|a| (0..3).map(|b| v[a] * j[a][b] * v[b]).sum::<f64>()).sum();
            let scale = d.coefficient(u) * norm3(v).powi(2);
            assert!(quad >= -1e-10 * scale);
            let jv: Vec<f64> = (0..3).map(|a| (0..3).map(|b| j[a][b] * v[b]).sum()).collect();
            let lhs = (0..3).map(|a| jv[a] * w[a]).sum::<f64>().abs();
            let rhs = d.alpha * d.beta * norm3(u).powf(d.beta - 1.0) * norm3(v) * norm3(w);
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn monotonicity_examples() {
        let d = DampingParams::new(1.0, 3.0).unwrap();
        assert_eq!(damping_monotonicity_check([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], &d), 0.0);
        assert!((damping_monotonicity_check([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], &d) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn local_lipschitz_examples() {
        let d = DampingParams::new(1.5, 3.0).unwrap();
        assert_eq!(damping_local_lipschitz_check([1.0, 2.0, 0.5], [1.0, 2.0, 0.5], &d).unwrap(), (0.0, 0.0));
        let u = [0.3, -1.2, 2.0];
        let (lhs, rhs) = damping_local_lipschitz_check(u, [0.0; 3], &d).unwrap();
        let expect = d.alpha * norm3(u).powf(d.beta);
        assert!((lhs - expect).abs() < 1e-12 * expect);
        assert!((rhs - expect).abs() < 1e-12 * expect);
        assert!(damping_local_lipschitz_check(u, u, &DampingParams::new(1.0, 1.5).unwrap()).is_err());
    }
}
