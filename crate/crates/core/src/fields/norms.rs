use serde::{Deserialize, Serialize};

use super::velocity::{FieldEval, PhysicalVelocity, SpectralVelocity};
use crate::{Error, Result};

/// The norms entering the energy estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    /// `|u|_H^2`
    pub h_norm_sq: f64,
    /// `‖u‖^2`, spectral route
    pub v_norm_sq: f64,
    /// `|u|_{β+1}^{β+1}`
    pub lp_norm: f64,
    /// `|∇u|_2^2`, physical quadrature route
    pub grad_h_norm_sq: f64,
    /// `‖∇u‖^2 = |Δu|_2^2`
    pub grad_v_norm_sq: f64,
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(Error::InvalidExponent { beta, reason: "β must be ≥ 1" });
    }
    Ok(())
}

pub fn compute_norms(s: &SpectralVelocity, beta: f64) -> Result<NormReport> {
    check_beta(beta)?;
    Ok(compute_norms_with(s, &s.evaluate(), beta))
}

pub(crate) fn compute_norms_with(s: &SpectralVelocity, e: &FieldEval, beta: f64) -> NormReport {
    NormReport {
        h_norm_sq: s.h_norm_sq(),
        v_norm_sq: s.v_norm_sq(),
        lp_norm: lp_norm(&e.u, beta + 1.0),
        grad_h_norm_sq: grad_quadrature(e),
        grad_v_norm_sq: s.h2_seminorm_sq(),
    }
}

/// `∫ |u|^q dx` by grid quadrature.
pub fn lp_norm(p: &PhysicalVelocity, q: f64) -> f64 {
    p.integrate(|s| (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).powf(q / 2.0))
}

pub(crate) fn grad_quadrature(e: &FieldEval) -> f64 {
    e.grad
        .iter()
        .map(|d| d.iter().flatten().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        * e.u.grid().cell_volume()
}

/// `|∇ |u|^{(β+1)/2}|_2^2`: the scalar `w = |u|^{(β+1)/2}` is transformed on
/// the full grid and `Σ |κ|^2 |ŵ(k)|^2` is summed.
pub fn grad_magnitude_power_field(p: &PhysicalVelocity, beta: f64) -> f64 {
    let g = p.grid();
    let expo = (beta + 1.0) / 4.0;
    let w: Vec<f64> = p
        .samples()
        .iter()
        .map(|s| (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).powf(expo))
        .collect();
    let hat = g.forward_real(&w);
    hat.iter()
        .enumerate()
        .map(|(f, c)| {
            let q = g.full_kappa(f);
            (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]) * c.norm_sqr()
        })
        .sum::<f64>()
        * g.volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{forward_transform, leray_project, Grid, GridSpec};
    use std::f64::consts::PI;

    fn shear(n: usize) -> SpectralVelocity {
        let g = Grid::new(GridSpec::new(n)).unwrap();
        let p = PhysicalVelocity::from_fn(g, |x| [x[1].sin(), 0.0, 0.0]).unwrap();
        leray_project(&forward_transform(&p).unwrap())
    }

    #[test]
    fn zero_field_norms_vanish() {
        let g = Grid::new(GridSpec::new(8)).unwrap();
        let r = compute_norms(&SpectralVelocity::zeros(g), 3.0).unwrap();
        assert_eq!(r.h_norm_sq, 0.0);
        assert_eq!(r.v_norm_sq, 0.0);
        assert_eq!(r.lp_norm, 0.0);
        assert_eq!(r.grad_h_norm_sq, 0.0);
        assert_eq!(r.grad_v_norm_sq, 0.0);
    }

    #[test]
    fn shear_closed_forms() {
        let vol = (2.0 * PI).powi(3);
        let r = compute_norms(&shear(8), 3.0).unwrap();
        assert!((r.h_norm_sq - vol / 2.0).abs() < 1e-12 * vol);
        assert!((r.v_norm_sq - vol / 2.0).abs() < 1e-12 * vol);
        assert!((r.grad_h_norm_sq - vol / 2.0).abs() < 1e-12 * vol);
        assert!((r.lp_norm - vol * 3.0 / 8.0).abs() < 1e-12 * vol);
        let gp = grad_magnitude_power_field(&shear(8).to_physical(), 3.0);
        assert!((gp - vol / 2.0).abs() < 1e-12 * vol);
    }

    #[test]
    fn rejects_small_beta() {
        assert!(compute_norms(&shear(4), 0.5).is_err());
    }

    #[test]
    fn gradient_power_of_constant_is_zero() {
        let g = Grid::new(GridSpec::new(8)).unwrap();
        let p = PhysicalVelocity::from_fn(g, |_| [0.3, -1.0, 2.0]).unwrap();
        assert!(grad_magnitude_power_field(&p, 4.0).abs() < 1e-20);
    }

    #[test]
    fn parseval_dual_route() {
        let g = Grid::new(GridSpec::new(8)).unwrap();
        for seed in 0..5 {
            let u = SpectralVelocity::random_smooth(g.clone(), seed, 7, 0.5);
            let quad = lp_norm(&u.to_physical(), 2.0);
            let s = u.h_norm_sq();
            assert!((quad - s).abs() < 1e-10 * s);
            let r = compute_norms(&u, 3.0).unwrap();
            assert!((r.grad_h_norm_sq - r.v_norm_sq).abs() < 1e-10 * r.v_norm_sq);
            assert!(r.h_norm_sq <= r.v_norm_sq * (g.box_length() / (2.0 * PI)).powi(2));
        }
    }
}
