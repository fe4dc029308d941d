use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Resolution and truncation of the periodic box `[0, L)^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_per_axis: usize,
    pub box_length: f64,
    pub dealias_fraction: f64,
}

impl GridSpec {
    pub fn new(n_per_axis: usize) -> Self {
        Self {
            n_per_axis,
            box_length: 2.0 * std::f64::consts::PI,
            dealias_fraction: 2.0 / 3.0,
        }
    }

    pub fn with_box_length(mut self, box_length: f64) -> Self {
        self.box_length = box_length;
        self
    }

    pub fn with_dealias_fraction(mut self, fraction: f64) -> Self {
        self.dealias_fraction = fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_per_axis;
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "n_per_axis must be even and ≥ 4, got {n}"
            )));
        }
        if !(self.box_length.is_finite() && self.box_length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "box_length must be positive, got {}",
                self.box_length
            )));
        }
        if !(self.dealias_fraction > 0.0 && self.dealias_fraction <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "dealias_fraction must lie in (0, 1], got {}",
                self.dealias_fraction
            )));
        }
        Ok(())
    }

    /// Retained wavevectors satisfy `0 < |k| < cutoff`.
    pub fn cutoff(&self) -> f64 {
        self.dealias_fraction * self.n_per_axis as f64 / 2.0
    }
}

/// Integer wavenumber of FFT bin `i` on an `n`-point axis.
#[inline]
pub fn wavenumber(i: usize, n: usize) -> i32 {
    if i < n / 2 {
        i as i32
    } else {
        i as i32 - n as i32
    }
}

#[inline]
fn bin(k: i32, n: usize) -> usize {
    k.rem_euclid(n as i32) as usize
}

/// `k` lies in the half-space that is paired with `-k`.
#[inline]
pub fn is_positive_half(k: [i32; 3]) -> bool {
    k[0] > 0 || (k[0] == 0 && (k[1] > 0 || (k[1] == 0 && k[2] > 0)))
}

/// A validated grid together with its retained Galerkin mode set and FFT plans.
///
/// Retained modes are ordered by `|k|^2`, ties broken lexicographically.
pub struct Grid {
    spec: GridSpec,
    modes: Vec<[i32; 3]>,
    kappa: Vec<[f64; 3]>,
    kappa2: Vec<f64>,
    full_index: Vec<usize>,
    conj: Vec<usize>,
    full_neg: Vec<usize>,
    full_kappa: Vec<[f64; 3]>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("spec", &self.spec)
            .field("modes", &self.modes.len())
            .finish()
    }
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Arc<Grid>> {
        spec.validate()?;
        let n = spec.n_per_axis;
        let cutoff2 = spec.cutoff() * spec.cutoff();
        let scale = 2.0 * std::f64::consts::PI / spec.box_length;

        let mut modes = Vec::new();
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let k = [wavenumber(ix, n), wavenumber(iy, n), wavenumber(iz, n)];
                    let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
                    if k2 > 0.0 && k2 < cutoff2 {
                        modes.push(k);
                    }
                }
            }
        }
        if modes.is_empty() {
            return Err(Error::InvalidGrid(
                "dealiasing leaves no retained modes".into(),
            ));
        }
        modes.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1] + k[2] * k[2], *k));

        let flat = |k: [i32; 3]| (bin(k[0], n) * n + bin(k[1], n)) * n + bin(k[2], n);
        let full_index: Vec<usize> = modes.iter().map(|&k| flat(k)).collect();
        let mut lookup = vec![usize::MAX; n * n * n];
        for (m, &f) in full_index.iter().enumerate() {
            lookup[f] = m;
        }
        let conj: Vec<usize> = modes
            .iter()
            .map(|&k| lookup[flat([-k[0], -k[1], -k[2]])])
            .collect();
        debug_assert!(conj.iter().all(|&c| c != usize::MAX));

        let kappa: Vec<[f64; 3]> = modes
            .iter()
            .map(|k| [k[0] as f64 * scale, k[1] as f64 * scale, k[2] as f64 * scale])
            .collect();
        let kappa2 = kappa.iter().map(|q| q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).collect();

        let mut full_neg = vec![0; n * n * n];
        let mut full_kappa = vec![[0.0; 3]; n * n * n];
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let k = [wavenumber(ix, n), wavenumber(iy, n), wavenumber(iz, n)];
                    let f = (ix * n + iy) * n + iz;
                    full_neg[f] = flat([-k[0], -k[1], -k[2]]);
                    full_kappa[f] = [k[0] as f64 * scale, k[1] as f64 * scale, k[2] as f64 * scale];
                }
            }
        }

        let mut planner = FftPlanner::new();
        Ok(Arc::new(Grid {
            spec,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            modes,
            kappa,
            kappa2,
            full_index,
            conj,
            full_neg,
            full_kappa,
        }))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n_per_axis
    }

    pub fn n_points(&self) -> usize {
        let n = self.n();
        n * n * n
    }

    pub fn box_length(&self) -> f64 {
        self.spec.box_length
    }

    pub fn volume(&self) -> f64 {
        self.spec.box_length.powi(3)
    }

    /// Quadrature weight `L^3 / N^3` of one grid point.
    pub fn cell_volume(&self) -> f64 {
        self.volume() / self.n_points() as f64
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[[i32; 3]] {
        &self.modes
    }

    pub fn kappa(&self, m: usize) -> [f64; 3] {
        self.kappa[m]
    }

    pub fn kappa2(&self, m: usize) -> f64 {
        self.kappa2[m]
    }

    pub fn max_kappa2(&self) -> f64 {
        self.kappa2.iter().copied().fold(0.0, f64::max)
    }

    /// Retained index of `-k` for retained index `m`.
    pub fn conj_index(&self, m: usize) -> usize {
        self.conj[m]
    }

    pub fn full_index(&self, m: usize) -> usize {
        self.full_index[m]
    }

    pub fn full_neg(&self, f: usize) -> usize {
        self.full_neg[f]
    }

    pub fn full_kappa(&self, f: usize) -> [f64; 3] {
        self.full_kappa[f]
    }

    pub fn mode_index(&self, k: [i32; 3]) -> Option<usize> {
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        let start = self.modes.partition_point(|q| {
            (q[0] * q[0] + q[1] * q[1] + q[2] * q[2], *q) < (k2, k)
        });
        (self.modes.get(start) == Some(&k)).then_some(start)
    }

    /// Physical coordinates of grid point `f`.
    pub fn point(&self, f: usize) -> [f64; 3] {
        let n = self.n();
        let h = self.spec.box_length / n as f64;
        let (ix, rest) = (f / (n * n), f % (n * n));
        let (iy, iz) = (rest / n, rest % n);
        [ix as f64 * h, iy as f64 * h, iz as f64 * h]
    }

    /// Unnormalised in-place 3D DFT. `inverse` selects the `e^{+ikx}` sign.
    pub fn fft3(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n();
        assert_eq!(data.len(), n * n * n);
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);

        let mut buf = vec![Complex64::new(0.0, 0.0); data.len()];
        // y axis
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    buf[(ix * n + iz) * n + iy] = data[(ix * n + iy) * n + iz];
                }
            }
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    data[(ix * n + iy) * n + iz] = buf[(ix * n + iz) * n + iy];
                }
            }
        }
        // x axis
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    buf[(iy * n + iz) * n + ix] = data[(ix * n + iy) * n + iz];
                }
            }
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    data[(ix * n + iy) * n + iz] = buf[(iy * n + iz) * n + ix];
                }
            }
        }
    }

    /// Inverse transform of two Hermitian spectra at once: returns the real
    /// fields whose spectra are `a` and `b`.
    pub fn inverse_pair(&self, a: &[Complex64], b: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let mut z: Vec<Complex64> = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| x + Complex64::i() * y)
            .collect();
        self.fft3(&mut z, true);
        (z.iter().map(|c| c.re).collect(), z.iter().map(|c| c.im).collect())
    }

    /// Normalised forward transform of two real fields at once.
    pub fn forward_pair(&self, f: &[f64], g: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut z: Vec<Complex64> = f.iter().zip(g).map(|(&x, &y)| Complex64::new(x, y)).collect();
        self.fft3(&mut z, false);
        let norm = 1.0 / self.n_points() as f64;
        let mut fa = vec![Complex64::new(0.0, 0.0); z.len()];
        let mut fb = vec![Complex64::new(0.0, 0.0); z.len()];
        for i in 0..z.len() {
            let zc = z[self.full_neg[i]].conj();
            fa[i] = (z[i] + zc) * (0.5 * norm);
            fb[i] = (z[i] - zc) * Complex64::new(0.0, -0.5 * norm);
        }
        (fa, fb)
    }

    /// Normalised forward transform of a real field.
    pub fn forward_real(&self, f: &[f64]) -> Vec<Complex64> {
        let mut z: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft3(&mut z, false);
        let norm = 1.0 / self.n_points() as f64;
        z.iter_mut().for_each(|c| *c *= norm);
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_specs() {
        assert!(Grid::new(GridSpec::new(6).with_box_length(-1.0)).is_err());
        assert!(Grid::new(GridSpec::new(5)).is_err());
        assert!(Grid::new(GridSpec::new(2)).is_err());
        assert!(Grid::new(GridSpec::new(8).with_dealias_fraction(0.0)).is_err());
        assert!(Grid::new(GridSpec::new(8).with_dealias_fraction(0.1)).is_err());
    }

    #[test]
    fn mode_set_is_symmetric_and_sorted() {
        for n in [4, 8, 16] {
            let g = Grid::new(GridSpec::new(n)).unwrap();
            for m in 0..g.n_modes() {
                let k = g.modes()[m];
                let c = g.modes()[g.conj_index(m)];
                assert_eq!(c, [-k[0], -k[1], -k[2]]);
                assert_eq!(g.mode_index(k), Some(m));
            }
            let k2: Vec<i32> = g.modes().iter().map(|k| k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).collect();
            assert!(k2.windows(2).all(|w| w[0] <= w[1]));
        }
        assert_eq!(Grid::new(GridSpec::new(4)).unwrap().n_modes(), 6);
        assert_eq!(Grid::new(GridSpec::new(8)).unwrap().mode_index([0, 0, 3]), None);
    }

    #[test]
    fn dft_matches_direct_summation() {
        let g = Grid::new(GridSpec::new(4)).unwrap();
        let n = g.n_points();
        let data: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut fast = data.clone();
        g.fft3(&mut fast, false);
        for f in 0..n {
            let q = g.full_kappa(f);
            let mut acc = Complex64::new(0.0, 0.0);
            for (p, d) in data.iter().enumerate() {
                let x = g.point(p);
                let phase = -(q[0] * x[0] + q[1] * x[1] + q[2] * x[2]);
                acc += d * Complex64::from_polar(1.0, phase);
            }
            assert!((acc - fast[f]).norm() < 1e-10, "bin {f}");
        }
    }
}
