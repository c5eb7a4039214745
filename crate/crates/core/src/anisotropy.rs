//! The anisotropic norm `sigma_K(p) = 1/2 int K(z) |z . p| dz`, its derivatives, and the
//! halfspace cell experiment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{nonlocal_tv, EnergyOptions};
use crate::error::{Error, Result};
use crate::fields::{rasterize, GridBox, RasterMode, Shape};
use crate::kernel::{Kernel, Tail, ZRuleParams};
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::vector::{from_slice, norm, normalize, perp2, Mat, Point};

/// One row of the planar direction table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionEntry<T> {
    pub angle: T,
    pub sigma: T,
    pub grad: [T; 2],
    /// `M_K(e)` evaluated on the tangent `e^perp`.
    pub hess_tangential: T,
}

/// `sigma_K` and its derivatives for one kernel.
#[derive(Clone, Debug)]
pub struct Anisotropy<T> {
    kernel: Kernel<T>,
    params: ZRuleParams<T>,
    table: Vec<DirectionEntry<T>>,
    radial: Option<T>,
}

impl<T: Real> Anisotropy<T> {
    /// Requires a finite first moment (`int K min(1, |z|) < inf`).
    pub fn new(kernel: Kernel<T>, params: ZRuleParams<T>) -> Result<Self> {
        if kernel.origin_exponent() >= T::one() {
            return Err(Error::Domain("kernel too singular at the origin for a finite surface tension".into()));
        }
        if let Tail::PowerLaw { decay, .. } = kernel.tail() {
            if decay <= T::one() {
                return Err(Error::Domain("kernel first moment diverges at infinity".into()));
            }
        }
        let mut a = Self { kernel, params, table: Vec::new(), radial: None };
        if a.kernel.is_radial() {
            let mut e = [T::zero(); 3];
            e[0] = T::one();
            a.radial = Some(a.direct_sigma(&e));
        }
        Ok(a)
    }

    /// Fills the planar direction table with `n` equally spaced angles in `[0, 2 pi)`.
    pub fn with_table(mut self, n: usize) -> Result<Self> {
        if self.kernel.dim() != 2 {
            return Err(Error::Unsupported("direction tables are planar".into()));
        }
        if n < 4 {
            return Err(Error::Invalid("direction table needs at least four angles".into()));
        }
        self.table = (0..n)
            .into_par_iter()
            .map(|i| {
                let th = T::TAU() * from_usize::<T>(i) / from_usize::<T>(n);
                let e = [th.cos(), th.sin(), T::zero()];
                let g = self.direct_grad(&e);
                let t = perp2(&e);
                let m = self.kernel.second_moment_on_hyperplane(&e, &self.params).unwrap_or([[T::nan(); 3]; 3]);
                let ht = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).fold(T::zero(), |acc, (i, j)| acc + t[i] * m[i][j] * t[j]);
                DirectionEntry { angle: th, sigma: self.direct_sigma(&e), grad: [g[0], g[1]], hess_tangential: ht }
            })
            .collect();
        Ok(self)
    }

    pub fn kernel(&self) -> &Kernel<T> {
        &self.kernel
    }

    pub fn params(&self) -> &ZRuleParams<T> {
        &self.params
    }

    pub fn table(&self) -> &[DirectionEntry<T>] {
        &self.table
    }

    /// For radial kernels, the constant `sigma_K(e)` shared by all unit `e`.
    pub fn radial_constant(&self) -> Option<T> {
        self.radial
    }

    fn split_rule(&self, e: &Point<T>) -> crate::kernel::ZRule<T> {
        let mut p = self.params.clone();
        p.axis = Some(*e);
        self.kernel.z_rule(&p)
    }

    fn direct_sigma(&self, e: &Point<T>) -> T {
        let rule = self.split_rule(e);
        let v = rule.integrate(|z| (z[0] * e[0] + z[1] * e[1] + z[2] * e[2]).abs() * lit(0.5), T::one(), T::one());
        v.value.as_float()
    }

    fn direct_grad(&self, e: &Point<T>) -> Point<T> {
        let rule = self.split_rule(e);
        let mut g = [T::zero(); 3];
        for (i, gi) in g.iter_mut().enumerate().take(self.kernel.dim()) {
            let v = rule.integrate(
                |z| if z[0] * e[0] + z[1] * e[1] + z[2] * e[2] > T::zero() { z[i] } else { T::zero() },
                T::one(),
                T::one(),
            );
            *gi = v.value.as_float();
        }
        g
    }

    fn unit(&self, p: &[T]) -> Result<Option<(Point<T>, T)>> {
        if p.len() != self.kernel.dim() {
            return Err(Error::Invalid(format!("expected a {}-vector", self.kernel.dim())));
        }
        let v = from_slice(p);
        let n = norm(&v);
        if n == T::zero() {
            return Ok(None);
        }
        Ok(normalize(&v).map(|e| (e, n)))
    }

    /// `sigma_K(p)`; exactly zero at `p = 0`.
    pub fn sigma(&self, p: &[T]) -> Result<T> {
        match self.unit(p)? {
            None => Ok(T::zero()),
            Some((e, n)) => Ok(n * self.sigma_unit(&e)?),
        }
    }

    /// `sigma_K(e)` for a unit vector, using the radial constant or the table when available.
    pub fn sigma_unit(&self, e: &Point<T>) -> Result<T> {
        if let Some(c) = self.radial {
            return Ok(c);
        }
        if !self.table.is_empty() {
            return Ok(self.lookup(e).sigma);
        }
        Ok(self.direct_sigma(e))
    }

    /// Linear interpolation in the planar direction table.
    pub fn lookup(&self, e: &Point<T>) -> DirectionEntry<T> {
        let n = self.table.len();
        let mut th = e[1].atan2(e[0]);
        if th < T::zero() {
            th = th + T::TAU();
        }
        let s = th / T::TAU() * from_usize::<T>(n);
        let i = s.floor().to_usize().unwrap_or(0) % n;
        let f = s - s.floor();
        let (a, b) = (&self.table[i], &self.table[(i + 1) % n]);
        let mix = |x: T, y: T| x + (y - x) * f;
        DirectionEntry {
            angle: th,
            sigma: mix(a.sigma, b.sigma),
            grad: [mix(a.grad[0], b.grad[0]), mix(a.grad[1], b.grad[1])],
            hess_tangential: mix(a.hess_tangential, b.hess_tangential),
        }
    }

    /// `grad sigma_K(p) = int_{z . p > 0} K(z) z dz`.
    pub fn grad_sigma(&self, p: &[T]) -> Result<Vec<T>> {
        let (e, _) = self.unit(p)?.ok_or_else(|| Error::Domain("sigma is not differentiable at 0".into()))?;
        let g = self.direct_grad(&e);
        Ok(g[..self.kernel.dim()].to_vec())
    }

    /// `M_K(e) = int_{e^perp} K(z) z (x) z`.
    pub fn m_matrix(&self, e: &Point<T>) -> Result<Mat<T>> {
        self.kernel
            .second_moment_on_hyperplane(e, &self.params)
            .ok_or_else(|| Error::Divergent("hyperplane second moment".into()))
    }

    /// `kappa_K(e) = tr M_K(e)`.
    pub fn kappa(&self, e: &Point<T>) -> Result<T> {
        let m = self.m_matrix(e)?;
        Ok(m[0][0] + m[1][1] + m[2][2])
    }

    /// `hess sigma_K(p) = M_K(p / |p|) / |p|`, as a `d x d` row-major matrix.
    pub fn hessian_sigma(&self, p: &[T]) -> Result<Vec<Vec<T>>> {
        let (e, n) = self.unit(p)?.ok_or_else(|| Error::Domain("sigma is not differentiable at 0".into()))?;
        let m = self.m_matrix(&e)?;
        let d = self.kernel.dim();
        Ok((0..d).map(|i| (0..d).map(|j| m[i][j] / n).collect()).collect())
    }

    /// Rows `(angle, sigma, grad_x, grad_y, hess_tangential)` of the direction table.
    pub fn table_rows(&self) -> Vec<[f64; 5]> {
        self.table
            .iter()
            .map(|r| [to_f64(r.angle), to_f64(r.sigma), to_f64(r.grad[0]), to_f64(r.grad[1]), to_f64(r.hess_tangential)])
            .collect()
    }
}

/// Sinusoidal boundary perturbations of the halfspace inside the unit ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompetitorFamily {
    pub count: usize,
    /// Amplitude at `eps = 1`; at scale `eps` it is `amplitude * eps^decay`.
    pub amplitude: f64,
    pub decay: f64,
    pub max_wavenumber: f64,
    /// Perturbations vanish outside `B(0, 1 - margin)`.
    pub margin: f64,
    /// Competitors whose `L^1(B)` distance to the halfspace at the smallest scale exceeds this are rejected.
    pub l1_tolerance: f64,
}

impl Default for CompetitorFamily {
    fn default() -> Self {
        Self { count: 8, amplitude: 0.3, decay: 0.5, max_wavenumber: 12.0, margin: 0.1, l1_tolerance: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Competitor {
    pub id: usize,
    pub amplitude: f64,
    pub wavenumber: f64,
    /// Normalized energies, one per scale.
    pub values: Vec<f64>,
    pub l1_distance: Vec<f64>,
    pub rejected: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellReport {
    pub eps: Vec<f64>,
    /// `(2 eps)^{-1} J1_eps(H; B)` for the halfspace itself.
    pub halfspace: Vec<f64>,
    pub sigma: f64,
    pub competitors: Vec<Competitor>,
}

impl CellReport {
    /// Largest amount by which an accepted competitor undercuts the halfspace at the smallest scale, relative.
    pub fn worst_undercut(&self) -> f64 {
        let last = self.halfspace.len() - 1;
        self.competitors
            .iter()
            .filter(|c| c.rejected.is_none())
            .map(|c| (self.halfspace[last] - c.values[last]) / self.halfspace[last])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rows `(eps, competitor_id, normalized_j1)`; the halfspace has id 0 and competitors start at 1.
    pub fn rows(&self) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::new();
        for (i, &e) in self.eps.iter().enumerate() {
            out.push((e, 0, self.halfspace[i]));
            for c in &self.competitors {
                out.push((e, c.id, c.values[i]));
            }
        }
        out
    }
}

/// Grid size per scale: at least `cells_per_eps` cells across the kernel reach.
fn cell_grid<T: Real>(kernel: &Kernel<T>, eps: T, cells_per_eps: usize, max_cells: usize) -> Result<GridBox<T>> {
    let reach = kernel.tail().radius() * eps;
    let n = (lit::<T>(2.0) * from_usize::<T>(cells_per_eps) / reach).ceil().to_usize().unwrap_or(max_cells);
    let n = (n + (n % 2)).clamp(16, max_cells);
    GridBox::centered(2, T::one(), n)
}

/// Resolution knobs for [`halfspace_cell_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResolution {
    pub cells_per_eps: usize,
    pub max_cells: usize,
}

impl Default for CellResolution {
    fn default() -> Self {
        Self { cells_per_eps: 7, max_cells: 320 }
    }
}

/// Compares `(2 eps)^{-1} J1_eps(E; B(0,1))` of the halfspace `{x . e > 0}` with sampled perturbations.
pub fn halfspace_cell_experiment<T: Real>(
    aniso: &Anisotropy<T>,
    normal: &[T],
    eps_list: &[T],
    family: &CompetitorFamily,
    seed: u64,
    resolution: &CellResolution,
) -> Result<CellReport> {
    let kernel = aniso.kernel();
    if kernel.dim() != 2 {
        return Err(Error::Unsupported("the cell experiment is planar".into()));
    }
    if eps_list.is_empty() {
        return Err(Error::Invalid("need at least one scale".into()));
    }
    let e = normalize(&from_slice(normal)).ok_or_else(|| Error::Invalid("normal must be nonzero".into()))?;
    let ball = Shape::ball(&[T::zero(), T::zero()], T::one())?;
    let half = Shape::HalfSpace { normal: e, offset: T::zero() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(f64, f64)> = (0..family.count)
        .map(|_| (rng.gen_range(0.2..=1.0) * family.amplitude, rng.gen_range(1.0..=family.max_wavenumber)))
        .collect();
    let sigma = to_f64(aniso.sigma_unit(&e)?);
    let mut halfspace = Vec::new();
    let mut values = vec![Vec::new(); draws.len()];
    let mut dist = vec![Vec::new(); draws.len()];
    for &eps in eps_list {
        let k = kernel.rescaled(eps)?;
        let grid = cell_grid(kernel, eps, resolution.cells_per_eps, resolution.max_cells)?;
        let mut opts = EnergyOptions::new(grid.clone());
        opts.phase = true;
        opts.quad = aniso.params().clone();
        let norm_j1 = |shape: &Shape<T>| -> Result<f64> {
            let u = rasterize(shape, &grid, RasterMode::Phase);
            let b = nonlocal_tv(&u, &ball, &k, &opts.quad)?;
            let j1 = b.j1.finite().ok_or_else(|| Error::Divergent("interior term".into()))?;
            Ok(to_f64(j1 / (lit::<T>(2.0) * eps)))
        };
        halfspace.push(norm_j1(&half)?);
        let base = rasterize(&half, &grid, RasterMode::Phase);
        let inside = rasterize(&ball, &grid, RasterMode::Indicator);
        for (i, &(a, kw)) in draws.iter().enumerate() {
            let amp = lit::<T>(a) * eps.powf(lit(family.decay));
            let taper = T::one() - lit::<T>(family.margin) - amp.abs();
            let shape = if taper > T::zero() {
                Shape::PerturbedHalfSpace { normal: e, offset: T::zero(), amplitude: amp, wavenumber: lit(kw), taper }
            } else {
                half.clone()
            };
            let u = rasterize(&shape, &grid, RasterMode::Phase);
            let l1: T = u
                .values()
                .iter()
                .zip(base.values())
                .zip(inside.values())
                .map(|((&x, &y), &w)| (x - y).abs() * w)
                .fold(T::zero(), |s, v| s + v)
                * grid.cell_volume();
            dist[i].push(to_f64(l1));
            values[i].push(norm_j1(&shape)?);
        }
    }
    let competitors = draws
        .iter()
        .enumerate()
        .map(|(i, &(a, kw))| {
            let d = &dist[i];
            let last = *d.last().unwrap();
            let rejected = if last > family.l1_tolerance {
                Some(format!("L1 distance {last:.3e} at the smallest scale exceeds {:.3e}", family.l1_tolerance))
            } else if d.len() > 1 && d.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-9) + 1e-12) {
                Some("L1 distance does not decrease with the scale".to_string())
            } else {
                None
            };
            Competitor { id: i + 1, amplitude: a, wavenumber: kw, values: values[i].clone(), l1_distance: d.clone(), rejected }
        })
        .collect();
    Ok(CellReport { eps: eps_list.iter().map(|&v| to_f64(v)).collect(), halfspace, sigma, competitors })
}


#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ball(d: usize) -> Anisotropy<f64> {
        Anisotropy::new(Kernel::ball(d, 1.0).unwrap(), ZRuleParams::default()).unwrap()
    }

    fn stretched() -> Anisotropy<f64> {
        let mut spec = Kernel::<f64>::gaussian(2, 0.5).unwrap().spec();
        spec.stretch = Some(crate::kernel::StretchSpec { factors: vec![1.0, 2.5], angle: 0.4 });
        let params = ZRuleParams { angular: 128, ..ZRuleParams::default() };
        Anisotropy::new(Kernel::from_spec(&spec).unwrap(), params).unwrap()
    }

    #[test]
    fn ball_closed_forms() {
        let a = ball(2);
        assert_eq!(a.sigma(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((a.sigma(&[1.0, 0.0]).unwrap() - 2.0 / 3.0).abs() < 1e-10);
        let g = a.grad_sigma(&[1.0, 0.0]).unwrap();
        assert!((g[0] - 2.0 / 3.0).abs() < 1e-10 && g[1].abs() < 1e-12, "{g:?}");
        let h = a.hessian_sigma(&[1.0, 0.0]).unwrap();
        assert!(h[0][0].abs() < 1e-12 && (h[1][1] - 2.0 / 3.0).abs() < 1e-10 && h[0][1].abs() < 1e-12, "{h:?}");
        let a3 = ball(3);
        assert!((a3.sigma(&[0.0, 0.0, 2.0]).unwrap() - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn derivatives_match_differences_for_a_stretched_kernel() {
        let a = stretched();
        let p = [0.6, 0.8];
        let h = 1e-4;
        let g = a.grad_sigma(&p).unwrap();
        for i in 0..2 {
            let mut up = p;
            let mut dn = p;
            up[i] += h;
            dn[i] -= h;
            let fd = (a.sigma(&up).unwrap() - a.sigma(&dn).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-4 * g[i].abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
        }
        let s = a.sigma(&p).unwrap();
        assert!((p[0] * g[0] + p[1] * g[1] - s).abs() < 1e-6 * s);
        let q = [0.5f64.sqrt(), 0.5f64.sqrt()];
        let hs = a.hessian_sigma(&q).unwrap();
        let step = 1e-3;
        for i in 0..2 {
            for j in 0..2 {
                let f = |di: f64, dj: f64| {
                    let mut x = q;
                    x[i] += di;
                    x[j] += dj;
                    a.sigma(&x).unwrap()
                };
                let fd = (f(step, step) - f(step, -step) - f(-step, step) + f(-step, -step)) / (4.0 * step * step);
                let scale = hs[0][0].abs().max(hs[1][1].abs());
                assert!((fd - hs[i][j]).abs() < 1e-3 * scale, "{i}{j}: {fd} vs {}", hs[i][j]);
            }
        }
    }

    #[test]
    fn radial_table_is_flat() {
        let a = Anisotropy::new(Kernel::fractional(2, 0.5, Some(1.0)).unwrap(), ZRuleParams::default()).unwrap().with_table(32).unwrap();
        let s: Vec<f64> = a.table().iter().map(|r| r.sigma).collect();
        let (lo, hi) = s.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(hi - lo < 1e-6 * hi, "{lo} {hi}");
        assert!((a.radial_constant().unwrap() - hi).abs() < 1e-6 * hi);
    }
}
