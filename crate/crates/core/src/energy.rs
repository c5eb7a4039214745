//! Nonlocal couplings, perimeters and total variations, their rescalings and the local limit.
//!
//! Double integrals are written as `int K(z) D(z) dz` where `D` collects the shifted overlaps of
//! the grid fields. `D` is tabulated on lattice shifts and interpolated multilinearly in between,
//! which is exact for cell-wise constant fields.

use rayon::prelude::*;

use crate::anisotropy::Anisotropy;
use crate::error::{Error, Result};
use crate::fields::{rasterize, superlevel, GridBox, GridField, RasterMode, Shape, Tag};
use crate::kernel::{Estimate, Kernel, ZRuleParams};
use crate::quadrature::GaussLegendre;
use crate::scalar::{from_usize, lit, pairwise_sum, Extended, Real};
use crate::vector::{norm, Point};

/// Interior and cross terms of a nonlocal total variation.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyBreakdown<T> {
    /// `1/2 int_{Omega x Omega} K(y - x) |u(y) - u(x)|`.
    pub j1: Extended<T>,
    /// `int_{Omega x Omega^c} K(y - x) |u(y) - u(x)|`.
    pub j2: Extended<T>,
    pub total: Extended<T>,
    pub error: T,
    /// Which term diverged, when one did.
    pub infinite_source: Option<String>,
}

impl<T: Real> EnergyBreakdown<T> {
    fn from_parts(j1: Estimate<T>, j2: Estimate<T>) -> Self {
        let source = match (j1.value.is_finite(), j2.value.is_finite()) {
            (true, true) => None,
            (false, true) => Some("interior term".to_string()),
            (true, false) => Some("cross term".to_string()),
            (false, false) => Some("interior and cross terms".to_string()),
        };
        Self { j1: j1.value, j2: j2.value, total: j1.value + j2.value, error: j1.error + j2.error, infinite_source: source }
    }

    pub fn zero() -> Self {
        let z = Extended::Finite(T::zero());
        Self { j1: z, j2: z, total: z, error: T::zero(), infinite_source: None }
    }
}

/// Grid and quadrature settings for energy evaluations on shapes.
#[derive(Clone, Debug)]
pub struct EnergyOptions<T> {
    pub grid: GridBox<T>,
    /// Rasterize shapes as area fractions instead of cell-center indicators.
    pub phase: bool,
    pub quad: ZRuleParams<T>,
}

impl<T: Real> EnergyOptions<T> {
    pub fn new(grid: GridBox<T>) -> Self {
        Self { grid, phase: false, quad: ZRuleParams::default() }
    }

    fn raster(&self, shape: &Shape<T>) -> GridField<T> {
        rasterize(shape, &self.grid, if self.phase { RasterMode::Phase } else { RasterMode::Indicator })
    }
}

/// Values on the lattice of shifts `m` with `|m_k| <= reach_k`.
struct ShiftTable<T> {
    dim: usize,
    reach: [isize; 3],
    spacing: [T; 3],
    values: Vec<T>,
    /// Value for shifts that leave the box in some axis.
    far: T,
    box_cells: [isize; 3],
}

impl<T: Real> ShiftTable<T> {
    fn index(&self, m: [isize; 3]) -> usize {
        let w0 = (2 * self.reach[0] + 1) as usize;
        let w1 = (2 * self.reach[1] + 1) as usize;
        (m[0] + self.reach[0]) as usize + w0 * ((m[1] + self.reach[1]) as usize + w1 * (m[2] + self.reach[2]) as usize)
    }

    fn at(&self, m: [isize; 3]) -> T {
        for k in 0..self.dim {
            if m[k].abs() >= self.box_cells[k] {
                return self.far;
            }
            if m[k].abs() > self.reach[k] {
                return self.far;
            }
        }
        self.values[self.index(m)]
    }

    /// Multilinear interpolation at a continuous shift `z`.
    fn interp(&self, z: &Point<T>) -> T {
        let mut base = [0isize; 3];
        let mut frac = [T::zero(); 3];
        for k in 0..self.dim {
            let s = z[k] / self.spacing[k];
            let f = s.floor();
            base[k] = f.to_isize().unwrap_or(isize::MAX / 4);
            frac[k] = s - f;
        }
        let corners = 1usize << self.dim;
        let mut acc = T::zero();
        for c in 0..corners {
            let mut w = T::one();
            let mut m = [0isize; 3];
            for k in 0..self.dim {
                let bit = (c >> k) & 1;
                m[k] = base[k] + bit as isize;
                w = w * if bit == 1 { frac[k] } else { T::one() - frac[k] };
            }
            if w != T::zero() {
                acc = acc + w * self.at(m);
            }
        }
        acc
    }
}

fn reach_for<T: Real>(grid: &GridBox<T>, radius: T) -> [isize; 3] {
    let mut r = [0isize; 3];
    for k in 0..grid.dim() {
        let cells = (radius / grid.spacing(k)).ceil().to_isize().unwrap_or(isize::MAX / 4) + 1;
        r[k] = cells.min(grid.resolution()[k] as isize);
    }
    r
}

/// Tabulates `sum_c w(c, c + m) h^d` over cells `c` with `active[c]`, for every shift `m` within `reach`.
fn tabulate<T: Real>(
    grid: &GridBox<T>,
    reach: [isize; 3],
    active: &[usize],
    pair: impl Fn(usize, [isize; 3]) -> T + Sync,
    far: T,
) -> ShiftTable<T> {
    let d = grid.dim();
    let w = [(2 * reach[0] + 1) as usize, (2 * reach[1] + 1) as usize, (2 * reach[2] + 1) as usize];
    let count = w[0] * w[1] * w[2];
    let vol = grid.cell_volume();
    let values: Vec<T> = (0..count)
        .into_par_iter()
        .map(|lin| {
            let m = [
                (lin % w[0]) as isize - reach[0],
                ((lin / w[0]) % w[1]) as isize - reach[1],
                (lin / (w[0] * w[1])) as isize - reach[2],
            ];
            let terms: Vec<T> = active.iter().map(|&c| pair(c, m)).collect();
            pairwise_sum(&terms) * vol
        })
        .collect();
    let mut box_cells = [1isize; 3];
    for k in 0..d {
        box_cells[k] = grid.resolution()[k] as isize;
    }
    let mut spacing = [T::one(); 3];
    for k in 0..d {
        spacing[k] = grid.spacing(k);
    }
    ShiftTable { dim: d, reach, spacing, values, far, box_cells }
}

fn shifted_cell<T: Real>(grid: &GridBox<T>, c: usize, m: [isize; 3]) -> Option<usize> {
    let i = grid.multi_index(c);
    let mut j = [0usize; 3];
    for k in 0..3 {
        let n = if k < grid.dim() { grid.resolution()[k] } else { 1 };
        let v = i[k] as isize + m[k];
        if v < 0 || v as usize >= n {
            return None;
        }
        j[k] = v as usize;
    }
    Some(grid.index(j))
}

fn rule_for<T: Real>(kernel: &Kernel<T>, grid: &GridBox<T>, quad: &ZRuleParams<T>) -> crate::kernel::ZRule<T> {
    let mut params = quad.clone();
    if params.r_far.is_none() {
        // Beyond the box diameter every shifted cell has left the box.
        let tail = kernel.tail();
        params.r_far = Some(tail.radius().min(grid.diameter() * lit(1.01)).max(grid.min_spacing()));
        if let crate::kernel::Tail::Compact(r) = tail {
            params.r_far = Some(r.min(params.r_far.unwrap()));
        }
    }
    kernel.z_rule(&params)
}

fn omega_mask<T: Real>(omega: &Shape<T>, grid: &GridBox<T>) -> Vec<bool> {
    let f = rasterize(omega, grid, RasterMode::Indicator);
    f.values().iter().map(|&v| v > lit(0.5)).collect()
}

/// `J1` and `J2` of `u` relative to `Omega`, clipped to the grid box.
pub fn nonlocal_tv<T: Real>(u: &GridField<T>, omega: &Shape<T>, kernel: &Kernel<T>, quad: &ZRuleParams<T>) -> Result<EnergyBreakdown<T>> {
    if u.dim() != kernel.dim() {
        return Err(Error::Invalid("field and kernel dimensions differ".into()));
    }
    if u.tag() == Tag::LevelSet {
        return Err(Error::Invalid("total variation expects an indicator or phase field".into()));
    }
    let grid = u.grid();
    let mask = omega_mask(omega, grid);
    let vals = u.values();
    let active: Vec<usize> = (0..grid.len()).filter(|&c| mask[c]).collect();
    if active.is_empty() || vals.iter().all(|&v| v == vals[0]) && vals[0] == u.extension() {
        return Ok(EnergyBreakdown::zero());
    }
    let rule = rule_for(kernel, grid, quad);
    let reach = reach_for(grid, rule.r_far);
    let ext = u.extension();
    let d1 = tabulate(
        grid,
        reach,
        &active,
        |c, m| match shifted_cell(grid, c, m) {
            Some(j) if mask[j] => (vals[j] - vals[c]).abs(),
            _ => T::zero(),
        },
        T::zero(),
    );
    let far2 = pairwise_sum(&active.iter().map(|&c| (ext - vals[c]).abs()).collect::<Vec<_>>()) * grid.cell_volume();
    let d2 = tabulate(
        grid,
        reach,
        &active,
        |c, m| match shifted_cell(grid, c, m) {
            Some(j) if mask[j] => T::zero(),
            Some(j) => (vals[j] - vals[c]).abs(),
            None => (ext - vals[c]).abs(),
        },
        far2,
    );
    let j1 = rule.integrate(|z| d1.interp(z) * lit(0.5), T::one(), T::zero());
    let j2 = rule.integrate(|z| d2.interp(z), T::one(), T::zero());
    Ok(EnergyBreakdown::from_parts(j1, j2))
}

/// `L_K(E; F) = int_E int_F K(y - x) dy dx`.
pub fn coupling<T: Real>(e: &Shape<T>, f: &Shape<T>, kernel: &Kernel<T>, opts: &EnergyOptions<T>) -> Result<Extended<T>> {
    let grid = &opts.grid;
    let ue = opts.raster(e);
    let uf = opts.raster(f);
    let ve = ue.values();
    let vf = uf.values();
    let active: Vec<usize> = (0..grid.len()).filter(|&c| ve[c] > T::zero()).collect();
    if active.is_empty() || vf.iter().all(|&v| v == T::zero()) {
        return Ok(Extended::Finite(T::zero()));
    }
    let rule = rule_for(kernel, grid, &opts.quad);
    let reach = reach_for(grid, rule.r_far);
    let table = tabulate(
        grid,
        reach,
        &active,
        |c, m| match shifted_cell(grid, c, m) {
            Some(j) => ve[c] * vf[j],
            None => T::zero(),
        },
        T::zero(),
    );
    Ok(rule.integrate(|z| table.interp(z), T::zero(), T::zero()).value)
}

/// `Per_K(E; Omega)`, through the same path as [`nonlocal_tv`] on the rasterized indicator.
pub fn perimeter_k<T: Real>(e: &Shape<T>, omega: &Shape<T>, kernel: &Kernel<T>, opts: &EnergyOptions<T>) -> Result<EnergyBreakdown<T>> {
    nonlocal_tv(&opts.raster(e), omega, kernel, &opts.quad)
}

/// `eps^{-1} J_eps(u; Omega)` for the rescaled kernel.
pub fn rescaled_tv<T: Real>(u: &GridField<T>, omega: &Shape<T>, kernel: &Kernel<T>, eps: T, quad: &ZRuleParams<T>) -> Result<EnergyBreakdown<T>> {
    let k = kernel.rescaled(eps)?;
    let b = nonlocal_tv(u, omega, &k, quad)?;
    let inv = T::one() / eps;
    Ok(EnergyBreakdown {
        j1: b.j1.map(|v| v * inv),
        j2: b.j2.map(|v| v * inv),
        total: b.total.map(|v| v * inv),
        error: b.error * inv,
        infinite_source: b.infinite_source,
    })
}

/// Input to the local limit functional.
pub enum LimitInput<'a, T> {
    Shape(&'a Shape<T>),
    Field(&'a GridField<T>),
}

/// `J_0`: `int_{dE cap Omega} sigma_K(n)` for shapes, `int_Omega sigma_K(grad u)` for smooth fields.
pub fn limit_tv<T: Real>(input: LimitInput<'_, T>, omega: &Shape<T>, aniso: &Anisotropy<T>, bound: T) -> Result<T> {
    match input {
        LimitInput::Shape(shape) => {
            if aniso.kernel().dim() != 2 {
                return Err(Error::Unsupported("boundary integrals are implemented in the plane".into()));
            }
            let pieces = shape.boundary_pieces(bound)?;
            let gl = GaussLegendre::<T>::new(16);
            let mut total = Vec::new();
            for piece in &pieces {
                // Split the parameter range where membership in Omega changes.
                let samples = 512;
                let mut cuts = vec![T::zero()];
                let inside = |u: T| omega.contains(&piece.eval(u).0);
                let mut prev = inside(T::zero());
                for i in 1..=samples {
                    let u = from_usize::<T>(i) / from_usize::<T>(samples);
                    let cur = inside(u);
                    if cur != prev {
                        let (mut a, mut b) = (u - T::one() / from_usize::<T>(samples), u);
                        for _ in 0..60 {
                            let mid = (a + b) * lit(0.5);
                            if inside(mid) == prev {
                                a = mid;
                            } else {
                                b = mid;
                            }
                        }
                        cuts.push((a + b) * lit(0.5));
                        prev = cur;
                    }
                }
                cuts.push(T::one());
                for w in cuts.windows(2) {
                    let mid = (w[0] + w[1]) * lit(0.5);
                    if !inside(mid) || w[1] <= w[0] {
                        continue;
                    }
                    // Panels keep the curvature of long arcs resolved.
                    let panels = 16;
                    for p in 0..panels {
                        let a = w[0] + (w[1] - w[0]) * from_usize::<T>(p) / from_usize::<T>(panels);
                        let b = w[0] + (w[1] - w[0]) * from_usize::<T>(p + 1) / from_usize::<T>(panels);
                        for (u, wt) in gl.on(a, b) {
                            let (x, v) = piece.eval(u);
                            let n = shape.outer_normal(&x).ok_or_else(|| Error::DegenerateGradient("boundary normal".into()))?;
                            total.push(wt * norm(&v) * aniso.sigma_unit(&n)?);
                        }
                    }
                }
            }
            Ok(pairwise_sum(&total))
        }
        LimitInput::Field(u) => {
            let grid = u.grid();
            let mask = omega_mask(omega, grid);
            let d = grid.dim();
            let terms: Vec<T> = (0..grid.len())
                .into_par_iter()
                .filter(|&c| mask[c])
                .map(|c| {
                    let i = grid.multi_index(c);
                    let ii = [i[0] as isize, i[1] as isize, i[2] as isize];
                    let mut g = [T::zero(); 3];
                    for k in 0..d {
                        let n = grid.resolution()[k] as isize;
                        let mut up = ii;
                        let mut dn = ii;
                        up[k] = (ii[k] + 1).min(n - 1);
                        dn[k] = (ii[k] - 1).max(0);
                        g[k] = (u.at(up) - u.at(dn)) / (grid.spacing(k) * from_usize::<T>((up[k] - dn[k]) as usize));
                    }
                    aniso.sigma(&g[..d]).unwrap_or(T::zero())
                })
                .collect();
            Ok(pairwise_sum(&terms) * grid.cell_volume())
        }
    }
}

/// Both sides of the coarea identity for a phase field.
#[derive(Clone, Debug, PartialEq)]
pub struct CoareaCheck<T> {
    pub lhs: T,
    pub rhs: T,
    pub gap: T,
}

pub fn coarea_check<T: Real>(u: &GridField<T>, omega: &Shape<T>, kernel: &Kernel<T>, levels: usize, quad: &ZRuleParams<T>) -> Result<CoareaCheck<T>> {
    if levels == 0 {
        return Err(Error::Invalid("need at least one level".into()));
    }
    let lhs = nonlocal_tv(u, omega, kernel, quad)?.total.finite().ok_or_else(|| Error::Divergent("total variation".into()))?;
    let dt = T::one() / from_usize::<T>(levels);
    // Levels with the same superlevel set share one perimeter evaluation.
    let mut groups: Vec<(Vec<T>, bool, usize)> = Vec::new();
    for k in 0..levels {
        let s = dt * (from_usize::<T>(k) + lit(0.5));
        let cells: Vec<T> = u.values().iter().map(|&v| if v > s { T::one() } else { T::zero() }).collect();
        let outside = u.extension() > s;
        match groups.iter_mut().find(|g| g.0 == cells && g.1 == outside) {
            Some(g) => g.2 += 1,
            None => groups.push((cells, outside, 1)),
        }
    }
    let mut rhs = T::zero();
    for (cells, outside, count) in groups {
        if !outside && cells.iter().all(|&v| v == T::zero()) {
            continue;
        }
        let ind = GridField::new(u.grid().clone(), cells, Tag::Indicator, if outside { T::one() } else { T::zero() })?;
        let per = nonlocal_tv(&ind, omega, kernel, quad)?.total.finite().ok_or_else(|| Error::Divergent("level perimeter".into()))?;
        rhs = rhs + per * dt * from_usize::<T>(count);
    }
    Ok(CoareaCheck { lhs, rhs, gap: lhs - rhs })
}

/// `Per(E) + Per(F) - Per(E cap F) - Per(E cup F)` relative to `Omega`.
pub fn submodularity_check<T: Real>(e: &Shape<T>, f: &Shape<T>, omega: &Shape<T>, kernel: &Kernel<T>, opts: &EnergyOptions<T>) -> Result<T> {
    let ue = opts.raster(e);
    let uf = opts.raster(f);
    let combine = |op: fn(T, T) -> T| -> Result<GridField<T>> {
        let v = ue.values().iter().zip(uf.values()).map(|(&a, &b)| op(a, b)).collect();
        GridField::new(opts.grid.clone(), v, ue.tag(), T::zero())
    };
    let inter = combine(|a, b| a.min(b))?;
    let union = combine(|a, b| a.max(b))?;
    let per = |u: &GridField<T>| -> Result<T> {
        nonlocal_tv(u, omega, kernel, &opts.quad)?.total.finite().ok_or_else(|| Error::Divergent("perimeter".into()))
    };
    Ok(per(&ue)? + per(&uf)? - per(&inter)? - per(&union)?)
}

/// `{u >= c}` as an indicator field on the same grid.
pub fn superlevel_field<T: Real>(u: &GridField<T>, c: T) -> Result<GridField<T>> {
    match superlevel(u, c) {
        Shape::Grid(f) => Ok((*f).clone()),
        _ => unreachable!("superlevel returns a grid shape"),
    }
}
