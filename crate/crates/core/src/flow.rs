//! Explicit level-set schemes for the rescaled nonlocal curvature flow and its local limit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anisotropy::Anisotropy;
use crate::error::{Error, Result};
use crate::fields::{CubicSpline, GridBox, GridField, Interpolation, Tag};
use crate::kernel::Kernel;
use crate::quadrature::GaussLegendre;
use crate::scalar::{from_usize, lit, pairwise_sum, to_f64, Real};
use crate::vector::{norm, outer, trace_product, Mat, Point};

/// Gradient floor relative to the range of the initial field.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Field, time and scheme parameters of a running flow.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState<T> {
    pub field: GridField<T>,
    pub time: T,
    pub dt: T,
    /// Cells with a smaller central-difference gradient are frozen.
    pub floor: T,
}

impl<T: Real> FlowState<T> {
    /// `u0` must be a level-set field equal to its extension on a two-cell frame of the box.
    pub fn new(u0: GridField<T>, dt: T) -> Result<Self> {
        if u0.tag() != Tag::LevelSet {
            return Err(Error::Invalid("flows evolve level-set fields".into()));
        }
        if !(dt > T::zero()) {
            return Err(Error::Invalid("time step must be positive".into()));
        }
        check_frame(&u0)?;
        let (lo, hi) = u0.values().iter().fold((u0.extension(), u0.extension()), |(a, b), &v| (a.min(v), b.max(v)));
        let floor = lit::<T>(GRADIENT_FLOOR) * (hi - lo);
        Ok(Self { field: u0, time: T::zero(), dt, floor })
    }

    fn advance(&self, values: Vec<T>, dt: T) -> Result<Self> {
        let field = GridField::new(self.field.grid().clone(), values, Tag::LevelSet, self.field.extension())?;
        Ok(Self { field, time: self.time + dt, dt: self.dt, floor: self.floor })
    }
}

fn check_frame<T: Real>(u: &GridField<T>) -> Result<()> {
    let g = u.grid();
    let ext = u.extension();
    let scale = u.values().iter().fold(T::one(), |m, v| m.max(v.abs()));
    for idx in 0..g.len() {
        let i = g.multi_index(idx);
        let frame = (0..g.dim()).any(|k| i[k] < 2 || i[k] + 2 >= g.resolution()[k]);
        if frame && (u.values()[idx] - ext).abs() > lit::<T>(1e-12) * scale {
            return Err(Error::Constraint("initial field is not constant near the edge of the box".into()));
        }
    }
    Ok(())
}

/// Source of `M_K(e)` for the local scheme.
enum Mobility<'a, T: Real> {
    Radial(T),
    Table(&'a Anisotropy<T>),
    Direct(&'a Anisotropy<T>),
}

impl<'a, T: Real> Mobility<'a, T> {
    fn new(aniso: &'a Anisotropy<T>) -> Result<Self> {
        if aniso.kernel().is_radial() {
            let mut e = [T::zero(); 3];
            e[0] = T::one();
            let m = aniso.m_matrix(&e)?;
            // For radial kernels M_K(e) = kappa (I - e e^T).
            return Ok(Mobility::Radial(m[1][1]));
        }
        if !aniso.table().is_empty() {
            return Ok(Mobility::Table(aniso));
        }
        Ok(Mobility::Direct(aniso))
    }

    fn matrix(&self, e: &Point<T>, dim: usize) -> Result<Mat<T>> {
        match self {
            Mobility::Radial(k) => {
                let mut m = outer(e, e);
                for (i, row) in m.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let id = if i == j && i < dim { T::one() } else { T::zero() };
                        *v = *k * (id - *v);
                    }
                }
                Ok(m)
            }
            Mobility::Table(a) => {
                let t = crate::vector::perp2(e);
                let mut m = outer(&t, &t);
                let s = a.lookup(e).hess_tangential;
                m.iter_mut().flat_map(|r| r.iter_mut()).for_each(|v| *v = *v * s);
                Ok(m)
            }
            Mobility::Direct(a) => a.m_matrix(e),
        }
    }

    /// Upper bound on the largest eigenvalue of `M_K` over directions.
    fn largest(&self, dim: usize) -> Result<T> {
        match self {
            Mobility::Radial(k) => Ok(*k),
            Mobility::Table(a) => Ok(a.table().iter().fold(T::zero(), |m, r| m.max(r.hess_tangential))),
            Mobility::Direct(a) => {
                let mut best = T::zero();
                for i in 0..16 {
                    let th = T::PI() * from_usize::<T>(i) / lit(16.0);
                    let e = if dim == 2 {
                        [th.cos(), th.sin(), T::zero()]
                    } else {
                        [th.cos(), th.sin() * lit(0.6), th.sin() * lit(0.8)]
                    };
                    let m = a.m_matrix(&e)?;
                    best = best.max(m[0][0] + m[1][1] + m[2][2]);
                }
                Ok(best)
            }
        }
    }
}

/// Parabolic stability limit `dt <= h^2 / (4 kappa_K)` of the explicit schemes.
pub fn stability_limit<T: Real>(grid: &GridBox<T>, aniso: &Anisotropy<T>) -> Result<T> {
    let kappa = Mobility::new(aniso)?.largest(grid.dim())?;
    let h = grid.min_spacing();
    Ok(lit::<T>(0.25) * h * h / kappa)
}

fn check_dt<T: Real>(state: &FlowState<T>, aniso: &Anisotropy<T>) -> Result<()> {
    let limit = stability_limit(state.field.grid(), aniso)?;
    if state.dt > limit * (T::one() + lit(1e-12)) {
        return Err(Error::Invalid(format!(
            "time step {:.3e} exceeds the stability limit {:.3e}",
            to_f64(state.dt),
            to_f64(limit)
        )));
    }
    Ok(())
}

/// Neighbor value along axis `k` at offset `s`.
fn neighbor<T: Real>(u: &GridField<T>, i: [usize; 3], k: usize, s: isize) -> T {
    let mut j = [i[0] as isize, i[1] as isize, i[2] as isize];
    j[k] += s;
    u.at(j)
}

/// Range of `u` over the `3^d` block around cell `i`.
fn neighborhood_range<T: Real>(u: &GridField<T>, i: [usize; 3]) -> (T, T) {
    let d = u.dim();
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for s in 0..3usize.pow(d as u32) {
        let mut j = [i[0] as isize, i[1] as isize, i[2] as isize];
        let mut rem = s;
        for jk in j.iter_mut().take(d) {
            *jk += (rem % 3) as isize - 1;
            rem /= 3;
        }
        let v = u.at(j);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Keeps an explicit update within the range of its stencil, so no new extrema appear.
fn limited<T: Real>(u: &GridField<T>, i: [usize; 3], next: T) -> T {
    let (lo, hi) = neighborhood_range(u, i);
    next.max(lo).min(hi)
}

/// Central-difference gradient and Hessian at cell `i`.
fn central<T: Real>(u: &GridField<T>, i: [usize; 3]) -> (Point<T>, Mat<T>) {
    let d = u.dim();
    let g = u.grid();
    let c = u.at([i[0] as isize, i[1] as isize, i[2] as isize]);
    let mut grad = [T::zero(); 3];
    let mut hess = [[T::zero(); 3]; 3];
    for a in 0..d {
        let ha = g.spacing(a);
        let (p, m) = (neighbor(u, i, a, 1), neighbor(u, i, a, -1));
        grad[a] = (p - m) / (ha + ha);
        hess[a][a] = (p - c - c + m) / (ha * ha);
        for b in a + 1..d {
            let hb = g.spacing(b);
            let at = |sa: isize, sb: isize| {
                let mut j = [i[0] as isize, i[1] as isize, i[2] as isize];
                j[a] += sa;
                j[b] += sb;
                u.at(j)
            };
            let v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (lit::<T>(4.0) * ha * hb);
            hess[a][b] = v;
            hess[b][a] = v;
        }
    }
    (grad, hess)
}

/// One explicit step of `phi_t = tr(M_K(grad phi / |grad phi|) hess phi)`, i.e. `phi_t + |grad phi| H_0 = 0`.
pub fn step_local<T: Real>(state: &FlowState<T>, aniso: &Anisotropy<T>) -> Result<FlowState<T>> {
    local_step(state, aniso, state.dt)
}

fn local_step<T: Real>(state: &FlowState<T>, aniso: &Anisotropy<T>, dt: T) -> Result<FlowState<T>> {
    let u = &state.field;
    if u.dim() != aniso.kernel().dim() {
        return Err(Error::Invalid("field and kernel dimensions differ".into()));
    }
    check_dt(state, aniso)?;
    let mobility = Mobility::new(aniso)?;
    let grid = u.grid();
    let d = grid.dim();
    let values: Vec<Result<T>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let i = grid.multi_index(idx);
            let v = u.values()[idx];
            let (g, h) = central(u, i);
            let n = norm(&g);
            if !(n >= state.floor) || n == T::zero() {
                return Ok(v);
            }
            let e = crate::vector::scale(&g, T::one() / n);
            let m = mobility.matrix(&e, d)?;
            Ok(limited(u, i, v + dt * trace_product(&m, &h)))
        })
        .collect();
    state.advance(values.into_iter().collect::<Result<_>>()?, dt)
}

/// Quadrature settings for the nonlocal curvature of each cell's superlevel set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlocalOptions {
    /// Angular samples on the half circle before the jumps are located.
    pub angular: usize,
    /// Gauss-Legendre points per radial panel.
    pub radial_order: usize,
    /// Radial panel length in cells.
    pub panel_cells: f64,
    /// Halvings of the sample spacing toward the tangent direction.
    pub refinements: usize,
    /// Cap on root-finding iterations per angular jump.
    pub root_iterations: usize,
}

impl Default for NonlocalOptions {
    fn default() -> Self {
        Self { angular: 32, radial_order: 4, panel_cells: 4.0, refinements: 6, root_iterations: 40 }
    }
}

/// `(r, w)` with `w` including the rescaled kernel profile and the polar Jacobian.
fn ring_rule<T: Real>(kernel: &Kernel<T>, eps: T, h: T, opts: &NonlocalOptions) -> Result<Vec<(T, T)>> {
    let reach = eps * kernel.tail().radius();
    if reach < h {
        return Err(Error::Resolution(format!("rescaled kernel reach {:.3e} is below the grid spacing", to_f64(reach))));
    }
    let singular = kernel.is_singular();
    if singular && eps < lit::<T>(4.0) * h {
        return Err(Error::Resolution("singular kernels need eps of at least four cells".into()));
    }
    let r_min = if singular { h * lit(0.5) } else { T::zero() };
    let mut cuts: Vec<T> = kernel.breakpoints().iter().map(|&b| b * eps).filter(|&b| b > r_min && b < reach).collect();
    let panel = h * lit(opts.panel_cells.max(0.25));
    let count = ((reach - r_min) / panel).ceil().to_usize().unwrap_or(1).max(1);
    cuts.extend((0..=count).map(|i| r_min + (reach - r_min) * from_usize::<T>(i) / from_usize::<T>(count)));
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() <= T::epsilon() * reach);
    let gl = GaussLegendre::<T>::new(opts.radial_order.max(1));
    let scale = T::one() / (eps * eps);
    let mut rings = Vec::new();
    for w in cuts.windows(2) {
        for (r, wr) in gl.on(w[0], w[1]) {
            rings.push((r, wr * r * scale * kernel.radial_value(r / eps)));
        }
    }
    Ok(rings)
}

/// `int_0^pi [c(x + r u) + c(x - r u)] dtheta` with `c = 1` below the level `phi(x)` and `-1` on or above it.
/// Values within `tol` of the level count as on it; each sample bracket holds at most one located jump.
/// Values within `tol` of the level count as on it.
///
/// `base` holds `(theta, cos, sin)` on a uniform grid of `[0, pi]`; jumps are located by Illinois iterations.
#[allow(clippy::too_many_arguments)]
fn pair_measure<T: Real>(
    u: &CubicSpline<T>,
    x: &Point<T>,
    level: T,
    tol: T,
    r: T,
    tangent: T,
    base: &[(T, T, T)],
    opts: &NonlocalOptions,
) -> T {
    let gap = |c: T, s: T, sign: T| -> T {
        let p = [x[0] + sign * r * c, x[1] + sign * r * s, T::zero()];
        u.value(&p) - level + tol
    };
    let class = |g: T| -> i8 {
        if g < T::zero() {
            1
        } else {
            -1
        }
    };
    let step = T::PI() / from_usize::<T>(base.len() - 1);
    let mut samples: Vec<(T, T, T)> = base.to_vec();
    // Jumps cluster at the tangent direction for small rings.
    let mut t = tangent % T::PI();
    if t < T::zero() {
        t = t + T::PI();
    }
    let mut d = step;
    for _ in 0..opts.refinements {
        d = d * lit(0.5);
        for mut a in [t - d, t + d] {
            // Each sample covers `a` and `a + pi`, so refinement wraps modulo pi.
            if a < T::zero() {
                a = a + T::PI();
            } else if a > T::PI() {
                a = a - T::PI();
            }
            if a > T::zero() && a < T::PI() {
                samples.push((a, a.cos(), a.sin()));
            }
        }
    }
    if t > T::zero() && t < T::PI() {
        samples.push((t, t.cos(), t.sin()));
    }
    samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    samples.dedup_by(|a, b| a.0 == b.0);
    let vals: Vec<[T; 2]> = samples.iter().map(|&(_, c, s)| [gap(c, s, T::one()), gap(c, s, -T::one())]).collect();
    let mut parts = Vec::with_capacity(2 * samples.len());
    for i in 1..samples.len() {
        for k in 0..2 {
            let (mut a, mut b) = (samples[i - 1].0, samples[i].0);
            let (ga, gb) = (vals[i - 1][k], vals[i][k]);
            let (ca, cb) = (class(ga), class(gb));
            if ca == cb {
                parts.push(T::from(ca).unwrap() * (b - a));
                continue;
            }
            let (lo, hi) = (a, b);
            let sign = if k == 0 { T::one() } else { -T::one() };
            let (mut fa, mut fb) = (ga, gb);
            let mut last = 0i8;
            for _ in 0..opts.root_iterations {
                if !(b - a > lit::<T>(1e-12)) {
                    break;
                }
                let mut m = (a * fb - b * fa) / (fb - fa);
                if !(m > a && m < b) {
                    m = (a + b) * lit(0.5);
                }
                let fm = gap(m.cos(), m.sin(), sign);
                if class(fm) == ca {
                    a = m;
                    fa = fm;
                    if last == -1 {
                        fb = fb * lit(0.5);
                    }
                    last = -1;
                } else {
                    b = m;
                    fb = fm;
                    if last == 1 {
                        fa = fa * lit(0.5);
                    }
                    last = 1;
                }
            }
            let cut = (a + b) * lit(0.5);
            parts.push(T::from(ca).unwrap() * (cut - lo) + T::from(cb).unwrap() * (hi - cut));
        }
    }
    pairwise_sum(&parts)
}

/// `H_{K_eps}({phi >= phi(x)}, x)` at a cell center, on the cubic spline of `phi`.
#[allow(clippy::too_many_arguments)]
fn cell_curvature<T: Real>(
    u: &CubicSpline<T>,
    x: &Point<T>,
    level: T,
    tol: T,
    tangent: T,
    rings: &[(T, T)],
    base: &[(T, T, T)],
    opts: &NonlocalOptions,
) -> T {
    let parts: Vec<T> = rings.iter().map(|&(r, w)| w * pair_measure(u, x, level, tol, r, tangent, base, opts)).collect();
    pairwise_sum(&parts)
}

fn minmod<T: Real>(a: T, b: T) -> T {
    if a * b <= T::zero() {
        T::zero()
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Osher-Sethian upwind `|grad phi|` for the motion `phi_t + F |grad phi| = 0`, with second-order ENO differences.
fn upwind_norm<T: Real>(u: &GridField<T>, i: [usize; 3], speed: T) -> T {
    let d = u.dim();
    let c = u.at([i[0] as isize, i[1] as isize, i[2] as isize]);
    let mut s = T::zero();
    for k in 0..d {
        let h = u.grid().spacing(k);
        let v = |o: isize| neighbor(u, i, k, o);
        let (m2, m1, p1, p2) = (v(-2), v(-1), v(1), v(2));
        let curv = |a: T, b: T, c: T| a - b - b + c;
        let centre = curv(m1, c, p1);
        let back = (c - m1 + minmod(curv(m2, m1, c), centre) * lit(0.5)) / h;
        let fwd = (p1 - c - minmod(centre, curv(c, p1, p2)) * lit(0.5)) / h;
        let (a, b) = if speed > T::zero() {
            (back.max(T::zero()), fwd.min(T::zero()))
        } else {
            (back.min(T::zero()), fwd.max(T::zero()))
        };
        s = s + a * a + b * b;
    }
    s.sqrt()
}

/// One explicit step of `phi_t + (|grad phi| / eps) H_{K_eps}({phi >= phi(x)}, x) = 0` for a radial planar kernel.
pub fn step_nonlocal<T: Real>(
    state: &FlowState<T>,
    kernel: &Kernel<T>,
    eps: T,
    aniso: &Anisotropy<T>,
    opts: &NonlocalOptions,
) -> Result<FlowState<T>> {
    nonlocal_step(state, kernel, eps, aniso, opts, state.dt)
}

fn nonlocal_step<T: Real>(
    state: &FlowState<T>,
    kernel: &Kernel<T>,
    eps: T,
    aniso: &Anisotropy<T>,
    opts: &NonlocalOptions,
    dt: T,
) -> Result<FlowState<T>> {
    let u = &state.field;
    if u.dim() != 2 || kernel.dim() != 2 {
        return Err(Error::Unsupported("nonlocal flow is planar".into()));
    }
    if !kernel.is_radial() {
        return Err(Error::Unsupported("nonlocal flow needs a radial kernel".into()));
    }
    if !(eps > T::zero()) {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    check_dt(state, aniso)?;
    let grid = u.grid();
    let rings = ring_rule(kernel, eps, grid.min_spacing(), opts)?;
    let n = opts.angular.max(4);
    let base: Vec<(T, T, T)> = (0..=n)
        .map(|i| {
            let a = T::PI() * from_usize::<T>(i) / from_usize::<T>(n);
            (a, a.cos(), a.sin())
        })
        .collect();
    let spline = CubicSpline::new(u);
    let tol = state.floor * lit(1e-4);
    let values: Vec<T> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let i = grid.multi_index(idx);
            let v = u.values()[idx];
            let (g, _) = central(u, i);
            if !(norm(&g) >= state.floor) || norm(&g) == T::zero() {
                return v;
            }
            let x = grid.center_of(idx);
            let tangent = g[0].atan2(-g[1]);
            let speed = cell_curvature(&spline, &x, v, tol, tangent, &rings, &base, opts) / eps;
            limited(u, i, v - dt * speed * upwind_norm(u, i, speed))
        })
        .collect();
    state.advance(values, dt)
}

/// Which equation a run integrates.
#[derive(Clone, Debug)]
pub enum Scheme<'a, T: Real> {
    Local,
    Nonlocal { kernel: &'a Kernel<T>, eps: T, options: NonlocalOptions },
}

/// Time step, final time and snapshot cadence.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolveParams<T> {
    pub dt: T,
    pub t_end: T,
    /// Steps between snapshots; the final state is always kept.
    pub snapshot_every: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    pub time: T,
    pub field: GridField<T>,
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMonitor {
    pub time: f64,
    pub zero_level_area: f64,
    pub max_lipschitz: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub snapshots: Vec<Snapshot<T>>,
    pub steps: Vec<StepMonitor>,
}

/// Runs a scheme from `u0` to `t_end`, aborting when `max |phi|` grows tenfold.
pub fn evolve<T: Real>(u0: &GridField<T>, aniso: &Anisotropy<T>, scheme: &Scheme<'_, T>, params: &EvolveParams<T>) -> Result<Trajectory<T>> {
    if !(params.t_end >= T::zero()) {
        return Err(Error::Invalid("final time must be nonnegative".into()));
    }
    let mut state = FlowState::new(u0.clone(), params.dt)?;
    let cap = u0.values().iter().fold(u0.extension().abs(), |m, v| m.max(v.abs())) * lit(10.0);
    let monitor = |s: &FlowState<T>| StepMonitor {
        time: to_f64(s.time),
        zero_level_area: to_f64(zero_level_area(&s.field)),
        max_lipschitz: to_f64(lipschitz(&s.field)),
    };
    let mut snapshots = vec![Snapshot { time: state.time, field: state.field.clone() }];
    let mut steps = vec![monitor(&state)];
    let every = params.snapshot_every.max(1);
    let mut count = 0usize;
    while state.time < params.t_end {
        let dt = params.dt.min(params.t_end - state.time);
        if !(dt > params.t_end * lit(1e-12)) {
            break;
        }
        state = match scheme {
            Scheme::Local => local_step(&state, aniso, dt)?,
            Scheme::Nonlocal { kernel, eps, options } => nonlocal_step(&state, kernel, *eps, aniso, options, dt)?,
        };
        count += 1;
        let peak = state.field.values().iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if !(peak <= cap) {
            return Err(Error::Divergent(format!("max |phi| reached {:.3e} at t = {:.4e}", to_f64(peak), to_f64(state.time))));
        }
        steps.push(monitor(&state));
        if count.is_multiple_of(every) || state.time >= params.t_end {
            snapshots.push(Snapshot { time: state.time, field: state.field.clone() });
        }
    }
    if snapshots.last().map(|s| s.time) != Some(state.time) {
        snapshots.push(Snapshot { time: state.time, field: state.field.clone() });
    }
    Ok(Trajectory { snapshots, steps })
}

/// Measure of `{phi >= 0}`, with cells crossed by the zero level subsampled on the multilinear interpolant.
pub fn zero_level_area<T: Real>(u: &GridField<T>) -> T {
    let grid = u.grid();
    let d = grid.dim();
    let sub = 8usize;
    let parts: Vec<T> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let i = grid.multi_index(idx);
            let v = u.values()[idx];
            let mut mixed = false;
            for k in 0..d {
                for s in [-1, 1] {
                    if (neighbor(u, i, k, s) >= T::zero()) != (v >= T::zero()) {
                        mixed = true;
                    }
                }
            }
            if !mixed {
                return if v >= T::zero() { T::one() } else { T::zero() };
            }
            let c = grid.center_of(idx);
            let total = sub.pow(d as u32);
            let mut inside = 0usize;
            for s in 0..total {
                let mut x = c;
                let mut rem = s;
                for k in 0..d {
                    let j = rem % sub;
                    rem /= sub;
                    let off = (from_usize::<T>(j) + lit(0.5)) / from_usize::<T>(sub) - lit(0.5);
                    x[k] = x[k] + off * grid.spacing(k);
                }
                if u.sample(&x, Interpolation::Multilinear) >= T::zero() {
                    inside += 1;
                }
            }
            from_usize::<T>(inside) / from_usize::<T>(total)
        })
        .collect();
    pairwise_sum(&parts) * grid.cell_volume()
}

/// Largest difference quotient over axis and planar diagonal neighbors.
pub fn lipschitz<T: Real>(u: &GridField<T>) -> T {
    let grid = u.grid();
    let d = grid.dim();
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let i = grid.multi_index(idx);
            let at = |o: [isize; 3]| u.at([i[0] as isize + o[0], i[1] as isize + o[1], i[2] as isize + o[2]]);
            let v = at([0, 0, 0]);
            let mut best = T::zero();
            let mut offsets: Vec<[isize; 3]> = Vec::new();
            for a in 0..d {
                let mut o = [0; 3];
                o[a] = 1;
                offsets.push(o);
                for b in a + 1..d {
                    for s in [-1, 1] {
                        let mut o = [0; 3];
                        o[a] = 1;
                        o[b] = s;
                        offsets.push(o);
                    }
                }
            }
            for o in offsets {
                let mut len2 = T::zero();
                for k in 0..d {
                    let step = grid.spacing(k) * T::from(o[k]).unwrap();
                    len2 = len2 + step * step;
                }
                best = best.max((at(o) - v).abs() / len2.sqrt());
            }
            best
        })
        .reduce(T::zero, |a, b| a.max(b))
}

/// One row of the trajectory report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitorRow {
    pub time: f64,
    pub zero_level_area: f64,
    pub max_lipschitz: f64,
    /// `max |u(t) - u(0)| / sqrt(t)`.
    pub holder_stat: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonitorReport {
    pub rows: Vec<MonitorRow>,
    /// Lipschitz constant of the initial field.
    pub initial_lipschitz: f64,
    /// `max |u(t) - u(s)| / sqrt(|t - s|)` over snapshot pairs.
    pub holder_constant: f64,
}

impl MonitorReport {
    /// Whether every snapshot stays within `1 + slack` of the initial Lipschitz constant.
    pub fn lipschitz_within(&self, slack: f64) -> bool {
        self.rows.iter().all(|r| r.max_lipschitz <= self.initial_lipschitz * (1.0 + slack) + 1e-12)
    }
}

fn sup_distance<T: Real>(a: &GridField<T>, b: &GridField<T>) -> T {
    a.values().iter().zip(b.values()).fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()))
}

/// Lipschitz and time-Hölder diagnostics over the snapshots.
pub fn monitors<T: Real>(trajectory: &Trajectory<T>) -> MonitorReport {
    let snaps = &trajectory.snapshots;
    let Some(first) = snaps.first() else {
        return MonitorReport { rows: Vec::new(), initial_lipschitz: 0.0, holder_constant: 0.0 };
    };
    let rows = snaps
        .iter()
        .map(|s| {
            let dt = to_f64(s.time - first.time);
            MonitorRow {
                time: to_f64(s.time),
                zero_level_area: to_f64(zero_level_area(&s.field)),
                max_lipschitz: to_f64(lipschitz(&s.field)),
                holder_stat: if dt > 0.0 { to_f64(sup_distance(&s.field, &first.field)) / dt.sqrt() } else { 0.0 },
            }
        })
        .collect();
    let mut holder = 0.0f64;
    for (i, a) in snaps.iter().enumerate() {
        for b in &snaps[i + 1..] {
            let dt = to_f64(b.time - a.time);
            if dt > 0.0 {
                holder = holder.max(to_f64(sup_distance(&a.field, &b.field)) / dt.sqrt());
            }
        }
    }
    MonitorReport { rows, initial_lipschitz: to_f64(lipschitz(&first.field)), holder_constant: holder }
}

/// Radius of the disk with the same area as `{phi >= 0}`.
pub fn equivalent_radius<T: Real>(u: &GridField<T>) -> T {
    (zero_level_area(u) / T::PI()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::ZRuleParams;

    fn disk(n: usize, radius: f64) -> GridField<f64> {
        let grid = GridBox::centered(2, 1.0, n).unwrap();
        GridField::from_fn(grid, Tag::LevelSet, move |x: &[f64; 3]| (radius - x[0].hypot(x[1])).clamp(-0.3, 0.45))
            .unwrap()
            .with_extension(-0.3)
            .unwrap()
    }

    fn ellipse(n: usize) -> GridField<f64> {
        let grid = GridBox::centered(2, 1.0, n).unwrap();
        GridField::from_fn(grid, Tag::LevelSet, |x: &[f64; 3]| (0.45 - (x[0] - 0.1).hypot(1.4 * (x[1] + 0.05))).clamp(-0.3, 0.4))
            .unwrap()
            .with_extension(-0.3)
            .unwrap()
    }

    fn ball_flow(radius: f64) -> (Kernel<f64>, Anisotropy<f64>) {
        let k = Kernel::ball(2, radius).unwrap();
        let a = Anisotropy::new(k.clone(), ZRuleParams::default()).unwrap();
        (k, a)
    }

    fn radius_of(area: f64) -> f64 {
        (area / std::f64::consts::PI).sqrt()
    }

    fn nonlocal(kernel: &Kernel<f64>, eps: f64) -> Scheme<'_, f64> {
        Scheme::Nonlocal { kernel, eps, options: NonlocalOptions::default() }
    }

    #[test]
    fn halfspace_is_stationary() {
        let (k, a) = ball_flow(1.0);
        let grid = GridBox::centered(2, 1.0, 64).unwrap();
        let u = GridField::from_fn(grid, Tag::LevelSet, |x: &[f64; 3]| (0.7 * x[0] + 0.2 * x[1]).clamp(-0.6, 0.6)).unwrap();
        let dt = stability_limit(u.grid(), &a).unwrap();
        let state = FlowState { field: u.clone(), time: 0.0, dt, floor: 1e-6 };
        let local = step_local(&state, &a).unwrap();
        let far = step_nonlocal(&state, &k, 0.1, &a, &NonlocalOptions::default()).unwrap();
        for idx in 0..u.grid().len() {
            let x = u.grid().center_of(idx);
            if x[0].abs() < 0.25 && x[1].abs() < 0.5 {
                assert!((local.field.values()[idx] - u.values()[idx]).abs() < 1e-12);
                assert!((far.field.values()[idx] - u.values()[idx]).abs() < 1e-6, "{x:?}");
            }
        }
    }

    #[test]
    fn local_circle_follows_the_radius_law() {
        let (_, a) = ball_flow(0.25);
        let kappa = 1.0 / 96.0;
        let u = disk(64, 0.5);
        let dt = stability_limit(u.grid(), &a).unwrap();
        let t_end = 0.91 * 0.25 / (2.0 * kappa);
        let traj = evolve(&u, &a, &Scheme::Local, &EvolveParams { dt, t_end, snapshot_every: 50 }).unwrap();
        // Explicit Euler integration of R' = -kappa / R on a step much finer than the flow's.
        let mut r = 0.5f64;
        let mut t = 0.0f64;
        let fine = dt / 50.0;
        let mut final_checked = false;
        for s in &traj.steps {
            while t < s.time - 1e-15 {
                let h = fine.min(s.time - t);
                r -= h * kappa / r;
                t += h;
            }
            let err = (radius_of(s.zero_level_area) - r).abs() / r;
            assert!(err < 0.02, "t = {} err = {err}", s.time);
            if !final_checked && s.time >= 0.8 * 0.25 / (2.0 * kappa) {
                assert!(err < 0.03);
                final_checked = true;
            }
        }
        assert!(final_checked);
        assert!(r < 0.3 * 0.5 + 1e-3);
        let report = monitors(&traj);
        assert!(report.lipschitz_within(0.05));
    }

    #[test]
    fn nested_circles_stay_ordered() {
        let (k, a) = ball_flow(1.0);
        let (inner, outer) = (disk(64, 0.3), disk(64, 0.5));
        let dt = stability_limit(inner.grid(), &a).unwrap();
        let schemes = [(Scheme::Local, 0.08), (nonlocal(&k, 0.1), 8.0 * dt)];
        for (scheme, t_end) in &schemes {
            let p = EvolveParams { dt, t_end: *t_end, snapshot_every: 1 };
            let a_traj = evolve(&inner, &a, scheme, &p).unwrap();
            let b_traj = evolve(&outer, &a, scheme, &p).unwrap();
            for (s, t) in a_traj.snapshots.iter().zip(&b_traj.snapshots) {
                for (x, y) in s.field.values().iter().zip(t.field.values()) {
                    assert!(*x <= *y + 1e-9);
                }
            }
        }
    }

    #[test]
    fn nonlocal_convex_area_decreases() {
        let (k, a) = ball_flow(1.0);
        let u = disk(64, 0.5);
        let dt = stability_limit(u.grid(), &a).unwrap();
        let traj = evolve(&u, &a, &nonlocal(&k, 0.1), &EvolveParams { dt, t_end: 20.0 * dt, snapshot_every: 10 }).unwrap();
        for w in traj.steps.windows(2) {
            assert!(w[1].zero_level_area <= w[0].zero_level_area);
        }
        assert!(traj.steps.last().unwrap().zero_level_area < traj.steps[0].zero_level_area);
        assert!(monitors(&traj).lipschitz_within(0.05));
    }

    #[test]
    fn trivial_trajectories() {
        let (k, a) = ball_flow(1.0);
        let u = disk(32, 0.5);
        let dt = stability_limit(u.grid(), &a).unwrap();
        let traj = evolve(&u, &a, &Scheme::Local, &EvolveParams { dt, t_end: 0.0, snapshot_every: 1 }).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.snapshots[0].field, u);
        let flat = GridField::from_fn(u.grid().clone(), Tag::LevelSet, |_: &[f64; 3]| 0.25).unwrap().with_extension(0.25).unwrap();
        for scheme in [Scheme::Local, nonlocal(&k, 0.2)] {
            let traj = evolve(&flat, &a, &scheme, &EvolveParams { dt, t_end: 5.0 * dt, snapshot_every: 1 }).unwrap();
            assert_eq!(traj.snapshots.len(), 6);
            for s in &traj.snapshots {
                assert_eq!(s.field.values(), flat.values());
            }
            assert!(monitors(&traj).rows.iter().all(|r| r.max_lipschitz == 0.0 && r.holder_stat == 0.0));
        }
    }

    #[test]
    fn rejects_unstable_steps_and_bad_data() {
        let (k, a) = ball_flow(1.0);
        let u = disk(32, 0.5);
        let dt = stability_limit(u.grid(), &a).unwrap();
        let state = FlowState::new(u.clone(), 1.5 * dt).unwrap();
        assert!(matches!(step_local(&state, &a), Err(Error::Invalid(_))));
        assert!(matches!(step_nonlocal(&state, &k, 0.2, &a, &NonlocalOptions::default()), Err(Error::Invalid(_))));
        assert!(FlowState::new(u.clone(), 0.0).is_err());
        let edge = GridField::from_fn(u.grid().clone(), Tag::LevelSet, |x: &[f64; 3]| x[0]).unwrap();
        assert!(matches!(FlowState::new(edge, dt), Err(Error::Constraint(_))));
        let state = FlowState::new(u, dt).unwrap();
        assert!(matches!(step_nonlocal(&state, &k, 0.01, &a, &NonlocalOptions::default()), Err(Error::Resolution(_))));
    }

    #[test]
    fn cone_keeps_its_lipschitz_constant() {
        let (k, a) = ball_flow(1.0);
        let grid = GridBox::centered(2, 1.5, 64).unwrap();
        let u = GridField::from_fn(grid, Tag::LevelSet, |x: &[f64; 3]| (1.0 - x[0].hypot(x[1])).clamp(0.0, 1.0)).unwrap();
        let dt = stability_limit(u.grid(), &a).unwrap();
        let local = evolve(&u, &a, &Scheme::Local, &EvolveParams { dt, t_end: 0.1, snapshot_every: 20 }).unwrap();
        let report = monitors(&local);
        assert!((report.initial_lipschitz - 1.0).abs() < 0.02);
        assert!(report.lipschitz_within(0.05));
        let far = evolve(&u, &a, &nonlocal(&k, 0.2), &EvolveParams { dt, t_end: 10.0 * dt, snapshot_every: 5 }).unwrap();
        assert!(monitors(&far).lipschitz_within(0.05));
    }

    #[test]
    fn doubling_the_labels_keeps_the_zero_superlevel_set() {
        let (k, a) = ball_flow(1.0);
        let u = ellipse(64);
        let twice = u.map(Tag::LevelSet, |v| 2.0 * v).unwrap();
        let dt = stability_limit(u.grid(), &a).unwrap();
        let p = EvolveParams { dt, t_end: 10.0 * dt, snapshot_every: 1 };
        let one = evolve(&u, &a, &nonlocal(&k, 0.1), &p).unwrap();
        let two = evolve(&twice, &a, &nonlocal(&k, 0.1), &p).unwrap();
        for (s, t) in one.snapshots.iter().zip(&two.snapshots) {
            for (x, y) in s.field.values().iter().zip(t.field.values()) {
                assert_eq!(*x >= 0.0, *y >= 0.0);
            }
        }
    }

    #[test]
    fn quarter_turn_commutes_with_both_schemes() {
        let (k, a) = ball_flow(1.0);
        let n = 48;
        let u = ellipse(n);
        let turned = GridField::new(
            u.grid().clone(),
            (0..n * n).map(|idx| u.values()[(n - 1 - idx / n) + n * (idx % n)]).collect(),
            Tag::LevelSet,
            u.extension(),
        )
        .unwrap();
        let dt = stability_limit(u.grid(), &a).unwrap();
        let p = EvolveParams { dt, t_end: 6.0 * dt, snapshot_every: 6 };
        for scheme in [Scheme::Local, nonlocal(&k, 0.15)] {
            let base = evolve(&u, &a, &scheme, &p).unwrap();
            let rot = evolve(&turned, &a, &scheme, &p).unwrap();
            let (b, r) = (&base.snapshots.last().unwrap().field, &rot.snapshots.last().unwrap().field);
            for idx in 0..n * n {
                let src = (n - 1 - idx / n) + n * (idx % n);
                assert!((r.values()[idx] - b.values()[src]).abs() < 1e-8);
            }
        }
    }
}
