//! Rate functionals `E_eps = (F_0 - F_eps) / eps^2` of BBM-type energies, in one and several dimensions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{slice, CubicSpline, GridBox, GridField, Interpolation, Tag};
use crate::kernel::{Kernel, ZRuleParams};
use crate::quadrature::{sphere_rule, GaussLegendre, RadialRule};
use crate::scalar::{from_usize, lit, pairwise_sum, to_f64, Extended, Real};
use crate::vector::{axpy, dot, Point};

/// Convex `f` on `[0, inf)` with `f(0) = f'(0) = 0`, evaluated at `|t|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    /// `t^2`.
    Quadratic,
    /// `t^2 + quartic t^4`.
    QuadPlusQuartic { quartic: f64 },
    /// `2 width^2 log cosh(t / width)`, with `f'' <= 2` and no positive lower bound on `f''`.
    LogCosh { width: f64 },
}

impl Potential {
    pub fn f<T: Real>(&self, t: T) -> T {
        let t = t.abs();
        match *self {
            Potential::Quadratic => t * t,
            Potential::QuadPlusQuartic { quartic } => t * t + lit::<T>(quartic) * t * t * t * t,
            Potential::LogCosh { width } => {
                let w = lit::<T>(width);
                let s = t / w;
                // log cosh s = s + log(1 + e^{-2s}) - log 2, stable for large s.
                lit::<T>(2.0) * w * w * (s + (-(s + s)).exp().ln_1p() - T::LN_2())
            }
        }
    }

    pub fn df<T: Real>(&self, t: T) -> T {
        let sign = if t < T::zero() { -T::one() } else { T::one() };
        let t = t.abs();
        sign * match *self {
            Potential::Quadratic => t + t,
            Potential::QuadPlusQuartic { quartic } => t + t + lit::<T>(4.0 * quartic) * t * t * t,
            Potential::LogCosh { width } => {
                let w = lit::<T>(width);
                lit::<T>(2.0) * w * (t / w).tanh()
            }
        }
    }

    pub fn d2f<T: Real>(&self, t: T) -> T {
        let t = t.abs();
        match *self {
            Potential::Quadratic => lit(2.0),
            Potential::QuadPlusQuartic { quartic } => lit::<T>(2.0) + lit::<T>(12.0 * quartic) * t * t,
            Potential::LogCosh { width } => {
                let c = (t / lit::<T>(width)).cosh();
                lit::<T>(2.0) / (c * c)
            }
        }
    }

    /// `f(t) - f(t - delta)`, accurate when `delta` is small against `t`.
    pub fn drop<T: Real>(&self, t: T, delta: T) -> T {
        let s = t - delta;
        match *self {
            Potential::Quadratic => delta * (t + s),
            Potential::QuadPlusQuartic { quartic } => delta * (t + s) * (T::one() + lit::<T>(quartic) * (t * t + s * s)),
            Potential::LogCosh { width } => {
                let w = lit::<T>(width);
                let half = delta / (w + w);
                let ratio = lit::<T>(2.0) * half.sinh() * half.sinh() + (s / w).tanh() * (delta / w).sinh();
                lit::<T>(2.0) * w * w * ratio.ln_1p()
            }
        }
    }

    /// Largest `alpha` with `f'' >= alpha`.
    pub fn alpha(&self) -> f64 {
        match *self {
            Potential::Quadratic | Potential::QuadPlusQuartic { .. } => 2.0,
            Potential::LogCosh { .. } => 0.0,
        }
    }

    /// `sup f''`, when finite.
    pub fn upper(&self) -> Option<f64> {
        match *self {
            Potential::Quadratic | Potential::LogCosh { .. } => Some(2.0),
            Potential::QuadPlusQuartic { quartic: 0.0 } => Some(2.0),
            Potential::QuadPlusQuartic { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Potential::QuadPlusQuartic { quartic } if !(quartic >= 0.0) => Err(Error::Invalid("quartic coefficient must be nonnegative".into())),
            Potential::LogCosh { width } if !(width > 0.0) => Err(Error::Invalid("log-cosh width must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// Samples of `u` on a uniform grid of `[a, b]`, linearly interpolated and zero outside.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile1D<T> {
    a: T,
    b: T,
    values: Vec<T>,
    /// `int_a^{x_i} u`.
    prefix: Vec<T>,
}

impl<T: Real> Profile1D<T> {
    pub fn new(a: T, b: T, values: Vec<T>) -> Result<Self> {
        if !(b > a) || values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("profile needs a < b, two samples and finite values".into()));
        }
        let h = (b - a) / from_usize::<T>(values.len() - 1);
        let mut prefix = vec![T::zero(); values.len()];
        for i in 1..values.len() {
            prefix[i] = prefix[i - 1] + (values[i - 1] + values[i]) * h * lit(0.5);
        }
        Ok(Self { a, b, values, prefix })
    }

    /// `cells` uniform cells over `[a, b]`.
    pub fn from_fn(a: T, b: T, cells: usize, f: impl Fn(T) -> T) -> Result<Self> {
        let n = cells.max(1);
        let h = (b - a) / from_usize::<T>(n);
        Self::new(a, b, (0..=n).map(|i| f(a + h * from_usize::<T>(i))).collect())
    }

    pub fn interval(&self) -> (T, T) {
        (self.a, self.b)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn spacing(&self) -> T {
        (self.b - self.a) / from_usize::<T>(self.values.len() - 1)
    }

    fn node(&self, i: usize) -> T {
        self.a + self.spacing() * from_usize::<T>(i)
    }

    /// Cell index and offset for `x` in `[a, b]`.
    fn locate(&self, x: T) -> (usize, T) {
        let h = self.spacing();
        let n = self.values.len() - 1;
        let s = ((x - self.a) / h).floor().to_usize().unwrap_or(0).min(n - 1);
        (s, x - self.node(s))
    }

    pub fn eval(&self, x: T) -> T {
        if x < self.a || x > self.b {
            return T::zero();
        }
        let (i, t) = self.locate(x);
        let h = self.spacing();
        self.values[i] + (self.values[i + 1] - self.values[i]) * t / h
    }

    /// Antiderivative `U(x) = int_{-inf}^x u`.
    pub fn primitive(&self, x: T) -> T {
        if x <= self.a {
            return T::zero();
        }
        if x >= self.b {
            return *self.prefix.last().unwrap();
        }
        let (i, t) = self.locate(x);
        let h = self.spacing();
        let slope = (self.values[i + 1] - self.values[i]) / h;
        self.prefix[i] + self.values[i] * t + slope * t * t * lit(0.5)
    }

    /// Breakpoints of the interpolant: the nodes, plus `a` and `b` where `u` may jump.
    /// `u(x) - D_eps U(x)`, integrated piece by piece to avoid cancellation.
    fn deviation_from_average(&self, x: T, eps: T) -> T {
        let ux = self.eval(x);
        let end = x + eps;
        let mut p = x;
        let mut acc = T::zero();
        while p < end {
            let next = if p < self.a {
                self.a
            } else if p >= self.b {
                end
            } else {
                let (i, _) = self.locate(p);
                let n = self.values.len() - 1;
                if self.node(i + 1) > p || i + 1 == n {
                    self.node(i + 1)
                } else {
                    self.node(i + 2)
                }
            };
            let q = if next > p { next.min(end) } else { end };
            acc = acc + (q - p) * (ux - (self.eval(p) + self.eval(q)) * lit(0.5));
            p = q;
        }
        acc / eps
    }

    fn breaks(&self) -> Vec<T> {
        (0..self.values.len()).map(|i| self.node(i)).collect()
    }

    /// Sum of `int f(u')^2` style cell quantities: slopes per cell.
    fn slopes(&self) -> Vec<T> {
        let h = self.spacing();
        self.values.windows(2).map(|w| (w[1] - w[0]) / h).collect()
    }
}

/// `D_eps U(x) = eps^{-1} int_x^{x + eps} u`.
pub fn averaged_slope<T: Real>(u: &Profile1D<T>, x: T, eps: T) -> Result<T> {
    if !(eps > T::zero()) {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    Ok((u.primitive(x + eps) - u.primitive(x)) / eps)
}

/// Integrates `g` over `[lo, hi]` with 3-point Gauss on every piece between the sorted `cuts`.
fn piecewise<T: Real>(lo: T, hi: T, mut cuts: Vec<T>, g: impl Fn(T) -> T) -> T {
    let gl = GaussLegendre::<T>::new(3);
    cuts.retain(|&c| c > lo && c < hi);
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let parts: Vec<T> = cuts.windows(2).map(|w| gl.integrate(w[0], w[1], &g)).collect();
    pairwise_sum(&parts)
}

fn check_resolution<T: Real>(u: &Profile1D<T>, eps: T) -> Result<()> {
    if !(eps > T::zero()) {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    if u.spacing() > eps / lit(8.0) * (T::one() + lit(1e-12)) {
        return Err(Error::Resolution(format!(
            "sample spacing {:.3e} exceeds eps/8 = {:.3e}",
            to_f64(u.spacing()),
            to_f64(eps) / 8.0
        )));
    }
    Ok(())
}

/// `E_eps(u) = eps^{-2} int [f(u) - f(D_eps U)]`.
///
/// Pieces break at the nodes and at the nodes shifted by `-eps`, so the integrand is smooth on each.
pub fn e1d<T: Real>(u: &Profile1D<T>, f: &Potential, eps: T) -> Result<T> {
    check_resolution(u, eps)?;
    let (a, b) = u.interval();
    let nodes = u.breaks();
    let mut cuts = nodes.clone();
    cuts.extend(nodes.iter().map(|&x| x - eps));
    let v = piecewise(a - eps, b, cuts, |x| {
        let ux = u.eval(x);
        f.drop(ux, u.deviation_from_average(x, eps))
    });
    Ok(v / (eps * eps))
}

/// `E_0(u) = (1/24) int f''(u) |u'|^2`, or infinite when `u` is not in `H^1`.
pub fn e1d_limit<T: Real>(u: &Profile1D<T>, f: &Potential) -> Extended<T> {
    let v = u.values();
    let scale = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    // The zero extension jumps at an endpoint with a nonzero value.
    if v[0].abs() > lit::<T>(1e-12) * scale.max(T::one()) || v[v.len() - 1].abs() > lit::<T>(1e-12) * scale.max(T::one()) {
        return Extended::Infinite;
    }
    if !in_h1(u) {
        return Extended::Infinite;
    }
    let h = u.spacing();
    let gl = GaussLegendre::<T>::new(3);
    let parts: Vec<T> = u
        .slopes()
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let x0 = u.node(i);
            gl.integrate(x0, x0 + h, |x| f.d2f(u.eval(x)) * s * s)
        })
        .collect();
    Extended::Finite(pairwise_sum(&parts) / lit(24.0))
}

/// Derivative-energy doubling test: `int |u'|^2` must not grow like `1/h` under refinement.
fn in_h1<T: Real>(u: &Profile1D<T>) -> bool {
    let energy = |step: usize| -> Option<T> {
        let v = u.values();
        if !(v.len() - 1).is_multiple_of(step) || (v.len() - 1) / step < 4 {
            return None;
        }
        let h = u.spacing() * from_usize::<T>(step);
        let terms: Vec<T> = (0..(v.len() - 1) / step)
            .map(|i| {
                let d = v[(i + 1) * step] - v[i * step];
                d * d / h
            })
            .collect();
        Some(pairwise_sum(&terms))
    };
    match (energy(1), energy(2), energy(4)) {
        (Some(e1), Some(e2), Some(e4)) => {
            let grow = |fine: T, coarse: T| fine > coarse * lit(1.25) && fine > lit(1e-300);
            !(grow(e1, e2) && grow(e2, e4))
        }
        _ => true,
    }
}

/// `(alpha/4) int int H_eps(r) ((u(y + r) - u(y)) / eps)^2 dr dy` with the triangle `H_eps`.
pub fn e1d_lower_bound<T: Real>(u: &Profile1D<T>, f: &Potential, eps: T) -> Result<T> {
    let alpha = f.alpha();
    if alpha <= 0.0 {
        return Err(Error::Unsupported("the lower bound needs a strongly convex potential".into()));
    }
    check_resolution(u, eps)?;
    let (a, b) = u.interval();
    let h = u.spacing();
    let nodes = u.breaks();
    let q = |r: T| -> T {
        let mut cuts = nodes.clone();
        cuts.extend(nodes.iter().map(|&x| x - r));
        piecewise(a - r, b, cuts, |y| {
            let d = u.eval(y + r) - u.eval(y);
            d * d
        })
    };
    // Q(r) is piecewise cubic with breaks at multiples of h; both signs of r give the same value.
    let mut cuts: Vec<T> = Vec::new();
    let mut r = h;
    while r < eps {
        cuts.push(r);
        r = r + h;
    }
    let inner = piecewise(T::zero(), eps, cuts, |r| (T::one() - r / eps) / eps * q(r));
    Ok(lit::<T>(alpha / 4.0) * lit::<T>(2.0) * inner / (eps * eps))
}

/// `(c/2) int |u'|^2`, the bound on `E_eps` when `f'' <= c`.
pub fn e1d_upper_bound<T: Real>(u: &Profile1D<T>, f: &Potential) -> Result<T> {
    let c = f.upper().ok_or_else(|| Error::Unsupported("potential has unbounded second derivative".into()))?;
    let h = u.spacing();
    let s: Vec<T> = u.slopes().iter().map(|&s| s * s * h).collect();
    let v = u.values();
    // Endpoint jumps have infinite Dirichlet energy.
    if v[0] != T::zero() || v[v.len() - 1] != T::zero() {
        return Ok(T::infinity());
    }
    Ok(lit::<T>(c / 2.0) * pairwise_sum(&s))
}

/// Node counts for the `z`-integrals of the rate functionals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    pub radial_order: usize,
    pub angular: usize,
    /// Gauss points per cell and axis for the `x`-integrals.
    pub cell_order: usize,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self { radial_order: 12, angular: 32, cell_order: 2 }
    }
}

/// Lower corners of the spline's knot cells, padded by `pad` cells beyond the outermost knots.
fn knot_cells<T: Real>(grid: &GridBox<T>, pad: usize) -> Vec<([isize; 3], Point<T>)> {
    let d = grid.dim();
    let p = pad as isize + 2;
    let mut range = [0..1isize, 0..1, 0..1];
    for (k, r) in range.iter_mut().enumerate().take(d) {
        *r = -p..grid.resolution()[k] as isize - 1 + p;
    }
    let mut corners = Vec::new();
    for c in range[2].clone() {
        for b in range[1].clone() {
            for a in range[0].clone() {
                let idx = [a, b, c];
                let mut x = [T::zero(); 3];
                for k in 0..d {
                    let h = grid.spacing(k);
                    x[k] = grid.origin()[k] + h * (T::from(idx[k]).unwrap() + lit(0.5));
                }
                corners.push((idx, x));
            }
        }
    }
    corners
}

/// Gauss points of a knot cell, relative to its lower corner, split where `x + shift` crosses a knot.
fn split_points<T: Real>(grid: &GridBox<T>, order: usize, shift: &Point<T>) -> Vec<(Point<T>, T)> {
    let d = grid.dim();
    let gl = GaussLegendre::<T>::new(order.max(1));
    let axis = |k: usize| -> Vec<(T, T)> {
        if k >= d {
            return vec![(T::zero(), T::one())];
        }
        let h = grid.spacing(k);
        let s = shift[k] / h;
        let cut = T::one() - (s - s.floor());
        let tiny = lit::<T>(1e-12);
        if cut > tiny && cut < T::one() - tiny {
            gl.on(T::zero(), cut * h).chain(gl.on(cut * h, h)).collect()
        } else {
            gl.on(T::zero(), h).collect()
        }
    };
    let (a, b, c) = (axis(0), axis(1), axis(2));
    let mut pts = Vec::with_capacity(a.len() * b.len() * c.len());
    for &(z, wz) in &c {
        for &(y, wy) in &b {
            for &(x, wx) in &a {
                pts.push(([x, y, z], wx * wy * wz));
            }
        }
    }
    pts
}

/// `sum_cells sum_points w g(x)` over the padded knot cells, with per-cell pairwise sums.
fn integrate_cells<T: Real>(
    corners: &[([isize; 3], Point<T>)],
    points: &[(Point<T>, T)],
    skip: impl Fn(&[isize; 3]) -> bool + Sync,
    g: impl Fn(&Point<T>) -> T + Sync,
) -> T {
    let cells: Vec<T> = corners
        .par_iter()
        .filter(|(j, _)| !skip(j))
        .map(|(_, c)| {
            let terms: Vec<T> = points.iter().map(|(o, w)| *w * g(&axpy(c, T::one(), o))).collect();
            pairwise_sum(&terms)
        })
        .collect();
    pairwise_sum(&cells)
}

/// `(z, w)` with `w` including `G(z)` and the polar Jacobian.
///
/// Every integrand here is even in `z` once integrated in `x`, so antipodal pairs are merged.
fn z_nodes<T: Real>(g: &Kernel<T>, opts: &RateOptions) -> Vec<(Point<T>, T)> {
    fold_antipodal(full_z_nodes(g, opts))
}

fn fold_antipodal<T: Real>(nodes: Vec<(Point<T>, T)>) -> Vec<(Point<T>, T)> {
    let upper = |z: &Point<T>| {
        let scale = crate::vector::norm(z) * lit(1e-12);
        z.iter().find(|c| c.abs() > scale).is_some_and(|c| *c > T::zero())
    };
    let kept: Vec<(Point<T>, T)> = nodes.iter().filter(|(z, _)| upper(z)).map(|(z, w)| (*z, *w + *w)).collect();
    if kept.len() * 2 == nodes.len() {
        kept
    } else {
        nodes
    }
}

fn full_z_nodes<T: Real>(g: &Kernel<T>, opts: &RateOptions) -> Vec<(Point<T>, T)> {
    let d = g.dim();
    if g.is_singular() {
        let params = ZRuleParams { radial_order: opts.radial_order.min(10), angular: opts.angular, ..ZRuleParams::default() };
        return g.z_rule(&params).rings.into_iter().flat_map(|r| r.nodes).collect();
    }
    let radial = RadialRule::uniform(g.tail().radius(), &g.breakpoints(), 1, opts.radial_order);
    let n = if d == 3 { (opts.angular / 2).max(4) } else { opts.angular };
    let dirs = sphere_rule::<T>(d, n);
    let mut nodes = Vec::with_capacity(radial.nodes.len() * dirs.len());
    for &(r, wr) in &radial.nodes {
        let jac = r.powi(d as i32 - 1) * wr;
        for (u, wu) in &dirs {
            let z = [u[0] * r, u[1] * r, u[2] * r];
            nodes.push((z, *wu * jac * g.eval_point(&z)));
        }
    }
    nodes
}


/// `F_eps`, `F_0` and `E_eps` of a field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateValue<T> {
    pub f_eps: T,
    pub f_0: T,
    pub e_eps: T,
}

/// `u` must be constant on a two-cell frame of the box, so its gradient vanishes outside.
fn check_constant_frame<T: Real>(u: &GridField<T>) -> Result<()> {
    let g = u.grid();
    let ext = u.extension();
    let scale = u.values().iter().fold(T::one(), |m, v| m.max(v.abs()));
    for idx in 0..g.len() {
        let i = g.multi_index(idx);
        let frame = (0..g.dim()).any(|k| i[k] < 2 || i[k] + 2 >= g.resolution()[k]);
        if frame && (u.values()[idx] - ext).abs() > lit::<T>(1e-12) * scale {
            return Err(Error::Constraint("field is not constant near the edge of the box".into()));
        }
    }
    Ok(())
}

fn check_field<T: Real>(u: &GridField<T>, g: &Kernel<T>) -> Result<()> {
    if u.dim() != g.dim() || !(2..=3).contains(&u.dim()) {
        return Err(Error::Invalid("field and kernel must share dimension 2 or 3".into()));
    }
    if u.tag() != Tag::LevelSet && u.tag() != Tag::Phase {
        return Err(Error::Invalid("rate functionals expect a smooth field".into()));
    }
    check_constant_frame(u)
}

/// `F_eps = int int G(z) f(|u(x + eps z) - u(x)| / (eps |z|))`, `F_0 = int int G(z) f(|grad u . z/|z||)`
/// and `E_eps = (F_0 - F_eps) / eps^2`, on the interpolating cubic spline of `u`.
pub fn rate_ddim<T: Real>(u: &GridField<T>, g: &Kernel<T>, f: &Potential, eps: T, opts: &RateOptions) -> Result<RateValue<T>> {
    check_field(u, g)?;
    if !(eps > T::zero()) {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    let nodes = z_nodes(g, opts);
    let grid = u.grid();
    let spline = CubicSpline::new(u);
    let f_0 = spline_integral(&spline, grid, opts.cell_order, 1, |gx, _| {
        let terms: Vec<T> = nodes.iter().map(|(z, w)| *w * f.f(dot(gx, z) / crate::vector::norm(z))).collect();
        pairwise_sum(&terms)
    });
    let reach = nodes.iter().fold(T::zero(), |m, (z, _)| m.max(crate::vector::norm(z))) * eps;
    let pad = (reach / grid.min_spacing()).ceil().to_usize().unwrap_or(0) + 1;
    let corners = knot_cells(grid, pad);
    let parts: Vec<T> = nodes
        .par_iter()
        .map(|(z, w)| {
            let r = crate::vector::norm(z);
            let shift = crate::vector::scale(z, eps);
            let points = split_points(grid, opts.cell_order, &shift);
            let mut off = [0isize; 3];
            for k in 0..grid.dim() {
                off[k] = (shift[k] / grid.spacing(k)).floor().to_isize().unwrap_or(0);
            }
            let idle = |j: &[isize; 3]| {
                if spline.is_active(*j) {
                    return false;
                }
                let d = grid.dim();
                (0..1usize << d).all(|bits| {
                    let mut t = *j;
                    for k in 0..d {
                        t[k] += off[k] + ((bits >> k) & 1) as isize;
                    }
                    !spline.is_active(t)
                })
            };
            let v = integrate_cells(&corners, &points, idle, |x| {
                let q = (spline.value(&axpy(x, T::one(), &shift)) - spline.value(x)) / (eps * r);
                f.f(q)
            });
            *w * v
        })
        .collect();
    let f_eps = pairwise_sum(&parts);
    Ok(RateValue { f_eps, f_0, e_eps: (f_0 - f_eps) / (eps * eps) })
}

/// `int g(u, grad u, hess u)` of the spline over its knot cells.
fn spline_integral<T: Real>(
    spline: &CubicSpline<T>,
    grid: &GridBox<T>,
    order: usize,
    derivatives: usize,
    g: impl Fn(&Point<T>, &[[T; 3]; 3]) -> T + Sync,
) -> T {
    let corners = knot_cells(grid, 0);
    let points = split_points(grid, order.max(3), &[T::zero(); 3]);
    integrate_cells(&corners, &points, |j| !spline.is_active(*j), |x| {
        let (_, gx, hx) = spline.eval(x, derivatives);
        g(&gx, &hx)
    })
}

/// `E_eps` assembled from one-dimensional rate energies of line slices:
/// `int G(z) |z|^2 int_{z^perp} E^{1D}_{eps |z|}(w') dxi dz` with `w(t) = u(xi + t z/|z|)`.
pub fn rate_by_slices<T: Real>(u: &GridField<T>, g: &Kernel<T>, f: &Potential, eps: T, opts: &RateOptions) -> Result<T> {
    check_field(u, g)?;
    if u.dim() != 2 {
        return Err(Error::Unsupported("slice assembly is planar".into()));
    }
    if !(eps > T::zero()) {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    let nodes = z_nodes(g, opts);
    let grid = u.grid();
    let spline = CubicSpline::new(u);
    let h = grid.min_spacing();
    let center = [
        grid.origin()[0] + grid.lengths()[0] * lit(0.5),
        grid.origin()[1] + grid.lengths()[1] * lit(0.5),
        T::zero(),
    ];
    let lines = (grid.bounding_radius() / h).ceil().to_usize().unwrap_or(1);
    let gl = GaussLegendre::<T>::new(opts.cell_order.max(1));
    let offsets: Vec<(T, T)> = (0..2 * lines)
        .flat_map(|j| {
            let lo = h * (from_usize::<T>(j) - from_usize::<T>(lines));
            gl.on(lo, lo + h).collect::<Vec<_>>()
        })
        .collect();
    let per_node: Vec<Result<T>> = nodes
        .par_iter()
        .map(|(z, w)| {
            let r = crate::vector::norm(z);
            let e = [z[0] / r, z[1] / r, T::zero()];
            let perp = [-e[1], e[0], T::zero()];
            let mut total = Vec::with_capacity(offsets.len());
            for &(s, ws) in &offsets {
                let xi = axpy(&center, s, &perp);
                let line = slice(u, &e[..2], &xi[..2], Interpolation::Cubic)?;
                if line.is_empty() {
                    continue;
                }
                total.push(ws * slice_energy(&spline, &line.t, &xi, &e, eps * r, f, &gl));
            }
            Ok(*w * r * r * pairwise_sum(&total))
        })
        .collect();
    let mut parts = Vec::with_capacity(per_node.len());
    for p in per_node {
        parts.push(p?);
    }
    Ok(pairwise_sum(&parts))
}

/// `delta^{-2} int [f(|w'(t)|) - f(|w(t + delta) - w(t)| / delta)] dt` along one slice.
fn slice_energy<T: Real>(
    spline: &CubicSpline<T>,
    t: &[T],
    xi: &Point<T>,
    e: &Point<T>,
    delta: T,
    f: &Potential,
    gl: &GaussLegendre<T>,
) -> T {
    if t.len() < 2 {
        return T::zero();
    }
    let step = t[1] - t[0];
    // Left of the box `w` is constant, but `w(t + delta)` is not.
    let extra = (delta / step).ceil().to_usize().unwrap_or(0);
    let first = t[0] - step * from_usize::<T>(extra);
    let pieces = t.len() - 1 + extra;
    let mut terms = Vec::with_capacity(pieces * gl.nodes.len());
    for i in 0..pieces {
        let lo = first + step * from_usize::<T>(i);
        for (s, ws) in gl.on(lo, lo + step) {
            let (w0, gw, _) = spline.eval(&axpy(xi, s, e), 1);
            let w1 = spline.value(&axpy(xi, s + delta, e));
            terms.push(ws * (f.f(dot(&gw, e)) - f.f((w1 - w0) / delta)));
        }
    }
    pairwise_sum(&terms) / (delta * delta)
}

/// `(1/24) int int G(z) |z|^2 f''(|grad u . zhat|) |hess u zhat . zhat|^2` on the interpolating spline of `u`.
pub fn rate_limit_ddim<T: Real>(u: &GridField<T>, g: &Kernel<T>, f: &Potential, opts: &RateOptions) -> Result<T> {
    check_field(u, g)?;
    let nodes = z_nodes(g, opts);
    let grid = u.grid();
    let spline = CubicSpline::new(u);
    let v = spline_integral(&spline, grid, opts.cell_order, 2, |gx, hx| {
        let terms: Vec<T> = nodes
            .iter()
            .map(|(z, w)| {
                let r2 = dot(z, z);
                let slope = dot(gx, z) / r2.sqrt();
                let curv = dot(&crate::vector::mat_vec(hx, z), z) / r2;
                *w * r2 * f.d2f(slope) * curv * curv
            })
            .collect();
        pairwise_sum(&terms)
    });
    Ok(v / lit(24.0))
}

/// `int |hess u|^2` on the interpolating spline of `u`.
fn hessian_energy<T: Real>(u: &GridField<T>, order: usize) -> T {
    let spline = CubicSpline::new(u);
    spline_integral(&spline, u.grid(), order, 2, |_, hx| hx.iter().flat_map(|row| row.iter()).fold(T::zero(), |s, v| s + *v * *v))
}

/// Radius fraction `beta_d` of the positivity ball of the effective kernel.
pub fn positivity_fraction(dim: usize) -> f64 {
    match dim {
        1 | 2 => 1.0,
        _ => 0.5,
    }
}

/// `tilde G(z) = int_{-1}^{1} (1 - |r|)^+ G_{|r|}(z) dr`.
pub fn effective_kernel<T: Real>(g: &Kernel<T>) -> Kernel<T> {
    g.effective()
}

/// Smallest sampled value of `tilde G` on `B(0, 0.99 beta_d r1)`, with its location.
pub fn effective_positivity<T: Real>(g: &Kernel<T>, r1: T, samples: usize, seed: u64) -> (T, Point<T>) {
    use rand::{Rng, SeedableRng};
    let eff = g.effective();
    let d = g.dim();
    let radius = r1 * lit(0.99 * positivity_fraction(d));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point<T>> = (0..samples)
        .map(|_| loop {
            let mut p = [T::zero(); 3];
            for v in p.iter_mut().take(d) {
                *v = lit::<T>(rng.gen_range(-1.0..=1.0));
            }
            if dot(&p, &p) <= T::one() && dot(&p, &p) > T::zero() {
                break crate::vector::scale(&p, radius);
            }
        })
        .collect();
    let vals: Vec<T> = points.par_iter().map(|p| eff.eval_point(p)).collect();
    let (i, v) = vals.iter().enumerate().fold((0, T::infinity()), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
    (v, points[i])
}

/// One row of [`regularity_criterion`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularityRow {
    pub eps: f64,
    pub e_eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularityReport {
    pub rows: Vec<RegularityRow>,
    /// `(c/2) (int G |z|^2) int |hess u|^2`.
    pub bound: f64,
}

impl RegularityReport {
    pub fn within_bound(&self) -> bool {
        self.rows.iter().all(|r| r.e_eps <= self.bound * (1.0 + 1e-9) + 1e-12)
    }

    /// `E` at the smallest scale over `E` at the largest.
    pub fn growth(&self) -> f64 {
        let first = self.rows.first().map_or(0.0, |r| r.e_eps);
        let last = self.rows.last().map_or(0.0, |r| r.e_eps);
        last / first
    }
}

/// `E_eps` over the scales against `(c/2) (int G |z|^2) int |hess u|^2`.
pub fn regularity_criterion<T: Real>(
    u: &GridField<T>,
    g: &Kernel<T>,
    f: &Potential,
    eps_list: &[T],
    opts: &RateOptions,
) -> Result<RegularityReport> {
    let c = f.upper().ok_or_else(|| Error::Unsupported("regularity criterion needs f'' bounded".into()))?;
    check_field(u, g)?;
    let nodes = z_nodes(g, opts);
    let moment = pairwise_sum(&nodes.iter().map(|(z, w)| *w * dot(z, z)).collect::<Vec<_>>());
    let bound = lit::<T>(c / 2.0) * moment * hessian_energy(u, opts.cell_order);
    let rows = eps_list
        .iter()
        .map(|&eps| rate_ddim(u, g, f, eps, opts).map(|v| RegularityRow { eps: to_f64(eps), e_eps: to_f64(v.e_eps) }))
        .collect::<Result<_>>()?;
    Ok(RegularityReport { rows, bound: to_f64(bound) })
}

/// `int tilde G` and `int G`, which agree.
pub fn effective_mass<T: Real>(g: &Kernel<T>, params: &ZRuleParams<T>) -> (Extended<T>, Extended<T>) {
    (g.effective().moments(params).mass, g.moments(params).mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{FamilySpec, KernelSpec};
    use std::f64::consts::PI;

    fn parabola(eps: f64) -> Profile1D<f64> {
        let cells = ((2.0 / (eps / 16.0)).ceil() as usize).max(64);
        Profile1D::from_fn(-1.0, 1.0, cells, |x: f64| (1.0 - x * x).max(0.0)).unwrap()
    }

    fn bump(n: usize) -> GridField<f64> {
        let grid = GridBox::centered(2, 1.5, n).unwrap();
        GridField::from_fn(grid, Tag::LevelSet, |x: &Point<f64>| {
            let v = (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0);
            v * v
        })
        .unwrap()
    }

    #[test]
    fn potentials_are_consistent() {
        for f in [Potential::Quadratic, Potential::QuadPlusQuartic { quartic: 0.5 }, Potential::LogCosh { width: 0.3 }] {
            assert_eq!(f.f(0.0), 0.0);
            assert_eq!(f.df(0.0), 0.0);
            for i in 0..50 {
                let t = 0.1 * i as f64;
                let h = 1e-4;
                assert!((f.df(t + 0.5) - (f.f(t + 0.5 + h) - f.f(t + 0.5 - h)) / (2.0 * h)).abs() < 1e-6);
                assert!((f.d2f(t + 0.5) - (f.df(t + 0.5 + h) - f.df(t + 0.5 - h)) / (2.0 * h)).abs() < 1e-6);
                assert!(f.d2f(t) >= f.alpha());
                assert!(f.upper().is_none_or(|c| f.d2f(t) <= c + 1e-12));
            }
        }
        assert!(Potential::LogCosh { width: 0.0 }.validate().is_err());
    }

    #[test]
    fn averaged_slope_examples() {
        let one = Profile1D::<f64>::from_fn(0.0, 1.0, 10, |_| 1.0).unwrap();
        assert!((averaged_slope(&one, 0.3, 0.2).unwrap() - 1.0).abs() < 1e-14);
        let ramp = Profile1D::<f64>::from_fn(0.0, 1.0, 10, |x| x).unwrap();
        assert!((averaged_slope(&ramp, 0.2, 0.1).unwrap() - 0.25).abs() < 1e-14);
        assert_eq!(averaged_slope(&ramp, 1.5, 0.1).unwrap(), 0.0);
        assert!(averaged_slope(&ramp, 0.5, 0.0).is_err());
    }

    #[test]
    fn one_dimensional_rate_tends_to_two_ninths() {
        let f = Potential::Quadratic;
        let zero = Profile1D::from_fn(-1.0, 1.0, 400, |_| 0.0).unwrap();
        assert_eq!(e1d(&zero, &f, 0.1).unwrap(), 0.0);
        let mut errors = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3] {
            let u = parabola(eps);
            let e = e1d(&u, &f, eps).unwrap();
            assert!(e <= e1d_upper_bound(&u, &f).unwrap());
            assert!((e1d_upper_bound(&u, &f).unwrap() - 8.0 / 3.0).abs() < 1e-3);
            assert!(e >= e1d_lower_bound(&u, &f, eps).unwrap() - 1e-6);
            errors.push((e - 2.0 / 9.0).abs() / (2.0 / 9.0));
        }
        assert!(errors[2] < 0.02, "{errors:?}");
        assert!(errors.windows(2).all(|w| w[1] <= w[0] * 1.1), "{errors:?}");
        let coarse = parabola(1.0);
        assert!(matches!(e1d(&coarse, &f, 1e-3), Err(Error::Resolution(_))));
    }

    #[test]
    fn one_dimensional_limit() {
        let f = Potential::Quadratic;
        let u = parabola(1e-2);
        assert!((e1d_limit(&u, &f).finite().unwrap() - 2.0 / 9.0).abs() < 1e-6);
        let flat = Profile1D::from_fn(-1.0, 1.0, 64, |_| 0.0).unwrap();
        assert_eq!(e1d_limit(&flat, &f), Extended::Finite(0.0));
        let step = Profile1D::from_fn(-1.0, 1.0, 64, |_| 1.0).unwrap();
        assert_eq!(e1d_limit(&step, &f), Extended::Infinite);
        let cusp = Profile1D::from_fn(-1.0, 1.0, 4096, |x: f64| (1.0 - x.abs()).powf(0.2)).unwrap();
        assert_eq!(e1d_limit(&cusp, &f), Extended::Infinite);
    }

    #[test]
    fn triangle_weights() {
        let gl = GaussLegendre::<f64>::new(3);
        assert!((gl.integrate(0.0, 1.0, |r| (r - 0.5) * (r - 0.5)) - 1.0 / 12.0).abs() < 1e-10);
        for eps in [0.3, 0.01] {
            let mass = gl.integrate(-eps, 0.0, |r| (1.0 + r / eps) / eps) + gl.integrate(0.0, eps, |r| (1.0 - r / eps) / eps);
            assert!((mass - 1.0).abs() < 1e-10);
        }
        let u = parabola(0.1);
        assert!(e1d_lower_bound(&u, &Potential::LogCosh { width: 1.0 }, 0.1).is_err());
    }

    #[test]
    fn planar_rate_of_a_bump() {
        let g = Kernel::ball(2, 1.0).unwrap();
        let f = Potential::Quadratic;
        let o = RateOptions::default();
        let u = bump(64);
        // Closed form of the limit for the bump with the unit-ball kernel.
        let limit = rate_limit_ddim(&u, &g, &f, &o).unwrap();
        assert!((limit - PI * PI / 3.0).abs() / (PI * PI / 3.0) < 0.05, "{limit}");
        let v = rate_ddim(&u, &g, &f, 0.05, &o).unwrap();
        assert!((v.f_0 - 2.0 * PI * PI / 3.0).abs() < 1e-3, "{v:?}");
        assert!((v.e_eps - limit).abs() / limit < 0.05, "{v:?} {limit}");
        let sliced = rate_by_slices(&u, &g, &f, 0.05, &o).unwrap();
        assert!((sliced - v.e_eps).abs() / v.e_eps < 0.01, "{sliced} {v:?}");
    }

    #[test]
    fn constant_and_edge_constraint() {
        let g = Kernel::<f64>::ball(2, 1.0).unwrap();
        let grid = GridBox::centered(2, 1.0, 16).unwrap();
        let c = GridField::from_fn(grid.clone(), Tag::LevelSet, |_| 0.3).unwrap().with_extension(0.3).unwrap();
        let v = rate_ddim(&c, &g, &Potential::Quadratic, 0.1, &RateOptions::default()).unwrap();
        assert!(v.f_eps.abs() < 1e-12 && v.f_0.abs() < 1e-12 && v.e_eps.abs() < 1e-9, "{v:?}");
        let ramp = GridField::from_fn(grid, Tag::LevelSet, |x| x[0]).unwrap();
        assert!(matches!(rate_ddim(&ramp, &g, &Potential::Quadratic, 0.1, &RateOptions::default()), Err(Error::Constraint(_))));
    }

    #[test]
    fn quarter_turn_invariance() {
        let g = Kernel::ball(2, 1.0).unwrap();
        let grid = GridBox::centered(2, 1.5, 32).unwrap();
        let profile = |x: &Point<f64>| {
            let v = (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0);
            v * v * (1.0 + 0.3 * x[0])
        };
        let u = GridField::from_fn(grid.clone(), Tag::LevelSet, profile).unwrap();
        let turned = GridField::from_fn(grid, Tag::LevelSet, |x| profile(&[x[1], -x[0], 0.0])).unwrap();
        let o = RateOptions::default();
        let a = rate_ddim(&u, &g, &Potential::Quadratic, 0.1, &o).unwrap();
        let b = rate_ddim(&turned, &g, &Potential::Quadratic, 0.1, &o).unwrap();
        assert!((a.e_eps - b.e_eps).abs() < 1e-8, "{a:?} {b:?}");
    }

    #[test]
    fn scaled_rate_vanishes() {
        let g = Kernel::ball(2, 1.0).unwrap();
        let u = bump(64);
        let scaled: Vec<f64> =
            [0.2, 0.1, 0.05].iter().map(|&e| e * rate_ddim(&u, &g, &Potential::Quadratic, e, &RateOptions::default()).unwrap().e_eps).collect();
        // E_eps rises toward its limit, so each halving shrinks eps E_eps by a factor just under 2.
        let ratios: Vec<f64> = scaled.windows(2).map(|w| w[0] / w[1]).collect();
        assert!(ratios.iter().all(|&r| r > 1.8 && r < 2.0), "{ratios:?}");
        assert!(ratios[1] > ratios[0], "{ratios:?}");
    }

    #[test]
    fn regularity_separates_smooth_from_kinked_profiles() {
        let g = Kernel::ball(2, 1.0).unwrap();
        let f = Potential::Quadratic;
        let o = RateOptions::default();
        let eps = [0.2, 0.1, 0.05];
        let smooth = regularity_criterion(&bump(64), &g, &f, &eps, &o).unwrap();
        assert!(smooth.within_bound(), "{smooth:?}");
        assert!(smooth.growth() < 1.1, "{smooth:?}");
        // The gradient jumps across the unit circle, so u is Lipschitz but not H^2.
        let grid = GridBox::centered(2, 1.5, 64).unwrap();
        let kink = GridField::from_fn(grid, Tag::LevelSet, |x: &Point<f64>| (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0)).unwrap();
        let kinked = regularity_criterion(&kink, &g, &f, &eps, &o).unwrap();
        assert!(kinked.growth() > 1.5, "{kinked:?}");
    }

    #[test]
    fn effective_kernel_positive_with_same_mass() {
        for d in [2, 3] {
            let spec = KernelSpec { family: FamilySpec::AnnulusIndicator { inner: 0.2, outer: 1.0 }, ..Kernel::<f64>::ball(d, 1.0).unwrap().spec() };
            let g = Kernel::<f64>::from_spec(&spec).unwrap();
            let (min, _) = effective_positivity(&g, 1.0, 1000, 3);
            assert!(min > 0.0, "{d} {min}");
            let (a, b) = effective_mass(&g, &ZRuleParams::default());
            let (a, b) = (a.finite().unwrap(), b.finite().unwrap());
            assert!((a - b).abs() < 1e-3 * b, "{a} {b}");
        }
        assert_eq!(positivity_fraction(2), 1.0);
        assert_eq!(positivity_fraction(3), 0.5);
    }
}
