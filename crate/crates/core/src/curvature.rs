//! Principal-value nonlocal curvature `H_K(E, x) = -PV int K(y - x) (chi_E - chi_{E^c})(y) dy`,
//! the graph-chart evaluation, and the local anisotropic mean curvature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anisotropy::Anisotropy;
use crate::error::{Error, Result};
use crate::fields::{GridField, Interpolation, Shape, Tag};
use crate::kernel::{line_integral, Kernel, Tail, ZRuleParams};
use crate::quadrature::GaussLegendre;
use crate::scalar::{from_usize, lit, pairwise_sum, to_f64, Real};
use crate::vector::{axpy, dot, norm, normalize, orthonormal_complement, perp2, scale, Mat, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PvAnnulus,
    Graph,
    LocalH0,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::PvAnnulus => "pv-annulus",
            Method::Graph => "graph",
            Method::LocalH0 => "local-h0",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureValue<T> {
    pub value: T,
    /// Nonnegative quadrature error estimate.
    pub error: T,
    pub method: Method,
    /// Kernel mass over the annuli visited by the principal-value schedule.
    pub annulus_mass: Option<T>,
}

/// Annulus schedule and node counts for [`hk_pv`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvOptions {
    /// Ratio of consecutive annulus radii.
    pub ratio: f64,
    pub min_levels: usize,
    pub max_levels: usize,
    /// Uniform angular samples on a half circle, before refinement at the tangent.
    pub angular: usize,
    pub radial_order: usize,
    /// Distance from the boundary accepted as "on the boundary".
    pub boundary_tol: f64,
    /// Relative size of the last annulus contribution at which the schedule stops.
    pub stop: f64,
    /// Innermost radius relative to the kernel reach; below it rounding of `x` dominates.
    pub floor: f64,
}

impl Default for PvOptions {
    fn default() -> Self {
        Self { ratio: 0.5, min_levels: 8, max_levels: 64, angular: 64, radial_order: 8, boundary_tol: 1e-8, stop: 1e-13, floor: 1e-5 }
    }
}

fn on_boundary<T: Real>(e: &Shape<T>, x: &Point<T>, tol: T) -> bool {
    match e.signed_distance(x) {
        Some(d) => d.abs() <= tol,
        None => {
            let g = norm(&e.gradient(x));
            e.level(x).abs() <= tol * g.max(lit(1e-300))
        }
    }
}

fn signed(inside: bool) -> i8 {
    if inside {
        1
    } else {
        -1
    }
}

/// `int_a^b w(t) (v_0(t) + v_1(t)) dt` for piecewise constant `v_i` with values in `{-1, 0, 1}`.
///
/// Jumps are located by bisection between consecutive `samples`.
fn arc_integral<T: Real>(
    samples: &[T],
    value: &impl Fn(T) -> [i8; 2],
    weight: &impl Fn(T) -> T,
    gl: &GaussLegendre<T>,
    constant_weight: bool,
) -> T {
    let vals: Vec<[i8; 2]> = samples.iter().map(|&t| value(t)).collect();
    let mut cuts: Vec<T> = vec![samples[0], *samples.last().unwrap()];
    for i in 1..samples.len() {
        for c in 0..2 {
            if vals[i][c] != vals[i - 1][c] {
                let (mut a, mut b) = (samples[i - 1], samples[i]);
                let va = vals[i - 1][c];
                for _ in 0..64 {
                    let m = (a + b) * lit(0.5);
                    if m <= a || m >= b {
                        break;
                    }
                    if value(m)[c] == va {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                cuts.push((a + b) * lit(0.5));
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut parts = Vec::with_capacity(cuts.len());
    for w in cuts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let v = value((w[0] + w[1]) * lit(0.5));
        let s = v[0] as i32 + v[1] as i32;
        if s == 0 {
            continue;
        }
        let integral = if constant_weight { weight(w[0]) * (w[1] - w[0]) } else { gl.integrate(w[0], w[1], weight) };
        parts.push(from_usize::<T>(s.unsigned_abs() as usize) * if s < 0 { -integral } else { integral });
    }
    pairwise_sum(&parts)
}

/// Angular samples on `[lo, hi]`, uniform plus geometric refinement around `focus`.
fn refined_samples<T: Real>(lo: T, hi: T, n: usize, focus: &[T]) -> Vec<T> {
    let mut s: Vec<T> = (0..=n).map(|i| lo + (hi - lo) * from_usize::<T>(i) / from_usize::<T>(n)).collect();
    let span = hi - lo;
    for &f in focus {
        let mut d = span / from_usize::<T>(n);
        for _ in 0..40 {
            d = d * lit(0.5);
            for t in [f - d, f + d] {
                if t > lo && t < hi {
                    s.push(t);
                }
            }
        }
        if f > lo && f < hi {
            s.push(f);
        }
    }
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s.dedup();
    s
}

/// `int_{|z| = r} K(z) [c(x + z) + c(x - z)] dH^{d-1}(z)` over half the sphere, `c` in `{-1, 0, 1}`.
struct RingIntegrator<'a, T: Real, C: Fn(&Point<T>) -> i8 + Sync> {
    kernel: &'a Kernel<T>,
    x: Point<T>,
    normal: Point<T>,
    angular: usize,
    chi: C,
    gl: GaussLegendre<T>,
    /// Half-width of an excluded square aligned with the tangent; its edges become angular samples.
    square: Option<T>,
}

impl<'a, T: Real, C: Fn(&Point<T>) -> i8 + Sync> RingIntegrator<'a, T, C> {
    fn ring(&self, r: T) -> T {
        let d = self.kernel.dim();
        let x = self.x;
        let pair = |u: &Point<T>| -> [i8; 2] {
            [(self.chi)(&axpy(&x, r, u)), (self.chi)(&axpy(&x, -r, u))]
        };
        let radial = self.kernel.is_radial();
        match d {
            2 => {
                // Angles measured from the tangent, so the boundary crossings sit near 0 and pi.
                let t = perp2(&self.normal);
                let dir = |th: T| {
                    let (s, c) = th.sin_cos();
                    [t[0] * c + self.normal[0] * s, t[1] * c + self.normal[1] * s, T::zero()]
                };
                let mut samples = refined_samples(T::zero(), T::PI(), self.angular, &[T::zero(), T::PI()]);
                if let Some(h) = self.square {
                    if h < r {
                        let c = (h / r).acos();
                        let s = (h / r).asin();
                        samples.extend([c, T::PI() - c, s, T::PI() - s]);
                        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    }
                }
                let value = |th: T| pair(&dir(th));
                let kr = if radial { self.kernel.radial_value(r) } else { T::zero() };
                let weight = |th: T| if radial { kr } else { self.kernel.eval_point(&scale(&dir(th), r)) };
                arc_integral(&samples, &value, &weight, &self.gl, radial) * r
            }
            3 => {
                let (a, b) = orthonormal_complement(&self.normal);
                let npsi = self.angular.max(8);
                let samples = refined_samples(T::zero(), T::PI(), self.angular / 2, &[T::FRAC_PI_2()]);
                let per: Vec<T> = (0..npsi)
                    .map(|j| {
                        let psi = T::PI() * from_usize::<T>(j) / from_usize::<T>(npsi);
                        let (sp, cp) = psi.sin_cos();
                        let w = [a[0] * cp + b[0] * sp, a[1] * cp + b[1] * sp, a[2] * cp + b[2] * sp];
                        let dir = |ph: T| {
                            let (s, c) = ph.sin_cos();
                            [self.normal[0] * c + w[0] * s, self.normal[1] * c + w[1] * s, self.normal[2] * c + w[2] * s]
                        };
                        let value = |ph: T| pair(&dir(ph));
                        let weight = |ph: T| ph.sin() * self.kernel.eval_point(&scale(&dir(ph), r));
                        arc_integral(&samples, &value, &weight, &self.gl, false)
                    })
                    .collect();
                pairwise_sum(&per) * T::PI() / from_usize::<T>(npsi) * r * r
            }
            _ => {
                let u = [T::one(), T::zero(), T::zero()];
                let v = pair(&u);
                from_usize::<T>((v[0] + v[1]).unsigned_abs() as usize)
                    * if v[0] + v[1] < 0 { -T::one() } else { T::one() }
                    * self.kernel.radial_value(r)
            }
        }
    }

    /// `(fine, coarse)` over `[lo, hi]`, split at kernel breakpoints.
    fn shell(&self, lo: T, hi: T, order: usize) -> (T, T) {
        let mut cuts = vec![lo, hi];
        cuts.extend(self.kernel.breakpoints().into_iter().filter(|&b| b > lo && b < hi));
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let fine = GaussLegendre::<T>::new(order);
        let coarse = GaussLegendre::<T>::new((order / 2).max(2));
        let mut f = Vec::new();
        let mut c = Vec::new();
        for w in cuts.windows(2) {
            f.extend(fine.on(w[0], w[1]).map(|(r, wr)| wr * self.ring(r)));
            c.extend(coarse.on(w[0], w[1]).map(|(r, wr)| wr * self.ring(r)));
        }
        (pairwise_sum(&f), pairwise_sum(&c))
    }

    /// Contribution beyond `r_out` for power-law tails, extrapolated from the density at `r_out`.
    fn far(&self, r_out: T) -> T {
        match self.kernel.tail() {
            Tail::PowerLaw { decay, .. } => self.ring(r_out) * r_out / decay,
            _ => T::zero(),
        }
    }
}

fn outer_radius<T: Real>(kernel: &Kernel<T>) -> T {
    kernel.tail().radius()
}

/// `H_K(E, x)` by geometric annuli shrinking to `x`, with antipodal pairs in every annulus.
pub fn hk_pv<T: Real>(e: &Shape<T>, x: &[T], kernel: &Kernel<T>, opts: &PvOptions) -> Result<CurvatureValue<T>> {
    let d = kernel.dim();
    if x.len() != d {
        return Err(Error::Invalid("point dimension differs from the kernel".into()));
    }
    let x = crate::vector::from_slice(x);
    if !on_boundary(e, &x, lit(opts.boundary_tol)) {
        return Err(Error::Domain("point is not on the boundary".into()));
    }
    if !(opts.ratio > 0.0 && opts.ratio < 1.0) || opts.max_levels < 3 {
        return Err(Error::Invalid("annulus ratio must lie in (0, 1) with at least three levels".into()));
    }
    let normal = e.outer_normal(&x).unwrap_or([T::one(), T::zero(), T::zero()]);
    let integ = RingIntegrator {
        kernel,
        x,
        normal,
        angular: opts.angular,
        chi: |y: &Point<T>| signed(e.contains(y)),
        gl: GaussLegendre::new(6),
        square: None,
    };
    let unit = RingIntegrator { kernel, x, normal, angular: opts.angular, chi: |_: &Point<T>| 1i8, gl: GaussLegendre::new(6), square: None };
    let ratio = lit::<T>(opts.ratio);
    let r_out = outer_radius(kernel);
    let far = integ.far(r_out);
    let mut partial = vec![far];
    let mut err = far.abs() * lit(0.1);
    let mut contributions = Vec::new();
    let mut masses = Vec::new();
    let mut hi = r_out;
    // Contributions below this fraction of the annulus mass are rounding noise.
    let noise = lit::<T>(1e-12);
    let floor = lit::<T>(opts.floor) * r_out;
    for level in 0..opts.max_levels {
        let lo = hi * ratio;
        let (f, c) = integ.shell(lo, hi, opts.radial_order);
        let mass = unit.shell(lo, hi, opts.radial_order).0;
        err = err + (f - c).abs();
        contributions.push(f);
        masses.push(mass);
        partial.push(*partial.last().unwrap() + f);
        hi = lo;
        let scale_sum = partial.last().unwrap().abs().max(contributions.iter().fold(T::zero(), |m, v| m.max(v.abs())));
        let done = f.abs() <= lit::<T>(opts.stop) * scale_sum || f.abs() <= noise * mass || hi < floor;
        if level + 1 >= opts.min_levels && done {
            break;
        }
    }
    let total_mass = pairwise_sum(&masses);
    let n = contributions.len();
    let significant = |i: usize| contributions[i].abs() > noise * masses[i];
    if significant(n - 1) && significant(n - 2) && contributions[n - 1].abs() >= contributions[n - 2].abs() * (T::one() - lit(1e-3)) {
        return Err(Error::Divergent("annulus contributions do not decrease".into()));
    }
    let s = partial.len();
    let (s0, s1, s2) = (partial[s - 3], partial[s - 2], partial[s - 1]);
    let d1 = s2 - s1;
    let d0 = s1 - s0;
    let denom = d1 - d0;
    let value = if significant(n - 1) && denom != T::zero() && (d1 / d0).abs() < T::one() { s2 - d1 * d1 / denom } else { s2 };
    let extrapolation = (value - s2).abs();
    Ok(CurvatureValue {
        value: -value,
        error: err + extrapolation * lit(0.1) + noise * total_mass,
        method: Method::PvAnnulus,
        annulus_mass: Some(total_mass),
    })
}

/// Vertices of polygonal shapes, where no graph chart exists.
fn corners<T: Real>(e: &Shape<T>) -> Vec<Point<T>> {
    match e {
        Shape::Polygon { vertices } => vertices.clone(),
        Shape::AxisBox { lo, hi, dim } if *dim == 2 => {
            vec![[lo[0], lo[1], T::zero()], [hi[0], lo[1], T::zero()], [hi[0], hi[1], T::zero()], [lo[0], hi[1], T::zero()]]
        }
        Shape::Complement(s) => corners(s),
        _ => Vec::new(),
    }
}

/// `H_K(E, x)` split into the graph part over the square `|s|, |t| < delta` around `x` and the far field.
pub fn hk_graph<T: Real>(e: &Shape<T>, x: &[T], kernel: &Kernel<T>, delta: T, opts: &PvOptions) -> Result<CurvatureValue<T>> {
    if kernel.dim() != 2 {
        return Err(Error::Unsupported("graph charts are implemented in the plane".into()));
    }
    let x = crate::vector::from_slice(x);
    if !on_boundary(e, &x, lit(opts.boundary_tol)) {
        return Err(Error::Domain("point is not on the boundary".into()));
    }
    if corners(e).iter().any(|c| norm(&crate::vector::sub(c, &x)) < delta) {
        return Err(Error::Unsupported("no graph chart near a corner".into()));
    }
    let n = e.outer_normal(&x).ok_or_else(|| Error::DegenerateGradient("boundary normal".into()))?;
    let t = perp2(&n);
    // Boundary height along the outer normal over the tangent coordinate s.
    let height = |s: T| -> Result<T> {
        e.chart_height(&x, &n, &scale(&t, s), delta)
            .map(|h| -h)
            .ok_or_else(|| Error::Unsupported("boundary leaves the chart square".into()))
    };
    // Inner part: int_{-delta}^{delta} int_{-g(-s)}^{g(s)} K(s t + tau n) dtau ds, folded onto s > 0.
    let order = opts.radial_order.max(4);
    let levels = opts.max_levels.max(8);
    let gl = GaussLegendre::<T>::new(order);
    let gl_c = GaussLegendre::<T>::new((order / 2).max(2));
    let column = |s: T| -> Result<T> {
        let a = scale(&t, s);
        let (up, down) = (height(s)?, height(-s)?);
        let oriented = |a: &Point<T>, lo: T, hi: T| {
            if hi >= lo {
                line_integral(kernel, a, &n, lo, hi, order)
            } else {
                -line_integral(kernel, a, &n, hi, lo, order)
            }
        };
        Ok(oriented(&a, -down, up) + oriented(&scale(&a, -T::one()), -up, down))
    };
    let mut inner = Vec::new();
    let mut err = T::zero();
    let mut hi = delta;
    let mut last = T::zero();
    let floor = lit::<T>(opts.floor) * delta;
    for _ in 0..levels {
        if hi < floor && inner.len() >= 2 {
            break;
        }
        let lo = hi * lit(0.5);
        let mut f = Vec::new();
        let mut c = Vec::new();
        for (s, w) in gl.on(lo, hi) {
            f.push(w * column(s)?);
        }
        for (s, w) in gl_c.on(lo, hi) {
            c.push(w * column(s)?);
        }
        let (fv, cv) = (pairwise_sum(&f), pairwise_sum(&c));
        err = err + (fv - cv).abs();
        inner.push(fv);
        last = fv;
        hi = lo;
    }
    // The remaining [0, hi] follows the same geometric decay.
    let prev = inner[inner.len() - 2];
    let rho = if prev != T::zero() { (last / prev).abs() } else { T::zero() };
    let rest = if rho < T::one() { last * rho / (T::one() - rho) } else { last };
    err = err + rest.abs() * lit(0.1);
    let inner_sum = pairwise_sum(&inner) + rest;
    let square = |y: &Point<T>| {
        let z = crate::vector::sub(y, &x);
        dot(&z, &t).abs() < delta && dot(&z, &n).abs() < delta
    };
    let integ = RingIntegrator {
        kernel,
        x,
        normal: n,
        angular: opts.angular,
        chi: |y: &Point<T>| if square(y) { 0 } else { signed(e.contains(y)) },
        gl: GaussLegendre::new(6),
        square: Some(delta),
    };
    let r_out = outer_radius(kernel);
    let mut far = vec![integ.far(r_out)];
    // Break at the inscribed and circumscribed radii of the square.
    let diag = delta * lit::<T>(2.0).sqrt();
    let mut cuts = vec![delta, diag, r_out];
    // The square's edges and corners give square-root behavior at both radii.
    for k in 1..24 {
        let f = lit::<T>(0.5).powi(k);
        cuts.push(delta + (diag - delta) * f);
        cuts.push(diag - (diag - delta) * f);
    }
    let mut r = r_out * lit(0.5);
    while r > diag {
        cuts.push(r);
        r = r * lit(0.5);
    }
    cuts.retain(|&c| c >= delta && c <= r_out);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    for w in cuts.windows(2) {
        let (f, c) = integ.shell(w[0], w[1], opts.radial_order);
        err = err + (f - c).abs();
        far.push(f);
    }
    let total = inner_sum + pairwise_sum(&far);
    Ok(CurvatureValue { value: -total, error: err, method: Method::Graph, annulus_mass: None })
}

/// `int_{Q_lambda(e) cap B_delta} K + int_{B_delta^c} K`, the bound on `|H_K|` at a point with an interior and exterior ball of radius `1/lambda`.
pub fn graph_bound<T: Real>(kernel: &Kernel<T>, e: &Point<T>, lambda: T, delta: T, params: &ZRuleParams<T>) -> crate::Extended<T> {
    let band = kernel.band_mass(
        e,
        params,
        |r| {
            let lr = lambda * r;
            if lr <= T::zero() {
                T::zero()
            } else {
                ((T::one() + lr * lr).sqrt() - T::one()) / lr
            }
        },
        Some(delta),
    );
    let mut p = params.clone();
    p.extra_breaks.push(delta);
    let outside = kernel.z_rule(&p).integrate(|z| if norm(z) > delta { T::one() } else { T::zero() }, T::zero(), T::zero());
    band + outside.value
}

/// Input for [`h0`].
pub enum LevelInput<'a, T> {
    Shape(&'a Shape<T>),
    Field(&'a GridField<T>),
}

/// Gradient floor below which the local curvature is undefined.
const GRADIENT_FLOOR: f64 = 1e-12;

/// `H_0 = -tr(M_K(grad phi / |grad phi|) hess phi) / |grad phi|`, positive on convex `{phi > 0}`.
pub fn h0<T: Real>(phi: LevelInput<'_, T>, x: &[T], aniso: &Anisotropy<T>) -> Result<CurvatureValue<T>> {
    let d = aniso.kernel().dim();
    if x.len() != d {
        return Err(Error::Invalid("point dimension differs from the kernel".into()));
    }
    let x = crate::vector::from_slice(x);
    let (g, h, err) = match phi {
        LevelInput::Shape(s) => (s.gradient(&x), s.hessian(&x), T::zero()),
        LevelInput::Field(f) => {
            if f.tag() != Tag::LevelSet {
                return Err(Error::Invalid("local curvature expects a level-set field".into()));
            }
            field_derivatives(f, &x)
        }
    };
    let gn = norm(&g);
    if !(gn > lit(GRADIENT_FLOOR)) {
        return Err(Error::DegenerateGradient("gradient vanishes at the point".into()));
    }
    let e = normalize(&g).unwrap();
    let m = aniso.m_matrix(&e)?;
    let value = -crate::vector::trace_product(&m, &h) / gn;
    Ok(CurvatureValue { value, error: err, method: Method::LocalH0, annulus_mass: None })
}

/// Gradient and Hessian of the cubic interpolant, the Hessian by central differences of the gradient.
fn field_derivatives<T: Real>(f: &GridField<T>, x: &Point<T>) -> (Point<T>, Mat<T>, T) {
    let d = f.dim();
    let (_, g) = f.sample_with_gradient(x, Interpolation::Cubic, true);
    let mut h = [[T::zero(); 3]; 3];
    for k in 0..d {
        let step = f.grid().spacing(k) * lit(0.5);
        let mut up = *x;
        let mut dn = *x;
        up[k] = up[k] + step;
        dn[k] = dn[k] - step;
        let (_, gu) = f.sample_with_gradient(&up, Interpolation::Cubic, true);
        let (_, gd) = f.sample_with_gradient(&dn, Interpolation::Cubic, true);
        for i in 0..d {
            h[i][k] = (gu[i] - gd[i]) / (step + step);
        }
    }
    for i in 0..d {
        for k in 0..i {
            let s = (h[i][k] + h[k][i]) * lit(0.5);
            h[i][k] = s;
            h[k][i] = s;
        }
    }
    (g, h, f.grid().min_spacing() * f.grid().min_spacing())
}

/// One evaluation of the convergence sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub sample: usize,
    pub x: f64,
    pub y: f64,
    pub hk_over_eps: f64,
    pub h0: f64,
    pub abs_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// `(eps, sup_err, mean_err)`.
    pub summary: Vec<(f64, f64, f64)>,
}

impl ConvergenceReport {
    pub fn sup_errors(&self) -> Vec<f64> {
        self.summary.iter().map(|s| s.1).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.sup_errors().windows(2).all(|w| w[1] < w[0])
    }
}

/// `sup_x |eps^{-1} H_eps(E, x) - H_0(dE, x)|` over `samples` boundary points of a planar shape.
pub fn curvature_convergence<T: Real>(
    e: &Shape<T>,
    aniso: &Anisotropy<T>,
    eps_list: &[T],
    samples: usize,
    opts: &PvOptions,
) -> Result<ConvergenceReport> {
    if aniso.kernel().dim() != 2 {
        return Err(Error::Unsupported("boundary sampling is planar".into()));
    }
    let bound = lit::<T>(1e3);
    let points: Vec<Point<T>> = (0..samples)
        .map(|i| e.boundary_point(from_usize::<T>(i) / from_usize::<T>(samples), bound))
        .collect::<Result<_>>()?;
    let local: Vec<T> = points.iter().map(|p| h0(LevelInput::Shape(e), &p[..2], aniso).map(|v| v.value)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut opts = opts.clone();
    for &eps in eps_list {
        let k = aniso.kernel().rescaled(eps)?;
        // Points returned by arc-length inversion are on the boundary up to rounding of the shape.
        opts.boundary_tol = opts.boundary_tol.max(1e-9);
        let vals: Vec<Result<T>> = points.par_iter().map(|p| hk_pv(e, &p[..2], &k, &opts).map(|v| v.value / eps)).collect();
        let mut errs = Vec::new();
        for (i, v) in vals.into_iter().enumerate() {
            let v = v?;
            let err = (v - local[i]).abs();
            errs.push(to_f64(err));
            rows.push(ConvergenceRow {
                eps: to_f64(eps),
                sample: i,
                x: to_f64(points[i][0]),
                y: to_f64(points[i][1]),
                hk_over_eps: to_f64(v),
                h0: to_f64(local[i]),
                abs_err: to_f64(err),
            });
        }
        let sup = errs.iter().copied().fold(0.0, f64::max);
        let mean = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
        summary.push((to_f64(eps), sup, mean));
    }
    Ok(ConvergenceReport { rows, summary })
}
