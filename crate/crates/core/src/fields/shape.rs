use std::sync::Arc;

use super::grid::GridField;
use crate::error::{invalid, Error, Result};
use crate::scalar::{lit, Real};
use crate::vector::{axpy, dot, from_slice, norm, normalize, perp2, sub, Mat, Point};

/// A set described as the superlevel `{phi > 0}` of a canonical level function `phi`.
#[derive(Clone, Debug)]
pub enum Shape<T> {
    Empty,
    Ball { center: Point<T>, radius: T },
    /// `{x : x . normal > offset}` with unit `normal`.
    HalfSpace { normal: Point<T>, offset: T },
    AxisBox { lo: Point<T>, hi: Point<T>, dim: usize },
    /// Convex polygon in the plane, vertices counter-clockwise.
    Polygon { vertices: Vec<Point<T>> },
    /// Axis-aligned ellipse in the plane, level `1 - (x/a)^2 - (y/b)^2`.
    Ellipse { center: Point<T>, semi: [T; 2] },
    /// Planar halfspace whose boundary line carries the bump `amplitude * taper(s) * sin(wavenumber * s)`.
    PerturbedHalfSpace { normal: Point<T>, offset: T, amplitude: T, wavenumber: T, taper: T },
    /// Cells of an indicator field.
    Grid(Arc<GridField<T>>),
    Complement(Box<Shape<T>>),
    Intersection(Vec<Shape<T>>),
    Union(Vec<Shape<T>>),
}

/// A piece of a planar boundary curve, parameterized over `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryPiece<T> {
    Segment { a: Point<T>, b: Point<T> },
    Arc { center: Point<T>, radius: T, start: T, end: T },
    EllipseArc { center: Point<T>, semi: [T; 2], start: T, end: T },
    /// `offset n + s t + bump(s) n` for `s` in `[s0, s1]`.
    Bumped { normal: Point<T>, offset: T, amplitude: T, wavenumber: T, taper: T, s0: T, s1: T },
}

impl<T: Real> BoundaryPiece<T> {
    /// Point and velocity at parameter `u` in `[0, 1]`.
    pub fn eval(&self, u: T) -> (Point<T>, Point<T>) {
        let z = T::zero();
        match *self {
            BoundaryPiece::Segment { a, b } => {
                let v = sub(&b, &a);
                (axpy(&a, u, &v), v)
            }
            BoundaryPiece::Arc { center, radius, start, end } => {
                let th = start + (end - start) * u;
                let (s, c) = th.sin_cos();
                let w = (end - start) * radius;
                ([center[0] + radius * c, center[1] + radius * s, z], [-s * w, c * w, z])
            }
            BoundaryPiece::EllipseArc { center, semi, start, end } => {
                let th = start + (end - start) * u;
                let (s, c) = th.sin_cos();
                let w = end - start;
                ([center[0] + semi[0] * c, center[1] + semi[1] * s, z], [-semi[0] * s * w, semi[1] * c * w, z])
            }
            BoundaryPiece::Bumped { normal, offset, amplitude, wavenumber, taper, s0, s1 } => {
                let t = perp2(&normal);
                let s = s0 + (s1 - s0) * u;
                let (b, db) = bump(s, amplitude, wavenumber, taper);
                let p = axpy(&axpy(&[T::zero(); 3], offset + b, &normal), s, &t);
                let v = axpy(&t, db, &normal);
                (p, [v[0] * (s1 - s0), v[1] * (s1 - s0), z])
            }
        }
    }
}

/// `A taper(s) sin(k s)` with `taper(s) = cos^2(pi s / (2 w))` on `|s| < w`; value, first and second derivative.
fn bump_full<T: Real>(s: T, a: T, k: T, w: T) -> (T, T, T) {
    if s.abs() >= w || a == T::zero() {
        return (T::zero(), T::zero(), T::zero());
    }
    let q = T::PI() / (w + w);
    let (sq, cq) = (q * s).sin_cos();
    let taper = cq * cq;
    let dtaper = -lit::<T>(2.0) * q * sq * cq;
    let ddtaper = -lit::<T>(2.0) * q * q * (cq * cq - sq * sq);
    let (sk, ck) = (k * s).sin_cos();
    let v = a * taper * sk;
    let dv = a * (dtaper * sk + taper * k * ck);
    let ddv = a * (ddtaper * sk + lit::<T>(2.0) * dtaper * k * ck - taper * k * k * sk);
    (v, dv, ddv)
}

fn bump<T: Real>(s: T, a: T, k: T, w: T) -> (T, T) {
    let (v, dv, _) = bump_full(s, a, k, w);
    (v, dv)
}

impl<T: Real> Shape<T> {
    pub fn ball(center: &[T], radius: T) -> Result<Self> {
        if !(radius > T::zero()) {
            return invalid("ball radius must be positive");
        }
        Ok(Shape::Ball { center: from_slice(center), radius })
    }

    pub fn halfspace(normal: &[T], offset: T) -> Result<Self> {
        let Some(n) = normalize(&from_slice(normal)) else {
            return invalid("halfspace normal must be nonzero");
        };
        Ok(Shape::HalfSpace { normal: n, offset })
    }

    pub fn axis_box(lo: &[T], hi: &[T]) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
            return invalid("axis box needs lo < hi in every coordinate");
        }
        Ok(Shape::AxisBox { lo: from_slice(lo), hi: from_slice(hi), dim: lo.len() })
    }

    /// Convex polygon; vertices are reordered counter-clockwise.
    pub fn polygon(vertices: &[[T; 2]]) -> Result<Self> {
        if vertices.len() < 3 {
            return invalid("polygon needs at least three vertices");
        }
        let mut v: Vec<Point<T>> = vertices.iter().map(|p| [p[0], p[1], T::zero()]).collect();
        let area = signed_area(&v);
        if area == T::zero() {
            return invalid("degenerate polygon");
        }
        if area < T::zero() {
            v.reverse();
        }
        let n = v.len();
        for i in 0..n {
            let a = sub(&v[(i + 1) % n], &v[i]);
            let b = sub(&v[(i + 2) % n], &v[(i + 1) % n]);
            if a[0] * b[1] - a[1] * b[0] < T::zero() {
                return invalid("polygon is not convex");
            }
        }
        Ok(Shape::Polygon { vertices: v })
    }

    pub fn ellipse(center: &[T], semi: [T; 2]) -> Result<Self> {
        if !(semi[0] > T::zero() && semi[1] > T::zero()) {
            return invalid("ellipse semi-axes must be positive");
        }
        Ok(Shape::Ellipse { center: from_slice(center), semi })
    }

    pub fn complement(self) -> Self {
        Shape::Complement(Box::new(self))
    }

    pub fn intersection(self, other: Self) -> Self {
        Shape::Intersection(vec![self, other])
    }

    pub fn union(self, other: Self) -> Self {
        Shape::Union(vec![self, other])
    }

    /// Translates by `v` (grid shapes are not supported).
    pub fn translated(&self, v: &[T]) -> Result<Self> {
        let v = from_slice(v);
        Ok(match self {
            Shape::Empty => Shape::Empty,
            Shape::Ball { center, radius } => Shape::Ball { center: crate::vector::add(center, &v), radius: *radius },
            Shape::HalfSpace { normal, offset } => Shape::HalfSpace { normal: *normal, offset: *offset + dot(normal, &v) },
            Shape::AxisBox { lo, hi, dim } => {
                Shape::AxisBox { lo: crate::vector::add(lo, &v), hi: crate::vector::add(hi, &v), dim: *dim }
            }
            Shape::Polygon { vertices } => {
                Shape::Polygon { vertices: vertices.iter().map(|p| crate::vector::add(p, &v)).collect() }
            }
            Shape::Ellipse { center, semi } => Shape::Ellipse { center: crate::vector::add(center, &v), semi: *semi },
            Shape::PerturbedHalfSpace { .. } | Shape::Grid(_) => {
                return Err(Error::Unsupported("translation of this shape".into()))
            }
            Shape::Complement(s) => Shape::Complement(Box::new(s.translated(&v)?)),
            Shape::Intersection(v2) => Shape::Intersection(v2.iter().map(|s| s.translated(&v)).collect::<Result<_>>()?),
            Shape::Union(v2) => Shape::Union(v2.iter().map(|s| s.translated(&v)).collect::<Result<_>>()?),
        })
    }

    /// Canonical level function; positive inside.
    pub fn level(&self, x: &Point<T>) -> T {
        match self {
            Shape::Empty => -T::one(),
            Shape::Ball { center, radius } => *radius - norm(&sub(x, center)),
            Shape::HalfSpace { normal, offset } => dot(x, normal) - *offset,
            Shape::AxisBox { lo, hi, dim } => box_signed_distance(x, lo, hi, *dim),
            Shape::Polygon { vertices } => polygon_signed_distance(x, vertices),
            Shape::Ellipse { center, semi } => {
                let a = (x[0] - center[0]) / semi[0];
                let b = (x[1] - center[1]) / semi[1];
                T::one() - a * a - b * b
            }
            Shape::PerturbedHalfSpace { normal, offset, amplitude, wavenumber, taper } => {
                let s = dot(x, &perp2(normal));
                dot(x, normal) - *offset - bump(s, *amplitude, *wavenumber, *taper).0
            }
            Shape::Grid(f) => {
                if Self::grid_contains(f, x) {
                    lit(0.5)
                } else {
                    lit(-0.5)
                }
            }
            Shape::Complement(s) => -s.level(x),
            Shape::Intersection(v) => v.iter().map(|s| s.level(x)).fold(T::infinity(), T::min),
            Shape::Union(v) => v.iter().map(|s| s.level(x)).fold(T::neg_infinity(), T::max),
        }
    }

    fn grid_contains(f: &GridField<T>, x: &Point<T>) -> bool {
        let g = f.grid();
        let mut i = [0isize; 3];
        for k in 0..g.dim() {
            let s = ((x[k] - g.origin()[k]) / g.spacing(k)).floor();
            i[k] = s.to_isize().unwrap_or(isize::MIN / 2);
        }
        f.at(i) > lit(0.5)
    }

    pub fn contains(&self, x: &Point<T>) -> bool {
        match self {
            Shape::Grid(f) => Self::grid_contains(f, x),
            Shape::Complement(s) => !s.contains(x),
            Shape::Intersection(v) => v.iter().all(|s| s.contains(x)),
            Shape::Union(v) => v.iter().any(|s| s.contains(x)),
            _ => self.level(x) > T::zero(),
        }
    }

    /// Exact signed distance to the boundary (positive inside), where available.
    pub fn signed_distance(&self, x: &Point<T>) -> Option<T> {
        match self {
            Shape::Ball { .. } | Shape::HalfSpace { .. } | Shape::AxisBox { .. } | Shape::Polygon { .. } => {
                Some(self.level(x))
            }
            Shape::Complement(s) => s.signed_distance(x).map(|v| -v),
            _ => None,
        }
    }

    /// Gradient of the level function.
    pub fn gradient(&self, x: &Point<T>) -> Point<T> {
        match self {
            Shape::Ball { center, .. } => {
                let r = sub(x, center);
                let n = norm(&r);
                if n == T::zero() {
                    [T::zero(); 3]
                } else {
                    [-r[0] / n, -r[1] / n, -r[2] / n]
                }
            }
            Shape::HalfSpace { normal, .. } => *normal,
            Shape::Ellipse { center, semi } => [
                -lit::<T>(2.0) * (x[0] - center[0]) / (semi[0] * semi[0]),
                -lit::<T>(2.0) * (x[1] - center[1]) / (semi[1] * semi[1]),
                T::zero(),
            ],
            Shape::PerturbedHalfSpace { normal, amplitude, wavenumber, taper, .. } => {
                let t = perp2(normal);
                let (_, db) = bump(dot(x, &t), *amplitude, *wavenumber, *taper);
                axpy(normal, -db, &t)
            }
            Shape::Complement(s) => {
                let g = s.gradient(x);
                [-g[0], -g[1], -g[2]]
            }
            _ => self.fd_gradient(x),
        }
    }

    /// Hessian of the level function.
    pub fn hessian(&self, x: &Point<T>) -> Mat<T> {
        let mut h = [[T::zero(); 3]; 3];
        match self {
            Shape::Ball { center, .. } => {
                let r = sub(x, center);
                let n = norm(&r);
                if n > T::zero() {
                    for i in 0..3 {
                        for j in 0..3 {
                            let id = if i == j { T::one() } else { T::zero() };
                            h[i][j] = -(id - r[i] * r[j] / (n * n)) / n;
                        }
                    }
                }
                h
            }
            Shape::HalfSpace { .. } => h,
            Shape::Ellipse { semi, .. } => {
                h[0][0] = -lit::<T>(2.0) / (semi[0] * semi[0]);
                h[1][1] = -lit::<T>(2.0) / (semi[1] * semi[1]);
                h
            }
            Shape::PerturbedHalfSpace { normal, amplitude, wavenumber, taper, .. } => {
                let t = perp2(normal);
                let (_, _, dd) = bump_full(dot(x, &t), *amplitude, *wavenumber, *taper);
                for i in 0..3 {
                    for j in 0..3 {
                        h[i][j] = -dd * t[i] * t[j];
                    }
                }
                h
            }
            Shape::Complement(s) => {
                let g = s.hessian(x);
                for i in 0..3 {
                    for j in 0..3 {
                        h[i][j] = -g[i][j];
                    }
                }
                h
            }
            _ => self.fd_hessian(x),
        }
    }

    fn fd_step(&self) -> T {
        lit(1e-5)
    }

    fn fd_gradient(&self, x: &Point<T>) -> Point<T> {
        let h = self.fd_step();
        let mut g = [T::zero(); 3];
        for k in 0..3 {
            let mut a = *x;
            let mut b = *x;
            a[k] = a[k] + h;
            b[k] = b[k] - h;
            g[k] = (self.level(&a) - self.level(&b)) / (h + h);
        }
        g
    }

    fn fd_hessian(&self, x: &Point<T>) -> Mat<T> {
        let h: T = lit(1e-4);
        let mut m = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut pp = *x;
                let mut pm = *x;
                let mut mp = *x;
                let mut mm = *x;
                pp[i] = pp[i] + h;
                pp[j] = pp[j] + h;
                pm[i] = pm[i] + h;
                pm[j] = pm[j] - h;
                mp[i] = mp[i] - h;
                mp[j] = mp[j] + h;
                mm[i] = mm[i] - h;
                mm[j] = mm[j] - h;
                m[i][j] = (self.level(&pp) - self.level(&pm) - self.level(&mp) + self.level(&mm)) / (lit::<T>(4.0) * h * h);
            }
        }
        m
    }

    /// Outer unit normal `-grad phi / |grad phi|`.
    pub fn outer_normal(&self, x: &Point<T>) -> Option<Point<T>> {
        let g = self.gradient(x);
        normalize(&[-g[0], -g[1], -g[2]])
    }

    /// Pieces of the planar boundary inside the disk of radius `bound` about the origin.
    ///
    /// Lines are clipped to the disk; closed curves are returned whole.
    pub fn boundary_pieces(&self, bound: T) -> Result<Vec<BoundaryPiece<T>>> {
        let z = T::zero();
        Ok(match self {
            Shape::Empty => Vec::new(),
            Shape::Ball { center, radius } => {
                vec![BoundaryPiece::Arc { center: *center, radius: *radius, start: z, end: T::PI() * lit(2.0) }]
            }
            Shape::HalfSpace { normal, offset } => {
                let foot = crate::vector::scale(normal, *offset);
                let half2 = bound * bound - *offset * *offset;
                if half2 <= z {
                    Vec::new()
                } else {
                    let h = half2.sqrt();
                    let t = perp2(normal);
                    vec![BoundaryPiece::Segment { a: axpy(&foot, -h, &t), b: axpy(&foot, h, &t) }]
                }
            }
            Shape::PerturbedHalfSpace { normal, offset, amplitude, wavenumber, taper } => {
                let half2 = bound * bound - *offset * *offset;
                if half2 <= z {
                    Vec::new()
                } else {
                    let h = half2.sqrt() + amplitude.abs();
                    vec![BoundaryPiece::Bumped {
                        normal: *normal,
                        offset: *offset,
                        amplitude: *amplitude,
                        wavenumber: *wavenumber,
                        taper: *taper,
                        s0: -h,
                        s1: h,
                    }]
                }
            }
            Shape::AxisBox { lo, hi, dim } if *dim == 2 => {
                let c = [[lo[0], lo[1], z], [hi[0], lo[1], z], [hi[0], hi[1], z], [lo[0], hi[1], z]];
                (0..4).map(|i| BoundaryPiece::Segment { a: c[i], b: c[(i + 1) % 4] }).collect()
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                (0..n).map(|i| BoundaryPiece::Segment { a: vertices[i], b: vertices[(i + 1) % n] }).collect()
            }
            Shape::Ellipse { center, semi } => {
                vec![BoundaryPiece::EllipseArc { center: *center, semi: *semi, start: z, end: T::PI() * lit(2.0) }]
            }
            Shape::Complement(s) => s.boundary_pieces(bound)?,
            _ => return Err(Error::Unsupported("boundary parameterization of this shape".into())),
        })
    }

    /// Height `t` in `[-delta, delta]` with `x + z - t n` on the boundary, for outer normal `n` at `x`.
    pub fn chart_height(&self, x: &Point<T>, n: &Point<T>, z: &Point<T>, delta: T) -> Option<T> {
        let base = crate::vector::add(x, z);
        let f = |t: T| self.level(&axpy(&base, -t, n));
        let (mut a, mut b) = (-delta, delta);
        let (fa, fb) = (f(a), f(b));
        if fa > T::zero() || fb <= T::zero() {
            return None;
        }
        for _ in 0..200 {
            let m = (a + b) * lit(0.5);
            if m <= a || m >= b {
                break;
            }
            if f(m) > T::zero() {
                b = m;
            } else {
                a = m;
            }
        }
        Some((a + b) * lit(0.5))
    }

    /// Point on the planar boundary at fraction `u` of its total length (within `bound`).
    pub fn boundary_point(&self, u: T, bound: T) -> Result<Point<T>> {
        let pieces = self.boundary_pieces(bound)?;
        let gl = crate::quadrature::GaussLegendre::<T>::new(16);
        let lengths: Vec<T> = pieces.iter().map(|p| gl.integrate(T::zero(), T::one(), |s| norm(&p.eval(s).1))).collect();
        let total: T = lengths.iter().copied().fold(T::zero(), |a, b| a + b);
        if total == T::zero() {
            return Err(Error::Invalid("shape has no boundary".into()));
        }
        let mut target = u.max(T::zero()).min(T::one()) * total;
        for (p, &l) in pieces.iter().zip(&lengths) {
            if target <= l {
                // Invert arc length by bisection on the parameter.
                let (mut a, mut b) = (T::zero(), T::one());
                for _ in 0..60 {
                    let m = (a + b) * lit(0.5);
                    let lm = gl.integrate(T::zero(), m, |s| norm(&p.eval(s).1));
                    if lm < target {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                return Ok(p.eval((a + b) * lit(0.5)).0);
            }
            target = target - l;
        }
        Ok(pieces.last().unwrap().eval(T::one()).0)
    }
}

fn signed_area<T: Real>(v: &[Point<T>]) -> T {
    let n = v.len();
    let mut a = T::zero();
    for i in 0..n {
        let p = v[i];
        let q = v[(i + 1) % n];
        a = a + p[0] * q[1] - q[0] * p[1];
    }
    a * lit(0.5)
}

fn box_signed_distance<T: Real>(x: &Point<T>, lo: &Point<T>, hi: &Point<T>, dim: usize) -> T {
    let mut inside = T::infinity();
    let mut outside2 = T::zero();
    let mut is_inside = true;
    for k in 0..dim {
        let a = x[k] - lo[k];
        let b = hi[k] - x[k];
        inside = inside.min(a.min(b));
        let o = (-a).max(-b).max(T::zero());
        if o > T::zero() {
            is_inside = false;
        }
        outside2 = outside2 + o * o;
    }
    if is_inside {
        inside
    } else {
        -outside2.sqrt()
    }
}

fn polygon_signed_distance<T: Real>(x: &Point<T>, v: &[Point<T>]) -> T {
    let n = v.len();
    let mut inside = T::infinity();
    let mut all_in = true;
    let mut best = T::infinity();
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        let e = sub(&b, &a);
        let len = norm(&e);
        let inward = [-e[1] / len, e[0] / len, T::zero()];
        let s = dot(&sub(x, &a), &inward);
        inside = inside.min(s);
        if s < T::zero() {
            all_in = false;
        }
        let t = (dot(&sub(x, &a), &e) / (len * len)).max(T::zero()).min(T::one());
        best = best.min(norm(&sub(x, &axpy(&a, t, &e))));
    }
    if all_in {
        inside
    } else {
        -best
    }
}
