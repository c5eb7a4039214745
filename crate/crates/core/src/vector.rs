//! Fixed-size points in up to three dimensions; unused trailing entries are zero.

use crate::scalar::Real;

pub type Point<T> = [T; 3];

#[inline]
pub fn zero<T: Real>() -> Point<T> {
    [T::zero(); 3]
}

pub fn from_slice<T: Real>(v: &[T]) -> Point<T> {
    let mut p = zero();
    for (dst, &src) in p.iter_mut().zip(v) {
        *dst = src;
    }
    p
}

#[inline]
pub fn dot<T: Real>(a: &Point<T>, b: &Point<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm<T: Real>(a: &Point<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn add<T: Real>(a: &Point<T>, b: &Point<T>) -> Point<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: &Point<T>, b: &Point<T>) -> Point<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: &Point<T>, s: T) -> Point<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn axpy<T: Real>(x: &Point<T>, s: T, v: &Point<T>) -> Point<T> {
    [x[0] + s * v[0], x[1] + s * v[1], x[2] + s * v[2]]
}

/// Unit vector, or `None` for a (numerically) zero input.
pub fn normalize<T: Real>(a: &Point<T>) -> Option<Point<T>> {
    let n = norm(a);
    if n > T::min_positive_value() && n.is_finite() {
        Some(scale(a, T::one() / n))
    } else {
        None
    }
}

/// Two unit vectors completing `e` to an orthonormal frame of R^3.
pub fn orthonormal_complement<T: Real>(e: &Point<T>) -> (Point<T>, Point<T>) {
    let pick = if e[0].abs() < T::from_f64(0.9).unwrap() {
        [T::one(), T::zero(), T::zero()]
    } else {
        [T::zero(), T::one(), T::zero()]
    };
    let u = normalize(&sub(&pick, &scale(e, dot(&pick, e)))).unwrap_or(pick);
    let v = [
        e[1] * u[2] - e[2] * u[1],
        e[2] * u[0] - e[0] * u[2],
        e[0] * u[1] - e[1] * u[0],
    ];
    (u, v)
}

/// Counter-clockwise rotation by a quarter turn in the plane.
#[inline]
pub fn perp2<T: Real>(e: &Point<T>) -> Point<T> {
    [-e[1], e[0], T::zero()]
}

/// Symmetric 3x3 matrices as row-major arrays.
pub type Mat<T> = [[T; 3]; 3];

pub fn mat_zero<T: Real>() -> Mat<T> {
    [[T::zero(); 3]; 3]
}

pub fn outer<T: Real>(a: &Point<T>, b: &Point<T>) -> Mat<T> {
    let mut m = mat_zero();
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i] * b[j];
        }
    }
    m
}

pub fn mat_vec<T: Real>(m: &Mat<T>, v: &Point<T>) -> Point<T> {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

/// Trace of the product `A B`.
pub fn trace_product<T: Real>(a: &Mat<T>, b: &Mat<T>) -> T {
    let mut s = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            s = s + a[i][j] * b[j][i];
        }
    }
    s
}
