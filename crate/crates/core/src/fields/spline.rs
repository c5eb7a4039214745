//! Interpolating cubic B-spline reconstruction of grid fields.

use crate::fields::GridField;
use crate::scalar::{from_usize, lit, Real};
use crate::vector::Point;

/// Interpolating cubic B-spline of a grid field, equal to the extension constant far outside the box.
pub struct CubicSpline<T> {
    dim: usize,
    res: [usize; 3],
    origin: [T; 3],
    inv_h: [T; 3],
    coeffs: Vec<T>,
    ext: T,
    /// Knot cells `[-2, n]` per axis whose stencil sees coefficients off the extension.
    active: Vec<bool>,
}

impl<T: Real> CubicSpline<T> {
    pub fn new(u: &GridField<T>) -> Self {
        let g = u.grid();
        let d = g.dim();
        let mut res = [1usize; 3];
        let mut origin = [T::zero(); 3];
        let mut inv_h = [T::one(); 3];
        for k in 0..d {
            res[k] = g.resolution()[k];
            origin[k] = g.origin()[k];
            inv_h[k] = T::one() / g.spacing(k);
        }
        let ext = u.extension();
        let mut coeffs = u.values().to_vec();
        let stride = [1, res[0], res[0] * res[1]];
        for k in 0..d {
            let n = res[k];
            let lines: Vec<usize> = (0..coeffs.len()).filter(|&i| (i / stride[k]) % n == 0).collect();
            for start in lines {
                let rhs: Vec<T> = (0..n).map(|j| coeffs[start + j * stride[k]]).collect();
                for (j, v) in solve_prefilter(&rhs, ext).into_iter().enumerate() {
                    coeffs[start + j * stride[k]] = v;
                }
            }
        }
        let mut spline = Self { dim: d, res, origin, inv_h, coeffs, ext, active: Vec::new() };
        spline.active = spline.mark_active();
        spline
    }

    fn mark_active(&self) -> Vec<bool> {
        let d = self.dim;
        let scale = self.coeffs.iter().fold(T::one(), |m, c| m.max(c.abs()));
        let tol = lit::<T>(1e-14) * scale;
        let span = |k: usize| if k < d { self.res[k] + 3 } else { 1 };
        let mut active = vec![false; span(0) * span(1) * span(2)];
        for (i, c) in self.coeffs.iter().enumerate() {
            if (*c - self.ext).abs() <= tol {
                continue;
            }
            let at = [i % self.res[0], (i / self.res[0]) % self.res[1], i / (self.res[0] * self.res[1])];
            // Coefficient `m` feeds knot cells `m - 2 ..= m + 1`, stored at offset 2.
            let range = |k: usize| if k < d { at[k]..at[k] + 4 } else { 0..1 };
            for c in range(2) {
                for b in range(1) {
                    for a in range(0) {
                        active[a + span(0) * (b + span(1) * c)] = true;
                    }
                }
            }
        }
        active
    }

    /// Whether the knot cell with lower knot `j` can be nonconstant.
    pub fn is_active(&self, j: [isize; 3]) -> bool {
        let d = self.dim;
        let mut flat = 0usize;
        let mut stride = 1usize;
        for k in 0..d {
            let o = j[k] + 2;
            let n = self.res[k] + 3;
            if o < 0 || o as usize >= n {
                return false;
            }
            flat += o as usize * stride;
            stride *= n;
        }
        self.active[flat]
    }

    fn coeff(&self, i: [isize; 3]) -> T {
        for k in 0..3 {
            if i[k] < 0 || i[k] as usize >= self.res[k] {
                return self.ext;
            }
        }
        self.coeffs[i[0] as usize + self.res[0] * (i[1] as usize + self.res[1] * i[2] as usize)]
    }

    /// Value, gradient and Hessian at `x`.
    pub fn eval(&self, x: &Point<T>, order: usize) -> (T, Point<T>, [[T; 3]; 3]) {
        let d = self.dim;
        let mut base = [0isize; 3];
        let mut w = [[[T::zero(); 4]; 3]; 3];
        for k in 0..3 {
            if k >= d {
                w[0][k] = [T::zero(), T::one(), T::zero(), T::zero()];
                continue;
            }
            let s = (x[k] - self.origin[k]) * self.inv_h[k] - lit(0.5);
            let f = s.floor();
            let fi = f.max(lit(-4.0)).min(from_usize::<T>(self.res[k] + 4));
            base[k] = fi.to_isize().unwrap_or(0);
            let t = if f == fi { s - f } else { T::zero() };
            let (v, dv, d2v) = bspline(t);
            let ih = self.inv_h[k];
            w[0][k] = v;
            w[1][k] = dv.map(|a| a * ih);
            w[2][k] = d2v.map(|a| a * ih * ih);
        }
        let taps = |k: usize| if k < d { 4 } else { 1 };
        let first = |k: usize| if k < d { 0 } else { 1 };
        let mut val = T::zero();
        let mut grad = [T::zero(); 3];
        let mut hess = [[T::zero(); 3]; 3];
        for c in first(2)..first(2) + taps(2) {
            for b in first(1)..first(1) + taps(1) {
                for a in first(0)..first(0) + taps(0) {
                    let idx = [a, b, c];
                    let mut at = [0isize; 3];
                    for k in 0..3 {
                        at[k] = if k < d { base[k] + idx[k] as isize - 1 } else { 0 };
                    }
                    let v = self.coeff(at);
                    if v == T::zero() {
                        continue;
                    }
                    let weight = |orders: [usize; 3]| (0..3).fold(T::one(), |p, k| p * w[orders[k]][k][idx[k]]);
                    val = val + v * weight([0, 0, 0]);
                    if order >= 1 {
                        for i in 0..d {
                            let mut o = [0; 3];
                            o[i] = 1;
                            grad[i] = grad[i] + v * weight(o);
                        }
                    }
                    if order >= 2 {
                        for i in 0..d {
                            for j in i..d {
                                let mut o = [0; 3];
                                o[i] += 1;
                                o[j] += 1;
                                hess[i][j] = hess[i][j] + v * weight(o);
                            }
                        }
                    }
                }
            }
        }
        for i in 0..3 {
            for j in 0..i {
                hess[i][j] = hess[j][i];
            }
        }
        (val, grad, hess)
    }

    pub fn value(&self, x: &Point<T>) -> T {
        let d = self.dim;
        let mut base = [0isize; 3];
        let mut w = [[T::zero(), T::one(), T::zero(), T::zero()]; 3];
        let mut inside = true;
        for k in 0..d {
            let s = (x[k] - self.origin[k]) * self.inv_h[k] - lit(0.5);
            let f = s.floor();
            let fi = f.max(lit(-4.0)).min(from_usize::<T>(self.res[k] + 4));
            base[k] = fi.to_isize().unwrap_or(0);
            let t = if f == fi { s - f } else { T::zero() };
            let u = T::one() - t;
            let t2 = t * t;
            let sixth = lit::<T>(1.0 / 6.0);
            w[k] = [
                u * u * u * sixth,
                (lit::<T>(3.0) * t2 * t - lit::<T>(6.0) * t2 + lit(4.0)) * sixth,
                (lit::<T>(-3.0) * t2 * t + lit::<T>(3.0) * (t2 + t) + T::one()) * sixth,
                t2 * t * sixth,
            ];
            inside &= base[k] >= 1 && base[k] + 2 < self.res[k] as isize;
        }
        let taps = |k: usize| if k < d { 0..4 } else { 1..2 };
        let mut val = T::zero();
        for c in taps(2) {
            for b in taps(1) {
                let wbc = w[1][b] * w[2][c];
                let j = if d > 1 { base[1] + b as isize - 1 } else { 0 };
                let l = if d > 2 { base[2] + c as isize - 1 } else { 0 };
                let mut row = T::zero();
                if inside {
                    let start = (base[0] - 1) as usize + self.res[0] * (j as usize + self.res[1] * l as usize);
                    let cs = &self.coeffs[start..start + 4];
                    for a in 0..4 {
                        row = row + w[0][a] * cs[a];
                    }
                } else {
                    for a in taps(0) {
                        let i = if d > 0 { base[0] + a as isize - 1 } else { 0 };
                        row = row + w[0][a] * self.coeff([i, j, l]);
                    }
                }
                val = val + wbc * row;
            }
        }
        val
    }
}

/// Cubic B-spline weights and their first two derivatives for the stencil `[-1, 0, 1, 2]`.
fn bspline<T: Real>(t: T) -> ([T; 4], [T; 4], [T; 4]) {
    let sixth = lit::<T>(1.0 / 6.0);
    let half = lit::<T>(0.5);
    let s = T::one() - t;
    let t2 = t * t;
    let t3 = t2 * t;
    let v = [
        s * s * s * sixth,
        (lit::<T>(3.0) * t3 - lit::<T>(6.0) * t2 + lit(4.0)) * sixth,
        (lit::<T>(-3.0) * t3 + lit::<T>(3.0) * t2 + lit::<T>(3.0) * t + T::one()) * sixth,
        t3 * sixth,
    ];
    let dv = [
        -s * s * half,
        (lit::<T>(3.0) * t2 - lit::<T>(4.0) * t) * half,
        (lit::<T>(-3.0) * t2 + t + t + T::one()) * half,
        t2 * half,
    ];
    let d2v = [s, lit::<T>(3.0) * t - lit(2.0), T::one() - lit::<T>(3.0) * t, t];
    (v, dv, d2v)
}

/// Solves `(c[i-1] + 4 c[i] + c[i+1]) / 6 = rhs[i]` with `c = ext` outside.
fn solve_prefilter<T: Real>(rhs: &[T], ext: T) -> Vec<T> {
    let n = rhs.len();
    let sixth = lit::<T>(1.0 / 6.0);
    let diag = lit::<T>(4.0 / 6.0);
    let mut b: Vec<T> = rhs.to_vec();
    b[0] = b[0] - ext * sixth;
    b[n - 1] = b[n - 1] - ext * sixth;
    let mut cp = vec![T::zero(); n];
    let mut x = vec![T::zero(); n];
    cp[0] = sixth / diag;
    x[0] = b[0] / diag;
    for i in 1..n {
        let m = diag - sixth * cp[i - 1];
        cp[i] = sixth / m;
        x[i] = (b[i] - sixth * x[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        x[i] = x[i] - cp[i] * x[i + 1];
    }
    x
}
