//! Gauss-Legendre rules, radial panel rules and direction rules on spheres.

use crate::scalar::{from_usize, lit, Real};
use crate::vector::{orthonormal_complement, Point};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> GaussLegendre<T> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0f64; n];
        let mut weights = vec![0.0f64; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self {
            nodes: nodes.into_iter().map(lit).collect(),
            weights: weights.into_iter().map(lit).collect(),
        }
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on(&self, a: T, b: T) -> impl Iterator<Item = (T, T)> + '_ {
        let half = (b - a) * lit(0.5);
        let mid = (a + b) * lit(0.5);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: T, b: T, mut f: impl FnMut(T) -> T) -> T {
        let mut s = T::zero();
        for (x, w) in self.on(a, b) {
            s = s + w * f(x);
        }
        s
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule on `[0, r_max]` in the radial variable.
#[derive(Clone, Debug)]
pub struct RadialRule<T> {
    /// `(r, w)` pairs ordered by increasing `r`.
    pub nodes: Vec<(T, T)>,
    /// Left end of the first panel; `[0, r_min]` is not covered by `nodes`.
    pub r_min: T,
    pub r_max: T,
}

impl<T: Real> RadialRule<T> {
    /// Geometric panels of ratio at most two from `r_min` to `r_max`, split at `breaks`.
    pub fn geometric(r_min: T, r_max: T, breaks: &[T], order: usize) -> Self {
        let mut cuts = vec![r_min];
        let mut r = r_min;
        let two: T = lit(2.0);
        while r * two < r_max {
            r = r * two;
            cuts.push(r);
        }
        cuts.push(r_max);
        Self::from_cuts(cuts, breaks, order, r_min, r_max)
    }

    /// Panels of equal length on `[0, r_max]`, split at `breaks`.
    pub fn uniform(r_max: T, breaks: &[T], panels: usize, order: usize) -> Self {
        let cuts = (0..=panels)
            .map(|i| r_max * from_usize::<T>(i) / from_usize::<T>(panels))
            .collect();
        Self::from_cuts(cuts, breaks, order, T::zero(), r_max)
    }

    fn from_cuts(mut cuts: Vec<T>, breaks: &[T], order: usize, r_min: T, r_max: T) -> Self {
        for &b in breaks {
            if b > r_min && b < r_max {
                cuts.push(b);
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() <= T::epsilon() * b.abs());
        let gl = GaussLegendre::<T>::new(order);
        let mut nodes = Vec::with_capacity(cuts.len() * order);
        for w in cuts.windows(2) {
            if w[1] > w[0] {
                nodes.extend(gl.on(w[0], w[1]));
            }
        }
        Self { nodes, r_min, r_max }
    }
}

/// Surface measure of the unit sphere in R^d.
pub fn sphere_area<T: Real>(d: usize) -> T {
    match d {
        1 => lit(2.0),
        2 => T::PI() * lit(2.0),
        3 => T::PI() * lit(4.0),
        _ => panic!("dimension {d} not supported"),
    }
}

/// Directions with weights summing to the sphere area.
///
/// `n` controls resolution: `n` equal angles in the plane, `n` polar by `2n` azimuthal nodes in space.
pub fn sphere_rule<T: Real>(d: usize, n: usize) -> Vec<(Point<T>, T)> {
    aligned_sphere_rule(d, &[T::one(), T::zero(), T::zero()], n, false)
}

/// Directions in a frame whose pole is `axis`.
///
/// With `split` set, the rule has panel breaks on the great sphere orthogonal to `axis`,
/// which keeps integrands with a kink there (like `|z . axis|`) spectrally accurate.
pub fn aligned_sphere_rule<T: Real>(d: usize, axis: &Point<T>, n: usize, split: bool) -> Vec<(Point<T>, T)> {
    let zero = T::zero();
    match d {
        1 => {
            let s = axis[0].signum();
            vec![([s, zero, zero], T::one()), ([-s, zero, zero], T::one())]
        }
        2 => {
            let base = axis[1].atan2(axis[0]);
            if split {
                let gl = GaussLegendre::<T>::new(n);
                let half = T::FRAC_PI_2();
                let mut out = Vec::with_capacity(2 * n);
                for (lo, hi) in [(-half, half), (half, half * lit(3.0))] {
                    for (t, w) in gl.on(lo, hi) {
                        let a = base + t;
                        out.push(([a.cos(), a.sin(), zero], w));
                    }
                }
                out
            } else {
                let step = T::PI() * lit(2.0) / from_usize::<T>(n);
                (0..n)
                    .map(|j| {
                        let a = base + step * (from_usize::<T>(j) + lit(0.5));
                        ([a.cos(), a.sin(), zero], step)
                    })
                    .collect()
            }
        }
        3 => {
            let (u, v) = orthonormal_complement(axis);
            let gl = GaussLegendre::<T>::new(n);
            let polar: Vec<(T, T)> = if split {
                gl.on(-T::one(), zero).chain(gl.on(zero, T::one())).collect()
            } else {
                gl.on(-T::one(), T::one()).collect()
            };
            let m = 2 * n;
            let step = T::PI() * lit(2.0) / from_usize::<T>(m);
            let mut out = Vec::with_capacity(polar.len() * m);
            for &(c, wc) in &polar {
                let s = (T::one() - c * c).max(zero).sqrt();
                for j in 0..m {
                    let a = step * (from_usize::<T>(j) + lit(0.5));
                    let (sa, ca) = a.sin_cos();
                    let mut p = [zero; 3];
                    for k in 0..3 {
                        p[k] = c * axis[k] + s * (ca * u[k] + sa * v[k]);
                    }
                    out.push((p, wc * step));
                }
            }
            out
        }
        _ => panic!("dimension {d} not supported"),
    }
}

/// Directions of the unit sphere inside the hyperplane orthogonal to `e` (an `S^{d-2}`).
pub fn equator_rule<T: Real>(d: usize, e: &Point<T>, n: usize) -> Vec<(Point<T>, T)> {
    let zero = T::zero();
    match d {
        1 => Vec::new(),
        2 => {
            let t = [-e[1], e[0], zero];
            vec![(t, T::one()), ([e[1], -e[0], zero], T::one())]
        }
        3 => {
            let (u, v) = orthonormal_complement(e);
            let step = T::PI() * lit(2.0) / from_usize::<T>(n);
            (0..n)
                .map(|j| {
                    let a = step * (from_usize::<T>(j) + lit(0.5));
                    let (sa, ca) = a.sin_cos();
                    ([ca * u[0] + sa * v[0], ca * u[1] + sa * v[1], ca * u[2] + sa * v[2]], step)
                })
                .collect()
        }
        _ => panic!("dimension {d} not supported"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let gl = GaussLegendre::<f64>::new(6);
        for k in 0..12u32 {
            let got = gl.integrate(0.0, 2.0, |x| x.powi(k as i32));
            let want = 2f64.powi(k as i32 + 1) / (k as f64 + 1.0);
            assert!((got - want).abs() < 1e-12 * want, "k={k}: {got} vs {want}");
        }
    }

    #[test]
    fn geometric_rule_integrates_power_laws() {
        let rule = RadialRule::<f64>::geometric(1e-6, 1.0, &[0.3], 8);
        let s: f64 = rule.nodes.iter().map(|&(r, w)| w * r.powf(-0.5)).sum();
        let want = 2.0 * (1.0 - 1e-3);
        assert!((s - want).abs() < 1e-10, "{s}");
    }

    #[test]
    fn sphere_rules_carry_the_sphere_area() {
        for d in 1..=3 {
            for split in [false, true] {
                let axis = crate::vector::normalize(&[0.3, -0.4, if d == 3 { 0.5 } else { 0.0 }]).unwrap();
                let axis = if d == 1 { [1.0, 0.0, 0.0] } else { axis };
                let rule = aligned_sphere_rule::<f64>(d, &axis, 8, split);
                let s: f64 = rule.iter().map(|r| r.1).sum();
                assert!((s - sphere_area::<f64>(d)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_rule_integrates_absolute_projection() {
        // Integral of |theta . e| over S^2 is 2 pi.
        let e = [0.0, 0.6, 0.8];
        let rule = aligned_sphere_rule::<f64>(3, &e, 4, true);
        let s: f64 = rule
            .iter()
            .map(|(t, w)| w * crate::vector::dot(t, &e).abs())
            .sum();
        assert!((s - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }
}
