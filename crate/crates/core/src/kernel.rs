//! Even, nonnegative interaction kernels and their moments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{aligned_sphere_rule, equator_rule, sphere_area, sphere_rule, GaussLegendre, RadialRule};
use crate::scalar::{from_usize, lit, pairwise_sum, to_f64, Extended, Real};
use crate::vector::{dot, norm, normalize, Point};

/// Serializable description of a kernel; all parameters in `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub family: FamilySpec,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stretch: Option<StretchSpec>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    /// `|z|^{-d-sigma}`, cut off beyond `cutoff` when given.
    FractionalTruncated {
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cutoff: Option<f64>,
    },
    BallIndicator { radius: f64 },
    AnnulusIndicator { inner: f64, outer: f64 },
    /// `exp(-|z|^2 / (2 width^2))`.
    Gaussian { width: f64 },
    /// `|z|^{-d-s} exp(-decay |z|)`.
    ExponentialFractional { s: f64, decay: f64 },
    /// Piecewise-linear radial profile, zero beyond the last radius.
    CustomRadial { radii: Vec<f64>, values: Vec<f64> },
    /// `2 int_0^1 (1 - r) r^{-d} G(z / r) dr` for the base kernel `G`.
    Effective { base: Box<KernelSpec> },
}

/// Anisotropic stretch: the profile is evaluated at `|D R^T z|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StretchSpec {
    pub factors: Vec<f64>,
    #[serde(default)]
    pub angle: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family<T> {
    FractionalTruncated { sigma: T, cutoff: Option<T> },
    BallIndicator { radius: T },
    AnnulusIndicator { inner: T, outer: T },
    Gaussian { width: T },
    ExponentialFractional { s: T, decay: T },
    CustomRadial { radii: Vec<T>, values: Vec<T> },
    Effective { base: Box<Kernel<T>> },
}

#[derive(Clone, Debug, PartialEq)]
struct Stretch<T> {
    factors: [T; 3],
    cos: T,
    sin: T,
    angle: T,
}

/// How the kernel behaves at infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tail<T> {
    /// Zero beyond the support radius.
    Compact(T),
    /// Negligible (below `1e-17` relative) beyond the radius.
    Truncated(T),
    /// Decays like `|z|^{-d-decay}`; integrals are truncated at the radius with an analytic remainder.
    PowerLaw { radius: T, decay: T },
}

impl<T: Real> Tail<T> {
    pub fn radius(&self) -> T {
        match *self {
            Tail::Compact(r) | Tail::Truncated(r) => r,
            Tail::PowerLaw { radius, .. } => radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Kernel<T> {
    dim: usize,
    family: Family<T>,
    amplitude: T,
    scale: T,
    stretch: Option<Stretch<T>>,
}

impl<T: Real> Kernel<T> {
    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        if !(1..=3).contains(&spec.dim) {
            return invalid(format!("dimension {} not in 1..=3", spec.dim));
        }
        if !(spec.amplitude > 0.0 && spec.amplitude.is_finite()) {
            return invalid("amplitude must be positive");
        }
        if !(spec.scale > 0.0 && spec.scale.is_finite()) {
            return invalid("scale must be positive");
        }
        let pos = |x: f64, what: &str| -> Result<T> {
            if x > 0.0 && x.is_finite() {
                Ok(lit(x))
            } else {
                invalid(format!("{what} must be positive and finite, got {x}"))
            }
        };
        let family = match &spec.family {
            FamilySpec::FractionalTruncated { sigma, cutoff } => {
                if !(*sigma > 0.0 && *sigma < 1.0) {
                    return invalid(format!("sigma must lie in (0, 1), got {sigma}"));
                }
                Family::FractionalTruncated {
                    sigma: lit(*sigma),
                    cutoff: cutoff.map(|c| pos(c, "cutoff")).transpose()?,
                }
            }
            FamilySpec::BallIndicator { radius } => Family::BallIndicator { radius: pos(*radius, "radius")? },
            FamilySpec::AnnulusIndicator { inner, outer } => {
                if !(*inner >= 0.0 && outer > inner && outer.is_finite()) {
                    return invalid("annulus needs 0 <= inner < outer");
                }
                Family::AnnulusIndicator { inner: lit(*inner), outer: lit(*outer) }
            }
            FamilySpec::Gaussian { width } => Family::Gaussian { width: pos(*width, "width")? },
            FamilySpec::ExponentialFractional { s, decay } => {
                if !(*s > 0.0 && *s < 1.0) {
                    return invalid(format!("tail exponent must lie in (0, 1), got {s}"));
                }
                Family::ExponentialFractional { s: lit(*s), decay: pos(*decay, "decay")? }
            }
            FamilySpec::CustomRadial { radii, values } => {
                if radii.is_empty() || radii.len() != values.len() {
                    return invalid("custom profile needs matching, nonempty radii and values");
                }
                if radii[0] < 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
                    return invalid("custom radii must be nonnegative and increasing");
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return invalid("custom values must be finite and nonnegative");
                }
                Family::CustomRadial {
                    radii: radii.iter().map(|&r| lit(r)).collect(),
                    values: values.iter().map(|&v| lit(v)).collect(),
                }
            }
            FamilySpec::Effective { base } => {
                if base.dim != spec.dim {
                    return invalid("effective kernel and its base must share the dimension");
                }
                Family::Effective { base: Box::new(Kernel::from_spec(base)?) }
            }
        };
        let stretch = match &spec.stretch {
            None => None,
            Some(s) => {
                if s.factors.len() != spec.dim || s.factors.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
                    return invalid("stretch needs one positive factor per dimension");
                }
                if spec.dim != 2 && s.angle != 0.0 {
                    return invalid("stretch rotation is only supported in the plane");
                }
                let mut factors = [T::one(); 3];
                for (f, &g) in factors.iter_mut().zip(&s.factors) {
                    *f = lit(g);
                }
                let angle: T = lit(s.angle);
                Some(Stretch { factors, cos: angle.cos(), sin: angle.sin(), angle })
            }
        };
        Ok(Self { dim: spec.dim, family, amplitude: lit(spec.amplitude), scale: lit(spec.scale), stretch })
    }

    pub fn spec(&self) -> KernelSpec {
        let f = to_f64::<T>;
        let family = match &self.family {
            Family::FractionalTruncated { sigma, cutoff } => {
                FamilySpec::FractionalTruncated { sigma: f(*sigma), cutoff: cutoff.map(f) }
            }
            Family::BallIndicator { radius } => FamilySpec::BallIndicator { radius: f(*radius) },
            Family::AnnulusIndicator { inner, outer } => {
                FamilySpec::AnnulusIndicator { inner: f(*inner), outer: f(*outer) }
            }
            Family::Gaussian { width } => FamilySpec::Gaussian { width: f(*width) },
            Family::ExponentialFractional { s, decay } => {
                FamilySpec::ExponentialFractional { s: f(*s), decay: f(*decay) }
            }
            Family::CustomRadial { radii, values } => FamilySpec::CustomRadial {
                radii: radii.iter().map(|&r| f(r)).collect(),
                values: values.iter().map(|&v| f(v)).collect(),
            },
            Family::Effective { base } => FamilySpec::Effective { base: Box::new(base.spec()) },
        };
        KernelSpec {
            dim: self.dim,
            family,
            amplitude: f(self.amplitude),
            scale: f(self.scale),
            stretch: self.stretch.as_ref().map(|s| StretchSpec {
                factors: s.factors[..self.dim].iter().map(|&x| f(x)).collect(),
                angle: f(s.angle),
            }),
        }
    }

    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        Self::from_spec(&KernelSpec {
            dim,
            family: FamilySpec::BallIndicator { radius },
            amplitude: 1.0,
            scale: 1.0,
            stretch: None,
        })
    }

    pub fn fractional(dim: usize, sigma: f64, cutoff: Option<f64>) -> Result<Self> {
        Self::from_spec(&KernelSpec {
            dim,
            family: FamilySpec::FractionalTruncated { sigma, cutoff },
            amplitude: 1.0,
            scale: 1.0,
            stretch: None,
        })
    }

    pub fn gaussian(dim: usize, width: f64) -> Result<Self> {
        Self::from_spec(&KernelSpec {
            dim,
            family: FamilySpec::Gaussian { width },
            amplitude: 1.0,
            scale: 1.0,
            stretch: None,
        })
    }

    /// The averaged kernel attached to `self` by the rate functional's lower bound.
    pub fn effective(&self) -> Self {
        Self {
            dim: self.dim,
            family: Family::Effective { base: Box::new(self.clone()) },
            amplitude: T::one(),
            scale: T::one(),
            stretch: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &Family<T> {
        &self.family
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn amplitude(&self) -> T {
        self.amplitude
    }

    /// `K_eps(z) = eps^{-d} K(z / eps)`; composing rescales multiplies the factors.
    pub fn rescaled(&self, eps: T) -> Result<Self> {
        if !(eps > T::zero() && eps.is_finite()) {
            return invalid(format!("rescale factor must be positive, got {eps}"));
        }
        let mut k = self.clone();
        k.scale = k.scale * eps;
        Ok(k)
    }

    pub fn is_radial(&self) -> bool {
        let own = match &self.stretch {
            None => true,
            Some(s) => s.factors[..self.dim].iter().all(|&f| f == s.factors[0]),
        };
        own && match &self.family {
            Family::Effective { base } => base.is_radial(),
            _ => true,
        }
    }

    /// Exponent `sigma` with `K ~ |z|^{-d-sigma}` at the origin; `-d` for bounded kernels.
    pub fn origin_exponent(&self) -> T {
        let bounded = -from_usize::<T>(self.dim);
        match &self.family {
            Family::FractionalTruncated { sigma, .. } => *sigma,
            Family::ExponentialFractional { s, .. } => *s,
            Family::Effective { base } => base.origin_exponent().max(-T::one()),
            _ => bounded,
        }
    }

    pub fn is_singular(&self) -> bool {
        self.origin_exponent() > -from_usize::<T>(self.dim)
    }

    /// Behaviour at infinity in `z` units (scale included).
    pub fn tail(&self) -> Tail<T> {
        let shrink = self.min_factor();
        let s = self.scale / shrink;
        match &self.family {
            Family::FractionalTruncated { sigma, cutoff } => match cutoff {
                Some(c) => Tail::Compact(*c * s),
                None => Tail::PowerLaw { radius: lit::<T>(16.0) * s, decay: *sigma },
            },
            Family::BallIndicator { radius } => Tail::Compact(*radius * s),
            Family::AnnulusIndicator { outer, .. } => Tail::Compact(*outer * s),
            Family::Gaussian { width } => Tail::Truncated(*width * lit(9.0) * s),
            Family::ExponentialFractional { decay, .. } => Tail::Truncated(lit::<T>(40.0) / *decay * s),
            Family::CustomRadial { radii, .. } => Tail::Compact(*radii.last().unwrap() * s),
            Family::Effective { base } => match base.tail() {
                Tail::Compact(r) => Tail::Compact(r * s),
                Tail::Truncated(r) => Tail::Truncated(r * s),
                Tail::PowerLaw { radius, decay } => Tail::PowerLaw { radius: radius * s, decay },
            },
        }
    }

    /// Radius beyond which the kernel vanishes, if any.
    pub fn support_radius(&self) -> Option<T> {
        match self.tail() {
            Tail::Compact(r) => Some(r),
            _ => None,
        }
    }

    /// Radii (in `z` units) where the radial profile has a kink or jump.
    pub fn breakpoints(&self) -> Vec<T> {
        if self.stretch.is_some() && !self.is_radial() {
            return Vec::new();
        }
        let s = self.scale / self.min_factor();
        let mut out = match &self.family {
            Family::FractionalTruncated { cutoff, .. } => cutoff.iter().copied().collect(),
            Family::BallIndicator { radius } => vec![*radius],
            Family::AnnulusIndicator { inner, outer } => vec![*inner, *outer],
            Family::CustomRadial { radii, .. } => radii.clone(),
            Family::Effective { base } => base.breakpoints(),
            _ => Vec::new(),
        };
        for b in out.iter_mut() {
            *b = *b * s;
        }
        out.retain(|b| *b > T::zero());
        out
    }

    fn min_factor(&self) -> T {
        match &self.stretch {
            None => T::one(),
            Some(s) => s.factors[..self.dim].iter().copied().fold(T::infinity(), T::min),
        }
    }

    /// Radial profile at `r > 0`, amplitude and scale excluded.
    fn profile(&self, r: T) -> T {
        let d = from_usize::<T>(self.dim);
        match &self.family {
            Family::FractionalTruncated { sigma, cutoff } => match cutoff {
                Some(c) if r > *c => T::zero(),
                _ => r.powf(-d - *sigma),
            },
            Family::BallIndicator { radius } => {
                if r <= *radius {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Family::AnnulusIndicator { inner, outer } => {
                if r >= *inner && r <= *outer {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Family::Gaussian { width } => (-(r * r) / (*width * *width * lit(2.0))).exp(),
            Family::ExponentialFractional { s, decay } => r.powf(-d - *s) * (-*decay * r).exp(),
            Family::CustomRadial { radii, values } => interp_table(radii, values, r),
            Family::Effective { .. } => unreachable!("effective kernels are evaluated pointwise"),
        }
    }

    /// `K(z)`; a domain error at the origin for kernels singular there.
    pub fn eval(&self, z: &[T]) -> Result<T> {
        let p = crate::vector::from_slice(z);
        if norm(&p) == T::zero() && self.is_singular() {
            return Err(Error::Domain("singular kernel evaluated at the origin".into()));
        }
        Ok(self.eval_point(&p))
    }

    /// `K(z)` without the origin check; `z` must be nonzero for singular kernels.
    pub fn eval_point(&self, z: &Point<T>) -> T {
        let inv = T::one() / self.scale;
        let mut w = [z[0] * inv, z[1] * inv, z[2] * inv];
        if let Some(s) = &self.stretch {
            let (a, b) = (w[0], w[1]);
            w[0] = s.cos * a + s.sin * b;
            w[1] = -s.sin * a + s.cos * b;
            for k in 0..self.dim {
                w[k] = w[k] * s.factors[k];
            }
        }
        let jac = inv.powi(self.dim as i32);
        let v = match &self.family {
            Family::Effective { base } => effective_value(base, &w, self.dim),
            _ => self.profile(norm(&w)),
        };
        self.amplitude * jac * v
    }

    /// Radial profile `r -> K(r e)` for radial kernels (scale and amplitude included).
    pub fn radial_value(&self, r: T) -> T {
        self.eval_point(&[r, T::zero(), T::zero()])
    }

    /// Polar integration rule for integrals `int K(z) g(z) dz`.
    pub fn z_rule(&self, params: &ZRuleParams<T>) -> ZRule<T> {
        let d = self.dim;
        let tail = self.tail();
        let mut r_far = params.r_far.unwrap_or_else(|| tail.radius());
        if let Tail::Compact(r) = tail {
            r_far = r_far.min(r);
        }
        let r_min = if self.is_singular() {
            r_far * params.singular_inner
        } else {
            r_far * lit(2f64.powi(-12))
        };
        let mut breaks = self.breakpoints();
        breaks.extend(params.extra_breaks.iter().copied());
        let radial = RadialRule::geometric(r_min, r_far, &breaks, params.radial_order);
        let dirs = match &params.axis {
            Some(axis) => {
                let n = if d == 3 { (params.angular / 8).max(2) } else { (params.angular / 2).max(2) };
                aligned_sphere_rule::<T>(d, axis, n, true)
            }
            None => {
                let n = if d == 3 { (params.angular / 4).max(4) } else { params.angular };
                sphere_rule::<T>(d, n)
            }
        };
        let radial_kernel = self.is_radial();
        let rings: Vec<Ring<T>> = radial
            .nodes
            .par_iter()
            .map(|&(r, wr)| {
                let jac = r.powi(d as i32 - 1) * wr;
                let kr = if radial_kernel { self.radial_value(r) } else { T::zero() };
                let nodes = dirs
                    .iter()
                    .map(|(u, wu)| {
                        let z = [u[0] * r, u[1] * r, u[2] * r];
                        let k = if radial_kernel { kr } else { self.eval_point(&z) };
                        (z, *wu * jac * k)
                    })
                    .collect();
                Ring { r, radial_weight: wr, nodes }
            })
            .collect();
        let far_decay = match tail {
            Tail::PowerLaw { decay, .. } => Some(decay),
            _ => None,
        };
        ZRule { dim: d, rings, origin_exponent: self.origin_exponent(), r_min, r_far, far_decay }
    }

    /// Mass, first moment and the constants of the local limits.
    pub fn moments(&self, params: &ZRuleParams<T>) -> KernelMoments<T> {
        let d = self.dim;
        let fine = self.z_rule(params);
        let coarse = self.z_rule(&params.coarsened());
        let mass = fine.integrate(|_| T::one(), T::zero(), T::zero());
        let mass_c = coarse.integrate(|_| T::one(), T::zero(), T::zero());
        let first = fine.integrate(|z| norm(z) * lit(0.5), T::one(), T::one());
        let first_c = coarse.integrate(|z| norm(z) * lit(0.5), T::one(), T::one());
        let mut err = T::zero();
        for (a, b) in [(mass.value, mass_c.value), (first.value, first_c.value)] {
            if let (Extended::Finite(a), Extended::Finite(b)) = (a, b) {
                err = err.max((a - b).abs());
            }
        }
        let radial_first = if self.is_radial() && d >= 2 {
            let e = [T::one(), T::zero(), T::zero()];
            self.kappa(&e, params)
                .map(|k| k / (sphere_area::<T>(d - 1)))
        } else {
            None
        };
        let axes = (0..d)
            .map(|i| {
                let mut e = [T::zero(); 3];
                e[i] = T::one();
                self.kappa(&e, params).map_or(Extended::Infinite, Extended::Finite)
            })
            .collect();
        KernelMoments {
            mass: mass.value,
            first: first.value,
            radial_first: radial_first.map_or(
                if self.is_radial() && d >= 2 { Some(Extended::Infinite) } else { None },
                |v| Some(Extended::Finite(v)),
            ),
            kappa_axes: axes,
            error_estimate: err + mass.error + first.error,
        }
    }

    /// `int_{e^perp} K(z) |z|^2 dH^{d-1}(z)`, or `None` when it diverges.
    pub fn kappa(&self, e: &Point<T>, params: &ZRuleParams<T>) -> Option<T> {
        let m = self.second_moment_on_hyperplane(e, params)?;
        Some(m.iter().enumerate().map(|(i, row)| row[i]).fold(T::zero(), |a, b| a + b))
    }

    /// `int_{e^perp} K(z) z (x) z dH^{d-1}(z)`, or `None` when it diverges.
    pub fn second_moment_on_hyperplane(&self, e: &Point<T>, params: &ZRuleParams<T>) -> Option<[[T; 3]; 3]> {
        let d = self.dim;
        let e = normalize(e)?;
        let mut m = [[T::zero(); 3]; 3];
        if d == 1 {
            return Some(m);
        }
        let sigma = self.origin_exponent();
        // Near the origin the integrand on the hyperplane behaves like r^{-sigma}.
        if sigma >= T::one() {
            return None;
        }
        let tail = self.tail();
        if let Tail::PowerLaw { decay, .. } = tail {
            if decay <= T::one() {
                return None;
            }
        }
        let r_far = tail.radius();
        let r_min = if self.is_singular() { r_far * params.singular_inner } else { r_far * lit(2f64.powi(-12)) };
        let radial = RadialRule::geometric(r_min, r_far, &self.breakpoints(), params.radial_order);
        let dirs = equator_rule::<T>(d, &e, params.angular);
        let dm2 = d as i32 - 2;
        let mut inner_ring = [[T::zero(); 3]; 3];
        let terms: Vec<[[T; 3]; 3]> = radial
            .nodes
            .par_iter()
            .map(|&(r, wr)| {
                let mut acc = [[T::zero(); 3]; 3];
                for (u, wu) in &dirs {
                    let z = [u[0] * r, u[1] * r, u[2] * r];
                    let w = *wu * wr * r.powi(dm2) * self.eval_point(&z);
                    for i in 0..3 {
                        for j in 0..3 {
                            acc[i][j] = acc[i][j] + w * z[i] * z[j];
                        }
                    }
                }
                acc
            })
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                let col: Vec<T> = terms.iter().map(|t| t[i][j]).collect();
                m[i][j] = pairwise_sum(&col);
            }
        }
        if let Some(&(r1, w1)) = radial.nodes.first() {
            // Power-law continuation of the innermost ring down to the origin.
            let p = -sigma;
            for i in 0..3 {
                for j in 0..3 {
                    let f = terms[0][i][j] / w1;
                    inner_ring[i][j] = f * (r_min / r1).powf(p) * r_min / (p + T::one());
                }
            }
        }
        if let (Tail::PowerLaw { radius, decay }, Some(&(rl, wl))) = (tail, radial.nodes.last()) {
            let p = T::one() - decay - T::one();
            let last = terms.last().unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let f = last[i][j] / wl * (radius / rl).powf(p);
                    m[i][j] = m[i][j] + f * radius / (decay - T::one());
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = m[i][j] + inner_ring[i][j];
            }
        }
        Some(m)
    }

    /// `int_{Q_lambda(e)} K` over the parabolic region `|y.e| <= (lambda/2)|y - (y.e)e|^2`.
    pub fn parabolic_mass(&self, e: &Point<T>, lambda: T, params: &ZRuleParams<T>) -> Extended<T> {
        self.band_mass(e, params, |r| {
            let lr = lambda * r;
            if lr <= T::zero() {
                T::zero()
            } else {
                ((T::one() + lr * lr).sqrt() - T::one()) / lr
            }
        }, None)
    }

    /// Mass of `K` over `{|cos angle(z, e)| <= c(|z|)}`, optionally restricted to `|z| <= r_cap`.
    pub(crate) fn band_mass(
        &self,
        e: &Point<T>,
        params: &ZRuleParams<T>,
        half_width: impl Fn(T) -> T + Sync,
        r_cap: Option<T>,
    ) -> Extended<T> {
        let d = self.dim;
        let Some(e) = normalize(e) else { return Extended::Finite(T::zero()) };
        let tail = self.tail();
        let mut r_far = tail.radius();
        if let Some(c) = r_cap {
            r_far = r_far.min(c);
        }
        let r_min = if self.is_singular() { r_far * params.singular_inner } else { r_far * lit(2f64.powi(-12)) };
        let radial = RadialRule::geometric(r_min, r_far, &self.breakpoints(), params.radial_order);
        let gl = GaussLegendre::<T>::new(params.angular.max(4));
        let radial_kernel = self.is_radial();
        let ring = |r: T| -> T {
            let c = half_width(r).min(T::one()).max(T::zero());
            if c == T::zero() {
                return T::zero();
            }
            if radial_kernel {
                let meas = match d {
                    1 => {
                        if c >= T::one() {
                            lit(2.0)
                        } else {
                            T::zero()
                        }
                    }
                    2 => c.asin() * lit(4.0),
                    _ => T::PI() * lit(4.0) * c,
                };
                return meas * self.radial_value(r) * r.powi(d as i32 - 1);
            }
            let mut s = T::zero();
            match d {
                1 => {
                    if c >= T::one() {
                        s = self.eval_point(&[r, T::zero(), T::zero()]) + self.eval_point(&[-r, T::zero(), T::zero()]);
                    }
                }
                2 => {
                    let a = c.asin();
                    let t = [-e[1], e[0], T::zero()];
                    for sign in [T::one(), -T::one()] {
                        for (psi, w) in gl.on(-a, a) {
                            let (sp, cp) = psi.sin_cos();
                            let u = [sign * t[0] * cp + sp * e[0], sign * t[1] * cp + sp * e[1], T::zero()];
                            s = s + w * self.eval_point(&[u[0] * r, u[1] * r, T::zero()]);
                        }
                    }
                    s = s * r;
                }
                _ => {
                    let (u1, u2) = crate::vector::orthonormal_complement(&e);
                    let m = 2 * params.angular;
                    let step = T::PI() * lit(2.0) / from_usize::<T>(m);
                    for (cz, w) in gl.on(-c, c) {
                        let sz = (T::one() - cz * cz).sqrt();
                        for j in 0..m {
                            let a = step * (from_usize::<T>(j) + lit(0.5));
                            let (sa, ca) = a.sin_cos();
                            let mut z = [T::zero(); 3];
                            for k in 0..3 {
                                z[k] = r * (cz * e[k] + sz * (ca * u1[k] + sa * u2[k]));
                            }
                            s = s + w * step * self.eval_point(&z);
                        }
                    }
                    s = s * r * r;
                }
            }
            s
        };
        let vals: Vec<T> = radial.nodes.par_iter().map(|&(r, w)| w * ring(r)).collect();
        let mut total = pairwise_sum(&vals);
        if let Some(&(r1, w1)) = radial.nodes.first() {
            let f = vals[0] / w1;
            if f != T::zero() {
                let p = estimate_power(&ring, r1);
                if p <= -T::one() {
                    return Extended::Infinite;
                }
                total = total + f * (r_min / r1).powf(p) * r_min / (p + T::one());
            }
        }
        if r_cap.is_none() {
            if let (Tail::PowerLaw { radius, decay }, Some(&(rl, wl))) = (tail, radial.nodes.last()) {
                let f = *vals.last().unwrap() / wl;
                let p = -decay - T::one();
                total = total + f * (radius / rl).powf(p) * radius / decay;
            }
        }
        Extended::Finite(total)
    }

    /// Checks an assumption set numerically.
    pub fn validate(&self, set: AssumptionSet, params: &ZRuleParams<T>) -> ValidationReport {
        let mut checks = Vec::new();
        match set {
            AssumptionSet::Integrable => {
                checks.push(self.check_moment("int K min(1,|z|) near the origin", |r| r.min(T::one()), Part::Origin, params));
                checks.push(self.check_moment("int K min(1,|z|) at infinity", |r| r.min(T::one()), Part::Far, params));
            }
            AssumptionSet::FastDecay => {
                checks.push(self.check_moment("int K |z| near the origin", |r| r, Part::Origin, params));
                checks.push(self.check_moment("int K |z| at infinity", |r| r, Part::Far, params));
            }
            AssumptionSet::Curvature => checks.extend(self.curvature_checks(params)),
        }
        let passed = checks.iter().all(|c| c.passed);
        ValidationReport { set, passed, checks }
    }

    /// Tests convergence of `int K g(|z|)` at one end from geometric shells.
    fn check_moment(&self, name: &str, g: impl Fn(T) -> T + Sync, part: Part, params: &ZRuleParams<T>) -> Check {
        let d = self.dim;
        let base = match part {
            Part::Origin => self.scale,
            Part::Far => self.scale * lit(4.0),
        };
        let shells: Vec<(T, T)> = (0..8)
            .map(|k| {
                let f: T = lit(2f64.powi(k));
                match part {
                    Part::Origin => (base / (f * lit(2.0)), base / f),
                    Part::Far => (base * f, base * f * lit(2.0)),
                }
            })
            .collect();
        let gl = GaussLegendre::<T>::new(params.radial_order.max(8));
        let dirs = sphere_rule::<T>(d, params.angular);
        let values: Vec<f64> = shells
            .iter()
            .map(|&(a, b)| {
                let mut s = T::zero();
                for (r, wr) in gl.on(a, b) {
                    for (u, wu) in &dirs {
                        let z = [u[0] * r, u[1] * r, u[2] * r];
                        s = s + wr * *wu * r.powi(d as i32 - 1) * self.eval_point(&z) * g(r);
                    }
                }
                to_f64(s)
            })
            .collect();
        // Shell contributions of a convergent power law shrink geometrically.
        let tiny = 1e-300;
        let tail: Vec<f64> = values[4..].to_vec();
        let ratios: Vec<f64> = tail.windows(2).filter(|w| w[0].abs() > tiny).map(|w| w[1] / w[0]).collect();
        let (passed, note) = if tail.iter().all(|v| v.abs() <= tiny) {
            (true, "vanishes".to_string())
        } else if let Some(&q) = ratios.last() {
            if q < 1.0 - 1e-6 {
                let rem = tail.last().unwrap() * q / (1.0 - q);
                (true, format!("shell ratio {q:.6}, remainder {rem:.3e}"))
            } else {
                (false, format!("shell ratio {q:.6} >= 1"))
            }
        } else {
            (true, "vanishes beyond the last shell".to_string())
        };
        Check {
            name: name.to_string(),
            values: shells.iter().zip(&values).map(|(s, v)| (to_f64(s.1), *v)).collect(),
            passed,
            note,
        }
    }

    fn curvature_checks(&self, params: &ZRuleParams<T>) -> Vec<Check> {
        let d = self.dim;
        let mut out = Vec::new();
        let dirs: Vec<Point<T>> = match d {
            1 => vec![[T::one(), T::zero(), T::zero()]],
            2 => (0..4)
                .map(|k| {
                    let a = T::PI() * from_usize::<T>(k) / lit(8.0);
                    [a.cos(), a.sin(), T::zero()]
                })
                .collect(),
            _ => vec![
                [T::one(), T::zero(), T::zero()],
                [T::zero(), T::zero(), T::one()],
                normalize(&[T::one(), T::one(), T::one()]).unwrap(),
            ],
        };
        // r * int_{|z|>r} K -> 0 as r -> 0.
        let rule = self.z_rule(params);
        let radii: Vec<T> = (0..6).map(|k| self.scale * lit(0.1 / 2f64.powi(k))).collect();
        let vals: Vec<f64> = radii
            .iter()
            .map(|&r| {
                let v = rule.integrate(|z| if norm(z) > r { T::one() } else { T::zero() }, T::zero(), T::zero());
                to_f64(r * v.value.as_float())
            })
            .collect();
        let decreasing = vals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)) && vals.last().unwrap().is_finite();
        let shrink = vals.last().unwrap() < &(vals[0] * 0.9) || vals[0] == 0.0;
        out.push(Check {
            name: "r * int_{|z|>r} K vanishes as r -> 0".into(),
            values: radii.iter().map(|&r| to_f64(r)).zip(vals.iter().copied()).collect(),
            passed: decreasing && shrink,
            note: String::new(),
        });
        // Parabolic masses finite, bounded by a multiple of lambda as lambda -> 0, vanishing relative to lambda as lambda -> inf.
        let small: Vec<T> = [1.0, 0.25, 0.0625, 0.015625].iter().map(|&l| lit::<T>(l) / self.scale).collect();
        let large: Vec<T> = [10.0, 100.0, 1000.0, 10000.0].iter().map(|&l| lit::<T>(l) / self.scale).collect();
        let mut small_vals = Vec::new();
        let mut large_vals = Vec::new();
        let mut finite = true;
        for e in &dirs {
            for &l in &small {
                let m = self.parabolic_mass(e, l, params);
                finite &= m.is_finite();
                small_vals.push((to_f64(l), to_f64(m.as_float() / l)));
            }
            for &l in &large {
                let m = self.parabolic_mass(e, l, params);
                finite &= m.is_finite();
                large_vals.push((to_f64(l), to_f64(m.as_float() / l)));
            }
        }
        let bounded = small_vals.iter().all(|v| v.1.is_finite());
        let per_dir = large.len();
        let vanishing = large_vals
            .chunks(per_dir)
            .all(|c| c.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-9)) && c.last().unwrap().1 < 0.5 * c[0].1);
        out.push(Check {
            name: "parabolic masses finite".into(),
            values: small_vals.clone(),
            passed: finite,
            note: String::new(),
        });
        out.push(Check {
            name: "parabolic mass over lambda bounded as lambda -> 0".into(),
            values: small_vals,
            passed: bounded && finite,
            note: String::new(),
        });
        out.push(Check {
            name: "parabolic mass over lambda vanishes as lambda -> inf".into(),
            values: large_vals,
            passed: vanishing && finite,
            note: String::new(),
        });
        // K(y) |y|^{d+1+s} bounded outside the unit ball for some s > 0: probe with s = 0.
        let probe: Vec<(f64, f64)> = (0..12)
            .map(|k| {
                let r = self.scale * lit(2f64.powi(k));
                let z = [r, T::zero(), T::zero()];
                let v = self.eval_point(&z) * r.powi(d as i32 + 1);
                (to_f64(r), to_f64(v))
            })
            .collect();
        let decays = probe[6..].windows(2).all(|w| w[1].1 <= w[0].1 * 0.99 || w[1].1 == 0.0);
        out.push(Check {
            name: "K(y)|y|^{d+1} decays at infinity".into(),
            values: probe,
            passed: decays,
            note: String::new(),
        });
        out
    }
}

#[derive(Clone, Copy)]
enum Part {
    Origin,
    Far,
}

/// Local power `p` with `f(r) ~ r^p`, estimated from two nearby radii.
fn estimate_power<T: Real>(f: &impl Fn(T) -> T, r: T) -> T {
    let a = f(r);
    let b = f(r * lit(0.5));
    if a > T::zero() && b > T::zero() {
        (a / b).ln() / lit::<T>(2.0).ln()
    } else {
        T::zero()
    }
}

fn interp_table<T: Real>(radii: &[T], values: &[T], r: T) -> T {
    let n = radii.len();
    if r > radii[n - 1] {
        return T::zero();
    }
    if r <= radii[0] {
        return values[0];
    }
    let i = radii.partition_point(|&x| x <= r).min(n - 1);
    let (r0, r1) = (radii[i - 1], radii[i]);
    let t = (r - r0) / (r1 - r0);
    values[i - 1] + (values[i] - values[i - 1]) * t
}

/// `G~(w) = 2 |w|^{1-d} int_{|w|}^inf (1 - |w|/s) s^{d-2} G(s w^) ds`.
fn effective_value<T: Real>(base: &Kernel<T>, w: &Point<T>, d: usize) -> T {
    let rho = norm(w);
    if rho == T::zero() {
        return T::infinity();
    }
    let dir = [w[0] / rho, w[1] / rho, w[2] / rho];
    let tail = base.tail();
    let r_far = tail.radius();
    if rho >= r_far {
        return T::zero();
    }
    let gl = GaussLegendre::<T>::new(12);
    let mut cuts = vec![rho];
    let mut r = rho;
    while r * lit(2.0) < r_far {
        r = r * lit(2.0);
        cuts.push(r);
    }
    cuts.push(r_far);
    for b in base.breakpoints() {
        if b > rho && b < r_far {
            cuts.push(b);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut s_total = T::zero();
    for c in cuts.windows(2) {
        if c[1] <= c[0] {
            continue;
        }
        s_total = s_total
            + gl.integrate(c[0], c[1], |s| {
                let z = [dir[0] * s, dir[1] * s, dir[2] * s];
                (T::one() - rho / s) * s.powi(d as i32 - 2) * base.eval_point(&z)
            });
    }
    if let Tail::PowerLaw { radius, decay } = tail {
        // Remainder of (1 - rho/s) s^{d-2} s^{-d-decay} beyond the truncation radius.
        let z = [dir[0] * radius, dir[1] * radius, dir[2] * radius];
        let c = base.eval_point(&z) * radius.powf(from_usize::<T>(d) + decay);
        s_total = s_total + c * radius.powf(-T::one() - decay) / (T::one() + decay);
    }
    lit::<T>(2.0) * rho.powi(1 - d as i32) * s_total
}

/// Named hypothesis sets on the kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionSet {
    /// `int K min(1, |z|) < inf`.
    Integrable,
    /// `int K |z| < inf`.
    FastDecay,
    /// Hypotheses under which the nonlocal curvature is defined and controlled.
    Curvature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    /// `(parameter, measured value)` pairs.
    pub values: Vec<(f64, f64)>,
    pub passed: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub set: AssumptionSet,
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelMoments<T> {
    /// `int K`.
    pub mass: Extended<T>,
    /// `1/2 int K |z|`.
    pub first: Extended<T>,
    /// `int_0^inf r^d k(r) dr` for radial kernels with profile `k`.
    pub radial_first: Option<Extended<T>>,
    /// Curvature constants `int_{e_i^perp} K |z|^2` along the coordinate axes.
    pub kappa_axes: Vec<Extended<T>>,
    pub error_estimate: T,
}

/// Resolution of the polar rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ZRuleParams<T> {
    /// Gauss-Legendre points per radial panel.
    pub radial_order: usize,
    /// Directions per unit circle (plane) or polar nodes (space).
    pub angular: usize,
    /// Innermost radius relative to the outer radius for singular kernels.
    pub singular_inner: T,
    /// Overrides the truncation radius.
    pub r_far: Option<T>,
    /// Additional radial panel breaks.
    pub extra_breaks: Vec<T>,
    /// Pole of a direction rule split on the orthogonal great sphere.
    pub axis: Option<Point<T>>,
}

impl<T: Real> Default for ZRuleParams<T> {
    fn default() -> Self {
        Self { radial_order: 8, angular: 64, singular_inner: lit(1e-6), r_far: None, extra_breaks: Vec::new(), axis: None }
    }
}

impl<T: Real> ZRuleParams<T> {
    pub fn coarsened(&self) -> Self {
        Self { radial_order: (self.radial_order / 2).max(2), angular: (self.angular / 2).max(4), ..self.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct Ring<T> {
    pub r: T,
    pub radial_weight: T,
    /// `(z, w)` with `w` including `K(z)` and the polar Jacobian.
    pub nodes: Vec<(Point<T>, T)>,
}

/// Polar rule for `int K(z) g(z) dz` with power-law corrections at both ends.
#[derive(Clone, Debug)]
pub struct ZRule<T> {
    pub dim: usize,
    pub rings: Vec<Ring<T>>,
    origin_exponent: T,
    pub r_min: T,
    pub r_far: T,
    far_decay: Option<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate<T> {
    pub value: Extended<T>,
    pub error: T,
}

impl<T: Real> ZRule<T> {
    pub fn len(&self) -> usize {
        self.rings.iter().map(|r| r.nodes.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Integrates `K g`, where `g ~ |z|^near` at the origin and `g ~ |z|^far` at infinity.
    pub fn integrate(&self, g: impl Fn(&Point<T>) -> T + Sync, near: T, far: T) -> Estimate<T> {
        let per_ring: Vec<(T, T)> = self
            .rings
            .par_iter()
            .map(|ring| {
                let vals: Vec<T> = ring.nodes.iter().map(|(z, w)| *w * g(z)).collect();
                let coarse: Vec<T> = vals.iter().step_by(2).map(|&v| v + v).collect();
                (pairwise_sum(&vals), pairwise_sum(&coarse))
            })
            .collect();
        self.finish(&per_ring, near, far)
    }

    /// Sums precomputed ring contributions `(fine, coarse)` and adds the end corrections.
    fn finish(&self, per_ring: &[(T, T)], near: T, far: T) -> Estimate<T> {
        let fine: Vec<T> = per_ring.iter().map(|p| p.0).collect();
        let coarse: Vec<T> = per_ring.iter().map(|p| p.1).collect();
        let mut total = pairwise_sum(&fine);
        let mut err = (total - pairwise_sum(&coarse)).abs();
        let d = from_usize::<T>(self.dim);
        if let Some(first) = self.rings.first() {
            let f = fine[0] / first.radial_weight;
            if f != T::zero() {
                let p = d - T::one() - d - self.origin_exponent + near;
                if p <= -T::one() {
                    return Estimate { value: Extended::Infinite, error: T::zero() };
                }
                let c = f * (self.r_min / first.r).powf(p) * self.r_min / (p + T::one());
                total = total + c;
                err = err + c.abs() * lit(0.1);
            }
        }
        if let (Some(decay), Some(last)) = (self.far_decay, self.rings.last()) {
            let f = *fine.last().unwrap() / last.radial_weight;
            if f != T::zero() {
                let p = far - decay - T::one();
                if p >= -T::one() {
                    return Estimate { value: Extended::Infinite, error: T::zero() };
                }
                let c = f * (self.r_far / last.r).powf(p) * self.r_far / (-(p + T::one()));
                total = total + c;
                err = err + c.abs() * lit(0.1);
            }
        }
        Estimate { value: Extended::Finite(total), error: err }
    }
}

/// `int_lo^hi K(a + t n) dt` for unit `n`, split where `|a + t n|` crosses kernel breakpoints.
pub fn line_integral<T: Real>(k: &Kernel<T>, a: &Point<T>, n: &Point<T>, lo: T, hi: T, order: usize) -> T {
    let gl = GaussLegendre::<T>::new(order);
    let foot = dot(a, n);
    let perp2 = (dot(a, a) - foot * foot).max(T::zero());
    let mut cuts = vec![lo, hi, -foot];
    for b in k.breakpoints() {
        let h2 = b * b - perp2;
        if h2 > T::zero() {
            let h = h2.sqrt();
            cuts.push(-foot - h);
            cuts.push(-foot + h);
        }
    }
    cuts.retain(|c| *c >= lo && *c <= hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut s = T::zero();
    for c in cuts.windows(2) {
        if c[1] > c[0] {
            s = s + gl.integrate(c[0], c[1], |t| k.eval_point(&crate::vector::axpy(a, t, n)));
        }
    }
    s
}
