use std::sync::Arc;

use rayon::prelude::*;

use super::shape::Shape;
use crate::error::{invalid, Error, Result};
use crate::scalar::{from_usize, lit, Real};
use crate::vector::{axpy, Mat, Point};

/// Axis-aligned box split into a uniform grid of cells.
#[derive(Clone, Debug, PartialEq)]
pub struct GridBox<T> {
    dim: usize,
    origin: Point<T>,
    lengths: Point<T>,
    resolution: [usize; 3],
}

impl<T: Real> GridBox<T> {
    pub fn new(origin: &[T], lengths: &[T], resolution: &[usize]) -> Result<Self> {
        let dim = origin.len();
        if !(1..=3).contains(&dim) || lengths.len() != dim || resolution.len() != dim {
            return invalid("box origin, lengths and resolution must share a dimension in 1..=3");
        }
        if lengths.iter().any(|l| !(*l > T::zero() && l.is_finite())) {
            return invalid("box side lengths must be positive");
        }
        if resolution.iter().any(|&n| n < 4) {
            return invalid("box resolution must be at least 4 cells per axis");
        }
        let mut o = [T::zero(); 3];
        let mut l = [T::one(); 3];
        let mut r = [1usize; 3];
        o[..dim].copy_from_slice(&origin[..dim]);
        l[..dim].copy_from_slice(&lengths[..dim]);
        r[..dim].copy_from_slice(&resolution[..dim]);
        Ok(Self { dim, origin: o, lengths: l, resolution: r })
    }

    /// The cube `[-half, half]^d` with `n` cells per axis.
    pub fn centered(dim: usize, half: T, n: usize) -> Result<Self> {
        Self::new(&vec![-half; dim], &vec![half + half; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> &[T] {
        &self.origin[..self.dim]
    }

    pub fn lengths(&self) -> &[T] {
        &self.lengths[..self.dim]
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> T {
        self.lengths[axis] / from_usize::<T>(self.resolution[axis])
    }

    pub fn min_spacing(&self) -> T {
        (0..self.dim).map(|k| self.spacing(k)).fold(T::infinity(), T::min)
    }

    pub fn cell_volume(&self) -> T {
        (0..self.dim).map(|k| self.spacing(k)).fold(T::one(), |a, b| a * b)
    }

    /// Linear index with the first axis fastest.
    #[inline]
    pub fn index(&self, i: [usize; 3]) -> usize {
        i[0] + self.resolution[0] * (i[1] + self.resolution[1] * i[2])
    }

    #[inline]
    pub fn multi_index(&self, mut idx: usize) -> [usize; 3] {
        let i0 = idx % self.resolution[0];
        idx /= self.resolution[0];
        let i1 = idx % self.resolution[1];
        [i0, i1, idx / self.resolution[1]]
    }

    pub fn center(&self, i: [usize; 3]) -> Point<T> {
        let mut p = [T::zero(); 3];
        for k in 0..self.dim {
            p[k] = self.origin[k] + self.spacing(k) * (from_usize::<T>(i[k]) + lit(0.5));
        }
        p
    }

    pub fn center_of(&self, idx: usize) -> Point<T> {
        self.center(self.multi_index(idx))
    }

    pub fn contains(&self, x: &Point<T>) -> bool {
        (0..self.dim).all(|k| x[k] >= self.origin[k] && x[k] <= self.origin[k] + self.lengths[k])
    }

    /// Radius of the smallest ball about the origin containing the box.
    pub fn bounding_radius(&self) -> T {
        let mut s = T::zero();
        for k in 0..self.dim {
            let a = self.origin[k].abs().max((self.origin[k] + self.lengths[k]).abs());
            s = s + a * a;
        }
        s.sqrt()
    }

    pub fn diameter(&self) -> T {
        (0..self.dim).map(|k| self.lengths[k] * self.lengths[k]).fold(T::zero(), |a, b| a + b).sqrt()
    }
}

/// Meaning of the values of a grid field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    Indicator,
    Phase,
    LevelSet,
}

impl Tag {
    pub fn name(&self) -> &'static str {
        match self {
            Tag::Indicator => "indicator",
            Tag::Phase => "phase",
            Tag::LevelSet => "level_set",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "indicator" => Some(Tag::Indicator),
            "phase" => Some(Tag::Phase),
            "level_set" => Some(Tag::LevelSet),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Multilinear,
    /// Catmull-Rom cubic, continuously differentiable.
    Cubic,
}

/// Scalar values at cell centers, extended by a constant outside the box.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField<T> {
    grid: GridBox<T>,
    values: Vec<T>,
    tag: Tag,
    extension: T,
}

impl<T: Real> GridField<T> {
    pub fn new(grid: GridBox<T>, values: Vec<T>, tag: Tag, extension: T) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!("expected {} values, got {}", grid.len(), values.len()));
        }
        let bad = match tag {
            Tag::Indicator => values.iter().chain([&extension]).any(|&v| v != T::zero() && v != T::one()),
            Tag::Phase => values.iter().chain([&extension]).any(|&v| !(v >= T::zero() && v <= T::one())),
            Tag::LevelSet => values.iter().any(|v| !v.is_finite()),
        };
        if bad {
            return invalid(format!("values violate the {} tag", tag.name()));
        }
        Ok(Self { grid, values, tag, extension })
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn(grid: GridBox<T>, tag: Tag, f: impl Fn(&Point<T>) -> T + Sync) -> Result<Self> {
        let values = (0..grid.len()).into_par_iter().map(|i| f(&grid.center_of(i))).collect();
        Self::new(grid, values, tag, T::zero())
    }

    pub fn with_extension(mut self, extension: T) -> Result<Self> {
        self.extension = extension;
        Self::new(self.grid, self.values, self.tag, self.extension)
    }

    pub fn grid(&self) -> &GridBox<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn tag(&self) -> Tag {
        self.tag
    }

    pub fn extension(&self) -> T {
        self.extension
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Value at a (possibly out-of-range) cell index; the extension constant outside.
    #[inline]
    pub fn at(&self, i: [isize; 3]) -> T {
        for k in 0..3 {
            if i[k] < 0 || i[k] as usize >= self.grid.resolution[k] {
                return self.extension;
            }
        }
        self.values[self.grid.index([i[0] as usize, i[1] as usize, i[2] as usize])]
    }

    pub fn map(&self, tag: Tag, f: impl Fn(T) -> T + Sync) -> Result<Self> {
        let values = self.values.par_iter().map(|&v| f(v)).collect();
        Self::new(self.grid.clone(), values, tag, f(self.extension))
    }

    /// Value at an arbitrary point.
    pub fn sample(&self, x: &Point<T>, method: Interpolation) -> T {
        if self.grid.dim == 2 && method == Interpolation::Cubic {
            return self.cubic_planar(x);
        }
        self.sample_with_gradient(x, method, false).0
    }

    fn cubic_planar(&self, x: &Point<T>) -> T {
        let mut base = [0isize; 2];
        let mut w = [[T::zero(); 4]; 2];
        for k in 0..2 {
            let s = (x[k] - self.grid.origin[k]) / self.grid.spacing(k) - lit(0.5);
            let f = s.floor();
            let fi = f.max(lit(-4.0)).min(from_usize::<T>(self.grid.resolution[k] + 4));
            base[k] = fi.to_isize().unwrap_or(0) - 1;
            w[k] = catmull_rom(if f == fi { s - f } else { T::zero() }).0;
        }
        let [nx, ny] = [self.grid.resolution[0] as isize, self.grid.resolution[1] as isize];
        let mut val = T::zero();
        if base[0] >= 0 && base[1] >= 0 && base[0] + 4 <= nx && base[1] + 4 <= ny {
            for b in 0..4 {
                let row = ((base[1] + b as isize) * nx + base[0]) as usize;
                let r = &self.values[row..row + 4];
                let line = w[0][0] * r[0] + w[0][1] * r[1] + w[0][2] * r[2] + w[0][3] * r[3];
                val = val + w[1][b] * line;
            }
        } else {
            for b in 0..4 {
                let mut line = T::zero();
                for a in 0..4 {
                    line = line + w[0][a] * self.at([base[0] + a as isize, base[1] + b as isize, 0]);
                }
                val = val + w[1][b] * line;
            }
        }
        val
    }

    /// Value and gradient of the interpolant at `x`.
    pub fn sample_with_gradient(&self, x: &Point<T>, method: Interpolation, gradient: bool) -> (T, Point<T>) {
        let d = self.grid.dim;
        let mut base = [0isize; 3];
        let mut frac = [T::zero(); 3];
        let mut inv_h = [T::one(); 3];
        for k in 0..d {
            let h = self.grid.spacing(k);
            inv_h[k] = T::one() / h;
            let s = (x[k] - self.grid.origin[k]) * inv_h[k] - lit(0.5);
            let f = s.floor();
            // Far outside the box the stencil only sees the extension.
            let fi = f.max(lit(-4.0)).min(from_usize::<T>(self.grid.resolution[k] + 4));
            base[k] = fi.to_isize().unwrap_or(0);
            frac[k] = if f == fi { s - f } else { T::zero() };
        }
        match method {
            Interpolation::Multilinear => {
                let w: [[(T, T); 2]; 3] = std::array::from_fn(|k| {
                    if k < d {
                        let t = frac[k];
                        [(T::one() - t, -inv_h[k]), (t, inv_h[k])]
                    } else {
                        [(T::one(), T::zero()), (T::zero(), T::zero())]
                    }
                });
                self.tensor::<2>(&base, &w, 0, d, gradient)
            }
            Interpolation::Cubic => {
                let w: [[(T, T); 4]; 3] = std::array::from_fn(|k| {
                    if k < d {
                        let (v, dv) = catmull_rom(frac[k]);
                        std::array::from_fn(|j| (v[j], dv[j] * inv_h[k]))
                    } else {
                        let z = (T::zero(), T::zero());
                        [z, (T::one(), T::zero()), z, z]
                    }
                });
                self.tensor::<4>(&base, &w, 1, d, gradient)
            }
        }
    }

    fn tensor<const N: usize>(
        &self,
        base: &[isize; 3],
        w: &[[(T, T); N]],
        shift: isize,
        d: usize,
        gradient: bool,
    ) -> (T, Point<T>) {
        let mut val = T::zero();
        let mut g = [T::zero(); 3];
        let nb = if d >= 2 { N } else { 1 };
        let nc = if d >= 3 { N } else { 1 };
        let fixed = shift as usize;
        let off = |k: usize, j: usize| if k < d { j as isize - shift } else { 0 };
        for c in 0..nc {
            let jc = if d >= 3 { c } else { fixed };
            for b in 0..nb {
                let jb = if d >= 2 { b } else { fixed };
                for ja in 0..N {
                    let wa = w[0][ja];
                    let wb = w[1][jb];
                    let wc = w[2][jc];
                    let weight = wa.0 * wb.0 * wc.0;
                    if weight == T::zero() && !gradient {
                        continue;
                    }
                    let idx = [base[0] + off(0, ja), base[1] + off(1, jb), base[2] + off(2, jc)];
                    let v = self.at(idx);
                    val = val + weight * v;
                    if gradient {
                        g[0] = g[0] + wa.1 * wb.0 * wc.0 * v;
                        g[1] = g[1] + wa.0 * wb.1 * wc.0 * v;
                        g[2] = g[2] + wa.0 * wb.0 * wc.1 * v;
                    }
                }
            }
        }
        (val, g)
    }
}

/// Catmull-Rom weights and their derivatives for the stencil `[-1, 0, 1, 2]` at offset `t`.
#[inline]
fn catmull_rom<T: Real>(t: T) -> ([T; 4], [T; 4]) {
    let half: T = lit(0.5);
    let t2 = t * t;
    let t3 = t2 * t;
    let two: T = lit(2.0);
    let three: T = lit(3.0);
    let four: T = lit(4.0);
    let five: T = lit(5.0);
    let w = [
        half * (-t3 + two * t2 - t),
        half * (three * t3 - five * t2 + two),
        half * (-three * t3 + four * t2 + t),
        half * (t3 - t2),
    ];
    let dw = [
        half * (-three * t2 + four * t - T::one()),
        half * (lit::<T>(9.0) * t2 - lit::<T>(10.0) * t),
        half * (lit::<T>(-9.0) * t2 + lit::<T>(8.0) * t + T::one()),
        half * (three * t2 - two * t),
    ];
    (w, dw)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RasterMode {
    /// Cell-center membership.
    Indicator,
    /// Area fraction from `4^d` subsamples per cell.
    Phase,
}

pub fn rasterize<T: Real>(shape: &Shape<T>, grid: &GridBox<T>, mode: RasterMode) -> GridField<T> {
    let d = grid.dim;
    let values: Vec<T> = (0..grid.len())
        .into_par_iter()
        .map(|idx| match mode {
            RasterMode::Indicator => {
                if shape.contains(&grid.center_of(idx)) {
                    T::one()
                } else {
                    T::zero()
                }
            }
            RasterMode::Phase => {
                let i = grid.multi_index(idx);
                let sub = 4usize;
                let total = sub.pow(d as u32);
                let mut hits = 0usize;
                for s in 0..total {
                    let mut p = [T::zero(); 3];
                    let mut rem = s;
                    for k in 0..d {
                        let j = rem % sub;
                        rem /= sub;
                        let off = (from_usize::<T>(j) + lit(0.5)) / from_usize::<T>(sub);
                        p[k] = grid.origin[k] + grid.spacing(k) * (from_usize::<T>(i[k]) + off);
                    }
                    if shape.contains(&p) {
                        hits += 1;
                    }
                }
                from_usize::<T>(hits) / from_usize::<T>(total)
            }
        })
        .collect();
    let tag = match mode {
        RasterMode::Indicator => Tag::Indicator,
        RasterMode::Phase => Tag::Phase,
    };
    GridField { grid: grid.clone(), values, tag, extension: T::zero() }
}

/// Central-difference gradient and Hessian at an interior cell.
pub fn differentiate<T: Real>(field: &GridField<T>, cell: [usize; 3]) -> Result<(Point<T>, Mat<T>)> {
    let g = &field.grid;
    let d = g.dim;
    for k in 0..d {
        if cell[k] == 0 || cell[k] + 1 >= g.resolution[k] {
            return Err(Error::Domain(format!("cell {cell:?} lies on the grid boundary")));
        }
        if cell[k] >= g.resolution[k] {
            return Err(Error::Domain(format!("cell {cell:?} outside the grid")));
        }
    }
    let c = [cell[0] as isize, cell[1] as isize, cell[2] as isize];
    let shifted = |a: usize, sa: isize, b: usize, sb: isize| {
        let mut i = c;
        i[a] += sa;
        i[b] += sb;
        field.at(i)
    };
    let u0 = field.at(c);
    let mut grad = [T::zero(); 3];
    let mut hess = [[T::zero(); 3]; 3];
    let two: T = lit(2.0);
    for a in 0..d {
        let h = g.spacing(a);
        let up = shifted(a, 1, a, 0);
        let dn = shifted(a, -1, a, 0);
        grad[a] = (up - dn) / (two * h);
        hess[a][a] = (up - two * u0 + dn) / (h * h);
        for b in (a + 1)..d {
            let hb = g.spacing(b);
            let v = (shifted(a, 1, b, 1) - shifted(a, 1, b, -1) - shifted(a, -1, b, 1) + shifted(a, -1, b, -1))
                / (lit::<T>(4.0) * h * hb);
            hess[a][b] = v;
            hess[b][a] = v;
        }
    }
    Ok((grad, hess))
}

/// Samples of `t -> u(offset + t dir)` over the part of the line inside the box.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSamples<T> {
    pub t: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Real> LineSamples<T> {
    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Parameter range `[t0, t1]` where `offset + t dir` lies in the box, if nonempty.
pub(crate) fn line_box_range<T: Real>(grid: &GridBox<T>, dir: &Point<T>, offset: &Point<T>) -> Option<(T, T)> {
    let mut lo = T::neg_infinity();
    let mut hi = T::infinity();
    for k in 0..grid.dim {
        let a = grid.origin[k];
        let b = a + grid.lengths[k];
        if dir[k] == T::zero() {
            if offset[k] < a || offset[k] > b {
                return None;
            }
        } else {
            let t0 = (a - offset[k]) / dir[k];
            let t1 = (b - offset[k]) / dir[k];
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
    }
    (hi > lo).then_some((lo, hi))
}

pub fn slice<T: Real>(field: &GridField<T>, dir: &[T], offset: &[T], method: Interpolation) -> Result<LineSamples<T>> {
    let dir = crate::vector::from_slice(dir);
    let offset = crate::vector::from_slice(offset);
    let n = crate::vector::norm(&dir);
    if (n - T::one()).abs() > lit(1e-9) {
        return invalid("slice direction must be a unit vector");
    }
    let Some((lo, hi)) = line_box_range(&field.grid, &dir, &offset) else {
        return Ok(LineSamples { t: Vec::new(), values: Vec::new() });
    };
    let h = field.grid.min_spacing();
    let count = ((hi - lo) / h).ceil().to_usize().unwrap_or(1).max(1);
    let step = (hi - lo) / from_usize::<T>(count);
    let t: Vec<T> = (0..=count).map(|i| lo + step * from_usize::<T>(i)).collect();
    let values = t.iter().map(|&s| field.sample(&axpy(&offset, s, &dir), method)).collect();
    Ok(LineSamples { t, values })
}

/// The cells where `field >= c`, as a grid-indicator shape.
pub fn superlevel<T: Real>(field: &GridField<T>, c: T) -> Shape<T> {
    let values = field.values.iter().map(|&v| if v >= c { T::one() } else { T::zero() }).collect();
    let ext = if field.extension >= c { T::one() } else { T::zero() };
    Shape::Grid(Arc::new(GridField { grid: field.grid.clone(), values, tag: Tag::Indicator, extension: ext }))
}
