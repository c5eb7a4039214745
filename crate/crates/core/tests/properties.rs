use std::f64::consts::PI;
use std::sync::OnceLock;

use nonlocal::anisotropy::Anisotropy;
use nonlocal::curvature::{hk_pv, PvOptions};
use nonlocal::energy::{perimeter_k, EnergyOptions};
use nonlocal::fields::{GridBox, GridField, Shape, Tag};
use nonlocal::flow::{evolve, stability_limit, EvolveParams, Scheme};
use nonlocal::kernel::{Kernel, StretchSpec, ZRuleParams};
use nonlocal::rate::{e1d, e1d_lower_bound, e1d_upper_bound, Potential, Profile1D};
use proptest::prelude::*;

fn stretched() -> &'static Anisotropy<f64> {
    static A: OnceLock<Anisotropy<f64>> = OnceLock::new();
    A.get_or_init(|| {
        let mut spec = Kernel::<f64>::gaussian(2, 0.5).unwrap().spec();
        spec.stretch = Some(StretchSpec { factors: vec![1.0, 2.5], angle: 0.4 });
        Anisotropy::new(Kernel::from_spec(&spec).unwrap(), ZRuleParams::default()).unwrap()
    })
}

fn bump_profile(heights: &[f64], cells: usize) -> Profile1D<f64> {
    let n = heights.len();
    Profile1D::from_fn(-1.0, 1.0, cells, |x: f64| {
        let s = (x + 1.0) * 0.5 * (n + 1) as f64;
        let i = s.floor() as usize;
        let t = s - i as f64;
        let at = |k: usize| if k == 0 || k > n { 0.0 } else { heights[k - 1] };
        at(i) * (1.0 - t) + at(i + 1) * t
    })
    .unwrap()
}

fn disk(r: f64) -> GridField<f64> {
    let grid = GridBox::centered(2, 1.0, 32).unwrap();
    GridField::from_fn(grid, Tag::LevelSet, |x: &[f64; 3]| (r - x[0].hypot(x[1])).clamp(-0.3, 0.3))
        .unwrap()
        .with_extension(-0.3)
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn anisotropy_is_even_homogeneous_and_subadditive(a in 0.0..2.0 * PI, b in 0.0..2.0 * PI, s in 0.1f64..5.0, t in 0.1f64..5.0) {
        let an = stretched();
        let p = [s * a.cos(), s * a.sin()];
        let q = [t * b.cos(), t * b.sin()];
        let sp = an.sigma(&p).unwrap();
        let sq = an.sigma(&q).unwrap();
        prop_assert!(sp >= 0.0);
        prop_assert!((an.sigma(&[-p[0], -p[1]]).unwrap() - sp).abs() <= 1e-12 * sp);
        prop_assert!((an.sigma(&[3.0 * p[0], 3.0 * p[1]]).unwrap() - 3.0 * sp).abs() <= 1e-12 * sp);
        let sum = an.sigma(&[p[0] + q[0], p[1] + q[1]]).unwrap();
        prop_assert!(sum <= (sp + sq) * (1.0 + 1e-9));
    }

    #[test]
    fn rate_energy_sits_between_its_bounds(heights in proptest::collection::vec(-1.0f64..1.0, 1..6), eps in 0.02f64..0.3) {
        let u = bump_profile(&heights, 1024);
        let f = Potential::QuadPlusQuartic { quartic: 0.0 };
        let e = e1d(&u, &f, eps).unwrap();
        let scale = e1d_upper_bound(&u, &f).unwrap().max(1e-300);
        prop_assert!(e >= -1e-9 * scale);
        prop_assert!(e <= scale * (1.0 + 1e-9));
        prop_assert!(e >= e1d_lower_bound(&u, &f, eps).unwrap() - 1e-6 * scale);
    }

    #[test]
    fn log_cosh_rate_energy_is_nonnegative(heights in proptest::collection::vec(-2.0f64..2.0, 1..6), eps in 0.02f64..0.3, width in 0.1f64..2.0) {
        let u = bump_profile(&heights, 1024);
        let f = Potential::LogCosh { width };
        let e = e1d(&u, &f, eps).unwrap();
        prop_assert!(e >= -1e-9 * e1d_upper_bound(&u, &f).unwrap().max(1e-300));
    }

    #[test]
    fn halfspace_curvature_vanishes(a in 0.0..2.0 * PI, offset in -0.3f64..0.3) {
        let k = Kernel::fractional(2, 0.5, Some(1.0)).unwrap();
        let n = [a.cos(), a.sin()];
        let e = Shape::halfspace(&n, offset).unwrap();
        let v = hk_pv(&e, &[offset * n[0], offset * n[1]], &k, &PvOptions::default()).unwrap();
        prop_assert!(v.value.abs() <= 1e-8 * v.annulus_mass.unwrap_or(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn perimeter_is_nonnegative_split_and_translation_invariant(x in -0.4f64..0.1, y in -0.4f64..0.1, w in 0.1f64..0.3, h in 0.1f64..0.3) {
        let k = Kernel::ball(2, 0.25).unwrap();
        let opts = EnergyOptions::new(GridBox::centered(2, 1.0, 40).unwrap());
        let om = Shape::ball(&[0.0, 0.0], 0.7).unwrap();
        let e = Shape::axis_box(&[x, y], &[x + w, y + h]).unwrap();
        let b = perimeter_k(&e, &om, &k, &opts).unwrap();
        let (j1, j2, total) = (b.j1.as_float(), b.j2.as_float(), b.total.as_float());
        prop_assert!(j1 >= 0.0 && j2 >= 0.0);
        prop_assert!((total - (j1 + j2)).abs() <= 1e-12 * total.max(1e-300));
        // A shift by whole cells moves the rasterized set and the domain together.
        let step = 2.0 / 40.0 * 3.0;
        let moved = perimeter_k(&e.translated(&[step, 0.0]).unwrap(), &om.translated(&[step, 0.0]).unwrap(), &k, &opts).unwrap();
        prop_assert!((moved.total.as_float() - total).abs() <= 1e-9 * total.max(1e-300));
        prop_assert!(perimeter_k(&Shape::Empty, &om, &k, &opts).unwrap().total.as_float() == 0.0);
    }

    #[test]
    fn nested_disks_stay_nested(r in 0.15f64..0.3, gap in 0.08f64..0.2) {
        let aniso = Anisotropy::new(Kernel::ball(2, 0.25).unwrap(), ZRuleParams::default()).unwrap();
        let (inner, outer) = (disk(r), disk(r + gap));
        let dt = stability_limit(inner.grid(), &aniso).unwrap();
        let params = EvolveParams { dt, t_end: 40.0 * dt, snapshot_every: 40 };
        let a = evolve(&inner, &aniso, &Scheme::Local, &params).unwrap();
        let b = evolve(&outer, &aniso, &Scheme::Local, &params).unwrap();
        let (fa, fb) = (&a.snapshots.last().unwrap().field, &b.snapshots.last().unwrap().field);
        for (va, vb) in fa.values().iter().zip(fb.values()) {
            prop_assert!(*va < 0.0 || *vb >= 0.0);
            prop_assert!((-0.3..=0.3).contains(va));
        }
    }
}
