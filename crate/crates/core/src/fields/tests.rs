use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;

fn square(n: usize) -> GridBox<f64> {
    GridBox::centered(2, 1.0, n).unwrap()
}

#[test]
fn box_rejects_coarse_or_degenerate_input() {
    assert!(GridBox::<f64>::new(&[0.0, 0.0], &[1.0, 1.0], &[3, 8]).is_err());
    assert!(GridBox::<f64>::new(&[0.0, 0.0], &[1.0, 0.0], &[8, 8]).is_err());
    assert!(GridBox::<f64>::new(&[0.0], &[1.0, 1.0], &[8]).is_err());
}

#[test]
fn rasterized_disk_matches_subsampled_area_count() {
    let g = square(64);
    let disk = Shape::ball(&[0.0, 0.0], 0.5).unwrap();
    let f = rasterize(&disk, &g, RasterMode::Indicator);
    let count = f.values().iter().filter(|&&v| v == 1.0).count() as f64;
    // Area in cell units from 16 x 16 subsamples per cell.
    let h = 2.0 / 64.0;
    let sub = 16;
    let mut hits = 0usize;
    for i in 0..64 * sub {
        for j in 0..64 * sub {
            let x = -1.0 + (i as f64 + 0.5) * h / sub as f64;
            let y = -1.0 + (j as f64 + 0.5) * h / sub as f64;
            if x * x + y * y < 0.25 {
                hits += 1;
            }
        }
    }
    let oracle = hits as f64 / (sub * sub) as f64;
    assert!((oracle - PI * 0.25 / (h * h)).abs() < 2.0);
    assert!((count - oracle).abs() <= 40.0, "{count} vs {oracle}");
    let phase = rasterize(&disk, &g, RasterMode::Phase);
    let area: f64 = phase.values().iter().sum();
    assert!((area - oracle).abs() < 5.0);
    assert_eq!(phase.tag(), Tag::Phase);
}

#[test]
fn halfspace_and_empty_rasterize_exactly() {
    let g = square(64);
    let half = rasterize(&Shape::halfspace(&[1.0, 0.0], 0.0).unwrap(), &g, RasterMode::Indicator);
    assert_eq!(half.values().iter().filter(|&&v| v == 1.0).count(), 64 * 32);
    let empty = rasterize(&Shape::<f64>::Empty, &g, RasterMode::Indicator);
    assert!(empty.values().iter().all(|&v| v == 0.0));
}

/// Box whose cell centers sit on multiples of `h = 1/64` in `[-1, 1]^2`.
fn aligned() -> GridBox<f64> {
    let h = 1.0 / 64.0;
    GridBox::new(&[-1.0 - h / 2.0; 2], &[2.0 + h; 2], &[129, 129]).unwrap()
}

#[test]
fn differences_are_exact_on_affine_and_quadratic_fields() {
    let g = aligned();
    let lin = GridField::from_fn(g.clone(), Tag::LevelSet, |p| p[0]).unwrap();
    let (grad, hess) = differentiate(&lin, [70, 30, 0]).unwrap();
    assert!((grad[0] - 1.0).abs() < 1e-12 && grad[1].abs() < 1e-12);
    assert!(hess.iter().flatten().all(|v| v.abs() < 1e-9));
    let quad = GridField::from_fn(g, Tag::LevelSet, |p| 0.5 * (p[0] * p[0] + p[1] * p[1])).unwrap();
    let (_, hess) = differentiate(&quad, [40, 90, 0]).unwrap();
    assert!((hess[0][0] - 1.0).abs() < 1e-10 && (hess[1][1] - 1.0).abs() < 1e-10 && hess[0][1].abs() < 1e-10);
    assert!(matches!(differentiate(&quad, [0, 5, 0]), Err(crate::Error::Domain(_))));
}

#[test]
fn radial_distance_has_curvature_hessian() {
    let g = aligned();
    let f = GridField::from_fn(g.clone(), Tag::LevelSet, |p| (p[0] * p[0] + p[1] * p[1]).sqrt()).unwrap();
    let cell = [96, 64, 0];
    let c = g.center(cell);
    assert!((c[0] - 0.5).abs() < 1e-12 && c[1].abs() < 1e-12);
    let (_, hess) = differentiate(&f, cell).unwrap();
    assert!((hess[1][1] - 2.0).abs() / 2.0 < 1e-2, "{}", hess[1][1]);
    assert!(hess[0][0].abs() < 1e-9);
}

#[test]
fn slices_interpolate_linear_fields_exactly() {
    let g = square(32);
    let f = GridField::from_fn(g, Tag::LevelSet, |p| p[0]).unwrap();
    let s = slice(&f, &[1.0, 0.0], &[0.0, 0.0], Interpolation::Multilinear).unwrap();
    // Exact away from the outermost half cells, where the extension enters.
    for (t, v) in s.t.iter().zip(&s.values) {
        if t.abs() < 1.0 - 1.0 / 32.0 {
            assert!((v - t).abs() < 1e-12);
        }
    }
    let h = 2.0 / 32.0;
    assert!(s.t.windows(2).all(|w| w[1] - w[0] <= h + 1e-12));
    let miss = slice(&f, &[1.0, 0.0], &[0.0, 3.0], Interpolation::Multilinear).unwrap();
    assert!(miss.is_empty());
}

#[test]
fn slice_of_halfspace_steps_within_one_cell() {
    let g = square(32);
    let f = rasterize(&Shape::halfspace(&[1.0, 0.0], 0.0).unwrap(), &g, RasterMode::Indicator);
    let s = slice(&f, &[1.0, 0.0], &[0.0, 0.1], Interpolation::Multilinear).unwrap();
    let h = 2.0 / 32.0;
    for (t, v) in s.t.iter().zip(&s.values) {
        if *t < -h {
            assert_eq!(*v, 0.0);
        }
        if *t > h && *t < 1.0 - h {
            assert_eq!(*v, 1.0);
        }
    }
}

#[test]
fn diagonal_slice_of_sine_converges_quadratically() {
    let errs: Vec<f64> = [32usize, 64]
        .iter()
        .map(|&n| {
            let g = square(n);
            let f = GridField::from_fn(g, Tag::LevelSet, |p| (PI * p[0]).sin()).unwrap();
            let d = [0.5f64.sqrt(), 0.5f64.sqrt()];
            let s = slice(&f, &d, &[0.0, 0.0], Interpolation::Multilinear).unwrap();
            s.t.iter()
                .zip(&s.values)
                .filter(|(t, _)| t.abs() < 1.0)
                .map(|(t, v)| (v - (PI * t / 2f64.sqrt()).sin()).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(errs[0] < 1e-2);
    assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
}

#[test]
fn cubic_interpolant_is_exact_on_quadratics_with_consistent_gradient() {
    let g = square(16);
    let f = GridField::from_fn(g, Tag::LevelSet, |p| 0.3 + p[0] - 2.0 * p[1] + p[0] * p[1] + 0.5 * p[1] * p[1]).unwrap();
    let x = [0.123, -0.377, 0.0];
    let (v, grad) = f.sample_with_gradient(&x, Interpolation::Cubic, true);
    let exact = 0.3 + x[0] - 2.0 * x[1] + x[0] * x[1] + 0.5 * x[1] * x[1];
    assert!((v - exact).abs() < 1e-12);
    assert!((grad[0] - (1.0 + x[1])).abs() < 1e-10);
    assert!((grad[1] - (-2.0 + x[0] + x[1])).abs() < 1e-10);
}

#[test]
fn sliced_indicator_agrees_with_membership() {
    let g = square(128);
    let disk = Shape::ball(&[0.1, -0.2], 0.55).unwrap();
    let f = rasterize(&disk, &g, RasterMode::Indicator);
    let d = [0.6, 0.8];
    let s = slice(&f, &d, &[0.0, 0.0], Interpolation::Multilinear).unwrap();
    let agree = s
        .t
        .iter()
        .zip(&s.values)
        .filter(|(t, v)| (**v >= 0.5) == disk.contains(&[d[0] * **t, d[1] * **t, 0.0]))
        .count();
    assert!(agree as f64 >= 0.98 * s.t.len() as f64);
}

#[test]
fn superlevel_of_distance_is_disk_complement() {
    let g = square(64);
    let f = GridField::from_fn(g.clone(), Tag::LevelSet, |p| (p[0] * p[0] + p[1] * p[1]).sqrt() - 0.5).unwrap();
    let s = superlevel(&f, 0.0);
    let oracle = rasterize(&Shape::ball(&[0.0, 0.0], 0.5).unwrap().complement(), &g, RasterMode::Indicator);
    let ours = rasterize(&s, &g, RasterMode::Indicator);
    assert_eq!(ours.values(), oracle.values());
    let all = rasterize(&superlevel(&f, -10.0), &g, RasterMode::Indicator);
    assert!(all.values().iter().all(|&v| v == 1.0));
    let none = rasterize(&superlevel(&f, 10.0), &g, RasterMode::Indicator);
    assert!(none.values().iter().all(|&v| v == 0.0));
}

#[test]
fn grid_files_round_trip_exactly() {
    let g = GridBox::<f64>::new(&[-0.3, 0.1], &[1.7, 2.2], &[5, 7]).unwrap();
    let f = GridField::from_fn(g, Tag::LevelSet, |p| (p[0] * 3.1).sin() / 7.0 + p[1]).unwrap().with_extension(0.25).unwrap();
    let mut buf = Vec::new();
    write_field(&f, &mut buf).unwrap();
    let back: GridField<f64> = read_field(std::io::Cursor::new(buf)).unwrap();
    assert_eq!(back, f);
    assert!(matches!(read_field::<f64, _>(std::io::Cursor::new("dim 2\nbogus\n")), Err(crate::Error::Parse { .. })));
}

#[test]
fn shapes_report_normals_and_distances() {
    let b = Shape::<f64>::ball(&[0.0, 0.0], 1.0).unwrap();
    let n = b.outer_normal(&[0.6, 0.8, 0.0]).unwrap();
    assert!((n[0] - 0.6).abs() < 1e-12 && (n[1] - 0.8).abs() < 1e-12);
    let p = Shape::<f64>::polygon(&[[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).unwrap();
    assert!((p.signed_distance(&[0.25, 0.5, 0.0]).unwrap() - 0.25).abs() < 1e-12);
    assert!((p.signed_distance(&[2.0, 2.0, 0.0]).unwrap() + 2f64.sqrt()).abs() < 1e-12);
    assert!(Shape::<f64>::polygon(&[[0.0, 0.0], [1.0, 0.0], [0.2, 0.2], [0.0, 1.0]]).is_err());
    let h = Shape::halfspace(&[0.0, 2.0], 0.5).unwrap();
    assert!(h.contains(&[0.0, 0.6, 0.0]) && !h.contains(&[0.0, 0.4, 0.0]));
    let t = b.chart_height(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.3, 0.0], 0.5).unwrap();
    assert!((t - (1.0 - (1.0 - 0.09f64).sqrt())).abs() < 1e-12);
}

#[test]
fn boundary_point_walks_the_perimeter() {
    let b = Shape::ball(&[0.0, 0.0], 0.5).unwrap();
    for u in [0.0, 0.3, 0.9] {
        let p: [f64; 3] = b.boundary_point(u, 10.0).unwrap();
        assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 0.5).abs() < 1e-10);
        let ang = p[1].atan2(p[0]).rem_euclid(2.0 * PI);
        assert!((ang - 2.0 * PI * u).abs() < 1e-6 || u == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn superlevels_are_nested(c1 in -1.0f64..1.0, c2 in -1.0f64..1.0, a in -2.0f64..2.0) {
        let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        let f = GridField::from_fn(square(16), Tag::LevelSet, |p| (a * p[0]).sin() * p[1]).unwrap();
        let g = square(16);
        let big = rasterize(&superlevel(&f, lo), &g, RasterMode::Indicator);
        let small = rasterize(&superlevel(&f, hi), &g, RasterMode::Indicator);
        for (s, b) in small.values().iter().zip(big.values()) {
            prop_assert!(s <= b);
        }
    }
}
