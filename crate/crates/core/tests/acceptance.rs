//! The thirteen acceptance criteria, one pass/fail line each.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use nonlocal::anisotropy::{halfspace_cell_experiment, Anisotropy, CellResolution, CompetitorFamily};
use nonlocal::curvature::{curvature_convergence, hk_pv, PvOptions};
use nonlocal::energy::{coarea_check, limit_tv, perimeter_k, submodularity_check, EnergyOptions, LimitInput};
use nonlocal::fields::{GridBox, GridField, Shape, Tag};
use nonlocal::flow::{evolve, monitors, stability_limit, EvolveParams, MonitorReport, NonlocalOptions, Scheme, StepMonitor};
use nonlocal::kernel::{FamilySpec, Kernel, KernelSpec, ZRuleParams};
use nonlocal::rate::{
    e1d, e1d_lower_bound, e1d_upper_bound, effective_mass, effective_positivity, rate_by_slices, rate_ddim, Potential, Profile1D,
    RateOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn ball_aniso(radius: f64) -> Anisotropy<f64> {
    Anisotropy::new(Kernel::ball(2, radius).unwrap(), ZRuleParams::default()).unwrap()
}

fn halfspace_exactness() -> Outcome {
    let kernels = [
        Kernel::<f64>::ball(2, 1.0).map_err(err)?,
        Kernel::fractional(2, 0.5, Some(1.0)).map_err(err)?,
        Kernel::gaussian(2, 0.4).map_err(err)?,
    ];
    let mut worst = 0.0f64;
    for k in &kernels {
        for i in 0..8 {
            let th = PI * i as f64 / 4.0 + 0.1;
            let e = Shape::halfspace(&[th.cos(), th.sin()], 0.0).map_err(err)?;
            let v = hk_pv(&e, &[0.0, 0.0], k, &PvOptions::default()).map_err(err)?;
            worst = worst.max(v.value.abs() / v.annulus_mass.unwrap_or(1.0));
        }
    }
    check(worst <= 1e-8, format!("max |H|/annulus mass = {worst:.2e} over 24 cases"))
}

fn curvature_limit() -> Outcome {
    let a = Anisotropy::new(Kernel::fractional(2, 0.5, Some(1.0)).map_err(err)?, ZRuleParams::default()).map_err(err)?;
    let disk = Shape::ball(&[0.0, 0.0], 0.5).map_err(err)?;
    let r = curvature_convergence(&disk, &a, &[0.4, 0.2, 0.1, 0.05], 16, &PvOptions::default()).map_err(err)?;
    let local = a.radial_constant().ok_or("radial constant")? / 0.5;
    let sup = r.sup_errors();
    let last = sup[sup.len() - 1] / local;
    check(r.strictly_decreasing() && last < 0.05, format!("sup errors [{}], final relative {last:.2e}", list(&sup)))
}

fn perimeter_limit() -> Outcome {
    let e = Shape::ball(&[0.0, 0.0], 0.5).map_err(err)?;
    let om = Shape::ball(&[0.0, 0.0], 1.0).map_err(err)?;
    let a = ball_aniso(1.0);
    let j0 = limit_tv(LimitInput::Shape(&e), &om, &a, 2.0).map_err(err)?;
    let mut gaps = Vec::new();
    let mut residue = 0.0f64;
    for eps in [0.4, 0.2, 0.1, 0.05] {
        let n = ((16.0 / eps) as usize).clamp(64, 400);
        let opts = EnergyOptions::new(GridBox::centered(2, 1.0, n).map_err(err)?);
        let b = perimeter_k(&e, &om, &a.kernel().rescaled(eps).map_err(err)?, &opts).map_err(err)?;
        let v = b.total.finite().ok_or("infinite perimeter")? / eps;
        gaps.push((v - j0).abs() / j0);
        residue = residue.max(b.j2.finite().ok_or("infinite cross term")?.abs() / eps / j0);
    }
    let last = gaps[gaps.len() - 1];
    check(last < 0.05 && residue < 0.01, format!("relative gaps [{}], cross-term residue {residue:.1e}", list(&gaps)))
}

fn sigma_identities() -> Outcome {
    let mut spec = Kernel::<f64>::gaussian(2, 0.5).map_err(err)?.spec();
    spec.stretch = Some(nonlocal::kernel::StretchSpec { factors: vec![1.0, 2.5], angle: 0.4 });
    let a = Anisotropy::new(Kernel::from_spec(&spec).map_err(err)?, ZRuleParams { angular: 128, ..ZRuleParams::default() }).map_err(err)?;
    let p = [0.6f64, 0.8];
    let g = a.grad_sigma(&p).map_err(err)?;
    let h = 1e-4;
    let mut grad_err = 0.0f64;
    for i in 0..2 {
        let (mut up, mut dn) = (p, p);
        up[i] += h;
        dn[i] -= h;
        let fd = (a.sigma(&up).map_err(err)? - a.sigma(&dn).map_err(err)?) / (2.0 * h);
        grad_err = grad_err.max((fd - g[i]).abs() / g[i].abs().max(1e-3));
    }
    let s = a.sigma(&p).map_err(err)?;
    let euler = (p[0] * g[0] + p[1] * g[1] - s).abs() / s;
    let q = [0.5f64.sqrt(), 0.5f64.sqrt()];
    let hs = a.hessian_sigma(&q).map_err(err)?;
    let scale = hs[0][0].abs().max(hs[1][1].abs());
    let step = 1e-3;
    let mut hess_err = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            let f = |di: f64, dj: f64| {
                let mut x = q;
                x[i] += di;
                x[j] += dj;
                a.sigma(&x).unwrap()
            };
            let fd = (f(step, step) - f(step, -step) - f(-step, step) + f(-step, -step)) / (4.0 * step * step);
            hess_err = hess_err.max((fd - hs[i][j]).abs() / scale);
        }
    }
    let b = ball_aniso(1.0);
    let bs = b.sigma(&[1.0, 0.0]).map_err(err)?;
    let bg = b.grad_sigma(&[1.0, 0.0]).map_err(err)?;
    let bh = b.hessian_sigma(&[1.0, 0.0]).map_err(err)?;
    let closed = [bs - 2.0 / 3.0, bg[0] - 2.0 / 3.0, bg[1], bh[0][0], bh[0][1], bh[1][1] - 2.0 / 3.0]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    check(
        grad_err < 1e-4 && hess_err < 1e-3 && euler < 1e-6 && closed < 1e-3,
        format!("gradient {grad_err:.1e}, Hessian {hess_err:.1e}, Euler {euler:.1e}, ball closed forms {closed:.1e}"),
    )
}

fn coarea() -> Outcome {
    let grid = GridBox::centered(2, 1.0, 64).map_err(err)?;
    let u = GridField::from_fn(grid, Tag::Phase, |x: &[f64; 3]| 0.5 * (x[0] + 1.0)).map_err(err)?;
    let om = Shape::axis_box(&[-1.0, -1.0], &[1.0, 1.0]).map_err(err)?;
    let c = coarea_check(&u, &om, &Kernel::ball(2, 0.3).map_err(err)?, 32, &ZRuleParams::default()).map_err(err)?;
    let rel = c.gap.abs() / c.lhs;
    check(rel < 0.02, format!("total variation {:.6}, level integral {:.6}, relative gap {rel:.2e}", c.lhs, c.rhs))
}

fn random_box(rng: &mut ChaCha8Rng) -> Shape<f64> {
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    for k in 0..2 {
        let a = rng.gen_range(-0.8..0.6);
        lo[k] = a;
        hi[k] = a + rng.gen_range(0.1..0.8f64).min(0.85 - a);
    }
    Shape::axis_box(&lo, &hi).unwrap()
}

fn submodularity() -> Outcome {
    let k = Kernel::fractional(2, 0.5, Some(0.5)).map_err(err)?;
    let om = Shape::ball(&[0.0, 0.0], 0.8).map_err(err)?;
    let opts = EnergyOptions::new(GridBox::centered(2, 1.0, 32).map_err(err)?);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let (e, f) = (random_box(&mut rng), random_box(&mut rng));
        let slack = submodularity_check(&e, &f, &om, &k, &opts).map_err(err)?;
        let scale = [&e, &f]
            .iter()
            .map(|s| perimeter_k(s, &om, &k, &opts).map(|b| b.total.as_float()))
            .sum::<nonlocal::Result<f64>>()
            .map_err(err)?
            .max(1e-300);
        worst = worst.min(slack / scale);
        if slack < -1e-9 * scale {
            failures += 1;
        }
    }
    check(failures == 0, format!("{failures} failures in 100 pairs, smallest relative slack {worst:.2e}"))
}

fn random_convex(rng: &mut ChaCha8Rng, i: usize) -> Shape<f64> {
    let c = [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
    match i % 3 {
        0 => Shape::ball(&c, rng.gen_range(0.2..0.6)).unwrap(),
        1 => Shape::ellipse(&c, [rng.gen_range(0.2..0.6), rng.gen_range(0.15..0.5)]).unwrap(),
        _ => {
            let n = rng.gen_range(3..8);
            let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let r = rng.gen_range(0.3..0.6);
            let v: Vec<[f64; 2]> = angles.iter().map(|a| [c[0] + r * a.cos(), c[1] + r * a.sin()]).collect();
            Shape::polygon(&v).unwrap_or_else(|_| Shape::ball(&c, r).unwrap())
        }
    }
}

fn convex_positivity() -> Outcome {
    let kernels = [Kernel::<f64>::ball(2, 0.3).map_err(err)?, Kernel::fractional(2, 0.5, Some(0.3)).map_err(err)?];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut smallest = f64::INFINITY;
    let mut failures = 0;
    let mut evaluated = 0;
    let opts = PvOptions { boundary_tol: 1e-9, ..PvOptions::default() };
    for i in 0..20 {
        let shape = random_convex(&mut rng, i);
        let k = &kernels[i % 2];
        for j in 0..8 {
            let x = shape.boundary_point((j as f64 + 0.37) / 8.0, 10.0).map_err(err)?;
            let v = hk_pv(&shape, &x[..2], k, &opts).map_err(err)?;
            evaluated += 1;
            smallest = smallest.min(v.value + v.error);
            if v.value < -v.error {
                failures += 1;
            }
        }
    }
    check(failures == 0, format!("{failures} negative values in {evaluated} points, min(H + error) {smallest:.3e}"))
}

fn parabola(eps: f64) -> Profile1D<f64> {
    let cells = ((2.0 / (eps / 16.0)).ceil() as usize).max(64);
    Profile1D::from_fn(-1.0, 1.0, cells, |x: f64| (1.0 - x * x).max(0.0)).unwrap()
}

fn bbm_1d() -> Outcome {
    let f = Potential::Quadratic;
    // For t^2 the lower bound is an identity, so its margin is zero up to rounding.
    let rounding = 1e-12;
    let mut margins = f64::INFINITY;
    let mut rel = 0.0;
    for eps in [1e-1, 1e-2, 1e-3] {
        let u = parabola(eps);
        let e = e1d(&u, &f, eps).map_err(err)?;
        let upper = e1d_upper_bound(&u, &f).map_err(err)?;
        let lower = e1d_lower_bound(&u, &f, eps).map_err(err)?;
        margins = margins.min((upper - e) / e).min((e - lower) / e);
        rel = (e - 2.0 / 9.0).abs() / (2.0 / 9.0);
    }
    check(
        rel < 0.02 && margins >= -rounding,
        format!("relative error at 1e-3 {rel:.2e}, smallest relative bound margin {margins:.3e} (rounding allowance {rounding:.0e})"),
    )
}

fn bump(n: usize) -> GridField<f64> {
    let grid = GridBox::centered(2, 1.5, n).unwrap();
    GridField::from_fn(grid, Tag::LevelSet, |x: &[f64; 3]| {
        let v = (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0);
        v * v
    })
    .unwrap()
}

fn slicing() -> Outcome {
    let g = Kernel::ball(2, 1.0).map_err(err)?;
    let u = bump(64);
    let o = RateOptions::default();
    let direct = rate_ddim(&u, &g, &Potential::Quadratic, 0.05, &o).map_err(err)?.e_eps;
    let sliced = rate_by_slices(&u, &g, &Potential::Quadratic, 0.05, &o).map_err(err)?;
    let rel = (sliced - direct).abs() / direct;
    check(rel < 0.01, format!("direct {direct:.6}, sliced {sliced:.6}, relative gap {rel:.2e}"))
}

fn effective_kernel() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for d in [2, 3] {
        let spec = KernelSpec { family: FamilySpec::AnnulusIndicator { inner: 0.2, outer: 1.0 }, ..Kernel::<f64>::ball(d, 1.0).map_err(err)?.spec() };
        let g = Kernel::<f64>::from_spec(&spec).map_err(err)?;
        let (min, _) = effective_positivity(&g, 1.0, 1000, 10);
        let (a, b) = effective_mass(&g, &ZRuleParams::default());
        let (a, b) = (a.finite().ok_or("infinite mass")?, b.finite().ok_or("infinite mass")?);
        let rel = (a - b).abs() / b;
        ok &= min > 0.0 && rel < 1e-3;
        details.push(format!("d={d}: min {min:.3e}, mass gap {rel:.1e}"));
    }
    check(ok, details.join("; "))
}

struct Sweep {
    oracle_error: f64,
    gaps: Vec<f64>,
    reports: Vec<MonitorReport>,
}

fn radius(s: &StepMonitor) -> f64 {
    (s.zero_level_area / PI).sqrt()
}

fn disk_level(n: usize) -> GridField<f64> {
    let grid = GridBox::centered(2, 1.0, n).unwrap();
    GridField::from_fn(grid, Tag::LevelSet, |x: &[f64; 3]| (0.5 - x[0].hypot(x[1])).clamp(-0.3, 0.45))
        .unwrap()
        .with_extension(-0.3)
        .unwrap()
}

fn flow_sweep() -> Result<&'static Sweep, String> {
    static SWEEP: OnceLock<Result<Sweep, String>> = OnceLock::new();
    SWEEP
        .get_or_init(|| {
            let u = disk_level(64);
            let small = ball_aniso(0.25);
            let kappa = 1.0 / 96.0;
            let dt = stability_limit(u.grid(), &small).map_err(err)?;
            let t_end = 0.91 * 0.25 / (2.0 * kappa);
            let local = evolve(&u, &small, &Scheme::Local, &EvolveParams { dt, t_end, snapshot_every: 50 }).map_err(err)?;
            let oracle_error = local
                .steps
                .iter()
                .map(|s| {
                    let exact = (0.25 - 2.0 * kappa * s.time).sqrt();
                    (radius(s) - exact).abs() / exact
                })
                .fold(0.0, f64::max);
            // A unit ball kernel keeps the rescaled reach above the grid spacing down to eps = 0.05.
            let kernel = Kernel::ball(2, 1.0).map_err(err)?;
            let big = ball_aniso(1.0);
            let kappa = big.radial_constant().ok_or("radial constant")?;
            let dt = stability_limit(u.grid(), &big).map_err(err)?;
            let params = EvolveParams { dt, t_end: 0.91 * 0.25 / (2.0 * kappa), snapshot_every: 20 };
            let reference = evolve(&u, &big, &Scheme::Local, &params).map_err(err)?;
            let mut gaps = Vec::new();
            let mut reports = vec![monitors(&reference)];
            for eps in [0.2, 0.1, 0.05] {
                let scheme = Scheme::Nonlocal { kernel: &kernel, eps, options: NonlocalOptions::default() };
                let run = evolve(&u, &big, &scheme, &params).map_err(err)?;
                gaps.push(run.steps.iter().zip(&reference.steps).map(|(a, b)| (radius(a) - radius(b)).abs()).fold(0.0, f64::max));
                reports.push(monitors(&run));
            }
            Ok(Sweep { oracle_error, gaps, reports })
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn flow_convergence() -> Outcome {
    let s = flow_sweep()?;
    let decreasing = s.gaps.windows(2).all(|w| w[1] < w[0]);
    check(
        s.oracle_error < 0.02 && decreasing,
        format!("local radius error {:.2e}; nonlocal sup radius gaps [{}]", s.oracle_error, list(&s.gaps)),
    )
}

fn flow_estimates() -> Outcome {
    let s = flow_sweep()?;
    let lipschitz_ok = s.reports.iter().all(|r| r.lipschitz_within(0.05));
    let worst = s.reports.iter().flat_map(|r| r.rows.iter().map(move |row| row.max_lipschitz / r.initial_lipschitz)).fold(0.0, f64::max);
    let holder: Vec<f64> = s.reports[1..].iter().map(|r| r.holder_constant).collect();
    let mean = holder.iter().sum::<f64>() / holder.len() as f64;
    let spread = holder.iter().map(|h| (h - mean).abs() / mean).fold(0.0, f64::max);
    check(
        lipschitz_ok && holder.iter().all(|h| h.is_finite()) && spread <= 0.2,
        format!("max Lipschitz ratio {worst:.4}; Hoelder constants [{}], spread {spread:.2e}", list(&holder)),
    )
}

fn halfspace_cell() -> Outcome {
    let a = ball_aniso(1.0);
    let r = halfspace_cell_experiment(&a, &[1.0, 0.0], &[0.2, 0.1, 0.05], &CompetitorFamily::default(), 13, &CellResolution::default())
        .map_err(err)?;
    let last = r.halfspace[r.halfspace.len() - 1];
    let rel = (last - r.sigma).abs() / r.sigma;
    let undercut = r.worst_undercut();
    let accepted = r.competitors.iter().filter(|c| c.rejected.is_none()).count();
    check(
        rel < 0.05 && undercut <= 0.02,
        format!("halfspace {last:.5} vs sigma {:.5} (gap {rel:.2e}); worst undercut {undercut:.2e} over {accepted} competitors", r.sigma),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        ("halfspace curvature exactness", halfspace_exactness),
        ("curvature convergence", curvature_limit),
        ("perimeter pointwise limit", perimeter_limit),
        ("anisotropy derivative identities", sigma_identities),
        ("coarea identity", coarea),
        ("submodularity", submodularity),
        ("convexity positivity", convex_positivity),
        ("one-dimensional rate limit", bbm_1d),
        ("slicing identity", slicing),
        ("effective kernel positivity", effective_kernel),
        ("flow convergence", flow_convergence),
        ("a-priori flow estimates", flow_estimates),
        ("halfspace cell consistency", halfspace_cell),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
