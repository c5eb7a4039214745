//! The named experiments.

use std::f64::consts::PI;

use nonlocal::anisotropy::{halfspace_cell_experiment, Anisotropy, CellResolution, CompetitorFamily};
use nonlocal::curvature::{curvature_convergence, PvOptions};
use nonlocal::energy::{coarea_check, limit_tv, perimeter_k, submodularity_check, EnergyOptions, LimitInput};
use nonlocal::fields::{GridBox, GridField, Shape, Tag};
use nonlocal::flow::{evolve, monitors, stability_limit, EvolveParams, MonitorReport, Scheme, StepMonitor, Trajectory};
use nonlocal::kernel::{Kernel, KernelSpec, ZRuleParams};
use nonlocal::rate::{
    e1d, e1d_limit, e1d_lower_bound, e1d_upper_bound, effective_mass, effective_positivity, rate_by_slices, rate_ddim, rate_limit_ddim,
    regularity_criterion, Potential, Profile1D, RateOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Needs};
use crate::report::{Cell, Check, ExperimentReport, Outcome, ReportRow, Table};
use crate::CliError;

type Runner = fn(&ExperimentConfig) -> Result<Outcome, CliError>;

pub struct Experiment {
    pub name: &'static str,
    pub needs: Needs,
    pub run: Runner,
}

const K: Needs = Needs { kernel: true, geometry: false, potential: false, flow: false, eps: false };
const KG: Needs = Needs { geometry: true, ..K };
const KGE: Needs = Needs { eps: true, ..KG };

pub const REGISTRY: &[Experiment] = &[
    Experiment { name: "perimeter-limit", needs: KGE, run: perimeter_limit },
    Experiment { name: "sigma-derivatives", needs: K, run: sigma_derivatives },
    Experiment { name: "halfspace-cell", needs: Needs { eps: true, ..K }, run: halfspace_cell },
    Experiment { name: "curvature-limit", needs: KGE, run: curvature_limit },
    Experiment { name: "coarea", needs: KG, run: coarea },
    Experiment { name: "submodularity", needs: KG, run: submodularity },
    Experiment { name: "bbm-1d", needs: Needs { kernel: false, potential: true, eps: true, ..K }, run: bbm_1d },
    Experiment { name: "bbm-slice", needs: Needs { potential: true, ..KGE }, run: bbm_slice },
    Experiment { name: "effective-kernel", needs: K, run: effective_kernel },
    Experiment { name: "flow-compare", needs: Needs { flow: true, ..KGE }, run: flow_compare },
    Experiment { name: "flow-monitors", needs: Needs { flow: true, ..KGE }, run: flow_monitors },
    Experiment { name: "regularity", needs: Needs { potential: true, ..KGE }, run: regularity },
];

pub fn find(name: &str) -> Option<&'static Experiment> {
    REGISTRY.iter().find(|e| e.name == name)
}

fn kernel(cfg: &ExperimentConfig) -> Result<Kernel<f64>, CliError> {
    Ok(Kernel::from_spec(cfg.kernel())?)
}

fn aniso(k: Kernel<f64>) -> Result<Anisotropy<f64>, CliError> {
    Ok(Anisotropy::new(k, ZRuleParams::default())?)
}

fn shape(cfg: &ExperimentConfig, which: &str) -> Result<Shape<f64>, CliError> {
    let g = cfg.geometry();
    let spec = match which {
        "shape" => g.shape.as_ref(),
        _ => g.domain.as_ref(),
    };
    spec.ok_or_else(|| CliError::Invalid(format!("experiment {} needs geometry.{which}", cfg.experiment)))?.build()
}

fn domain_or_box(cfg: &ExperimentConfig) -> Result<Shape<f64>, CliError> {
    let g = cfg.geometry();
    match &g.domain {
        Some(d) => d.build(),
        None => Ok(Shape::axis_box(&[-g.half, -g.half], &[g.half, g.half])?),
    }
}

fn grid(cfg: &ExperimentConfig, n: usize) -> Result<GridBox<f64>, CliError> {
    Ok(GridBox::centered(cfg.kernel.as_ref().map_or(2, |k| k.dim), cfg.geometry().half, n)?)
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

/// Runs `f` over the eps list in parallel, keeping the order.
fn per_eps<R: Send>(cfg: &ExperimentConfig, f: impl Fn(f64) -> Result<R, CliError> + Sync) -> Result<Vec<R>, CliError> {
    cfg.eps.par_iter().map(|&e| f(e)).collect()
}

fn perimeter_limit(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let e = shape(cfg, "shape")?;
    let om = shape(cfg, "domain")?;
    let a = aniso(kernel(cfg)?)?;
    let g = cfg.geometry();
    let j0 = limit_tv(LimitInput::Shape(&e), &om, &a, 2.0 * g.half)?;
    let measured = per_eps(cfg, |eps| {
        let n = ((16.0 / eps).ceil() as usize).clamp(64, g.resolution.max(64));
        let b = perimeter_k(&e, &om, &a.kernel().rescaled(eps)?, &EnergyOptions::new(grid(cfg, n)?))?;
        let total = b.total.finite().ok_or_else(|| CliError::Invalid("infinite perimeter".into()))?;
        Ok((total / eps, b.j2.as_float() / eps))
    })?;
    let rows = cfg.eps.iter().zip(&measured).map(|(&eps, &(v, _))| ReportRow::new(eps, v, j0)).collect();
    let report = ExperimentReport::new("perimeter", "eps", rows).with_rate();
    let tol = cfg.tolerance_or(0.05);
    let residue = measured.iter().map(|m| m.1.abs() / j0).fold(0.0, f64::max);
    let checks = vec![
        Check::new("pointwise limit", report.last_rel_gap() < tol, format!("relative gap {:.3e} at the smallest eps, tolerance {tol:e}", report.last_rel_gap())),
        Check::new("boundary residue", residue < 0.01, format!("max |J2|/(eps J0) = {residue:.3e}")),
    ];
    Ok(Outcome { reports: vec![report], tables: vec![], checks })
}

fn sigma_derivatives(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let a = Anisotropy::new(kernel(cfg)?, ZRuleParams { angular: 128, ..ZRuleParams::default() })?;
    if a.kernel().dim() != 2 {
        return Err(CliError::Invalid("sigma-derivatives samples planar directions".into()));
    }
    let n = cfg.geometry.as_ref().and_then(|g| g.samples).unwrap_or(8);
    let (mut euler, mut grad, mut hess) = (Vec::new(), Vec::new(), Vec::new());
    let h = 1e-4;
    let step = 1e-3;
    for i in 0..n {
        let th = PI * i as f64 / n as f64 + 0.1;
        let p = [th.cos(), th.sin()];
        let t = [-th.sin(), th.cos()];
        let s = a.sigma(&p)?;
        let g = a.grad_sigma(&p)?;
        let hs = a.hessian_sigma(&p)?;
        let along = |d: f64| a.sigma(&[p[0] + d * t[0], p[1] + d * t[1]]);
        euler.push(ReportRow::new(th, p[0] * g[0] + p[1] * g[1], s));
        grad.push(ReportRow::scaled(th, g[0] * t[0] + g[1] * t[1], (along(h)? - along(-h)?) / (2.0 * h), s));
        let tht = (0..2).map(|i| (0..2).map(|j| t[i] * hs[i][j] * t[j]).sum::<f64>()).sum::<f64>();
        hess.push(ReportRow::scaled(th, tht, (along(step)? - 2.0 * s + along(-step)?) / (step * step), s));
    }
    let reports = vec![
        ExperimentReport::new("euler", "angle", euler),
        ExperimentReport::new("gradient", "angle", grad),
        ExperimentReport::new("hessian", "angle", hess),
    ];
    let checks = vec![
        Check::new("euler identity", reports[0].max_rel_gap() < 1e-6, format!("max relative gap {:.3e}", reports[0].max_rel_gap())),
        Check::new("gradient", reports[1].max_rel_gap() < 1e-4, format!("max gap relative to sigma {:.3e}", reports[1].max_rel_gap())),
        Check::new("hessian", reports[2].max_rel_gap() < 1e-3, format!("max gap relative to sigma {:.3e}", reports[2].max_rel_gap())),
    ];
    Ok(Outcome { reports, tables: vec![], checks })
}

fn halfspace_cell(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let a = aniso(kernel(cfg)?)?;
    let normal = cfg.geometry.as_ref().and_then(|g| g.normal.clone()).unwrap_or_else(|| vec![1.0, 0.0]);
    let r = halfspace_cell_experiment(&a, &normal, &cfg.eps, &CompetitorFamily::default(), cfg.seed, &CellResolution::default())?;
    let rows = r.eps.iter().zip(&r.halfspace).map(|(&e, &v)| ReportRow::new(e, v, r.sigma)).collect();
    let report = ExperimentReport::new("halfspace", "eps", rows).with_rate();
    let competitors = Table::new(
        "competitors",
        &["eps", "competitor", "normalized_energy"],
        r.rows().into_iter().map(|(e, i, v)| vec![Cell::Num(e), Cell::Int(i as u64), Cell::Num(v)]).collect(),
    );
    let tol = cfg.tolerance_or(0.05);
    let undercut = r.worst_undercut();
    let checks = vec![
        Check::new("halfspace value", report.last_rel_gap() < tol, format!("relative gap to sigma {:.3e}", report.last_rel_gap())),
        Check::new("competitors", undercut <= 0.02, format!("worst relative undercut {undercut:.3e}")),
    ];
    Ok(Outcome { reports: vec![report], tables: vec![competitors], checks })
}

fn curvature_limit(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let e = shape(cfg, "shape")?;
    let a = aniso(kernel(cfg)?)?;
    let samples = cfg.geometry().samples.unwrap_or(16);
    let runs = per_eps(cfg, |eps| Ok(curvature_convergence(&e, &a, &[eps], samples, &PvOptions::default())?))?;
    let mut rows = Vec::new();
    let mut sample_rows = Vec::new();
    let mut sup = Vec::new();
    for run in &runs {
        let worst = run.rows.iter().max_by(|p, q| p.abs_err.total_cmp(&q.abs_err)).ok_or_else(|| CliError::Invalid("no boundary samples".into()))?;
        rows.push(ReportRow::new(worst.eps, worst.hk_over_eps, worst.h0));
        sup.push(worst.abs_err);
        sample_rows.extend(run.rows.iter().map(|r| vec![Cell::Num(r.eps), Cell::Int(r.sample as u64), Cell::Num(r.x), Cell::Num(r.y), Cell::Num(r.hk_over_eps), Cell::Num(r.h0)]));
    }
    let report = ExperimentReport::new("curvature", "eps", rows).with_rate();
    let tol = cfg.tolerance_or(0.05);
    let decreasing = sup.windows(2).all(|w| w[1] < w[0]);
    let checks = vec![
        Check::new("decreasing error", decreasing, format!("sup errors [{}]", list(&sup))),
        Check::new("final error", report.last_rel_gap() < tol, format!("relative {:.3e}, tolerance {tol:e}", report.last_rel_gap())),
    ];
    let table = Table::new("samples", &["eps", "sample", "x", "y", "scaled_curvature", "local_curvature"], sample_rows);
    Ok(Outcome { reports: vec![report], tables: vec![table], checks })
}

fn coarea(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let g = cfg.geometry();
    let half = g.half;
    let u = GridField::from_fn(grid(cfg, g.resolution)?, Tag::Phase, |x: &[f64; 3]| 0.5 * (x[0] / half + 1.0))?;
    let levels = g.levels.unwrap_or(32);
    let c = coarea_check(&u, &domain_or_box(cfg)?, &kernel(cfg)?, levels, &ZRuleParams::default())?;
    let report = ExperimentReport::new("coarea", "levels", vec![ReportRow::new(levels as f64, c.lhs, c.rhs)]);
    let tol = cfg.tolerance_or(0.02);
    let checks = vec![Check::new("coarea identity", report.last_rel_gap() < tol, format!("relative gap {:.3e}, tolerance {tol:e}", report.last_rel_gap()))];
    Ok(Outcome { reports: vec![report], tables: vec![], checks })
}

fn random_box(rng: &mut ChaCha8Rng, half: f64) -> Result<Shape<f64>, CliError> {
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    for k in 0..2 {
        let a = rng.gen_range(-0.8..0.6) * half;
        lo[k] = a;
        hi[k] = a + (rng.gen_range(0.1..0.8) * half).min(0.85 * half - a);
    }
    Ok(Shape::axis_box(&lo, &hi)?)
}

fn submodularity(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let g = cfg.geometry();
    let k = kernel(cfg)?;
    let om = domain_or_box(cfg)?;
    let opts = EnergyOptions::new(grid(cfg, g.resolution)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs: Vec<(Shape<f64>, Shape<f64>)> =
        (0..g.pairs.unwrap_or(100)).map(|_| Ok((random_box(&mut rng, g.half)?, random_box(&mut rng, g.half)?))).collect::<Result<_, CliError>>()?;
    let slacks: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|(e, f)| {
            let slack = submodularity_check(e, f, &om, &k, &opts)?;
            let scale = perimeter_k(e, &om, &k, &opts)?.total.as_float() + perimeter_k(f, &om, &k, &opts)?.total.as_float();
            Ok((slack, scale.max(f64::MIN_POSITIVE)))
        })
        .collect::<Result<_, CliError>>()?;
    let rows = slacks.iter().enumerate().map(|(i, &(s, scale))| ReportRow::scaled(i as f64, s, 0.0, scale)).collect();
    let failures = slacks.iter().filter(|(s, scale)| *s < -1e-9 * scale).count();
    let worst = slacks.iter().map(|(s, scale)| s / scale).fold(f64::INFINITY, f64::min);
    let checks = vec![Check::new("submodularity", failures == 0, format!("{failures} failures in {} pairs, smallest relative slack {worst:.3e}", slacks.len()))];
    Ok(Outcome { reports: vec![ExperimentReport::new("slack", "pair", rows)], tables: vec![], checks })
}

const RATE_HEADER: [&str; 7] = ["eps", "F_eps", "F_0", "E_eps", "E_0", "lower_bound", "upper_bound"];

fn bbm_1d(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let f = *cfg.potential();
    let rows = per_eps(cfg, |eps| {
        let cells = ((2.0 / (eps / 16.0)).ceil() as usize).max(64);
        let u = Profile1D::from_fn(-1.0, 1.0, cells, |x: f64| (1.0 - x * x).max(0.0))?;
        let e = e1d(&u, &f, eps)?;
        let e0 = e1d_limit(&u, &f).as_float();
        let f0 = integral_of_potential(&u, &f);
        let lower = if f.alpha() > 0.0 { Some(e1d_lower_bound(&u, &f, eps)?) } else { None };
        let upper = f.upper().map(|_| e1d_upper_bound(&u, &f)).transpose()?;
        Ok((eps, f0 - eps * eps * e, f0, e, e0, lower, upper))
    })?;
    let table = Table::new(
        "rate",
        &RATE_HEADER,
        rows.iter()
            .map(|r| {
                let opt = |v: Option<f64>| v.map_or(Cell::Empty, Cell::Num);
                vec![Cell::Num(r.0), Cell::Num(r.1), Cell::Num(r.2), Cell::Num(r.3), Cell::Num(r.4), opt(r.5), opt(r.6)]
            })
            .collect(),
    );
    let report = ExperimentReport::new("energy", "eps", rows.iter().map(|r| ReportRow::new(r.0, r.3, r.4)).collect()).with_rate();
    // For t^2 the lower bound is an identity, so its margin is zero up to rounding.
    let margin = rows
        .iter()
        .map(|r| r.5.map_or(f64::INFINITY, |l| (r.3 - l) / r.3).min(r.6.map_or(f64::INFINITY, |u| (u - r.3) / r.3)))
        .fold(f64::INFINITY, f64::min);
    let tol = cfg.tolerance_or(0.02);
    let checks = vec![
        Check::new("limit", report.last_rel_gap() < tol, format!("relative gap {:.3e} at the smallest eps", report.last_rel_gap())),
        Check::new("bounds", margin >= -1e-12, format!("smallest relative bound margin {margin:.3e}")),
    ];
    Ok(Outcome { reports: vec![report], tables: vec![table], checks })
}

/// `int f(u)` by three-point Gauss on each cell.
fn integral_of_potential(u: &Profile1D<f64>, f: &Potential) -> f64 {
    let (a, _) = u.interval();
    let h = u.spacing();
    let nodes = [-(0.6f64.sqrt()), 0.0, 0.6f64.sqrt()];
    let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    (0..u.values().len() - 1)
        .map(|i| {
            let mid = a + h * (i as f64 + 0.5);
            nodes.iter().zip(&weights).map(|(n, w)| w * f.f(u.eval(mid + 0.5 * h * n))).sum::<f64>() * 0.5 * h
        })
        .sum()
}

fn bump(cfg: &ExperimentConfig) -> Result<GridField<f64>, CliError> {
    let g = cfg.geometry();
    let rho = g.radius.unwrap_or(2.0 * g.half / 3.0);
    Ok(GridField::from_fn(grid(cfg, g.resolution)?, Tag::LevelSet, |x: &[f64; 3]| {
        let v = (1.0 - (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (rho * rho)).max(0.0);
        v * v
    })?)
}

fn bbm_slice(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let u = bump(cfg)?;
    let g = kernel(cfg)?;
    let f = *cfg.potential();
    let o = RateOptions::default();
    let e0 = rate_limit_ddim(&u, &g, &f, &o)?;
    let rows = per_eps(cfg, |eps| Ok((eps, rate_ddim(&u, &g, &f, eps, &o)?, rate_by_slices(&u, &g, &f, eps, &o)?)))?;
    let table = Table::new(
        "rate",
        &RATE_HEADER,
        rows.iter().map(|(eps, v, _)| vec![Cell::Num(*eps), Cell::Num(v.f_eps), Cell::Num(v.f_0), Cell::Num(v.e_eps), Cell::Num(e0), Cell::Empty, Cell::Empty]).collect(),
    );
    let report = ExperimentReport::new("slicing", "eps", rows.iter().map(|(eps, v, s)| ReportRow::new(*eps, *s, v.e_eps)).collect());
    let tol = cfg.tolerance_or(0.01);
    let checks = vec![Check::new("slicing identity", report.max_rel_gap() < tol, format!("max relative gap {:.3e}", report.max_rel_gap()))];
    Ok(Outcome { reports: vec![report], tables: vec![table], checks })
}

fn effective_kernel(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let base = cfg.kernel();
    let samples = cfg.geometry.as_ref().and_then(|g| g.samples).unwrap_or(1000);
    let mut mins = Vec::new();
    let mut masses = Vec::new();
    for d in [2usize, 3] {
        let k = Kernel::<f64>::from_spec(&KernelSpec { dim: d, ..base.clone() })?;
        let r1 = cfg.geometry.as_ref().and_then(|g| g.radius).or_else(|| k.support_radius()).ok_or_else(|| CliError::Invalid("geometry.radius is needed for kernels without compact support".into()))?;
        let (min, _) = effective_positivity(&k, r1, samples, cfg.seed);
        let (eff, mass) = effective_mass(&k, &ZRuleParams::default());
        let finite = |v: nonlocal::Extended<f64>| v.finite().ok_or_else(|| CliError::Invalid("kernel mass is infinite".into()));
        mins.push(ReportRow::scaled(d as f64, min, 0.0, 1.0));
        masses.push(ReportRow::new(d as f64, finite(eff)?, finite(mass)?));
    }
    let positive = mins.iter().all(|r| r.measured > 0.0);
    let mass = ExperimentReport::new("mass", "dim", masses);
    let checks = vec![
        Check::new("positivity", positive, format!("sampled minima [{}]", list(&mins.iter().map(|r| r.measured).collect::<Vec<_>>()))),
        Check::new("mass identity", mass.max_rel_gap() < 1e-3, format!("max relative gap {:.3e}", mass.max_rel_gap())),
    ];
    Ok(Outcome { reports: vec![ExperimentReport::new("minimum", "dim", mins), mass], tables: vec![], checks })
}

struct FlowRuns {
    oracle: ExperimentReport,
    local: Trajectory<f64>,
    nonlocal: Vec<Trajectory<f64>>,
}

fn radius(s: &StepMonitor) -> f64 {
    (s.zero_level_area / PI).sqrt()
}

fn flow_runs(cfg: &ExperimentConfig) -> Result<FlowRuns, CliError> {
    let fb = cfg.flow();
    let g = cfg.geometry();
    let k = kernel(cfg)?;
    if k.dim() != 2 {
        return Err(CliError::Invalid("the flow experiments are planar".into()));
    }
    let a = aniso(k.clone())?;
    let kappa = a.radial_constant().ok_or_else(|| CliError::Invalid("the flow experiments need a radial kernel".into()))?;
    let (lo, hi, r0) = (fb.clamp[0], fb.clamp[1], fb.radius);
    let u = GridField::from_fn(grid(cfg, g.resolution)?, Tag::LevelSet, |x: &[f64; 3]| (r0 - x[0].hypot(x[1])).clamp(lo, hi))?.with_extension(lo)?;
    let dt = match fb.dt {
        Some(dt) => dt,
        None => stability_limit(u.grid(), &a)?,
    };
    let params = EvolveParams { dt, t_end: fb.t_end_fraction * r0 * r0 / (2.0 * kappa), snapshot_every: fb.snapshot_every };
    let local = evolve(&u, &a, &Scheme::Local, &params)?;
    let oracle = local
        .steps
        .iter()
        .map(|s| ReportRow::new(s.time, radius(s), (r0 * r0 - 2.0 * kappa * s.time).max(0.0).sqrt()))
        .collect();
    let nonlocal = per_eps(cfg, |eps| Ok(evolve(&u, &a, &Scheme::Nonlocal { kernel: &k, eps, options: fb.nonlocal.clone() }, &params)?))?;
    Ok(FlowRuns { oracle: ExperimentReport::new("local_radius", "t", oracle), local, nonlocal })
}

fn trajectory_table(name: &str, m: &MonitorReport) -> Table {
    Table::numeric(
        name,
        &["t", "zero_level_area", "max_lipschitz", "holder_stat"],
        m.rows.iter().map(|r| vec![r.time, r.zero_level_area, r.max_lipschitz, r.holder_stat]).collect(),
    )
}

fn flow_compare(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let runs = flow_runs(cfg)?;
    let gaps: Vec<f64> = runs
        .nonlocal
        .iter()
        .map(|t| t.steps.iter().zip(&runs.local.steps).map(|(a, b)| (radius(a) - radius(b)).abs()).fold(0.0, f64::max))
        .collect();
    let final_local = runs.local.steps.last().map_or(0.0, radius);
    let rows = cfg.eps.iter().zip(&gaps).map(|(&e, &gap)| ReportRow::scaled(e, gap, 0.0, cfg.flow().radius)).collect();
    let gap_report = ExperimentReport::new("radius_gap", "eps", rows).with_rate();
    let tol = cfg.tolerance_or(0.02);
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let checks = vec![
        Check::new("local radius law", runs.oracle.max_rel_gap() < tol, format!("max relative radius error {:.3e}, final radius {final_local:.5}", runs.oracle.max_rel_gap())),
        Check::new("nonlocal convergence", decreasing, format!("sup radius gaps [{}]", list(&gaps))),
    ];
    let mut tables = vec![trajectory_table("trajectory_local", &monitors(&runs.local))];
    for (eps, t) in cfg.eps.iter().zip(&runs.nonlocal) {
        tables.push(trajectory_table(&format!("trajectory_eps_{eps}"), &monitors(t)));
    }
    Ok(Outcome { reports: vec![runs.oracle, gap_report], tables, checks })
}

fn flow_monitors(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let runs = flow_runs(cfg)?;
    let reports: Vec<MonitorReport> = runs.nonlocal.iter().map(monitors).collect();
    let lipschitz = reports.iter().all(|r| r.lipschitz_within(0.05));
    let worst = reports.iter().flat_map(|r| r.rows.iter().map(move |row| row.max_lipschitz / r.initial_lipschitz)).fold(0.0, f64::max);
    let holder: Vec<f64> = reports.iter().map(|r| r.holder_constant).collect();
    let mean = holder.iter().sum::<f64>() / holder.len() as f64;
    let rows: Vec<ReportRow> = cfg.eps.iter().zip(&holder).map(|(&e, &h)| ReportRow::new(e, h, mean)).collect();
    let holder_report = ExperimentReport::new("holder", "eps", rows);
    let spread = holder_report.max_rel_gap();
    let checks = vec![
        Check::new("lipschitz", lipschitz, format!("max ratio to the initial constant {worst:.4}")),
        Check::new("holder", holder.iter().all(|h| h.is_finite()) && spread <= 0.2, format!("constants [{}], spread {spread:.3e}", list(&holder))),
    ];
    let tables = cfg.eps.iter().zip(&reports).map(|(eps, r)| trajectory_table(&format!("trajectory_eps_{eps}"), r)).collect();
    Ok(Outcome { reports: vec![holder_report], tables, checks })
}

fn regularity(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let u = bump(cfg)?;
    let g = kernel(cfg)?;
    let r = regularity_criterion(&u, &g, cfg.potential(), &cfg.eps, &RateOptions::default())?;
    let rows = r.rows.iter().map(|row| ReportRow::new(row.eps, row.e_eps, r.bound)).collect();
    let checks = vec![Check::new("bounded rate", r.within_bound(), format!("max E_eps {:.6e}, bound {:.6e}", r.rows.iter().map(|x| x.e_eps).fold(0.0, f64::max), r.bound))];
    Ok(Outcome { reports: vec![ExperimentReport::new("regularity", "eps", rows)], tables: vec![], checks })
}
