//! Scenario drivers. Each returns a report whose checks decide the exit code.

use std::path::Path;
use std::time::Instant;

use landau_core::coefficients::{build_kernels, compute_coefficients, estimate_K0};
use landau_core::degiorgi::{iterate, t_star_scaling, DeGiorgiConfig, DeGiorgiTrace};
use landau_core::functionals::FunctionalRequest;
use landau_core::grid::ScalarField;
use landau_core::inequalities::{
    estimate_C_of_eps, lq_weight, max_implied_constant, point_pair, poincare_target_slope, remark_thresholds,
    tail_bound_check, BlobField, LevelInequality,
};
use landau_core::lorentz::{selftest, selftest_csv};
use landau_core::solver::{resume, run_observed, SolverConfig, Trajectory};
use landau_core::LandauError;
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::checkpoint;
use crate::config::{DeGiorgiBlock, ExperimentConfig, GridConfig, RatesBlock, Scenario};
use crate::error::{io_err, HarnessError, Result};
use crate::fits::{fit_appearance_rate, fit_moment_growth, within_relative};
use crate::initial::InitialData;
use crate::output::{write_report, write_text, write_trajectory, Check, Report};

/// Runs one experiment and writes its outputs under `out_root/<name>`.
pub fn execute(cfg: &ExperimentConfig, out_root: &Path) -> Result<Report> {
    cfg.validate()?;
    let dir = out_root.join(&cfg.name);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let start = Instant::now();
    info!("{}: {:?} on n = {}", cfg.name, cfg.scenario, cfg.grid.n);
    let mut report = match cfg.scenario {
        Scenario::Conservation => conservation(cfg, &dir),
        Scenario::Coercivity => coercivity(cfg),
        Scenario::Rates => rates(cfg, &dir),
        Scenario::Poincare => poincare(cfg, &dir),
        Scenario::Degiorgi => degiorgi(cfg, &dir),
        Scenario::Moments => moments(cfg, &dir),
        Scenario::LorentzSelftest => lorentz(cfg, &dir),
        Scenario::Inequalities => inequalities(cfg),
    }?;
    report.elapsed_s = start.elapsed().as_secs_f64();
    write_report(&dir, &report)?;
    Ok(report)
}

/// Integrates `f0`, checkpointing every `cfg.checkpoint_every` snapshots and
/// resuming from an existing checkpoint when `cfg.restart` is set.
pub fn simulate(cfg: &ExperimentConfig, f0: &ScalarField, solver: &SolverConfig, dir: &Path) -> Result<Trajectory> {
    let ck = dir.join("checkpoint.bin");
    let every = cfg.checkpoint_every;
    let mut stored = 0usize;
    let mut on_snapshot = |t: &Trajectory| -> landau_core::Result<()> {
        stored += 1;
        if every > 0 && stored % every == 0 {
            checkpoint::save(&ck, t).map_err(|e| LandauError::Io(std::io::Error::other(e.to_string())))?;
        }
        Ok(())
    };
    let traj = if cfg.restart && ck.exists() {
        let saved = checkpoint::load(&ck)?;
        if saved.spec() != f0.spec() || saved.gamma() != solver.gamma {
            return Err(HarnessError::Config(format!("{} belongs to a different grid or gamma", ck.display())));
        }
        info!("resuming from t = {}", saved.last().0);
        resume(saved, solver, &mut on_snapshot)?
    } else {
        run_observed(f0, solver, &mut on_snapshot)?
    };
    if every > 0 {
        checkpoint::save(&ck, &traj)?;
    }
    write_trajectory(dir, &traj)?;
    Ok(traj)
}

fn min_k0(traj: &Trajectory) -> f64 {
    traj.rows().iter().map(|r| r.k0).fold(f64::INFINITY, f64::min)
}

/// Worst drifts of the conserved quantities over a run.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Drifts {
    pub mass: f64,
    /// `|P(t) - P(0)| / sqrt(M(0) E(0))`
    pub momentum: f64,
    pub energy: f64,
    /// Largest `dH/dt` between consecutive rows.
    pub entropy_rate: f64,
}

impl Drifts {
    pub fn measure(traj: &Trajectory) -> Self {
        let rows = traj.rows();
        let r0 = &rows[0];
        let scale = (r0.mass * r0.energy).sqrt();
        let mut out = Self { mass: 0.0, momentum: 0.0, energy: 0.0, entropy_rate: f64::NEG_INFINITY };
        for r in rows {
            out.mass = out.mass.max(((r.mass - r0.mass) / r0.mass).abs());
            let dp: f64 = r.momentum.iter().zip(&r0.momentum).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            out.momentum = out.momentum.max(dp / scale);
            out.energy = out.energy.max(((r.energy - r0.energy) / r0.energy).abs());
        }
        for w in rows.windows(2) {
            if w[1].time > w[0].time {
                out.entropy_rate = out.entropy_rate.max((w[1].entropy - w[0].entropy) / (w[1].time - w[0].time));
            }
        }
        out
    }
}

/// Passes when the fine drift is at least `factor` times smaller, or both
/// sit below the round-off floor.
pub fn halves(coarse: f64, fine: f64, factor: f64, floor: f64) -> bool {
    (coarse <= floor && fine <= floor) || fine * factor <= coarse
}

fn conservation(cfg: &ExperimentConfig, dir: &Path) -> Result<Report> {
    let block = cfg.conservation.clone().unwrap_or_default();
    let solver = cfg.solver()?;
    let traj = simulate(cfg, &cfg.initial.build(cfg.grid.spec()?)?, solver, dir)?;
    let d = Drifts::measure(&traj);
    let mut checks = vec![
        Check::at_most("mass_drift", d.mass, block.mass_tol),
        Check::at_most("momentum_drift", d.momentum, block.drift_tol),
        Check::at_most("energy_drift", d.energy, block.drift_tol),
        Check::at_most("entropy_rate", d.entropy_rate, block.entropy_rate_tol),
    ];
    let mut metrics = json!({ "drifts": d });
    if let Some(n) = block.refine_n {
        let sub = dir.join(format!("n{n}"));
        std::fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        let spec = cfg.grid.with_n(n).spec()?;
        let fine = Drifts::measure(&simulate(cfg, &cfg.initial.build(spec)?, solver, &sub)?);
        let factor = n as f64 / cfg.grid.n as f64;
        for (name, c, f) in [("momentum", d.momentum, fine.momentum), ("energy", d.energy, fine.energy)] {
            let ratio = if f > 0.0 { c / f } else { f64::INFINITY };
            checks.push(Check::new(
                format!("{name}_drift_halving"),
                ratio,
                format!(">= {factor} or both <= {:e}", block.roundoff_floor),
                halves(c, f, factor, block.roundoff_floor),
            ));
        }
        metrics["refined"] = json!({ "n": n, "drifts": fine });
    }
    Ok(Report::new(cfg, checks, metrics).with_k0(min_k0(&traj)))
}

/// `K0` of a normalised density on `grid`.
pub fn coercivity_constant(density: &InitialData, grid: GridConfig, gamma: f64) -> Result<f64> {
    let spec = grid.spec()?;
    let f = density.build(spec)?;
    let coeffs = compute_coefficients(&f, &*build_kernels(&spec, gamma)?)?;
    Ok(estimate_K0(&coeffs, &spec, gamma)?)
}

fn coercivity(cfg: &ExperimentConfig) -> Result<Report> {
    let block = cfg.coercivity.as_ref().expect("validated");
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for (i, density) in block.densities.iter().enumerate() {
        let coarse = coercivity_constant(density, cfg.grid, block.gamma)?;
        let fine = coercivity_constant(density, cfg.grid.with_n(block.refine_n), block.gamma)?;
        let label = format!("{i}_{}", density.label());
        checks.push(Check::new(format!("K0_positive_{label}"), coarse, "> 0", coarse > 0.0 && fine > 0.0));
        checks.push(Check::relative(format!("K0_refinement_{label}"), fine, coarse, block.tol));
        rows.push(json!({ "density": density, "K0": coarse, "K0_refined": fine }));
    }
    Ok(Report::new(cfg, checks, json!({ "densities": rows })))
}

fn with_functional(solver: &SolverConfig, req: FunctionalRequest) -> (SolverConfig, usize) {
    let mut s = solver.clone();
    let idx = match s.functionals.iter().position(|r| *r == req) {
        Some(i) => i,
        None => {
            s.functionals.push(req);
            s.functionals.len() - 1
        }
    };
    (s, idx)
}

fn column(traj: &Trajectory, idx: usize) -> (Vec<f64>, Vec<f64>) {
    traj.rows().iter().map(|r| (r.time, r.functionals[idx])).unzip()
}

fn rates(cfg: &ExperimentConfig, dir: &Path) -> Result<Report> {
    let block = cfg.rates.clone().unwrap_or_default();
    let (solver, _) = with_functional(cfg.solver()?, FunctionalRequest::Msp { s: block.s, p: block.p });
    let traj = simulate(cfg, &cfg.initial.build(cfg.grid.spec()?)?, &solver, dir)?;
    let (checks, metrics) = rate_checks(&traj, &block);
    if metrics.get("declined").is_some() {
        warn!("{}: rate fit declined: {}", cfg.name, metrics["declined"]);
    }
    Ok(Report::new(cfg, checks, metrics).with_k0(min_k0(&traj)))
}

/// Appearance-rate checks on a trajectory that records `M_{s,p}`.
pub fn rate_checks(traj: &Trajectory, block: &RatesBlock) -> (Vec<Check>, serde_json::Value) {
    let req = FunctionalRequest::Msp { s: block.s, p: block.p };
    let target = block.target_slope.unwrap_or(-(traj.spec().dim() as f64) * (block.p - 1.0) / 2.0);
    let Some(idx) = traj.functional_names().iter().position(|c| *c == req.column()) else {
        let check = Check::new("early_slope", f64::NAN, "trajectory lacks the functional", false);
        return (vec![check], json!({ "declined": format!("no {} column", req.column()) }));
    };
    let (t, m) = column(traj, idx);
    match fit_appearance_rate(&t, &m, block.min_points) {
        Ok(fit) => (
            vec![
                Check::relative("early_slope", fit.slope, target, block.tol),
                Check::at_most("plateau_ratio", fit.plateau_ratio, 1.0 + 1e-9),
            ],
            json!({ "fit": fit, "target_slope": target }),
        ),
        Err(why) => (
            vec![Check::new("early_slope", f64::NAN, format!("{target} +- {}%", block.tol * 100.0), false)],
            json!({ "declined": why.to_string(), "target_slope": target }),
        ),
    }
}

fn poincare(cfg: &ExperimentConfig, dir: &Path) -> Result<Report> {
    let block = cfg.poincare.as_ref().expect("validated");
    let spec = cfg.grid.spec()?;
    let mut family = block.family.clone();
    let f = match cfg.initial {
        InitialData::PointPair => {
            // centre the width ladder on one lump and put a lattice node on each
            let (f, centre) = point_pair(spec)?;
            family.ladder_centre = centre;
            family.lattice_spacing = centre[0];
            f
        }
        ref other => other.build(spec)?,
    };
    let eps = block.eps();
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    for &gamma in &block.gammas {
        let rep = estimate_C_of_eps(&f, gamma, &eps, &family)?;
        write_text(&dir.join(format!("poincare_gamma{gamma}.csv")), &rep.csv())?;
        if gamma <= -2.0 {
            checks.push(Check::new(
                format!("no_stable_power_law_gamma{gamma}"),
                rep.window_decades,
                "no window of >= 1 decade with consistent slope",
                !rep.has_stable_power_law(),
            ));
        } else {
            let target = poincare_target_slope(gamma);
            checks.push(Check::relative(format!("slope_gamma{gamma}"), rep.slope, target, block.tol));
            checks.push(Check::new(
                format!("window_decades_gamma{gamma}"),
                rep.window_decades,
                format!(">= {}", block.min_decades),
                rep.window_decades >= block.min_decades - 1e-9,
            ));
        }
        reports.push(rep);
    }
    Ok(Report::new(cfg, checks, json!({ "sweeps": reports })))
}

fn degiorgi(cfg: &ExperimentConfig, dir: &Path) -> Result<Report> {
    let block = cfg.degiorgi.as_ref().expect("validated");
    let traj = simulate(cfg, &cfg.initial.build(cfg.grid.spec()?)?, cfg.solver()?, dir)?;
    let (checks, metrics, trace) = degiorgi_checks(&traj, block)?;
    write_text(&dir.join("degiorgi.csv"), &trace.csv())?;
    Ok(Report::new(cfg, checks, metrics).with_k0(min_k0(&traj)))
}

/// Level-set iteration and `t*` scaling checks on a finished trajectory.
pub fn degiorgi_checks(traj: &Trajectory, block: &DeGiorgiBlock) -> Result<(Vec<Check>, serde_json::Value, DeGiorgiTrace)> {
    let k0 = min_k0(traj);
    let c0 = match block.c0 {
        Some(c) => c,
        None if k0 > 0.0 => 0.25 * k0,
        None => return Err(HarnessError::Config("measured K0 is not positive; set degiorgi.c0".into())),
    };
    let t_end = traj.time_span().1;
    let mut dg = DeGiorgiConfig::new(traj.gamma(), block.s, block.t_star, t_end, c0);
    dg.n_max = block.n_max;
    dg.p_gamma = block.p_gamma;
    dg.alpha = block.alpha;
    dg.mode = block.mode;
    let trace = iterate(traj, &dg)?;
    let ratio = trace.k_bisect / trace.sup_f;
    let mut checks = vec![
        Check::new("geometric_decay", trace.violations.len() as f64, "no violation, or one at n_max", trace.geometric_decay),
        Check::new(
            "k_bisect_over_sup",
            ratio,
            format!("in [1/{0}, {0}]", block.sup_factor),
            ratio <= block.sup_factor && ratio >= 1.0 / block.sup_factor,
        ),
    ];
    let scaling = t_star_scaling(traj, &dg, &block.t_stars)?;
    checks.push(Check::relative("t_star_exponent", scaling.exponent, scaling.target, block.exponent_tol));
    let metrics = json!({ "c0": c0, "trace": trace, "scaling": scaling });
    Ok((checks, metrics, trace))
}

fn moments(cfg: &ExperimentConfig, dir: &Path) -> Result<Report> {
    let block = cfg.moments.clone().unwrap_or_default();
    let (solver, idx) = with_functional(cfg.solver()?, FunctionalRequest::Moment { s: block.s });
    let traj = simulate(cfg, &cfg.initial.build(cfg.grid.spec()?)?, &solver, dir)?;
    let (t, m) = column(&traj, idx);
    let fit = fit_moment_growth(&t, &m, block.envelope);
    let checks = vec![Check::at_most("excess_over_linear_fit", fit.max_excess, block.envelope)];
    Ok(Report::new(cfg, checks, json!({ "fit": fit })).with_k0(min_k0(&traj)))
}

/// Name up to the first `_`-separated part containing a digit, so rows that
/// differ only in their parameters share one check.
fn test_group(name: &str) -> String {
    let parts: Vec<&str> = name.split('_').take_while(|p| !p.bytes().any(|b| b.is_ascii_digit())).collect();
    if parts.is_empty() {
        name.to_string()
    } else {
        parts.join("_")
    }
}

fn lorentz(cfg: &ExperimentConfig, dir: &Path) -> Result<Report> {
    let rows = selftest(cfg.seed)?;
    write_text(&dir.join("lorentz.csv"), &selftest_csv(&rows))?;
    let mut groups: Vec<(String, usize, usize)> = Vec::new();
    for r in &rows {
        let g = test_group(&r.test);
        match groups.iter_mut().find(|(name, _, _)| *name == g) {
            Some(entry) => {
                entry.1 += 1;
                entry.2 += usize::from(!r.pass);
            }
            None => groups.push((g, 1, usize::from(!r.pass))),
        }
    }
    let checks = groups
        .iter()
        .map(|(name, total, failed)| Check::new(name.clone(), *failed as f64, format!("0 of {total} failing"), *failed == 0))
        .collect();
    Ok(Report::new(cfg, checks, json!({ "rows": rows.len() })))
}

/// The interpolation inequalities checked for refinement stability.
pub fn level_inequalities() -> [LevelInequality; 4] {
    [LevelInequality::L2, LevelInequality::Lp { p: 2.0 }, LevelInequality::Lq { q: 3.0 }, LevelInequality::Ld { s: 4.0 }]
}

pub const LEVEL_FRACTIONS: [(f64, f64); 3] = [(0.0, 0.25), (0.25, 0.5), (0.5, 0.75)];

fn inequalities(cfg: &ExperimentConfig) -> Result<Report> {
    let block = cfg.inequalities.as_ref().expect("validated");
    let spec = cfg.grid.spec()?;
    let mut checks = Vec::new();
    let mut tail_rows = Vec::new();
    let mut threshold_rows = Vec::new();
    let mut worst = 0.0f64;
    for datum in &block.data {
        let f = datum.build(spec)?;
        for case in &block.tail {
            let tb = tail_bound_check(&f, case.r1, case.r2, case.s)?;
            worst = worst.max(tb.lhs / tb.rhs);
            tail_rows.push(json!({ "datum": datum.label(), "bound": tb }));
        }
        for case in &block.thresholds {
            let probe = tail_bound_check(&f, 2.0, 1.0, case.s)?;
            let (r1, r2) = remark_thresholds(case.c_tilde, case.eps, probe.energy, probe.m_psi, probe.entropy_plus, case.s)?;
            let scaled = if r1.is_finite() { case.c_tilde * tail_bound_check(&f, r1, r2, case.s)?.rhs } else { f64::INFINITY };
            checks.push(Check::at_most(format!("threshold_rhs_{}_eps{}", datum.label(), case.eps), scaled, case.eps));
            threshold_rows.push(json!({ "datum": datum.label(), "R1": r1, "R2": r2, "scaled_rhs": scaled, "eps": case.eps }));
        }
    }
    checks.insert(0, Check::at_most("tail_lhs_over_rhs", worst, 1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let family: Vec<BlobField> = (0..block.level_family).map(|_| BlobField::random(cfg.grid.d, &mut rng, 1.0)).collect();
    let (n1, n2) = block.level_n;
    let (s1, s2) = (cfg.grid.with_n(n1).spec()?, cfg.grid.with_n(n2).spec()?);
    let mut level_rows = Vec::new();
    for which in level_inequalities() {
        let c1 = max_implied_constant(&family, s1, block.level_gamma, which, &LEVEL_FRACTIONS)?;
        let c2 = max_implied_constant(&family, s2, block.level_gamma, which, &LEVEL_FRACTIONS)?;
        checks.push(Check::new(format!("{}_finite", which.name()), c2, "finite and > 0", c2.is_finite() && c2 > 0.0));
        checks.push(Check::relative(format!("{}_refinement", which.name()), c2, c1, block.level_tol));
        level_rows.push(json!({ "inequality": which.name(), "coarse": c1, "fine": c2 }));
    }
    let d = cfg.grid.d as f64;
    let q = 3.0;
    let weight = lq_weight(cfg.grid.d, block.level_gamma, q);
    let expected = -block.level_gamma * d / (2.0 * d + 4.0 - q * d);
    checks.push(Check::new("flLq_weight", weight, format!("{expected}"), within_relative(weight, expected, 1e-14)));
    Ok(Report::new(
        cfg,
        checks,
        json!({ "tail": tail_rows, "thresholds": threshold_rows, "level_constants": level_rows }),
    ))
}
