//! De Giorgi level-set iteration on computed trajectories: level and time
//! ladders, the energies `E_n`, the geometric rate `Q`, the level cap
//! `K(t*, T)` and its comparison with the measured sup of `f`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LandauError, Result};
use crate::functionals::{check_window, energy_from_series, energy_terms};
use crate::grid::integrate;
use crate::inequalities::linear_fit;
use crate::solver::Trajectory;

fn require(cond: bool, name: &'static str, reason: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(name, reason))
    }
}

/// `l_n = K (1 - 2^{-n})` and `t_n = t* (1 - 2^{-n-1})` for `n = 0..=n_max`.
pub fn ladders(k: f64, t_star: f64, n_max: usize) -> (Vec<f64>, Vec<f64>) {
    (0..=n_max)
        .map(|n| {
            let p = 0.5f64.powi(n as i32);
            (k * (1.0 - p), t_star * (1.0 - 0.5 * p))
        })
        .unzip()
}

/// Which of the two iterations applies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `-2 < gamma < 0`, with the integrability exponent `p_gamma`.
    Soft { p_gamma: f64 },
    /// `gamma = -2`, with `alpha = 1 - 1/s`.
    Critical { alpha: f64 },
}

/// Parameters of one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponents {
    pub d: usize,
    pub gamma: f64,
    pub s: f64,
    pub branch: Branch,
}

impl Exponents {
    /// Checks the admissibility conditions; for `gamma = -2` an absent
    /// `alpha` is set from `s`.
    pub fn new(d: usize, gamma: f64, s: f64, p_gamma: Option<f64>, alpha: Option<f64>) -> Result<Self> {
        let df = d as f64;
        require(d >= 2, "d", "need d >= 2")?;
        require((-2.0..0.0).contains(&gamma), "gamma", format!("{gamma} outside [-2, 0)"))?;
        let branch = if gamma == -2.0 {
            require(s > df, "s", format!("need s > d = {d}, got {s}"))?;
            let a = 1.0 - 1.0 / s;
            if let Some(given) = alpha {
                require((given - a).abs() <= 1e-12, "alpha", format!("alpha = {given} but 1 - 1/s = {a}"))?;
            }
            require(a > 0.5 && a < 1.0, "alpha", format!("{a} not in (1/2, 1)"))?;
            Branch::Critical { alpha: a }
        } else {
            require(s > 0.5 * df * gamma.abs(), "s", format!("need s > d|gamma|/2 = {}, got {s}", 0.5 * df * gamma.abs()))?;
            let p = p_gamma.ok_or_else(|| invalid("p_gamma", "required for gamma > -2"))?;
            let lo = df / (df + gamma);
            let hi = if d > 2 { 3f64.min(df / (df - 2.0)) } else { 3.0 };
            require(p > lo && p < hi, "p_gamma", format!("{p} not in ({lo}, {hi})"))?;
            Branch::Soft { p_gamma: p }
        };
        Ok(Self { d, gamma, s, branch })
    }

    /// Exponent of `t*` in `K1`.
    pub fn t_star_exponent(&self) -> f64 {
        let (d, s) = (self.d as f64, self.s);
        match self.branch {
            Branch::Soft { .. } => -d * s / (4.0 * s + d * self.gamma),
            Branch::Critical { .. } => -d * s / (4.0 * s - 2.0 * d),
        }
    }

    /// Moment weight whose running sup enters the recursion.
    pub fn moment_order(&self) -> f64 {
        self.s
    }

    /// The three terms of the one-step recursion with unit constant:
    /// `E_{n+1} <= C (r1 + r2 + r3)`.
    pub fn recursion_terms(&self, n: usize, e_n: f64, k: f64, t_star: f64, y_s: f64) -> [f64; 3] {
        let (d, s, g) = (self.d as f64, self.s, self.gamma);
        let nf = n as f64;
        let two = |x: f64| 2f64.powf(x);
        match self.branch {
            Branch::Soft { p_gamma: p } => {
                let y = y_s.powf(g.abs() / s);
                let a = (4.0 * s + d * g) / (d * s);
                let b = (2.0 * s + d * g) / (d * s);
                let e2 = 1.0 - 2.0 / p + (d - 4.0) / d;
                [
                    y / t_star * k.powf(-a) * two(nf * (1.0 + a)) * e_n.powf(1.0 + b),
                    y * k.powf(e2) * two(nf * (2.0 / p - (d - 4.0) / d)) * e_n.powf(1.0 / p + 2.0 / d),
                    y * k.powf(-4.0 / d) * two(nf * (1.0 + 4.0 / d)) * e_n.powf(1.0 + 2.0 / d),
                ]
            }
            Branch::Critical { alpha } => {
                let a = (4.0 * s - 2.0 * d) / (d * s);
                let b = (2.0 * s - 2.0 * d) / (d * s);
                [
                    y_s.powf(2.0 / s) / t_star * k.powf(-a) * two(nf * (1.0 + a)) * e_n.powf(1.0 + b),
                    k.powf(-4.0 / d) * two(4.0 * nf / d) * e_n.powf(1.0 + 2.0 / d),
                    y_s.powf(2.0 * (1.0 - alpha)) * k.powf(1.0 - 2.0 * alpha) * two(2.0 * alpha * nf) * e_n.powf(2.0 * alpha),
                ]
            }
        }
    }
}

/// Geometric rate `Q` making every bracketed factor of the comparison
/// sequence at most one.
#[allow(non_snake_case)]
pub fn compute_Q(e: &Exponents) -> f64 {
    let (d, s, g) = (e.d as f64, e.s, e.gamma);
    match e.branch {
        Branch::Soft { p_gamma: p } => [
            (d + 4.0) / 2.0,
            (4.0 * s + d * (g + s)) / (2.0 * s + d * g),
            (2.0 * d - (d - 4.0) * p) / (d - (d - 2.0) * p),
        ],
        Branch::Critical { alpha } => {
            [2.0, (4.0 * s + d * (s - 2.0)) / (2.0 * s - 2.0 * d), 2.0 * alpha / (2.0 * alpha - 1.0)]
        }
    }
    .into_iter()
    .map(|x| 2f64.powf(x))
    .fold(f64::NEG_INFINITY, f64::max)
}

/// `K = max(K1, K2, K3)` with each term of the closing inequality at most 1/3.
///
/// The n = 0 terms are `C Q r_i(E0) / E0`: the comparison sequence needs
/// `E_1 <= E0 / Q`, so the factor `Q` is kept explicit here rather than folded
/// into `C`, which is a measured recursion constant in ledger mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCap {
    pub k: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// `K1 + K2 + K3`
    pub sum: f64,
}

#[allow(non_snake_case)]
pub fn compute_K(e: &Exponents, t_star: f64, e0: f64, y_s: f64, c: f64) -> Result<LevelCap> {
    require(e0 >= 0.0 && e0.is_finite(), "E0", format!("{e0} must be finite and nonnegative"))?;
    require(t_star > 0.0, "t_star", "must be positive")?;
    require(c > 0.0, "C", "must be positive")?;
    let (d, s, g) = (e.d as f64, e.s, e.gamma);
    let c3 = 3.0 * c * compute_Q(e);
    let (k1, k2, k3) = match e.branch {
        Branch::Soft { p_gamma: p } => {
            let y = y_s.powf(g.abs() / s);
            let a = (4.0 * s + d * g) / (d * s);
            let b = (2.0 * s + d * g) / (d * s);
            let e2 = 2.0 - 2.0 / p - 4.0 / d;
            let c2 = 1.0 / p + 2.0 / d - 1.0;
            (
                (c3 * y * e0.powf(b) / t_star).powf(1.0 / a),
                (c3 * y * e0.powf(c2)).powf(-1.0 / e2),
                (c3 * y * e0.powf(2.0 / d)).powf(d / 4.0),
            )
        }
        Branch::Critical { alpha } => {
            let a = (4.0 * s - 2.0 * d) / (d * s);
            let b = (2.0 * s - 2.0 * d) / (d * s);
            (
                (c3 * y_s.powf(2.0 / s) * e0.powf(b) / t_star).powf(1.0 / a),
                (c3 * e0.powf(2.0 / d)).powf(d / 4.0),
                (c3 * y_s.powf(2.0 * (1.0 - alpha)) * e0.powf(2.0 * alpha - 1.0)).powf(1.0 / (2.0 * alpha - 1.0)),
            )
        }
    };
    Ok(LevelCap { k: k1.max(k2).max(k3), k1, k2, k3, sum: k1 + k2 + k3 })
}

/// How the constant in the closing inequality is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Bisect `K` and check exponents only.
    #[default]
    Property,
    /// Back-solve the smallest constant satisfying the measured recursion and
    /// check the geometric decay at the resulting `K`.
    Ledger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeGiorgiConfig {
    /// Level cap to evaluate; defaults to the bisected one.
    #[serde(default)]
    pub k: Option<f64>,
    pub t_star: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    pub gamma: f64,
    pub s: f64,
    #[serde(default)]
    pub p_gamma: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    pub c0: f64,
    #[serde(default)]
    pub mode: Mode,
    /// Constant reused from another datum in ledger mode.
    #[serde(default)]
    pub c_override: Option<f64>,
    /// Multiples of the measured sup used as trial caps when back-solving.
    #[serde(default = "default_trials")]
    pub trial_factors: Vec<f64>,
}

fn default_n_max() -> usize {
    8
}

fn default_trials() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0]
}

impl DeGiorgiConfig {
    pub fn new(gamma: f64, s: f64, t_star: f64, t_end: f64, c0: f64) -> Self {
        Self {
            k: None,
            t_star,
            t_end,
            n_max: default_n_max(),
            gamma,
            s,
            p_gamma: None,
            alpha: None,
            c0,
            mode: Mode::Property,
            c_override: None,
            trial_factors: default_trials(),
        }
    }

    pub fn validate(&self, d: usize) -> Result<Exponents> {
        require(self.t_star > 0.0 && self.t_star < self.t_end, "t_star", "need 0 < t_star < T")?;
        require(self.n_max >= 1, "n_max", "need at least one step")?;
        require(self.c0 > 0.0, "c0", "must be positive")?;
        if let Some(k) = self.k {
            require(k > 0.0, "K", "must be positive")?;
        }
        require(self.trial_factors.iter().all(|x| *x > 0.0), "trial_factors", "must be positive")?;
        Exponents::new(d, self.gamma, self.s, self.p_gamma, self.alpha)
    }
}

/// Per-snapshot data reused across levels.
struct Series<'a> {
    traj: &'a Trajectory,
    times: Vec<f64>,
    t_end: f64,
    c0: f64,
}

impl<'a> Series<'a> {
    fn new(traj: &'a Trajectory, t_end: f64, c0: f64) -> Self {
        Self { traj, times: traj.snapshots().iter().map(|(t, _)| *t).collect(), t_end, c0 }
    }

    fn energy(&self, level: f64, t1: f64) -> f64 {
        let (half, diss): (Vec<f64>, Vec<f64>) =
            self.traj.snapshots().iter().map(|(_, f)| energy_terms(f, level, self.traj.gamma())).unzip();
        energy_from_series(&self.times, &half, &diss, t1, self.t_end, self.c0)
    }

    fn energies(&self, k: f64, t_star: f64, n_max: usize) -> Vec<f64> {
        let (levels, times) = ladders(k, t_star, n_max);
        levels.iter().zip(&times).map(|(l, t)| self.energy(*l, *t)).collect()
    }
}

/// `E_n = E_{l_n}(t_n, T)` for `n = 0..=n_max`.
pub fn energies(traj: &Trajectory, k: f64, t_star: f64, t_end: f64, n_max: usize, c0: f64) -> Result<Vec<f64>> {
    check_window(traj, 0.5 * t_star, t_end)?;
    Ok(Series::new(traj, t_end, c0).energies(k, t_star, n_max))
}

fn bisect(series: &Series, t_star: f64, n_max: usize, e0: f64, hi_start: f64) -> f64 {
    let (_, times) = ladders(1.0, t_star, n_max);
    let t_last = times[n_max];
    let frac = 1.0 - 0.5f64.powi(n_max as i32);
    let vanishes = |k: f64| series.energy(k * frac, t_last) < 1e-12 * e0;
    let mut hi = hi_start.max(f64::MIN_POSITIVE);
    while !vanishes(hi) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if vanishes(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-10 * hi {
            break;
        }
    }
    hi
}

/// Smallest `K` with `E_{n_max} < 1e-12 E_0`.
pub fn bisect_k(traj: &Trajectory, t_star: f64, t_end: f64, n_max: usize, c0: f64) -> Result<f64> {
    check_window(traj, 0.5 * t_star, t_end)?;
    let series = Series::new(traj, t_end, c0);
    let e0 = series.energy(0.0, 0.5 * t_star);
    if e0 == 0.0 {
        return Ok(0.0);
    }
    Ok(bisect(&series, t_star, n_max, e0, traj.sup_norm(0.5 * t_star, t_end)))
}

/// Everything measured by one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeGiorgiTrace {
    pub mode: Mode,
    pub k_used: f64,
    pub levels: Vec<f64>,
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    pub q: f64,
    pub target: Vec<f64>,
    /// Indices with `E_n > E_0 Q^{-n}`.
    pub violations: Vec<usize>,
    /// No violation, or a single one at `n_max`.
    pub geometric_decay: bool,
    pub k_bisect: f64,
    pub k_formula: Option<LevelCap>,
    /// Constant in the closing inequality (ledger mode).
    pub c_ledger: Option<f64>,
    pub y_s: f64,
    /// Measured `sup ||f||_inf` over `[t*, T]`.
    pub sup_f: f64,
    pub sup_below_k: bool,
    pub e0: f64,
}

impl DeGiorgiTrace {
    pub fn csv(&self) -> String {
        let mut out = String::from("n,ell_n,t_n,E_n,target\n");
        for n in 0..self.levels.len() {
            out.push_str(&format!(
                "{n},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                self.levels[n], self.times[n], self.energies[n], self.target[n]
            ));
        }
        out
    }
}

/// `sup_{[0, T]} int f <v>^s` over stored snapshots.
pub fn moment_sup(traj: &Trajectory, s: f64, t_end: f64) -> f64 {
    traj.snapshots().iter().filter(|(t, _)| *t <= t_end).map(|(_, f)| integrate(f, s)).fold(0.0, f64::max)
}

/// Smallest `C` with `E_{n+1} <= C (r1 + r2 + r3)(E_n)` along the measured
/// sequences for each trial cap.
pub fn back_solve_c(traj: &Trajectory, cfg: &DeGiorgiConfig, e: &Exponents, trial_caps: &[f64]) -> Result<f64> {
    check_window(traj, 0.5 * cfg.t_star, cfg.t_end)?;
    let series = Series::new(traj, cfg.t_end, cfg.c0);
    let y_s = moment_sup(traj, e.moment_order(), cfg.t_end);
    let mut c: f64 = 0.0;
    for &k in trial_caps {
        let es = series.energies(k, cfg.t_star, cfg.n_max);
        for n in 0..cfg.n_max {
            let r: f64 = e.recursion_terms(n, es[n], k, cfg.t_star, y_s).iter().sum();
            if r > 0.0 && es[n + 1] > 0.0 {
                c = c.max(es[n + 1] / r);
            }
        }
    }
    if c > 0.0 {
        Ok(c)
    } else {
        Err(invalid("trial_factors", "every trial cap gives vanishing energies; nothing to back-solve"))
    }
}

/// Runs the iteration described by `cfg` on `traj`.
pub fn iterate(traj: &Trajectory, cfg: &DeGiorgiConfig) -> Result<DeGiorgiTrace> {
    let e = cfg.validate(traj.spec().dim())?;
    check_window(traj, 0.5 * cfg.t_star, cfg.t_end)?;
    let series = Series::new(traj, cfg.t_end, cfg.c0);
    let e0 = series.energy(0.0, 0.5 * cfg.t_star);
    let sup_f = traj.sup_norm(cfg.t_star, cfg.t_end);
    let y_s = moment_sup(traj, e.moment_order(), cfg.t_end);
    let k_bisect = if e0 > 0.0 { bisect(&series, cfg.t_star, cfg.n_max, e0, sup_f) } else { 0.0 };
    let q = compute_Q(&e);
    let (c_ledger, k_formula) = match cfg.mode {
        Mode::Property => (None, None),
        Mode::Ledger => {
            let c = match cfg.c_override {
                Some(c) => c,
                None => {
                    let caps: Vec<f64> = cfg.trial_factors.iter().map(|x| x * sup_f).collect();
                    back_solve_c(traj, cfg, &e, &caps)?
                }
            };
            (Some(c), Some(compute_K(&e, cfg.t_star, e0, y_s, c)?))
        }
    };
    let k_used = cfg.k.or(k_formula.map(|k| k.k)).unwrap_or(k_bisect);
    let (levels, times) = ladders(k_used, cfg.t_star, cfg.n_max);
    let energies = series.energies(k_used, cfg.t_star, cfg.n_max);
    let target: Vec<f64> = (0..=cfg.n_max).map(|n| energies[0] * q.powi(-(n as i32))).collect();
    let violations: Vec<usize> =
        (0..=cfg.n_max).filter(|&n| energies[n] > target[n] * (1.0 + 1e-12)).collect();
    let geometric_decay = violations.is_empty() || violations == [cfg.n_max];
    Ok(DeGiorgiTrace {
        mode: cfg.mode,
        k_used,
        levels,
        times,
        energies,
        q,
        target,
        violations,
        geometric_decay,
        k_bisect,
        k_formula,
        c_ledger,
        y_s,
        sup_f,
        sup_below_k: sup_f <= k_used * (1.0 + 1e-12),
        e0,
    })
}

/// Bisected `K` against `t*` and the fitted power-law exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TStarScaling {
    pub t_star: Vec<f64>,
    pub k: Vec<f64>,
    pub sup_f: Vec<f64>,
    pub exponent: f64,
    pub target: f64,
}

pub fn t_star_scaling(traj: &Trajectory, cfg: &DeGiorgiConfig, t_stars: &[f64]) -> Result<TStarScaling> {
    let e = cfg.validate(traj.spec().dim())?;
    if t_stars.len() < 2 {
        return Err(invalid("t_stars", "need at least two values"));
    }
    let mut ks = Vec::new();
    let mut sups = Vec::new();
    for &t in t_stars {
        require(t > 0.0 && t < cfg.t_end, "t_star", format!("{t} outside (0, T)"))?;
        ks.push(bisect_k(traj, t, cfg.t_end, cfg.n_max, cfg.c0)?);
        sups.push(traj.sup_norm(t, cfg.t_end));
    }
    if ks.iter().any(|k| *k <= 0.0) {
        return Err(LandauError::ZeroMass);
    }
    let x: Vec<f64> = t_stars.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    Ok(TStarScaling {
        t_star: t_stars.to_vec(),
        k: ks,
        sup_f: sups,
        exponent: linear_fit(&x, &y).0,
        target: e.t_star_exponent(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gaussian, make_grid, maxwellian};
    use crate::solver::{normalize_initial, run, SolverConfig};
    use proptest::prelude::*;

    #[test]
    fn ladder_values() {
        let (l, t) = ladders(4.0, 0.8, 8);
        assert_eq!((l[0], l[1]), (0.0, 2.0));
        assert_eq!(t[0], 0.4);
        for n in 0..8 {
            assert_eq!(l[n + 1] - l[n], 4.0 * 0.5f64.powi(n as i32 + 1));
            assert!((t[n + 1] - t[n] - 0.8 * 0.5f64.powi(n as i32 + 2)).abs() < 1e-15);
        }
        assert!(4.0 - l[8] < 0.02 && 0.8 - t[8] < 0.002);
    }

    #[test]
    fn q_values() {
        let e = Exponents::new(3, -1.0, 3.0, Some(2.0), None).unwrap();
        assert_eq!(compute_Q(&e), 256.0);
        let e = Exponents::new(3, -2.0, 4.0, None, None).unwrap();
        assert_eq!(e.branch, Branch::Critical { alpha: 0.75 });
        assert_eq!(compute_Q(&e), 2048.0);
    }

    #[test]
    fn admissibility() {
        assert!(Exponents::new(3, -1.0, 1.0, Some(2.0), None).is_err());
        assert!(Exponents::new(3, -1.0, 3.0, Some(3.0), None).is_err());
        assert!(Exponents::new(3, -1.0, 3.0, Some(1.4), None).is_err());
        assert!(Exponents::new(3, -1.0, 3.0, None, None).is_err());
        assert!(Exponents::new(3, -2.0, 3.0, None, None).is_err());
        assert!(Exponents::new(3, -2.0, 4.0, None, Some(0.6)).is_err());
    }

    #[test]
    fn t_star_exponents() {
        assert_eq!(Exponents::new(3, -1.0, 3.0, Some(2.0), None).unwrap().t_star_exponent(), -1.0);
        assert!((Exponents::new(3, -2.0, 4.0, None, None).unwrap().t_star_exponent() + 1.2).abs() < 1e-15);
    }

    #[test]
    fn zero_energy_gives_zero_cap() {
        for e in [Exponents::new(3, -1.0, 3.0, Some(2.0), None).unwrap(), Exponents::new(3, -2.0, 4.0, None, None).unwrap()] {
            let k = compute_K(&e, 0.3, 0.0, 2.0, 1.0).unwrap();
            assert_eq!((k.k1, k.k2, k.k3), (0.0, 0.0, 0.0));
        }
    }

    fn closing_terms(e: &Exponents, t: f64, e0: f64, y: f64, c: f64, k: f64) -> [f64; 3] {
        // n = 0 terms of the closing inequality: C r_i(E0) / E_1* with E_1* = E0 / Q
        let r = e.recursion_terms(0, e0, k, t, y);
        let q = compute_Q(e);
        [c * q * r[0] / e0, c * q * r[1] / e0, c * q * r[2] / e0]
    }

    proptest! {
        #[test]
        fn cap_terms_are_one_third(e0 in 1e-3f64..10.0, y in 1.0f64..50.0, t in 0.05f64..2.0, c in 0.1f64..10.0, crit in any::<bool>()) {
            let e = if crit {
                Exponents::new(3, -2.0, 4.0, None, None).unwrap()
            } else {
                Exponents::new(3, -1.0, 3.0, Some(2.0), None).unwrap()
            };
            let k = compute_K(&e, t, e0, y, c).unwrap();
            let third = |terms: [f64; 3], i: usize| terms[i];
            let ks = [k.k1, k.k2, k.k3];
            for i in 0..3 {
                let v = third(closing_terms(&e, t, e0, y, c, ks[i]), i);
                prop_assert!((v - 1.0 / 3.0).abs() < 1e-9, "term {} = {}", i, v);
                prop_assert!(third(closing_terms(&e, t, e0, y, c, k.k), i) <= 1.0 / 3.0 + 1e-9);
            }
            prop_assert!(k.k <= k.sum);
        }

        #[test]
        fn recursion_at_the_cap_decays_geometrically(e0 in 1e-3f64..10.0, y in 1.0f64..50.0, t in 0.05f64..2.0, c in 0.1f64..10.0, crit in any::<bool>()) {
            let e = if crit {
                Exponents::new(3, -2.0, 4.0, None, None).unwrap()
            } else {
                Exponents::new(3, -1.0, 3.0, Some(2.0), None).unwrap()
            };
            let k = compute_K(&e, t, e0, y, c).unwrap().k;
            let q = compute_Q(&e);
            let mut en = e0;
            for n in 0..8 {
                en = c * e.recursion_terms(n, en, k, t, y).iter().sum::<f64>();
                prop_assert!(en <= e0 * q.powi(-(n as i32 + 1)) * (1.0 + 1e-9), "n = {}: {} vs {}", n + 1, en, e0 * q.powi(-(n as i32 + 1)));
            }
        }

        #[test]
        fn ladders_increase(k in 0.1f64..100.0, t in 0.01f64..10.0) {
            let (l, ts) = ladders(k, t, 12);
            for n in 0..12 {
                prop_assert!(l[n + 1] > l[n] && l[n + 1] < k);
                prop_assert!(ts[n + 1] > ts[n] && ts[n + 1] < t);
            }
        }
    }

    fn short_run() -> Trajectory {
        let g = make_grid(3, 12, 5.0).unwrap();
        let raw = maxwellian(g).scale(0.7).add(&gaussian(g, &[0.0; 3], 0.3, 0.3)).unwrap();
        let f = normalize_initial(&raw).unwrap();
        run(&f, &SolverConfig::new(-1.0, 0.4, 0.01)).unwrap()
    }

    #[test]
    fn iteration_on_a_short_run() {
        let traj = short_run();
        let mut cfg = DeGiorgiConfig::new(-1.0, 3.0, 0.2, 0.4, 0.5);
        cfg.p_gamma = Some(2.0);
        let tr = iterate(&traj, &cfg).unwrap();
        for w in tr.energies.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(*tr.energies.last().unwrap() < 1e-12 * tr.e0);
        assert!(tr.k_bisect >= tr.sup_f * (1.0 - 1e-9) && tr.k_bisect <= 4.0 * tr.sup_f);
        assert!(tr.sup_below_k);

        cfg.mode = Mode::Ledger;
        let tr = iterate(&traj, &cfg).unwrap();
        let c = tr.c_ledger.unwrap();
        assert!(c > 0.0 && c.is_finite());
        assert!(tr.k_formula.unwrap().k > 0.0);
        assert!(tr.geometric_decay, "violations at {:?}", tr.violations);
        assert!(tr.csv().starts_with("n,ell_n,t_n,E_n,target\n"));

        // K above the sup makes every energy past n = 0 vanish once l_n exceeds it
        cfg.mode = Mode::Property;
        cfg.k = Some(4.0 * tr.sup_f);
        let tr = iterate(&traj, &cfg).unwrap();
        assert!(tr.energies[3..].iter().all(|e| *e == 0.0));

        let sc = t_star_scaling(&traj, &cfg, &[0.1, 0.2]).unwrap();
        assert!(sc.exponent.is_finite());
        assert!(sc.k[0] >= sc.k[1]);

        cfg.t_star = 0.5;
        assert!(iterate(&traj, &cfg).is_err());
    }
}
