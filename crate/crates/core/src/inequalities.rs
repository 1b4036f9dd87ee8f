//! Numerical checks of the functional inequalities behind the estimates:
//! the eps-Poincaré inequality, the splitting and truncation bounds of the
//! critical case, the HLS variant and the level-change interpolation
//! inequalities used by the De Giorgi iteration.
//!
//! Double integrals with a singular kernel are direct sums over cell pairs,
//! with the diagonal cell replaced by the mean of `|z|^lambda` over the ball
//! of one cell volume, exactly as in the FFT coefficients.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::{build_kernels, compute_c, equal_volume_radius, Lambda};
use crate::error::{invalid, LandauError, Result};
use crate::functionals::{dirichlet, entropy_positive_part, l2_sq, level_truncate, lp_norm, weighted};
use crate::grid::{integrate, integrate_with, same_grid, GridSpec, ScalarField};

/// Largest grid on which direct pair sums are accepted.
pub const MAX_DIRECT_N: usize = 24;

fn require(cond: bool, name: &'static str, reason: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(name, reason))
    }
}

/// Cell mean of `|z|^lambda` over the equal-volume ball.
pub fn singular_cell_mean(spec: &GridSpec, lambda: f64) -> f64 {
    let d = spec.dim() as f64;
    d / (d + lambda) * equal_volume_radius(spec).powf(lambda)
}

/// `sum_{i,j} phi(i) src(j) k(i, j, |v_i - v_j|^2) h^{2d}` with the
/// diagonal passed `r2 = 0`.
fn pair_sum(spec: &GridSpec, phi: &[f64], src: &[f64], k: impl Fn(usize, usize, f64) -> f64) -> f64 {
    let nodes: Vec<[f64; 3]> = (0..spec.len()).map(|i| spec.node(i)).collect();
    let active: Vec<usize> = (0..spec.len()).filter(|&j| src[j] != 0.0).collect();
    let mut total = 0.0;
    for (i, vi) in nodes.iter().enumerate() {
        if phi[i] == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for &j in &active {
            let vj = &nodes[j];
            let r2 = (vi[0] - vj[0]).powi(2) + (vi[1] - vj[1]).powi(2) + (vi[2] - vj[2]).powi(2);
            acc += src[j] * k(i, j, r2);
        }
        total += phi[i] * acc;
    }
    total * spec.cell_volume().powi(2)
}

fn check_direct(spec: &GridSpec) -> Result<()> {
    require(spec.n() <= MAX_DIRECT_N, "n", format!("direct pair sums need n <= {MAX_DIRECT_N}, got {}", spec.n()))
}

fn sq(phi: &ScalarField) -> Vec<f64> {
    phi.values().iter().map(|x| x * x).collect()
}

// ---------------------------------------------------------------------------
// eps-Poincaré

/// The three integrals of the eps-Poincaré inequality for one test function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareSides {
    /// `-int phi^2 c_lambda[f]`
    pub lhs: f64,
    /// `int |grad(<v>^{g/2} phi)|^2`
    pub d_term: f64,
    /// `int phi^2 <v>^g`
    pub l2_term: f64,
}

impl PoincareSides {
    /// Sides from a precomputed `c_lambda[f]`.
    pub fn from_c(c: &ScalarField, phi: &ScalarField, gamma: f64) -> Result<Self> {
        same_grid(c.spec(), phi.spec())?;
        let vol = c.spec().cell_volume();
        let lhs = -c.values().iter().zip(phi.values()).map(|(c, p)| c * p * p).sum::<f64>() * vol;
        let phi2 = ScalarField::new(*phi.spec(), sq(phi))?;
        Ok(Self { lhs, d_term: dirichlet(&weighted(phi, 0.5 * gamma)), l2_term: integrate(&phi2, gamma) })
    }
}

fn lambda_of(choice: Lambda, gamma: f64) -> f64 {
    match choice {
        Lambda::Gamma => gamma,
        Lambda::GammaPlusOne => gamma + 1.0,
    }
}

pub fn poincare_sides(f: &ScalarField, phi: &ScalarField, gamma: f64, lambda: Lambda) -> Result<PoincareSides> {
    let d = f.spec().dim() as f64;
    require(lambda_of(lambda, gamma) + d > 0.0, "lambda", "lambda + d must be positive")?;
    let kernels = build_kernels(f.spec(), gamma)?;
    let c = compute_c(f, &kernels, lambda)?;
    PoincareSides::from_c(&c, phi, gamma)
}

/// `(d-1)(g+d) sum |v - w|^g phi^2(v) f(w)` by direct summation.
pub fn poincare_lhs_direct(f: &ScalarField, phi: &ScalarField, gamma: f64) -> Result<f64> {
    same_grid(f.spec(), phi.spec())?;
    let spec = f.spec();
    let d = spec.dim() as f64;
    let diag = singular_cell_mean(spec, gamma);
    let s = pair_sum(spec, &sq(phi), f.values(), |_, _, r2| if r2 == 0.0 { diag } else { r2.powf(0.5 * gamma) });
    Ok((d - 1.0) * (gamma + d) * s)
}

/// Documented test-function family for the Poincaré sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoincareFamily {
    pub seed: u64,
    /// Lattice of Gaussian centres: `{-c, 0, c}^d`.
    pub lattice_spacing: f64,
    /// Widths of the lattice Gaussians and of the Hermite-modulated ones.
    pub widths: Vec<f64>,
    /// Extra centred Gaussians on a geometric width ladder from `ladder_min`
    /// (in cells) to `ladder_max`, `ladder_count` rungs.
    pub ladder_min_cells: f64,
    pub ladder_max: f64,
    pub ladder_count: usize,
    pub ladder_centre: [f64; 3],
    pub random_count: usize,
    /// Largest wave number of the band-limited random fields.
    pub random_kmax: f64,
}

impl Default for PoincareFamily {
    fn default() -> Self {
        Self {
            seed: 7,
            lattice_spacing: 1.0,
            widths: vec![0.5, 1.0, 2.0],
            ladder_min_cells: 0.75,
            ladder_max: 2.0,
            ladder_count: 16,
            ladder_centre: [0.0; 3],
            random_count: 64,
            random_kmax: 3.0,
        }
    }
}

/// One member of a test family.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub id: String,
    pub field: ScalarField,
}

fn gauss_at(spec: GridSpec, centre: [f64; 3], w: f64) -> ScalarField {
    let d = spec.dim();
    ScalarField::from_fn(spec, |v| {
        let r2: f64 = (0..d).map(|k| (v[k] - centre[k]).powi(2)).sum();
        (-r2 / (2.0 * w * w)).exp()
    })
    .expect("finite")
}

fn hermite(k: usize, x: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => 2.0 * x,
        _ => 4.0 * x * x - 2.0,
    }
}

impl PoincareFamily {
    pub fn validate(&self) -> Result<()> {
        require(self.widths.iter().all(|w| *w > 0.0) && !self.widths.is_empty(), "widths", "need positive widths")?;
        require(self.lattice_spacing > 0.0, "lattice_spacing", "must be positive")?;
        require(self.ladder_min_cells > 0.0 && self.ladder_max > 0.0, "ladder", "bounds must be positive")?;
        require(self.random_kmax > 0.0, "random_kmax", "must be positive")
    }

    pub fn build(&self, spec: GridSpec) -> Result<Vec<TestFunction>> {
        let mut out = Vec::new();
        self.visit(spec, |t| {
            out.push(t);
            Ok(())
        })?;
        Ok(out)
    }

    /// Generates the members one at a time.
    pub fn visit(&self, spec: GridSpec, mut out: impl FnMut(TestFunction) -> Result<()>) -> Result<()> {
        self.validate()?;
        let d = spec.dim();
        let c = self.lattice_spacing;
        let offsets = [-c, 0.0, c];
        let n_centres = 3usize.pow(d as u32);
        for (wi, &w) in self.widths.iter().enumerate() {
            for m in 0..n_centres {
                let mut centre = [0.0; 3];
                let mut r = m;
                for x in centre.iter_mut().take(d) {
                    *x = offsets[r % 3];
                    r /= 3;
                }
                out(TestFunction { id: format!("gauss_w{wi}_c{m}"), field: gauss_at(spec, centre, w) })?;
            }
            // Hermite-modulated, total degree <= 2
            for a in 0..3usize {
                for b in 0..3usize {
                    for e in 0..if d == 3 { 3usize } else { 1 } {
                        if a + b + e == 0 || a + b + e > 2 {
                            continue;
                        }
                        let field = ScalarField::from_fn(spec, |v| {
                            let r2: f64 = v[..d].iter().map(|x| x * x).sum();
                            let h = hermite(a, v[0] / w) * hermite(b, v[1] / w) * if d == 3 { hermite(e, v[2] / w) } else { 1.0 };
                            h * (-r2 / (2.0 * w * w)).exp()
                        })?;
                        out(TestFunction { id: format!("hermite_w{wi}_{a}{b}{e}"), field })?;
                    }
                }
            }
        }
        let lo = self.ladder_min_cells * spec.spacing();
        if self.ladder_count > 0 && self.ladder_max > lo {
            let ratio = (self.ladder_max / lo).powf(1.0 / (self.ladder_count.max(2) - 1) as f64);
            for k in 0..self.ladder_count {
                let w = lo * ratio.powi(k as i32);
                out(TestFunction { id: format!("ladder_{k}"), field: gauss_at(spec, self.ladder_centre, w) })?;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let env = 0.25 * spec.half_width();
        for m in 0..self.random_count {
            let modes: Vec<([f64; 3], f64, f64)> = (0..8)
                .map(|_| {
                    let mut k = [0.0; 3];
                    for x in k.iter_mut().take(d) {
                        *x = rng.gen_range(-1.0..1.0);
                    }
                    let norm = k.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    let mag = rng.gen_range(0.0..self.random_kmax);
                    for x in k.iter_mut() {
                        *x *= mag / norm;
                    }
                    (k, rng.gen_range(0.0..2.0 * PI), rng.gen_range(-1.0..1.0))
                })
                .collect();
            let field = ScalarField::from_fn(spec, |v| {
                let r2: f64 = v[..d].iter().map(|x| x * x).sum();
                let s: f64 = modes.iter().map(|(k, ph, a)| a * ((0..d).map(|i| k[i] * v[i]).sum::<f64>() + ph).cos()).sum();
                s * (-r2 / (2.0 * env * env)).exp()
            })?;
            out(TestFunction { id: format!("random_{m}"), field })?;
        }
        Ok(())
    }
}

/// Result of an eps sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareReport {
    pub gamma: f64,
    pub eps: Vec<f64>,
    /// `C(eps) = max_phi (lhs - eps d_term) / l2_term`
    pub c_of_eps: Vec<f64>,
    pub argmax: Vec<String>,
    /// Least-squares slope of `log C` against `log eps` on the fit window.
    pub slope: f64,
    pub window: (f64, f64),
    pub window_decades: f64,
    /// Slopes over consecutive half-decade sub-windows of the fit window.
    pub window_slopes: Vec<f64>,
    /// `(eps, slope)` over half decades of the full positive range.
    pub local_slopes: Vec<(f64, f64)>,
    pub family: PoincareFamily,
    pub family_size: usize,
}

impl PoincareReport {
    /// Largest spread between sub-window slopes, relative to the mean slope.
    pub fn slope_spread(&self) -> f64 {
        if self.window_slopes.len() < 2 {
            return 0.0;
        }
        let lo = self.window_slopes.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.window_slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = self.window_slopes.iter().sum::<f64>() / self.window_slopes.len() as f64;
        (hi - lo) / mean.abs().max(1e-300)
    }

    /// A fit window of at least one decade with sub-window slopes agreeing
    /// to within half their mean.
    pub fn has_stable_power_law(&self) -> bool {
        self.slope.is_finite() && self.window_decades >= 1.0 && self.slope_spread() <= 0.5
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("eps,C,family_argmax_id\n");
        for ((e, c), id) in self.eps.iter().zip(&self.c_of_eps).zip(&self.argmax) {
            out.push_str(&format!("{e:.17e},{c:.17e},{id}\n"));
        }
        out
    }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// The sweep over an explicit list of members.
pub fn sweep_c_of_eps(
    c: &ScalarField,
    gamma: f64,
    eps_list: &[f64],
    family: &[TestFunction],
) -> Result<(Vec<f64>, Vec<String>)> {
    require(!eps_list.is_empty() && eps_list.iter().all(|e| *e > 0.0), "eps", "need positive eps values")?;
    let sides: Vec<(String, PoincareSides)> = family
        .iter()
        .map(|t| Ok((t.id.clone(), PoincareSides::from_c(c, &t.field, gamma)?)))
        .collect::<Result<_>>()?;
    maximise(&sides, eps_list)
}

fn maximise(sides: &[(String, PoincareSides)], eps_list: &[f64]) -> Result<(Vec<f64>, Vec<String>)> {
    if sides.is_empty() {
        return Err(LandauError::EmptyFamily);
    }
    let mut cs = Vec::with_capacity(eps_list.len());
    let mut ids = Vec::with_capacity(eps_list.len());
    for &e in eps_list {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (k, (_, s)) in sides.iter().enumerate() {
            if s.l2_term <= 0.0 {
                continue;
            }
            let v = (s.lhs - e * s.d_term) / s.l2_term;
            if v > best {
                best = v;
                arg = k;
            }
        }
        cs.push(best);
        ids.push(sides[arg].0.clone());
    }
    Ok((cs, ids))
}

/// eps sweep of the minimal Poincaré constant of `f` over a test family.
#[allow(non_snake_case)]
pub fn estimate_C_of_eps(f: &ScalarField, gamma: f64, eps_list: &[f64], family: &PoincareFamily) -> Result<PoincareReport> {
    let kernels = build_kernels(f.spec(), gamma)?;
    let c = compute_c(f, &kernels, Lambda::Gamma)?;
    estimate_C_of_eps_with(&c, gamma, eps_list, family)
}

/// Same sweep from a precomputed `c_gamma[f]`; members are generated and
/// dropped one at a time.
#[allow(non_snake_case)]
pub fn estimate_C_of_eps_with(c: &ScalarField, gamma: f64, eps_list: &[f64], family: &PoincareFamily) -> Result<PoincareReport> {
    require(!eps_list.is_empty() && eps_list.iter().all(|e| *e > 0.0), "eps", "need positive eps values")?;
    let mut eps = eps_list.to_vec();
    eps.sort_by(f64::total_cmp);
    let mut sides = Vec::new();
    family.visit(*c.spec(), |t| {
        sides.push((t.id, PoincareSides::from_c(c, &t.field, gamma)?));
        Ok(())
    })?;
    let (cs, ids) = maximise(&sides, &eps)?;
    let (slope, window, window_slopes) = fit_window(&eps, &cs);
    let window_decades = (window.1 / window.0).log10();
    Ok(PoincareReport {
        gamma,
        local_slopes: local_slopes(&eps, &cs),
        eps,
        c_of_eps: cs,
        argmax: ids,
        slope,
        window,
        window_decades: if window_decades.is_finite() { window_decades } else { 0.0 },
        window_slopes,
        family: family.clone(),
        family_size: sides.len(),
    })
}

/// Fit over the eps values where `C(eps) > 2 C(eps_max)`, `eps_max` being the
/// largest eps with a positive constant, leaving out the small-eps plateau
/// where the grid cannot resolve narrower maximisers
/// (`C(eps) >= C(eps_min) / 2`); sub-window slopes over consecutive half
/// decades.
pub fn fit_window(eps: &[f64], cs: &[f64]) -> (f64, (f64, f64), Vec<f64>) {
    let floor = 2.0 * cs.iter().rev().copied().find(|c| *c > 0.0).unwrap_or(0.0);
    let ceiling = 0.5 * cs.first().copied().unwrap_or(0.0);
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(cs)
        .filter(|(_, c)| **c > floor && **c > 0.0 && **c < ceiling)
        .map(|(e, c)| (e.ln(), c.ln()))
        .collect();
    if pts.len() < 3 {
        return (f64::NAN, (f64::NAN, f64::NAN), Vec::new());
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().cloned().unzip();
    let slope = linear_fit(&x, &y).0;
    let window = (x[0].exp(), x[x.len() - 1].exp());
    (slope, window, half_decade_slopes(&x, &y).into_iter().map(|(_, s)| s).collect())
}

/// Slopes of `y` against `x` (natural logs) over consecutive half-decade
/// windows, keyed by the window centre in the original variable.
pub fn half_decade_slopes(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let half = 0.5 * std::f64::consts::LN_10;
    let mut out = Vec::new();
    let Some(&last) = x.last() else { return out };
    let mut start = x[0];
    while start + half <= last + 1e-9 {
        let idx: Vec<usize> = (0..x.len()).filter(|&i| x[i] >= start - 1e-9 && x[i] <= start + half + 1e-9).collect();
        if idx.len() >= 2 {
            let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            out.push(((start + 0.5 * half).exp(), linear_fit(&xs, &ys).0));
        }
        start += half;
    }
    out
}

/// Local slopes of `log C` over the whole range with `C > 0`.
pub fn local_slopes(eps: &[f64], cs: &[f64]) -> Vec<(f64, f64)> {
    let (x, y): (Vec<f64>, Vec<f64>) =
        eps.iter().zip(cs).filter(|(_, c)| **c > 0.0).map(|(e, c)| (e.ln(), c.ln())).unzip();
    half_decade_slopes(&x, &y)
}

/// Unit mass split between the two cells nearest to `+-sqrt(d) e_1`: zero
/// momentum, energy `~ d`, and concentrated below grid resolution. Returns
/// the density and the centre of the positive lump.
pub fn point_pair(spec: GridSpec) -> Result<(ScalarField, [f64; 3])> {
    let d = spec.dim();
    let n = spec.n();
    let x = (d as f64).sqrt();
    let k = ((x + spec.half_width()) / spec.spacing() - 0.5).round();
    require(k >= 0.0 && (k as usize) < n, "half_width", "grid too small for the point pair")?;
    let k = k as usize;
    let mut idx = [0; 3];
    for a in idx.iter_mut().take(d).skip(1) {
        *a = n / 2;
    }
    idx[0] = k;
    let i1 = spec.flat_index(idx);
    for a in idx.iter_mut().take(d) {
        *a = n - 1 - *a;
    }
    let i2 = spec.flat_index(idx);
    let mut v = vec![0.0; spec.len()];
    v[i1] = 0.5 / spec.cell_volume();
    v[i2] = 0.5 / spec.cell_volume();
    Ok((ScalarField::new(spec, v)?, spec.node(i1)))
}

/// Exponent of `eps` in the Poincaré constant for `-2 < gamma < 0`.
pub fn poincare_target_slope(gamma: f64) -> f64 {
    gamma / (2.0 + gamma)
}

// ---------------------------------------------------------------------------
// splitting inequality

/// `I`, `I1`, `I2` and the bound `2^{-g}(d-1)(g+d)(I1 + I2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplittingCheck {
    pub i: f64,
    pub i1: f64,
    pub i2: f64,
    pub bound: f64,
}

pub fn splitting_check(f: &ScalarField, phi: &ScalarField, gamma: f64) -> Result<SplittingCheck> {
    same_grid(f.spec(), phi.spec())?;
    let spec = f.spec();
    check_direct(spec)?;
    let d = spec.dim() as f64;
    let diag = singular_cell_mean(spec, gamma);
    let br: Vec<f64> = (0..spec.len()).map(|i| (1.0 + spec.speed_sq(i)).sqrt()).collect();
    let phi2 = sq(phi);
    let kern = |r2: f64| if r2 == 0.0 { diag } else { r2.powf(0.5 * gamma) };
    let i = (d - 1.0) * (gamma + d) * pair_sum(spec, &phi2, f.values(), |_, _, r2| kern(r2));
    let i1 = pair_sum(spec, &phi2, f.values(), |a, _, r2| {
        if r2.sqrt() >= 0.5 * br[a] {
            br[a].powf(gamma)
        } else {
            0.0
        }
    });
    let i2 = pair_sum(spec, &phi2, f.values(), |a, b, r2| {
        if r2.sqrt() < 0.5 * br[a] {
            br[b].powf(-gamma) * kern(r2) * br[a].powf(gamma)
        } else {
            0.0
        }
    });
    let bound = 2f64.powf(-gamma) * (d - 1.0) * (gamma + d) * (i1 + i2);
    Ok(SplittingCheck { i, i1, i2, bound })
}

// ---------------------------------------------------------------------------
// critical case gamma = -2

/// Surface measure of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => {
            let h = 0.5 * d as f64;
            2.0 * PI.powf(h) / libm_gamma(h)
        }
    }
}

fn libm_gamma(x: f64) -> f64 {
    // integer and half-integer arguments only
    if (x - x.round()).abs() < 1e-12 {
        (1..x.round() as u64).map(|k| k as f64).product()
    } else {
        let mut g = PI.sqrt();
        let mut y = 0.5;
        while y < x - 1e-12 {
            g *= y;
            y += 1.0;
        }
        g
    }
}

/// `F = <v>^{-g} f` split at `R1`.
#[derive(Clone, Debug)]
pub struct TruncationSplit {
    pub r1: f64,
    pub f_weighted: ScalarField,
    pub plus: ScalarField,
    pub minus: ScalarField,
    pub plus_l1: f64,
}

pub fn truncation_split(f: &ScalarField, gamma: f64, r1: f64) -> TruncationSplit {
    let big_f = weighted(f, -gamma);
    let spec = *f.spec();
    let plus: Vec<f64> = big_f.values().iter().map(|&x| if x > r1 { x } else { 0.0 }).collect();
    let minus: Vec<f64> = big_f.values().iter().map(|&x| if x > r1 { 0.0 } else { x }).collect();
    let plus = ScalarField::new(spec, plus).expect("finite");
    let plus_l1 = integrate(&plus.map(f64::abs).expect("finite"), 0.0);
    TruncationSplit { r1, f_weighted: big_f, plus, minus: ScalarField::new(spec, minus).expect("finite"), plus_l1 }
}

/// Measured pieces of the critical split and the bounds used against them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalSplit {
    pub j1: f64,
    pub j2_minus: f64,
    pub j2_plus: f64,
    /// `||F||_{L^1} ||psi||^2`
    pub j1_bound: f64,
    /// `R1 ||psi||^2 |S^{d-1}|/(d-2)`
    pub j2_minus_bound: f64,
    /// Same with the grid's own `sup_v sum_{|v-w| <= 1} |v-w|^{-2} h^d`.
    pub j2_minus_bound_grid: f64,
    /// `||F_{R1}^+||_{L^1} ||grad psi||^2`, the factor multiplying the
    /// empirical constant in the `J2^+` estimate.
    pub j2_plus_scale: f64,
    pub plus_l1: f64,
}

impl CriticalSplit {
    /// `J2^+ / (||F^+||_{L^1} ||grad psi||^2)`.
    pub fn empirical_constant(&self) -> f64 {
        if self.j2_plus_scale > 0.0 {
            self.j2_plus / self.j2_plus_scale
        } else {
            0.0
        }
    }
}

/// Grid value of `sup_v int_{|v-w| <= 1} |v-w|^{-2} dw`.
pub fn unit_ball_singular_integral(spec: &GridSpec) -> f64 {
    let h = spec.spacing();
    let d = spec.dim();
    let diag = singular_cell_mean(spec, -2.0);
    let m = (1.0 / h).floor() as i64;
    let mut s = 0.0;
    let range = -m..=m;
    for a in range.clone() {
        for b in range.clone() {
            for c in if d == 3 { -m..=m } else { 0..=0 } {
                let r2 = ((a * a + b * b + c * c) as f64) * h * h;
                if r2 == 0.0 {
                    s += diag;
                } else if r2 <= 1.0 {
                    s += 1.0 / r2;
                }
            }
        }
    }
    s * spec.cell_volume()
}

pub fn critical_split(f: &ScalarField, phi: &ScalarField, gamma: f64, r1: f64) -> Result<CriticalSplit> {
    require(gamma == -2.0, "gamma", format!("the critical split is for gamma = -2, got {gamma}"))?;
    same_grid(f.spec(), phi.spec())?;
    let spec = f.spec();
    check_direct(spec)?;
    require(spec.dim() >= 3, "d", "the critical split needs d >= 3")?;
    let psi = weighted(phi, 0.5 * gamma);
    let split = truncation_split(f, gamma, r1);
    let diag = singular_cell_mean(spec, gamma);
    let psi2 = sq(&psi);
    let far = |r2: f64| if r2 > 1.0 { 1.0 / r2 } else { 0.0 };
    let near = |r2: f64| {
        if r2 == 0.0 {
            diag
        } else if r2 <= 1.0 {
            1.0 / r2
        } else {
            0.0
        }
    };
    let j1 = pair_sum(spec, &psi2, split.f_weighted.values(), |_, _, r2| far(r2));
    let j2_minus = pair_sum(spec, &psi2, split.minus.values(), |_, _, r2| near(r2));
    let j2_plus = pair_sum(spec, &psi2, split.plus.values(), |_, _, r2| near(r2));
    let psi_l2 = l2_sq(&psi);
    let f_l1 = integrate(&split.f_weighted.map(f64::abs)?, 0.0);
    let d = spec.dim();
    Ok(CriticalSplit {
        j1,
        j2_minus,
        j2_plus,
        j1_bound: f_l1 * psi_l2,
        j2_minus_bound: r1 * psi_l2 * sphere_area(d) / (d as f64 - 2.0),
        j2_minus_bound_grid: r1 * psi_l2 * unit_ball_singular_integral(spec),
        j2_plus_scale: split.plus_l1 * dirichlet(&psi),
        plus_l1: split.plus_l1,
    })
}

/// Both sides of the tail bound on `||F_{R1}^+||_{L^1}` with `Psi(r) = r^{s/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub r1: f64,
    pub r2: f64,
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// The four terms of `rhs`, in order.
    pub terms: [f64; 4],
    /// `int f (log f)_+`, the entropy used in the first term.
    pub entropy_plus: f64,
    pub energy: f64,
    pub m_psi: f64,
}

/// `sup_{r >= r0} r / Psi(r) = r0^{(2-s)/2}`.
pub fn sup_r_over_psi(r0: f64, s: f64) -> f64 {
    r0.powf(0.5 * (2.0 - s))
}

/// `sup_{r >= r0} (1 + r) / Psi(r)`, attained at `r0` since the ratio decreases.
pub fn sup_one_plus_r_over_psi(r0: f64, s: f64) -> f64 {
    (1.0 + r0) * r0.powf(-0.5 * s)
}

pub fn tail_bound_check(f: &ScalarField, r1: f64, r2: f64, s: f64) -> Result<TailBound> {
    require(s > 2.0, "s", format!("{s} must exceed 2"))?;
    require(r1 > 1.0, "R1", format!("{r1} must exceed 1"))?;
    require(r2 > 0.0, "R2", format!("{r2} must be positive"))?;
    let lhs = truncation_split(f, -2.0, r1).plus_l1;
    let energy = integrate_with(f, |v| v.iter().map(|x| x * x).sum());
    let m_psi = integrate_with(f, |v| v.iter().map(|x| x * x).sum::<f64>().powf(0.5 * s));
    let h = entropy_positive_part(f);
    let terms = [
        2.0 * (1.0 + r2) / r1.ln() * h,
        energy / r2,
        m_psi * sup_r_over_psi(r2, s),
        m_psi * sup_one_plus_r_over_psi(r1.sqrt() - 1.0, s),
    ];
    Ok(TailBound { r1, r2, s, lhs, rhs: terms.iter().sum(), terms, entropy_plus: h, energy, m_psi })
}

/// Explicit `(R1, R2)` making `C~ * rhs <= eps`.
pub fn remark_thresholds(c_tilde: f64, eps: f64, energy: f64, m_psi: f64, entropy_plus: f64, s: f64) -> Result<(f64, f64)> {
    require(eps > 0.0 && c_tilde > 0.0, "eps", "eps and C~ must be positive")?;
    require(s > 2.0, "s", format!("{s} must exceed 2"))?;
    let e = 2.0 / (s - 2.0);
    let r2 = (4.0 * c_tilde / eps * energy).max((4.0 * c_tilde / eps * m_psi).powf(e));
    let r1 = 4f64
        .max((8.0 * c_tilde * (1.0 + r2) / eps * entropy_plus).exp())
        .max(((8.0 * c_tilde / eps * m_psi).powf(e) + 1.0).powi(2));
    Ok((r1, r2))
}

// ---------------------------------------------------------------------------
// HLS variant, d = 3

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HlsCheck {
    pub r: f64,
    pub j_r: f64,
    /// `||f 1_{f>R}||_{9/4} ||phi||_{9/4}^2`
    pub norm_product: f64,
    /// `J_R / norm_product`, a lower bound for the HLS constant.
    pub ratio: f64,
    /// Right side of the chained interpolation bound without its constant.
    pub chained: f64,
}

pub const HLS_P: f64 = 9.0 / 4.0;

pub fn hls_singular_check(f: &ScalarField, phi: &ScalarField, r: f64, s: f64) -> Result<HlsCheck> {
    same_grid(f.spec(), phi.spec())?;
    let spec = f.spec();
    require(spec.dim() == 3, "d", "the HLS variant is stated for d = 3")?;
    require(r >= 1.0, "R", format!("{r} < 1"))?;
    require(s > 2.0, "s", format!("{s} must exceed 2"))?;
    check_direct(spec)?;
    let cut: Vec<f64> = f.values().iter().map(|&x| if x > r { x } else { 0.0 }).collect();
    let diag = singular_cell_mean(spec, -2.0);
    let j_r = pair_sum(spec, &sq(phi), &cut, |_, _, r2| {
        if r2 == 0.0 {
            diag
        } else if r2 <= 1.0 {
            1.0 / r2
        } else {
            0.0
        }
    });
    let cut = ScalarField::new(*spec, cut)?;
    let norm_product = lp_norm(&cut, HLS_P) * lp_norm(phi, HLS_P).powi(2);
    let theta = 1.0 - 2.0 / s;
    let ms = integrate(&f.map(f64::abs)?, s);
    let flogf: f64 = f.values().iter().map(|&x| if x > 0.0 { (x * x.ln()).abs() } else { 0.0 }).sum::<f64>() * spec.cell_volume();
    let chained = ms.powf((1.0 - theta) / 3.0) * (flogf / r.ln().max(f64::MIN_POSITIVE)).powf(theta / 3.0)
        * integrate(&phi.map(f64::abs)?, 2.0).powf(2.0 / 3.0)
        * lp_norm(&weighted(f, -1.0), 6.0).powf(2.0 / 3.0)
        * lp_norm(&weighted(phi, -1.0), 6.0).powf(4.0 / 3.0);
    Ok(HlsCheck { r, j_r, norm_product, ratio: if norm_product > 0.0 { j_r / norm_product } else { 0.0 }, chained })
}

// ---------------------------------------------------------------------------
// level-change inequalities

/// Which interpolation inequality to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LevelInequality {
    /// `||<v>^{g/2} f_l^+||^2` against `(l-k)^{-4/d} D_k ||f_k^+||^{4/d}`
    L2,
    /// `||<v>^g f_l^+||_p`, `p in [1, d/(d-2))`
    Lp { p: f64 },
    /// `||f_l^+||^2` with the `L^1_s` moment, `q in ((2d+2)/d, (2d+4)/d)`
    Lq { q: f64 },
    /// `||f_l^+||_{d/(d-1)}^2` with an `L^1_s` moment, `s > 2`; the weight in
    /// the gradient is `<v>^{-1}` regardless of `gamma`.
    Ld { s: f64 },
}

impl LevelInequality {
    pub fn name(&self) -> String {
        match self {
            Self::L2 => "flL2".into(),
            Self::Lp { p } => format!("flLp(p={p})"),
            Self::Lq { q } => format!("flLq(q={q})"),
            Self::Ld { s } => format!("flLd(s={s})"),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let df = d as f64;
        match *self {
            Self::L2 => Ok(()),
            Self::Lp { p } => {
                let hi = if d > 2 { df / (df - 2.0) } else { f64::INFINITY };
                require((1.0..hi).contains(&p), "p", format!("{p} not in [1, {hi})"))
            }
            Self::Lq { q } => {
                let (lo, hi) = ((2.0 * df + 2.0) / df, (2.0 * df + 4.0) / df);
                require(q > lo && q < hi, "q", format!("{q} not in ({lo}, {hi})"))
            }
            Self::Ld { s } => {
                require(d >= 3, "d", "needs d >= 3")?;
                require(s > 2.0, "s", format!("{s} must exceed 2"))
            }
        }
    }
}

/// Moment weight `s = -g d / (2d + 4 - q d)` of the `L^q` inequality.
pub fn lq_weight(d: usize, gamma: f64, q: f64) -> f64 {
    let d = d as f64;
    -gamma * d / (2.0 * d + 4.0 - q * d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub lhs: f64,
    pub rhs_without_constant: f64,
    pub implied_constant: f64,
}

pub fn level_inequality_check(f: &ScalarField, k: f64, l: f64, gamma: f64, which: LevelInequality) -> Result<LevelCheck> {
    require(k >= 0.0 && k < l, "levels", format!("need 0 <= k < l, got k={k}, l={l}"))?;
    let d = f.spec().dim();
    which.validate(d)?;
    let df = d as f64;
    let fl = level_truncate(f, l);
    let fk = level_truncate(f, k);
    let gap = l - k;
    let grad = |w: f64| dirichlet(&weighted(&fk, w));
    let fk2 = l2_sq(&fk).sqrt();
    let (lhs, rhs) = match which {
        LevelInequality::L2 => {
            (integrate(&fl.map(|x| x * x)?, gamma), gap.powf(-4.0 / df) * grad(0.5 * gamma) * fk2.powf(4.0 / df))
        }
        LevelInequality::Lp { p } => (
            lp_norm(&weighted(&fl, gamma), p),
            gap.powf(-(2.0 / p - (df - 4.0) / df)) * grad(0.5 * gamma) * fk2.powf(2.0 / p + (4.0 - 2.0 * df) / df),
        ),
        LevelInequality::Lq { q } => {
            let s = lq_weight(d, gamma, q);
            let m = integrate(&fk, s);
            (
                l2_sq(&fl),
                gap.powf(2.0 - q)
                    * m.powf((2.0 * df + 4.0) / df - q)
                    * fk2.powf(2.0 * (q - (2.0 * df + 2.0) / df))
                    * grad(0.5 * gamma),
            )
        }
        LevelInequality::Ld { s } => {
            let m = integrate(&fk, s);
            (
                lp_norm(&fl, df / (df - 1.0)).powi(2),
                gap.powf(-2.0 * (s - 1.0) / s) * m.powf(2.0 / s) * fk2.powf(2.0 * (s - 2.0) / s) * grad(-1.0),
            )
        }
    };
    let implied = if lhs == 0.0 {
        0.0
    } else if rhs > 0.0 {
        lhs / rhs
    } else {
        f64::INFINITY
    };
    Ok(LevelCheck { lhs, rhs_without_constant: rhs, implied_constant: implied })
}

/// Smooth nonnegative fields for the level-inequality family: sums of a few
/// Gaussians with seeded centres, widths and weights, given as functions of
/// `v` so the same member can be sampled on several grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobField {
    pub blobs: Vec<([f64; 3], f64, f64)>,
}

impl BlobField {
    pub fn random(d: usize, rng: &mut impl Rng, spread: f64) -> Self {
        let count = rng.gen_range(1..=4);
        let blobs = (0..count)
            .map(|_| {
                let mut c = [0.0; 3];
                for x in c.iter_mut().take(d) {
                    *x = rng.gen_range(-spread..spread);
                }
                (c, rng.gen_range(0.6..1.5), rng.gen_range(0.2..1.0))
            })
            .collect();
        Self { blobs }
    }

    pub fn sample(&self, spec: GridSpec) -> ScalarField {
        let d = spec.dim();
        ScalarField::from_fn(spec, |v| {
            self.blobs
                .iter()
                .map(|(c, w, a)| a * (-(0..d).map(|k| (v[k] - c[k]).powi(2)).sum::<f64>() / (2.0 * w * w)).exp())
                .sum()
        })
        .expect("finite")
    }
}

/// Largest implied constant of one inequality over a blob family, with the
/// levels set to fixed fractions of each member's maximum.
pub fn max_implied_constant(
    family: &[BlobField],
    spec: GridSpec,
    gamma: f64,
    which: LevelInequality,
    level_fractions: &[(f64, f64)],
) -> Result<f64> {
    if family.is_empty() {
        return Err(LandauError::EmptyFamily);
    }
    let mut worst: f64 = 0.0;
    for b in family {
        let f = b.sample(spec);
        let top = f.max();
        for &(kf, lf) in level_fractions {
            worst = worst.max(level_inequality_check(&f, kf * top, lf * top, gamma, which)?.implied_constant);
        }
    }
    Ok(worst)
}
