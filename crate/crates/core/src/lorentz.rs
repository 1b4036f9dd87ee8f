//! Distribution functions, decreasing rearrangements and Lorentz
//! quasi-norms of grid fields, with the Hölder, interpolation and
//! Sobolev-type ratio checks built on them.
//!
//! A grid field is a step function of the cell measure, so every Lorentz
//! integral below is a finite sum of closed-form power integrals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::{convolve_with, equal_volume_radius};
use crate::error::{invalid, LandauError, Result};
use crate::grid::{gradient, same_grid, GridSpec, ScalarField};

/// Right-continuous nonincreasing step function on `[0, inf)`: value
/// `values[i]` on `[breaks[i], breaks[i+1])`, zero after the last break.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.len() != values.len() + 1 {
            return Err(LandauError::SizeMismatch { expected: values.len() + 1, got: breaks.len() });
        }
        if breaks[0] != 0.0 {
            return Err(invalid("breaks", "must start at 0"));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(invalid("breaks", "must be finite and strictly increasing"));
        }
        if values.iter().any(|y| !(*y >= 0.0) || !y.is_finite()) || values.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("values", "must be finite, nonnegative and nonincreasing"));
        }
        Ok(Self { breaks, values })
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        // first break strictly greater than t
        let k = self.breaks.partition_point(|&b| b <= t);
        if k == 0 || k > self.values.len() {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// Measure of `{t : phi(t) > s}` as a step function of `s`.
    pub fn distribution(&self) -> StepFunction {
        let mut breaks = vec![0.0];
        let mut values = Vec::new();
        // distinct positive levels, ascending; each level's measure is the end
        // of its last plateau
        for j in (0..self.values.len()).rev() {
            let y = self.values[j];
            if y <= 0.0 || breaks.last() == Some(&y) {
                continue;
            }
            breaks.push(y);
            values.push(self.breaks[j + 1]);
        }
        StepFunction { breaks, values }
    }

    /// `int_0^inf phi(t)^p dt`.
    pub fn integral_power(&self, p: f64) -> f64 {
        self.values.iter().zip(self.breaks.windows(2)).map(|(y, w)| y.powf(p) * (w[1] - w[0])).sum()
    }
}

fn sorted_magnitudes(f: &ScalarField) -> Vec<f64> {
    let mut v: Vec<f64> = f.values().iter().map(|x| x.abs()).filter(|x| *x > 0.0).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// `d_f(s) = h^d #{cells with |f| > s}`.
pub fn distribution(f: &ScalarField) -> StepFunction {
    let vol = f.spec().cell_volume();
    let mags = sorted_magnitudes(f);
    let mut breaks = vec![0.0];
    let mut values = Vec::new();
    let mut end = mags.len();
    while end > 0 {
        let y = mags[end - 1];
        breaks.push(y);
        values.push(end as f64 * vol);
        while end > 0 && mags[end - 1] == y {
            end -= 1;
        }
    }
    StepFunction { breaks, values }
}

/// `f*`: sorted magnitudes with plateau width `h^d` per cell.
pub fn rearrangement(f: &ScalarField) -> StepFunction {
    let vol = f.spec().cell_volume();
    let mags = sorted_magnitudes(f);
    let mut breaks = vec![0.0];
    let mut values = Vec::new();
    let mut k = 0;
    while k < mags.len() {
        let y = mags[k];
        while k < mags.len() && mags[k] == y {
            k += 1;
        }
        breaks.push(k as f64 * vol);
        values.push(y);
    }
    StepFunction { breaks, values }
}

/// Exponent pair of `L^{p,q}`; `f64::INFINITY` stands for infinity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzParams {
    p: f64,
    q: f64,
}

impl LorentzParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(invalid("p", format!("{p} < 1")));
        }
        if !(q >= 1.0) {
            return Err(invalid("q", format!("{q} < 1")));
        }
        Ok(Self { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

/// Quasi-norm from the rearrangement:
/// `(int (t^{1/p} f*(t))^q dt/t)^{1/q}`, or `sup t^{1/p} f*(t)` for `q = inf`.
pub fn lorentz_from_rearrangement(fstar: &StepFunction, lp: LorentzParams) -> f64 {
    let (p, q) = (lp.p, lp.q);
    let (t, y) = (&fstar.breaks, &fstar.values);
    if y.is_empty() {
        return 0.0;
    }
    if q.is_infinite() {
        if p.is_infinite() {
            return y[0];
        }
        // the supremum on each plateau is approached at its right end
        return y.iter().zip(&t[1..]).map(|(y, t)| y * t.powf(1.0 / p)).fold(0.0, f64::max);
    }
    if p.is_infinite() {
        return f64::INFINITY;
    }
    let e = q / p;
    let sum: f64 = y.iter().zip(t.windows(2)).map(|(y, w)| y.powf(q) * (w[1].powf(e) - w[0].powf(e))).sum();
    (p / q * sum).powf(1.0 / q)
}

/// Same quasi-norm from the distribution function:
/// `p int (s d_f(s)^{1/p})^q ds/s`.
pub fn lorentz_from_distribution(dist: &StepFunction, lp: LorentzParams) -> f64 {
    let (p, q) = (lp.p, lp.q);
    let (s, dv) = (&dist.breaks, &dist.values);
    if dv.is_empty() {
        return 0.0;
    }
    if p.is_infinite() {
        return if q.is_infinite() { *s.last().expect("nonempty") } else { f64::INFINITY };
    }
    if q.is_infinite() {
        return dv.iter().zip(&s[1..]).map(|(d, s)| s * d.powf(1.0 / p)).fold(0.0, f64::max);
    }
    let sum: f64 = dv.iter().zip(s.windows(2)).map(|(d, w)| d.powf(q / p) * (w[1].powf(q) - w[0].powf(q))).sum();
    (p / q * sum).powf(1.0 / q)
}

/// `||f||_{p,q}`.
pub fn lorentz_norm(f: &ScalarField, p: f64, q: f64) -> Result<f64> {
    Ok(lorentz_from_rearrangement(&rearrangement(f), LorentzParams::new(p, q)?))
}

/// Plain `||f||_{L^p}` by the midpoint rule.
pub fn lp_norm(f: &ScalarField, p: f64) -> f64 {
    let vol = f.spec().cell_volume();
    if p.is_infinite() {
        return f.values().iter().map(|x| x.abs()).fold(0.0, f64::max);
    }
    (f.values().iter().map(|x| x.abs().powf(p)).sum::<f64>() * vol).powf(1.0 / p)
}

fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// `|int f g| / (||f||_{p,q} ||g||_{p',q'})`.
pub fn holder_lorentz_ratio(f: &ScalarField, g: &ScalarField, p: f64, q: f64) -> Result<f64> {
    same_grid(f.spec(), g.spec())?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(invalid("p", format!("{p} not in (1, inf)")));
    }
    let lp = LorentzParams::new(p, q)?;
    let dual = LorentzParams::new(conjugate(p), conjugate(q))?;
    let vol = f.spec().cell_volume();
    let lhs = f.values().iter().zip(g.values()).map(|(a, b)| a * b).sum::<f64>().abs() * vol;
    let rhs = lorentz_from_rearrangement(&rearrangement(f), lp) * lorentz_from_rearrangement(&rearrangement(g), dual);
    Ok(if rhs > 0.0 { lhs / rhs } else { 0.0 })
}

/// `theta` with `1/p = theta/p1 + (1-theta)/p2`.
pub fn interpolation_theta(p: f64, p1: f64, p2: f64) -> f64 {
    (1.0 / p - 1.0 / p2) / (1.0 / p1 - 1.0 / p2)
}

/// Constant `(p / (p1^theta p2^{1-theta}))^{1/q}` of the interpolation
/// inequality, obtained from the distribution-function formula by Hölder.
pub fn interpolation_constant(p: f64, q: f64, p1: f64, p2: f64) -> f64 {
    let th = interpolation_theta(p, p1, p2);
    (p / (p1.powf(th) * p2.powf(1.0 - th))).powf(1.0 / q)
}

/// `||f||_{p,q} / (C ||f||_{p1,q}^theta ||f||_{p2,q}^{1-theta})`.
pub fn interpolation_ratio(f: &ScalarField, p: f64, q: f64, p1: f64, p2: f64) -> Result<f64> {
    if !(1.0 <= p1 && p1 < p && p < p2 && p2.is_finite()) {
        return Err(invalid("p", format!("need 1 <= p1 < p < p2 < inf, got {p1}, {p}, {p2}")));
    }
    if !q.is_finite() {
        return Err(invalid("q", "must be finite"));
    }
    let fs = rearrangement(f);
    let th = interpolation_theta(p, p1, p2);
    let norm = |p| lorentz_from_rearrangement(&fs, LorentzParams { p, q });
    let rhs = interpolation_constant(p, q, p1, p2) * norm(p1).powf(th) * norm(p2).powf(1.0 - th);
    Ok(if rhs > 0.0 { norm(p) / rhs } else { 0.0 })
}

/// `||f||_{q*,q} / ||grad f||_{L^q}` with `q* = qd/(d-q)`.
pub fn sobolev_lorentz_ratio(f: &ScalarField, q: f64) -> Result<f64> {
    let d = f.spec().dim() as f64;
    if f.spec().dim() < 3 {
        return Err(invalid("d", "the Sobolev-Lorentz inequality needs d >= 3"));
    }
    if !(q >= 1.0 && q < d) {
        return Err(invalid("q", format!("{q} not in [1, {d})")));
    }
    let qstar = q * d / (d - q);
    let g = gradient(f);
    let vol = f.spec().cell_volume();
    let grad_q = (g.norm_sq().values().iter().map(|x| x.powf(q / 2.0)).sum::<f64>() * vol).powf(1.0 / q);
    let lhs = lorentz_norm(f, qstar, q)?;
    Ok(if grad_q > 0.0 { lhs / grad_q } else { 0.0 })
}

/// Largest `||f + g|| / (||f|| + ||g||)` over the given pairs.
pub fn quasi_triangle_constant(pairs: &[(ScalarField, ScalarField)], p: f64, q: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(LandauError::EmptyFamily);
    }
    let mut worst: f64 = 0.0;
    for (f, g) in pairs {
        let s = f.add(g)?;
        let den = lorentz_norm(f, p, q)? + lorentz_norm(g, p, q)?;
        if den > 0.0 {
            worst = worst.max(lorentz_norm(&s, p, q)? / den);
        }
    }
    Ok(worst)
}

/// Cell mean of `|z|^{alpha-d}` over the ball with the volume of one cell.
pub fn riesz_origin_value(spec: &GridSpec, alpha: f64) -> f64 {
    let d = spec.dim() as f64;
    d / alpha * equal_volume_radius(spec).powf(alpha - d)
}

/// `I_alpha[g](v) = int g(w) |v - w|^{alpha - d} dw`.
pub fn riesz_potential(g: &ScalarField, alpha: f64) -> Result<ScalarField> {
    let spec = *g.spec();
    let d = spec.dim() as f64;
    if !(alpha > 0.0 && alpha < d) {
        return Err(invalid("alpha", format!("{alpha} not in (0, {d})")));
    }
    let origin = riesz_origin_value(&spec, alpha);
    let dim = spec.dim();
    Ok(convolve_with(
        |z| {
            let r2: f64 = z[..dim].iter().map(|x| x * x).sum();
            if r2 == 0.0 {
                origin
            } else {
                r2.powf(0.5 * (alpha - d))
            }
        },
        g,
    ))
}

/// Largest `||I_{d+gamma}[F]||_{d/|gamma|, inf} / ||F||_{L^1}` over a family.
pub fn weak_type_constant(family: &[ScalarField], gamma: f64) -> Result<f64> {
    if family.is_empty() {
        return Err(LandauError::EmptyFamily);
    }
    let mut worst: f64 = 0.0;
    for f in family {
        let d = f.spec().dim() as f64;
        if !(gamma < 0.0 && gamma + d > 0.0) {
            return Err(invalid("gamma", format!("{gamma} not in (-d, 0)")));
        }
        let pot = riesz_potential(f, d + gamma)?;
        let l1 = lp_norm(f, 1.0);
        if l1 > 0.0 {
            worst = worst.max(lorentz_norm(&pot, d / gamma.abs(), f64::INFINITY)? / l1);
        }
    }
    Ok(worst)
}

/// One line of the self-test report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfTestRow {
    pub test: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
}

impl SelfTestRow {
    fn new(test: impl Into<String>, lhs: f64, rhs: f64, pass: impl FnOnce(f64) -> bool) -> Self {
        let ratio = if rhs != 0.0 { lhs / rhs } else if lhs == 0.0 { 1.0 } else { f64::INFINITY };
        Self { test: test.into(), lhs, rhs, pass: pass(ratio), ratio }
    }
}

/// Nonnegative field with random values on a random subset of cells.
pub fn random_field(spec: GridSpec, rng: &mut impl Rng) -> ScalarField {
    let density = rng.gen_range(0.2..1.0);
    let scale = 10f64.powf(rng.gen_range(-1.0..1.0));
    let vals = (0..spec.len()).map(|_| if rng.gen_bool(density) { scale * rng.gen::<f64>() } else { 0.0 }).collect();
    ScalarField::new(spec, vals).expect("finite")
}

/// Centred isotropic Gaussian `exp(-|v|^2 / (2 w^2))`.
pub fn gaussian_profile(spec: GridSpec, width: f64) -> ScalarField {
    ScalarField::from_fn(spec, |v| (-v.iter().map(|x| x * x).sum::<f64>() / (2.0 * width * width)).exp())
        .expect("finite")
}

/// Widths used by the Sobolev-Lorentz scale-invariance check.
pub const SOBOLEV_WIDTHS: [f64; 5] = [1.0, 1.25, 1.5, 1.75, 2.0];

/// Runs the whole self-test suite with one seeded generator.
pub fn selftest(seed: u64) -> Result<Vec<SelfTestRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let small = GridSpec::new(3, 8, 2.0)?;

    // equimeasurability, bit for bit
    for k in 0..10 {
        let f = random_field(small, &mut rng);
        let same = rearrangement(&f).distribution() == distribution(&f);
        rows.push(SelfTestRow::new(format!("equimeasurable_{k}"), same as u8 as f64, 1.0, |r| r == 1.0));
    }

    // rearrangement against distribution formula
    let exps = [(1.5, 1.0), (2.0, 2.0), (3.0, 2.0), (2.5, 4.0), (4.0, 1.5), (2.0, f64::INFINITY)];
    for k in 0..10 {
        let f = random_field(small, &mut rng);
        let (fs, df) = (rearrangement(&f), distribution(&f));
        for &(p, q) in &exps {
            let lp = LorentzParams::new(p, q)?;
            rows.push(SelfTestRow::new(
                format!("lorentz_vs_ppqq_{k}_p{p}_q{q}"),
                lorentz_from_rearrangement(&fs, lp),
                lorentz_from_distribution(&df, lp),
                |r| (r - 1.0).abs() <= 1e-10,
            ));
        }
    }

    // indicator of a set of measure m
    for &(cells, p, q) in &[(37usize, 2.0, 1.0), (100, 3.0, 2.0), (250, 1.5, 4.0), (512, 6.0, 2.0)] {
        let vals = (0..small.len()).map(|i| if i < cells { 1.0 } else { 0.0 }).collect();
        let f = ScalarField::new(small, vals)?;
        let m = cells as f64 * small.cell_volume();
        rows.push(SelfTestRow::new(
            format!("indicator_m{cells}_p{p}_q{q}"),
            lorentz_norm(&f, p, q)?,
            (p / q).powf(1.0 / q) * m.powf(1.0 / p),
            |r| (r - 1.0).abs() <= 1e-10,
        ));
    }

    // L^{p,p} = L^p and the power rule
    for k in 0..10 {
        let f = random_field(small, &mut rng);
        for p in [1.0, 2.0, 3.0, 4.5] {
            rows.push(SelfTestRow::new(format!("lpp_{k}_p{p}"), lorentz_norm(&f, p, p)?, lp_norm(&f, p), |r| {
                (r - 1.0).abs() <= 1e-12
            }));
        }
        let f2 = f.map(|x| x * x)?;
        rows.push(SelfTestRow::new(
            format!("power_rule_{k}"),
            lorentz_norm(&f2, 2.0, 1.5)?,
            lorentz_norm(&f, 4.0, 3.0)?.powi(2),
            |r| (r - 1.0).abs() <= 1e-12,
        ));
    }

    // Hölder and interpolation on 200 fields each
    let holder_exps = [(2.0, 2.0), (3.0, 2.0), (1.5, 4.0), (4.0, 1.0), (2.5, f64::INFINITY)];
    let mut worst_h: f64 = 0.0;
    let mut worst_i: f64 = 0.0;
    for k in 0..200 {
        let f = random_field(small, &mut rng);
        let g = random_field(small, &mut rng);
        let (p, q) = holder_exps[k % holder_exps.len()];
        worst_h = worst_h.max(holder_lorentz_ratio(&f, &g, p, q)?);
        worst_i = worst_i.max(interpolation_ratio(&f, 3.0, 2.0, 2.0, 6.0)?);
    }
    rows.push(SelfTestRow::new("holder_max_ratio_200", worst_h, 1.0, |r| r <= 1.0 + 1e-12));
    rows.push(SelfTestRow::new("interpolation_max_ratio_200", worst_i, 1.0, |r| r <= 1.0 + 1e-12));

    // quasi-triangle constant, reported
    let pairs: Vec<_> = (0..20).map(|_| (random_field(small, &mut rng), random_field(small, &mut rng))).collect();
    for &(p, q) in &[(2.0, 1.0), (3.0, 6.0), (1.5, f64::INFINITY)] {
        let c = quasi_triangle_constant(&pairs, p, q)?;
        rows.push(SelfTestRow::new(format!("quasi_triangle_p{p}_q{q}"), c, 1.0, |r| r.is_finite()));
    }

    // Sobolev-Lorentz scale invariance over Gaussian widths
    let big = GridSpec::new(3, 96, 10.0)?;
    let ratios: Vec<f64> =
        SOBOLEV_WIDTHS.iter().map(|&w| sobolev_lorentz_ratio(&gaussian_profile(big, w), 2.0)).collect::<Result<_>>()?;
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    for (w, r) in SOBOLEV_WIDTHS.iter().zip(&ratios) {
        rows.push(SelfTestRow::new(format!("sobolev_width_{w}"), *r, mean, |x| (x - 1.0).abs() <= 0.02));
    }
    Ok(rows)
}

/// CSV with header `test,lhs,rhs,ratio,pass`.
pub fn selftest_csv(rows: &[SelfTestRow]) -> String {
    let mut out = String::from("test,lhs,rhs,ratio,pass\n");
    for r in rows {
        out.push_str(&format!("{},{:.17e},{:.17e},{:.17e},{}\n", r.test, r.lhs, r.rhs, r.ratio, r.pass));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::grid::make_grid;
    use proptest::prelude::*;

    #[test]
    fn indicator_distribution_and_rearrangement() {
        let g = make_grid(3, 8, 2.0).unwrap();
        let vals = (0..g.len()).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let f = ScalarField::new(g, vals).unwrap();
        let m = 171.0 * g.cell_volume();
        let d = distribution(&f);
        assert_eq!(d.eval(0.0), m);
        assert_eq!(d.eval(0.999), m);
        assert_eq!(d.eval(1.0), 0.0);
        let r = rearrangement(&f);
        assert_eq!(r.eval(0.0), 1.0);
        assert_eq!(r.eval(m * 0.999), 1.0);
        assert_eq!(r.eval(m), 0.0);
    }

    #[test]
    fn dilation_identity() {
        let g = make_grid(3, 8, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_field(g, &mut rng);
        let (d1, d2) = (distribution(&f), distribution(&f.scale(2.0)));
        for k in 0..200 {
            let s = k as f64 * 0.05;
            assert_eq!(d2.eval(s), d1.eval(s / 2.0));
        }
    }

    #[test]
    fn distribution_matches_counting() {
        let g = make_grid(3, 16, 3.0).unwrap();
        let f = gaussian_profile(g, 1.0);
        let d = distribution(&f);
        for k in 0..50 {
            let s = k as f64 / 50.0;
            let count = f.values().iter().filter(|x| x.abs() > s).count();
            assert_eq!(d.eval(s), count as f64 * g.cell_volume());
        }
    }

    /// `f*(t) = exp(-(t/omega)^{2/3})` for `e^{-|v|^2}` in three dimensions.
    #[test]
    fn gaussian_rearrangement_closed_form() {
        let g = make_grid(3, 96, 4.0).unwrap();
        let f = ScalarField::from_fn(g, |v| (-v.iter().map(|x| x * x).sum::<f64>()).exp()).unwrap();
        let r = rearrangement(&f);
        let omega = 4.0 * std::f64::consts::PI / 3.0;
        for t in [0.05, 0.2, 0.5, 1.0, 2.0, 4.0] {
            let want = (-(t / omega).powf(2.0 / 3.0)).exp();
            assert!((r.eval(t) - want).abs() < 1e-2, "{t} {} {want}", r.eval(t));
        }
    }

    #[test]
    fn lp_via_rearrangement() {
        let g = make_grid(3, 8, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let f = random_field(g, &mut rng);
            let r = rearrangement(&f);
            for p in [1.0, 2.0, 3.0] {
                let a = r.integral_power(p).powf(1.0 / p);
                let b = lp_norm(&f, p);
                assert!((a - b).abs() <= 1e-12 * b);
            }
        }
    }

    #[test]
    fn step_function_validation() {
        assert!(StepFunction::new(vec![0.0, 1.0], vec![2.0]).is_ok());
        assert!(StepFunction::new(vec![0.0, 1.0, 0.5], vec![2.0, 1.0]).is_err());
        assert!(StepFunction::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0]).is_err());
        assert!(StepFunction::new(vec![0.5, 1.0], vec![1.0]).is_err());
        assert!(LorentzParams::new(0.5, 1.0).is_err());
        let z = ScalarField::zeros(make_grid(3, 8, 1.0).unwrap());
        assert_eq!(lorentz_norm(&z, 2.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn infinite_exponents() {
        let g = make_grid(3, 8, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(g, &mut rng);
        assert_eq!(lorentz_norm(&f, f64::INFINITY, f64::INFINITY).unwrap(), lp_norm(&f, f64::INFINITY));
        assert_eq!(lorentz_norm(&f, f64::INFINITY, 2.0).unwrap(), f64::INFINITY);
        let fs = rearrangement(&f);
        // weak norm dominates every sampled t^{1/p} f*(t)
        let weak = lorentz_norm(&f, 2.0, f64::INFINITY).unwrap();
        for k in 1..100 {
            let t = k as f64 * 0.01 * fs.breaks().last().unwrap();
            assert!(t.sqrt() * fs.eval(t) <= weak * (1.0 + 1e-12));
        }
    }

    #[test]
    fn holder_with_sign_pattern() {
        let g = make_grid(3, 8, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = ScalarField::new(g, vals.clone()).unwrap();
        let s = ScalarField::new(g, vals.iter().map(|x| x.signum()).collect()).unwrap();
        let r = holder_lorentz_ratio(&f, &s, 2.0, 2.0).unwrap();
        assert!(r <= 1.0 + 1e-12);
        // Cauchy-Schwarz with g = f is an equality
        let r = holder_lorentz_ratio(&f, &f, 2.0, 2.0).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_exponents() {
        let th = interpolation_theta(3.0, 2.0, 6.0);
        assert!((th - 0.5).abs() < 1e-15);
        assert!(interpolation_ratio(&ScalarField::zeros(make_grid(3, 8, 1.0).unwrap()), 3.0, 2.0, 6.0, 2.0).is_err());
    }

    #[test]
    fn riesz_matches_direct_sum() {
        let g = make_grid(3, 8, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_field(g, &mut rng);
        let alpha = 2.0;
        let pot = riesz_potential(&f, alpha).unwrap();
        let origin = riesz_origin_value(&g, alpha);
        for i in 0..g.len() {
            let vi = g.node(i);
            let mut acc = 0.0;
            for j in 0..g.len() {
                let vj = g.node(j);
                let r = ((vi[0] - vj[0]).powi(2) + (vi[1] - vj[1]).powi(2) + (vi[2] - vj[2]).powi(2)).sqrt();
                acc += f.values()[j] * if i == j { origin } else { r.powf(alpha - 3.0) };
            }
            acc *= g.cell_volume();
            assert!((pot.values()[i] - acc).abs() <= 1e-12 * acc.abs().max(1e-300), "{i}");
        }
    }

    #[test]
    fn riesz_of_point_mass() {
        let g = make_grid(3, 8, 2.0).unwrap();
        let mut vals = vec![0.0; g.len()];
        let centre = g.flat_index([4, 4, 4]);
        vals[centre] = 3.0;
        let pot = riesz_potential(&ScalarField::new(g, vals).unwrap(), 1.5).unwrap();
        let c = g.node(centre);
        for i in 0..g.len() {
            if i == centre {
                continue;
            }
            let v = g.node(i);
            let r = ((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2) + (v[2] - c[2]).powi(2)).sqrt();
            let want = 3.0 * g.cell_volume() * r.powf(-1.5);
            assert!((pot.values()[i] - want).abs() < 1e-12 * want);
        }
        assert!(riesz_potential(&pot, 3.0).is_err());
    }

    #[test]
    fn weak_type_constant_is_finite() {
        let g = make_grid(3, 16, 4.0).unwrap();
        let fam: Vec<_> = [0.3, 0.6, 1.0].iter().map(|&w| gaussian_profile(g, w)).collect();
        let c = weak_type_constant(&fam, -1.0).unwrap();
        assert!(c.is_finite() && c > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn formulas_agree_and_scale(seed in 0u64..10_000, p in 1.0f64..6.0, q in 1.0f64..6.0, c in 0.1f64..10.0) {
            let g = make_grid(3, 8, 2.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(g, &mut rng);
            let lp = LorentzParams::new(p, q).unwrap();
            let a = lorentz_from_rearrangement(&rearrangement(&f), lp);
            let b = lorentz_from_distribution(&distribution(&f), lp);
            prop_assert!((a - b).abs() <= 1e-10 * a);
            let scaled = lorentz_norm(&f.scale(c), p, q).unwrap();
            prop_assert!((scaled - c * a).abs() <= 1e-12 * c * a);
            prop_assert_eq!(rearrangement(&f).distribution(), distribution(&f));
        }
    }
}
