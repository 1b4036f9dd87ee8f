//! Nonlocal Landau coefficients by FFT convolution with the singular
//! kernels, plus the coercivity estimate `K0`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fft::{packed_product, PaddedFft};
use crate::grid::{flux_gradient, same_grid, sym_index, GridSpec, MatrixField, ScalarField, VectorField};

/// Which of the two weights `c_lambda` uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Lambda {
    Gamma,
    GammaPlusOne,
}

/// One scalar kernel of the coefficient family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelComponent {
    /// `a_ij(z) = |z|^{g+2}(delta_ij - z_i z_j/|z|^2)`
    A(usize, usize),
    /// `b_i(z) = -(d-1) z_i |z|^g`
    B(usize),
    /// `c_l(z) = -(d-1)(l+d)|z|^l`
    C(Lambda),
    /// `|z|^{g+2}`, whose convolution times `d-1` is the trace of `A`.
    Trace,
}

/// Radius of the ball with the volume of one cell.
pub fn equal_volume_radius(spec: &GridSpec) -> f64 {
    let h = spec.spacing();
    match spec.dim() {
        2 => h / PI.sqrt(),
        _ => h * (3.0 / (4.0 * PI)).cbrt(),
    }
}

/// Kernel value at the difference vector `z` (first `d` entries used); the
/// origin returns the regularised cell value.
pub fn kernel_value(comp: KernelComponent, z: &[f64], d: usize, gamma: f64, rho: f64) -> f64 {
    let r2: f64 = z[..d].iter().map(|x| x * x).sum();
    let dm1 = (d - 1) as f64;
    let df = d as f64;
    if r2 == 0.0 {
        return match comp {
            KernelComponent::A(i, j) => {
                if i == j {
                    dm1 / df * rho.powf(gamma + 2.0)
                } else {
                    0.0
                }
            }
            KernelComponent::B(_) => 0.0,
            KernelComponent::C(l) => {
                let lam = lambda_value(l, gamma);
                -dm1 * (lam + df) * (df / (df + lam)) * rho.powf(lam)
            }
            KernelComponent::Trace => rho.powf(gamma + 2.0),
        };
    }
    let r = r2.sqrt();
    match comp {
        KernelComponent::A(i, j) => {
            let delta = if i == j { 1.0 } else { 0.0 };
            r.powf(gamma + 2.0) * (delta - z[i] * z[j] / r2)
        }
        KernelComponent::B(i) => -dm1 * z[i] * r.powf(gamma),
        KernelComponent::C(l) => {
            let lam = lambda_value(l, gamma);
            -dm1 * (lam + df) * r.powf(lam)
        }
        KernelComponent::Trace => r.powf(gamma + 2.0),
    }
}

pub fn lambda_value(l: Lambda, gamma: f64) -> f64 {
    match l {
        Lambda::Gamma => gamma,
        Lambda::GammaPlusOne => gamma + 1.0,
    }
}

/// Spectra of the kernel components for one `(grid, gamma)`, built lazily.
pub struct KernelSet {
    spec: GridSpec,
    gamma: f64,
    fft: PaddedFft,
    spectra: Mutex<HashMap<KernelComponent, Arc<Vec<Complex64>>>>,
}

impl std::fmt::Debug for KernelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelSet").field("spec", &self.spec).field("gamma", &self.gamma).finish()
    }
}

type CacheKey = (usize, usize, u64, u64);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<KernelSet>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<KernelSet>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Drops every cached kernel table.
pub fn clear_kernel_cache() {
    cache().lock().expect("kernel cache poisoned").clear();
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if (-2.0..0.0).contains(&gamma) {
        Ok(())
    } else {
        Err(invalid("gamma", format!("{gamma} outside [-2, 0)")))
    }
}

/// Kernel set for `(spec, gamma)`, shared through a process-wide cache.
pub fn build_kernels(spec: &GridSpec, gamma: f64) -> Result<Arc<KernelSet>> {
    check_gamma(gamma)?;
    if gamma + spec.dim() as f64 <= 0.0 {
        return Err(invalid("gamma", format!("lambda + d = {} must be positive", gamma + spec.dim() as f64)));
    }
    let key = (spec.dim(), spec.n(), spec.half_width().to_bits(), gamma.to_bits());
    let mut map = cache().lock().expect("kernel cache poisoned");
    let set = map.entry(key).or_insert_with(|| {
        Arc::new(KernelSet { spec: *spec, gamma, fft: PaddedFft::new(spec), spectra: Mutex::new(HashMap::new()) })
    });
    Ok(Arc::clone(set))
}

impl KernelSet {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn validate(&self, comp: KernelComponent) -> Result<()> {
        let d = self.spec.dim();
        match comp {
            KernelComponent::A(i, j) if i >= d || j >= d => Err(invalid("component", format!("A({i},{j})"))),
            KernelComponent::B(i) if i >= d => Err(invalid("component", format!("B({i})"))),
            _ => Ok(()),
        }
    }

    fn spectrum(&self, comp: KernelComponent) -> Result<Arc<Vec<Complex64>>> {
        self.validate(comp)?;
        if let Some(s) = self.spectra.lock().expect("spectra poisoned").get(&comp) {
            return Ok(Arc::clone(s));
        }
        let (d, gamma, rho, h) = (self.spec.dim(), self.gamma, equal_volume_radius(&self.spec), self.spec.spacing());
        let table = Arc::new(kernel_spectrum(&self.fft, |z| kernel_value(comp, z, d, gamma, rho), h));
        self.spectra.lock().expect("spectra poisoned").insert(comp, Arc::clone(&table));
        Ok(table)
    }
}

/// FFT of a kernel sampled on the padded difference grid.
pub(crate) fn kernel_spectrum(fft: &PaddedFft, k: impl Fn(&[f64]) -> f64, h: f64) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = (0..fft.padded_len())
        .map(|idx| {
            if fft.in_difference_range(idx) {
                let o = fft.signed_offsets(idx);
                let z = [o[0] as f64 * h, o[1] as f64 * h, o[2] as f64 * h];
                Complex64::new(k(&z), 0.0)
            } else {
                Complex64::default()
            }
        })
        .collect();
    fft.forward_full(&mut buf);
    buf
}

/// Linear convolution `h^d sum_j K(v_i - v_j) f_j` for every listed kernel,
/// sharing one forward transform of `f`.
fn convolve_many(kernels: &KernelSet, comps: &[KernelComponent], f: &ScalarField) -> Result<Vec<Vec<f64>>> {
    same_grid(kernels.spec(), f.spec())?;
    let fhat = kernels.fft.forward_cells(f.values());
    let vol = kernels.spec.cell_volume();
    let mut out = Vec::with_capacity(comps.len());
    for pair in comps.chunks(2) {
        let k1 = kernels.spectrum(pair[0])?;
        let k2 = pair.get(1).map(|&c| kernels.spectrum(c)).transpose()?;
        let prod = packed_product(&fhat, &k1, k2.as_deref().map(|v| v.as_slice()));
        let (re, im) = kernels.fft.inverse_cells(prod, vol);
        out.push(re);
        if pair.len() == 2 {
            out.push(im);
        }
    }
    Ok(out)
}

pub fn convolve(kernels: &KernelSet, comp: KernelComponent, f: &ScalarField) -> Result<ScalarField> {
    let mut v = convolve_many(kernels, &[comp], f)?;
    Ok(ScalarField::from_vec(*f.spec(), v.pop().expect("one output")))
}

/// Convolution with an arbitrary kernel function (not cached).
pub fn convolve_with(k: impl Fn(&[f64]) -> f64, f: &ScalarField) -> ScalarField {
    let spec = *f.spec();
    let fft = PaddedFft::new(&spec);
    let khat = kernel_spectrum(&fft, k, spec.spacing());
    let fhat = fft.forward_cells(f.values());
    let (re, _) = fft.inverse_cells(packed_product(&fhat, &khat, None), spec.cell_volume());
    ScalarField::from_vec(spec, re)
}

/// `A[f]`, `b[f]`, `c_gamma[f]`, `c_{gamma+1}[f]` on one snapshot.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub a: MatrixField,
    pub b: VectorField,
    pub c_gamma: ScalarField,
    pub c_gamma_plus_1: ScalarField,
}

/// How the flux of the time stepper is discretised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FluxForm {
    /// Cell-centred flux `f (A D log f - A * (f D log f))`, antisymmetric in
    /// every pair of cells: momentum and energy are conserved up to boundary
    /// cells, the entropy is nonincreasing and Maxwellians are stationary.
    #[default]
    Entropic,
    /// Face flux `A grad f - b f` with arithmetic face averages and the
    /// analytic `b` kernel.
    Face,
}

/// The part of the coefficients the time stepper needs. With
/// [`FluxForm::Entropic`], `b` holds `A * (f D log f)` instead of `b[f]`.
#[derive(Clone, Debug)]
pub struct Transport {
    pub a: MatrixField,
    pub b: VectorField,
    pub form: FluxForm,
}

fn matrix_components(d: usize) -> Vec<KernelComponent> {
    let mut comps = Vec::new();
    for i in 0..d {
        for j in i..d {
            comps.push(KernelComponent::A(i, j));
        }
    }
    comps
}

fn transport_components(d: usize) -> Vec<KernelComponent> {
    let mut comps = matrix_components(d);
    comps.extend((0..d).map(KernelComponent::B));
    comps
}

fn split_transport(spec: GridSpec, mut out: Vec<Vec<f64>>, form: FluxForm) -> Transport {
    let d = spec.dim();
    let m = d * (d + 1) / 2;
    let b = out.split_off(m);
    // packed order above equals sym_index order
    debug_assert_eq!(sym_index(d, 0, 1), 1);
    Transport { a: MatrixField::from_vecs(spec, out), b: VectorField::from_vecs(spec, b), form }
}

/// `A[f]` and the analytic `b[f]` (face form).
pub fn compute_transport(f: &ScalarField, kernels: &KernelSet) -> Result<Transport> {
    compute_transport_for(f, kernels, FluxForm::Face)
}

/// Transport fields for the chosen flux form. For the entropic form `b` is
/// `sum_j A_ij * (f D_j log f)`, where `D` is [`flux_gradient`]; cells with
/// `f <= 0` contribute nothing.
pub fn compute_transport_for(f: &ScalarField, kernels: &KernelSet, form: FluxForm) -> Result<Transport> {
    let spec = *f.spec();
    let d = spec.dim();
    match form {
        FluxForm::Face => {
            let out = convolve_many(kernels, &transport_components(d), f)?;
            Ok(split_transport(spec, out, form))
        }
        FluxForm::Entropic => {
            same_grid(kernels.spec(), &spec)?;
            let g = log_flux_density(f);
            let fft = &kernels.fft;
            let zeros;
            let (fhat, g0) = fft.forward_cells_pair(f.values(), &g[0]);
            let mut ghat = vec![g0];
            if d == 3 {
                let (g1, g2) = fft.forward_cells_pair(&g[1], &g[2]);
                ghat.push(g1);
                ghat.push(g2);
            } else {
                zeros = vec![0.0; spec.len()];
                ghat.push(fft.forward_cells_pair(&g[1], &zeros).0);
            }
            let mats = matrix_components(d);
            let spectra: Vec<Arc<Vec<Complex64>>> = mats.iter().map(|&c| kernels.spectrum(c)).collect::<Result<_>>()?;
            // each output is a sum of (input spectrum, kernel spectrum) terms:
            // the packed A entries, then the d drift components
            let mut terms: Vec<Vec<(&[Complex64], &[Complex64])>> =
                spectra.iter().map(|k| vec![(fhat.as_slice(), k.as_slice())]).collect();
            for i in 0..d {
                terms.push((0..d).map(|j| (ghat[j].as_slice(), spectra[sym_index(d, i, j)].as_slice())).collect());
            }
            let vol = spec.cell_volume();
            let pairs: Vec<&[Vec<(&[Complex64], &[Complex64])>]> = terms.chunks(2).collect();
            let mut bufs = vec![vec![Complex64::default(); fhat.len()]; pairs.len()];
            // blocked so the inputs stay in cache across the output passes
            const BLOCK: usize = 2048;
            for start in (0..fhat.len()).step_by(BLOCK) {
                let end = (start + BLOCK).min(fhat.len());
                for (pair, buf) in pairs.iter().zip(bufs.iter_mut()) {
                    let buf = &mut buf[start..end];
                    for &(x, k) in &pair[0] {
                        for ((o, x), k) in buf.iter_mut().zip(&x[start..end]).zip(&k[start..end]) {
                            *o += x * k;
                        }
                    }
                    if let Some(list) = pair.get(1) {
                        // second output rides on the imaginary axis
                        for &(x, k) in list {
                            for ((o, x), k) in buf.iter_mut().zip(&x[start..end]).zip(&k[start..end]) {
                                let p = x * k;
                                o.re -= p.im;
                                o.im += p.re;
                            }
                        }
                    }
                }
            }
            let mut out = Vec::with_capacity(terms.len());
            for (pair, buf) in pairs.iter().zip(bufs) {
                let (re, im) = fft.inverse_cells(buf, vol);
                out.push(re);
                if pair.len() == 2 {
                    out.push(im);
                }
            }
            Ok(split_transport(spec, out, form))
        }
    }
}

/// `f D log f` per axis, zero where `f <= 0` or a neighbour used by `D` is.
fn log_flux_density(f: &ScalarField) -> Vec<Vec<f64>> {
    let spec = *f.spec();
    let logs: Vec<f64> = f.values().iter().map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY }).collect();
    (0..spec.dim())
        .map(|a| {
            let mut out = vec![0.0; spec.len()];
            flux_gradient(&spec, &logs, a, &mut out);
            for (o, &x) in out.iter_mut().zip(f.values()) {
                *o = if x > 0.0 && o.is_finite() { x * *o } else { 0.0 };
            }
            out
        })
        .collect()
}

pub fn compute_coefficients(f: &ScalarField, kernels: &KernelSet) -> Result<CoefficientSet> {
    let mut comps = transport_components(f.spec().dim());
    comps.push(KernelComponent::C(Lambda::Gamma));
    comps.push(KernelComponent::C(Lambda::GammaPlusOne));
    let mut out = convolve_many(kernels, &comps, f)?;
    let c1 = out.pop().expect("c_{gamma+1}");
    let c0 = out.pop().expect("c_gamma");
    let t = split_transport(*f.spec(), out, FluxForm::Face);
    Ok(CoefficientSet {
        a: t.a,
        b: t.b,
        c_gamma: ScalarField::from_vec(*f.spec(), c0),
        c_gamma_plus_1: ScalarField::from_vec(*f.spec(), c1),
    })
}

/// `c_lambda[f]` alone.
pub fn compute_c(f: &ScalarField, kernels: &KernelSet, lambda: Lambda) -> Result<ScalarField> {
    convolve(kernels, KernelComponent::C(lambda), f)
}

/// Eigenvalues of a symmetric matrix in ascending order (closed form, d <= 3).
pub fn sym_eigenvalues(m: &[[f64; 3]; 3], d: usize) -> [f64; 3] {
    if d == 2 {
        let tr = m[0][0] + m[1][1];
        let diff = 0.5 * (m[0][0] - m[1][1]);
        let r = (diff * diff + m[0][1] * m[0][1]).sqrt();
        return [0.5 * tr - r, 0.5 * tr + r, 0.0];
    }
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        let mut e = [m[0][0], m[1][1], m[2][2]];
        e.sort_by(f64::total_cmp);
        return e;
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut bm = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            bm[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det = bm[0][0] * (bm[1][1] * bm[2][2] - bm[1][2] * bm[2][1])
        - bm[0][1] * (bm[1][0] * bm[2][2] - bm[1][2] * bm[2][0])
        + bm[0][2] * (bm[1][0] * bm[2][1] - bm[1][1] * bm[2][0]);
    let r = (0.5 * det).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    [e3, e2, e1]
}

/// Largest eigenvalue of `A` over all cells.
pub fn max_eigenvalue(a: &MatrixField) -> f64 {
    let d = a.spec().dim();
    (0..a.spec().len()).map(|i| sym_eigenvalues(&a.at(i), d)[d - 1]).fold(0.0, f64::max)
}

/// `min_v lambda_min(A[f](v)) / <v>^gamma`, or 0 when some cell is not
/// positive semidefinite beyond round-off.
///
/// The minimiser of a smooth ratio often sits between nodes (for symmetric
/// data, at the origin, which a cell-centred grid never samples), so the
/// discrete minimum is lowered by the vertex of a parabola through the
/// minimising cell and its neighbours along each axis. The result never
/// exceeds the discrete minimum.
pub fn estimate_k0(a: &MatrixField, gamma: f64) -> f64 {
    let spec = a.spec();
    let d = spec.dim();
    let mut scale = 0.0f64;
    let mut most_negative = 0.0f64;
    let ratio: Vec<f64> = (0..spec.len())
        .map(|i| {
            let e = sym_eigenvalues(&a.at(i), d);
            scale = scale.max(e[d - 1].abs());
            most_negative = most_negative.min(e[0]);
            e[0] / (1.0 + spec.speed_sq(i)).powf(0.5 * gamma)
        })
        .collect();
    let (arg, worst) = ratio.iter().enumerate().fold((0, f64::INFINITY), |m, (i, &r)| if r < m.1 { (i, r) } else { m });
    if most_negative < -1e-12 * scale || !(worst > 0.0) {
        return 0.0;
    }
    let k = spec.multi_index(arg);
    let mut drop = 0.0;
    for axis in 0..d {
        if k[axis] == 0 || k[axis] + 1 == spec.n() {
            continue;
        }
        let s = spec.stride(axis);
        let (lo, hi) = (ratio[arg - s], ratio[arg + s]);
        let curv = lo - 2.0 * worst + hi;
        // vertex within one cell of the node
        if curv > 0.0 && (hi - lo).abs() <= 2.0 * curv {
            drop += (hi - lo).powi(2) / (8.0 * curv);
        }
    }
    (worst - drop).max(0.0)
}

#[allow(non_snake_case)]
pub fn estimate_K0(coeffs: &CoefficientSet, spec: &GridSpec, gamma: f64) -> Result<f64> {
    same_grid(coeffs.a.spec(), spec)?;
    Ok(estimate_k0(&coeffs.a, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, make_grid, maxwellian};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct(comp: KernelComponent, f: &ScalarField, gamma: f64) -> Vec<f64> {
        let spec = f.spec();
        let d = spec.dim();
        let rho = equal_volume_radius(spec);
        let mut out = vec![0.0; spec.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let vi = spec.node(i);
            let mut acc = 0.0;
            for j in 0..spec.len() {
                let vj = spec.node(j);
                let z = [vi[0] - vj[0], vi[1] - vj[1], vi[2] - vj[2]];
                acc += kernel_value(comp, &z, d, gamma, rho) * f.values()[j];
            }
            *o = acc * spec.cell_volume();
        }
        out
    }

    #[test]
    fn kernel_pointwise_values() {
        let z = [2.0, 0.0, 0.0];
        let tr: f64 = (0..3).map(|i| kernel_value(KernelComponent::A(i, i), &z, 3, -1.0, 0.1)).sum();
        assert!((tr - 4.0).abs() < 1e-14);
        let c = kernel_value(KernelComponent::C(Lambda::Gamma), &z, 3, -2.0, 0.1);
        assert!((c + 0.5).abs() < 1e-15);
        assert_eq!(kernel_value(KernelComponent::B(1), &[0.0; 3], 3, -1.0, 0.1), 0.0);
    }

    #[test]
    fn rejects_bad_gamma() {
        let g = make_grid(3, 8, 1.0).unwrap();
        assert!(build_kernels(&g, 0.0).is_err());
        assert!(build_kernels(&g, -2.5).is_err());
        assert!(build_kernels(&make_grid(2, 8, 1.0).unwrap(), -2.0).is_err());
    }

    #[test]
    fn fft_matches_direct_sum_2d_and_3d() {
        for d in [2usize, 3] {
            let g = make_grid(d, 8, 1.5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            let f = ScalarField::new(g, (0..g.len()).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let k = build_kernels(&g, -1.0).unwrap();
            for comp in [KernelComponent::A(0, 1), KernelComponent::B(0), KernelComponent::C(Lambda::Gamma)] {
                let fast = convolve(&k, comp, &f).unwrap();
                let slow = direct(comp, &f, -1.0);
                let scale = slow.iter().map(|x| x.abs()).fold(0.0, f64::max);
                for (a, b) in fast.values().iter().zip(&slow) {
                    assert!((a - b).abs() <= 1e-12 * scale, "{d} {comp:?}");
                }
            }
        }
    }

    #[test]
    fn point_mass_reproduces_kernel() {
        let g = make_grid(3, 16, 2.0).unwrap();
        let j = g.flat_index([5, 9, 7]);
        let m = 0.7;
        let mut v = vec![0.0; g.len()];
        v[j] = m / g.cell_volume();
        let f = ScalarField::new(g, v).unwrap();
        let k = build_kernels(&g, -1.5).unwrap();
        let out = convolve(&k, KernelComponent::C(Lambda::GammaPlusOne), &f).unwrap();
        let v0 = g.node(j);
        for i in (0..g.len()).step_by(37) {
            if i == j {
                continue;
            }
            let vi = g.node(i);
            let z = [vi[0] - v0[0], vi[1] - v0[1], vi[2] - v0[2]];
            let want = m * kernel_value(KernelComponent::C(Lambda::GammaPlusOne), &z, 3, -1.5, 0.0);
            assert!((out.values()[i] - want).abs() < 1e-12 * want.abs().max(1.0));
        }
    }

    /// `int |v-w|^{-1} M(w) dw = erf(r/sqrt2)/r` for the standard Maxwellian.
    fn radial_oracle(r: f64) -> f64 {
        if r == 0.0 {
            return (2.0 / PI).sqrt();
        }
        // Simpson on the radial reduction 4 pi int_0^inf w^2 M(w) min(1/r, 1/w) dw
        let mut acc = 0.0;
        let (a, b, m) = (0.0, 12.0, 24000);
        let hh = (b - a) / m as f64;
        for k in 0..=m {
            let w: f64 = a + k as f64 * hh;
            let wt = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            let mw = (2.0 * PI).powf(-1.5) * (-0.5 * w * w).exp();
            let inv = if w < r { 1.0 / r } else { 1.0 / w };
            acc += wt * 4.0 * PI * w * w * mw * inv;
        }
        acc * hh / 3.0
    }

    #[test]
    fn maxwellian_c_gamma_matches_radial_oracle() {
        let mut errs = Vec::new();
        for (n, l) in [(40usize, 6.0), (80, 6.0)] {
        let g = make_grid(3, n, l).unwrap();
        let f = maxwellian(g);
        let k = build_kernels(&g, -1.0).unwrap();
        let c = compute_c(&f, &k, Lambda::Gamma).unwrap();
        let mut worst = 0.0f64;
        for i in 0..g.len() {
            let r = g.speed_sq(i).sqrt();
            if r > 4.0 {
                continue;
            }
            let want = -2.0 * 2.0 * radial_oracle(r);
            worst = worst.max((c.values()[i] - want).abs() / want.abs());
        }
        errs.push(worst);
        }
        assert!(errs[1] < 1e-3, "{errs:?}");
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.8, "{order}");
    }

    #[test]
    fn zero_and_trace_identity() {
        let g = make_grid(3, 8, 2.0).unwrap();
        let k = build_kernels(&g, -0.5).unwrap();
        let z = compute_coefficients(&ScalarField::zeros(g), &k).unwrap();
        assert!(z.a.packed().iter().chain(z.b.components()).all(|c| c.iter().all(|&x| x == 0.0)));
        assert_eq!(estimate_K0(&z, &g, -0.5).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = ScalarField::new(g, (0..g.len()).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let c = compute_coefficients(&f, &k).unwrap();
        let t = convolve(&k, KernelComponent::Trace, &f).unwrap();
        for i in 0..g.len() {
            let tr = c.a.entry(0, 0)[i] + c.a.entry(1, 1)[i] + c.a.entry(2, 2)[i];
            assert!((tr - 2.0 * t.values()[i]).abs() < 1e-12 * tr.abs());
        }
        assert!(c.c_gamma.values().iter().all(|&x| x <= 0.0));
    }

    #[test]
    fn eigenvalues_match_characteristic_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in i..3 {
                    m[i][j] = rng.gen_range(-2.0..2.0);
                    m[j][i] = m[i][j];
                }
            }
            let e = sym_eigenvalues(&m, 3);
            assert!(e[0] <= e[1] && e[1] <= e[2]);
            for &l in &e {
                let a = [[m[0][0] - l, m[0][1], m[0][2]], [m[1][0], m[1][1] - l, m[1][2]], [m[2][0], m[2][1], m[2][2] - l]];
                let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
                assert!(det.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn k0_refines_between_nodes() {
        // A = (1 + |v - c|^2) I with gamma = 0: nodes miss the minimiser c,
        // a separable quadratic, so the parabola vertex recovers 1 exactly
        let g = make_grid(3, 8, 2.0).unwrap();
        let c = [0.1, -0.2, 0.05];
        let diag: Vec<f64> = (0..g.len())
            .map(|i| {
                let v = g.node(i);
                1.0 + (0..3).map(|k| (v[k] - c[k]).powi(2)).sum::<f64>()
            })
            .collect();
        let zero = vec![0.0; g.len()];
        let comps = (0..6).map(|k| if [0, 3, 5].contains(&k) { diag.clone() } else { zero.clone() }).collect();
        let a = MatrixField::new(g, comps).unwrap();
        let discrete = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let k0 = estimate_k0(&a, 0.0);
        assert!(discrete > 1.01);
        assert!((k0 - 1.0).abs() < 1e-12, "{k0}");
    }

    #[test]
    fn k0_bounds_quadratic_form_and_scales() {
        let g = make_grid(3, 16, 6.0).unwrap();
        let f = maxwellian(g);
        assert!((integrate(&f, 0.0) - 1.0).abs() < 1e-6);
        let k = build_kernels(&g, -1.0).unwrap();
        let c = compute_coefficients(&f, &k).unwrap();
        let k0 = estimate_K0(&c, &g, -1.0).unwrap();
        assert!(k0 > 0.0);
        let c2 = compute_coefficients(&f.scale(2.0), &k).unwrap();
        let k02 = estimate_K0(&c2, &g, -1.0).unwrap();
        assert!((k02 - 2.0 * k0).abs() < 1e-12 * k0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let i = rng.gen_range(0..g.len());
            let xi: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let a = c.a.at(i);
            let q: f64 = (0..3).flat_map(|p| (0..3).map(move |r| (p, r))).map(|(p, r)| a[p][r] * xi[p] * xi[r]).sum();
            let w = (1.0 + g.speed_sq(i)).powf(-0.5);
            let x2: f64 = xi.iter().map(|x| x * x).sum();
            assert!(q >= k0 * w * x2 * (1.0 - 1e-12));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn a_kernel_is_psd_and_annihilates_z(x in -3.0f64..3.0, y in -3.0f64..3.0, w in -3.0f64..3.0, gamma in -2.0f64..-0.01) {
            let z = [x, y, w];
            prop_assume!(x * x + y * y + w * w > 1e-6);
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 { for j in 0..3 { m[i][j] = kernel_value(KernelComponent::A(i, j), &z, 3, gamma, 0.1); } }
            let e = sym_eigenvalues(&m, 3);
            let scale = e[2].abs().max(1e-300);
            prop_assert!(e[0] >= -1e-12 * scale);
            for i in 0..3 {
                let az: f64 = (0..3).map(|j| m[i][j] * z[j]).sum();
                prop_assert!(az.abs() <= 1e-12 * scale * 3.0 * 3.0);
            }
            let bm = kernel_value(KernelComponent::B(0), &[-x, -y, -w], 3, gamma, 0.1);
            let bp = kernel_value(KernelComponent::B(0), &z, 3, gamma, 0.1);
            prop_assert!((bm + bp).abs() <= 1e-14 * bp.abs().max(1.0));
        }
    }
}
