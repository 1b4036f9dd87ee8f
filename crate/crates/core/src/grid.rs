//! Uniform cell-centred velocity grid, midpoint quadrature and centred
//! finite differences with zero extension outside the box.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LandauError, Result};

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

/// Cube `[-L, L]^d` split into `n` cells per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    d: usize,
    n: usize,
    half_width: f64,
}

pub fn make_grid(d: usize, n: usize, half_width: f64) -> Result<GridSpec> {
    GridSpec::new(d, n, half_width)
}

impl GridSpec {
    pub fn new(d: usize, n: usize, half_width: f64) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(LandauError::InvalidGrid(format!("dimension {d} not in {{2, 3}}")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(LandauError::InvalidGrid(format!("n = {n} must be even and at least 8")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(LandauError::InvalidGrid(format!("half width {half_width} must be positive")));
        }
        Ok(Self { d, n, half_width })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell-centre coordinate along one axis.
    #[inline]
    pub fn coord(&self, k: usize) -> f64 {
        -self.half_width + (k as f64 + 0.5) * self.spacing()
    }

    /// Flat-index stride of `axis` (axis 0 varies slowest).
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.d - 1 - axis) as u32)
    }

    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        match self.d {
            2 => [idx / n, idx % n, 0],
            _ => [idx / (n * n), (idx / n) % n, idx % n],
        }
    }

    #[inline]
    pub fn flat_index(&self, k: [usize; 3]) -> usize {
        match self.d {
            2 => k[0] * self.n + k[1],
            _ => (k[0] * self.n + k[1]) * self.n + k[2],
        }
    }

    /// Velocity at a cell centre; unused trailing components are zero.
    #[inline]
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let k = self.multi_index(idx);
        let mut v = [0.0; 3];
        for a in 0..self.d {
            v[a] = self.coord(k[a]);
        }
        v
    }

    #[inline]
    pub fn speed_sq(&self, idx: usize) -> f64 {
        let v = self.node(idx);
        v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
    }

    /// `<v>^s` sampled on every cell.
    pub fn bracket_power(&self, s: f64) -> Vec<f64> {
        (0..self.len())
            .map(|i| if s == 0.0 { 1.0 } else { (1.0 + self.speed_sq(i)).powf(0.5 * s) })
            .collect()
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(LandauError::NonFinite { index }),
        None => Ok(()),
    }
}

/// A real value per cell, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(LandauError::SizeMismatch { expected: spec.len(), got: values.len() });
        }
        check_finite(&values)?;
        Ok(Self { spec, values })
    }

    pub(crate) fn from_vec(spec: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        Self { spec, values }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, values: vec![0.0; spec.len()] }
    }

    /// Samples `f(v)` at cell centres.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = spec.dim();
        let values = (0..spec.len()).map(|i| f(&spec.node(i)[..d])).collect();
        Self::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Pointwise map; the result is re-checked for finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.spec, self.values.iter().map(|&x| f(x)).collect())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_vec(self.spec, self.values.iter().map(|x| c * x).collect())
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        same_grid(&self.spec, &other.spec)?;
        Ok(Self::from_vec(
            self.spec,
            self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub(crate) fn same_grid(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(LandauError::SizeMismatch { expected: a.len(), got: b.len() })
    }
}

/// `d` components per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    spec: GridSpec,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(spec: GridSpec, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != spec.dim() {
            return Err(LandauError::SizeMismatch { expected: spec.dim(), got: comps.len() });
        }
        for c in &comps {
            if c.len() != spec.len() {
                return Err(LandauError::SizeMismatch { expected: spec.len(), got: c.len() });
            }
            check_finite(c)?;
        }
        Ok(Self { spec, comps })
    }

    pub(crate) fn from_vecs(spec: GridSpec, comps: Vec<Vec<f64>>) -> Self {
        Self { spec, comps }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.comps[i]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    /// `|G|^2` per cell.
    pub fn norm_sq(&self) -> ScalarField {
        let mut out = vec![0.0; self.spec.len()];
        for c in &self.comps {
            for (o, x) in out.iter_mut().zip(c) {
                *o += x * x;
            }
        }
        ScalarField::from_vec(self.spec, out)
    }
}

/// Index of the `(i, j)` entry in packed upper-triangular storage.
#[inline]
pub fn sym_index(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    match (d, i, j) {
        (2, 0, 0) => 0,
        (2, 0, 1) => 1,
        (2, 1, 1) => 2,
        (_, 0, 0) => 0,
        (_, 0, 1) => 1,
        (_, 0, 2) => 2,
        (_, 1, 1) => 3,
        (_, 1, 2) => 4,
        _ => 5,
    }
}

/// Symmetric `d x d` matrix per cell in packed storage.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    spec: GridSpec,
    comps: Vec<Vec<f64>>,
}

impl MatrixField {
    pub fn new(spec: GridSpec, comps: Vec<Vec<f64>>) -> Result<Self> {
        let m = spec.dim() * (spec.dim() + 1) / 2;
        if comps.len() != m {
            return Err(LandauError::SizeMismatch { expected: m, got: comps.len() });
        }
        for c in &comps {
            if c.len() != spec.len() {
                return Err(LandauError::SizeMismatch { expected: spec.len(), got: c.len() });
            }
            check_finite(c)?;
        }
        Ok(Self { spec, comps })
    }

    pub(crate) fn from_vecs(spec: GridSpec, comps: Vec<Vec<f64>>) -> Self {
        Self { spec, comps }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        &self.comps[sym_index(self.spec.dim(), i, j)]
    }

    pub fn packed(&self) -> &[Vec<f64>] {
        &self.comps
    }

    /// Full matrix at one cell (upper-left `d x d` block used).
    #[inline]
    pub fn at(&self, idx: usize) -> [[f64; 3]; 3] {
        let d = self.spec.dim();
        let mut m = [[0.0; 3]; 3];
        for i in 0..d {
            for j in 0..d {
                m[i][j] = self.comps[sym_index(d, i, j)][idx];
            }
        }
        m
    }
}

/// Midpoint rule `h^d sum_k f_k <v_k>^s`.
pub fn integrate(field: &ScalarField, s: f64) -> f64 {
    let spec = field.spec();
    let sum: f64 = if s == 0.0 {
        field.values().iter().sum()
    } else {
        field
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * (1.0 + spec.speed_sq(i)).powf(0.5 * s))
            .sum()
    };
    sum * spec.cell_volume()
}

/// Midpoint rule with an arbitrary per-cell weight.
pub fn integrate_with(field: &ScalarField, weight: impl Fn(&[f64]) -> f64) -> f64 {
    let spec = field.spec();
    let d = spec.dim();
    let sum: f64 = field
        .values()
        .iter()
        .enumerate()
        .map(|(i, &x)| x * weight(&spec.node(i)[..d]))
        .sum();
    sum * spec.cell_volume()
}

/// Centred difference along one axis of raw cell data, zero outside.
pub(crate) fn centered_diff(spec: &GridSpec, values: &[f64], axis: usize, out: &mut [f64]) {
    let n = spec.n();
    let stride = spec.stride(axis);
    let inv = 0.5 / spec.spacing();
    for (idx, o) in out.iter_mut().enumerate() {
        let k = (idx / stride) % n;
        let up = if k + 1 < n { values[idx + stride] } else { 0.0 };
        let down = if k > 0 { values[idx - stride] } else { 0.0 };
        *o = (up - down) * inv;
    }
}

/// Negative adjoint of [`flux_divergence`]: centred inside, half a one-sided
/// difference in the first and last cell of each line.
pub fn flux_gradient(spec: &GridSpec, values: &[f64], axis: usize, out: &mut [f64]) {
    let n = spec.n();
    let stride = spec.stride(axis);
    let inv = 0.5 / spec.spacing();
    for (idx, o) in out.iter_mut().enumerate() {
        let k = (idx / stride) % n;
        let mut acc = 0.0;
        if k + 1 < n {
            acc += values[idx + stride] - values[idx];
        }
        if k > 0 {
            acc += values[idx] - values[idx - stride];
        }
        *o = acc * inv;
    }
}

/// Divergence of a cell-centred flux through face averages, with zero flux
/// on the outer faces; sums to zero over the grid.
pub fn flux_divergence(spec: &GridSpec, flux: &[f64], axis: usize, out: &mut [f64]) {
    let n = spec.n();
    let stride = spec.stride(axis);
    let inv = 0.5 / spec.spacing();
    for (idx, o) in out.iter_mut().enumerate() {
        let k = (idx / stride) % n;
        let mut acc = 0.0;
        if k + 1 < n {
            acc += flux[idx + stride] + flux[idx];
        }
        if k > 0 {
            acc -= flux[idx] + flux[idx - stride];
        }
        *o = acc * inv;
    }
}

pub fn gradient(field: &ScalarField) -> VectorField {
    let spec = *field.spec();
    let comps = (0..spec.dim())
        .map(|a| {
            let mut out = vec![0.0; spec.len()];
            centered_diff(&spec, field.values(), a, &mut out);
            out
        })
        .collect();
    VectorField::from_vecs(spec, comps)
}

/// Negative adjoint of [`gradient`] under the midpoint rule.
pub fn divergence(field: &VectorField) -> ScalarField {
    let spec = *field.spec();
    let mut acc = vec![0.0; spec.len()];
    let mut tmp = vec![0.0; spec.len()];
    for a in 0..spec.dim() {
        centered_diff(&spec, field.component(a), a, &mut tmp);
        for (x, t) in acc.iter_mut().zip(&tmp) {
            *x += t;
        }
    }
    ScalarField::from_vec(spec, acc)
}

/// Inner product `h^d sum f g`.
pub fn inner(a: &[f64], b: &[f64], spec: &GridSpec) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * spec.cell_volume()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub d: usize,
    pub n: usize,
    pub half_width: f64,
    pub time: f64,
    pub schema_version: u32,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub components: usize,
}

fn one() -> usize {
    1
}

fn is_one(c: &usize) -> bool {
    *c == 1
}

/// Writes a one-line JSON header then the little-endian payload of every
/// component back to back.
pub fn write_snapshot<W: Write>(w: &mut W, spec: &GridSpec, time: f64, comps: &[&[f64]]) -> Result<()> {
    let header = SnapshotHeader {
        d: spec.dim(),
        n: spec.n(),
        half_width: spec.half_width(),
        time,
        schema_version: SNAPSHOT_SCHEMA_VERSION,
        components: comps.len(),
    };
    let line = serde_json::to_string(&header).map_err(|e| LandauError::Format(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(8 * spec.len());
    for c in comps {
        if c.len() != spec.len() {
            return Err(LandauError::SizeMismatch { expected: spec.len(), got: c.len() });
        }
        buf.clear();
        for x in c.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn write_field<W: Write>(w: &mut W, field: &ScalarField, time: f64) -> Result<()> {
    write_snapshot(w, field.spec(), time, &[field.values()])
}

pub fn read_snapshot<R: BufRead>(r: &mut R) -> Result<(SnapshotHeader, GridSpec, Vec<Vec<f64>>)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: SnapshotHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| LandauError::Format(e.to_string()))?;
    if header.schema_version != SNAPSHOT_SCHEMA_VERSION {
        return Err(LandauError::Format(format!("unsupported schema version {}", header.schema_version)));
    }
    let spec = GridSpec::new(header.d, header.n, header.half_width)?;
    let mut comps = Vec::with_capacity(header.components);
    let mut bytes = vec![0u8; 8 * spec.len()];
    for _ in 0..header.components {
        r.read_exact(&mut bytes)?;
        let c: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        check_finite(&c)?;
        comps.push(c);
    }
    Ok((header, spec, comps))
}

pub fn read_field<R: BufRead>(r: &mut R) -> Result<(f64, ScalarField)> {
    let (header, spec, mut comps) = read_snapshot(r)?;
    if comps.len() != 1 {
        return Err(LandauError::Format(format!("expected one component, found {}", comps.len())));
    }
    Ok((header.time, ScalarField::from_vec(spec, comps.pop().expect("one component"))))
}

/// Standard Maxwellian `(2 pi)^{-d/2} exp(-|v|^2/2)` sampled on the grid.
pub fn maxwellian(spec: GridSpec) -> ScalarField {
    gaussian(spec, &[0.0; 3], 1.0, 1.0)
}

/// Normalised isotropic Gaussian of mass `mass`, centre `u` and temperature `temp`.
pub fn gaussian(spec: GridSpec, u: &[f64], temp: f64, mass: f64) -> ScalarField {
    let d = spec.dim();
    let norm = mass * (2.0 * std::f64::consts::PI * temp).powf(-0.5 * d as f64);
    let values = (0..spec.len())
        .map(|i| {
            let v = spec.node(i);
            let r2: f64 = (0..d).map(|a| (v[a] - u[a]).powi(2)).sum();
            norm * (-0.5 * r2 / temp).exp()
        })
        .collect();
    ScalarField::from_vec(spec, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spacing_and_sizes() {
        let g = make_grid(3, 32, 8.0).unwrap();
        assert_eq!(g.spacing(), 0.5);
        assert_eq!(make_grid(2, 8, 4.0).unwrap().len(), 64);
        let g = make_grid(3, 8, 1.0).unwrap();
        let near = (0..g.len()).min_by(|&a, &b| g.speed_sq(a).total_cmp(&g.speed_sq(b))).unwrap();
        for c in &g.node(near) {
            assert_eq!(c.abs(), 0.125);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(make_grid(3, 9, 1.0).is_err());
        assert!(make_grid(3, 8, 0.0).is_err());
        assert!(make_grid(3, 6, 1.0).is_err());
        assert!(make_grid(4, 8, 1.0).is_err());
        assert!(ScalarField::new(make_grid(2, 8, 1.0).unwrap(), vec![f64::NAN; 64]).is_err());
    }

    #[test]
    fn maxwellian_moments() {
        let g = make_grid(3, 32, 8.0).unwrap();
        let m = maxwellian(g);
        assert!((integrate(&m, 0.0) - 1.0).abs() < 1e-10);
        let e = integrate_with(&m, |v| v.iter().map(|x| x * x).sum());
        assert!((e - 3.0).abs() < 1e-9);
    }

    #[test]
    fn resummation_oracle() {
        let g = make_grid(3, 16, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = ScalarField::new(g, (0..g.len()).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let mut rev = 0.0;
        for i in (0..g.len()).rev() {
            let v = g.node(i);
            rev += f.values()[i] * (1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).powf(1.5);
        }
        rev *= g.cell_volume();
        let fwd = integrate(&f, 3.0);
        assert!((fwd - rev).abs() <= 1e-13 * rev.abs());
    }

    #[test]
    fn gradient_of_linear_is_exact_inside() {
        let g = make_grid(3, 8, 1.0).unwrap();
        let f = ScalarField::from_fn(g, |v| v[0]).unwrap();
        let gr = gradient(&f);
        for i in 0..g.len() {
            let k = g.multi_index(i);
            if k.iter().all(|&x| x > 0 && x + 1 < g.n()) {
                assert!((gr.component(0)[i] - 1.0).abs() < 1e-14);
                assert_eq!(gr.component(1)[i], 0.0);
            }
        }
    }

    #[test]
    fn div_grad_matches_wide_stencil() {
        // centred gradient twice gives the Laplacian stencil of width 2h
        let g = make_grid(3, 12, 1.5).unwrap();
        let f = ScalarField::from_fn(g, |v| v[0] * v[0] + 2.0 * v[1] * v[2] - v[2] * v[2]).unwrap();
        let lap = divergence(&gradient(&f));
        let h = g.spacing();
        let n = g.n() as isize;
        let at = |k: [isize; 3]| -> f64 {
            if k.iter().any(|&x| x < 0 || x >= n) {
                0.0
            } else {
                f.values()[g.flat_index([k[0] as usize, k[1] as usize, k[2] as usize])]
            }
        };
        for i in 0..g.len() {
            let k = g.multi_index(i).map(|x| x as isize);
            if k.iter().any(|&x| x < 1 || x > n - 2) {
                continue;
            }
            let mut want = 0.0;
            for a in 0..3 {
                let mut up = k;
                up[a] += 2;
                let mut dn = k;
                dn[a] -= 2;
                want += (at(up) - 2.0 * at(k) + at(dn)) / (4.0 * h * h);
            }
            assert!((lap.values()[i] - want).abs() < 1e-10, "{i}");
            if k.iter().all(|&x| x >= 2 && x < n - 2) {
                assert!((lap.values()[i] - 0.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let g = make_grid(2, 8, 3.0).unwrap();
        let f = gaussian(g, &[0.3, -0.1, 0.0], 0.7, 1.3);
        let mut buf = Vec::new();
        write_field(&mut buf, &f, 0.25).unwrap();
        let (t, back) = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(t, 0.25);
        assert_eq!(back, f);
    }

    proptest! {
        #[test]
        fn integration_by_parts_is_exact(seed in any::<u64>(), d in 2usize..=3) {
            let g = make_grid(d, 8, 1.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let interior = |i: usize| g.multi_index(i)[..d].iter().all(|&k| k > 0 && k + 1 < g.n());
            let f: Vec<f64> = (0..g.len()).map(|i| if interior(i) { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
            let comps: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..g.len()).map(|i| if interior(i) { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect())
                .collect();
            let gf = gradient(&ScalarField::new(g, f.clone()).unwrap());
            let gv = VectorField::new(g, comps.clone()).unwrap();
            let lhs: f64 = (0..d).map(|a| inner(gf.component(a), &comps[a], &g)).sum();
            let rhs = inner(&f, divergence(&gv).values(), &g);
            prop_assert!((lhs + rhs).abs() < 1e-12);
        }

        #[test]
        fn integrate_is_linear_and_monotone(seed in any::<u64>(), s in -2.0f64..4.0) {
            let g = make_grid(2, 8, 2.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = ScalarField::new(g, (0..g.len()).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let b = ScalarField::new(g, (0..g.len()).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let sum = a.add(&b).unwrap();
            let (ia, ib, is) = (integrate(&a, s), integrate(&b, s), integrate(&sum, s));
            prop_assert!((is - ia - ib).abs() <= 1e-12 * is.abs());
            prop_assert!(is >= ia && is >= ib);
        }
    }
}
