//! Time-periodic potentials u(q, t) on T^n x S^1.
//!
//! The working representation is a finite cosine series on the unit torus
//! (lattice Z^n) with 1-periodic time dependence:
//!
//! ```text
//! u(q, t) = offset + sum_j a_j cos(2 pi (k_j . q + m_j t) + phi_j)
//! ```
//!
//! Every derivative is exact term-by-term, and the L2 norms of u_t and
//! grad_q u over one period cell follow from Parseval.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use thiserror::Error;

const TAU: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("potential dimension must be at least 1")]
    ZeroDimension,
    #[error("mode {index}: wave vector has length {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("mode {index}: (k, m) = (0, 0) belongs in the offset")]
    ConstantMode { index: usize },
    #[error("mode {index}: frequency (k, m) repeats mode {previous} (up to sign)")]
    DuplicateFrequency { index: usize, previous: usize },
    #[error("mode {index}: non-finite amplitude or phase")]
    NonFinite { index: usize },
    #[error("potential has not been normalized")]
    NotNormalized,
    #[error("cannot embed a {from}-dimensional potential into dimension {to}")]
    InvalidEmbedding { from: usize, to: usize },
}

/// A smooth potential on R^n x R, periodic or not. The dynamics, Jacobi and
/// discriminant code is written against this trait so that test harnesses
/// (quadratic wells, rescaled potentials) plug in alongside Fourier series.
pub trait Potential: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, q: &[f64], t: f64) -> f64;
    /// Writes grad_q u into `out` (length `dim()`).
    fn grad_q_into(&self, q: &[f64], t: f64, out: &mut [f64]);
    /// Writes the spatial Hessian into `out` (`dim() x dim()`).
    fn hess_q_into(&self, q: &[f64], t: f64, out: &mut DMatrix<f64>);
    fn du_dt(&self, q: &[f64], t: f64) -> f64;

    fn grad_q(&self, q: &[f64], t: f64) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        self.grad_q_into(q, t, g.as_mut_slice());
        g
    }

    fn hess_q(&self, q: &[f64], t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        self.hess_q_into(q, t, &mut h);
        h
    }

    fn laplacian(&self, q: &[f64], t: f64) -> f64 {
        self.hess_q(q, t).trace()
    }
}

/// One cosine term a cos(2 pi (k . q + m t) + phi).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub k: Vec<i64>,
    pub m: i64,
    pub amplitude: f64,
    pub phase: f64,
}

impl FourierMode {
    pub fn new(k: Vec<i64>, m: i64, amplitude: f64, phase: f64) -> Self {
        Self {
            k,
            m,
            amplitude,
            phase,
        }
    }

    fn k_norm_sq(&self) -> f64 {
        self.k.iter().map(|&ki| (ki * ki) as f64).sum()
    }
}

/// Offset applied by [`FourierPotential::normalize`] and the resulting
/// bound M with 0 <= u <= M.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gauge {
    pub shift: f64,
    pub upper_bound: f64,
}

#[derive(Debug, Clone)]
struct CompiledMode {
    wave: Vec<f64>,
    omega: f64,
    amplitude: f64,
    phase: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPotential {
    n: usize,
    #[serde(default)]
    modes: Vec<FourierMode>,
    #[serde(default)]
    offset: f64,
}

/// Finite cosine series on T^n x S^1.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawPotential", into = "RawPotential")]
pub struct FourierPotential {
    n: usize,
    modes: Vec<FourierMode>,
    offset: f64,
    gauge: Option<Gauge>,
    compiled: Vec<CompiledMode>,
}

impl TryFrom<RawPotential> for FourierPotential {
    type Error = PotentialError;
    fn try_from(raw: RawPotential) -> Result<Self, Self::Error> {
        FourierPotential::new(raw.n, raw.modes, raw.offset)
    }
}

impl From<FourierPotential> for RawPotential {
    fn from(p: FourierPotential) -> Self {
        RawPotential {
            n: p.n,
            modes: p.modes,
            offset: p.offset,
        }
    }
}

impl PartialEq for FourierPotential {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.modes == other.modes
            && self.offset == other.offset
            && self.gauge == other.gauge
    }
}

impl FourierPotential {
    pub fn new(n: usize, modes: Vec<FourierMode>, offset: f64) -> Result<Self, PotentialError> {
        if n == 0 {
            return Err(PotentialError::ZeroDimension);
        }
        let mut first_index: HashMap<(Vec<i64>, i64), usize> = HashMap::new();
        for (index, mode) in modes.iter().enumerate() {
            if mode.k.len() != n {
                return Err(PotentialError::DimensionMismatch {
                    index,
                    expected: n,
                    got: mode.k.len(),
                });
            }
            if mode.m == 0 && mode.k.iter().all(|&k| k == 0) {
                return Err(PotentialError::ConstantMode { index });
            }
            if !mode.amplitude.is_finite() || !mode.phase.is_finite() {
                return Err(PotentialError::NonFinite { index });
            }
            // (k, m) and (-k, -m) are the same frequency; keep one canonical sign.
            let neg: Vec<i64> = mode.k.iter().map(|&k| -k).collect();
            let key = std::cmp::max((mode.k.clone(), mode.m), (neg, -mode.m));
            if let Some(&previous) = first_index.get(&key) {
                return Err(PotentialError::DuplicateFrequency { index, previous });
            }
            first_index.insert(key, index);
        }
        let compiled = modes
            .iter()
            .map(|m| CompiledMode {
                wave: m.k.iter().map(|&k| TAU * k as f64).collect(),
                omega: TAU * m.m as f64,
                amplitude: m.amplitude,
                phase: m.phase,
            })
            .collect();
        Ok(Self {
            n,
            modes,
            offset,
            gauge: None,
            compiled,
        })
    }

    pub fn zero(n: usize) -> Result<Self, PotentialError> {
        Self::new(n, Vec::new(), 0.0)
    }

    pub fn modes(&self) -> &[FourierMode] {
        &self.modes
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn gauge(&self) -> Option<Gauge> {
        self.gauge
    }

    pub fn is_normalized(&self) -> bool {
        self.gauge.is_some()
    }

    pub fn is_autonomous(&self) -> bool {
        self.modes.iter().all(|m| m.m == 0)
    }

    /// True when u does not depend on q at all.
    pub fn is_space_constant(&self) -> bool {
        self.modes
            .iter()
            .all(|m| m.amplitude == 0.0 || m.k.iter().all(|&k| k == 0))
    }

    /// Drops the modes depending on t alone (k = 0, m != 0). Adding a
    /// function of t does not change the dynamics; this choice of it
    /// minimizes the integral of u_t^2. The result is not normalized.
    pub fn without_time_modes(&self) -> Self {
        let modes = self
            .modes
            .iter()
            .filter(|m| m.m == 0 || m.k.iter().any(|&k| k != 0))
            .cloned()
            .collect();
        Self::new(self.n, modes, self.offset - self.gauge_shift()).expect("subset of valid modes")
    }

    /// Highest |frequency| per axis: entries 0..n are the spatial axes,
    /// entry n is time.
    pub fn bandwidth(&self) -> Vec<u64> {
        let mut band = vec![0u64; self.n + 1];
        for mode in &self.modes {
            for (b, &k) in band.iter_mut().zip(&mode.k) {
                *b = (*b).max(k.unsigned_abs());
            }
            band[self.n] = band[self.n].max(mode.m.unsigned_abs());
        }
        band
    }

    /// Lifts the potential to T^dim x S^1; u is constant along the new axes.
    pub fn embedded(&self, dim: usize) -> Result<Self, PotentialError> {
        if dim < self.n {
            return Err(PotentialError::InvalidEmbedding {
                from: self.n,
                to: dim,
            });
        }
        if dim == self.n {
            return Ok(self.clone());
        }
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let mut k = m.k.clone();
                k.resize(dim, 0);
                FourierMode { k, ..m.clone() }
            })
            .collect();
        let mut lifted = Self::new(dim, modes, self.offset)?;
        lifted.gauge = self.gauge;
        Ok(lifted)
    }

    /// Shifts the offset by a single constant so that min u = 0 over the
    /// period cell, and records the bound M = max u. Idempotent.
    ///
    /// The extrema are located by a coarse periodic grid scan followed by
    /// damped Newton refinement from the best grid candidates.
    pub fn normalize(&self) -> Self {
        if self.gauge.is_some() {
            return self.clone();
        }
        let (min_raw, max_raw) = if self.modes.is_empty() {
            (self.offset, self.offset)
        } else {
            (self.extremum(Extremum::Min), self.extremum(Extremum::Max))
        };
        let mut out = self.clone();
        out.offset = self.offset - min_raw;
        out.gauge = Some(Gauge {
            shift: -min_raw,
            upper_bound: (max_raw - min_raw).max(0.0),
        });
        out
    }

    /// The constant M with 0 <= u <= M on a normalized potential.
    pub fn upper_bound(&self) -> Result<f64, PotentialError> {
        self.gauge
            .map(|g| g.upper_bound)
            .ok_or(PotentialError::NotNormalized)
    }

    /// Total normalization shift applied to the raw series.
    pub fn gauge_shift(&self) -> f64 {
        self.gauge.map_or(0.0, |g| g.shift)
    }

    /// Integral of u_t^2 over the period cell (Parseval).
    pub fn l2_ut(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| (TAU * m.m as f64).powi(2) * m.amplitude * m.amplitude / 2.0)
            .sum()
    }

    /// Integral of |grad_q u|^2 over the period cell (Parseval).
    pub fn l2_gradu(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| TAU * TAU * m.k_norm_sq() * m.amplitude * m.amplitude / 2.0)
            .sum()
    }

    /// Trapezoidal cross-check of [`Self::l2_ut`] on `grid`.
    pub fn l2_ut_grid(&self, grid: &PeriodicGrid) -> f64 {
        grid.mean(|q, t| self.du_dt(q, t).powi(2))
    }

    /// Trapezoidal cross-check of [`Self::l2_gradu`] on `grid`.
    pub fn l2_gradu_grid(&self, grid: &PeriodicGrid) -> f64 {
        let mut g = vec![0.0; self.n];
        grid.mean(|q, t| {
            self.grad_q_into(q, t, &mut g);
            g.iter().map(|x| x * x).sum()
        })
    }

    /// Value, full (q, t) gradient and full (n+1)x(n+1) Hessian.
    fn jet(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let (q, t) = (&x[..n], x[n]);
        let mut value = self.offset;
        let mut grad = DVector::zeros(n + 1);
        let mut hess = DMatrix::zeros(n + 1, n + 1);
        let mut kappa = vec![0.0; n + 1];
        for mode in &self.compiled {
            kappa[..n].copy_from_slice(&mode.wave);
            kappa[n] = mode.omega;
            let theta = phase_of(mode, q, t);
            let (s, c) = theta.sin_cos();
            value += mode.amplitude * c;
            for i in 0..=n {
                grad[i] -= mode.amplitude * s * kappa[i];
                for j in 0..=n {
                    hess[(i, j)] -= mode.amplitude * c * kappa[i] * kappa[j];
                }
            }
        }
        (value, grad, hess)
    }

    fn extremum(&self, which: Extremum) -> f64 {
        let sign = match which {
            Extremum::Min => 1.0,
            Extremum::Max => -1.0,
        };
        let grid = PeriodicGrid::for_extremum_scan(&self.bandwidth());
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(CANDIDATES + 1);
        for idx in 0..grid.len() {
            let (q, t) = grid.point(idx);
            let v = sign * self.eval(&q, t);
            if best.len() < CANDIDATES || v < best[best.len() - 1].0 {
                let pos = best.partition_point(|b| b.0 <= v);
                best.insert(pos, (v, idx));
                best.truncate(CANDIDATES);
            }
        }
        let mut result = f64::INFINITY;
        for &(v0, idx) in &best {
            let (q, t) = grid.point(idx);
            let mut x = q;
            x.push(t);
            let v = self.newton_refine(x, sign).min(v0);
            result = result.min(v);
        }
        sign * result
    }

    /// Damped Newton on sign*u starting at `x`; returns the refined value.
    fn newton_refine(&self, mut x: Vec<f64>, sign: f64) -> f64 {
        let f = |x: &[f64]| sign * self.eval(&x[..self.n], x[self.n]);
        let mut fx = f(&x);
        for _ in 0..100 {
            let (_, g, h) = self.jet(&x);
            let g = g * sign;
            let h = h * sign;
            if g.norm() < 1e-14 {
                break;
            }
            let step = match h.clone().cholesky() {
                Some(chol) => -chol.solve(&g),
                None => -g.clone() / h.norm().max(1.0),
            };
            let mut scale = 1.0;
            let mut improved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = x
                    .iter()
                    .zip(step.iter())
                    .map(|(a, b)| a + scale * b)
                    .collect();
                let ft = f(&trial);
                if ft <= fx {
                    x = trial;
                    improved = ft < fx;
                    fx = ft;
                    break;
                }
                scale *= 0.5;
            }
            if !improved {
                break;
            }
        }
        fx
    }
}

const CANDIDATES: usize = 8;

#[derive(Clone, Copy)]
enum Extremum {
    Min,
    Max,
}

#[inline]
fn phase_of(mode: &CompiledMode, q: &[f64], t: f64) -> f64 {
    let mut theta = mode.phase + mode.omega * t;
    for (w, x) in mode.wave.iter().zip(q) {
        theta += w * x;
    }
    theta
}

impl Potential for FourierPotential {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, q: &[f64], t: f64) -> f64 {
        self.offset
            + self
                .compiled
                .iter()
                .map(|m| m.amplitude * phase_of(m, q, t).cos())
                .sum::<f64>()
    }

    fn grad_q_into(&self, q: &[f64], t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for mode in &self.compiled {
            let s = mode.amplitude * phase_of(mode, q, t).sin();
            for (o, w) in out.iter_mut().zip(&mode.wave) {
                *o -= s * w;
            }
        }
    }

    fn hess_q_into(&self, q: &[f64], t: f64, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        let n = self.n;
        for mode in &self.compiled {
            let c = mode.amplitude * phase_of(mode, q, t).cos();
            for j in 0..n {
                let cj = c * mode.wave[j];
                if cj == 0.0 {
                    continue;
                }
                for i in 0..n {
                    out[(i, j)] -= cj * mode.wave[i];
                }
            }
        }
    }

    fn du_dt(&self, q: &[f64], t: f64) -> f64 {
        -self
            .compiled
            .iter()
            .map(|m| m.amplitude * m.omega * phase_of(m, q, t).sin())
            .sum::<f64>()
    }

    fn laplacian(&self, q: &[f64], t: f64) -> f64 {
        -self
            .compiled
            .iter()
            .map(|m| {
                let k2: f64 = m.wave.iter().map(|w| w * w).sum();
                m.amplitude * k2 * phase_of(m, q, t).cos()
            })
            .sum::<f64>()
    }
}

/// u(q) = k |q|^2 / 2 on R^n: constant Hessian k I. Not periodic; used as a
/// frozen-coefficient harness for Jacobi fields (k < 0 gives the hyperbolic case).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticWell {
    pub n: usize,
    pub k: f64,
}

impl Potential for QuadraticWell {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, q: &[f64], _t: f64) -> f64 {
        0.5 * self.k * q.iter().map(|x| x * x).sum::<f64>()
    }
    fn grad_q_into(&self, q: &[f64], _t: f64, out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(q) {
            *o = self.k * x;
        }
    }
    fn hess_q_into(&self, _q: &[f64], _t: f64, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        out.fill_diagonal(self.k);
    }
    fn du_dt(&self, _q: &[f64], _t: f64) -> f64 {
        0.0
    }
}

/// Uniform periodic grid on the unit cell of T^n x S^1. Axis `n` is time.
/// An axis with a single point is sampled at 0 (for integrands constant
/// along that axis).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    pub counts: Vec<usize>,
}

impl PeriodicGrid {
    pub fn new(counts: Vec<usize>) -> Self {
        assert!(counts.len() >= 2 && counts.iter().all(|&c| c >= 1));
        Self { counts }
    }

    /// `per_frequency` points per unit of the highest frequency on every
    /// active axis, one point on axes the potential does not depend on.
    pub fn resolving(bandwidth: &[u64], per_frequency: usize) -> Self {
        Self::new(
            bandwidth
                .iter()
                .map(|&b| {
                    if b == 0 {
                        1
                    } else {
                        per_frequency * b as usize
                    }
                })
                .collect(),
        )
    }

    /// Grid used for the normalization scan: 64 points per active axis
    /// (more for high frequencies), thinned down to about 4M points.
    fn for_extremum_scan(bandwidth: &[u64]) -> Self {
        const BUDGET: usize = 1 << 22;
        let mut counts: Vec<usize> = bandwidth
            .iter()
            .map(|&b| if b == 0 { 1 } else { 64.max(8 * b as usize) })
            .collect();
        loop {
            let total: usize = counts.iter().product();
            if total <= BUDGET {
                break;
            }
            let floor = |i: usize| (8 * bandwidth[i] as usize).max(8);
            let widest = (0..counts.len())
                .filter(|&i| counts[i] / 2 >= floor(i))
                .max_by_key(|&i| counts[i]);
            match widest {
                Some(i) => counts[i] /= 2,
                None => break,
            }
        }
        Self::new(counts)
    }

    /// Grid with every active axis halved (used for error estimates).
    pub fn coarsened(&self) -> Self {
        Self::new(
            self.counts
                .iter()
                .map(|&c| if c > 1 { c.div_ceil(2) } else { 1 })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spatial dimension n.
    pub fn dim(&self) -> usize {
        self.counts.len() - 1
    }

    /// Coordinates of grid point `index` (row-major, time fastest).
    pub fn point(&self, mut index: usize) -> (Vec<f64>, f64) {
        let mut coords = vec![0.0; self.counts.len()];
        for axis in (0..self.counts.len()).rev() {
            let c = self.counts[axis];
            coords[axis] = (index % c) as f64 / c as f64;
            index /= c;
        }
        let t = coords.pop().unwrap_or(0.0);
        (coords, t)
    }

    /// Mean of `f` over the grid (trapezoidal rule on the unit cell).
    pub fn mean<F: FnMut(&[f64], f64) -> f64>(&self, mut f: F) -> f64 {
        let values: Vec<f64> = (0..self.len())
            .map(|i| {
                let (q, t) = self.point(i);
                f(&q, t)
            })
            .collect();
        crate::numerics::pairwise_sum(&values) / self.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn three_mode() -> FourierPotential {
        FourierPotential::new(
            3,
            vec![
                FourierMode::new(vec![1, 0, 0], 1, 0.3, 0.7),
                FourierMode::new(vec![0, 1, -1], 0, 0.2, -0.4),
                FourierMode::new(vec![0, 0, 1], 2, 0.15, 1.9),
            ],
            0.0,
        )
        .unwrap()
    }

    /// Direct evaluation of the defining sum, independent of the compiled modes.
    fn reference_eval(pot: &FourierPotential, q: &[f64], t: f64) -> f64 {
        let mut acc = pot.offset();
        for m in pot.modes() {
            let dot: f64 = m.k.iter().zip(q).map(|(&k, &x)| k as f64 * x).sum();
            acc += m.amplitude * (2.0 * PI * (dot + m.m as f64 * t) + m.phase).cos();
        }
        acc
    }

    #[test]
    fn time_gauge_removes_pure_time_modes() {
        let u = FourierPotential::new(
            2,
            vec![
                FourierMode::new(vec![0, 0], 2, 0.5, 0.1),
                FourierMode::new(vec![1, 0], 1, 0.2, 0.0),
            ],
            0.3,
        )
        .unwrap()
        .normalize();
        let v = u.without_time_modes();
        assert_eq!(v.modes().len(), 1);
        assert!(v.gauge().is_none());
        assert!(v.l2_ut() < u.l2_ut());
        assert_eq!(v.l2_gradu(), u.l2_gradu());
        let (q, t) = ([0.3, 0.1], 0.7);
        assert_eq!(v.grad_q(&q, t), u.grad_q(&q, t));
    }

    #[test]
    fn zero_potential_is_zero() {
        let pot = FourierPotential::zero(3).unwrap();
        let q = [0.3, 0.1, 0.9];
        assert_eq!(pot.eval(&q, 0.2), 0.0);
        assert_eq!(pot.grad_q(&q, 0.2).norm(), 0.0);
        assert_eq!(pot.hess_q(&q, 0.2).norm(), 0.0);
        assert_eq!(pot.du_dt(&q, 0.2), 0.0);
        let norm = pot.normalize();
        assert_eq!(norm.upper_bound().unwrap(), 0.0);
        assert_eq!(norm.l2_ut(), 0.0);
        assert_eq!(norm.l2_gradu(), 0.0);
    }

    #[test]
    fn single_mode_plus_offset() {
        let pot = FourierPotential::new(3, vec![FourierMode::new(vec![1, 0, 0], 0, 1.0, 0.0)], 1.0)
            .unwrap();
        assert_eq!(pot.eval(&[0.0, 0.0, 0.0], 0.0), 2.0);
        assert!((pot.l2_gradu() - 2.0 * PI * PI).abs() < 1e-12);
        assert_eq!(pot.l2_ut(), 0.0);
    }

    #[test]
    fn eval_matches_reference_sum() {
        let pot = FourierPotential::new(3, vec![FourierMode::new(vec![1, 0, 0], 1, 0.3, 0.7)], 0.0)
            .unwrap();
        let q = [0.2, 0.9, 0.4];
        let got = pot.eval(&q, 0.35);
        assert!((got - reference_eval(&pot, &q, 0.35)).abs() < 1e-15);
    }

    #[test]
    fn one_dimensional_gradient() {
        let pot =
            FourierPotential::new(1, vec![FourierMode::new(vec![1], 0, 1.0, 0.0)], 1.0).unwrap();
        let g = pot.grad_q(&[0.25], 0.0);
        assert!((g[0] + 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_modes() {
        assert_eq!(
            FourierPotential::new(2, vec![FourierMode::new(vec![0, 0], 0, 1.0, 0.0)], 0.0)
                .unwrap_err(),
            PotentialError::ConstantMode { index: 0 }
        );
        let dup = FourierPotential::new(
            2,
            vec![
                FourierMode::new(vec![1, 2], 1, 1.0, 0.0),
                FourierMode::new(vec![-1, -2], -1, 1.0, 0.3),
            ],
            0.0,
        );
        assert!(matches!(
            dup,
            Err(PotentialError::DuplicateFrequency {
                index: 1,
                previous: 0
            })
        ));
        assert!(matches!(
            FourierPotential::new(2, vec![FourierMode::new(vec![1], 0, 1.0, 0.0)], 0.0),
            Err(PotentialError::DimensionMismatch { .. })
        ));
        assert_eq!(
            FourierPotential::zero(0).unwrap_err(),
            PotentialError::ZeroDimension
        );
    }

    #[test]
    fn upper_bound_requires_normalization() {
        let pot = three_mode();
        assert_eq!(pot.upper_bound(), Err(PotentialError::NotNormalized));
        assert!(pot.normalize().upper_bound().is_ok());
    }

    #[test]
    fn cosine_normalizes_to_zero_two() {
        let pot =
            FourierPotential::new(1, vec![FourierMode::new(vec![1], 0, 1.0, 0.0)], 0.0).unwrap();
        let norm = pot.normalize();
        assert!((norm.offset() - 1.0).abs() < 1e-12);
        assert!((norm.upper_bound().unwrap() - 2.0).abs() < 1e-12);
        assert!((norm.gauge_shift() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_matches_dense_scan() {
        let pot = FourierPotential::new(
            2,
            vec![
                FourierMode::new(vec![1, 0], 1, 0.4, 0.3),
                FourierMode::new(vec![1, -1], 0, 0.25, 2.1),
                FourierMode::new(vec![0, 2], 1, 0.1, -1.0),
            ],
            0.5,
        )
        .unwrap()
        .normalize();
        let m = pot.upper_bound().unwrap();
        let grid = PeriodicGrid::new(vec![64, 64, 64]);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..grid.len() {
            let (q, t) = grid.point(i);
            let v = pot.eval(&q, t);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!((-1e-9..=1e-3).contains(&lo), "grid min {lo}");
        assert!(hi <= m + 1e-9 && hi >= m - 1e-3, "grid max {hi} vs M {m}");
    }

    #[test]
    fn normalize_is_idempotent_and_preserves_dynamics() {
        let raw = three_mode();
        let once = raw.normalize();
        let twice = once.normalize();
        assert_eq!(once.offset(), twice.offset());
        assert_eq!(once.upper_bound(), twice.upper_bound());
        let q = [0.11, 0.52, 0.73];
        assert_eq!(raw.grad_q(&q, 0.3), once.grad_q(&q, 0.3));
        assert_eq!(raw.hess_q(&q, 0.3), once.hess_q(&q, 0.3));
        assert_eq!(raw.du_dt(&q, 0.3), once.du_dt(&q, 0.3));
    }

    #[test]
    fn parseval_matches_grid_for_three_modes() {
        let pot = three_mode();
        let grid = PeriodicGrid::resolving(&pot.bandwidth(), 4);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel(pot.l2_ut_grid(&grid), pot.l2_ut()) < 1e-12);
        assert!(rel(pot.l2_gradu_grid(&grid), pot.l2_gradu()) < 1e-12);
    }

    #[test]
    fn embedding_adds_inert_axes() {
        let pot = three_mode();
        let lifted = pot.embedded(5).unwrap();
        assert_eq!(lifted.dim(), 5);
        assert_eq!(lifted.l2_gradu(), pot.l2_gradu());
        let v = lifted.eval(&[0.1, 0.2, 0.3, 0.77, 0.4], 0.6);
        assert!((v - pot.eval(&[0.1, 0.2, 0.3], 0.6)).abs() < 1e-15);
        assert!(pot.embedded(2).is_err());
    }

    #[test]
    fn json_round_trip_keeps_series() {
        let pot = three_mode();
        let text = serde_json::to_string(&pot).unwrap();
        let back: FourierPotential = serde_json::from_str(&text).unwrap();
        assert_eq!(back.modes(), pot.modes());
        let bad = r#"{"n":1,"modes":[{"k":[0],"m":0,"amplitude":1.0,"phase":0.0}]}"#;
        assert!(serde_json::from_str::<FourierPotential>(bad).is_err());
    }

    fn arb_potential() -> impl Strategy<Value = FourierPotential> {
        (1usize..=3).prop_flat_map(|n| {
            prop::collection::vec(
                (
                    prop::collection::vec(-2i64..=2, n),
                    -2i64..=2,
                    -1.0f64..1.0,
                    -3.0f64..3.0,
                ),
                1..4,
            )
            .prop_filter_map("valid modes", move |raw| {
                let modes = raw
                    .into_iter()
                    .map(|(k, m, a, ph)| FourierMode::new(k, m, a, ph))
                    .collect();
                FourierPotential::new(n, modes, 0.0).ok()
            })
        })
    }

    proptest! {
        #[test]
        fn periodic_in_every_lattice_direction(pot in arb_potential(), seed in prop::collection::vec(0.0f64..1.0, 4)) {
            let n = pot.dim();
            let q: Vec<f64> = seed[..n].to_vec();
            let t = seed[3];
            let base = pot.eval(&q, t);
            for i in 0..n {
                let mut shifted = q.clone();
                shifted[i] += 1.0;
                prop_assert!((pot.eval(&shifted, t) - base).abs() < 1e-12);
            }
            prop_assert!((pot.eval(&q, t + 1.0) - base).abs() < 1e-12);
        }

        #[test]
        fn derivatives_match_central_differences(pot in arb_potential(), seed in prop::collection::vec(0.0f64..1.0, 4)) {
            let n = pot.dim();
            let q: Vec<f64> = seed[..n].to_vec();
            let t = seed[3];
            let h = 1e-5;
            let g = pot.grad_q(&q, t);
            let hs = pot.hess_q(&q, t);
            let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= 1e-6 * scale.max(1.0);
            let scale_g = g.amax();
            let scale_h = hs.amax();
            for i in 0..n {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += h;
                qm[i] -= h;
                let fd = (pot.eval(&qp, t) - pot.eval(&qm, t)) / (2.0 * h);
                prop_assert!(close(fd, g[i], scale_g), "grad {} fd {}", g[i], fd);
                let gp = pot.grad_q(&qp, t);
                let gm = pot.grad_q(&qm, t);
                for j in 0..n {
                    let fd = (gp[j] - gm[j]) / (2.0 * h);
                    prop_assert!(close(fd, hs[(j, i)], scale_h));
                }
            }
            let fd_t = (pot.eval(&q, t + h) - pot.eval(&q, t - h)) / (2.0 * h);
            prop_assert!(close(fd_t, pot.du_dt(&q, t), pot.du_dt(&q, t).abs()));
            prop_assert!((hs.transpose() - &hs).amax() == 0.0);
        }

        #[test]
        fn trace_of_hessian_is_laplacian(pot in arb_potential(), seed in prop::collection::vec(0.0f64..1.0, 4)) {
            let n = pot.dim();
            let q: Vec<f64> = seed[..n].to_vec();
            let t = seed[3];
            let tr = pot.hess_q(&q, t).trace();
            let lap = pot.laplacian(&q, t);
            prop_assert!((tr - lap).abs() <= 1e-12 * (1.0 + lap.abs()));
        }
    }
}
