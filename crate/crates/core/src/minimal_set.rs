//! Monte Carlo exploration of high-energy shells {R1 < |p| < R2}: the
//! fraction of orbits without conjugate points up to a horizon, and a
//! deterministic search for orbits that do have one.

use crate::conjugate::{scan_conjugate, ConjugateError, ConjugateKind};
use crate::dynamics::{DynamicsError, PhaseState, StepPolicy};
use crate::numerics::{sample_rng, wilson_interval};
use crate::potential::{FourierPotential, Potential, PotentialError};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HORIZON: f64 = 20.0;
/// Orbits evaluated per parallel batch in [`find_witness`].
pub const WITNESS_BATCH: usize = 64;
/// A witness validates when the half-step conjugate time agrees within
/// this tolerance times (1 + elapsed time).
pub const WITNESS_TOL: f64 = 1e-3;
const WILSON_Z: f64 = 1.96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShellError {
    #[error("invalid shell: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellSpec {
    pub dim: usize,
    pub r1: f64,
    pub r2: f64,
    pub horizon: f64,
    pub samples: usize,
    pub seed: u64,
    pub step: StepPolicy,
}

impl ShellSpec {
    pub fn new(dim: usize, r1: f64, r2: f64, samples: usize, seed: u64) -> Self {
        Self {
            dim,
            r1,
            r2,
            horizon: DEFAULT_HORIZON,
            samples,
            seed,
            step: StepPolicy::default(),
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_step(mut self, step: StepPolicy) -> Self {
        self.step = step;
        self
    }

    pub fn validate(&self) -> Result<(), ShellError> {
        let bad = |msg: String| Err(ShellError::InvalidSpec(msg));
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if !(self.r1 > 0.0 && self.r1 < self.r2 && self.r2.is_finite()) {
            return bad(format!(
                "need 0 < r1 < r2, got r1 = {}, r2 = {}",
                self.r1, self.r2
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        self.step.validate().or_else(|e| bad(e.to_string()))
    }

    /// Sample `index` of the shell: q, t uniform and p uniform in the
    /// annulus. Depends only on (seed, index).
    pub fn sample(&self, index: usize) -> PhaseState {
        let n = self.dim;
        let mut rng = sample_rng(self.seed, index as u64);
        let q: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let t = rng.random::<f64>();
        let (lo, hi) = (self.r1.powi(n as i32), self.r2.powi(n as i32));
        let r = loop {
            let r = (lo + rng.random::<f64>() * (hi - lo)).powf(1.0 / n as f64);
            if r > self.r1 && r < self.r2 {
                break r;
            }
        };
        let dir = loop {
            let d: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break d.into_iter().map(|x| x / norm).collect::<Vec<_>>();
            }
        };
        PhaseState::new(q, dir.into_iter().map(|x| r * x).collect(), t)
    }
}

pub fn sample_shell(spec: &ShellSpec) -> Vec<PhaseState> {
    (0..spec.samples)
        .into_par_iter()
        .map(|i| spec.sample(i))
        .collect()
}

/// An orbit with a conjugate point inside the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub index: usize,
    pub initial: PhaseState,
    pub step: f64,
    pub first_conjugate_time: f64,
    pub kind: ConjugateKind,
    /// Conjugate time recomputed at half the step, if one was found.
    pub half_step_time: Option<f64>,
    pub validated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergedSample {
    pub index: usize,
    pub last_valid_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellReport {
    pub spec: ShellSpec,
    /// Samples whose scan completed (diverged samples are excluded).
    pub tested: usize,
    pub minimal_count: usize,
    pub fraction: f64,
    pub half_width: f64,
    pub interval: (f64, f64),
    pub witnesses: Vec<Witness>,
    pub diverged: Vec<DivergedSample>,
}

enum Outcome {
    Minimal,
    Conjugate {
        time: f64,
        kind: ConjugateKind,
        step: f64,
    },
    Diverged(f64),
}

fn scan_sample(pot: &FourierPotential, spec: &ShellSpec, index: usize) -> (PhaseState, Outcome) {
    let start = spec.sample(index);
    let h = spec.step.step_for(&start);
    let outcome = match scan_conjugate(pot, &start, spec.horizon, h) {
        Ok(None) => Outcome::Minimal,
        Ok(Some(point)) => Outcome::Conjugate {
            time: point.time,
            kind: point.kind,
            step: h,
        },
        Err(ConjugateError::Dynamics(DynamicsError::Diverged { last_valid_time })) => {
            Outcome::Diverged(last_valid_time)
        }
        Err(e) => unreachable!("scan rejected validated inputs: {e}"),
    };
    (start, outcome)
}

fn validate_witness(
    pot: &FourierPotential,
    spec: &ShellSpec,
    index: usize,
    initial: PhaseState,
    time: f64,
    kind: ConjugateKind,
    step: f64,
) -> Witness {
    let elapsed = time - initial.t;
    let half = 0.5 * step;
    let horizon = spec.horizon.min(1.1 * elapsed + 100.0 * step);
    let half_step_time = match scan_conjugate(pot, &initial, horizon, half) {
        Ok(Some(point)) => Some(point.time),
        _ => None,
    };
    let validated =
        half_step_time.is_some_and(|t| (t - time).abs() <= WITNESS_TOL * (1.0 + elapsed));
    Witness {
        index,
        initial,
        step,
        first_conjugate_time: time,
        kind,
        half_step_time,
        validated,
    }
}

fn check_inputs(pot: &FourierPotential, spec: &ShellSpec) -> Result<(), ShellError> {
    spec.validate()?;
    pot.upper_bound()?;
    if pot.dim() != spec.dim {
        return Err(ShellError::InvalidSpec(format!(
            "shell dimension {} does not match potential dimension {}",
            spec.dim,
            pot.dim()
        )));
    }
    Ok(())
}

/// Scans every shell sample for conjugate points up to the horizon.
pub fn estimate_fraction(
    pot: &FourierPotential,
    spec: &ShellSpec,
) -> Result<ShellReport, ShellError> {
    check_inputs(pot, spec)?;
    let outcomes: Vec<(PhaseState, Outcome)> = (0..spec.samples)
        .into_par_iter()
        .map(|i| scan_sample(pot, spec, i))
        .collect();
    let mut minimal_count = 0;
    let mut diverged = Vec::new();
    let mut pending = Vec::new();
    for (index, (start, outcome)) in outcomes.into_iter().enumerate() {
        match outcome {
            Outcome::Minimal => minimal_count += 1,
            Outcome::Diverged(last_valid_time) => diverged.push(DivergedSample {
                index,
                last_valid_time,
            }),
            Outcome::Conjugate { time, kind, step } => {
                pending.push((index, start, time, kind, step))
            }
        }
    }
    let witnesses: Vec<Witness> = pending
        .into_par_iter()
        .map(|(index, start, time, kind, step)| {
            validate_witness(pot, spec, index, start, time, kind, step)
        })
        .collect();
    let tested = spec.samples - diverged.len();
    let wilson = wilson_interval(minimal_count, tested, WILSON_Z);
    Ok(ShellReport {
        spec: spec.clone(),
        tested,
        minimal_count,
        fraction: if tested > 0 {
            minimal_count as f64 / tested as f64
        } else {
            0.0
        },
        half_width: wilson.half_width,
        interval: (wilson.lower, wilson.upper),
        witnesses,
        diverged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessSearch {
    pub spec: ShellSpec,
    pub budget: usize,
    /// Orbits scanned up to and including the witness (or the whole budget).
    pub searched: usize,
    pub diverged: usize,
    pub witness: Option<Witness>,
}

/// Returns the lowest-index sample among the first `budget` with a
/// conjugate point inside the horizon. Batches are scanned in parallel, so
/// the result does not depend on the thread count.
pub fn find_witness(
    pot: &FourierPotential,
    spec: &ShellSpec,
    budget: usize,
) -> Result<WitnessSearch, ShellError> {
    check_inputs(pot, spec)?;
    let mut diverged = 0;
    let mut start = 0;
    while start < budget {
        let end = (start + WITNESS_BATCH).min(budget);
        let batch: Vec<(PhaseState, Outcome)> = (start..end)
            .into_par_iter()
            .map(|i| scan_sample(pot, spec, i))
            .collect();
        for (offset, (initial, outcome)) in batch.into_iter().enumerate() {
            match outcome {
                Outcome::Minimal => {}
                Outcome::Diverged(_) => diverged += 1,
                Outcome::Conjugate { time, kind, step } => {
                    let index = start + offset;
                    let witness = validate_witness(pot, spec, index, initial, time, kind, step);
                    return Ok(WitnessSearch {
                        spec: spec.clone(),
                        budget,
                        searched: index + 1,
                        diverged,
                        witness: Some(witness),
                    });
                }
            }
        }
        start = end;
    }
    Ok(WitnessSearch {
        spec: spec.clone(),
        budget,
        searched: budget,
        diverged,
        witness: None,
    })
}
