//! Conjugate points on a shallow pendulum well and Riccati diagnostics
//! along a rotating orbit.

use newtonlab::{
    integrate, propagate_jacobi, riccati_diagnostics, scan_conjugate, FourierMode,
    FourierPotential, PhaseState,
};
use std::f64::consts::PI;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let eps = 0.01;
    // eps (1 - cos 2 pi q)
    let well =
        FourierPotential::new(1, vec![FourierMode::new(vec![1], 0, -eps, 0.0)], eps)?.normalize();
    let rest = PhaseState::new(vec![0.0], vec![0.0], 0.0);
    let point = scan_conjugate(&well, &rest, 10.0, 1e-4)?.expect("resting orbit focuses");
    let linear = PI / (eps * 4.0 * PI * PI).sqrt();
    println!(
        "resting orbit: t* = {:.9} ({:?}), linearization {linear}",
        point.time, point.kind
    );

    let rotating = PhaseState::new(vec![0.0], vec![1.0], 0.0);
    match scan_conjugate(&well, &rotating, 20.0, 1e-3)? {
        Some(p) => println!("rotating orbit: conjugate point at {:.6}", p.time),
        None => println!("rotating orbit: no conjugate point up to t = 20"),
    }

    let u = FourierPotential::new(
        2,
        vec![
            FourierMode::new(vec![1, 0], 0, 0.1, 0.0),
            FourierMode::new(vec![0, 1], 1, 0.06, 0.4),
        ],
        0.0,
    )?
    .normalize();
    let start = PhaseState::new(vec![0.0, 0.3], vec![1.5, 0.7], 0.0);
    let orbit = integrate(&u, &start, 1.0, 1e-4)?;
    let record = propagate_jacobi(&u, &orbit)?;
    let samples = riccati_diagnostics(&u, &record, (0.2, 0.8))?;
    let worst = samples
        .iter()
        .map(|s| s.matrix_residual)
        .fold(0.0, f64::max);
    let gap = samples
        .iter()
        .map(|s| s.trace_gap)
        .fold(f64::INFINITY, f64::min);
    println!(
        "Riccati on [0.2, 0.8]: {} samples, max |A' + A^2 + Hess| = {worst:.2e}, min (tr A^2 - a^2/n) = {gap:.3e}",
        samples.len()
    );
    Ok(())
}
