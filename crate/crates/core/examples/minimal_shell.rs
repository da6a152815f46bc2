//! Fraction of a momentum shell without conjugate points, and a witness
//! search on a shell where conjugate points are expected.

use newtonlab::minimal_set::{estimate_fraction, find_witness, ShellSpec};
use newtonlab::{FourierMode, FourierPotential};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pendulum =
        FourierPotential::new(1, vec![FourierMode::new(vec![1], 0, 0.1, 0.0)], 0.0)?.normalize();
    let above = (2.0 * pendulum.upper_bound()?).sqrt() + 0.2;
    let spec = ShellSpec::new(1, above, above + 1.0, 200, 1);
    let report = estimate_fraction(&pendulum, &spec)?;
    println!(
        "n = 1 above the separatrix: fraction {} (95% interval [{:.3}, {:.3}]), {} witnesses, horizon {}",
        report.fraction,
        report.interval.0,
        report.interval.1,
        report.witnesses.len(),
        spec.horizon
    );

    let u = FourierPotential::new(
        3,
        vec![
            FourierMode::new(vec![1, 0, 0], 0, 0.3, 0.0),
            FourierMode::new(vec![0, 1, 1], 0, 0.2, 0.5),
        ],
        0.0,
    )?
    .normalize();
    let spec = ShellSpec::new(3, 2.5, 3.5, 1000, 7).with_horizon(50.0);
    let search = find_witness(&u, &spec, 1000)?;
    match &search.witness {
        Some(w) => println!(
            "n = 3: witness after {} orbits, |p| = {:.3}, t* = {:.6}, half step {:.6?}, validated {}",
            search.searched,
            w.initial.momentum_norm(),
            w.first_conjugate_time,
            w.half_step_time,
            w.validated
        ),
        None => println!("n = 3: no witness among {} orbits", search.searched),
    }
    Ok(())
}
