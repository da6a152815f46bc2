//! Kick-drift-kick integration: energy behaviour on an autonomous
//! potential, the time-1 map and a CSV dump of one orbit.

use newtonlab::{
    energy, integrate, time_one_map, FourierMode, FourierPotential, PhaseState, StepPolicy,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let u = FourierPotential::new(
        2,
        vec![
            FourierMode::new(vec![1, 0], 0, 0.1, 0.0),
            FourierMode::new(vec![1, 1], 0, 0.05, 0.3),
        ],
        0.0,
    )?
    .normalize();
    let start = PhaseState::new(vec![0.1, 0.2], vec![0.8, -0.3], 0.0);
    let h = StepPolicy::default().step_for(&start);

    for duration in [10.0, 100.0] {
        let orbit = integrate(&u, &start, duration, h)?;
        println!(
            "T = {duration:>5}: max |H - H0| = {:.3e}",
            orbit.energy_drift(&u)
        );
    }

    let mut state = start.clone();
    for k in 1..=3 {
        state = time_one_map(&u, &state, h)?;
        println!(
            "phi^{k}: q = {:.6?}, p = {:.6?}, H = {:.9}",
            state.q,
            state.p,
            energy(&u, &state)
        );
    }

    let orbit = integrate(&u, &start, 1.0, 0.01)?;
    let mut out = Vec::new();
    orbit.write_csv(&u, &mut out)?;
    for line in String::from_utf8(out)?.lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
