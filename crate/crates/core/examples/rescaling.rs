//! Orbits of H_eps = |p|^2/2 + eps^2 u(q, eps t) are rescaled orbits of H:
//! compare the mapped orbit with a direct integration.

use newtonlab::{integrate, rescale_orbit, FourierMode, FourierPotential, PhaseState, Rescaled};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let u = FourierPotential::new(
        3,
        vec![
            FourierMode::new(vec![1, 0, 0], 1, 0.3, 0.0),
            FourierMode::new(vec![0, 1, -1], 0, 0.2, 0.7),
            FourierMode::new(vec![1, 1, 1], 2, 0.1, 1.3),
        ],
        0.0,
    )?;
    let h = 1e-4;
    for eps in [0.5, 0.25, 0.1] {
        let slow = PhaseState::new(vec![0.1, 0.2, 0.3], vec![1.0, -0.5, 0.25], 0.0);
        let fast = PhaseState::new(
            slow.q.clone(),
            slow.p.iter().map(|x| x / eps).collect(),
            0.0,
        );
        let direct = integrate(&Rescaled::new(&u, eps), &slow, 1.0, h)?;
        let mapped = rescale_orbit(&integrate(&u, &fast, eps, eps * h)?, eps)?;
        println!(
            "eps = {eps:<4}: |p| of the H orbit = {:.2}, max deviation over unit time = {:.2e}",
            fast.momentum_norm(),
            mapped.max_deviation(&direct)
        );
    }
    Ok(())
}
