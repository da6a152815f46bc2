//! D_alpha = A + B over a range of stretch factors in dimensions 2 to 5,
//! with the fitted scaling exponents and the analytic bounds.

use newtonlab::hopf::{alpha_sweep, default_grid, fitted_slopes, log_spaced, CutoffFunction};
use newtonlab::{FourierMode, FourierPotential};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let u = FourierPotential::new(
        3,
        vec![
            FourierMode::new(vec![1, 0, 0], 0, 0.3, 0.0),
            FourierMode::new(vec![0, 1, 1], 0, 0.2, 0.5),
            FourierMode::new(vec![1, 0, 0], 1, 0.03, 1.0),
        ],
        0.0,
    )?
    .normalize();
    let rho = CutoffFunction::default_for(1.0, u.upper_bound()?)?;
    let alphas = log_spaced(1e-3, 0.9, 16);
    for n in 3..=5 {
        let sweep = alpha_sweep(&u, &rho, n, &alphas, &default_grid(&u, n)?)?;
        let (sa, sb) = fitted_slopes(&sweep.reports, 1e-3, 1e-1);
        println!(
            "n = {n}: slope A {:+.4} (expect {:+.1}), slope |B| {:+.4} (expect {:+.1}), largest alpha with D < 0: {:?}",
            sa.unwrap_or(f64::NAN),
            (4.0 - n as f64) / 2.0,
            sb.unwrap_or(f64::NAN),
            (2.0 - n as f64) / 2.0,
            sweep.largest_negative_alpha
        );
    }

    println!(
        "{:>10} {:>14} {:>14} {:>14} {:>14}",
        "alpha", "A", "A bound", "B", "B bound"
    );
    let sweep = alpha_sweep(
        &u,
        &rho,
        3,
        &log_spaced(0.01, 0.9, 6),
        &default_grid(&u, 3)?,
    )?;
    for r in &sweep.reports {
        println!(
            "{:>10.4} {:>14.6} {:>14.6} {:>14.6} {:>14.6}",
            r.alpha,
            r.a_exact,
            r.a_bound.unwrap_or(f64::NAN),
            r.b_exact,
            r.b_bound.unwrap_or(f64::NAN)
        );
    }

    let planar: Vec<FourierMode> = u
        .modes()
        .iter()
        .filter(|m| m.k[2] == 0)
        .map(|m| FourierMode::new(m.k[..2].to_vec(), m.m, m.amplitude, m.phase))
        .collect();
    let flat = FourierPotential::new(2, planar, 0.0)?.normalize();
    let rho2 = CutoffFunction::default_for(1.0, flat.upper_bound()?)?;
    let sweep = alpha_sweep(&flat, &rho2, 2, &[0.5, 0.05], &default_grid(&flat, 2)?)?;
    for r in &sweep.reports {
        println!(
            "n = 2, alpha = {}: B = {} (degenerate), D = {:.6}",
            r.alpha, r.b_exact, r.d_alpha
        );
    }
    Ok(())
}
