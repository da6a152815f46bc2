//! Building a trigonometric potential, fixing its gauge and checking the
//! Parseval norms against grid quadrature.
//!
//! ```text
//! cargo run --example potential
//! ```

use newtonlab::{FourierMode, FourierPotential, PeriodicGrid, Potential};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = FourierPotential::new(
        2,
        vec![
            FourierMode::new(vec![1, 0], 0, 0.3, 0.0),
            FourierMode::new(vec![1, -1], 1, 0.1, 0.7),
        ],
        0.0,
    )?;
    let u = raw.normalize();
    let gauge = u.gauge().expect("normalized");
    println!(
        "shift {:+.6}, 0 <= u <= M = {:.6}",
        gauge.shift, gauge.upper_bound
    );

    let (q, t) = ([0.2, 0.4], 0.3);
    println!("u = {:.6}, u_t = {:.6}", u.eval(&q, t), u.du_dt(&q, t));
    println!("grad = {:?}", u.grad_q(&q, t).as_slice());
    println!("laplacian = {:.6}", u.laplacian(&q, t));

    let grid = PeriodicGrid::resolving(&u.bandwidth(), 4);
    println!(
        "int u_t^2: Parseval {:.12}, grid {:.12}",
        u.l2_ut(),
        u.l2_ut_grid(&grid)
    );
    println!(
        "int |grad u|^2: Parseval {:.12}, grid {:.12}",
        u.l2_gradu(),
        u.l2_gradu_grid(&grid)
    );
    println!("{}", serde_json::to_string_pretty(&raw)?);
    Ok(())
}
