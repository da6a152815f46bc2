//! Reduced quadrature of D_alpha against direct Monte Carlo over phase
//! space, run through the experiment driver so the JSON report is shown.

use newtonlab::cli::{
    run_with_threads, CrosscheckParams, Experiment, ExperimentConfig, GaugeChoice,
};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let potential = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data/torus3.json");
    let config = ExperimentConfig {
        potential,
        out: None,
        csv: None,
        experiment: Experiment::CrosscheckD(CrosscheckParams {
            n: None,
            r: 1.0,
            alpha: 0.5,
            samples: 200_000,
            seed: 3,
            support: None,
            points_per_frequency: 8,
            sigmas: 3.0,
            gauge: GaugeChoice::Constant,
        }),
    };
    let (_, output) = run_with_threads(&config, None)?;
    let report: serde_json::Value = serde_json::from_str(&output.report)?;
    let r = &report["result"];
    println!(
        "quadrature D = {}, Monte Carlo D = {} +/- {}, pass = {}",
        r["quadrature"]["d_alpha"],
        r["monte_carlo"]["d"]["estimate"],
        r["monte_carlo"]["d"]["std_error"],
        r["pass"]
    );
    println!("{}", output.report);
    Ok(())
}
