//! Times the full pipeline on full-size synthetic data
//! (n = 5000, d = 100, m = 260).

use std::time::Instant;

use loctag::dataset::{synthesize, SynthParams};
use loctag::experiment::{run_experiment, ExperimentConfig};
use loctag::optimizer::StepMode;

fn main() -> loctag::Result<()> {
    let step = match std::env::args().nth(1).as_deref() {
        Some("closed-form") => StepMode::ClosedForm,
        _ => StepMode::Backtracking,
    };
    let t = Instant::now();
    let data = synthesize(SynthParams {
        n: 5000,
        d: 100,
        m: 260,
        kappa: 5,
        noise: 0.1,
        seed: 42,
    })?;
    println!("synthesized in {:.1}s", t.elapsed().as_secs_f64());
    let mut cfg = ExperimentConfig::default();
    cfg.solver.step = step;
    let out = run_experiment(&data.features, &data.tags, &cfg)?;
    let trace = &out.completion.trace;
    println!(
        "{step:?}: MAP {:.4} after {} iterations ({}), {:.1}s total",
        out.report.map,
        trace.records.len(),
        if trace.converged { "converged" } else { "iteration cap" },
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
