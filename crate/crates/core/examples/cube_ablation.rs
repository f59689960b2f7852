//! Optimized transfer versus manual velocity scales on the synthetic cube.
//!
//! `cargo run --release -p motrans-core --example cube_ablation`

use std::time::Instant;

use motrans::io::RunConfig;
use motrans::pipeline::{run_ablation, Inputs};
use motrans::synth::{synth_scene, SceneKind, SynthParams};

fn main() -> motrans::Result<()> {
    let params = SynthParams { n: 10, spacing: 0.05, ..Default::default() };
    let s = synth_scene(SceneKind::Box, &params)?;
    let inputs = Inputs { particles: s.particles, target: s.target, reference: s.reference, sequence: s.sequence };
    let cfg = RunConfig::default();
    let t0 = Instant::now();
    let report = run_ablation(&inputs, &cfg)?;
    let target = params.box_delta.norm();
    println!("optimized: error {:.4e} ({:.2}% of |delta|)", report.optimized_error, 100.0 * report.optimized_error / target);
    for (a, e) in &report.manual {
        println!("alpha {a}: error {e:.4e} ({:.2}%)", 100.0 * e / target);
    }
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
