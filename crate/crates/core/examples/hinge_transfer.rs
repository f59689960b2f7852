//! Transfers a 30° lid opening onto a 1.5×-scaled hinge and reports how
//! closely the lid follows the scaled reference and how far the base drifts.
//!
//! `cargo run --release -p motrans-core --example hinge_transfer [iters]`

use std::time::Instant;

use motrans::io::RunConfig;
use motrans::kinematics::posed_centers;
use motrans::pipeline::{prepare, Inputs};
use motrans::synth::{synth_scene, SceneKind, SynthParams};
use motrans::transfer::run_transfer;
use motrans::Vec3;

fn centroid(x: &[Vec3], parts: &[usize], part: usize) -> Vec3 {
    let sel: Vec<&Vec3> = x.iter().zip(parts).filter(|(_, p)| **p == part).map(|(x, _)| x).collect();
    sel.iter().copied().sum::<Vec3>() / sel.len() as f64
}

fn main() -> motrans::Result<()> {
    let iters = std::env::args().nth(1).map_or(200, |s| s.parse().expect("iteration count"));
    let params = SynthParams { frames: 6, target_scale: 1.5, ..Default::default() };
    let s = synth_scene(SceneKind::TwoBoxHinge, &params)?;
    let parts = s.particle_parts.clone();
    let inputs = Inputs { particles: s.particles, target: s.target, reference: s.reference, sequence: s.sequence };
    let mut cfg = RunConfig::default();
    cfg.optimizer.iters = iters;
    let t0 = Instant::now();
    let mut prepared = prepare(&inputs, &cfg)?;
    let scale = prepared.scene.s_t / prepared.scene.s_o;
    println!("{} particles, grid {:?}, scale {scale:.4}", inputs.particles.len(), prepared.scene.config.grid.dims);
    let run = run_transfer(&mut prepared.scene, prepared.phases)?;

    let x0 = &run.frames[0].x;
    let (lid0, base0) = (centroid(x0, &parts, 1), centroid(x0, &parts, 0));
    let c0 = posed_centers(&inputs.sequence, 0)?[1];
    let mut path = 0.0;
    let mut worst: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for (k, f) in run.frames.iter().enumerate() {
        let reference = lid0 + (posed_centers(&inputs.sequence, k)?[1] - c0) * scale;
        if k > 0 {
            let prev = posed_centers(&inputs.sequence, k - 1)?[1];
            path += (posed_centers(&inputs.sequence, k)?[1] - prev).norm() * scale;
        }
        let lid = centroid(&f.x, &parts, 1);
        worst = worst.max((lid - reference).norm());
        drift = drift.max((centroid(&f.x, &parts, 0) - base0).norm());
        println!("frame {k}: lid error {:.4e}, base drift {:.4e}", (lid - reference).norm(), (centroid(&f.x, &parts, 0) - base0).norm());
    }
    let (lo, hi) = inputs.particles.bounding_box().expect("particles");
    let diag = (hi - lo).norm();
    println!("lid: worst {worst:.4e} = {:.2}% of path {path:.4e}", 100.0 * worst / path);
    println!("base: drift {drift:.4e} = {:.3}% of diagonal {diag:.4}", 100.0 * drift / diag);
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
