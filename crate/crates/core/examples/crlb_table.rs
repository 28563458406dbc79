//! Position and yaw bounds on the four-anchor scene: single epoch against
//! windows of 2 to 4 epochs, and the effect of the inter-epoch noise.
//!
//! ```text
//! cargo run --release --example crlb_table
//! ```

use mema_toa::crlb::{fim_mema, InterEpoch};
use mema_toa::measurement::form_tdoa;
use mema_toa::scenario::{build_four_anchor_scene, substream, synthesize_epoch, NoiseLevels};

fn main() -> mema_toa::Result<()> {
    let scene = build_four_anchor_scene();
    let layouts: Vec<_> = (0..scene.num_epochs())
        .map(|k| {
            let (m, _) = synthesize_epoch(&scene, k, &mut substream(0, 0, k as u64));
            form_tdoa(&m, scene.noise.sigma).ok().map(|b| b.layout)
        })
        .collect();
    let sigma = scene.noise.sigma;
    let n = scene.num_epochs();

    println!(
        "√CRLB at the last epoch, σ = {sigma} m, σ_p = {} m, σ_ψ = {} rad",
        scene.noise.sigma_p, scene.noise.sigma_psi
    );
    let alone = fim_mema(
        &scene.trajectory,
        &layouts,
        &scene,
        sigma,
        InterEpoch::Unused,
    )?;
    println!(
        "  single epoch: {:.4} m  {:.5} rad",
        alone.position(n - 1).sqrt(),
        alone.yaw(n - 1).sqrt()
    );
    for k in 2..=n {
        let fi = fim_mema(
            &scene.trajectory[n - k..],
            &layouts[n - k..],
            &scene,
            sigma,
            InterEpoch::from_noise(&scene.noise),
        )?;
        println!(
            "  K = {k}:        {:.4} m  {:.5} rad",
            fi.position(k - 1).sqrt(),
            fi.yaw(k - 1).sqrt()
        );
    }

    println!("√CRLB pooled over a 4-epoch window against σ_p (σ = {sigma} m)");
    for psi in [0.1, 0.5] {
        let row: Vec<String> = (1..=10)
            .map(|i| {
                let noise = NoiseLevels {
                    sigma,
                    sigma_p: 0.05 * i as f64,
                    sigma_psi: psi,
                };
                let fi = fim_mema(
                    &scene.trajectory,
                    &layouts,
                    &scene,
                    sigma,
                    InterEpoch::from_noise(&noise),
                )
                .expect("observable");
                let pos = (0..n).map(|e| fi.position(e)).sum::<f64>() / n as f64;
                format!("{:.4}", pos.sqrt())
            })
            .collect();
        println!("  σ_ψ = {psi}: {}", row.join(" "));
    }
    Ok(())
}
