//! Cargo-port trajectory: visible anchors per antenna and the per-epoch
//! errors of MEMA (K = 3) against the single-epoch solver.
//!
//! ```text
//! cargo run --release --example port_trajectory -- [scenario.json] [seed]
//! ```

use mema_toa::harness::{run_monte_carlo, ExperimentConfig, Method, SemaInit};
use mema_toa::scenario::Scenario;

fn main() -> mema_toa::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/port.json").into());
    let seed = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(19);
    let scene = Scenario::load(&path)?;
    scene.validate()?;

    let n = scene.num_epochs();
    let counts: Vec<Vec<usize>> = (0..n)
        .map(|k| scene.visibility(k).iter().map(Vec::len).collect())
        .collect();
    for i in 0..scene.num_antennas() {
        let below = counts.iter().filter(|c| c[i] < 4).count();
        let mean = counts.iter().map(|c| c[i]).sum::<usize>() as f64 / n as f64;
        println!("antenna {i}: mean {mean:.1} visible anchors, fewer than 4 at {below}/{n} epochs");
    }
    let totals: Vec<usize> = counts.iter().map(|c| c.iter().sum()).collect();
    println!(
        "all antennas: min {} max {} TOAs per epoch",
        totals.iter().min().unwrap_or(&0),
        totals.iter().max().unwrap_or(&0)
    );

    let mut cfg = ExperimentConfig::new(&path);
    cfg.trials = 1;
    cfg.seed = seed;
    cfg.epochs = 3;
    let mema = run_monte_carlo(&cfg, &scene)?;
    cfg.method = Method::Sema;
    cfg.epochs = 1;
    cfg.sema_init = SemaInit::Random;
    let sema = run_monte_carlo(&cfg, &scene)?;

    for (label, res) in [("MEMA K=3", &mema), ("SEMA", &sema)] {
        let recs = &res.records;
        let good = recs
            .iter()
            .filter(|r| {
                r.has_estimate()
                    && r.err_east.abs() < 0.3
                    && r.err_north.abs() < 0.3
                    && r.err_yaw.abs() < 0.05
            })
            .count();
        let failed = recs.iter().filter(|r| !r.has_estimate()).count();
        let unconverged = recs.iter().filter(|r| !r.converged).count();
        let far = recs
            .iter()
            .filter(|r| !r.has_estimate() || r.horizontal_error() > 1.0)
            .count();
        let g = &res.summary[0];
        println!(
            "{label}: {good}/{} epochs inside 0.3 m / 0.3 m / 0.05 rad, {far} beyond 1 m, {failed} failed, {unconverged} not converged, rmse {:.3} m / {:.4} rad",
            recs.len(),
            g.rmse_position,
            g.rmse_yaw
        );
    }
    if std::env::var_os("PORT_SERIES").is_some() {
        println!("epoch  mema_east  mema_north  mema_yaw  sema_east  sema_north  sema_yaw");
        for (a, b) in mema.records.iter().zip(&sema.records) {
            println!(
                "{}  {:.3}  {:.3}  {:.4}  {:.3}  {:.3}  {:.4}",
                a.epoch, a.err_east, a.err_north, a.err_yaw, b.err_east, b.err_north, b.err_yaw
            );
        }
    }
    Ok(())
}
