//! Multi-epoch refinement against the single-epoch solver on the four-anchor
//! scene, both started at the truth, for a sweep of TOA noise levels.
//!
//! ```text
//! cargo run --release --example mema_vs_sema -- [trials]
//! ```

use mema_toa::harness::{run_monte_carlo, ExperimentConfig, Method, SemaInit};
use mema_toa::scenario::build_four_anchor_scene;

fn main() -> mema_toa::Result<()> {
    let trials = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let scene = build_four_anchor_scene();
    let mut mema = ExperimentConfig::new("four_anchor.json");
    mema.epochs = 4;
    mema.trials = trials;
    mema.seed = 11;
    mema.sweep.sigma = vec![0.05, 0.1, 0.2, 0.3, 0.5];
    let mut sema = mema.clone();
    sema.method = Method::Sema;
    sema.epochs = 1;
    sema.sema_init = SemaInit::Truth;
    let (a, b) = (
        run_monte_carlo(&mema, &scene)?,
        run_monte_carlo(&sema, &scene)?,
    );
    println!(
        "sigma  MEMA pos  CRLB pos  SEMA pos  CRLB pos  MEMA yaw  CRLB yaw  SEMA yaw  CRLB yaw"
    );
    for noise in mema.noise_points(&scene) {
        let (m, s) = (a.pooled(&noise).unwrap(), b.pooled(&noise).unwrap());
        let f = |v: Option<f64>| v.unwrap_or(f64::NAN);
        println!(
            "{:.2}   {:.4}    {:.4}    {:.4}    {:.4}    {:.4}    {:.4}    {:.4}    {:.4}",
            noise.sigma,
            m.rmse_position,
            f(m.crlb_position),
            s.rmse_position,
            f(s.crlb_position),
            m.rmse_yaw,
            f(m.crlb_yaw),
            s.rmse_yaw,
            f(s.crlb_yaw)
        );
    }
    Ok(())
}
