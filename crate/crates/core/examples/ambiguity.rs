//! Location ambiguity on the first epoch of the four-anchor scene: basins of
//! the single-epoch cost found by exhaustive grid search, where randomly
//! started single-epoch solves end up, and the same data through a 3-epoch
//! window.
//!
//! ```text
//! cargo run --release --example ambiguity -- [trials]
//! ```

use mema_toa::harness::{run_monte_carlo, ExperimentConfig, Method, SemaInit};
use mema_toa::measurement::form_tdoa;
use mema_toa::refine::{oracle_grid_mle, GridSpec, WindowData};
use mema_toa::scenario::{build_four_anchor_scene, substream, synthesize_epoch, NoiseLevels};

fn main() -> mema_toa::Result<()> {
    let trials = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    let scene = build_four_anchor_scene();
    let quiet = scene.with_noise(NoiseLevels {
        sigma: 1e-300,
        sigma_p: 1e-300,
        sigma_psi: 1e-300,
    });
    let (m, truth) = synthesize_epoch(&quiet, 0, &mut substream(1, 0, 0));
    let bundles = [form_tdoa(&m, 1.0).ok()];
    let data = WindowData {
        scenario: &quiet,
        bundles: &bundles,
        inter: &[],
        noise: NoiseLevels {
            sigma: 1.0,
            ..quiet.noise
        },
    };
    let grid = GridSpec {
        x: (-2.0, 30.0),
        y: (-24.0, 6.0),
        resolution: 0.5,
        yaw_cells: 72,
        max_cost: f64::INFINITY,
    };
    println!(
        "truth ({:.2}, {:.2}) yaw {:.3}; {} TOAs",
        truth.x,
        truth.y,
        truth.yaw(),
        m.toas.len()
    );
    let minima = oracle_grid_mle(&data, &grid)?;
    for b in &minima {
        let p = &b.poses[0];
        println!(
            "  basin at ({:.2}, {:.2}) yaw {:.3}, cost {:.3} m²",
            p.x,
            p.y,
            p.yaw(),
            b.cost
        );
    }

    let mut cfg = ExperimentConfig::new("four_anchor.json");
    cfg.method = Method::Sema;
    cfg.epochs = 1;
    cfg.trials = trials;
    cfg.seed = 17;
    cfg.sema_init = SemaInit::Random;
    let sema = run_monte_carlo(&cfg, &scene)?;
    let first: Vec<_> = sema
        .records
        .iter()
        .filter(|r| r.epoch == 0 && r.has_estimate())
        .collect();
    for b in &minima {
        let p = &b.poses[0];
        let near = first
            .iter()
            .filter(|r| (r.est_x - p.x).hypot(r.est_y - p.y) < 1.0)
            .count();
        println!(
            "  {near}/{} random-start single-epoch solves end within 1 m of ({:.1}, {:.1})",
            first.len(),
            p.x,
            p.y
        );
    }
    cfg.method = Method::Mema;
    cfg.epochs = 3;
    let mema = run_monte_carlo(&cfg, &scene)?;
    let far = mema
        .records
        .iter()
        .filter(|r| !r.has_estimate() || r.horizontal_error() > 1.0)
        .count();
    println!(
        "single epoch: {:.1} % of estimates >1 m; 3-epoch window: {far} of {} estimates >1 m",
        100.0 * sema.summary[0].ambiguity_fraction,
        mema.records.len()
    );
    Ok(())
}
