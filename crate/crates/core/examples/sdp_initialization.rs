//! Monte Carlo quality of the convex initialisation on the four-anchor
//! scene: fraction of initial positions within 0.3 m of truth for K = 2, 3, 4.
//!
//! ```text
//! cargo run --release --example sdp_initialization -- [trials] [angle|chord] [free|tie] [first|last]
//! ```

use mema_toa::frames::Pose;
use mema_toa::measurement::form_tdoa;
use mema_toa::scenario::{build_four_anchor_scene, substream, synthesize_epoch};
use mema_toa::sdp_init::{solve_window, Geometry, SdpOptions, YawLift};
use rayon::prelude::*;

fn main() {
    let trials: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    let scene = build_four_anchor_scene();
    let geom = Geometry::from_scenario(&scene);
    let args: Vec<String> = std::env::args().collect();
    let opts = SdpOptions {
        yaw_lift: if args.get(2).map(String::as_str) == Some("chord") {
            YawLift::Chord
        } else {
            YawLift::Angle
        },
        tie_rotated_center: args.get(3).map(String::as_str) == Some("tie"),
        ..SdpOptions::default()
    };
    let last = args.get(4).map(String::as_str) != Some("first");
    println!(
        "windows {}",
        if last {
            "ending at the final epoch"
        } else {
            "starting at the first epoch"
        }
    );
    println!(
        "yaw lift {:?}, tied Rᵀp_c {}",
        opts.yaw_lift, opts.tie_rotated_center
    );
    for k in 2..=4usize {
        let results: Vec<Option<(bool, usize, f64)>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut bundles = Vec::new();
                let mut inter = Vec::new();
                let mut truth: Vec<Pose> = Vec::new();
                let start = if last { scene.num_epochs() - k } else { 0 };
                for e in start..start + k {
                    let mut rng = substream(7, t, e as u64);
                    let (m, pose) = synthesize_epoch(&scene, e, &mut rng);
                    bundles.push(form_tdoa(&m, scene.noise.sigma).ok());
                    if e > start {
                        inter.push(m.inter_epoch.expect("later epochs carry inter-epoch data"));
                    }
                    truth.push(pose);
                }
                let init = solve_window(&geom, &bundles, &inter, &scene.noise, &opts).ok()?;
                let err = |i: usize| {
                    ((init.poses[i].x - truth[i].x).powi(2)
                        + (init.poses[i].y - truth[i].y).powi(2))
                    .sqrt()
                };
                let newest = err(k - 1) < 0.3;
                let pooled = (0..k).filter(|&i| err(i) < 0.3).count();
                Some((newest, pooled, init.max_rank_gap()))
            })
            .collect();
        let ok: Vec<_> = results.iter().flatten().collect();
        let newest = ok.iter().filter(|r| r.0).count() as f64 / trials as f64;
        let pooled = ok.iter().map(|r| r.1).sum::<usize>() as f64 / (trials as f64 * k as f64);
        let gap = ok.iter().map(|r| r.2).sum::<f64>() / ok.len().max(1) as f64;
        println!(
            "K={k}: within 0.3 m  newest epoch {newest:.3}  all epochs {pooled:.3}  failures {}  mean rank gap {gap:.3}",
            trials as usize - ok.len()
        );
    }
}
