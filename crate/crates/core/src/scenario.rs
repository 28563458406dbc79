//! Simulated worlds: anchors, antenna lever arms, obstacle boxes, the vehicle
//! trajectory, line-of-sight visibility and noisy measurement synthesis.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{antenna_position, wrap_angle, Attitude, Pose};
use crate::measurement::{predict_inter_epoch, EpochMeasurements, Toa};

/// Axis-aligned box given by its two extreme corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    /// Whether the open segment `a → b` passes through the box interior.
    ///
    /// Slab test restricted to `t ∈ (0, 1)`; grazing contact with a face is
    /// not counted as a blockage.
    pub fn blocks_segment(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        const EPS: f64 = 1e-9;
        let d = b - a;
        let mut t0 = EPS;
        let mut t1 = 1.0 - EPS;
        for axis in 0..3 {
            let (lo, hi) = (self.min[axis], self.max[axis]);
            if d[axis].abs() < 1e-15 {
                if a[axis] <= lo || a[axis] >= hi {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / d[axis];
            let mut ta = (lo - a[axis]) * inv;
            let mut tb = (hi - a[axis]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return false;
            }
        }
        true
    }
}

/// Constant or per-epoch receiver clock bias, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClockBias {
    Constant(f64),
    PerEpoch(Vec<f64>),
}

impl ClockBias {
    pub fn at(&self, epoch: usize) -> f64 {
        match self {
            ClockBias::Constant(b) => *b,
            ClockBias::PerEpoch(v) => v[epoch.min(v.len() - 1)],
        }
    }
}

/// Noise standard deviations: TOA (m), inter-epoch position change (m) and
/// inter-epoch yaw change (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub sigma: f64,
    pub sigma_p: f64,
    pub sigma_psi: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            sigma_p: 0.1,
            sigma_psi: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Either explicit per-epoch poses or a polyline path sampled at constant
/// speed, with corners rounded by circular arcs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrajectorySpec {
    Poses(Vec<PoseSpec>),
    Path {
        waypoints: Vec<[f64; 2]>,
        epochs: usize,
        turn_radius: f64,
        #[serde(default)]
        closed: bool,
    },
}

/// Per epoch, per antenna: ordered indices of visible anchors.
pub type VisibilityMap = Vec<Vec<Vec<usize>>>;

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub version: u32,
    pub anchors: Vec<[f64; 3]>,
    pub levers: Vec<[f64; 3]>,
    #[serde(default)]
    pub obstacles: Vec<Aabb>,
    /// Box carried by the vehicle, in body coordinates.
    #[serde(default)]
    pub goods: Option<Aabb>,
    pub height: f64,
    #[serde(default)]
    pub roll: f64,
    #[serde(default)]
    pub pitch: f64,
    pub clock_bias: ClockBias,
    pub noise: NoiseLevels,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub visibility_override: Option<VisibilityMap>,
}

/// A validated, ready-to-simulate world.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub anchors: Vec<Vector3<f64>>,
    pub levers: Vec<Vector3<f64>>,
    pub obstacles: Vec<Aabb>,
    pub goods: Option<Aabb>,
    pub h: f64,
    pub roll: f64,
    pub pitch: f64,
    pub clock_bias: ClockBias,
    pub noise: NoiseLevels,
    pub trajectory: Vec<Pose>,
    pub visibility_override: Option<VisibilityMap>,
}

impl Scenario {
    pub fn from_config(cfg: ScenarioConfig) -> Result<Self> {
        let trajectory = match &cfg.trajectory {
            TrajectorySpec::Poses(p) => p
                .iter()
                .map(|s| {
                    Pose::new(
                        s.x,
                        s.y,
                        Attitude::new(s.yaw, cfg.roll, cfg.pitch),
                        cfg.height,
                    )
                })
                .collect(),
            TrajectorySpec::Path {
                waypoints,
                epochs,
                turn_radius,
                closed,
            } => sample_path(waypoints, *epochs, *turn_radius, *closed)?
                .into_iter()
                .map(|(x, y, yaw)| {
                    Pose::new(x, y, Attitude::new(yaw, cfg.roll, cfg.pitch), cfg.height)
                })
                .collect(),
        };
        let scenario = Scenario {
            name: cfg.name,
            anchors: cfg.anchors.iter().map(|a| Vector3::from(*a)).collect(),
            levers: cfg.levers.iter().map(|l| Vector3::from(*l)).collect(),
            obstacles: cfg.obstacles,
            goods: cfg.goods,
            h: cfg.height,
            roll: cfg.roll,
            pitch: cfg.pitch,
            clock_bias: cfg.clock_bias,
            noise: cfg.noise,
            trajectory,
            visibility_override: cfg.visibility_override,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let cfg: ScenarioConfig = serde_json::from_str(&text)?;
        Self::from_config(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.anchors.is_empty() {
            return bad("no anchors".into());
        }
        if self.levers.is_empty() {
            return bad("no antennas".into());
        }
        if self.trajectory.is_empty() {
            return bad("empty trajectory".into());
        }
        let n = self.noise;
        if !(n.sigma > 0.0 && n.sigma_p > 0.0 && n.sigma_psi > 0.0) {
            return bad(format!("noise levels must be positive, got {n:?}"));
        }
        if let ClockBias::PerEpoch(v) = &self.clock_bias {
            if v.len() < self.trajectory.len() {
                return bad("per-epoch clock bias shorter than trajectory".into());
            }
        }
        for p in &self.trajectory {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return bad("non-finite trajectory pose".into());
            }
        }
        if let Some(vis) = &self.visibility_override {
            if vis.len() < self.trajectory.len() {
                return bad("visibility override shorter than trajectory".into());
            }
            for (k, epoch) in vis.iter().enumerate() {
                if epoch.len() != self.levers.len() {
                    return bad(format!(
                        "epoch {k}: visibility lists {} antennas",
                        epoch.len()
                    ));
                }
                for set in epoch {
                    if set.iter().any(|&j| j >= self.anchors.len()) {
                        return bad(format!("epoch {k}: anchor index out of range"));
                    }
                    if set.windows(2).any(|w| w[0] >= w[1]) {
                        return bad(format!(
                            "epoch {k}: anchor sets must be strictly increasing"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.levers.len()
    }

    pub fn num_epochs(&self) -> usize {
        self.trajectory.len()
    }

    /// Copy of the scenario with different noise levels.
    pub fn with_noise(&self, noise: NoiseLevels) -> Self {
        Self {
            noise,
            ..self.clone()
        }
    }

    /// Copy with all obstacles (ground and vehicle-mounted) removed.
    pub fn without_obstacles(&self) -> Self {
        Self {
            obstacles: Vec::new(),
            goods: None,
            visibility_override: None,
            ..self.clone()
        }
    }

    /// Horizontal bounding box of the anchors, `(min, max)`.
    pub fn anchor_bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for a in &self.anchors {
            for d in 0..2 {
                lo[d] = lo[d].min(a[d]);
                hi[d] = hi[d].max(a[d]);
            }
        }
        (lo, hi)
    }

    /// Visible anchors per antenna at epoch `k`, evaluated at the true pose.
    pub fn visibility(&self, k: usize) -> Vec<Vec<usize>> {
        if let Some(vis) = &self.visibility_override {
            return vis[k].clone();
        }
        let pose = &self.trajectory[k];
        self.levers
            .iter()
            .map(|l| {
                let p = antenna_position(pose, l);
                (0..self.anchors.len())
                    .filter(|&j| los_visible_at(&p, &self.anchors[j], self, pose))
                    .collect()
            })
            .collect()
    }

    pub fn visibility_map(&self) -> VisibilityMap {
        (0..self.num_epochs()).map(|k| self.visibility(k)).collect()
    }
}

/// Line of sight between an antenna and an anchor, with the vehicle goods box
/// placed by `pose`.
pub fn los_visible_at(
    antenna_pos: &Vector3<f64>,
    anchor_pos: &Vector3<f64>,
    scenario: &Scenario,
    pose: &Pose,
) -> bool {
    if scenario
        .obstacles
        .iter()
        .any(|b| b.blocks_segment(antenna_pos, anchor_pos))
    {
        return false;
    }
    if let Some(goods) = &scenario.goods {
        let rt = pose.rotation().transpose();
        let a = rt * (antenna_pos - pose.center());
        let b = rt * (anchor_pos - pose.center());
        if goods.blocks_segment(&a, &b) {
            return false;
        }
    }
    true
}

/// Line of sight against the ground obstacles only; the vehicle box is
/// ignored because no pose is given.
pub fn los_visible(
    antenna_pos: &Vector3<f64>,
    anchor_pos: &Vector3<f64>,
    scenario: &Scenario,
) -> bool {
    !scenario
        .obstacles
        .iter()
        .any(|b| b.blocks_segment(antenna_pos, anchor_pos))
}

/// Independent RNG stream for one `(trial, epoch)` cell of an experiment.
pub fn substream(master_seed: u64, trial: u64, epoch: u64) -> ChaCha8Rng {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let s = splitmix(
        splitmix(splitmix(master_seed) ^ trial) ^ epoch.wrapping_mul(0xD6E8_FEB8_6659_FD93),
    );
    ChaCha8Rng::seed_from_u64(s)
}

/// Simulates TOAs and the inter-epoch change measurement for epoch `k`.
///
/// TOAs follow `ρ = ‖p_anchor − p_antenna‖ + δt + ε` with `ε ~ N(0, σ²)`; the
/// inter-epoch measurement is the true change in the previous body frame plus
/// `N(0, σ_p²)`, `N(0, σ_p²)`, `N(0, σ_ψ²)` noise. The first epoch has no
/// inter-epoch measurement.
pub fn synthesize_epoch<R: Rng + ?Sized>(
    scenario: &Scenario,
    k: usize,
    rng: &mut R,
) -> (EpochMeasurements, Pose) {
    let truth = scenario.trajectory[k];
    let vis = scenario.visibility(k);
    let bias = scenario.clock_bias.at(k);
    let noise = scenario.noise;
    let toa_noise = Normal::new(0.0, noise.sigma).expect("sigma validated");
    let mut toas = Vec::new();
    for (i, set) in vis.iter().enumerate() {
        let p = antenna_position(&truth, &scenario.levers[i]);
        for &j in set {
            let range = (scenario.anchors[j] - p).norm();
            toas.push(Toa {
                antenna: i,
                anchor: j,
                value: range + bias + toa_noise.sample(rng),
            });
        }
    }
    let inter_epoch = (k > 0).then(|| {
        let prev = scenario.trajectory[k - 1];
        let mut d = predict_inter_epoch(&truth, &prev);
        let np = Normal::new(0.0, noise.sigma_p).expect("sigma_p validated");
        let ny = Normal::new(0.0, noise.sigma_psi).expect("sigma_psi validated");
        d[0] += np.sample(rng);
        d[1] += np.sample(rng);
        d[2] = wrap_angle(d[2] + ny.sample(rng));
        d
    });
    (
        EpochMeasurements {
            num_antennas: scenario.num_antennas(),
            toas,
            inter_epoch,
        },
        truth,
    )
}

fn sample_path(
    waypoints: &[[f64; 2]],
    epochs: usize,
    turn_radius: f64,
    closed: bool,
) -> Result<Vec<(f64, f64, f64)>> {
    #[derive(Debug)]
    enum Piece {
        Line {
            from: [f64; 2],
            dir: [f64; 2],
            len: f64,
        },
        Arc {
            center: [f64; 2],
            radius: f64,
            start: f64,
            sweep: f64,
        },
    }
    impl Piece {
        fn len(&self) -> f64 {
            match self {
                Piece::Line { len, .. } => *len,
                Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
            }
        }
        fn at(&self, s: f64) -> (f64, f64, f64) {
            match self {
                Piece::Line { from, dir, .. } => (
                    from[0] + dir[0] * s,
                    from[1] + dir[1] * s,
                    dir[1].atan2(dir[0]),
                ),
                Piece::Arc {
                    center,
                    radius,
                    start,
                    sweep,
                } => {
                    let a = start + sweep.signum() * s / radius;
                    let heading = a + sweep.signum() * PI / 2.0;
                    (
                        center[0] + radius * a.cos(),
                        center[1] + radius * a.sin(),
                        wrap_angle(heading),
                    )
                }
            }
        }
    }

    if waypoints.len() < 2 || epochs == 0 {
        return Err(Error::InvalidScenario(
            "path needs at least two waypoints and one epoch".into(),
        ));
    }
    let mut pts: Vec<[f64; 2]> = waypoints.to_vec();
    if closed {
        pts.push(pts[0]);
    }
    let n = pts.len();
    let unit = |a: [f64; 2], b: [f64; 2]| {
        let d = [b[0] - a[0], b[1] - a[1]];
        let l = (d[0] * d[0] + d[1] * d[1]).sqrt();
        ([d[0] / l, d[1] / l], l)
    };
    // Corner fillets: the corner at pts[c] is replaced by an arc whose
    // tangent points lie `t` before and after it.
    let corner_ids: Vec<usize> = if closed {
        (0..n - 1).collect()
    } else {
        (1..n - 1).collect()
    };
    let mut trims = vec![0.0; n];
    let mut arcs = vec![None; n];
    for &c in &corner_ids {
        let prev = if c == 0 { pts[n - 2] } else { pts[c - 1] };
        let next = pts[c + 1];
        let (d1, _) = unit(prev, pts[c]);
        let (d2, _) = unit(pts[c], next);
        let cross = d1[0] * d2[1] - d1[1] * d2[0];
        let dot = (d1[0] * d2[0] + d1[1] * d2[1]).clamp(-1.0, 1.0);
        let theta = cross.atan2(dot);
        if theta.abs() < 1e-9 {
            continue;
        }
        let t = turn_radius * (theta.abs() / 2.0).tan();
        trims[c] = t;
        let start_pt = [pts[c][0] - d1[0] * t, pts[c][1] - d1[1] * t];
        // Center lies to the left for counter-clockwise turns.
        let normal = if theta > 0.0 {
            [-d1[1], d1[0]]
        } else {
            [d1[1], -d1[0]]
        };
        let center = [
            start_pt[0] + normal[0] * turn_radius,
            start_pt[1] + normal[1] * turn_radius,
        ];
        let start = (start_pt[1] - center[1]).atan2(start_pt[0] - center[0]);
        arcs[c] = Some((center, start, theta));
    }
    let mut pieces = Vec::new();
    for s in 0..n - 1 {
        let (dir, len) = unit(pts[s], pts[s + 1]);
        let head_trim = trims[s];
        let tail_trim = if closed && s + 1 == n - 1 {
            trims[0]
        } else {
            trims[s + 1]
        };
        let line_len = len - head_trim - tail_trim;
        if line_len < -1e-9 {
            return Err(Error::InvalidScenario(format!(
                "turn radius too large for path segment {s}"
            )));
        }
        pieces.push(Piece::Line {
            from: [
                pts[s][0] + dir[0] * head_trim,
                pts[s][1] + dir[1] * head_trim,
            ],
            dir,
            len: line_len.max(0.0),
        });
        let next_corner = if closed && s + 1 == n - 1 { 0 } else { s + 1 };
        if let Some((center, start, sweep)) = arcs[next_corner] {
            pieces.push(Piece::Arc {
                center,
                radius: turn_radius,
                start,
                sweep,
            });
        }
    }
    // For closed loops the first corner arc sits at the end of the list, so
    // sampling starts right after it on the first straight segment.
    let total: f64 = pieces.iter().map(Piece::len).sum();
    let step = if closed || epochs == 1 {
        total / epochs as f64
    } else {
        total / (epochs - 1) as f64
    };
    let mut out = Vec::with_capacity(epochs);
    for k in 0..epochs {
        let mut s = (k as f64 * step).min(total);
        let mut sample = None;
        for p in &pieces {
            if s <= p.len() {
                sample = Some(p.at(s));
                break;
            }
            s -= p.len();
        }
        out.push(sample.unwrap_or_else(|| {
            let last = pieces.last().expect("non-empty path");
            last.at(last.len())
        }));
    }
    Ok(out)
}

/// Four-anchor 80 m × 80 m scene with three antennas and a four-epoch
/// trajectory whose visible-anchor sets are fixed explicitly.
pub fn build_four_anchor_scene() -> Scenario {
    let cfg: ScenarioConfig = serde_json::from_str(include_str!("../scenarios/four_anchor.json"))
        .expect("bundled scenario");
    Scenario::from_config(cfg).expect("bundled scenario is valid")
}

/// Cargo-port scene: 17 anchors at 8 m, three plate-mounted antennas, a goods
/// box on the vehicle and container stacks along a 290-epoch loop.
pub fn build_port_scene() -> Scenario {
    let cfg: ScenarioConfig =
        serde_json::from_str(include_str!("../scenarios/port.json")).expect("bundled scenario");
    Scenario::from_config(cfg).expect("bundled scenario is valid")
}
