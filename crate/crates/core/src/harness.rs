//! Monte Carlo experiments: configuration, per-trial records, summaries and
//! result files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crlb::{fim_mema, fim_sema, InterEpoch};
use crate::error::{Error, Result};
use crate::frames::{wrap_angle, Attitude, Pose};
use crate::measurement::{form_tdoa, EpochMeasurements, TdoaBundle, TdoaLayout};
use crate::refine::{gauss_newton, sema_solve, GaussNewtonOptions, WindowData};
use crate::scenario::{substream, synthesize_epoch, NoiseLevels, Scenario};
use crate::sdp_init::{solve_window, Geometry, SdpOptions};

/// Radius of the initialization quality test (m).
pub const INIT_RADIUS: f64 = 0.3;
/// Distance beyond which a run counts as ambiguous (m).
pub const AMBIGUITY_RADIUS: f64 = 1.0;

const INIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Mema,
    Sema,
    SdpOnly,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mema" => Ok(Method::Mema),
            "sema" => Ok(Method::Sema),
            "sdp-only" => Ok(Method::SdpOnly),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (mema, sema, sdp-only)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mema => "mema",
            Method::Sema => "sema",
            Method::SdpOnly => "sdp-only",
        })
    }
}

/// Starting point of the single-epoch solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SemaInit {
    /// Uniform over the anchor bounding box, yaw uniform on `[−π, π)`.
    #[default]
    Random,
    Truth,
}

/// Noise values to sweep; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub sigma_p: Vec<f64>,
    #[serde(default)]
    pub sigma_psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths resolve against the config file's directory.
    pub scenario: PathBuf,
    #[serde(default)]
    pub method: Method,
    /// Window length `K`.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub sigma_p: Option<f64>,
    #[serde(default)]
    pub sigma_psi: Option<f64>,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub sema_init: SemaInit,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Stem of the output files.
    #[serde(default)]
    pub name: Option<String>,
}

fn default_epochs() -> usize {
    3
}

fn default_trials() -> usize {
    500
}

fn default_seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn new(scenario: impl Into<PathBuf>) -> Self {
        Self {
            scenario: scenario.into(),
            method: Method::default(),
            epochs: default_epochs(),
            trials: default_trials(),
            seed: default_seed(),
            sigma: None,
            sigma_p: None,
            sigma_psi: None,
            sweep: Sweep::default(),
            sema_init: SemaInit::default(),
            out: None,
            name: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.scenario.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.scenario = dir.join(&cfg.scenario);
            }
        }
        Ok(cfg)
    }

    pub fn load_scenario(&self) -> Result<Scenario> {
        Scenario::load(&self.scenario).map_err(|e| match e {
            Error::Io(io) => {
                Error::Config(format!("cannot read {}: {io}", self.scenario.display()))
            }
            other => other,
        })
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("window length must be at least 1".into()));
        }
        if self.epochs > scenario.num_epochs() {
            return Err(Error::Config(format!(
                "window length {} exceeds the {} epochs of the trajectory",
                self.epochs,
                scenario.num_epochs()
            )));
        }
        let values = [self.sigma, self.sigma_p, self.sigma_psi]
            .into_iter()
            .flatten()
            .chain(self.sweep.sigma.iter().copied())
            .chain(self.sweep.sigma_p.iter().copied())
            .chain(self.sweep.sigma_psi.iter().copied());
        for v in values {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "noise level {v} must be positive and finite"
                )));
            }
        }
        if self.epochs == 1 && self.method != Method::Sema {
            log::warn!("window length 1 has no inter-epoch terms");
        }
        Ok(())
    }

    /// Cartesian product of the sweep lists, `σ` outermost.
    pub fn noise_points(&self, scenario: &Scenario) -> Vec<NoiseLevels> {
        let base = NoiseLevels {
            sigma: self.sigma.unwrap_or(scenario.noise.sigma),
            sigma_p: self.sigma_p.unwrap_or(scenario.noise.sigma_p),
            sigma_psi: self.sigma_psi.unwrap_or(scenario.noise.sigma_psi),
        };
        let or_base = |list: &[f64], v: f64| {
            if list.is_empty() {
                vec![v]
            } else {
                list.to_vec()
            }
        };
        let mut points = Vec::new();
        for &sigma in &or_base(&self.sweep.sigma, base.sigma) {
            for &sigma_p in &or_base(&self.sweep.sigma_p, base.sigma_p) {
                for &sigma_psi in &or_base(&self.sweep.sigma_psi, base.sigma_psi) {
                    points.push(NoiseLevels {
                        sigma,
                        sigma_p,
                        sigma_psi,
                    });
                }
            }
        }
        points
    }

    pub fn file_stem(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let scene = self
                .scenario
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into());
            format!("{scene}_{}_k{}", self.method, self.epochs)
        })
    }
}

/// One estimate of one epoch in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub epoch: usize,
    pub estimator: Method,
    pub sigma: f64,
    pub sigma_p: f64,
    pub sigma_psi: f64,
    pub est_x: f64,
    pub est_y: f64,
    pub est_yaw: f64,
    pub true_x: f64,
    pub true_y: f64,
    pub true_yaw: f64,
    pub err_east: f64,
    pub err_north: f64,
    pub err_yaw: f64,
    pub iterations: usize,
    pub converged: bool,
    pub init_within_0_3m: bool,
    pub wall_time_us: u64,
}

impl TrialRecord {
    fn new(
        trial: u64,
        epoch: usize,
        estimator: Method,
        noise: &NoiseLevels,
        est: Option<&Pose>,
        truth: &Pose,
    ) -> Self {
        let (ex, ey, eyaw) = est.map_or((f64::NAN, f64::NAN, f64::NAN), |p| (p.x, p.y, p.yaw()));
        Self {
            trial,
            epoch,
            estimator,
            sigma: noise.sigma,
            sigma_p: noise.sigma_p,
            sigma_psi: noise.sigma_psi,
            est_x: ex,
            est_y: ey,
            est_yaw: eyaw,
            true_x: truth.x,
            true_y: truth.y,
            true_yaw: truth.yaw(),
            err_east: ex - truth.x,
            err_north: ey - truth.y,
            err_yaw: wrap_angle(eyaw - truth.yaw()),
            iterations: 0,
            converged: false,
            init_within_0_3m: false,
            wall_time_us: 0,
        }
    }

    pub fn horizontal_error(&self) -> f64 {
        self.err_east.hypot(self.err_north)
    }

    /// `false` when the estimator failed outright.
    pub fn has_estimate(&self) -> bool {
        self.est_x.is_finite() && self.est_y.is_finite() && self.est_yaw.is_finite()
    }
}

/// Solver settings shared by all trials.
#[derive(Debug, Clone, Default)]
pub struct Estimators {
    pub sdp: SdpOptions,
    pub gn: GaussNewtonOptions,
}

/// Window `[start, start + K)` and the epochs it reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub start: usize,
    pub report: Vec<usize>,
}

/// Sliding windows ending at each epoch; epochs before `K − 1` are reported
/// from the first full window.
pub fn plan_windows(num_epochs: usize, k: usize) -> Vec<WindowPlan> {
    if k == 0 || k > num_epochs {
        return Vec::new();
    }
    let mut plans = vec![WindowPlan {
        start: 0,
        report: (0..k).collect(),
    }];
    plans.extend((k..num_epochs).map(|e| WindowPlan {
        start: e + 1 - k,
        report: vec![e],
    }));
    plans
}

fn within(a: &Pose, b: &Pose, radius: f64) -> bool {
    (a.x - b.x).hypot(a.y - b.y) < radius
}

fn micros(t: Instant) -> u64 {
    t.elapsed().as_micros().min(u64::MAX as u128) as u64
}

/// All records of one trial at one noise point.
pub fn run_trial(
    scenario: &Scenario,
    cfg: &ExperimentConfig,
    est: &Estimators,
    noise: &NoiseLevels,
    trial: u64,
) -> Vec<TrialRecord> {
    let scene = scenario.with_noise(*noise);
    let n = scene.num_epochs();
    let (meas, truth): (Vec<EpochMeasurements>, Vec<Pose>) = (0..n)
        .map(|k| synthesize_epoch(&scene, k, &mut substream(cfg.seed, trial, k as u64)))
        .unzip();
    let bundles: Vec<Option<TdoaBundle>> = meas
        .iter()
        .map(|m| form_tdoa(m, noise.sigma).ok())
        .collect();
    match cfg.method {
        Method::Sema => (0..n)
            .map(|k| {
                sema_record(
                    &scene,
                    cfg,
                    est,
                    noise,
                    trial,
                    k,
                    bundles[k].as_ref(),
                    &truth[k],
                )
            })
            .collect(),
        Method::Mema | Method::SdpOnly => {
            let geom = Geometry::from_scenario(&scene);
            let mut out = Vec::with_capacity(n);
            for plan in plan_windows(n, cfg.epochs) {
                let range = plan.start..plan.start + cfg.epochs;
                let inter: Vec<_> = meas[range.clone()]
                    .iter()
                    .skip(1)
                    .map(|m| {
                        m.inter_epoch
                            .expect("epochs after the first carry inter-epoch data")
                    })
                    .collect();
                let window_bundles = &bundles[range.clone()];
                let clock = Instant::now();
                let init = solve_window(&geom, window_bundles, &inter, noise, &est.sdp);
                let refined = match (&init, cfg.method) {
                    (Ok(init), Method::Mema) => {
                        let data = WindowData {
                            scenario: &scene,
                            bundles: window_bundles,
                            inter: &inter,
                            noise: *noise,
                        };
                        Some(gauss_newton(&init.poses, &data, &est.gn))
                    }
                    _ => None,
                };
                let us = micros(clock);
                if let Err(e) = &init {
                    log::warn!(
                        "trial {trial}, window at {}: initialization failed: {e}",
                        plan.start
                    );
                }
                if let Some(Err(e)) = &refined {
                    log::warn!(
                        "trial {trial}, window at {}: refinement failed: {e}",
                        plan.start
                    );
                }
                for &e in &plan.report {
                    let i = e - plan.start;
                    let init_pose = init.as_ref().ok().map(|s| &s.poses[i]);
                    let mut rec = match (cfg.method, &refined) {
                        (Method::Mema, Some(Ok(w))) => {
                            let mut r = TrialRecord::new(
                                trial,
                                e,
                                cfg.method,
                                noise,
                                Some(&w.poses[i]),
                                &truth[e],
                            );
                            r.iterations = w.iterations;
                            r.converged = w.converged;
                            r
                        }
                        (Method::SdpOnly, _) => {
                            let mut r =
                                TrialRecord::new(trial, e, cfg.method, noise, init_pose, &truth[e]);
                            if let Ok(s) = &init {
                                r.iterations = s.iterations;
                                r.converged = true;
                            }
                            r
                        }
                        _ => TrialRecord::new(trial, e, cfg.method, noise, None, &truth[e]),
                    };
                    rec.init_within_0_3m =
                        init_pose.is_some_and(|p| within(p, &truth[e], INIT_RADIUS));
                    rec.wall_time_us = us;
                    out.push(rec);
                }
            }
            out
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn sema_record(
    scene: &Scenario,
    cfg: &ExperimentConfig,
    est: &Estimators,
    noise: &NoiseLevels,
    trial: u64,
    k: usize,
    bundle: Option<&TdoaBundle>,
    truth: &Pose,
) -> TrialRecord {
    let init = match cfg.sema_init {
        SemaInit::Truth => *truth,
        SemaInit::Random => {
            let mut rng = substream(cfg.seed ^ INIT_STREAM, trial, k as u64);
            let (lo, hi) = scene.anchor_bounds();
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            Pose::new(
                rng.random_range(lo[0]..hi[0]),
                rng.random_range(lo[1]..hi[1]),
                Attitude::new(yaw, scene.roll, scene.pitch),
                scene.h,
            )
        }
    };
    let clock = Instant::now();
    let fit = bundle
        .ok_or_else(|| Error::InsufficientMeasurements(format!("epoch {k} has no TDOA rows")))
        .and_then(|b| sema_solve(&init, b, scene, &est.gn));
    let us = micros(clock);
    let mut rec = match &fit {
        Ok(w) => {
            let mut r = TrialRecord::new(trial, k, Method::Sema, noise, Some(&w.poses[0]), truth);
            r.iterations = w.iterations;
            r.converged = w.converged;
            r
        }
        Err(e) => {
            log::warn!("trial {trial}, epoch {k}: single-epoch solve failed: {e}");
            TrialRecord::new(trial, k, Method::Sema, noise, None, truth)
        }
    };
    rec.init_within_0_3m = within(&init, truth, INIT_RADIUS);
    rec.wall_time_us = us;
    rec
}

/// Bound on one epoch at one noise point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrlbRow {
    pub estimator: Method,
    pub sigma: f64,
    pub sigma_p: f64,
    pub sigma_psi: f64,
    pub epoch: usize,
    /// `var(x) + var(y)` (m²).
    pub position_var: f64,
    /// rad²
    pub yaw_var: f64,
}

fn layouts(scene: &Scenario) -> Vec<Option<TdoaLayout>> {
    (0..scene.num_epochs())
        .map(|k| {
            let (m, _) = synthesize_epoch(scene, k, &mut substream(0, 0, k as u64));
            form_tdoa(&m, scene.noise.sigma).ok().map(|b| b.layout)
        })
        .collect()
}

/// Bounds matching the windows [`run_trial`] reports; epochs whose bound does
/// not exist are skipped.
pub fn crlb_rows(
    scenario: &Scenario,
    method: Method,
    k: usize,
    noise: &NoiseLevels,
) -> Vec<CrlbRow> {
    let scene = scenario.with_noise(*noise);
    let lay = layouts(&scene);
    let row = |epoch, position_var, yaw_var| CrlbRow {
        estimator: method,
        sigma: noise.sigma,
        sigma_p: noise.sigma_p,
        sigma_psi: noise.sigma_psi,
        epoch,
        position_var,
        yaw_var,
    };
    let mut out = Vec::new();
    match method {
        Method::Sema => {
            for (e, l) in lay.iter().enumerate() {
                if let Some(b) = l
                    .as_ref()
                    .and_then(|l| fim_sema(&scene.trajectory[e], l, &scene, noise.sigma).ok())
                {
                    out.push(row(e, b.position(), b.yaw()));
                }
            }
        }
        Method::Mema | Method::SdpOnly => {
            for plan in plan_windows(scene.num_epochs(), k) {
                let range = plan.start..plan.start + k;
                match fim_mema(
                    &scene.trajectory[range.clone()],
                    &lay[range],
                    &scene,
                    noise.sigma,
                    InterEpoch::from_noise(noise),
                ) {
                    Ok(fi) => {
                        for &e in &plan.report {
                            out.push(row(e, fi.position(e - plan.start), fi.yaw(e - plan.start)));
                        }
                    }
                    Err(err) => log::warn!("window at {}: {err}", plan.start),
                }
            }
        }
    }
    out
}

/// Statistics of one group of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub estimator: Method,
    pub sigma: f64,
    pub sigma_p: f64,
    pub sigma_psi: f64,
    /// `None` pools every epoch.
    pub epoch: Option<usize>,
    pub count: usize,
    /// Records with an estimate.
    pub estimated: usize,
    pub rmse_position: f64,
    pub rmse_east: f64,
    pub rmse_north: f64,
    pub rmse_yaw: f64,
    pub radius_p50: f64,
    pub radius_p95: f64,
    pub radius_p99: f64,
    pub within_0_3m: f64,
    pub init_within_0_3m: f64,
    /// Fraction of records more than 1 m from truth, failures included.
    pub ambiguity_fraction: f64,
    pub convergence_fraction: f64,
    pub mean_wall_time_us: f64,
    /// Counterpart of `rmse_position` (`sqrt` of the mean bound).
    pub crlb_position: Option<f64>,
    pub crlb_yaw: Option<f64>,
}

type GroupKey = (Method, u64, u64, u64, Option<usize>);

fn key(r: &TrialRecord, epoch: Option<usize>) -> GroupKey {
    (
        r.estimator,
        r.sigma.to_bits(),
        r.sigma_p.to_bits(),
        r.sigma_psi.to_bits(),
        epoch,
    )
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn summarize_group(records: &[&TrialRecord], epoch: Option<usize>) -> GroupSummary {
    let first = records[0];
    let ok: Vec<&&TrialRecord> = records.iter().filter(|r| r.has_estimate()).collect();
    let rms = |f: &dyn Fn(&TrialRecord) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            (ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64).sqrt()
        }
    };
    let mut radii: Vec<f64> = ok.iter().map(|r| r.horizontal_error()).collect();
    radii.sort_by(f64::total_cmp);
    let n = records.len() as f64;
    let frac =
        |pred: &dyn Fn(&TrialRecord) -> bool| records.iter().filter(|r| pred(r)).count() as f64 / n;
    GroupSummary {
        estimator: first.estimator,
        sigma: first.sigma,
        sigma_p: first.sigma_p,
        sigma_psi: first.sigma_psi,
        epoch,
        count: records.len(),
        estimated: ok.len(),
        rmse_position: rms(&|r| r.err_east.powi(2) + r.err_north.powi(2)),
        rmse_east: rms(&|r| r.err_east.powi(2)),
        rmse_north: rms(&|r| r.err_north.powi(2)),
        rmse_yaw: rms(&|r| r.err_yaw.powi(2)),
        radius_p50: percentile(&radii, 0.50),
        radius_p95: percentile(&radii, 0.95),
        radius_p99: percentile(&radii, 0.99),
        within_0_3m: frac(&|r| r.has_estimate() && r.horizontal_error() < INIT_RADIUS),
        init_within_0_3m: frac(&|r| r.init_within_0_3m),
        ambiguity_fraction: frac(&|r| !r.has_estimate() || r.horizontal_error() > AMBIGUITY_RADIUS),
        convergence_fraction: frac(&|r| r.converged),
        mean_wall_time_us: records.iter().map(|r| r.wall_time_us as f64).sum::<f64>() / n,
        crlb_position: None,
        crlb_yaw: None,
    }
}

/// One pooled group per (estimator, noise point), followed by one group per
/// epoch. Groups keep first-appearance order.
pub fn summarize(records: &[TrialRecord]) -> Vec<GroupSummary> {
    let mut order: Vec<GroupKey> = Vec::new();
    let mut groups: std::collections::HashMap<GroupKey, Vec<&TrialRecord>> = Default::default();
    for r in records {
        for k in [key(r, None), key(r, Some(r.epoch))] {
            groups.entry(k).or_insert_with(|| {
                order.push(k);
                Vec::new()
            });
            groups.get_mut(&k).expect("inserted above").push(r);
        }
    }
    let mut pooled: Vec<GroupSummary> = Vec::new();
    let mut per_epoch: Vec<GroupSummary> = Vec::new();
    for k in order {
        let g = summarize_group(&groups[&k], k.4);
        if k.4.is_none() {
            pooled.push(g);
        } else {
            per_epoch.push(g);
        }
    }
    per_epoch.sort_by_key(|g| {
        (
            g.estimator,
            g.sigma.to_bits(),
            g.sigma_p.to_bits(),
            g.sigma_psi.to_bits(),
            g.epoch,
        )
    });
    pooled.extend(per_epoch);
    pooled
}

/// Fills `crlb_*` of each group from matching rows.
pub fn attach_crlb(summary: &mut [GroupSummary], rows: &[CrlbRow]) {
    for g in summary.iter_mut() {
        let matching: Vec<&CrlbRow> = rows
            .iter()
            .filter(|r| {
                r.estimator == g.estimator
                    && r.sigma == g.sigma
                    && r.sigma_p == g.sigma_p
                    && r.sigma_psi == g.sigma_psi
                    && g.epoch.is_none_or(|e| e == r.epoch)
            })
            .collect();
        if matching.is_empty() {
            continue;
        }
        let n = matching.len() as f64;
        g.crlb_position = Some((matching.iter().map(|r| r.position_var).sum::<f64>() / n).sqrt());
        g.crlb_yaw = Some((matching.iter().map(|r| r.yaw_var).sum::<f64>() / n).sqrt());
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
    pub crlb: Vec<CrlbRow>,
    pub summary: Vec<GroupSummary>,
    pub total_wall_time_s: f64,
}

impl ExperimentResult {
    /// Pooled summary for one noise point.
    pub fn pooled(&self, noise: &NoiseLevels) -> Option<&GroupSummary> {
        self.summary.iter().find(|g| {
            g.epoch.is_none()
                && g.sigma == noise.sigma
                && g.sigma_p == noise.sigma_p
                && g.sigma_psi == noise.sigma_psi
        })
    }

    /// Writes `<stem>.csv` and `<stem>_summary.json`; returns both paths.
    pub fn persist(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let stem = self.config.file_stem();
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&csv_path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        let json_path = dir.join(format!("{stem}_summary.json"));
        fs::write(&json_path, serde_json::to_string_pretty(self)?)?;
        Ok((csv_path, json_path))
    }
}

/// Runs every trial at every noise point. Trials run in parallel; records are
/// kept in (noise point, trial, epoch) order.
pub fn run_monte_carlo(cfg: &ExperimentConfig, scenario: &Scenario) -> Result<ExperimentResult> {
    run_monte_carlo_with(cfg, scenario, &Estimators::default())
}

pub fn run_monte_carlo_with(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    est: &Estimators,
) -> Result<ExperimentResult> {
    cfg.validate(scenario)?;
    let clock = Instant::now();
    let mut records = Vec::new();
    let mut crlb = Vec::new();
    for noise in cfg.noise_points(scenario) {
        let per_trial: Vec<Vec<TrialRecord>> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| run_trial(scenario, cfg, est, &noise, t))
            .collect();
        records.extend(per_trial.into_iter().flatten());
        crlb.extend(crlb_rows(scenario, cfg.method, cfg.epochs, &noise));
    }
    let mut summary = summarize(&records);
    attach_crlb(&mut summary, &crlb);
    Ok(ExperimentResult {
        config: cfg.clone(),
        records,
        crlb,
        summary,
        total_wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::build_four_anchor_scene;

    fn record(err_east: f64, err_north: f64) -> TrialRecord {
        let truth = Pose::new(0.0, 0.0, Attitude::level(0.0), 0.0);
        let est = Pose::new(err_east, err_north, Attitude::level(0.0), 0.0);
        TrialRecord::new(
            0,
            0,
            Method::Mema,
            &NoiseLevels::default(),
            Some(&est),
            &truth,
        )
    }

    #[test]
    fn zero_errors_give_zero_rmse() {
        let s = summarize(&[record(0.0, 0.0), record(0.0, 0.0)]);
        assert_eq!(s[0].rmse_position, 0.0);
        assert_eq!(s[0].rmse_yaw, 0.0);
    }

    #[test]
    fn rmse_of_three_and_four() {
        let s = summarize(&[record(3.0, 0.0), record(0.0, 4.0)]);
        assert!((s[0].rmse_position - 3.5355).abs() < 1e-4);
        assert_eq!(s[0].radius_p50, 3.0);
        assert_eq!(s[0].ambiguity_fraction, 1.0);
    }

    #[test]
    fn failures_count_against_fractions() {
        let truth = Pose::new(0.0, 0.0, Attitude::level(0.0), 0.0);
        let failed = TrialRecord::new(1, 0, Method::Mema, &NoiseLevels::default(), None, &truth);
        let s = summarize(&[record(0.1, 0.0), failed]);
        assert_eq!(s[0].estimated, 1);
        assert_eq!(s[0].within_0_3m, 0.5);
        assert_eq!(s[0].ambiguity_fraction, 0.5);
        assert!((s[0].rmse_position - 0.1).abs() < 1e-12);
    }

    #[test]
    fn windows_cover_every_epoch_once() {
        for n in 1..8 {
            for k in 1..=n {
                let mut seen: Vec<usize> = plan_windows(n, k)
                    .into_iter()
                    .flat_map(|p| p.report)
                    .collect();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                for p in plan_windows(n, k) {
                    assert!(p.start + k <= n);
                    assert!(p.report.iter().all(|&e| e >= p.start && e < p.start + k));
                }
            }
        }
        assert!(plan_windows(3, 4).is_empty());
    }

    #[test]
    fn noise_points_are_a_product() {
        let scene = build_four_anchor_scene();
        let mut cfg = ExperimentConfig::new("x.json");
        cfg.sigma = Some(0.2);
        cfg.sweep.sigma_p = vec![0.1, 0.2, 0.3];
        cfg.sweep.sigma_psi = vec![0.1, 0.5];
        let pts = cfg.noise_points(&scene);
        assert_eq!(pts.len(), 6);
        assert!(pts.iter().all(|p| p.sigma == 0.2));
        assert_eq!((pts[1].sigma_p, pts[1].sigma_psi), (0.1, 0.5));
    }

    #[test]
    fn config_validation() {
        let scene = build_four_anchor_scene();
        let mut cfg = ExperimentConfig::new("x.json");
        assert!(cfg.validate(&scene).is_ok());
        cfg.trials = 0;
        assert!(matches!(cfg.validate(&scene), Err(Error::Config(_))));
        cfg.trials = 1;
        cfg.epochs = 5;
        assert!(cfg.validate(&scene).is_err());
        cfg.epochs = 0;
        assert!(cfg.validate(&scene).is_err());
        cfg.epochs = 3;
        cfg.sweep.sigma = vec![0.1, -0.1];
        assert!(cfg.validate(&scene).is_err());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let bad = r#"{"scenario": "s.json", "trails": 3}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
        let good: ExperimentConfig =
            serde_json::from_str(r#"{"scenario": "s.json", "method": "sdp-only"}"#).unwrap();
        assert_eq!(good.method, Method::SdpOnly);
        assert_eq!(good.trials, 500);
    }

    #[test]
    fn method_round_trip() {
        for m in [Method::Mema, Method::Sema, Method::SdpOnly] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("both".parse::<Method>().is_err());
    }

    #[test]
    fn group_counts_add_up() {
        let scene = build_four_anchor_scene();
        for method in [Method::Mema, Method::Sema, Method::SdpOnly] {
            let mut cfg = ExperimentConfig::new("x.json");
            cfg.method = method;
            cfg.trials = 6;
            cfg.epochs = 2;
            cfg.sweep.sigma = vec![0.05, 0.1];
            let res = run_monte_carlo(&cfg, &scene).unwrap();
            assert_eq!(res.records.len(), 2 * 6 * scene.num_epochs());
            for noise in cfg.noise_points(&scene) {
                let per_epoch: usize = res
                    .summary
                    .iter()
                    .filter(|g| g.epoch.is_some() && g.sigma == noise.sigma)
                    .map(|g| g.count)
                    .sum();
                assert_eq!(per_epoch, 6 * scene.num_epochs());
                assert_eq!(res.pooled(&noise).unwrap().count, per_epoch);
                assert!(res.pooled(&noise).unwrap().crlb_position.is_some());
            }
        }
    }

    #[test]
    fn records_are_in_trial_order_and_recomputable() {
        let scene = build_four_anchor_scene();
        let mut cfg = ExperimentConfig::new("x.json");
        cfg.trials = 5;
        let res = run_monte_carlo(&cfg, &scene).unwrap();
        let order: Vec<(u64, usize)> = res.records.iter().map(|r| (r.trial, r.epoch)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        for r in &res.records {
            assert_eq!(r.err_east, r.est_x - r.true_x);
            assert_eq!(r.err_north, r.est_y - r.true_y);
            assert_eq!(r.err_yaw, wrap_angle(r.est_yaw - r.true_yaw));
        }
    }
}
