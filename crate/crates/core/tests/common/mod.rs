//! Helpers and independent oracles shared by the integration and acceptance
//! targets.

#![allow(dead_code)]

use mema_toa::frames::{wrap_angle, Pose};
use mema_toa::measurement::{
    form_tdoa, predict_inter_epoch, predict_tdoa, EpochMeasurements, TdoaBundle,
};
use mema_toa::refine::{gauss_newton, GaussNewtonOptions, WindowData, WindowEstimate};
use mema_toa::scenario::{substream, synthesize_epoch, NoiseLevels, Scenario};
use mema_toa::sdp_init::{solve_window, Geometry, SdpOptions};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn quiet(s: &Scenario) -> Scenario {
    s.with_noise(NoiseLevels {
        sigma: 1e-300,
        sigma_p: 1e-300,
        sigma_psi: 1e-300,
    })
}

/// Measurements of epochs `first..first + k` of one trial.
pub struct Window {
    pub meas: Vec<EpochMeasurements>,
    pub bundles: Vec<Option<TdoaBundle>>,
    pub inter: Vec<Vector3<f64>>,
    pub truth: Vec<Pose>,
}

impl Window {
    pub fn simulate(s: &Scenario, first: usize, k: usize, seed: u64, trial: u64) -> Self {
        let mut meas = Vec::new();
        let mut truth = Vec::new();
        for e in first..first + k {
            let (m, p) = synthesize_epoch(s, e, &mut substream(seed, trial, e as u64));
            meas.push(m);
            truth.push(p);
        }
        Self::from_measurements(s, meas, truth)
    }

    pub fn from_measurements(s: &Scenario, meas: Vec<EpochMeasurements>, truth: Vec<Pose>) -> Self {
        let bundles = meas
            .iter()
            .map(|m| form_tdoa(m, s.noise.sigma).ok())
            .collect();
        let inter = meas
            .iter()
            .skip(1)
            .map(|m| m.inter_epoch.expect("inter-epoch data"))
            .collect();
        Self {
            meas,
            bundles,
            inter,
            truth,
        }
    }

    /// Every TOA shifted by `offset`.
    pub fn shifted(&self, s: &Scenario, offset: f64) -> Self {
        Self::from_measurements(
            s,
            self.meas.iter().map(|m| m.shifted(offset)).collect(),
            self.truth.clone(),
        )
    }

    pub fn data<'a>(&'a self, s: &'a Scenario) -> WindowData<'a> {
        WindowData {
            scenario: s,
            bundles: &self.bundles,
            inter: &self.inter,
            noise: s.noise,
        }
    }

    /// SDP initialization followed by Gauss-Newton.
    pub fn estimate(
        &self,
        s: &Scenario,
        sdp: &SdpOptions,
        gn: &GaussNewtonOptions,
    ) -> mema_toa::Result<WindowEstimate> {
        let init = solve_window(
            &Geometry::from_scenario(s),
            &self.bundles,
            &self.inter,
            &s.noise,
            sdp,
        )?;
        gauss_newton(&init.poses, &self.data(s), gn)
    }
}

pub fn max_pose_error(est: &[Pose], truth: &[Pose]) -> (f64, f64) {
    est.iter()
        .zip(truth)
        .fold((0.0f64, 0.0f64), |(p, y), (a, b)| {
            (
                p.max((a.x - b.x).abs()).max((a.y - b.y).abs()),
                y.max(wrap_angle(a.yaw() - b.yaw()).abs()),
            )
        })
}

/// Log-likelihood of a window, built directly from the measurement model.
struct Likelihood<'a> {
    scenario: &'a Scenario,
    window: &'a Window,
    /// Per-epoch `Q⁻¹` by generic inversion.
    q_inv: Vec<DMatrix<f64>>,
    noise: NoiseLevels,
}

impl<'a> Likelihood<'a> {
    fn new(scenario: &'a Scenario, window: &'a Window) -> Self {
        let sigma = scenario.noise.sigma;
        let q_inv = window
            .bundles
            .iter()
            .map(|b| {
                let l = b.as_ref().map_or(0, |b| b.len());
                let q =
                    (DMatrix::identity(l, l) + DMatrix::from_element(l, l, 1.0)) * sigma * sigma;
                q.try_inverse().expect("covariance is positive definite")
            })
            .collect();
        Self {
            scenario,
            window,
            q_inv,
            noise: scenario.noise,
        }
    }

    fn poses(&self, theta: &DVector<f64>) -> Vec<Pose> {
        self.window
            .truth
            .iter()
            .enumerate()
            .map(|(k, p)| {
                p.with_theta(&Vector3::new(
                    theta[3 * k],
                    theta[3 * k + 1],
                    theta[3 * k + 2],
                ))
            })
            .collect()
    }

    fn eval(&self, theta: &DVector<f64>, z: &[DVector<f64>], v: &[Vector3<f64>]) -> f64 {
        let poses = self.poses(theta);
        let mut ll = 0.0;
        for (k, b) in self.window.bundles.iter().enumerate() {
            if let Some(b) = b {
                let r = &z[k] - predict_tdoa(&poses[k], &b.layout, self.scenario);
                ll -= 0.5 * (r.transpose() * &self.q_inv[k] * &r)[(0, 0)];
            }
        }
        let w = [
            self.noise.sigma_p.powi(-2),
            self.noise.sigma_p.powi(-2),
            self.noise.sigma_psi.powi(-2),
        ];
        for k in 1..poses.len() {
            let mut r = v[k - 1] - predict_inter_epoch(&poses[k], &poses[k - 1]);
            r[2] = wrap_angle(r[2]);
            ll -= 0.5 * (0..3).map(|c| w[c] * r[c] * r[c]).sum::<f64>();
        }
        ll
    }
}

/// Statistic of a score-covariance estimate.
pub struct ScoreCheck {
    pub covariance: DMatrix<f64>,
    /// `‖C − F‖_F / ‖F‖_F`
    pub relative_error: f64,
}

/// Sample covariance of the finite-difference score at the truth over
/// `draws` noise realizations. With `moment_matched` the raw noise samples are
/// whitened so their sample mean is zero and their sample covariance is the
/// model covariance exactly.
pub fn score_covariance(
    s: &Scenario,
    window: &Window,
    fim: &DMatrix<f64>,
    draws: usize,
    moment_matched: bool,
    seed: u64,
) -> ScoreCheck {
    let lik = Likelihood::new(s, window);
    let k_len = window.truth.len();
    let raw_dims: Vec<usize> = window
        .bundles
        .iter()
        .map(|b| b.as_ref().map_or(0, |b| b.len() + 1))
        .collect();
    let d = raw_dims.iter().sum::<usize>() + 3 * (k_len - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::<f64>::from_fn(draws, d, |_, _| StandardNormal.sample(&mut rng));
    if moment_matched {
        for c in 0..d {
            let mean = x.column(c).mean();
            x.column_mut(c).add_scalar_mut(-mean);
        }
        let cov = x.transpose() * &x / draws as f64;
        let l = cov
            .cholesky()
            .expect("sample covariance is positive definite")
            .l();
        let l_inv_t = l
            .try_inverse()
            .expect("triangular factor is invertible")
            .transpose();
        x = &x * l_inv_t;
    }
    let truth_theta = DVector::from_iterator(
        3 * k_len,
        window.truth.iter().flat_map(|p| [p.x, p.y, p.yaw()]),
    );
    let z0: Vec<DVector<f64>> = window
        .bundles
        .iter()
        .zip(&window.truth)
        .map(|(b, p)| {
            b.as_ref()
                .map_or(DVector::zeros(0), |b| predict_tdoa(p, &b.layout, s))
        })
        .collect();
    let v0: Vec<Vector3<f64>> = (1..k_len)
        .map(|k| predict_inter_epoch(&window.truth[k], &window.truth[k - 1]))
        .collect();
    let n = s.noise;
    let h = 1e-5;
    let p = 3 * k_len;
    let mut scores = DMatrix::<f64>::zeros(draws, p);
    for t in 0..draws {
        let row = x.row(t);
        let mut off = 0;
        let mut z = Vec::with_capacity(k_len);
        for (k, &dim) in raw_dims.iter().enumerate() {
            if dim == 0 {
                z.push(DVector::zeros(0));
                continue;
            }
            let e0 = row[off] * n.sigma;
            z.push(DVector::from_fn(dim - 1, |r, _| {
                z0[k][r] + n.sigma * row[off + 1 + r] - e0
            }));
            off += dim;
        }
        let v: Vec<Vector3<f64>> = (0..k_len - 1)
            .map(|k| {
                let b = off + 3 * k;
                v0[k]
                    + Vector3::new(
                        n.sigma_p * row[b],
                        n.sigma_p * row[b + 1],
                        n.sigma_psi * row[b + 2],
                    )
            })
            .collect();
        for c in 0..p {
            let mut plus = truth_theta.clone();
            plus[c] += h;
            let mut minus = truth_theta.clone();
            minus[c] -= h;
            scores[(t, c)] = (lik.eval(&plus, &z, &v) - lik.eval(&minus, &z, &v)) / (2.0 * h);
        }
    }
    for c in 0..p {
        let mean = scores.column(c).mean();
        scores.column_mut(c).add_scalar_mut(-mean);
    }
    let covariance = scores.transpose() * &scores / draws as f64;
    let relative_error = (&covariance - fim).norm() / fim.norm();
    ScoreCheck {
        covariance,
        relative_error,
    }
}
