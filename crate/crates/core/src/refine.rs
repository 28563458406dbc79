//! Gauss-Newton refinement of a K-epoch window and the single-epoch baseline.
//!
//! The stacked model is `z = g(Θ) + ε` with `z` the TDOAs of every epoch
//! followed by the inter-epoch changes `[Δx̃, Δỹ, Δψ̃]` of every consecutive
//! pair, and `Θ = [x, y, ψ]` per epoch. Weights are kept relative to the TDOA
//! noise (`σ² Q⁻¹`), so that they stay finite as all noise levels go to zero.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{
    antenna_position, rotated_lever_yaw_derivative, unvec_matrix, vectorize_rotation, wrap_angle,
    Pose,
};
use crate::measurement::{predict_inter_epoch, predict_tdoa, tdoa_weight, TdoaBundle, TdoaLayout};
use crate::scenario::{NoiseLevels, Scenario};

/// Everything measured over a window.
#[derive(Debug, Clone, Copy)]
pub struct WindowData<'a> {
    pub scenario: &'a Scenario,
    /// One entry per epoch; `None` when the epoch has no TDOA rows.
    pub bundles: &'a [Option<TdoaBundle>],
    /// `inter[k − 1]` is the measured change from epoch `k − 1` to `k`.
    pub inter: &'a [Vector3<f64>],
    pub noise: NoiseLevels,
}

impl WindowData<'_> {
    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    fn tdoa_rows(&self) -> usize {
        self.bundles.iter().flatten().map(|b| b.len()).sum()
    }
}

/// Linearised window: `δz ≈ H δΘ`, with weight `σ² Q⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub h: DMatrix<f64>,
    pub dz: DVector<f64>,
    /// Block diagonal: TDOA blocks then inter-epoch blocks.
    pub weight: DMatrix<f64>,
    /// TDOA rows precede the inter-epoch rows.
    pub tdoa_rows: usize,
}

impl StackedSystem {
    /// `δzᵀ σ²Q⁻¹ δz`
    pub fn cost(&self) -> f64 {
        (self.dz.transpose() * &self.weight * &self.dz)[0]
    }

    pub fn normal_matrix(&self) -> DMatrix<f64> {
        self.h.transpose() * &self.weight * &self.h
    }
}

fn range_gradient(pose: &Pose, scenario: &Scenario, i: usize, j: usize) -> Result<(f64, [f64; 3])> {
    let lever = &scenario.levers[i];
    let d = scenario.anchors[j] - antenna_position(pose, lever);
    let r = d.norm();
    if r < 1e-6 {
        return Err(Error::SingularGeometry(format!(
            "antenna {i} coincides with anchor {j}"
        )));
    }
    let e = d / r;
    let dl = rotated_lever_yaw_derivative(&pose.attitude, lever);
    Ok((r, [-e[0], -e[1], -e.dot(&dl)]))
}

/// TDOA Jacobian `∂g/∂[x, y, ψ]` of one epoch, one row per TDOA.
pub fn tdoa_jacobian(
    pose: &Pose,
    bundle: &TdoaBundle,
    scenario: &Scenario,
) -> Result<DMatrix<f64>> {
    layout_jacobian(pose, &bundle.layout, scenario)
}

/// As [`tdoa_jacobian`] from the row layout alone.
pub fn layout_jacobian(
    pose: &Pose,
    layout: &TdoaLayout,
    scenario: &Scenario,
) -> Result<DMatrix<f64>> {
    let (ri, rj) = layout.reference;
    let (_, gref) = range_gradient(pose, scenario, ri, rj)?;
    let mut h = DMatrix::zeros(layout.len(), 3);
    for (row, &(i, j)) in layout.rows.iter().enumerate() {
        let (_, g) = range_gradient(pose, scenario, i, j)?;
        for c in 0..3 {
            h[(row, c)] = g[c] - gref[c];
        }
    }
    Ok(h)
}

/// Jacobian of the inter-epoch model with respect to `[θ_{k−1}, θ_k]` (3×6).
pub fn inter_epoch_jacobian(pose_k: &Pose, pose_km1: &Pose) -> DMatrix<f64> {
    let r = pose_km1.rotation();
    let dr = unvec_matrix(&vectorize_rotation(&pose_km1.attitude).yaw_derivative());
    let dp = pose_k.center() - pose_km1.center();
    let dyaw = dr.transpose() * dp;
    let mut h = DMatrix::zeros(3, 6);
    for a in 0..2 {
        for b in 0..2 {
            // [Rᵀ]_{a,b} = R[b,a]
            h[(a, b)] = -r[(b, a)];
            h[(a, 3 + b)] = r[(b, a)];
        }
        h[(a, 2)] = dyaw[a];
    }
    h[(2, 2)] = -1.0;
    h[(2, 5)] = 1.0;
    h
}

/// Stacks TDOA and inter-epoch rows at the current estimate.
pub fn linearize(poses: &[Pose], data: &WindowData) -> Result<StackedSystem> {
    let k_len = data.len();
    if poses.len() != k_len || data.inter.len() + 1 != k_len.max(1) {
        return Err(Error::InsufficientMeasurements(format!(
            "{} poses, {} epochs, {} inter-epoch measurements",
            poses.len(),
            k_len,
            data.inter.len()
        )));
    }
    if poses
        .iter()
        .any(|p| !(p.x.is_finite() && p.y.is_finite() && p.yaw().is_finite()))
    {
        return Err(Error::SingularGeometry("non-finite estimate".into()));
    }
    let tdoa_rows = data.tdoa_rows();
    let rows = tdoa_rows + 3 * data.inter.len();
    let mut h = DMatrix::zeros(rows, 3 * k_len);
    let mut dz = DVector::zeros(rows);
    let mut weight = DMatrix::zeros(rows, rows);
    let sigma = data.noise.sigma;

    let mut r0 = 0;
    for (k, bundle) in data.bundles.iter().enumerate() {
        let Some(b) = bundle.as_ref().filter(|b| !b.is_empty()) else {
            continue;
        };
        let l = b.len();
        let hk = tdoa_jacobian(&poses[k], b, data.scenario)?;
        h.view_mut((r0, 3 * k), (l, 3)).copy_from(&hk);
        let g = predict_tdoa(&poses[k], &b.layout, data.scenario);
        dz.rows_mut(r0, l).copy_from(&(&b.values - g));
        // σ² Q⁻¹ with Q = σ² (I + 11ᵀ)
        weight
            .view_mut((r0, r0), (l, l))
            .copy_from(&tdoa_weight(l, 1.0));
        r0 += l;
    }
    let wp = (sigma / data.noise.sigma_p).powi(2);
    let wy = (sigma / data.noise.sigma_psi).powi(2);
    for (pair, z) in data.inter.iter().enumerate() {
        let (prev, cur) = (&poses[pair], &poses[pair + 1]);
        let hk = inter_epoch_jacobian(cur, prev);
        h.view_mut((r0, 3 * pair), (3, 6)).copy_from(&hk);
        let g = predict_inter_epoch(cur, prev);
        dz[r0] = z[0] - g[0];
        dz[r0 + 1] = z[1] - g[1];
        dz[r0 + 2] = wrap_angle(z[2] - g[2]);
        weight[(r0, r0)] = wp;
        weight[(r0 + 1, r0 + 1)] = wp;
        weight[(r0 + 2, r0 + 2)] = wy;
        r0 += 3;
    }
    Ok(StackedSystem {
        h,
        dz,
        weight,
        tdoa_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussNewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_condition: f64,
    /// Halve the step while the cost increases.
    pub line_search: bool,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            max_condition: 1e12,
            line_search: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowEstimate {
    pub poses: Vec<Pose>,
    /// `(HᵀQ⁻¹H)⁻¹` at the final iterate.
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub last_step: f64,
    /// `δzᵀ Q⁻¹ δz` at the final iterate.
    pub cost: f64,
}

impl WindowEstimate {
    /// Stacked `[x, y, ψ]` per epoch.
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.poses.len(),
            self.poses
                .iter()
                .flat_map(|p| p.theta().into_iter().copied().collect::<Vec<_>>()),
        )
    }

    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                last_step: self.last_step,
            })
        }
    }
}

/// Solves the normal equations, refusing ill-conditioned systems.
fn normal_solve(
    n: &DMatrix<f64>,
    rhs: &DVector<f64>,
    max_condition: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let eig = n.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let condition = if lmin > 0.0 {
        lmax / lmin
    } else {
        f64::INFINITY
    };
    if condition.is_nan() || condition > max_condition {
        return Err(Error::RankDeficient { condition });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    let inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    Ok((&inv * rhs, inv))
}

fn apply_step(poses: &[Pose], step: &DVector<f64>, scale: f64) -> Vec<Pose> {
    poses
        .iter()
        .enumerate()
        .map(|(k, p)| {
            p.with_theta(&Vector3::new(
                p.x + scale * step[3 * k],
                p.y + scale * step[3 * k + 1],
                wrap_angle(p.yaw() + scale * step[3 * k + 2]),
            ))
        })
        .collect()
}

/// Iterates `δΘ = (HᵀQ⁻¹H)⁻¹ HᵀQ⁻¹ δz` from `init`.
///
/// A run that exhausts `max_iter` is returned with `converged = false`.
pub fn gauss_newton(
    init: &[Pose],
    data: &WindowData,
    opts: &GaussNewtonOptions,
) -> Result<WindowEstimate> {
    let mut poses: Vec<Pose> = init
        .iter()
        .map(|p| {
            let mut q = *p;
            q.h = data.scenario.h;
            q.attitude.roll = data.scenario.roll;
            q.attitude.pitch = data.scenario.pitch;
            q
        })
        .collect();
    let mut sys = linearize(&poses, data)?;
    let mut last_step;
    let mut converged = false;
    let mut iterations = 0;
    let mut inv;
    loop {
        let n = sys.normal_matrix();
        let rhs = sys.h.transpose() * &sys.weight * &sys.dz;
        let (step, ninv) = normal_solve(&n, &rhs, opts.max_condition)?;
        inv = ninv;
        last_step = step.norm();
        if last_step < opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let mut next = apply_step(&poses, &step, 1.0);
        let mut next_sys = linearize(&next, data)?;
        if opts.line_search {
            let mut scale = 1.0;
            while next_sys.cost() > sys.cost() && scale > 1e-3 {
                scale *= 0.5;
                next = apply_step(&poses, &step, scale);
                next_sys = linearize(&next, data)?;
            }
        }
        poses = next;
        sys = next_sys;
    }
    let s2 = data.noise.sigma * data.noise.sigma;
    Ok(WindowEstimate {
        poses,
        covariance: inv * s2,
        iterations,
        converged,
        last_step,
        cost: if s2 > 0.0 { sys.cost() / s2 } else { 0.0 },
    })
}

/// Single-epoch Gauss-Newton on TDOAs alone.
pub fn sema_solve(
    init: &Pose,
    bundle: &TdoaBundle,
    scenario: &Scenario,
    opts: &GaussNewtonOptions,
) -> Result<WindowEstimate> {
    if bundle.len() < 3 {
        return Err(Error::InsufficientMeasurements(format!(
            "{} TDOA rows for 3 unknowns",
            bundle.len()
        )));
    }
    let bundles = [Some(bundle.clone())];
    let data = WindowData {
        scenario,
        bundles: &bundles,
        inter: &[],
        noise: NoiseLevels {
            sigma: bundle.sigma,
            ..scenario.noise
        },
    };
    gauss_newton(std::slice::from_ref(init), &data, opts)
}

/// A local minimum of the window cost found on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMinimum {
    pub poses: Vec<Pose>,
    /// `J / σ²` at the grid cell.
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x: (f64, f64),
    pub y: (f64, f64),
    /// Cell size in x and y.
    pub resolution: f64,
    /// Number of yaw cells over a full turn.
    pub yaw_cells: usize,
    /// Minima with `J / σ²` above this are dropped.
    pub max_cost: f64,
}

/// Exhaustive search of the window cost over an `(x, y, ψ)` grid of the
/// first epoch.
///
/// For `K = 2` the second pose is dead-reckoned from the first with the
/// measured change, so the inter-epoch term vanishes and the grid stays
/// three-dimensional. Cells lower than all 26 neighbours (yaw wraps) are
/// reported, cheapest first.
pub fn oracle_grid_mle(data: &WindowData, grid: &GridSpec) -> Result<Vec<GridMinimum>> {
    if data.is_empty() || data.len() > 2 {
        return Err(Error::InsufficientMeasurements(
            "grid oracle takes one or two epochs".into(),
        ));
    }
    let nx = ((grid.x.1 - grid.x.0) / grid.resolution).floor() as usize + 1;
    let ny = ((grid.y.1 - grid.y.0) / grid.resolution).floor() as usize + 1;
    let nz = grid.yaw_cells.max(1);
    let s = data.scenario;
    let yaw_at = |c: usize| {
        -std::f64::consts::PI + (c as f64 + 0.5) * 2.0 * std::f64::consts::PI / nz as f64
    };
    let poses_at = |ix: usize, iy: usize, iz: usize| -> Vec<Pose> {
        let mut p = s.trajectory.first().copied().unwrap_or_else(|| {
            Pose::new(
                0.0,
                0.0,
                crate::frames::Attitude::new(0.0, s.roll, s.pitch),
                s.h,
            )
        });
        p = p.with_theta(&Vector3::new(
            grid.x.0 + ix as f64 * grid.resolution,
            grid.y.0 + iy as f64 * grid.resolution,
            yaw_at(iz),
        ));
        p.h = s.h;
        p.attitude.roll = s.roll;
        p.attitude.pitch = s.pitch;
        let mut out = vec![p];
        if let Some(d) = data.inter.first() {
            let r = p.rotation();
            let step = r * Vector3::new(d[0], d[1], 0.0);
            out.push(p.with_theta(&Vector3::new(
                p.x + step[0],
                p.y + step[1],
                wrap_angle(p.yaw() + d[2]),
            )));
        }
        out
    };
    let weights: Vec<Option<DMatrix<f64>>> = data
        .bundles
        .iter()
        .map(|b| b.as_ref().map(|b| tdoa_weight(b.len(), 1.0)))
        .collect();
    let cost_of = |poses: &[Pose]| -> f64 {
        let mut c = 0.0;
        for (k, b) in data.bundles.iter().enumerate() {
            if let (Some(b), Some(w)) = (b, &weights[k]) {
                let r = &b.values - predict_tdoa(&poses[k], &b.layout, s);
                c += (r.transpose() * w * &r)[0];
            }
        }
        c
    };
    let mut cost = vec![0.0; nx * ny * nz];
    let at = |ix: usize, iy: usize, iz: usize| (ix * ny + iy) * nz + iz;
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                cost[at(ix, iy, iz)] = cost_of(&poses_at(ix, iy, iz));
            }
        }
    }
    let s2 = data.noise.sigma * data.noise.sigma;
    let mut minima = Vec::new();
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let c = cost[at(ix, iy, iz)];
                let mut is_min = true;
                'nb: for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dz in -1i64..=1 {
                            if dx == 0 && dy == 0 && dz == 0 {
                                continue;
                            }
                            let jx = ix as i64 + dx;
                            let jy = iy as i64 + dy;
                            if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                                continue;
                            }
                            let jz = (iz as i64 + dz).rem_euclid(nz as i64) as usize;
                            if cost[at(jx as usize, jy as usize, jz)] < c {
                                is_min = false;
                                break 'nb;
                            }
                        }
                    }
                }
                let scaled = if s2 > 0.0 { c / s2 } else { c };
                if is_min && scaled <= grid.max_cost {
                    minima.push(GridMinimum {
                        poses: poses_at(ix, iy, iz),
                        cost: scaled,
                    });
                }
            }
        }
    }
    minima.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    Ok(minima)
}
