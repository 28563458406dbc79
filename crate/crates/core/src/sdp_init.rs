//! Convex initialisation of a K-epoch window.
//!
//! Each epoch contributes a lifted variable over
//!
//! ```text
//! f = [sin ψ, cos ψ, x, y, r_ref, (Rᵀ p_c)ᵀ]      (8 entries)
//! ```
//!
//! held in the 9×9 block `[F f; fᵀ 1] ⪰ 0`, where `r_ref` is the range of the
//! reference TDOA pair and `p_c = [x, y, h]`. Squaring the TDOA model about the
//! reference range makes it linear in `f`, `m ≈ G f`, and the weighted least
//! squares cost becomes linear in `(f, F)` once `f fᵀ` is replaced by `F`.
//!
//! Consecutive epochs are tied by two more lifted blocks per pair: a 7×7
//! block over `[x_k, y_k, u_{k−1}, x_{k−1}, y_{k−1}]` carrying the measured
//! body-frame displacement, and a 5×5 block over `[u_k, u_{k−1}]` carrying the
//! measured yaw change as `u_k ≈ T(Δψ̃) u_{k−1}`. Their first-order entries
//! are equated with the matching entries of the epoch blocks.
//!
//! All costs are divided by σ², so only the ratios σ/σ_p and σ/σ_ψ enter.

use nalgebra::{DMatrix, DVector, Matrix2, SMatrix, SVector, Vector2, Vector3};

use crate::conic::{
    ConicProgram, ConicSolution, ConicSolver, InteriorPoint, SolveStatus, SolverOptions, Term,
};
use crate::error::{Error, Result};
use crate::frames::{kronecker_row, wrap_angle, Attitude, Pose, RotationVectorization};
use crate::measurement::TdoaBundle;
use crate::scenario::{NoiseLevels, Scenario};

/// Entries of `f` inside an epoch block.
pub mod idx {
    pub const SIN: usize = 0;
    pub const COS: usize = 1;
    pub const X: usize = 2;
    pub const Y: usize = 3;
    pub const R_REF: usize = 4;
    /// First of the three `Rᵀ p_c` entries.
    pub const RT_PC: usize = 5;
    pub const LEN: usize = 8;
    /// The homogenising 1.
    pub const ONE: usize = 8;
}

/// How the range-dependent weights `B = 2 diag(r)` are approximated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RangeWeighting {
    /// `r ≈ mean TOA of the epoch`: equal weights.
    #[default]
    MeanToa,
    /// `r ≈ TOA` row by row.
    Toa,
    /// `r ≈ TOA − bias` for a known clock-bias prior.
    BiasPrior(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extraction {
    /// Read `f` from the last column of each epoch block.
    #[default]
    Direct,
    /// Dominant eigenvector of the epoch block, normalised to end in 1.
    Eigenvector,
}

/// How the measured yaw change enters the relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum YawLift {
    /// Separate lift over `[ψ_k, ψ_{k−1}]`, chained between pairs; it shares
    /// no entries with the epoch blocks.
    #[default]
    Angle,
    /// Lift over `[u_k, u_{k−1}]` with `u_k ≈ T(Δψ̃) u_{k−1}`, tied to the
    /// epoch blocks.
    Chord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpOptions {
    pub weighting: RangeWeighting,
    pub extraction: Extraction,
    pub yaw_lift: YawLift,
    /// Also equate the `Rᵀp_c` entries of `f` with their expression in `F`;
    /// otherwise the expression is only substituted into the reference-range
    /// equality.
    pub tie_rotated_center: bool,
    /// Weight of `tr(X)` on every block, relative to the largest cost
    /// coefficient. Keeps the optimal set bounded.
    pub trace_regularization: f64,
    pub solver: SolverOptions,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            weighting: RangeWeighting::MeanToa,
            extraction: Extraction::Direct,
            yaw_lift: YawLift::Angle,
            tie_rotated_center: false,
            trace_regularization: 1e-8,
            solver: SolverOptions {
                tol_feas: 1e-9,
                tol_gap: 1e-9,
                max_iter: 100,
            },
        }
    }
}

/// Known geometry in (possibly recentred and rescaled) working units.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub anchors: Vec<Vector3<f64>>,
    pub levers: Vec<Vector3<f64>>,
    pub h: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl Geometry {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            anchors: s.anchors.clone(),
            levers: s.levers.clone(),
            h: s.h,
            roll: s.roll,
            pitch: s.pitch,
        }
    }

    /// Maps navigation coordinates `p ↦ (p − center) / scale`; levers scale only.
    fn working(&self, center: &Vector3<f64>, scale: f64) -> Self {
        Self {
            anchors: self.anchors.iter().map(|p| (p - center) / scale).collect(),
            levers: self.levers.iter().map(|l| l / scale).collect(),
            h: (self.h - center[2]) / scale,
            roll: self.roll,
            pitch: self.pitch,
        }
    }
}

/// Linearised TDOA model of one epoch: `m ≈ G f` with weight `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToaBlocks {
    pub m: DVector<f64>,
    /// `L × 8`
    pub g: DMatrix<f64>,
    /// Diagonal of `B`.
    pub b: DVector<f64>,
    /// `B⁻¹ (I + 11ᵀ)⁻¹ B⁻¹`, i.e. `B⁻¹ Q⁻¹ B⁻¹` times σ².
    pub w: DMatrix<f64>,
}

/// The lifted vector `f` of a pose, for the given reference pair.
pub fn lift_vector(pose: &Pose, geom: &Geometry, reference: (usize, usize)) -> SVector<f64, 8> {
    let att = Attitude::new(pose.yaw(), geom.roll, geom.pitch);
    let p = Pose::new(pose.x, pose.y, att, geom.h);
    let r = p.rotation();
    let (ri, rj) = reference;
    let r_ref = (geom.anchors[rj] - p.center() - r * geom.levers[ri]).norm();
    let t = r.transpose() * p.center();
    let u = att.direction();
    SVector::<f64, 8>::from_column_slice(&[u[0], u[1], pose.x, pose.y, r_ref, t[0], t[1], t[2]])
}

/// Builds `m`, `G`, `B` and `W` for one epoch.
///
/// `ranges` overrides the weighting policy with known ranges, one per TDOA
/// row.
pub fn build_toa_blocks(
    bundle: &TdoaBundle,
    geom: &Geometry,
    weighting: RangeWeighting,
    ranges: Option<&[f64]>,
) -> Result<ToaBlocks> {
    let l = bundle.len();
    if l == 0 {
        return Err(Error::InsufficientMeasurements(
            "epoch has no TDOA rows".into(),
        ));
    }
    let (alpha, gamma) = RotationVectorization::basis(geom.roll, geom.pitch);
    let (ri, rj) = bundle.layout.reference;
    let p1 = geom.anchors[rj];
    let l1 = geom.levers[ri];
    let k1 = kronecker_row(&l1, &p1);
    let mut m = DVector::zeros(l);
    let mut g = DMatrix::zeros(l, idx::LEN);
    for (row, &(i, j)) in bundle.layout.rows.iter().enumerate() {
        let pj = geom.anchors[j];
        let li = geom.levers[i];
        let dk = k1 - kronecker_row(&li, &pj);
        let dp = p1 - pj;
        let drho = bundle.values[row];
        m[row] = drho * drho - pj.norm_squared() + p1.norm_squared() + l1.norm_squared()
            - li.norm_squared()
            - 2.0 * dp[2] * geom.h
            - 2.0 * (dk * alpha)[0];
        let dg = dk * gamma;
        g[(row, idx::SIN)] = 2.0 * dg[0];
        g[(row, idx::COS)] = 2.0 * dg[1];
        g[(row, idx::X)] = 2.0 * dp[0];
        g[(row, idx::Y)] = 2.0 * dp[1];
        g[(row, idx::R_REF)] = -2.0 * drho;
        for c in 0..3 {
            g[(row, idx::RT_PC + c)] = 2.0 * (li[c] - l1[c]);
        }
    }
    let b = match ranges {
        Some(r) => {
            if r.len() != l {
                return Err(Error::InsufficientMeasurements(format!(
                    "{} ranges supplied for {l} TDOA rows",
                    r.len()
                )));
            }
            DVector::from_iterator(l, r.iter().map(|v| 2.0 * v))
        }
        None => match weighting {
            RangeWeighting::MeanToa => {
                let mean = bundle.toas.mean();
                DVector::from_element(l, 2.0 * mean)
            }
            RangeWeighting::Toa => {
                DVector::from_iterator(l, bundle.toas.iter().skip(1).map(|t| 2.0 * t))
            }
            RangeWeighting::BiasPrior(bias) => DVector::from_iterator(
                l,
                bundle
                    .toas
                    .iter()
                    .skip(1)
                    .map(|t| 2.0 * (t - bias).max(f64::EPSILON)),
            ),
        },
    };
    // (I + 11ᵀ)⁻¹ = I − 11ᵀ/(L+1)
    let n = l as f64 + 1.0;
    let mut w = DMatrix::from_element(l, l, -1.0 / n);
    for r in 0..l {
        w[(r, r)] += 1.0;
    }
    for r in 0..l {
        for c in 0..l {
            w[(r, c)] /= b[r] * b[c];
        }
    }
    Ok(ToaBlocks { m, g, b, w })
}

/// Block indices of one epoch and one inter-epoch pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairBlocks {
    pub position: usize,
    pub yaw: usize,
}

/// A built window program together with the map back to navigation units.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub program: ConicProgram,
    pub epoch_blocks: Vec<usize>,
    pub pair_blocks: Vec<PairBlocks>,
    /// Working units are `(p − center) / scale`.
    pub center: Vector3<f64>,
    pub scale: f64,
    pub geometry: Geometry,
    pub references: Vec<Option<(usize, usize)>>,
}

/// Recentring and scale taken from the anchors.
fn working_frame(geom: &Geometry) -> (Vector3<f64>, f64) {
    let n = geom.anchors.len() as f64;
    let center = geom.anchors.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let spread = (geom
        .anchors
        .iter()
        .map(|p| (p - center).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    (center, if spread > 0.0 { spread } else { 1.0 })
}

fn scale_bundle(b: &TdoaBundle, scale: f64) -> TdoaBundle {
    let mut out = b.clone();
    out.values /= scale;
    out.toas /= scale;
    out.sigma /= scale;
    out
}

/// Adds `w · (tr(H F) − 2 cᵀ f)` for `f` stored at `slots` of `block`
/// (the homogenising entry at `one`).
fn add_lifted_quadratic(
    p: &mut ConicProgram,
    block: usize,
    slots: &[usize],
    one: usize,
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    w: f64,
) {
    for a in 0..slots.len() {
        p.add_objective(block, slots[a], one, -2.0 * w * c[a]);
        p.add_objective(block, slots[a], slots[a], w * h[(a, a)]);
        for b in a + 1..slots.len() {
            p.add_objective(block, slots[a], slots[b], 2.0 * w * h[(a, b)]);
        }
    }
}

/// Assembles the window program.
///
/// `bundles[k]` is `None` for an epoch without TDOA rows; `inter[k − 1]` is
/// the measured change from epoch `k − 1` to epoch `k`.
pub fn build_sdp_window(
    geom: &Geometry,
    bundles: &[Option<TdoaBundle>],
    inter: &[Vector3<f64>],
    noise: &NoiseLevels,
    opts: &SdpOptions,
) -> Result<SdpProblem> {
    let k_len = bundles.len();
    if k_len == 0 {
        return Err(Error::InsufficientMeasurements("empty window".into()));
    }
    if inter.len() + 1 != k_len {
        return Err(Error::InsufficientMeasurements(format!(
            "{} inter-epoch measurements for {k_len} epochs",
            inter.len()
        )));
    }
    let rows: usize = bundles.iter().flatten().map(|b| b.len()).sum();
    if rows < 3 * k_len {
        return Err(Error::InsufficientMeasurements(format!(
            "{rows} TDOA rows for {} unknowns",
            3 * k_len
        )));
    }

    let (center, scale) = working_frame(geom);
    let wg = geom.working(&center, scale);
    let (alpha, gamma) = RotationVectorization::basis(wg.roll, wg.pitch);
    let mut p = ConicProgram::new();
    let mut epoch_blocks = Vec::with_capacity(k_len);
    let mut references = Vec::with_capacity(k_len);
    let mut max_coeff: f64 = 0.0;

    for bundle in bundles {
        let blk = p.add_block(idx::LEN + 1);
        epoch_blocks.push(blk);
        p.add_constraint(vec![Term::new(blk, idx::ONE, idx::ONE, 1.0)], 1.0);
        p.add_constraint(
            vec![
                Term::new(blk, idx::SIN, idx::SIN, 1.0),
                Term::new(blk, idx::COS, idx::COS, 1.0),
            ],
            1.0,
        );
        if opts.tie_rotated_center {
            for mm in 0..3 {
                let (mut terms, c) = rotated_center_terms(blk, mm, &alpha, &gamma, wg.h, -1.0);
                terms.push(Term::new(blk, idx::RT_PC + mm, idx::ONE, 1.0));
                p.add_constraint(terms, -c);
            }
        }

        let Some(bundle) = bundle.as_ref().filter(|b| !b.is_empty()) else {
            references.push(None);
            continue;
        };
        references.push(Some(bundle.layout.reference));
        let sb = scale_bundle(bundle, scale);
        let tb = build_toa_blocks(&sb, &wg, scaled_weighting(opts.weighting, scale), None)?;
        let h = tb.g.transpose() * &tb.w * &tb.g;
        let c = tb.g.transpose() * &tb.w * &tb.m;
        let slots: Vec<usize> = (0..idx::LEN).collect();
        add_lifted_quadratic(&mut p, blk, &slots, idx::ONE, &h, &c, 1.0);
        p.objective_offset += (tb.m.transpose() * &tb.w * &tb.m)[0];
        max_coeff = max_coeff.max(h.amax());

        // r_ref² = ‖p1 − p_c − R l1‖²
        let (ri, rj) = bundle.layout.reference;
        let p1 = wg.anchors[rj];
        let l1 = wg.levers[ri];
        let k1 = kronecker_row(&l1, &p1);
        let kg = k1 * gamma;
        let mut terms = vec![
            Term::new(blk, idx::R_REF, idx::R_REF, 1.0),
            Term::new(blk, idx::X, idx::X, -1.0),
            Term::new(blk, idx::Y, idx::Y, -1.0),
            Term::new(blk, idx::X, idx::ONE, 2.0 * p1[0]),
            Term::new(blk, idx::Y, idx::ONE, 2.0 * p1[1]),
            Term::new(blk, idx::SIN, idx::ONE, 2.0 * kg[0]),
            Term::new(blk, idx::COS, idx::ONE, 2.0 * kg[1]),
        ];
        let mut rhs = p1.norm_squared() + l1.norm_squared() + wg.h * wg.h
            - 2.0 * p1[2] * wg.h
            - 2.0 * (k1 * alpha)[0];
        for c in 0..3 {
            if opts.tie_rotated_center {
                terms.push(Term::new(blk, idx::RT_PC + c, idx::ONE, -2.0 * l1[c]));
            } else {
                let (sub, konst) = rotated_center_terms(blk, c, &alpha, &gamma, wg.h, -2.0 * l1[c]);
                terms.extend(sub);
                rhs -= konst;
            }
        }
        p.add_constraint(terms, rhs);
    }

    let mut pair_blocks = Vec::with_capacity(inter.len());
    let wp = (noise.sigma / noise.sigma_p).powi(2);
    let wy = (noise.sigma / noise.sigma_psi).powi(2);
    for (pair, d) in inter.iter().enumerate() {
        let (prev, cur) = (epoch_blocks[pair], epoch_blocks[pair + 1]);

        // position: x_k − x_{k−1} − [R_{k−1} Δp̃]₁:₂ = 0, Δp̃ = [Δx̃, Δỹ, 0]
        let pb = p.add_block(7);
        let dp = Vector3::new(d[0] / scale, d[1] / scale, 0.0);
        let mut kron = SMatrix::<f64, 2, 9>::zeros();
        for r in 0..2 {
            for c in 0..3 {
                kron[(r, 3 * c + r)] = dp[c];
            }
        }
        let mp = kron * alpha;
        let kg = kron * gamma;
        let mut s = DMatrix::zeros(2, 6);
        s[(0, 0)] = 1.0;
        s[(1, 1)] = 1.0;
        for r in 0..2 {
            s[(r, 2)] = -kg[(r, 0)];
            s[(r, 3)] = -kg[(r, 1)];
        }
        s[(0, 4)] = -1.0;
        s[(1, 5)] = -1.0;
        let mpv = DVector::from_column_slice(mp.as_slice());
        let h = s.transpose() * &s;
        let c = s.transpose() * &mpv;
        add_lifted_quadratic(&mut p, pb, &[0, 1, 2, 3, 4, 5], 6, &h, &c, wp);
        p.objective_offset += wp * mpv.norm_squared();
        max_coeff = max_coeff.max(wp * h.amax());
        p.add_constraint(vec![Term::new(pb, 6, 6, 1.0)], 1.0);
        let shared = [
            (0, cur, idx::X),
            (1, cur, idx::Y),
            (2, prev, idx::SIN),
            (3, prev, idx::COS),
            (4, prev, idx::X),
            (5, prev, idx::Y),
        ];
        for (slot, blk, entry) in shared {
            p.add_constraint(
                vec![
                    Term::new(pb, slot, 6, 1.0),
                    Term::new(blk, entry, idx::ONE, -1.0),
                ],
                0.0,
            );
        }

        let yb = match opts.yaw_lift {
            YawLift::Angle => {
                // ψ_k − ψ_{k−1} = Δψ̃ over o = [ψ_k, ψ_{k−1}]
                let yb = p.add_block(3);
                let h = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
                let c = DVector::from_column_slice(&[d[2], -d[2]]);
                add_lifted_quadratic(&mut p, yb, &[0, 1], 2, &h, &c, wy);
                p.objective_offset += wy * d[2] * d[2];
                max_coeff = max_coeff.max(wy);
                p.add_constraint(vec![Term::new(yb, 2, 2, 1.0)], 1.0);
                if let Some(last) = pair_blocks.last() {
                    let last: &PairBlocks = last;
                    p.add_constraint(
                        vec![Term::new(yb, 1, 2, 1.0), Term::new(last.yaw, 0, 2, -1.0)],
                        0.0,
                    );
                }
                yb
            }
            YawLift::Chord => {
                // u_k − T(Δψ̃) u_{k−1} = 0
                let yb = p.add_block(5);
                let (sd, cd) = d[2].sin_cos();
                let t = Matrix2::new(cd, sd, -sd, cd);
                let mut s = DMatrix::zeros(2, 4);
                s[(0, 0)] = 1.0;
                s[(1, 1)] = 1.0;
                for r in 0..2 {
                    for c in 0..2 {
                        s[(r, 2 + c)] = -t[(r, c)];
                    }
                }
                let h = s.transpose() * &s;
                let c = DVector::zeros(4);
                add_lifted_quadratic(&mut p, yb, &[0, 1, 2, 3], 4, &h, &c, wy);
                max_coeff = max_coeff.max(wy * h.amax());
                p.add_constraint(vec![Term::new(yb, 4, 4, 1.0)], 1.0);
                let shared = [
                    (0, cur, idx::SIN),
                    (1, cur, idx::COS),
                    (2, prev, idx::SIN),
                    (3, prev, idx::COS),
                ];
                for (slot, blk, entry) in shared {
                    p.add_constraint(
                        vec![
                            Term::new(yb, slot, 4, 1.0),
                            Term::new(blk, entry, idx::ONE, -1.0),
                        ],
                        0.0,
                    );
                }
                yb
            }
        };
        pair_blocks.push(PairBlocks {
            position: pb,
            yaw: yb,
        });
    }

    let reg = opts.trace_regularization * max_coeff.max(1.0);
    if reg > 0.0 {
        for (b, &n) in p.block_sizes().to_vec().iter().enumerate() {
            // the homogenising corner is fixed, so it is left out
            for i in 0..n - 1 {
                p.add_objective(b, i, i, reg);
            }
        }
    }

    Ok(SdpProblem {
        program: p,
        epoch_blocks,
        pair_blocks,
        center,
        scale,
        geometry: geom.clone(),
        references,
    })
}

/// `w · [Rᵀ p_c]_m` written over the epoch block as `(terms, constant)`, using
/// `R[n, m] = vec(R)[3m + n] = α + Γ u` and `p_c = [x, y, h]`.
fn rotated_center_terms(
    blk: usize,
    m: usize,
    alpha: &SVector<f64, 9>,
    gamma: &SMatrix<f64, 9, 2>,
    h: f64,
    w: f64,
) -> (Vec<Term>, f64) {
    let mut terms = Vec::new();
    for n in 0..2 {
        let v = 3 * m + n;
        terms.push(Term::new(blk, idx::X + n, idx::ONE, w * alpha[v]));
        terms.push(Term::new(blk, idx::SIN, idx::X + n, w * gamma[(v, 0)]));
        terms.push(Term::new(blk, idx::COS, idx::X + n, w * gamma[(v, 1)]));
    }
    let v = 3 * m + 2;
    terms.push(Term::new(blk, idx::SIN, idx::ONE, w * h * gamma[(v, 0)]));
    terms.push(Term::new(blk, idx::COS, idx::ONE, w * h * gamma[(v, 1)]));
    (terms, w * h * alpha[v])
}

fn scaled_weighting(w: RangeWeighting, scale: f64) -> RangeWeighting {
    match w {
        RangeWeighting::MeanToa => RangeWeighting::MeanToa,
        RangeWeighting::Toa => RangeWeighting::Toa,
        RangeWeighting::BiasPrior(b) => RangeWeighting::BiasPrior(b / scale),
    }
}

/// Per-epoch output of the relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLift {
    /// `f` in navigation units (`x`, `y`, `r_ref`, `Rᵀp_c` unscaled).
    pub f: SVector<f64, 8>,
    /// `λ₂(F) / λ₁(F)`
    pub rank_gap: f64,
}

#[derive(Debug, Clone)]
pub struct SdpInit {
    pub poses: Vec<Pose>,
    pub lifts: Vec<EpochLift>,
    /// Full cost (constant included) in units of σ².
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
}

impl SdpInit {
    pub fn max_rank_gap(&self) -> f64 {
        self.lifts.iter().map(|l| l.rank_gap).fold(0.0, f64::max)
    }
}

fn rank_gap(f_block: &DMatrix<f64>) -> f64 {
    let mut ev: Vec<f64> = f_block
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 {
        return 1.0;
    }
    (ev[1].max(0.0)) / ev[0]
}

/// Reads poses (and diagnostics) out of a solved window.
pub fn extract_poses(
    problem: &SdpProblem,
    sol: &ConicSolution,
    mode: Extraction,
) -> Result<SdpInit> {
    let g = &problem.geometry;
    let mut poses = Vec::with_capacity(problem.epoch_blocks.len());
    let mut lifts = Vec::with_capacity(problem.epoch_blocks.len());
    for (k, &b) in problem.epoch_blocks.iter().enumerate() {
        let x = &sol.blocks[b];
        let f_work: SVector<f64, 8> = match mode {
            Extraction::Direct => SVector::from_iterator((0..idx::LEN).map(|i| x[(i, idx::ONE)])),
            Extraction::Eigenvector => {
                let eig = x.clone().symmetric_eigen();
                let top = eig.eigenvalues.imax();
                let v = eig.eigenvectors.column(top);
                let last = v[idx::ONE];
                if last.abs() < f64::EPSILON {
                    return Err(Error::DegenerateLift {
                        epoch: k,
                        norm: 0.0,
                    });
                }
                SVector::from_iterator((0..idx::LEN).map(|i| v[i] / last))
            }
        };
        let u = Vector2::new(f_work[idx::SIN], f_work[idx::COS]);
        let norm = u.norm();
        if norm < 0.1 {
            return Err(Error::DegenerateLift { epoch: k, norm });
        }
        let yaw = wrap_angle(u[0].atan2(u[1]));
        let s = problem.scale;
        let mut f = f_work;
        f[idx::X] = f_work[idx::X] * s + problem.center[0];
        f[idx::Y] = f_work[idx::Y] * s + problem.center[1];
        f[idx::R_REF] *= s;
        poses.push(Pose::new(
            f[idx::X],
            f[idx::Y],
            Attitude::new(yaw, g.roll, g.pitch),
            g.h,
        ));
        // Rᵀp_c in navigation units: Rᵀ(s p' + center) = s Rᵀp' + Rᵀcenter
        let r = poses[k].rotation();
        let rc = r.transpose() * problem.center;
        for c in 0..3 {
            f[idx::RT_PC + c] = f_work[idx::RT_PC + c] * s + rc[c];
        }
        let fb = x.view((0, 0), (idx::LEN, idx::LEN)).into_owned();
        lifts.push(EpochLift {
            f,
            rank_gap: rank_gap(&fb),
        });
    }
    Ok(SdpInit {
        poses,
        lifts,
        objective: sol.objective,
        status: sol.status,
        iterations: sol.iterations,
        primal_residual: sol.primal_residual,
    })
}

/// Builds, solves and extracts a window with the given solver.
pub fn solve_window_with<S: ConicSolver>(
    solver: &S,
    geom: &Geometry,
    bundles: &[Option<TdoaBundle>],
    inter: &[Vector3<f64>],
    noise: &NoiseLevels,
    opts: &SdpOptions,
) -> Result<SdpInit> {
    let problem = build_sdp_window(geom, bundles, inter, noise, opts)?;
    let sol = solver.solve(&problem.program, &opts.solver)?;
    match sol.status {
        SolveStatus::Infeasible => Err(Error::Infeasible(sol.message)),
        // a stalled solve still yields a usable initial point
        SolveStatus::Optimal | SolveStatus::MaxIterations => {
            extract_poses(&problem, &sol, opts.extraction)
        }
    }
}

pub fn solve_window(
    geom: &Geometry,
    bundles: &[Option<TdoaBundle>],
    inter: &[Vector3<f64>],
    noise: &NoiseLevels,
    opts: &SdpOptions,
) -> Result<SdpInit> {
    solve_window_with(&InteriorPoint, geom, bundles, inter, noise, opts)
}
