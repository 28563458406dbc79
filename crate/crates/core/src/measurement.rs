//! TOA bookkeeping, TDOA differencing and the two measurement models
//! (per-epoch TDOA and inter-epoch position/yaw change).

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{antenna_position, wrap_angle, Pose};
use crate::scenario::Scenario;

/// One TOA: antenna `antenna` received anchor `anchor` with pseudorange `value` (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Toa {
    pub antenna: usize,
    pub anchor: usize,
    pub value: f64,
}

/// Everything measured at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMeasurements {
    pub num_antennas: usize,
    /// Sorted antenna-then-anchor.
    pub toas: Vec<Toa>,
    /// `[Δx̃, Δỹ, Δψ̃]` relative to the previous epoch, in its body frame.
    pub inter_epoch: Option<Vector3<f64>>,
}

impl EpochMeasurements {
    pub fn new(num_antennas: usize, mut toas: Vec<Toa>, inter_epoch: Option<Vector3<f64>>) -> Self {
        toas.sort_by_key(|t| (t.antenna, t.anchor));
        Self {
            num_antennas,
            toas,
            inter_epoch,
        }
    }

    pub fn visibility(&self) -> Vec<Vec<usize>> {
        let mut vis = vec![Vec::new(); self.num_antennas];
        for t in &self.toas {
            vis[t.antenna].push(t.anchor);
        }
        vis
    }

    /// Same epoch with every TOA shifted by `offset` meters.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.toas {
            t.value += offset;
        }
        out
    }
}

/// Which (antenna, anchor) pair is the reference, and which pairs make up
/// the TDOA rows, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdoaLayout {
    pub reference: (usize, usize),
    pub rows: Vec<(usize, usize)>,
}

impl TdoaLayout {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// TDOA vector of one epoch with its noise model `Q = σ² E Eᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaBundle {
    pub layout: TdoaLayout,
    /// `Δρ`, one entry per row.
    pub values: DVector<f64>,
    /// The raw TOAs, reference first then rows in order.
    pub toas: DVector<f64>,
    pub sigma: f64,
    pub covariance: DMatrix<f64>,
    /// `E = [-1, I]`, mapping the `L+1` TOA noises onto the `L` TDOA noises.
    pub selection: DMatrix<f64>,
}

impl TdoaBundle {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Q⁻¹ = σ⁻² (I − 11ᵀ/(L+1))`.
    pub fn weight(&self) -> DMatrix<f64> {
        tdoa_weight(self.len(), self.sigma)
    }
}

pub fn selection_matrix(rows: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(rows, rows + 1);
    for r in 0..rows {
        e[(r, 0)] = -1.0;
        e[(r, r + 1)] = 1.0;
    }
    e
}

pub fn tdoa_covariance(rows: usize, sigma: f64) -> DMatrix<f64> {
    let e = selection_matrix(rows);
    &e * e.transpose() * (sigma * sigma)
}

pub fn tdoa_weight(rows: usize, sigma: f64) -> DMatrix<f64> {
    let n = rows as f64 + 1.0;
    let mut w = DMatrix::from_element(rows, rows, -1.0 / n);
    for r in 0..rows {
        w[(r, r)] += 1.0;
    }
    w / (sigma * sigma)
}

/// Differences every TOA against the first visible (antenna, anchor) pair.
pub fn form_tdoa(epoch: &EpochMeasurements, sigma: f64) -> Result<TdoaBundle> {
    let first = epoch
        .toas
        .first()
        .ok_or_else(|| Error::InsufficientMeasurements("epoch has no TOAs".into()))?;
    form_tdoa_with_reference(epoch, sigma, (first.antenna, first.anchor))
}

/// As [`form_tdoa`] with an explicit reference pair.
pub fn form_tdoa_with_reference(
    epoch: &EpochMeasurements,
    sigma: f64,
    reference: (usize, usize),
) -> Result<TdoaBundle> {
    if epoch.toas.len() < 2 {
        return Err(Error::InsufficientMeasurements(format!(
            "{} TOA(s), need at least 2 to form a TDOA",
            epoch.toas.len()
        )));
    }
    let ref_toa = epoch
        .toas
        .iter()
        .find(|t| (t.antenna, t.anchor) == reference)
        .ok_or_else(|| {
            Error::InsufficientMeasurements(format!("reference {reference:?} not visible"))
        })?;
    let others: Vec<&Toa> = epoch
        .toas
        .iter()
        .filter(|t| (t.antenna, t.anchor) != reference)
        .collect();
    let l = others.len();
    let values = DVector::from_iterator(l, others.iter().map(|t| t.value - ref_toa.value));
    let toas = DVector::from_iterator(
        l + 1,
        std::iter::once(ref_toa.value).chain(others.iter().map(|t| t.value)),
    );
    Ok(TdoaBundle {
        layout: TdoaLayout {
            reference,
            rows: others.iter().map(|t| (t.antenna, t.anchor)).collect(),
        },
        values,
        toas,
        sigma,
        covariance: tdoa_covariance(l, sigma),
        selection: selection_matrix(l),
    })
}

/// Range from antenna `i` (at `pose`) to anchor `j`.
pub fn range(pose: &Pose, scenario: &Scenario, i: usize, j: usize) -> f64 {
    (scenario.anchors[j] - antenna_position(pose, &scenario.levers[i])).norm()
}

/// Noise-free TDOAs `g(θ)` for the rows of `layout` at `pose`.
pub fn predict_tdoa(pose: &Pose, layout: &TdoaLayout, scenario: &Scenario) -> DVector<f64> {
    let (ri, rj) = layout.reference;
    let r_ref = range(pose, scenario, ri, rj);
    DVector::from_iterator(
        layout.len(),
        layout
            .rows
            .iter()
            .map(|&(i, j)| range(pose, scenario, i, j) - r_ref),
    )
}

/// `[ [R_{k−1}ᵀ(p_c(k) − p_c(k−1))]₁, [·]₂, ψ_k − ψ_{k−1} ]` with the yaw
/// difference wrapped.
pub fn predict_inter_epoch(pose_k: &Pose, pose_km1: &Pose) -> Vector3<f64> {
    let d = pose_km1.rotation().transpose() * (pose_k.center() - pose_km1.center());
    Vector3::new(d[0], d[1], wrap_angle(pose_k.yaw() - pose_km1.yaw()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::Attitude;
    use crate::scenario::{build_four_anchor_scene, substream, synthesize_epoch, NoiseLevels};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn epoch_of(values: &[f64]) -> EpochMeasurements {
        EpochMeasurements::new(
            1,
            values
                .iter()
                .enumerate()
                .map(|(j, &v)| Toa {
                    antenna: 0,
                    anchor: j,
                    value: v,
                })
                .collect(),
            None,
        )
    }

    fn noiseless(s: &crate::scenario::Scenario) -> crate::scenario::Scenario {
        s.with_noise(NoiseLevels {
            sigma: 1e-300,
            sigma_p: 1e-300,
            sigma_psi: 1e-300,
        })
    }

    #[test]
    fn differencing_against_first() {
        let b = form_tdoa(&epoch_of(&[206.5, 210.0, 201.1]), 0.1).unwrap();
        assert_relative_eq!(b.values[0], 3.5, epsilon = 1e-12);
        assert_relative_eq!(b.values[1], -5.4, epsilon = 1e-12);
        assert_eq!(b.layout.reference, (0, 0));
    }

    #[test]
    fn covariance_structure() {
        let b = form_tdoa(&epoch_of(&[1.0, 2.0, 3.0, 4.0]), 0.1).unwrap();
        assert_eq!(b.len(), 3);
        for r in 0..3 {
            for c in 0..3 {
                let expected = if r == c { 0.02 } else { 0.01 };
                assert_relative_eq!(b.covariance[(r, c)], expected, epsilon = 1e-15);
            }
        }
        let prod = &b.covariance * b.weight();
        assert_relative_eq!(prod, DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn too_few_toas() {
        assert!(matches!(
            form_tdoa(&epoch_of(&[1.0]), 0.1),
            Err(Error::InsufficientMeasurements(_))
        ));
        assert!(form_tdoa(&epoch_of(&[]), 0.1).is_err());
    }

    #[test]
    fn four_anchor_first_epoch_layout() {
        let s = build_four_anchor_scene();
        let (m, _) = synthesize_epoch(&s, 0, &mut substream(0, 0, 0));
        let b = form_tdoa(&m, 0.1).unwrap();
        assert_eq!(b.len(), 5);
        // antenna 1, anchor 2 in 1-based numbering
        assert_eq!(b.layout.reference, (0, 1));
        assert_eq!(b.layout.rows, vec![(0, 3), (1, 0), (1, 2), (1, 3), (2, 0)]);
    }

    #[test]
    fn prediction_at_truth_matches_noiseless() {
        let s = noiseless(&build_four_anchor_scene());
        for k in 0..s.num_epochs() {
            let (m, truth) = synthesize_epoch(&s, k, &mut substream(0, 0, k as u64));
            let b = form_tdoa(&m, 0.1).unwrap();
            let g = predict_tdoa(&truth, &b.layout, &s);
            assert!((g - &b.values).abs().max() < 1e-10);
        }
    }

    #[test]
    fn coincident_anchors_give_zero() {
        let mut s = build_four_anchor_scene();
        s.anchors[1] = s.anchors[0];
        let layout = TdoaLayout {
            reference: (0, 0),
            rows: vec![(0, 1)],
        };
        let g = predict_tdoa(&s.trajectory[2], &layout, &s);
        assert_relative_eq!(g[0], 0.0);
    }

    #[test]
    fn inter_epoch_prediction() {
        let p0 = Pose::new(0.0, 0.0, Attitude::level(0.0), 0.0);
        let p1 = Pose::new(1.0, 0.0, Attitude::level(0.2), 0.0);
        assert_relative_eq!(
            predict_inter_epoch(&p1, &p0),
            Vector3::new(1.0, 0.0, 0.2),
            epsilon = 1e-15
        );
        let p0 = Pose::new(0.0, 0.0, Attitude::level(FRAC_PI_2), 0.0);
        let p1 = Pose::new(1.0, 0.0, Attitude::level(FRAC_PI_2 + 0.2), 0.0);
        assert_relative_eq!(
            predict_inter_epoch(&p1, &p0),
            Vector3::new(0.0, 1.0, 0.2),
            epsilon = 1e-15
        );
        assert_relative_eq!(predict_inter_epoch(&p1, &p1), Vector3::zeros());
        // wrapped across ±π
        let a = Pose::new(0.0, 0.0, Attitude::level(3.1), 0.0);
        let b = Pose::new(0.0, 0.0, Attitude::level(-3.1), 0.0);
        assert_relative_eq!(
            predict_inter_epoch(&b, &a)[2],
            2.0 * std::f64::consts::PI - 6.2,
            epsilon = 1e-12
        );
    }

    proptest! {
        #[test]
        fn clock_bias_cancels(offset in -500.0f64..500.0, seed in 0u64..1000) {
            let s = build_four_anchor_scene();
            let (m, _) = synthesize_epoch(&s, 2, &mut substream(seed, 0, 2));
            let a = form_tdoa(&m, 0.1).unwrap();
            let b = form_tdoa(&m.shifted(offset), 0.1).unwrap();
            prop_assert!((a.values - b.values).abs().max() < 1e-9);
        }

        #[test]
        fn covariance_is_sigma2_i_plus_ones(rows in 1usize..12, sigma in 0.01f64..1.0) {
            let q = tdoa_covariance(rows, sigma);
            let expected = (DMatrix::identity(rows, rows) + DMatrix::from_element(rows, rows, 1.0)) * sigma * sigma;
            prop_assert!((q - expected).abs().max() < 1e-14);
        }
    }
}
