//! Fisher information and Cramér-Rao bounds at the true poses.
//!
//! ```text
//! F_SEMA(k) = H_kᵀ Q_k⁻¹ H_k
//! F_MEMA    = blkdiag(F_SEMA(1..K)) + H_IPᵀ W_IP H_IP
//! ```

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::frames::Pose;
use crate::measurement::{tdoa_weight, TdoaLayout};
use crate::refine::{inter_epoch_jacobian, layout_jacobian};
use crate::scenario::{NoiseLevels, Scenario};

/// Relative eigenvalue floor below which an information matrix is singular.
const SINGULAR_RATIO: f64 = 1e-12;

/// `Hᵀ W H`
pub fn information(h: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let f = h.transpose() * w * h;
    (&f + f.transpose()) * 0.5
}

/// Diagonal of `F⁻¹`, or `SingularFim`.
pub fn crlb_diagonal(f: &DMatrix<f64>) -> Result<DVector<f64>> {
    let eig = f.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if lmax.is_nan() || lmax <= 0.0 || lmin <= SINGULAR_RATIO * lmax {
        return Err(Error::SingularFim(format!(
            "eigenvalues span [{lmin:.3e}, {lmax:.3e}]"
        )));
    }
    let n = f.nrows();
    Ok(DVector::from_iterator(
        n,
        (0..n).map(|i| {
            (0..n)
                .map(|m| eig.eigenvectors[(i, m)].powi(2) / eig.eigenvalues[m])
                .sum::<f64>()
        }),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemaBound {
    pub fim: Matrix3<f64>,
    /// Variances of `[x, y, ψ]`.
    pub crlb: Vector3<f64>,
}

impl SemaBound {
    /// `var(x) + var(y)`
    pub fn position(&self) -> f64 {
        self.crlb[0] + self.crlb[1]
    }

    pub fn yaw(&self) -> f64 {
        self.crlb[2]
    }
}

pub fn fim_sema(
    truth: &Pose,
    layout: &TdoaLayout,
    scenario: &Scenario,
    sigma: f64,
) -> Result<SemaBound> {
    if layout.is_empty() {
        return Err(Error::SingularFim("epoch has no TDOA rows".into()));
    }
    let h = layout_jacobian(truth, layout, scenario)?;
    let f = information(&h, &tdoa_weight(layout.len(), sigma));
    let crlb = crlb_diagonal(&f)?;
    Ok(SemaBound {
        fim: Matrix3::from_iterator(f.iter().copied()),
        crlb: Vector3::new(crlb[0], crlb[1], crlb[2]),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    /// `3K × 3K`
    pub mema: DMatrix<f64>,
    /// TDOA part of `mema` (block diagonal).
    pub mema_toa: DMatrix<f64>,
    /// Per-epoch single-epoch bounds; `None` where the epoch alone is
    /// unobservable.
    pub sema: Vec<Option<SemaBound>>,
    /// Diagonal of `F_MEMA⁻¹`.
    pub crlb: DVector<f64>,
}

impl FisherInfo {
    pub fn num_epochs(&self) -> usize {
        self.crlb.len() / 3
    }

    /// `var(x) + var(y)` at epoch `k`.
    pub fn position(&self, k: usize) -> f64 {
        self.crlb[3 * k] + self.crlb[3 * k + 1]
    }

    pub fn yaw(&self, k: usize) -> f64 {
        self.crlb[3 * k + 2]
    }
}

/// Inter-epoch weighting used in [`fim_mema`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterEpoch {
    /// `W_IP = diag(σ_p⁻², σ_p⁻², σ_ψ⁻²)`
    Weighted { sigma_p: f64, sigma_psi: f64 },
    /// `W_IP = 0`
    Unused,
}

impl InterEpoch {
    pub fn from_noise(n: &NoiseLevels) -> Self {
        InterEpoch::Weighted {
            sigma_p: n.sigma_p,
            sigma_psi: n.sigma_psi,
        }
    }
}

/// Fisher information of a window; `layouts[k]` is `None` for an epoch
/// without TDOA rows.
pub fn fim_mema(
    truth: &[Pose],
    layouts: &[Option<TdoaLayout>],
    scenario: &Scenario,
    sigma: f64,
    inter: InterEpoch,
) -> Result<FisherInfo> {
    let k_len = truth.len();
    if layouts.len() != k_len {
        return Err(Error::SingularFim(format!(
            "{} layouts for {k_len} poses",
            layouts.len()
        )));
    }
    let n = 3 * k_len;
    let mut toa = DMatrix::zeros(n, n);
    let mut sema = Vec::with_capacity(k_len);
    for (k, layout) in layouts.iter().enumerate() {
        let Some(layout) = layout.as_ref().filter(|l| !l.is_empty()) else {
            sema.push(None);
            continue;
        };
        let h = layout_jacobian(&truth[k], layout, scenario)?;
        let f = information(&h, &tdoa_weight(layout.len(), sigma));
        toa.view_mut((3 * k, 3 * k), (3, 3)).copy_from(&f);
        sema.push(crlb_diagonal(&f).ok().map(|c| SemaBound {
            fim: Matrix3::from_iterator(f.iter().copied()),
            crlb: Vector3::new(c[0], c[1], c[2]),
        }));
    }
    let mut mema = toa.clone();
    if let InterEpoch::Weighted { sigma_p, sigma_psi } = inter {
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&[
            sigma_p.powi(-2),
            sigma_p.powi(-2),
            sigma_psi.powi(-2),
        ]));
        for k in 1..k_len {
            let h = inter_epoch_jacobian(&truth[k], &truth[k - 1]);
            let f = information(&h, &w);
            let mut view = mema.view_mut((3 * (k - 1), 3 * (k - 1)), (6, 6));
            view += f;
        }
    }
    let crlb = crlb_diagonal(&mema)?;
    Ok(FisherInfo {
        mema,
        mema_toa: toa,
        sema,
        crlb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{form_tdoa, form_tdoa_with_reference};
    use crate::scenario::{build_four_anchor_scene, substream, synthesize_epoch};
    use approx::assert_relative_eq;

    fn scene_layouts(s: &Scenario) -> Vec<Option<TdoaLayout>> {
        (0..s.num_epochs())
            .map(|k| {
                let (m, _) = synthesize_epoch(s, k, &mut substream(1, 0, k as u64));
                form_tdoa(&m, s.noise.sigma).ok().map(|b| b.layout)
            })
            .collect()
    }

    #[test]
    fn unused_inter_epoch_gives_block_diagonal() {
        let s = build_four_anchor_scene();
        let fi = fim_mema(
            &s.trajectory,
            &scene_layouts(&s),
            &s,
            0.1,
            InterEpoch::Unused,
        )
        .unwrap();
        assert_eq!(fi.mema, fi.mema_toa);
        for k in 0..4 {
            for l in 0..4 {
                if k != l {
                    assert!(fi.mema.view((3 * k, 3 * l), (3, 3)).amax() == 0.0);
                }
            }
        }
    }

    #[test]
    fn multi_epoch_bound_never_exceeds_single_epoch() {
        let s = build_four_anchor_scene();
        let fi = fim_mema(
            &s.trajectory,
            &scene_layouts(&s),
            &s,
            0.1,
            InterEpoch::from_noise(&s.noise),
        )
        .unwrap();
        for (k, b) in fi.sema.iter().enumerate() {
            let b = b
                .as_ref()
                .expect("every four-anchor epoch is observable alone");
            for c in 0..3 {
                assert!(fi.crlb[3 * k + c] <= b.crlb[c] + 1e-12);
            }
        }
    }

    #[test]
    fn fim_structure() {
        let s = build_four_anchor_scene();
        let fi = fim_mema(
            &s.trajectory,
            &scene_layouts(&s),
            &s,
            0.1,
            InterEpoch::from_noise(&s.noise),
        )
        .unwrap();
        assert!((&fi.mema - fi.mema.transpose()).amax() < 1e-9);
        assert!(fi.mema.clone().symmetric_eigenvalues().min() > 0.0);
        // inter-epoch information only couples neighbours
        assert!(fi.mema.view((0, 6), (3, 6)).amax() == 0.0);
    }

    #[test]
    fn duplicated_rows_halve_the_bound() {
        let s = build_four_anchor_scene();
        let layout = scene_layouts(&s)[2].clone().unwrap();
        let pose = s.trajectory[2];
        let h = layout_jacobian(&pose, &layout, &s).unwrap();
        let w = tdoa_weight(layout.len(), 0.1);
        let l = layout.len();
        let mut h2 = DMatrix::zeros(2 * l, 3);
        h2.view_mut((0, 0), (l, 3)).copy_from(&h);
        h2.view_mut((l, 0), (l, 3)).copy_from(&h);
        let mut w2 = DMatrix::zeros(2 * l, 2 * l);
        w2.view_mut((0, 0), (l, l)).copy_from(&w);
        w2.view_mut((l, l), (l, l)).copy_from(&w);
        let one = crlb_diagonal(&information(&h, &w)).unwrap();
        let two = crlb_diagonal(&information(&h2, &w2)).unwrap();
        for c in 0..3 {
            assert_relative_eq!(two[c], 0.5 * one[c], max_relative = 1e-12);
        }
    }

    #[test]
    fn reference_choice_does_not_matter() {
        let s = build_four_anchor_scene();
        for k in 0..s.num_epochs() {
            let (m, _) = synthesize_epoch(&s, k, &mut substream(3, 0, k as u64));
            let base = form_tdoa(&m, 0.1).unwrap();
            let a = fim_sema(&s.trajectory[k], &base.layout, &s, 0.1).unwrap();
            for t in &m.toas {
                let b = form_tdoa_with_reference(&m, 0.1, (t.antenna, t.anchor)).unwrap();
                let c = fim_sema(&s.trajectory[k], &b.layout, &s, 0.1).unwrap();
                assert!((a.crlb - c.crlb).amax() < 1e-9 * a.crlb.amax());
            }
        }
    }

    #[test]
    fn bound_shrinks_with_noise() {
        let s = build_four_anchor_scene();
        let layouts = scene_layouts(&s);
        let mut prev: Option<DVector<f64>> = None;
        for sigma in [0.5, 0.3, 0.2, 0.1, 0.05] {
            let fi = fim_mema(
                &s.trajectory,
                &layouts,
                &s,
                sigma,
                InterEpoch::from_noise(&s.noise),
            )
            .unwrap();
            if let Some(p) = prev {
                assert!(fi.crlb.iter().zip(p.iter()).all(|(a, b)| a < b));
            }
            prev = Some(fi.crlb);
        }
    }

    #[test]
    fn general_position_is_positive_definite() {
        let s = build_four_anchor_scene();
        let layouts = scene_layouts(&s);
        for (pose, layout) in s.trajectory.iter().zip(&layouts) {
            let b = fim_sema(pose, layout.as_ref().unwrap(), &s, 0.1).unwrap();
            assert!(b.fim.symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn too_little_information_is_singular() {
        let s = build_four_anchor_scene();
        let layout = TdoaLayout {
            reference: (0, 0),
            rows: vec![(0, 1)],
        };
        assert!(matches!(
            fim_sema(&s.trajectory[0], &layout, &s, 0.1),
            Err(Error::SingularFim(_))
        ));
    }
}
