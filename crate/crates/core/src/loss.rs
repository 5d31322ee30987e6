//! Trajectory distances and the three training losses (affiliation,
//! motion, diversity) with their analytical gradients.
//!
//! All points passed in here are expected on the unit sphere.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embednet::{self, MlpGrads, MlpParams, Trajectory};
use crate::error::{Result, TaenError};
use crate::features::PooledVideo;
use crate::linalg::{self, Matrix};
use crate::prototypes::PrototypeBank;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_aff: f64,
    pub w_mot: f64,
    pub w_div: f64,
    /// Use the hinge `max(0, d - margin_alpha)` in the affiliation term.
    pub margin: bool,
    pub margin_alpha: f64,
    /// Width of the proposal probability kernel.
    pub sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_aff: 1.0,
            w_mot: 0.5,
            w_div: 20.0,
            margin: false,
            margin_alpha: 0.2,
            sigma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, subactions: usize) -> Result<()> {
        let vals = [self.w_aff, self.w_mot, self.w_div, self.margin_alpha, self.sigma];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(TaenError::Config("loss weights must be finite".into()));
        }
        if self.w_aff < 0.0 || self.w_mot < 0.0 || self.w_div < 0.0 || self.margin_alpha < 0.0 {
            return Err(TaenError::Config("loss weights must be non-negative".into()));
        }
        if self.sigma <= 0.0 {
            return Err(TaenError::Config("sigma must be positive".into()));
        }
        if subactions < 2 && self.w_mot != 0.0 {
            return Err(TaenError::Config(format!(
                "a={subactions} has no motion vectors; w_mot must be 0"
            )));
        }
        Ok(())
    }

    fn hinge(&self) -> Option<f64> {
        self.margin.then_some(self.margin_alpha)
    }
}

/// Sign convention for the motion term of [`test_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionSign {
    /// Aligned motion lowers the distance.
    #[default]
    AlignedIsCloser,
    /// Aligned motion raises the distance (the inner product is added).
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub affiliation: f64,
    pub motion: f64,
    pub diversity: f64,
}

#[inline]
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    debug_assert!((linalg::norm(u) - 1.0).abs() < 1e-6, "u is not unit");
    debug_assert!((linalg::norm(v) - 1.0).abs() < 1e-6, "v is not unit");
    1.0 - linalg::dot(u, v)
}

fn check_pair(e: &Matrix, r: &Matrix) -> Result<()> {
    if e.rows() != r.rows() || e.cols() != r.cols() {
        return Err(TaenError::Shape(format!(
            "trajectory {}x{} vs class trajectory {}x{}",
            e.rows(),
            e.cols(),
            r.rows(),
            r.cols()
        )));
    }
    if e.rows() == 0 {
        return Err(TaenError::Shape("empty trajectory".into()));
    }
    Ok(())
}

fn pointwise<'a>(e: &'a Matrix, r: &'a Matrix) -> impl Iterator<Item = f64> + 'a {
    e.iter_rows().zip(r.iter_rows()).map(|(a, b)| cosine_distance(a, b))
}

/// Mean point-wise cosine distance between two trajectories.
pub fn trajectory_distance(e: &Matrix, r: &Matrix) -> Result<f64> {
    check_pair(e, r)?;
    Ok(pointwise(e, r).sum::<f64>() / e.rows() as f64)
}

/// Summed point-wise distance; with `margin = Some(α)` each term is
/// `max(0, d - α)`.
pub fn affiliation_loss(e: &Matrix, r: &Matrix, margin: Option<f64>) -> Result<f64> {
    check_pair(e, r)?;
    Ok(match margin {
        None => pointwise(e, r).sum(),
        Some(alpha) => pointwise(e, r).map(|d| (d - alpha).max(0.0)).sum(),
    })
}

/// Σ_i ⟨E_{i+1} - E_i, R_{i+1} - R_i⟩.
fn motion_alignment(e: &Matrix, r: &Matrix) -> f64 {
    (0..e.rows().saturating_sub(1))
        .map(|i| {
            e.row(i + 1)
                .iter()
                .zip(e.row(i))
                .zip(r.row(i + 1).iter().zip(r.row(i)))
                .map(|((e1, e0), (r1, r0))| (e1 - e0) * (r1 - r0))
                .sum::<f64>()
        })
        .sum()
}

/// Negative alignment of consecutive displacement vectors.
pub fn motion_loss(e: &Matrix, r: &Matrix) -> Result<f64> {
    check_pair(e, r)?;
    if e.rows() < 2 {
        return Err(TaenError::InvalidArgument(format!(
            "motion needs a >= 2 sub-actions, got {}",
            e.rows()
        )));
    }
    Ok(-motion_alignment(e, r))
}

/// Sum over classes and ordered pairs i≠j of ⟨R^c_i, R^c_j⟩.
pub fn diversity_loss(bank: &PrototypeBank) -> f64 {
    let mut total = 0.0;
    for c in 0..bank.classes() {
        let r = bank.class_trajectory(c).expect("class index in range");
        for i in 0..r.rows() {
            for j in 0..r.rows() {
                if i != j {
                    total += 1.0 - cosine_distance(r.row(i), r.row(j));
                }
            }
        }
    }
    total
}

fn check_label(label: usize, bank: &PrototypeBank) -> Result<()> {
    if label >= bank.classes() {
        return Err(TaenError::OutOfRange(format!(
            "label {label} outside {} training classes",
            bank.classes()
        )));
    }
    Ok(())
}

fn report(aff: f64, mot: f64, div: f64, w: &LossWeights) -> LossReport {
    LossReport {
        total: w.w_aff * aff + w.w_mot * mot + w.w_div * div,
        affiliation: aff,
        motion: mot,
        diversity: div,
    }
}

/// Affiliation and motion averaged over the batch; diversity counted once.
pub fn total_loss(
    batch: &[(Trajectory, usize)],
    bank: &PrototypeBank,
    weights: &LossWeights,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(TaenError::InvalidArgument("empty batch".into()));
    }
    let mut aff = 0.0;
    let mut mot = 0.0;
    for (traj, label) in batch {
        check_label(*label, bank)?;
        let r = bank.class_trajectory(*label)?;
        aff += affiliation_loss(&traj.points, &r, weights.hinge())?;
        if r.rows() >= 2 {
            mot += motion_loss(&traj.points, &r)?;
        }
    }
    let n = batch.len() as f64;
    Ok(report(aff / n, mot / n, diversity_loss(bank), weights))
}

/// Gradient of the total loss with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub mlp: MlpGrads,
    pub bank: PrototypeBank,
}

struct ItemGrad {
    aff: f64,
    mot: f64,
    label: usize,
    mlp: MlpGrads,
    /// Gradient w.r.t. the normalized prototypes of `label`.
    d_proto: Matrix,
}

/// d(sum over items)/dE and /dR for one item, before batch averaging.
fn item_terms(e: &Matrix, r: &Matrix, w: &LossWeights) -> (f64, f64, Matrix, Matrix) {
    let a = e.rows();
    let mut d_e = Matrix::zeros(a, e.cols());
    let mut d_r = Matrix::zeros(a, e.cols());
    let mut aff = 0.0;
    for i in 0..a {
        let d = cosine_distance(e.row(i), r.row(i));
        let active = match w.hinge() {
            None => {
                aff += d;
                true
            }
            Some(alpha) => {
                aff += (d - alpha).max(0.0);
                d > alpha
            }
        };
        if active && w.w_aff != 0.0 {
            linalg::axpy(-w.w_aff, r.row(i), d_e.row_mut(i));
            linalg::axpy(-w.w_aff, e.row(i), d_r.row_mut(i));
        }
    }
    let mot = if a >= 2 { -motion_alignment(e, r) } else { 0.0 };
    if a >= 2 && w.w_mot != 0.0 {
        let cols = e.cols();
        for i in 0..a - 1 {
            for k in 0..cols {
                let de = e.get(i + 1, k) - e.get(i, k);
                let dr = r.get(i + 1, k) - r.get(i, k);
                // -⟨ΔE_i, ΔR_i⟩: E_{i+1} gets -ΔR_i, E_i gets +ΔR_i.
                d_e.set(i + 1, k, d_e.get(i + 1, k) - w.w_mot * dr);
                d_e.set(i, k, d_e.get(i, k) + w.w_mot * dr);
                d_r.set(i + 1, k, d_r.get(i + 1, k) - w.w_mot * de);
                d_r.set(i, k, d_r.get(i, k) + w.w_mot * de);
            }
        }
    }
    (aff, mot, d_e, d_r)
}

/// Exact gradients of [`total_loss`] evaluated on freshly embedded
/// `batch` items. Items are processed in parallel and reduced in batch
/// order, so the result does not depend on the thread count.
pub fn loss_gradients(
    batch: &[&PooledVideo],
    params: &MlpParams,
    bank: &PrototypeBank,
    weights: &LossWeights,
) -> Result<(LossReport, Gradients)> {
    if batch.is_empty() {
        return Err(TaenError::InvalidArgument("empty batch".into()));
    }
    if params.output_dim() != bank.dim() {
        return Err(TaenError::Shape(format!(
            "embedding dim {} vs prototype dim {}",
            params.output_dim(),
            bank.dim()
        )));
    }
    let scale = 1.0 / batch.len() as f64;
    let items: Vec<ItemGrad> = batch
        .par_iter()
        .map(|pooled| {
            let label = pooled.label.ok_or_else(|| {
                TaenError::InvalidArgument(format!("video {} has no label", pooled.video_id))
            })?;
            check_label(label, bank)?;
            if pooled.subactions() != bank.subactions() {
                return Err(TaenError::Shape(format!(
                    "video {} has {} sub-actions, bank has {}",
                    pooled.video_id,
                    pooled.subactions(),
                    bank.subactions()
                )));
            }
            let (traj, cache) = embednet::forward(params, pooled)?;
            let r = bank.class_trajectory(label)?;
            let (aff, mot, mut d_e, mut d_r) = item_terms(&traj.points, &r, weights);
            d_e.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
            d_r.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
            let (mlp, _) = embednet::backward(params, &cache, &d_e)?;
            Ok(ItemGrad {
                aff,
                mot,
                label,
                mlp,
                d_proto: d_r,
            })
        })
        .collect::<Result<_>>()?;

    let mut mlp = params.zero_grads();
    let mut d_proto = vec![None::<Matrix>; bank.classes()];
    let (mut aff, mut mot) = (0.0, 0.0);
    for item in items {
        aff += item.aff;
        mot += item.mot;
        for (acc, g) in mlp.iter_mut().zip(&item.mlp) {
            linalg::axpy(1.0, g.weights.as_slice(), acc.weights.as_mut_slice());
            linalg::axpy(1.0, &g.biases, &mut acc.biases);
        }
        match &mut d_proto[item.label] {
            Some(acc) => linalg::axpy(1.0, item.d_proto.as_slice(), acc.as_mut_slice()),
            slot @ None => *slot = Some(item.d_proto),
        }
    }
    let diversity = diversity_loss(bank);
    if weights.w_div != 0.0 {
        for (c, slot) in d_proto.iter_mut().enumerate() {
            let r = bank.class_trajectory(c)?;
            let acc = slot.get_or_insert_with(|| Matrix::zeros(r.rows(), r.cols()));
            let mut sum = vec![0.0; r.cols()];
            for row in r.iter_rows() {
                linalg::axpy(1.0, row, &mut sum);
            }
            // Ordered pairs count each unordered pair twice: d/dR_i = 2 Σ_{j≠i} R_j.
            for i in 0..r.rows() {
                let out = acc.row_mut(i);
                for k in 0..r.cols() {
                    out[k] += weights.w_div * 2.0 * (sum[k] - r.get(i, k));
                }
            }
        }
    }
    let mut bank_grad = bank.zeros_like();
    for (c, slot) in d_proto.iter().enumerate() {
        if let Some(g) = slot {
            for i in 0..bank.subactions() {
                bank.backprop_row(c, i, g.row(i), &mut bank_grad);
            }
        }
    }
    let n = batch.len() as f64;
    Ok((
        report(aff / n, mot / n, diversity, weights),
        Gradients {
            mlp,
            bank: bank_grad,
        },
    ))
}

/// Classification distance between a query trajectory and a class
/// trajectory: weighted point-wise distance plus the motion term, whose
/// sign follows `sign`.
pub fn test_distance(e: &Matrix, r: &Matrix, weights: &LossWeights, sign: MotionSign) -> Result<f64> {
    check_pair(e, r)?;
    let point: f64 = pointwise(e, r).sum();
    let motion = if weights.w_mot == 0.0 {
        0.0
    } else if e.rows() < 2 {
        return Err(TaenError::InvalidArgument(
            "motion term needs a >= 2 sub-actions".into(),
        ));
    } else {
        motion_alignment(e, r)
    };
    let signed = match sign {
        MotionSign::AlignedIsCloser => -motion,
        MotionSign::Literal => motion,
    };
    Ok(weights.w_aff * point + weights.w_mot * signed)
}
