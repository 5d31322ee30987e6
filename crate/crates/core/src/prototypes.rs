//! Per-class sub-action prototypes. Stored as free parameters of shape
//! C×a×e; every read goes through row normalization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, TaenError};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    classes: usize,
    subactions: usize,
    dim: usize,
    /// Row `c*a + i` holds raw[c, i].
    raw: Matrix,
}

impl PrototypeBank {
    pub fn from_raw(classes: usize, subactions: usize, dim: usize, raw: Vec<f64>) -> Result<Self> {
        validate_shape(classes, subactions, dim)?;
        let raw = Matrix::from_vec(classes * subactions, dim, raw)?;
        if !raw.all_finite() {
            return Err(TaenError::Numeric("prototype bank has non-finite entries".into()));
        }
        Ok(PrototypeBank {
            classes,
            subactions,
            dim,
            raw,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn subactions(&self) -> usize {
        self.subactions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn raw(&self) -> &Matrix {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut Matrix {
        &mut self.raw
    }

    pub fn raw_row(&self, c: usize, i: usize) -> &[f64] {
        self.raw.row(c * self.subactions + i)
    }

    /// Normalized prototype R^c_i.
    pub fn prototype(&self, c: usize, i: usize) -> Result<Vec<f64>> {
        if c >= self.classes || i >= self.subactions {
            return Err(TaenError::OutOfRange(format!(
                "prototype ({c}, {i}) outside bank of {} classes x {} sub-actions",
                self.classes, self.subactions
            )));
        }
        Ok(linalg::normalized(self.raw_row(c, i)))
    }

    /// All normalized prototypes of class `c` as an a×e matrix.
    pub fn class_trajectory(&self, c: usize) -> Result<Matrix> {
        if c >= self.classes {
            return Err(TaenError::OutOfRange(format!(
                "class {c} outside bank of {} classes",
                self.classes
            )));
        }
        let mut m = Matrix::zeros(self.subactions, self.dim);
        for i in 0..self.subactions {
            linalg::normalize_into(self.raw_row(c, i), m.row_mut(i));
        }
        Ok(m)
    }

    pub fn zeros_like(&self) -> PrototypeBank {
        PrototypeBank {
            classes: self.classes,
            subactions: self.subactions,
            dim: self.dim,
            raw: Matrix::zeros(self.raw.rows(), self.dim),
        }
    }

    /// Gradient w.r.t. raw[c, i] given the gradient w.r.t. R^c_i; added into `grad`.
    pub fn backprop_row(&self, c: usize, i: usize, upstream: &[f64], grad: &mut PrototypeBank) {
        let x = self.raw_row(c, i);
        let n = linalg::guarded_norm(x);
        let row = c * self.subactions + i;
        linalg::normalize_backward_add(x, n, upstream, grad.raw.row_mut(row));
    }
}

fn validate_shape(classes: usize, subactions: usize, dim: usize) -> Result<()> {
    if classes < 2 || subactions < 1 || dim < 1 {
        return Err(TaenError::InvalidArgument(format!(
            "prototype bank needs C >= 2, a >= 1, e >= 1; got C={classes}, a={subactions}, e={dim}"
        )));
    }
    Ok(())
}

/// Standard-normal entries scaled by 1/√e, so each raw prototype has unit
/// expected squared norm.
pub fn init_prototypes(classes: usize, subactions: usize, dim: usize, seed: u64) -> Result<PrototypeBank> {
    init_bank(classes, subactions, dim, seed, true)
}

/// Shared by [`init_prototypes`] and the single-vector ablation, which
/// needs `a == 1`.
pub(crate) fn init_bank(
    classes: usize,
    subactions: usize,
    dim: usize,
    seed: u64,
    require_trajectory: bool,
) -> Result<PrototypeBank> {
    validate_shape(classes, subactions, dim)?;
    if require_trajectory && subactions < 2 {
        return Err(TaenError::InvalidArgument(format!(
            "prototype trajectories need a >= 2, got {subactions}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    let raw = (0..classes * subactions * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (z * scale) as f32 as f64
        })
        .collect();
    PrototypeBank::from_raw(classes, subactions, dim, raw)
}
