//! The embedding MLP: affine+ReLU hidden layers, an affine output layer,
//! and row-wise projection onto the unit sphere. Each sub-action row is
//! embedded independently. Backward is exact, including the
//! normalization Jacobian `(I - x̂x̂ᵀ)/‖x‖`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TaenError};
use crate::features::PooledVideo;
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// out×in
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Layer {
            weights: Matrix::zeros(out, inp),
            biases: vec![0.0; out],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    layers: Vec<Layer>,
    generation: u64,
}

// The generation counter only tracks cache freshness.
impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

pub type MlpGrads = Vec<Layer>;

impl MlpParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(TaenError::InvalidArgument("MLP needs at least one layer".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(TaenError::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].out_dim(),
                    i + 1,
                    w[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.biases.len() != l.out_dim() {
                return Err(TaenError::Shape(format!("layer {i} bias length mismatch")));
            }
            if !l.weights.all_finite() || l.biases.iter().any(|b| !b.is_finite()) {
                return Err(TaenError::Numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(MlpParams {
            layers,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access; invalidates caches from earlier forward passes.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].in_dim()];
        d.extend(self.layers.iter().map(Layer::out_dim));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    pub fn zero_grads(&self) -> MlpGrads {
        self.layers
            .iter()
            .map(|l| Layer::zeros(l.in_dim(), l.out_dim()))
            .collect()
    }
}

/// Glorot-uniform weights, zero biases. `dims` lists every layer width
/// from input to output.
pub fn init_params(dims: &[usize], seed: u64) -> Result<MlpParams> {
    if dims.len() < 2 {
        return Err(TaenError::InvalidArgument(format!(
            "need at least input and output dims, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(TaenError::InvalidArgument(format!("zero width in dims {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut layer = Layer::zeros(fan_in, fan_out);
            for v in layer.weights.as_mut_slice() {
                // Drawn in f32 so a fresh model is exactly representable on disk.
                *v = rng.random_range(-s as f32..=s as f32) as f64;
            }
            layer
        })
        .collect();
    MlpParams::from_layers(layers)
}

/// One embedded video: `a` unit-norm points in R^e.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub video_id: String,
    pub points: Matrix,
}

impl Trajectory {
    pub fn subactions(&self) -> usize {
        self.points.rows()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    dims: Vec<usize>,
    /// Input to each layer, one matrix (rows × in) per layer.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer (rows × out).
    pre: Vec<Matrix>,
    /// Guarded norm of each output row before normalization.
    norms: Vec<f64>,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.norms.len()
    }
}

pub fn forward(params: &MlpParams, pooled: &PooledVideo) -> Result<(Trajectory, ForwardCache)> {
    let (points, cache) = forward_rows(params, &pooled.segments)?;
    Ok((
        Trajectory {
            video_id: pooled.video_id.clone(),
            points,
        },
        cache,
    ))
}

/// Embed without keeping the cache.
pub fn embed(params: &MlpParams, pooled: &PooledVideo) -> Result<Trajectory> {
    forward(params, pooled).map(|(t, _)| t)
}

pub fn forward_rows(params: &MlpParams, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if x.cols() != params.input_dim() {
        return Err(TaenError::Shape(format!(
            "input has {} columns, network expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut current = x.clone();
    for (li, layer) in params.layers.iter().enumerate() {
        let mut z = Matrix::zeros(x.rows(), layer.out_dim());
        for r in 0..x.rows() {
            let zr = z.row_mut(r);
            layer.weights.matvec(current.row(r), zr);
            linalg::axpy(1.0, &layer.biases, zr);
        }
        let next = if li + 1 < n_layers {
            let mut h = z.clone();
            h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            h
        } else {
            z.clone()
        };
        inputs.push(std::mem::replace(&mut current, next));
        pre.push(z);
    }
    let mut out = current;
    let mut norms = Vec::with_capacity(out.rows());
    for r in 0..out.rows() {
        let raw = out.row(r).to_vec();
        if raw.iter().all(|v| *v == 0.0) {
            return Err(TaenError::ZeroNorm { row: r });
        }
        norms.push(linalg::normalize_into(&raw, out.row_mut(r)));
    }
    let cache = ForwardCache {
        generation: params.generation,
        dims: params.dims(),
        inputs,
        pre,
        norms,
    };
    Ok((out, cache))
}

/// Gradients of a scalar w.r.t. parameters (accumulated into `grads`) and
/// w.r.t. the network input (returned), given its gradient w.r.t. the
/// normalized trajectory.
pub fn backward_into(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_traj: &Matrix,
    grads: &mut MlpGrads,
) -> Result<Matrix> {
    if cache.generation != params.generation || cache.dims != params.dims() {
        return Err(TaenError::StaleCache(
            "cache was produced by different parameters".into(),
        ));
    }
    if grad_traj.rows() != cache.rows() || grad_traj.cols() != params.output_dim() {
        return Err(TaenError::Shape(format!(
            "upstream gradient is {}x{}, trajectory is {}x{}",
            grad_traj.rows(),
            grad_traj.cols(),
            cache.rows(),
            params.output_dim()
        )));
    }
    if grads.len() != params.layers.len() {
        return Err(TaenError::Shape("gradient buffer has wrong layer count".into()));
    }
    let n_layers = params.layers.len();
    let rows = cache.rows();
    let mut delta = Matrix::zeros(rows, params.output_dim());
    let last_pre = &cache.pre[n_layers - 1];
    for r in 0..rows {
        linalg::normalize_backward_add(
            last_pre.row(r),
            cache.norms[r],
            grad_traj.row(r),
            delta.row_mut(r),
        );
    }
    for li in (0..n_layers).rev() {
        let layer = &params.layers[li];
        let input = &cache.inputs[li];
        let g = &mut grads[li];
        let mut prev = Matrix::zeros(rows, layer.in_dim());
        for r in 0..rows {
            let dr = delta.row(r);
            g.weights.add_outer(1.0, dr, input.row(r));
            linalg::axpy(1.0, dr, &mut g.biases);
            layer.weights.matvec_t_add(dr, prev.row_mut(r));
        }
        if li > 0 {
            // ReLU of the previous layer; subgradient 0 at the kink.
            let z = &cache.pre[li - 1];
            for (p, zv) in prev.as_mut_slice().iter_mut().zip(z.as_slice()) {
                if *zv <= 0.0 {
                    *p = 0.0;
                }
            }
        }
        delta = prev;
    }
    Ok(delta)
}

pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_traj: &Matrix,
) -> Result<(MlpGrads, Matrix)> {
    let mut grads = params.zero_grads();
    let gin = backward_into(params, cache, grad_traj, &mut grads)?;
    Ok((grads, gin))
}
