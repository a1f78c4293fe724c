//! Differentiable predictors sharing one flat weight layout: a bias-free
//! linear model (which doubles as the tabular value table over one-hot
//! features) and a small feedforward network with ReLU hidden layers and a
//! scalar identity output. Gradients are exact reverse-mode sweeps; the ReLU
//! subgradient at 0 is 0.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::numkit::{DenseMatrix, DenseVector, SeededRng};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{what} index {index} is out of range (< {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("feature scale entry {index} is zero")]
    ZeroScale { index: usize },
    #[error("model must end in a width-1 identity layer")]
    BadOutputLayer,
    #[error("layer widths must be positive")]
    EmptyLayer,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint is malformed: {0}")]
    BadCheckpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative; the ReLU kink at exactly 0 takes subgradient 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

/// Shape of one layer's parameter block in the flat vector: a row-major
/// `fan_out x fan_in` weight matrix followed by `fan_out` biases when
/// `bias` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerDims {
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias: bool,
}

impl LayerDims {
    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias { self.fan_out } else { 0 }
    }
}

/// Per-layer layout of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerDims>,
}

impl Layout {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerDims::param_count).sum()
    }

    /// Flat offset of layer `l`'s weight block.
    fn offset(&self, layer: usize) -> usize {
        self.layers[..layer].iter().map(LayerDims::param_count).sum()
    }
}

/// Flat parameter vector plus the layout that interprets it.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatWeights {
    values: DenseVector,
    layout: Layout,
}

impl FlatWeights {
    pub fn new(values: DenseVector, layout: Layout) -> Result<Self, ModelError> {
        if values.len() != layout.param_count() {
            return Err(ModelError::DimensionMismatch(format!(
                "flat vector has {} entries, layout expects {}",
                values.len(),
                layout.param_count()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: DenseVector::zeros(layout.param_count()),
            layout,
        }
    }

    pub fn values(&self) -> &DenseVector {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DenseVector {
        &mut self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Per-layer view `(weights, biases)`; biases are empty for bias-free
    /// layers. Exact: the views are copies of the flat storage bits.
    pub fn unflatten(&self) -> Vec<(DenseMatrix, DenseVector)> {
        let mut out = Vec::with_capacity(self.layout.layers.len());
        for (l, dims) in self.layout.layers.iter().enumerate() {
            let base = self.layout.offset(l);
            let w_len = dims.fan_in * dims.fan_out;
            let w = DenseMatrix::from_raw(
                dims.fan_out,
                dims.fan_in,
                self.values.as_slice()[base..base + w_len].to_vec(),
            );
            let b = if dims.bias {
                DenseVector::from_raw(
                    self.values.as_slice()[base + w_len..base + w_len + dims.fan_out].to_vec(),
                )
            } else {
                DenseVector::zeros(0)
            };
            out.push((w, b));
        }
        out
    }

    /// Inverse of [`unflatten`](Self::unflatten); round-trips bitwise.
    pub fn flatten(
        layers: &[(DenseMatrix, DenseVector)],
        layout: Layout,
    ) -> Result<Self, ModelError> {
        let mut values = Vec::with_capacity(layout.param_count());
        for ((w, b), dims) in layers.iter().zip(layout.layers.iter()) {
            if w.rows() != dims.fan_out || w.cols() != dims.fan_in {
                return Err(ModelError::DimensionMismatch(format!(
                    "layer weight block is {}x{}, layout expects {}x{}",
                    w.rows(),
                    w.cols(),
                    dims.fan_out,
                    dims.fan_in
                )));
            }
            let expected_bias = if dims.bias { dims.fan_out } else { 0 };
            if b.len() != expected_bias {
                return Err(ModelError::DimensionMismatch(format!(
                    "layer bias block has {} entries, layout expects {}",
                    b.len(),
                    expected_bias
                )));
            }
            values.extend_from_slice(w.data());
            values.extend_from_slice(b.as_slice());
        }
        FlatWeights::new(DenseVector::from_raw(values), layout)
    }
}

/// One model evaluation at a labelled sample.
#[derive(Clone, Debug)]
pub struct GradEval {
    pub value: f64,
    pub gradient: DenseVector,
    /// `y - value`; the incremental rules consume this sign convention.
    pub residual: f64,
    /// `gradient · gradient`, computed from the same gradient buffer.
    pub grad_sq_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    /// `f(x) = w · x`, no bias. With one-hot features this is a value table.
    Linear { input_dim: usize },
    /// Feedforward net; hidden layers as given, output layer width 1 identity.
    Mlp {
        input_dim: usize,
        layers: Vec<LayerSpec>,
    },
}

impl Model {
    pub fn linear(input_dim: usize) -> Model {
        Model::Linear { input_dim }
    }

    /// Network from explicit layer specs; the final spec must be the width-1
    /// identity output layer.
    pub fn mlp(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Model, ModelError> {
        if input_dim == 0 || layers.iter().any(|l| l.width == 0) {
            return Err(ModelError::EmptyLayer);
        }
        match layers.last() {
            Some(last) if last.width == 1 && last.activation == Activation::Identity => {}
            _ => return Err(ModelError::BadOutputLayer),
        }
        Ok(Model::Mlp { input_dim, layers })
    }

    /// ReLU hidden stack of the given widths plus the scalar identity output.
    pub fn mlp_relu(input_dim: usize, hidden: &[usize]) -> Result<Model, ModelError> {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&width| LayerSpec {
                width,
                activation: Activation::Relu,
            })
            .collect();
        layers.push(LayerSpec {
            width: 1,
            activation: Activation::Identity,
        });
        Model::mlp(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Linear { input_dim } | Model::Mlp { input_dim, .. } => *input_dim,
        }
    }

    pub fn layout(&self) -> Layout {
        match self {
            Model::Linear { input_dim } => Layout {
                layers: vec![LayerDims {
                    fan_in: *input_dim,
                    fan_out: 1,
                    bias: false,
                }],
            },
            Model::Mlp { input_dim, layers } => {
                let mut dims = Vec::with_capacity(layers.len());
                let mut fan_in = *input_dim;
                for spec in layers {
                    dims.push(LayerDims {
                        fan_in,
                        fan_out: spec.width,
                        bias: true,
                    });
                    fan_in = spec.width;
                }
                Layout { layers: dims }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().param_count()
    }

    /// Fresh weights: zeros for the linear model; Glorot-uniform weights
    /// (`±sqrt(6/(fan_in+fan_out))`, drawn row-major layer by layer) with
    /// zero biases for the network.
    pub fn init(&self, rng: &mut SeededRng) -> FlatWeights {
        let layout = self.layout();
        match self {
            Model::Linear { .. } => FlatWeights::zeros(layout),
            Model::Mlp { .. } => {
                let mut values = Vec::with_capacity(layout.param_count());
                for dims in &layout.layers {
                    let bound = (6.0 / (dims.fan_in + dims.fan_out) as f64).sqrt();
                    for _ in 0..dims.fan_in * dims.fan_out {
                        values.push(rng.uniform(-bound, bound));
                    }
                    values.extend(std::iter::repeat(0.0).take(dims.fan_out));
                }
                FlatWeights {
                    values: DenseVector::from_raw(values),
                    layout,
                }
            }
        }
    }

    fn check_args(&self, w: &FlatWeights, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::DimensionMismatch(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if w.layout != self.layout() {
            return Err(ModelError::DimensionMismatch(
                "weight layout does not match this model".into(),
            ));
        }
        Ok(())
    }

    /// Forward value only.
    pub fn value(&self, w: &FlatWeights, x: &[f64]) -> Result<f64, ModelError> {
        self.check_args(w, x)?;
        match self {
            Model::Linear { .. } => {
                Ok(x.iter().zip(w.values.as_slice()).map(|(a, b)| a * b).sum())
            }
            Model::Mlp { layers, .. } => {
                let mut activation: Vec<f64> = x.to_vec();
                let flat = w.values.as_slice();
                let mut base = 0;
                for (spec, dims) in layers.iter().zip(w.layout.layers.iter()) {
                    let mut next = vec![0.0; dims.fan_out];
                    let bias_base = base + dims.fan_in * dims.fan_out;
                    for (o, cell) in next.iter_mut().enumerate() {
                        let row = &flat[base + o * dims.fan_in..base + (o + 1) * dims.fan_in];
                        let z = row
                            .iter()
                            .zip(activation.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            + flat[bias_base + o];
                        *cell = spec.activation.apply(z);
                    }
                    activation = next;
                    base = bias_base + dims.fan_out;
                }
                Ok(activation[0])
            }
        }
    }

    /// Forward value, flat gradient with respect to the weights, residual
    /// `y - value`, and the gradient's squared norm, all from one sweep.
    pub fn eval_with_gradient(
        &self,
        w: &FlatWeights,
        x: &[f64],
        y: f64,
    ) -> Result<GradEval, ModelError> {
        self.check_args(w, x)?;
        match self {
            Model::Linear { .. } => {
                let value: f64 = x.iter().zip(w.values.as_slice()).map(|(a, b)| a * b).sum();
                let gradient = DenseVector::from_raw(x.to_vec());
                let grad_sq_norm = gradient.norm_sq();
                Ok(GradEval {
                    value,
                    gradient,
                    residual: y - value,
                    grad_sq_norm,
                })
            }
            Model::Mlp { layers, .. } => {
                let flat = w.values.as_slice();
                // Forward pass keeping pre-activations for the backward sweep.
                let mut activations: Vec<Vec<f64>> = vec![x.to_vec()];
                let mut pre_activations: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
                let mut base = 0;
                for (spec, dims) in layers.iter().zip(w.layout.layers.iter()) {
                    let input = activations.last().unwrap();
                    let bias_base = base + dims.fan_in * dims.fan_out;
                    let mut z = vec![0.0; dims.fan_out];
                    for (o, cell) in z.iter_mut().enumerate() {
                        let row = &flat[base + o * dims.fan_in..base + (o + 1) * dims.fan_in];
                        *cell = row
                            .iter()
                            .zip(input.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            + flat[bias_base + o];
                    }
                    activations.push(z.iter().map(|&v| spec.activation.apply(v)).collect());
                    pre_activations.push(z);
                    base = bias_base + dims.fan_out;
                }
                let value = activations.last().unwrap()[0];

                // Reverse sweep for the scalar output.
                let mut gradient = vec![0.0; w.values.len()];
                let mut delta = vec![1.0_f64]; // d value / d z_last (identity output)
                for l in (0..layers.len()).rev() {
                    let dims = w.layout.layers[l];
                    let base = w.layout.offset(l);
                    let bias_base = base + dims.fan_in * dims.fan_out;
                    let input = &activations[l];
                    for (o, &d) in delta.iter().enumerate() {
                        if d != 0.0 {
                            let row = &mut gradient
                                [base + o * dims.fan_in..base + (o + 1) * dims.fan_in];
                            for (g, &a) in row.iter_mut().zip(input.iter()) {
                                *g = d * a;
                            }
                        }
                        gradient[bias_base + o] = d;
                    }
                    if l == 0 {
                        break;
                    }
                    let prev_spec = layers[l - 1];
                    let prev_z = &pre_activations[l - 1];
                    let mut next_delta = vec![0.0; dims.fan_in];
                    for (o, &d) in delta.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let row = &flat[base + o * dims.fan_in..base + (o + 1) * dims.fan_in];
                        for (nd, &wv) in next_delta.iter_mut().zip(row.iter()) {
                            *nd += d * wv;
                        }
                    }
                    for (nd, &z) in next_delta.iter_mut().zip(prev_z.iter()) {
                        *nd *= prev_spec.activation.derivative(z);
                    }
                    delta = next_delta;
                }
                let gradient = DenseVector::from_raw(gradient);
                let grad_sq_norm = gradient.norm_sq();
                Ok(GradEval {
                    value,
                    gradient,
                    residual: y - value,
                    grad_sq_norm,
                })
            }
        }
    }

    /// Smallest |pre-activation| over all ReLU units at `(w, x)`;
    /// `+inf` when the model has none. Finite-difference checks use this to
    /// skip evaluations adjacent to a kink.
    pub fn relu_kink_gap(&self, w: &FlatWeights, x: &[f64]) -> Result<f64, ModelError> {
        self.check_args(w, x)?;
        match self {
            Model::Linear { .. } => Ok(f64::INFINITY),
            Model::Mlp { layers, .. } => {
                let flat = w.values.as_slice();
                let mut gap = f64::INFINITY;
                let mut activation: Vec<f64> = x.to_vec();
                let mut base = 0;
                for (spec, dims) in layers.iter().zip(w.layout.layers.iter()) {
                    let bias_base = base + dims.fan_in * dims.fan_out;
                    let mut next = vec![0.0; dims.fan_out];
                    for (o, cell) in next.iter_mut().enumerate() {
                        let row = &flat[base + o * dims.fan_in..base + (o + 1) * dims.fan_in];
                        let z = row
                            .iter()
                            .zip(activation.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            + flat[bias_base + o];
                        if spec.activation == Activation::Relu {
                            gap = gap.min(z.abs());
                        }
                        *cell = spec.activation.apply(z);
                    }
                    activation = next;
                    base = bias_base + dims.fan_out;
                }
                Ok(gap)
            }
        }
    }
}

/// One-hot (or scaled one-hot) feature vector for a tabular state-action
/// pair: entry `state * n_actions + action` is 1, or `scale[j]` when a
/// per-cell scale vector is supplied. Scale entries must all be non-zero.
pub fn tabular_features(
    state: usize,
    action: usize,
    n_states: usize,
    n_actions: usize,
    scale: Option<&DenseVector>,
) -> Result<DenseVector, ModelError> {
    if state >= n_states {
        return Err(ModelError::IndexOutOfRange {
            what: "state",
            index: state,
            bound: n_states,
        });
    }
    if action >= n_actions {
        return Err(ModelError::IndexOutOfRange {
            what: "action",
            index: action,
            bound: n_actions,
        });
    }
    let dim = n_states * n_actions;
    if let Some(phi) = scale {
        if phi.len() != dim {
            return Err(ModelError::DimensionMismatch(format!(
                "scale vector has {} entries, expected {}",
                phi.len(),
                dim
            )));
        }
        if let Some(index) = phi.iter().position(|&v| v == 0.0) {
            return Err(ModelError::ZeroScale { index });
        }
    }
    let j = state * n_actions + action;
    let mut x = DenseVector::zeros(dim);
    x[j] = scale.map_or(1.0, |phi| phi[j]);
    Ok(x)
}

/// Checkpoint layout header entry count sanity limit (layers).
const MAX_CHECKPOINT_LAYERS: u32 = 1 << 16;

/// Write weights to `path`. Byte format, little-endian throughout:
///
/// ```text
/// u32 layer_count
/// repeated per layer: u32 fan_in, u32 fan_out, u32 bias_count (0 or fan_out)
/// f64 * param_count   values, layer by layer, weights row-major then biases
/// ```
pub fn write_checkpoint(path: &Path, w: &FlatWeights) -> Result<(), ModelError> {
    let mut bytes = Vec::with_capacity(4 + 12 * w.layout.layers.len() + 8 * w.len());
    bytes.extend_from_slice(&(w.layout.layers.len() as u32).to_le_bytes());
    for dims in &w.layout.layers {
        bytes.extend_from_slice(&(dims.fan_in as u32).to_le_bytes());
        bytes.extend_from_slice(&(dims.fan_out as u32).to_le_bytes());
        let bias_count = if dims.bias { dims.fan_out as u32 } else { 0 };
        bytes.extend_from_slice(&bias_count.to_le_bytes());
    }
    for &v in w.values.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Read a checkpoint written by [`write_checkpoint`]; bitwise exact.
pub fn read_checkpoint(path: &Path) -> Result<FlatWeights, ModelError> {
    let bytes = fs::read(path)?;
    let take_u32 = |offset: usize| -> Result<u32, ModelError> {
        bytes
            .get(offset..offset + 4)
            .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
            .ok_or_else(|| ModelError::BadCheckpoint("truncated header".into()))
    };
    let layer_count = take_u32(0)?;
    if layer_count == 0 || layer_count > MAX_CHECKPOINT_LAYERS {
        return Err(ModelError::BadCheckpoint(format!(
            "implausible layer count {layer_count}"
        )));
    }
    let mut layers = Vec::with_capacity(layer_count as usize);
    let mut offset = 4;
    for _ in 0..layer_count {
        let fan_in = take_u32(offset)? as usize;
        let fan_out = take_u32(offset + 4)? as usize;
        let bias_count = take_u32(offset + 8)? as usize;
        offset += 12;
        if fan_in == 0 || fan_out == 0 || (bias_count != 0 && bias_count != fan_out) {
            return Err(ModelError::BadCheckpoint(format!(
                "bad layer dims {fan_in}x{fan_out} bias {bias_count}"
            )));
        }
        layers.push(LayerDims {
            fan_in,
            fan_out,
            bias: bias_count == fan_out && bias_count != 0,
        });
    }
    let layout = Layout { layers };
    let expected = layout.param_count();
    if bytes.len() != offset + 8 * expected {
        return Err(ModelError::BadCheckpoint(format!(
            "value block has {} bytes, layout expects {}",
            bytes.len() - offset,
            8 * expected
        )));
    }
    let mut values = Vec::with_capacity(expected);
    for chunk in bytes[offset..].chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    FlatWeights::new(DenseVector::from_raw(values), layout)
}
