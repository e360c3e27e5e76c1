//! Minimal dense numeric kernel: a fixed-layout MLP with hand-derived
//! backward passes, Adam, and the vector ops everything else builds on.
//!
//! The architectures in this project are small and closed (an encoder trunk
//! and a three-input fusion head), so the kernel favors exact analytic
//! gradients and determinism over generality. All arithmetic is `f64`.

mod adam;
mod linalg;

pub use adam::AdamState;
pub use linalg::{cosine_similarity, dot, l2_normalize, norm, Matrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Sigmoid pre-activations are clamped to this magnitude so outputs stay
/// strictly inside (0, 1) and downstream log terms stay finite.
pub const SIGMOID_CLAMP: f64 = 36.0;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    1.0 / (1.0 + (-z).exp())
}

/// Fully-connected feed-forward network.
///
/// `weights[l]` has shape `layer_dims[l+1] × layer_dims[l]`; `biases[l]` has
/// length `layer_dims[l+1]`. Hidden layers use ReLU, the output layer uses
/// `output_activation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
}

/// Per-parameter gradients plus the gradient w.r.t. the network input.
#[derive(Debug, Clone)]
pub struct GradientRecord {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl GradientRecord {
    pub fn zeros_like(model: &Mlp) -> Self {
        GradientRecord {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: vec![0.0; model.input_dim()],
        }
    }

    /// Parameter blocks in the same order as [`Mlp::param_blocks_mut`].
    pub fn param_blocks(&self) -> Vec<&[f64]> {
        let mut blocks = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            blocks.push(w.data());
            blocks.push(b.as_slice());
        }
        blocks
    }

    pub fn zero(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.biases
            .iter_mut()
            .for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
        self.input.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Cached activations from a forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l+1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has layers")
    }
}

impl Mlp {
    /// Glorot-uniform initialized network: weights in
    /// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new_glorot(
        layer_dims: &[usize],
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for l in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform(-limit, limit))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data));
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    /// All-zero parameters; useful for fixed-value tests.
    pub fn zeros(
        layer_dims: &[usize],
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let weights = (0..layer_dims.len() - 1)
            .map(|l| Matrix::zeros(layer_dims[l + 1], layer_dims[l]))
            .collect();
        let biases = (0..layer_dims.len() - 1)
            .map(|l| vec![0.0; layer_dims[l + 1]])
            .collect();
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        Self::validate_dims(&layer_dims)?;
        if weights.len() != layer_dims.len() - 1 || biases.len() != layer_dims.len() - 1 {
            return Err(Error::Config(
                "weights/biases must have one entry per layer".into(),
            ));
        }
        for l in 0..weights.len() {
            if weights[l].rows() != layer_dims[l + 1] || weights[l].cols() != layer_dims[l] {
                return Err(Error::Config(format!(
                    "layer {l} weight shape {}x{} does not match dims {}x{}",
                    weights[l].rows(),
                    weights[l].cols(),
                    layer_dims[l + 1],
                    layer_dims[l]
                )));
            }
            if biases[l].len() != layer_dims[l + 1] {
                return Err(Error::Config(format!("layer {l} bias length mismatch")));
            }
            if !weights[l].is_finite() || !biases[l].iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(Mlp {
            layer_dims,
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    fn validate_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 {
            return Err(Error::Config("MLP needs at least one layer".into()));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer dims must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.data().len())
            .chain(self.biases.iter().map(Vec::len))
            .sum()
    }

    /// Names of the parameter blocks, in update order.
    pub fn param_block_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.weights.len() * 2);
        for l in 0..self.weights.len() {
            names.push(format!("layer{l}.weight"));
            names.push(format!("layer{l}.bias"));
        }
        names
    }

    /// Lengths of the parameter blocks, aligned with
    /// [`Mlp::param_block_names`].
    pub fn param_blocks_shapes(&self) -> Vec<usize> {
        let mut shapes = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            shapes.push(w.data().len());
            shapes.push(b.len());
        }
        shapes
    }

    /// Mutable views of the parameter blocks, in the same order as
    /// [`Mlp::param_block_names`] and [`GradientRecord::param_blocks`].
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks: Vec<&mut [f64]> = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            blocks.push(w.data_mut());
            blocks.push(b.as_mut_slice());
        }
        // Interleave as (weight, bias) per layer to match names.
        let mut interleaved = Vec::with_capacity(blocks.len());
        let mut iter = blocks.into_iter();
        while let (Some(w), Some(b)) = (iter.next(), iter.next()) {
            interleaved.push(w);
            interleaved.push(b);
        }
        interleaved
    }

    /// FNV-1a hash over the bit patterns of every parameter. Used by tests
    /// that assert training never mutates a frozen model.
    pub fn param_fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (w, b) in self.weights.iter().zip(&self.biases) {
            w.data().iter().copied().for_each(&mut feed);
            b.iter().copied().for_each(&mut feed);
        }
        hash
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "mlp input".into(),
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn activate(&self, layer: usize, z: &mut [f64]) {
        let is_output = layer == self.weights.len() - 1;
        if is_output {
            match self.output_activation {
                OutputActivation::Identity => {}
                OutputActivation::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
            }
        } else {
            match self.hidden_activation {
                HiddenActivation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            }
        }
    }

    /// Forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut a = input.to_vec();
        for l in 0..self.weights.len() {
            let mut z = self.weights[l].matvec(&a);
            for (zi, bi) in z.iter_mut().zip(&self.biases[l]) {
                *zi += bi;
            }
            self.activate(l, &mut z);
            a = z;
        }
        Ok(a)
    }

    /// Forward pass keeping the per-layer values needed by backward.
    pub fn forward_traced(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.weights.len());
        activations.push(input.to_vec());
        for l in 0..self.weights.len() {
            let mut z = self.weights[l].matvec(activations.last().unwrap());
            for (zi, bi) in z.iter_mut().zip(&self.biases[l]) {
                *zi += bi;
            }
            pre_activations.push(z.clone());
            self.activate(l, &mut z);
            activations.push(z);
        }
        Ok(ForwardTrace {
            activations,
            pre_activations,
        })
    }

    /// Exact gradients of the forward map contracted with `upstream_grad`.
    pub fn backward(&self, input: &[f64], upstream_grad: &[f64]) -> Result<GradientRecord> {
        let trace = self.forward_traced(input)?;
        let mut grads = GradientRecord::zeros_like(self);
        let input_grad = self.backward_accumulate(&trace, upstream_grad, &mut grads)?;
        grads.input = input_grad;
        Ok(grads)
    }

    /// Backward pass from a cached trace, accumulating parameter gradients
    /// into `grads`. Returns the gradient w.r.t. the input.
    pub fn backward_accumulate(
        &self,
        trace: &ForwardTrace,
        upstream_grad: &[f64],
        grads: &mut GradientRecord,
    ) -> Result<Vec<f64>> {
        if upstream_grad.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                context: "mlp upstream gradient".into(),
                expected: self.output_dim(),
                got: upstream_grad.len(),
            });
        }
        let mut g = upstream_grad.to_vec();
        for l in (0..self.weights.len()).rev() {
            let is_output = l == self.weights.len() - 1;
            let z = &trace.pre_activations[l];
            let a_out = &trace.activations[l + 1];
            // dz = g ⊙ act'(z)
            let mut dz = g;
            if is_output {
                match self.output_activation {
                    OutputActivation::Identity => {}
                    OutputActivation::Sigmoid => {
                        for (d, s) in dz.iter_mut().zip(a_out) {
                            *d *= s * (1.0 - s);
                        }
                    }
                }
            } else {
                match self.hidden_activation {
                    HiddenActivation::Relu => {
                        for (d, zi) in dz.iter_mut().zip(z) {
                            if *zi <= 0.0 {
                                *d = 0.0;
                            }
                        }
                    }
                }
            }
            grads.weights[l].add_outer(&dz, &trace.activations[l]);
            for (slot, d) in grads.biases[l].iter_mut().zip(&dz) {
                *slot += d;
            }
            g = self.weights[l].matvec_transposed(&dz);
        }
        Ok(g)
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layer_dims: self.layer_dims.clone(),
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
            weights: self.weights.iter().map(|w| w.data().to_vec()).collect(),
            biases: self.biases.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &MlpCheckpoint) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported checkpoint format version {}",
                ckpt.format_version
            )));
        }
        if ckpt.weights.len() + 1 != ckpt.layer_dims.len() {
            return Err(Error::Artifact("checkpoint layer count mismatch".into()));
        }
        let weights = ckpt
            .weights
            .iter()
            .enumerate()
            .map(|(l, data)| {
                let (rows, cols) = (ckpt.layer_dims[l + 1], ckpt.layer_dims[l]);
                if data.len() != rows * cols {
                    return Err(Error::Artifact(format!(
                        "checkpoint layer {l} weight length {} != {rows}x{cols}",
                        data.len()
                    )));
                }
                Ok(Matrix::from_vec(rows, cols, data.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_parts(
            ckpt.layer_dims.clone(),
            weights,
            ckpt.biases.clone(),
            ckpt.hidden_activation,
            ckpt.output_activation,
        )
        .map_err(|e| Error::Artifact(format!("invalid checkpoint: {e}")))
    }
}

/// JSON-serializable model record: dims, activations, row-major weight
/// arrays, bias arrays, and a format version.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Central finite differences of `f` w.r.t. `x[i]`, step `h`.
    pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    /// Symmetric relative error with an absolute floor.
    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-4)
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::{central_diff, rel_err};
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_net_with_sigmoid_outputs_half() {
        let mlp = Mlp::zeros(
            &[3, 4, 1],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
        )
        .unwrap();
        let out = mlp.forward(&[0.7, -2.0, 11.0]).unwrap();
        assert_eq!(out, vec![0.5]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mlp = Mlp::from_parts(
            vec![2, 2],
            vec![Matrix::identity(2)],
            vec![vec![0.0, 0.0]],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        assert_eq!(mlp.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn hand_evaluated_two_layer_net() {
        // 1-1-1 net, w=2 and b=0 in both layers, ReLU hidden, identity out:
        // 3 -> 6 -> relu 6 -> 12
        let mlp = Mlp::from_parts(
            vec![1, 1, 1],
            vec![
                Matrix::from_vec(1, 1, vec![2.0]),
                Matrix::from_vec(1, 1, vec![2.0]),
            ],
            vec![vec![0.0], vec![0.0]],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        assert_eq!(mlp.forward(&[3.0]).unwrap(), vec![12.0]);
    }

    #[test]
    fn wrong_input_length_is_shape_error() {
        let mlp = Mlp::zeros(
            &[3, 2],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        assert_eq!(mlp.forward(&[1.0]).unwrap_err().code(), "shape_mismatch");
        assert_eq!(
            mlp.backward(&[1.0, 2.0, 3.0], &[1.0]).unwrap_err().code(),
            "shape_mismatch"
        );
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = SeededRng::from_seed(5);
        let mlp = Mlp::new_glorot(
            &[3, 8, 2],
            HiddenActivation::Relu,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        let grads = mlp.backward(&[0.3, -0.2, 0.9], &[0.0, 0.0]).unwrap();
        assert!(grads.weights.iter().all(|w| w.data().iter().all(|&v| v == 0.0)));
        assert!(grads.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(grads.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_single_layer_gradient_is_input() {
        // y = a*x; dL/da with upstream 1 is x.
        let mlp = Mlp::from_parts(
            vec![1, 1],
            vec![Matrix::from_vec(1, 1, vec![1.7])],
            vec![vec![0.0]],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        let grads = mlp.backward(&[4.25], &[1.0]).unwrap();
        assert_eq!(grads.weights[0].data(), &[4.25]);
        assert_eq!(grads.biases[0], vec![1.0]);
        assert_eq!(grads.input, vec![1.7]);
    }

    fn fd_check_model(dims: &[usize], out: OutputActivation, seed: u64) {
        let mut rng = SeededRng::from_seed(seed);
        let mlp = Mlp::new_glorot(dims, HiddenActivation::Relu, out, &mut rng).unwrap();
        let input: Vec<f64> = (0..dims[0]).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let upstream: Vec<f64> = (0..*dims.last().unwrap())
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect();
        let grads = mlp.backward(&input, &upstream).unwrap();

        // Scalar objective: upstream · forward(x). Perturb every weight of
        // layer 0 plus a sample of later layers, and every input coordinate.
        let ckpt = mlp.to_checkpoint();
        for l in 0..ckpt.weights.len() {
            for i in (0..ckpt.weights[l].len()).step_by(7) {
                let mut f = |v: &[f64]| {
                    let mut c = ckpt.clone();
                    c.weights[l] = v.to_vec();
                    let m = Mlp::from_checkpoint(&c).unwrap();
                    dot(&upstream, &m.forward(&input).unwrap())
                };
                let fd = central_diff(&mut f, &ckpt.weights[l], i, 1e-5);
                assert!(
                    rel_err(grads.weights[l].data()[i], fd) < 1e-4,
                    "weight fd mismatch at layer {l} idx {i}: {} vs {fd}",
                    grads.weights[l].data()[i]
                );
            }
            for i in 0..ckpt.biases[l].len() {
                let mut f = |v: &[f64]| {
                    let mut c = ckpt.clone();
                    c.biases[l] = v.to_vec();
                    let m = Mlp::from_checkpoint(&c).unwrap();
                    dot(&upstream, &m.forward(&input).unwrap())
                };
                let fd = central_diff(&mut f, &ckpt.biases[l], i, 1e-5);
                assert!(
                    rel_err(grads.biases[l][i], fd) < 1e-4,
                    "bias fd mismatch at layer {l} idx {i}"
                );
            }
        }
        for i in 0..input.len() {
            let mut f = |v: &[f64]| dot(&upstream, &mlp.forward(v).unwrap());
            let fd = central_diff(&mut f, &input, i, 1e-5);
            assert!(
                rel_err(grads.input[i], fd) < 1e-4,
                "input fd mismatch at {i}"
            );
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        fd_check_model(&[3, 32, 32, 32, 1], OutputActivation::Identity, 11);
        fd_check_model(&[3, 32, 32, 1], OutputActivation::Sigmoid, 12);
        fd_check_model(&[5, 8, 4], OutputActivation::Identity, 13);
    }

    #[test]
    fn sigmoid_output_stays_in_open_interval() {
        assert!(sigmoid(1e9) < 1.0);
        assert!(sigmoid(-1e9) > 0.0);
        assert_abs_diff_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn checkpoint_round_trip_preserves_model() {
        let mut rng = SeededRng::from_seed(99);
        let mlp = Mlp::new_glorot(
            &[4, 6, 3],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        let json = serde_json::to_string(&mlp.to_checkpoint()).unwrap();
        let back = Mlp::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(mlp, back);
        assert_eq!(mlp.param_fingerprint(), back.param_fingerprint());
    }

    #[test]
    fn glorot_init_is_seed_deterministic() {
        let dims = [4, 8, 2];
        let a = Mlp::new_glorot(
            &dims,
            HiddenActivation::Relu,
            OutputActivation::Identity,
            &mut SeededRng::from_seed(1),
        )
        .unwrap();
        let b = Mlp::new_glorot(
            &dims,
            HiddenActivation::Relu,
            OutputActivation::Identity,
            &mut SeededRng::from_seed(1),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
