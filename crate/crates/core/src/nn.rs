//! Multi-layer perceptrons over the tape: parameter containers, uniform
//! fan-in initialization, a plain inference path, and a recorded path for
//! training.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply_inplace(self, x: &mut [f64]) {
        match self {
            Activation::Relu => {
                for v in x {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for v in x {
                    *v = v.tanh();
                }
            }
            Activation::Identity => {}
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// (in x out), row-major.
    pub weight: Tensor,
    /// (1 x out).
    pub bias: Tensor,
    pub activation: Activation,
}

/// A dense feed-forward network; `widths` holds the input width followed by
/// each layer's output width.
#[derive(Debug, Clone)]
pub struct MlpParams {
    widths: Vec<usize>,
    layers: Vec<Layer>,
}

impl MlpParams {
    /// Initializes weights and biases uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    pub fn new<R: Rng>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::contract("an MLP needs at least one layer"));
        }
        if widths.iter().any(|w| *w == 0) {
            return Err(Error::contract("layer widths must be positive"));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::contract(format!(
                "expected {} activations, got {}",
                widths.len() - 1,
                activations.len()
            )));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            let b: Vec<f64> = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            layers.push(Layer {
                weight: Tensor::new(vec![fan_in, fan_out], w)?,
                bias: Tensor::new(vec![1, fan_out], b)?,
                activation: *act,
            });
        }
        Ok(MlpParams {
            widths: widths.to_vec(),
            layers,
        })
    }

    /// Builds a network from explicit layer tensors; used by tests and
    /// checkpoint loading.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("an MLP needs at least one layer"));
        }
        let mut widths = vec![layers[0].weight.shape()[0]];
        for (i, l) in layers.iter().enumerate() {
            let s = l.weight.shape();
            if s.len() != 2 {
                return Err(Error::shape(format!("layer {i} weight"), &[0, 0], s));
            }
            if s[0] != *widths.last().unwrap() {
                return Err(Error::shape(
                    format!("layer {i} input width"),
                    &[*widths.last().unwrap()],
                    &[s[0]],
                ));
            }
            if l.bias.len() != s[1] {
                return Err(Error::shape(
                    format!("layer {i} bias"),
                    &[s[1]],
                    &[l.bias.len()],
                ));
            }
            widths.push(s[1]);
        }
        Ok(MlpParams { widths, layers })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// All parameter tensors in a fixed order (w0, b0, w1, b1, ...).
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.len() * 2
    }

    /// Plain forward pass on a (batch x input_dim) row-major buffer.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        if batch == 0 || input.len() != batch * self.input_dim() {
            return Err(Error::shape(
                "mlp input",
                &[batch, self.input_dim()],
                &[input.len()],
            ));
        }
        let mut cur = input.to_vec();
        let mut cur_cols = self.input_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            if cur_cols != fan_in {
                return Err(Error::shape(
                    format!("mlp layer {i}"),
                    &[fan_in],
                    &[cur_cols],
                ));
            }
            // Matmul first, bias second: keeps float op order identical to
            // the recorded path so the two forwards agree bit-for-bit.
            let mut next = vec![0.0; batch * fan_out];
            crate::tensor::matmul_into(&cur, layer.weight.data(), batch, fan_in, fan_out, &mut next);
            for chunk in next.chunks_exact_mut(fan_out) {
                for (o, b) in chunk.iter_mut().zip(layer.bias.data()) {
                    *o += b;
                }
            }
            layer.activation.apply_inplace(&mut next);
            cur = next;
            cur_cols = fan_out;
        }
        Ok(cur)
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(input, 1)
    }
}

/// Node ids of one network's parameters on a tape.
#[derive(Debug, Clone)]
pub struct MlpBinding {
    layers: Vec<(NodeId, NodeId, Activation)>,
    input_dim: usize,
}

impl MlpBinding {
    /// Binds every layer as differentiable parameters, in `tensors()` order.
    pub fn trainable(tape: &mut Tape, mlp: &MlpParams) -> Self {
        let layers = mlp
            .layers
            .iter()
            .map(|l| (tape.param(&l.weight), tape.param(&l.bias), l.activation))
            .collect();
        MlpBinding {
            layers,
            input_dim: mlp.input_dim(),
        }
    }

    /// Binds every layer as constants; gradients will not flow into them.
    pub fn frozen(tape: &mut Tape, mlp: &MlpParams) -> Result<Self> {
        let mut layers = Vec::with_capacity(mlp.layers.len());
        for l in &mlp.layers {
            let s = l.weight.shape();
            let w = tape.constant(s[0], s[1], l.weight.data().to_vec())?;
            let b = tape.constant(1, l.bias.len(), l.bias.data().to_vec())?;
            layers.push((w, b, l.activation));
        }
        Ok(MlpBinding {
            layers,
            input_dim: mlp.input_dim(),
        })
    }

    /// Records the forward pass of the bound network on the tape.
    pub fn apply(&self, tape: &mut Tape, input: NodeId) -> Result<NodeId> {
        let (_, cols) = tape.dims(input);
        if cols != self.input_dim {
            return Err(Error::shape("mlp layer 0", &[self.input_dim], &[cols]));
        }
        let mut cur = input;
        for (w, b, act) in &self.layers {
            let z = tape.matmul(cur, *w)?;
            let z = tape.add_row(z, *b)?;
            cur = match act {
                Activation::Relu => tape.relu(z),
                Activation::Tanh => tape.tanh(z),
                Activation::Identity => z,
            };
        }
        Ok(cur)
    }
}

/// Moves tape gradients (indexed by binding slot) onto parameter tensors.
/// When `fill_missing` is set, parameters the loss never touched receive an
/// explicit zero gradient instead of staying empty.
pub fn apply_param_grads(
    params: &mut [&mut Tensor],
    grads: Vec<Option<Vec<f64>>>,
    fill_missing: bool,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::contract(format!(
            "gradient count {} does not match parameter count {}",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        match g {
            Some(g) => p.accumulate_grad(&g)?,
            None if fill_missing => {
                let z = vec![0.0; p.len()];
                p.accumulate_grad(&z)?;
            }
            None => {}
        }
    }
    Ok(())
}
