use rand::Rng;

use super::encoder::INIT_BOUND;
use super::Pass;
use crate::error::Result;
use crate::nn::{dense, dense_backward, dropout_backward, sigmoid, Activation, Parameter, Real, Tensor};

/// Fully connected layer `activation(W x + b)`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub activation: Activation,
}

impl<T: Real> Dense<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Dense {
            weight: Parameter::new(
                format!("{name}.w"),
                Tensor::uniform(&[outputs, inputs], INIT_BOUND, rng),
            ),
            bias: Parameter::zeros(format!("{name}.b"), &[outputs]),
            activation,
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        dense(x, &self.weight.value, &self.bias.value, self.activation)
    }

    pub fn backward(&mut self, x: &[T], y: &[T], dy: &[T]) -> Vec<T> {
        dense_backward(
            x,
            y,
            &self.weight.value,
            self.activation,
            dy,
            &mut self.weight.grad,
            &mut self.bias.grad,
        )
    }

    pub fn parameters(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Per-task scorer: a tanh layer the size of its input followed by a
/// sigmoid unit.
#[derive(Clone, Debug)]
pub struct TaskHead<T> {
    pub hidden: Dense<T>,
    pub output: Dense<T>,
}

#[derive(Clone, Debug)]
pub struct HeadCache<T> {
    input: Vec<T>,
    hidden: Vec<T>,
    dropped: Vec<T>,
    mask: Option<Vec<T>>,
    logit: T,
    pub probability: T,
}

impl<T: Real> TaskHead<T> {
    pub fn new(name: &str, inputs: usize, rng: &mut impl Rng) -> Self {
        TaskHead {
            hidden: Dense::new(&format!("{name}.hidden"), inputs, inputs, Activation::Tanh, rng),
            output: Dense::new(&format!("{name}.out"), inputs, 1, Activation::Identity, rng),
        }
    }

    pub fn forward(&self, x: &[T], pass: &mut Pass<'_>) -> Result<HeadCache<T>> {
        let hidden = self.hidden.forward(x)?;
        let (dropped, mask) = pass.hidden_dropout(&hidden);
        let logit = self.output.forward(&dropped)?[0];
        Ok(HeadCache {
            input: x.to_vec(),
            hidden,
            dropped,
            mask,
            logit,
            probability: sigmoid(logit),
        })
    }

    /// Backpropagates a gradient on the logit; returns the input gradient.
    pub fn backward(&mut self, cache: &HeadCache<T>, dlogit: T) -> Vec<T> {
        let ddropped = self
            .output
            .backward(&cache.dropped, &[cache.logit], &[dlogit]);
        let dhidden = dropout_backward(&ddropped, cache.mask.as_deref());
        self.hidden.backward(&cache.input, &cache.hidden, &dhidden)
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        self.hidden
            .parameters()
            .into_iter()
            .chain(self.output.parameters())
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.hidden
            .parameters_mut()
            .into_iter()
            .chain(self.output.parameters_mut())
            .collect()
    }
}
