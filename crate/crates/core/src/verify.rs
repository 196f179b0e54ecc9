//! Finite-difference self-check of the full joint network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{prepare_examples, vocabulary_for, DropoutRates, Example, ModelDims, MtlModel, Network, Pass};
use crate::nn::gradcheck::{grad_check, Differentiable, GradCheckReport, DEFAULT_DELTA};
use crate::nn::Parameter;
use crate::synthetic::{self, SyntheticConfig};
use crate::train::joint_loss;
use crate::TaskSet;

/// Deliberate gradient bugs for negative-control runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientFault {
    /// Scales the convolution filter gradients of both encoders by 0.9.
    Conv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSetup {
    pub triples: usize,
    pub word_dim: usize,
    pub feat_dim: usize,
    pub feature_maps: usize,
    pub filter_width: usize,
    /// Dropout rates used with frozen masks; `None` checks the inference path.
    pub dropout: Option<DropoutRates>,
    pub delta: f64,
    pub seed: u64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        GradCheckSetup {
            triples: 5,
            word_dim: 6,
            feat_dim: 3,
            feature_maps: 8,
            filter_width: 3,
            dropout: Some(DropoutRates::default()),
            delta: DEFAULT_DELTA,
            seed: 0,
        }
    }
}

/// Mean joint loss of an f64 network over a fixed set of examples. Every
/// evaluation reseeds the dropout stream, so all passes share one mask.
pub struct JointObjective {
    pub model: MtlModel<f64>,
    pub examples: Vec<Example>,
    pub active: TaskSet,
    pub dropout: Option<DropoutRates>,
    pub dropout_seed: u64,
    pub fault: Option<GradientFault>,
}

impl JointObjective {
    fn run(&mut self, with_gradients: bool) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let scale = 1.0 / self.examples.len() as f64;
        if with_gradients {
            self.model.zero_grad();
        }
        let mut total = 0.0;
        for ex in &self.examples {
            let mut pass = match self.dropout {
                Some(rates) => Pass::Training {
                    dropout: rates,
                    rng: &mut rng,
                },
                None => Pass::Inference,
            };
            let loss = if with_gradients {
                let losses = self.model.accumulate_gradients(ex, self.active, &mut pass, scale)?;
                losses.iter().sum::<f64>()
            } else {
                let p = self.model.forward_mtl(ex, &mut pass)?;
                joint_loss(p, ex.labels, self.active)
            };
            total += loss * scale;
        }
        if with_gradients {
            if let Some(GradientFault::Conv) = self.fault {
                for enc in [&mut self.model.question_encoder, &mut self.model.comment_encoder] {
                    for g in enc.filters.grad.data_mut() {
                        *g *= 0.9;
                    }
                }
            }
        }
        Ok(total)
    }
}

impl Differentiable for JointObjective {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        self.model.parameters_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        self.run(false)
    }

    fn loss_with_gradients(&mut self) -> Result<f64> {
        self.run(true)
    }
}

/// A randomly initialized f64 joint network over a small synthetic corpus.
pub fn joint_objective(setup: &GradCheckSetup, fault: Option<GradientFault>) -> Result<JointObjective> {
    let triples = synthetic::generate(&SyntheticConfig {
        queries: 1,
        related_per_query: setup.triples.max(1),
        comments_per_related: 1,
        seed: setup.seed,
        ..Default::default()
    });
    let vocab = vocabulary_for(&triples, crate::text::DEFAULT_MAX_LEN, 1);
    let examples = prepare_examples(&triples, &vocab, crate::text::DEFAULT_MAX_LEN)?;
    let dims = ModelDims {
        vocab_size: vocab.len(),
        word_dim: setup.word_dim,
        feat_dim: setup.feat_dim,
        feature_maps: setup.feature_maps,
        filter_width: setup.filter_width,
    };
    Ok(JointObjective {
        model: MtlModel::new(dims, setup.seed)?,
        examples,
        active: TaskSet::ALL,
        dropout: setup.dropout,
        dropout_seed: setup.seed.wrapping_add(1),
        fault,
    })
}

/// Gradient check of every parameter tensor of the joint network.
pub fn mtl_gradient_check(setup: &GradCheckSetup, probes: usize, fault: Option<GradientFault>) -> Result<GradCheckReport> {
    let mut objective = joint_objective(setup, fault)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed.wrapping_add(2));
    grad_check(&mut objective, probes, setup.delta, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_check_passes_and_fault_is_caught() {
        let setup = GradCheckSetup::default();
        let ok = mtl_gradient_check(&setup, 30, None).unwrap();
        assert!(ok.max_relative_error < 1e-4, "{:?}", ok.worst());
        let bad = mtl_gradient_check(&setup, 30, Some(GradientFault::Conv)).unwrap();
        assert!(bad.max_relative_error > 1e-2);
    }

    #[test]
    fn zero_probes_is_an_error() {
        let err = mtl_gradient_check(&GradCheckSetup::default(), 0, None).unwrap_err();
        assert!(err.to_string().contains("probes must be >= 1"));
    }
}
