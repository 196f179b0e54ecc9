use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{EncoderCache, SentenceEncoder, INIT_BOUND};
use super::layers::Dense;
use super::{Example, ModelDims, Network, Pass, Slot, TaskScores, WordVectors, RANK_BINS};
use crate::error::{Error, Result};
use crate::nn::{bce_logit_grad, bce_loss, dropout_backward, sigmoid, Activation, Parameter, Real, Tensor};
use crate::text::Vocabulary;
use crate::{Task, TaskSet};

/// Single-task scorer over one text pair: two sentence encoders, optional
/// rank embedding (tasks B and C), two tanh layers the size of the join
/// layer and a sigmoid output.
///
/// For task B both inputs are questions and share one encoder.
#[derive(Clone, Debug)]
pub struct PairModel<T> {
    task: Task,
    dims: ModelDims,
    pub first: SentenceEncoder<T>,
    /// `None` when the second text uses `first` as well.
    pub second: Option<SentenceEncoder<T>>,
    pub rank_table: Option<Parameter<T>>,
    pub hidden1: Dense<T>,
    pub hidden2: Dense<T>,
    pub output: Dense<T>,
}

#[derive(Clone, Debug)]
struct PairCache<T> {
    encoders: [EncoderCache<T>; 2],
    rank_bin: usize,
    join_dropped: Vec<T>,
    join_mask: Option<Vec<T>>,
    h1: Vec<T>,
    h1_dropped: Vec<T>,
    h1_mask: Option<Vec<T>>,
    h2: Vec<T>,
    h2_dropped: Vec<T>,
    h2_mask: Option<Vec<T>>,
    logit: T,
}

impl<T: Real> PairModel<T> {
    pub fn new(task: Task, dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = SentenceEncoder::new("q_enc", &dims, &mut rng);
        let second = match task {
            Task::B => None,
            Task::A | Task::C => Some(SentenceEncoder::new("c_enc", &dims, &mut rng)),
        };
        let rank_table = match task {
            Task::A => None,
            Task::B | Task::C => Some(Parameter::new(
                "rank",
                Tensor::uniform(&[RANK_BINS, dims.feat_dim], INIT_BOUND, &mut rng),
            )),
        };
        let join = Self::join_dim_for(task, &dims);
        Ok(PairModel {
            task,
            dims,
            first,
            second,
            rank_table,
            hidden1: Dense::new("hidden1", join, join, Activation::Tanh, &mut rng),
            hidden2: Dense::new("hidden2", join, join, Activation::Tanh, &mut rng),
            output: Dense::new("out", join, 1, Activation::Identity, &mut rng),
        })
    }

    fn join_dim_for(task: Task, dims: &ModelDims) -> usize {
        let rank = if task == Task::A { 0 } else { dims.feat_dim };
        2 * dims.feature_maps + rank
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    fn second_encoder(&self) -> &SentenceEncoder<T> {
        self.second.as_ref().unwrap_or(&self.first)
    }

    pub fn load_pretrained(&mut self, vectors: &WordVectors, vocab: &Vocabulary) -> Result<usize> {
        if let Some(enc) = self.second.as_mut() {
            enc.load_pretrained(vectors, vocab)?;
        }
        self.first.load_pretrained(vectors, vocab)
    }

    fn forward(&self, ex: &Example, pass: &mut Pass<'_>) -> Result<PairCache<T>> {
        let (sa, sb) = Slot::pair_for(self.task);
        let [oa, ob] = &ex.pair_overlaps[self.task.index()];
        let (xa, ca) = self.first.forward(&ex.text(sa).ids, oa)?;
        let (xb, cb) = self.second_encoder().forward(&ex.text(sb).ids, ob)?;
        let mut join = xa;
        join.extend(xb);
        if let Some(rank) = &self.rank_table {
            join.extend_from_slice(rank.value.row(ex.rank_bin));
        }
        let (join_dropped, join_mask) = pass.input_dropout(&join);
        let h1 = self.hidden1.forward(&join_dropped)?;
        let (h1_dropped, h1_mask) = pass.hidden_dropout(&h1);
        let h2 = self.hidden2.forward(&h1_dropped)?;
        let (h2_dropped, h2_mask) = pass.hidden_dropout(&h2);
        let logit = self.output.forward(&h2_dropped)?[0];
        Ok(PairCache {
            encoders: [ca, cb],
            rank_bin: ex.rank_bin,
            join_dropped,
            join_mask,
            h1,
            h1_dropped,
            h1_mask,
            h2,
            h2_dropped,
            h2_mask,
            logit,
        })
    }

    /// Similarity score of the task's text pair.
    pub fn forward_pair(&self, ex: &Example, pass: &mut Pass<'_>) -> Result<T> {
        Ok(sigmoid(self.forward(ex, pass)?.logit))
    }

    fn backward(&mut self, cache: &PairCache<T>, dlogit: T) {
        let dh2d = self
            .output
            .backward(&cache.h2_dropped, &[cache.logit], &[dlogit]);
        let dh2 = dropout_backward(&dh2d, cache.h2_mask.as_deref());
        let dh1d = self.hidden2.backward(&cache.h1_dropped, &cache.h2, &dh2);
        let dh1 = dropout_backward(&dh1d, cache.h1_mask.as_deref());
        let djd = self.hidden1.backward(&cache.join_dropped, &cache.h1, &dh1);
        let djoin = dropout_backward(&djd, cache.join_mask.as_deref());

        let m = self.dims.feature_maps;
        self.first.backward(&cache.encoders[0], &djoin[..m]);
        match self.second.as_mut() {
            Some(enc) => enc.backward(&cache.encoders[1], &djoin[m..2 * m]),
            None => self.first.backward(&cache.encoders[1], &djoin[m..2 * m]),
        }
        if let Some(rank) = self.rank_table.as_mut() {
            for (g, &d) in rank.grad.row_mut(cache.rank_bin).iter_mut().zip(&djoin[2 * m..]) {
                *g += d;
            }
        }
    }
}

impl<T: Real> Network<T> for PairModel<T> {
    fn tasks(&self) -> TaskSet {
        TaskSet::only(self.task)
    }

    fn predict(&self, example: &Example) -> Result<TaskScores<T>> {
        let mut scores = [None; 3];
        scores[self.task.index()] = Some(self.forward_pair(example, &mut Pass::Inference)?);
        Ok(scores)
    }

    fn accumulate_gradients(
        &mut self,
        example: &Example,
        active: TaskSet,
        pass: &mut Pass<'_>,
        scale: T,
    ) -> Result<[T; 3]> {
        if !active.is_subset_of(&self.tasks()) {
            return Err(Error::InvalidArgument(format!(
                "task-{} pair model cannot train tasks {active}",
                self.task
            )));
        }
        let cache = self.forward(example, pass)?;
        let p = sigmoid(cache.logit);
        let y = example.labels.get(self.task);
        let mut losses = [T::zero(); 3];
        losses[self.task.index()] = bce_loss(p, y);
        self.backward(&cache, scale * bce_logit_grad(p, y));
        Ok(losses)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = self.first.parameters().into_iter().collect();
        if let Some(enc) = &self.second {
            out.extend(enc.parameters());
        }
        if let Some(r) = &self.rank_table {
            out.push(r);
        }
        out.extend(self.hidden1.parameters());
        out.extend(self.hidden2.parameters());
        out.extend(self.output.parameters());
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = self.first.parameters_mut().into_iter().collect();
        if let Some(enc) = &mut self.second {
            out.extend(enc.parameters_mut());
        }
        if let Some(r) = &mut self.rank_table {
            out.push(r);
        }
        out.extend(self.hidden1.parameters_mut());
        out.extend(self.hidden2.parameters_mut());
        out.extend(self.output.parameters_mut());
        out
    }
}
