use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{EncoderCache, SentenceEncoder, INIT_BOUND};
use super::layers::{Dense, HeadCache, TaskHead};
use super::{Example, ModelDims, Network, Pass, Slot, TaskScores, WordVectors, RANK_BINS};
use crate::error::Result;
use crate::nn::{bce_logit_grad, bce_loss, dropout_backward, Activation, Parameter, Real, Tensor};
use crate::text::Vocabulary;
use crate::{Task, TaskSet};

/// Joint network over `(new question, related question, comment)`.
///
/// `h_j = [enc_q(q_new); enc_q(q_rel); enc_c(c_rel); rank_embedding]`,
/// `h_s = tanh(W h_j + b)`, and each task head scores `h_s`.
#[derive(Clone, Debug)]
pub struct MtlModel<T> {
    dims: ModelDims,
    /// Encodes both the new and the related question.
    pub question_encoder: SentenceEncoder<T>,
    pub comment_encoder: SentenceEncoder<T>,
    /// `[RANK_BINS, feat_dim]`.
    pub rank_table: Parameter<T>,
    pub shared: Dense<T>,
    /// Heads for tasks A, B, C.
    pub heads: [TaskHead<T>; 3],
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct MtlCache<T> {
    encoders: [EncoderCache<T>; 3],
    rank_bin: usize,
    joint: Vec<T>,
    joint_dropped: Vec<T>,
    joint_mask: Option<Vec<T>>,
    shared: Vec<T>,
    shared_dropped: Vec<T>,
    shared_mask: Option<Vec<T>>,
    heads: [HeadCache<T>; 3],
}

impl<T> MtlCache<T> {
    pub fn probabilities(&self) -> [T; 3]
    where
        T: Copy,
    {
        [
            self.heads[0].probability,
            self.heads[1].probability,
            self.heads[2].probability,
        ]
    }
}

impl<T: Real> MtlModel<T> {
    /// Random initialization: uniform in (-0.05, 0.05), zero biases.
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let question_encoder = SentenceEncoder::new("q_enc", &dims, &mut rng);
        let comment_encoder = SentenceEncoder::new("c_enc", &dims, &mut rng);
        let rank_table = Parameter::new(
            "rank",
            Tensor::uniform(&[RANK_BINS, dims.feat_dim], INIT_BOUND, &mut rng),
        );
        let joint = Self::joint_dim_for(&dims);
        let shared = Dense::new("shared", joint, joint, Activation::Tanh, &mut rng);
        let heads = [
            TaskHead::new("head_a", joint, &mut rng),
            TaskHead::new("head_b", joint, &mut rng),
            TaskHead::new("head_c", joint, &mut rng),
        ];
        Ok(MtlModel {
            dims,
            question_encoder,
            comment_encoder,
            rank_table,
            shared,
            heads,
        })
    }

    fn joint_dim_for(dims: &ModelDims) -> usize {
        3 * dims.feature_maps + dims.feat_dim
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn joint_dim(&self) -> usize {
        Self::joint_dim_for(&self.dims)
    }

    /// The encoder responsible for a text slot. Both question slots resolve
    /// to the same encoder.
    pub fn encoder(&self, slot: Slot) -> &SentenceEncoder<T> {
        match slot {
            Slot::NewQuestion | Slot::RelatedQuestion => &self.question_encoder,
            Slot::Comment => &self.comment_encoder,
        }
    }

    pub fn encoder_mut(&mut self, slot: Slot) -> &mut SentenceEncoder<T> {
        match slot {
            Slot::NewQuestion | Slot::RelatedQuestion => &mut self.question_encoder,
            Slot::Comment => &mut self.comment_encoder,
        }
    }

    /// Initializes both word tables from pretrained vectors.
    pub fn load_pretrained(&mut self, vectors: &WordVectors, vocab: &Vocabulary) -> Result<usize> {
        self.question_encoder.load_pretrained(vectors, vocab)?;
        self.comment_encoder.load_pretrained(vectors, vocab)
    }

    pub fn forward(&self, ex: &Example, pass: &mut Pass<'_>) -> Result<MtlCache<T>> {
        let mut joint = Vec::with_capacity(self.joint_dim());
        let mut caches = Vec::with_capacity(3);
        for slot in [Slot::NewQuestion, Slot::RelatedQuestion, Slot::Comment] {
            let text = ex.text(slot);
            let (v, cache) = self.encoder(slot).forward(&text.ids, &text.overlaps)?;
            joint.extend_from_slice(&v);
            caches.push(cache);
        }
        joint.extend_from_slice(self.rank_table.value.row(ex.rank_bin));

        let (joint_dropped, joint_mask) = pass.input_dropout(&joint);
        let shared = self.shared.forward(&joint_dropped)?;
        let (shared_dropped, shared_mask) = pass.hidden_dropout(&shared);
        let heads = [
            self.heads[0].forward(&shared_dropped, pass)?,
            self.heads[1].forward(&shared_dropped, pass)?,
            self.heads[2].forward(&shared_dropped, pass)?,
        ];
        let encoders: [EncoderCache<T>; 3] = caches.try_into().expect("three encoder caches");
        Ok(MtlCache {
            encoders,
            rank_bin: ex.rank_bin,
            joint,
            joint_dropped,
            joint_mask,
            shared,
            shared_dropped,
            shared_mask,
            heads,
        })
    }

    /// `(p_A, p_B, p_C)` for one example.
    pub fn forward_mtl(&self, ex: &Example, pass: &mut Pass<'_>) -> Result<[T; 3]> {
        Ok(self.forward(ex, pass)?.probabilities())
    }

    /// Backpropagates per-task logit gradients (`None` = task inactive).
    pub fn backward(&mut self, cache: &MtlCache<T>, dlogits: [Option<T>; 3]) {
        let mut dshared_dropped = vec![T::zero(); cache.shared_dropped.len()];
        for (i, dl) in dlogits.iter().enumerate() {
            if let Some(dl) = *dl {
                let g = self.heads[i].backward(&cache.heads[i], dl);
                for (acc, v) in dshared_dropped.iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
        let dshared = dropout_backward(&dshared_dropped, cache.shared_mask.as_deref());
        let djoint_dropped = self
            .shared
            .backward(&cache.joint_dropped, &cache.shared, &dshared);
        let djoint = dropout_backward(&djoint_dropped, cache.joint_mask.as_deref());

        let m = self.dims.feature_maps;
        let slots = [Slot::NewQuestion, Slot::RelatedQuestion, Slot::Comment];
        for (k, slot) in slots.into_iter().enumerate() {
            let chunk = &djoint[k * m..(k + 1) * m];
            self.encoder_mut(slot).backward(&cache.encoders[k], chunk);
        }
        for (g, &d) in self
            .rank_table
            .grad
            .row_mut(cache.rank_bin)
            .iter_mut()
            .zip(&djoint[3 * m..])
        {
            *g += d;
        }
        debug_assert_eq!(cache.joint.len(), djoint.len());
    }
}

impl<T: Real> Network<T> for MtlModel<T> {
    fn tasks(&self) -> TaskSet {
        TaskSet::ALL
    }

    fn predict(&self, example: &Example) -> Result<TaskScores<T>> {
        let p = self.forward_mtl(example, &mut Pass::Inference)?;
        Ok(p.map(Some))
    }

    fn accumulate_gradients(
        &mut self,
        example: &Example,
        active: TaskSet,
        pass: &mut Pass<'_>,
        scale: T,
    ) -> Result<[T; 3]> {
        let cache = self.forward(example, pass)?;
        let p = cache.probabilities();
        let mut losses = [T::zero(); 3];
        let mut dlogits = [None; 3];
        for task in active.iter() {
            let i = task.index();
            let y = example.labels.get(task);
            losses[i] = bce_loss(p[i], y);
            dlogits[i] = Some(scale * bce_logit_grad(p[i], y));
        }
        self.backward(&cache, dlogits);
        Ok(losses)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = Vec::new();
        out.extend(self.question_encoder.parameters());
        out.extend(self.comment_encoder.parameters());
        out.push(&self.rank_table);
        out.extend(self.shared.parameters());
        for h in &self.heads {
            out.extend(h.parameters());
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = Vec::new();
        out.extend(self.question_encoder.parameters_mut());
        out.extend(self.comment_encoder.parameters_mut());
        out.push(&mut self.rank_table);
        out.extend(self.shared.parameters_mut());
        for h in &mut self.heads {
            out.extend(h.parameters_mut());
        }
        out
    }
}

impl<T: Real> MtlModel<T> {
    pub fn head(&self, task: Task) -> &TaskHead<T> {
        &self.heads[task.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{self, SyntheticConfig};
    use crate::model::{prepare_examples, vocabulary_for, DropoutRates};

    fn setup() -> (MtlModel<f64>, Vec<Example>) {
        let triples = synthetic::generate(&SyntheticConfig::tiny(3));
        let vocab = vocabulary_for(&triples, 100, 1);
        let examples = prepare_examples(&triples, &vocab, 100).unwrap();
        let dims = ModelDims {
            feature_maps: 8,
            word_dim: 6,
            ..ModelDims::new(vocab.len())
        };
        (MtlModel::new(dims, 11).unwrap(), examples)
    }

    #[test]
    fn probabilities_in_unit_interval_and_deterministic() {
        let (model, examples) = setup();
        for ex in &examples {
            let p = model.forward_mtl(ex, &mut Pass::Inference).unwrap();
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            assert_eq!(p, model.forward_mtl(ex, &mut Pass::Inference).unwrap());
        }
    }

    #[test]
    fn both_question_slots_share_one_encoder() {
        let (mut model, examples) = setup();
        assert!(std::ptr::eq(
            model.encoder(Slot::NewQuestion),
            model.encoder(Slot::RelatedQuestion)
        ));
        assert!(!std::ptr::eq(
            model.encoder(Slot::NewQuestion),
            model.encoder(Slot::Comment)
        ));
        let text = examples[0].text(Slot::RelatedQuestion).clone();
        let before = model.encoder(Slot::RelatedQuestion).encode(&text).unwrap();
        for w in model.encoder_mut(Slot::NewQuestion).filters.value.data_mut() {
            *w += 0.5;
        }
        let after = model.encoder(Slot::RelatedQuestion).encode(&text).unwrap();
        assert_ne!(before, after);
    }

    #[test]
    fn inactive_heads_get_no_gradient() {
        let (mut model, examples) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pass = Pass::Training {
            dropout: DropoutRates::default(),
            rng: &mut rng,
        };
        let active = TaskSet::from_tasks([Task::B, Task::C]).unwrap();
        let losses = model
            .accumulate_gradients(&examples[0], active, &mut pass, 1.0)
            .unwrap();
        assert_eq!(losses[0], 0.0);
        assert!(model.heads[0]
            .parameters()
            .iter()
            .all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
        assert!(model.heads[2]
            .parameters()
            .iter()
            .any(|p| p.grad.data().iter().any(|&g| g != 0.0)));
    }

    #[test]
    fn zeroed_rank_table_removes_rank_dependence() {
        let (mut model, examples) = setup();
        model.rank_table.value.fill(0.0);
        model.rank_table.frozen = true;
        let mut a = examples[0].clone();
        let mut b = a.clone();
        a.google_rank = 1;
        a.rank_bin = 0;
        b.google_rank = 40;
        b.rank_bin = 4;
        assert_eq!(
            model.forward_mtl(&a, &mut Pass::Inference).unwrap(),
            model.forward_mtl(&b, &mut Pass::Inference).unwrap()
        );
    }
}
