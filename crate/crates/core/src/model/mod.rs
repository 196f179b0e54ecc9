//! Network architectures.
//!
//! * [`MtlModel`]: the joint network. Both questions go through one shared
//!   question encoder, the comment through its own encoder; the three
//!   sentence vectors and a rank-bin embedding are concatenated, passed
//!   through a shared tanh layer and then through one [`TaskHead`] per task.
//! * [`PairModel`]: a single-task network over one text pair.

mod encoder;
mod layers;
mod mtl;
mod pair;
mod vectors;

use rand::RngCore;

pub use encoder::{EncoderCache, SentenceEncoder};
pub use layers::{Dense, HeadCache, TaskHead};
pub use mtl::MtlModel;
pub use pair::PairModel;
pub use vectors::WordVectors;

use crate::dataset::{binarize, BinaryLabels, Triple};
use crate::error::{Error, Result};
use crate::nn::{dropout, Parameter, Real};
use crate::text::{overlap_indicators, preprocess, TokenizedText, Vocabulary};
use crate::{Task, TaskSet};

/// Number of rank bins.
pub const RANK_BINS: usize = 5;

/// Lower bounds of the rank bins `[1,2) [2,5) [5,10) [10,25) [25,inf)`.
const RANK_BIN_STARTS: [u32; RANK_BINS] = [1, 2, 5, 10, 25];

/// Maps a search-engine rank (1-based) to one of five bins.
pub fn rank_bin(google_rank: u32) -> Result<usize> {
    if google_rank < 1 {
        return Err(Error::InvalidArgument(format!(
            "google rank must be >= 1, got {google_rank}"
        )));
    }
    Ok(RANK_BIN_STARTS
        .iter()
        .rposition(|&start| google_rank >= start)
        .unwrap_or(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub word_dim: usize,
    /// Size of the overlap-feature and rank embeddings.
    pub feat_dim: usize,
    /// Number of convolution filters, i.e. the sentence-vector length.
    pub feature_maps: usize,
    pub filter_width: usize,
}

impl ModelDims {
    pub fn new(vocab_size: usize) -> Self {
        ModelDims {
            vocab_size,
            word_dim: 50,
            feat_dim: 5,
            feature_maps: 100,
            filter_width: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("word_dim", self.word_dim),
            ("feat_dim", self.feat_dim),
            ("feature_maps", self.feature_maps),
            ("filter_width", self.filter_width),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutRates {
    /// Applied to the concatenated sentence vectors.
    pub input: f64,
    /// Applied after every hidden layer.
    pub hidden: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        DropoutRates {
            input: 0.4,
            hidden: 0.7,
        }
    }
}

/// Whether a forward pass is for inference or for training with dropout.
pub enum Pass<'a> {
    Inference,
    Training {
        dropout: DropoutRates,
        rng: &'a mut dyn RngCore,
    },
}

impl Pass<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Pass::Training { .. })
    }

    fn apply<T: Real>(&mut self, x: &[T], hidden: bool) -> (Vec<T>, Option<Vec<T>>) {
        match self {
            Pass::Inference => (x.to_vec(), None),
            Pass::Training { dropout: rates, rng } => {
                let rate = if hidden { rates.hidden } else { rates.input };
                dropout(x, rate, true, &mut **rng)
            }
        }
    }

    pub(crate) fn input_dropout<T: Real>(&mut self, x: &[T]) -> (Vec<T>, Option<Vec<T>>) {
        self.apply(x, false)
    }

    pub(crate) fn hidden_dropout<T: Real>(&mut self, x: &[T]) -> (Vec<T>, Option<Vec<T>>) {
        self.apply(x, true)
    }
}

/// Position of a text within a triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    NewQuestion,
    RelatedQuestion,
    Comment,
}

impl Slot {
    pub fn index(self) -> usize {
        match self {
            Slot::NewQuestion => 0,
            Slot::RelatedQuestion => 1,
            Slot::Comment => 2,
        }
    }

    /// The two texts a single-task model compares.
    pub fn pair_for(task: Task) -> (Slot, Slot) {
        match task {
            Task::A => (Slot::RelatedQuestion, Slot::Comment),
            Task::B => (Slot::NewQuestion, Slot::RelatedQuestion),
            Task::C => (Slot::NewQuestion, Slot::Comment),
        }
    }
}

/// A triple ready for the networks: tokenized, id-mapped, with overlap
/// indicators and the rank bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub group: String,
    pub q_rel_key: String,
    pub google_rank: u32,
    pub rank_bin: usize,
    pub labels: BinaryLabels,
    /// New question, related question, comment. Each text's overlaps are
    /// computed against the union of the other two.
    pub texts: [TokenizedText; 3],
    /// Per task, the overlaps of its two texts against each other only.
    pub pair_overlaps: [[Vec<u8>; 2]; 3],
}

impl Example {
    pub fn text(&self, slot: Slot) -> &TokenizedText {
        &self.texts[slot.index()]
    }

    pub fn group_key(&self, task: Task) -> &str {
        match task {
            Task::A => &self.q_rel_key,
            Task::B | Task::C => &self.group,
        }
    }
}

/// Tokenizes the three texts of a triple and attaches overlaps and rank bin.
pub fn compute_triple_features(triple: &Triple, vocab: &Vocabulary, max_len: usize) -> Result<Example> {
    let mut texts = tokenize_triple(triple, max_len);
    for t in texts.iter_mut() {
        vocab.encode(t);
    }
    let union = [
        overlap_indicators(&texts[0], [&texts[1], &texts[2]]),
        overlap_indicators(&texts[1], [&texts[0], &texts[2]]),
        overlap_indicators(&texts[2], [&texts[0], &texts[1]]),
    ];
    let pair_overlaps = Task::ALL.map(|task| {
        let (a, b) = Slot::pair_for(task);
        let (ta, tb) = (&texts[a.index()], &texts[b.index()]);
        [overlap_indicators(ta, [tb]), overlap_indicators(tb, [ta])]
    });
    for (t, o) in texts.iter_mut().zip(union) {
        t.overlaps = o;
    }
    Ok(Example {
        id: triple.id.clone(),
        group: triple.group.clone(),
        q_rel_key: triple.q_rel_key(),
        google_rank: triple.google_rank,
        rank_bin: rank_bin(triple.google_rank)?,
        labels: binarize(triple),
        texts,
        pair_overlaps,
    })
}

/// Preprocesses the new question, related question and comment.
pub fn tokenize_triple(triple: &Triple, max_len: usize) -> [TokenizedText; 3] {
    [
        preprocess(triple.q_new.subject.as_deref(), &triple.q_new.body, max_len),
        preprocess(triple.q_rel.subject.as_deref(), &triple.q_rel.body, max_len),
        preprocess(None, &triple.c_rel, max_len),
    ]
}

pub fn prepare_examples(triples: &[Triple], vocab: &Vocabulary, max_len: usize) -> Result<Vec<Example>> {
    triples
        .iter()
        .map(|t| compute_triple_features(t, vocab, max_len))
        .collect()
}

/// Builds a vocabulary over every text of the given triples.
pub fn vocabulary_for(triples: &[Triple], max_len: usize, min_count: usize) -> Vocabulary {
    let texts: Vec<TokenizedText> = triples
        .iter()
        .flat_map(|t| tokenize_triple(t, max_len))
        .collect();
    crate::text::build_vocabulary(&texts, min_count)
}

/// Scores per task; `None` for tasks a network does not model.
pub type TaskScores<T> = [Option<T>; 3];

/// A trainable scorer over [`Example`]s.
pub trait Network<T: Real>: Clone {
    /// Tasks this network produces scores for.
    fn tasks(&self) -> TaskSet;

    fn predict(&self, example: &Example) -> Result<TaskScores<T>>;

    /// Runs forward and backward for one example and adds `scale` times the
    /// gradient of the summed loss over `active` to the parameter gradients.
    /// Returns the per-task losses (zero for tasks not in `active`).
    fn accumulate_gradients(
        &mut self,
        example: &Example,
        active: TaskSet,
        pass: &mut Pass<'_>,
        scale: T,
    ) -> Result<[T; 3]>;

    /// All parameters in a fixed order.
    fn parameters(&self) -> Vec<&Parameter<T>>;

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>>;

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }
}
