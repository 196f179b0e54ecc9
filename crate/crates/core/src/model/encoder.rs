use rand::Rng;

use super::ModelDims;
use crate::error::{Error, Result};
use crate::nn::{
    conv1d_wide, conv1d_wide_backward, embedding_lookup, embedding_lookup_backward, kmax_pool,
    kmax_pool_backward, Parameter, Real, Tensor,
};
use crate::text::{TokenizedText, Vocabulary, PAD_ID};

pub(crate) const INIT_BOUND: f64 = 0.05;

/// Convolutional sentence model: word + overlap-feature embeddings, a wide
/// convolution and max-pooling over time, producing a vector of length
/// `feature_maps` for any non-empty input.
#[derive(Clone, Debug)]
pub struct SentenceEncoder<T> {
    pub word: Parameter<T>,
    pub feat: Parameter<T>,
    pub filters: Parameter<T>,
    pub bias: Parameter<T>,
    width: usize,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    ids: Vec<usize>,
    overlaps: Vec<u8>,
    input: Tensor<T>,
    argmax: Vec<usize>,
    map_len: usize,
}

impl<T: Real> SentenceEncoder<T> {
    pub fn new(prefix: &str, dims: &ModelDims, rng: &mut impl Rng) -> Self {
        let d = dims.word_dim + dims.feat_dim;
        SentenceEncoder {
            word: Parameter::new(
                format!("{prefix}.word"),
                Tensor::uniform(&[dims.vocab_size, dims.word_dim], INIT_BOUND, rng),
            ),
            feat: Parameter::new(
                format!("{prefix}.feat"),
                Tensor::uniform(&[2, dims.feat_dim], INIT_BOUND, rng),
            ),
            filters: Parameter::new(
                format!("{prefix}.conv.w"),
                Tensor::uniform(&[dims.feature_maps, dims.filter_width * d], INIT_BOUND, rng),
            ),
            bias: Parameter::zeros(format!("{prefix}.conv.b"), &[dims.feature_maps]),
            width: dims.filter_width,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.filters.value.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.word.value.rows()
    }

    pub fn parameters(&self) -> [&Parameter<T>; 4] {
        [&self.word, &self.feat, &self.filters, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter<T>; 4] {
        [&mut self.word, &mut self.feat, &mut self.filters, &mut self.bias]
    }

    /// Encodes a vocabulary-mapped text. Missing overlap indicators are
    /// treated as zeros.
    pub fn encode(&self, text: &TokenizedText) -> Result<Vec<T>> {
        if text.ids.len() != text.tokens.len() {
            return Err(Error::InvalidArgument(
                "text has not been mapped to vocabulary ids".into(),
            ));
        }
        let zeros;
        let overlaps = if text.overlaps.is_empty() {
            zeros = vec![0; text.ids.len()];
            &zeros
        } else {
            &text.overlaps
        };
        Ok(self.forward(&text.ids, overlaps)?.0)
    }

    /// An empty sequence is encoded as the single padding token.
    pub fn forward(&self, ids: &[usize], overlaps: &[u8]) -> Result<(Vec<T>, EncoderCache<T>)> {
        let (ids, overlaps) = if ids.is_empty() {
            (vec![PAD_ID], vec![0])
        } else {
            (ids.to_vec(), overlaps.to_vec())
        };
        let input = embedding_lookup(&self.word.value, &self.feat.value, &ids, &overlaps)?;
        let map = conv1d_wide(&input, &self.filters.value, &self.bias.value, self.width)?;
        let (pooled, argmax) = kmax_pool(&map);
        let cache = EncoderCache {
            ids,
            overlaps,
            input,
            argmax,
            map_len: map.cols(),
        };
        Ok((pooled, cache))
    }

    pub fn backward(&mut self, cache: &EncoderCache<T>, dout: &[T]) {
        let dmap = kmax_pool_backward(dout, &cache.argmax, cache.map_len);
        let mut dinput = Tensor::zeros(cache.input.shape());
        conv1d_wide_backward(
            &cache.input,
            &self.filters.value,
            self.width,
            &dmap,
            &mut self.filters.grad,
            &mut self.bias.grad,
            &mut dinput,
        );
        embedding_lookup_backward(
            &dinput,
            &cache.ids,
            &cache.overlaps,
            &mut self.word.grad,
            &mut self.feat.grad,
        );
    }

    /// Copies pretrained vectors into the word table for every vocabulary
    /// word they cover. Returns the number of rows replaced.
    pub fn load_pretrained(&mut self, vectors: &super::WordVectors, vocab: &Vocabulary) -> Result<usize> {
        let dw = self.word.value.cols();
        if vectors.dim() != dw {
            return Err(Error::Shape(format!(
                "word vectors have dimension {}, model expects {dw}",
                vectors.dim()
            )));
        }
        let mut hits = 0;
        for (offset, word) in vocab.words().enumerate() {
            let id = offset + 2;
            if id >= self.word.value.rows() {
                break;
            }
            if let Some(v) = vectors.get(word) {
                for (dst, &src) in self.word.value.row_mut(id).iter_mut().zip(v) {
                    *dst = T::lit(f64::from(src));
                }
                hits += 1;
            }
        }
        Ok(hits)
    }
}
