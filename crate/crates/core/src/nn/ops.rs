//! Forward and backward kernels.
//!
//! A sentence matrix is stored token-major: shape `[n, d]`, one row per token
//! (the transpose of the usual `d x n` picture). Feature maps produced by the
//! convolution are `[m, L]`, one row per filter.

use rand::Rng;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Identity => T::one(),
        }
    }
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Builds the `[n, d_w + d_feat]` sentence matrix: row `j` is the word vector
/// of `ids[j]` followed by the feature vector of `overlaps[j]`.
pub fn embedding_lookup<T: Real>(
    word_table: &Tensor<T>,
    feat_table: &Tensor<T>,
    ids: &[usize],
    overlaps: &[u8],
) -> Result<Tensor<T>> {
    if ids.len() != overlaps.len() {
        return Err(Error::Shape(format!(
            "{} ids but {} overlap indicators",
            ids.len(),
            overlaps.len()
        )));
    }
    let (vocab, dw) = (word_table.rows(), word_table.cols());
    let (nfeat, df) = (feat_table.rows(), feat_table.cols());
    let d = dw + df;
    let mut out = Vec::with_capacity(ids.len() * d);
    for (&id, &o) in ids.iter().zip(overlaps) {
        if id >= vocab {
            return Err(Error::IdOutOfRange { id, size: vocab });
        }
        let o = usize::from(o);
        if o >= nfeat {
            return Err(Error::IdOutOfRange { id: o, size: nfeat });
        }
        out.extend_from_slice(word_table.row(id));
        out.extend_from_slice(feat_table.row(o));
    }
    Tensor::from_vec(&[ids.len(), d], out)
}

/// Scatters the sentence-matrix gradient back into both tables.
pub fn embedding_lookup_backward<T: Real>(
    dout: &Tensor<T>,
    ids: &[usize],
    overlaps: &[u8],
    dword: &mut Tensor<T>,
    dfeat: &mut Tensor<T>,
) {
    let dw = dword.cols();
    for (j, (&id, &o)) in ids.iter().zip(overlaps).enumerate() {
        let row = dout.row(j);
        for (g, &r) in dword.row_mut(id).iter_mut().zip(&row[..dw]) {
            *g += r;
        }
        for (g, &r) in dfeat.row_mut(usize::from(o)).iter_mut().zip(&row[dw..]) {
            *g += r;
        }
    }
}

/// Dot product with eight independent partial sums, which lets the
/// compiler vectorize the loop.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in ca.by_ref().zip(cb.by_ref()) {
        for k in 0..8 {
            lanes[k] += xa[k] * xb[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

fn padded<T: Real>(input: &Tensor<T>, width: usize) -> Vec<T> {
    let d = input.cols();
    let pad = (width - 1) * d;
    let mut buf = vec![T::zero(); input.len() + 2 * pad];
    buf[pad..pad + input.len()].copy_from_slice(input.data());
    buf
}

/// Wide 1-d convolution over the token axis.
///
/// `filters` is `[m, width * d]`; entry `k * d + r` weighs row `r` of token
/// `t + k - (width - 1)`, tokens outside `0..n` being zero. The output is
/// `[m, n + width - 1]`.
pub fn conv1d_wide<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
    width: usize,
) -> Result<Tensor<T>> {
    let (n, d) = (input.rows(), input.cols());
    let m = filters.rows();
    if n == 0 || width == 0 {
        return Err(Error::Shape("convolution needs n >= 1 and width >= 1".into()));
    }
    if filters.cols() != width * d || bias.len() != m {
        return Err(Error::Shape(format!(
            "filters {:?} / bias {:?} incompatible with input {:?} and width {width}",
            filters.shape(),
            bias.shape(),
            input.shape()
        )));
    }
    let len = n + width - 1;
    let window = width * d;
    let buf = padded(input, width);
    let mut out = Vec::with_capacity(m * len);
    for i in 0..m {
        let f = filters.row(i);
        let b = bias.data()[i];
        for t in 0..len {
            out.push(b + dot(f, &buf[t * d..t * d + window]));
        }
    }
    Tensor::from_vec(&[m, len], out)
}

/// Accumulates filter, bias and input gradients of [`conv1d_wide`].
/// Zero entries of `dout` are skipped, which makes the pass cheap after
/// max-pooling.
pub fn conv1d_wide_backward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    width: usize,
    dout: &Tensor<T>,
    dfilters: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
    dinput: &mut Tensor<T>,
) {
    let d = input.cols();
    let window = width * d;
    let pad = (width - 1) * d;
    let buf = padded(input, width);
    let mut dbuf = vec![T::zero(); buf.len()];
    for i in 0..filters.rows() {
        let f = filters.row(i);
        for (t, &g) in dout.row(i).iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            dbias.data_mut()[i] += g;
            let x = &buf[t * d..t * d + window];
            for (df, &xv) in dfilters.row_mut(i).iter_mut().zip(x) {
                *df += g * xv;
            }
            for (dx, &fv) in dbuf[t * d..t * d + window].iter_mut().zip(f) {
                *dx += g * fv;
            }
        }
    }
    for (dst, &src) in dinput
        .data_mut()
        .iter_mut()
        .zip(&dbuf[pad..pad + input.len()])
    {
        *dst += src;
    }
}

/// Max over each row (k-max pooling with k = 1). Returns the pooled values
/// and, per row, the first column attaining the maximum.
pub fn kmax_pool<T: Real>(map: &Tensor<T>) -> (Vec<T>, Vec<usize>) {
    let mut values = Vec::with_capacity(map.rows());
    let mut argmax = Vec::with_capacity(map.rows());
    for i in 0..map.rows() {
        let row = map.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        values.push(row[best]);
        argmax.push(best);
    }
    (values, argmax)
}

pub fn kmax_pool_backward<T: Real>(dout: &[T], argmax: &[usize], cols: usize) -> Tensor<T> {
    let mut dmap = Tensor::zeros(&[argmax.len(), cols]);
    for (i, (&g, &j)) in dout.iter().zip(argmax).enumerate() {
        dmap.row_mut(i)[j] = g;
    }
    dmap
}

/// `activation(W x + b)` with `W` shaped `[out, in]`.
pub fn dense<T: Real>(
    x: &[T],
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    activation: Activation,
) -> Result<Vec<T>> {
    if weight.cols() != x.len() || bias.len() != weight.rows() {
        return Err(Error::Shape(format!(
            "dense: weight {:?}, bias {:?}, input length {}",
            weight.shape(),
            bias.shape(),
            x.len()
        )));
    }
    Ok((0..weight.rows())
        .map(|i| {
            activation.apply(bias.data()[i] + dot(weight.row(i), x))
        })
        .collect())
}

/// Backward of [`dense`] given its input `x` and output `y`. Accumulates
/// into `dweight`/`dbias` and returns the input gradient.
pub fn dense_backward<T: Real>(
    x: &[T],
    y: &[T],
    weight: &Tensor<T>,
    activation: Activation,
    dy: &[T],
    dweight: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
) -> Vec<T> {
    let mut dx = vec![T::zero(); x.len()];
    for i in 0..weight.rows() {
        let dz = dy[i] * activation.derivative_from_output(y[i]);
        if dz == T::zero() {
            continue;
        }
        dbias.data_mut()[i] += dz;
        for (dw, &xv) in dweight.row_mut(i).iter_mut().zip(x) {
            *dw += dz * xv;
        }
        for (d, &w) in dx.iter_mut().zip(weight.row(i)) {
            *d += dz * w;
        }
    }
    dx
}

/// Inverted dropout. Returns the output and, when units were dropped, the
/// per-unit multiplier (0 or `1 / (1 - rate)`) needed for the backward pass.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &[T],
    rate: f64,
    training: bool,
    rng: &mut R,
) -> (Vec<T>, Option<Vec<T>>) {
    if !training || rate <= 0.0 {
        return (x.to_vec(), None);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = x
        .iter()
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let out = x.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    (out, Some(mask))
}

pub fn dropout_backward<T: Real>(dy: &[T], mask: Option<&[T]>) -> Vec<T> {
    match mask {
        Some(mask) => dy.iter().zip(mask).map(|(&g, &m)| g * m).collect(),
        None => dy.to_vec(),
    }
}

/// Binary cross-entropy of a probability against a 0/1 label.
pub fn bce_loss<T: Real>(p: T, y: u8) -> T {
    let eps = T::lit(BCE_EPS);
    let p = p.max(eps).min(T::one() - eps);
    if y == 1 {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// Gradient of [`bce_loss`] of `sigmoid(z)` with respect to the logit `z`.
/// Taken from the unclamped loss so that saturated outputs still learn.
pub fn bce_logit_grad<T: Real>(p: T, y: u8) -> T {
    p - if y == 1 { T::one() } else { T::zero() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn embedding_concatenates_word_and_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let word = Tensor::<f64>::uniform(&[10, 50], 0.1, &mut rng);
        let feat = Tensor::<f64>::uniform(&[2, 5], 0.1, &mut rng);
        let out = embedding_lookup(&word, &feat, &[3], &[0]).unwrap();
        assert_eq!(out.shape(), &[1, 55]);
        assert_eq!(&out.row(0)[..50], word.row(3));
        assert_eq!(&out.row(0)[50..], feat.row(0));

        let two = embedding_lookup(&word, &feat, &[4, 4], &[1, 1]).unwrap();
        assert_eq!(two.row(0), two.row(1));

        assert!(matches!(
            embedding_lookup(&word, &feat, &[10], &[0]),
            Err(Error::IdOutOfRange { id: 10, size: 10 })
        ));
    }

    #[test]
    fn embedding_backward_scatters() {
        let word = Tensor::<f64>::zeros(&[4, 2]);
        let feat = Tensor::<f64>::zeros(&[2, 1]);
        let dout = t(&[3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let mut dword = Tensor::zeros(word.shape());
        let mut dfeat = Tensor::zeros(feat.shape());
        embedding_lookup_backward(&dout, &[2, 3, 2], &[1, 0, 1], &mut dword, &mut dfeat);
        assert_eq!(dword.row(2), &[8.0, 10.0]);
        assert_eq!(dword.row(3), &[4.0, 5.0]);
        assert_eq!(dfeat.data(), &[6.0, 12.0]);
    }

    #[test]
    fn conv_of_zero_input_is_bias() {
        let input = Tensor::<f64>::zeros(&[3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let filters = Tensor::uniform(&[2, 5 * 4], 1.0, &mut rng);
        let bias = t(&[2], &[0.5, -1.5]);
        let out = conv1d_wide(&input, &filters, &bias, 5).unwrap();
        assert_eq!(out.shape(), &[2, 7]);
        assert!(out.row(0).iter().all(|&v| v == 0.5));
        assert!(out.row(1).iter().all(|&v| v == -1.5));
    }

    #[test]
    fn conv_single_token_width_five() {
        let input = t(&[1, 1], &[2.0]);
        let filters = t(&[1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let out = conv1d_wide(&input, &filters, &t(&[1], &[0.0]), 5).unwrap();
        // the single token slides from the last filter tap to the first
        assert_eq!(out.data(), &[10.0, 8.0, 6.0, 4.0, 2.0]);
    }

    #[test]
    fn kmax_examples() {
        let map = t(&[3, 3], &[0.2, -0.5, 0.9, 1.0, 1.0, 1.0, -3.0, -1.0, -2.0]);
        let (v, idx) = kmax_pool(&map);
        assert_eq!(v, [0.9, 1.0, -1.0]);
        assert_eq!(idx, [2, 0, 1]);
        let tie = t(&[1, 2], &[1.0, 1.0]);
        let (_, idx) = kmax_pool(&tie);
        let g = kmax_pool_backward(&[1.0], &idx, 2);
        assert_eq!(g.data(), &[1.0, 0.0]);
    }

    #[test]
    fn dense_identity_and_sigmoid() {
        let w = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let b = Tensor::zeros(&[3]);
        let x = [0.3, -2.0, 7.0];
        assert_eq!(dense(&x, &w, &b, Activation::Identity).unwrap(), x);
        let zero = dense(&[0.0], &t(&[1, 1], &[1.0]), &t(&[1], &[0.0]), Activation::Sigmoid).unwrap();
        assert_eq!(zero, [0.5]);
        assert!(dense(&[1.0, 2.0], &w, &b, Activation::Tanh).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = [1.0f64, 2.0, 3.0];
        assert_eq!(dropout(&x, 0.0, true, &mut rng).0, x);
        assert_eq!(dropout(&x, 0.9, false, &mut rng).0, x);
    }

    #[test]
    fn dropout_rate_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = vec![1.0f32; 100_000];
        let (out, mask) = dropout(&x, 0.5, true, &mut rng);
        let zeros = out.iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.5).abs() < 0.01, "zero fraction {zeros}");
        assert!(out.iter().all(|&v| v == 0.0 || v == 2.0));
        let g = dropout_backward(&[1.0; 3], mask.as_deref().map(|m| &m[..3]));
        assert!(g.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn bce_values() {
        assert!(bce_loss(1.0f64, 1) <= 1.2e-7);
        assert!((bce_loss(0.5f64, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        // -ln(0.8) = 0.22314355131420976
        assert!((bce_loss(0.2f64, 0) - 0.223_143_551_314_209_76).abs() < 1e-12);
        assert!(bce_loss(0.0f64, 1).is_finite());
        assert!(bce_loss(1.0f32, 0).is_finite());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((sigmoid(0.3f64) - 1.0 / (1.0 + (-0.3f64).exp())).abs() < 1e-15);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bce_is_nonnegative(p in 0.0f64..=1.0, y in 0u8..=1) {
            let l = bce_loss(p, y);
            prop_assert!(l >= 0.0 && l.is_finite());
            if (p - y as f64).abs() > 1e-3 {
                prop_assert!(l > 0.0);
            }
        }

        #[test]
        fn dot_matches_sequential_sum(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 0..70)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let plain: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            prop_assert!((dot(&a, &b) - plain).abs() <= 1e-9 * (1.0 + plain.abs()));
        }
    }
}
