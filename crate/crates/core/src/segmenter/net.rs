use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{check_target, loss_and_prob_grad};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorio::Tensor;

pub const ENC1_CHANNELS: usize = 8;
pub const ENC2_CHANNELS: usize = 16;
const K: usize = 3;
const KK: usize = K * K;

/// Offsets of each parameter block inside the flat weight vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    classes: usize,
}

impl Layout {
    const W1: usize = 0;
    const B1: usize = Self::W1 + ENC1_CHANNELS * KK;
    const W2: usize = Self::B1 + ENC1_CHANNELS;
    const B2: usize = Self::W2 + ENC2_CHANNELS * ENC1_CHANNELS * KK;
    const WH: usize = Self::B2 + ENC2_CHANNELS;

    fn bh(self) -> usize {
        Self::WH + self.classes * ENC2_CHANNELS
    }

    fn total(self) -> usize {
        self.bh() + self.classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmenter<T> {
    num_classes: usize,
    params: Vec<T>,
}

/// Output of a forward pass plus the activations backward needs.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    /// `C×H×W` per-pixel softmax.
    pub prob: Tensor<T>,
    /// Post-ReLU output of the second convolution, `16×H×W`.
    pub encoder_map: Tensor<T>,
    act1: Vec<T>,
}

impl<T: Scalar> Forward<T> {
    /// ReLU on/off state of every hidden unit, first layer then second.
    pub fn active_units(&self) -> Vec<bool> {
        self.act1
            .iter()
            .chain(self.encoder_map.data())
            .map(|&v| v > T::zero())
            .collect()
    }
}

impl<T: Scalar> Segmenter<T> {
    pub fn param_count(num_classes: usize) -> usize {
        Layout {
            classes: num_classes,
        }
        .total()
    }

    pub fn zeros(num_classes: usize) -> Result<Self> {
        Self::from_params(num_classes, vec![T::zero(); Self::param_count(num_classes)])
    }

    /// He-style uniform initialisation, zero biases.
    pub fn init(num_classes: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(num_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = m.layout();
        let blocks = [
            (Layout::W1, Layout::B1, KK),
            (Layout::W2, Layout::B2, ENC1_CHANNELS * KK),
            (Layout::WH, layout.bh(), ENC2_CHANNELS),
        ];
        for (start, end, fan_in) in blocks {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut m.params[start..end] {
                *p = T::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(m)
    }

    pub fn from_params(num_classes: usize, params: Vec<T>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Model(format!("num_classes must be >= 2, got {num_classes}")));
        }
        let expected = Self::param_count(num_classes);
        if params.len() != expected {
            return Err(Error::Model(format!(
                "expected {expected} parameters for {num_classes} classes, got {}",
                params.len()
            )));
        }
        Ok(Self {
            num_classes,
            params,
        })
    }

    fn layout(&self) -> Layout {
        Layout {
            classes: self.num_classes,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Segmenter<U> {
        Segmenter {
            num_classes: self.num_classes,
            params: self.params.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn conv1_weights_mut(&mut self) -> &mut [T] {
        &mut self.params[Layout::W1..Layout::B1]
    }

    pub fn conv1_bias_mut(&mut self) -> &mut [T] {
        &mut self.params[Layout::B1..Layout::W2]
    }

    pub fn conv2_weights_mut(&mut self) -> &mut [T] {
        &mut self.params[Layout::W2..Layout::B2]
    }

    pub fn conv2_bias_mut(&mut self) -> &mut [T] {
        &mut self.params[Layout::B2..Layout::WH]
    }

    pub fn head_weights_mut(&mut self) -> &mut [T] {
        let bh = self.layout().bh();
        &mut self.params[Layout::WH..bh]
    }

    pub fn head_bias_mut(&mut self) -> &mut [T] {
        let bh = self.layout().bh();
        &mut self.params[bh..]
    }

    fn check_input(&self, image: &Tensor<T>) -> Result<(usize, usize)> {
        if image.rank() != 2 {
            return Err(Error::Shape(format!("expected an H×W image, got {:?}", image.dims())));
        }
        let (h, w) = (image.dims()[0], image.dims()[1]);
        if h < 3 || w < 3 {
            return Err(Error::Shape(format!("image must be at least 3×3, got {h}×{w}")));
        }
        if let Some(i) = self.params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "segmenter weights".into(),
                index: i,
            });
        }
        Ok((h, w))
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<Forward<T>> {
        let (h, w) = self.check_input(image)?;
        let hw = h * w;
        let p = &self.params;
        let c = self.num_classes;

        let mut act1 = vec![T::zero(); ENC1_CHANNELS * hw];
        conv3x3(
            image.data(),
            1,
            h,
            w,
            &p[Layout::W1..Layout::B1],
            &p[Layout::B1..Layout::W2],
            &mut act1,
        );
        relu(&mut act1);

        let mut act2 = vec![T::zero(); ENC2_CHANNELS * hw];
        conv3x3(
            &act1,
            ENC1_CHANNELS,
            h,
            w,
            &p[Layout::W2..Layout::B2],
            &p[Layout::B2..Layout::WH],
            &mut act2,
        );
        relu(&mut act2);

        let bh = self.layout().bh();
        let head_w = &p[Layout::WH..bh];
        let head_b = &p[bh..];
        let mut logits = vec![T::zero(); c * hw];
        for (ci, out) in logits.chunks_exact_mut(hw).enumerate() {
            out.fill(head_b[ci]);
            for k in 0..ENC2_CHANNELS {
                let wv = head_w[ci * ENC2_CHANNELS + k];
                for (o, &a) in out.iter_mut().zip(&act2[k * hw..(k + 1) * hw]) {
                    *o += wv * a;
                }
            }
        }
        softmax_channels(&mut logits, c, hw);

        Ok(Forward {
            prob: Tensor::new(vec![c, h, w], logits)?,
            encoder_map: Tensor::new(vec![ENC2_CHANNELS, h, w], act2)?,
            act1,
        })
    }

    /// Channel-wise global average of the encoder map.
    pub fn features(&self, image: &Tensor<T>) -> Result<Vec<T>> {
        let fwd = self.forward(image)?;
        Ok(global_average(&fwd.encoder_map))
    }
}

/// Channel-wise mean of a `C×H×W` map.
pub fn global_average<T: Scalar>(map: &Tensor<T>) -> Vec<T> {
    let (h, w) = map.plane();
    let hw = h * w;
    let n = T::from_usize_lossy(hw);
    map.data()
        .chunks_exact(hw)
        .map(|ch| ch.iter().copied().sum::<T>() / n)
        .collect()
}

fn relu<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

fn softmax_channels<T: Scalar>(z: &mut [T], c: usize, hw: usize) {
    for j in 0..hw {
        let mut m = z[j];
        for ci in 1..c {
            m = m.max(z[ci * hw + j]);
        }
        let mut s = T::zero();
        for ci in 0..c {
            let e = (z[ci * hw + j] - m).exp();
            z[ci * hw + j] = e;
            s += e;
        }
        for ci in 0..c {
            z[ci * hw + j] /= s;
        }
    }
}

/// Valid output range along one axis for kernel offset `k` (0..3, centre 1)
/// with one pixel of zero padding: output index `y` reads input `y + k - 1`.
#[inline]
fn span(k: usize, n: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { n - 1 } else { n };
    (lo, hi)
}

/// 3×3 same-size convolution (cross-correlation) with zero padding.
fn conv3x3<T: Scalar>(
    input: &[T],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let hw = h * w;
    for (o, out_map) in out.chunks_exact_mut(hw).enumerate() {
        out_map.fill(bias[o]);
        for i in 0..in_ch {
            let in_map = &input[i * hw..(i + 1) * hw];
            for ky in 0..K {
                let (y0, y1) = span(ky, h);
                for kx in 0..K {
                    let (x0, x1) = span(kx, w);
                    let wv = weights[(o * in_ch + i) * KK + ky * K + kx];
                    for y in y0..y1 {
                        let iy = y + ky - 1;
                        let dst = &mut out_map[y * w + x0..y * w + x1];
                        let src = &in_map[iy * w + x0 + kx - 1..iy * w + x1 + kx - 1];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a 3×3 convolution. `grad_in` is skipped when `None`.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<T: Scalar>(
    input: &[T],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    mut grad_in: Option<&mut [T]>,
) {
    let hw = h * w;
    for (o, g_map) in grad_out.chunks_exact(hw).enumerate() {
        grad_b[o] += g_map.iter().copied().sum::<T>();
        for i in 0..in_ch {
            let in_map = &input[i * hw..(i + 1) * hw];
            for ky in 0..K {
                let (y0, y1) = span(ky, h);
                for kx in 0..K {
                    let (x0, x1) = span(kx, w);
                    let widx = (o * in_ch + i) * KK + ky * K + kx;
                    let wv = weights[widx];
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let iy = y + ky - 1;
                        let g = &g_map[y * w + x0..y * w + x1];
                        let src_range = iy * w + x0 + kx - 1..iy * w + x1 + kx - 1;
                        for (&gv, &s) in g.iter().zip(&in_map[src_range.clone()]) {
                            acc += gv * s;
                        }
                        if let Some(gi) = grad_in.as_deref_mut() {
                            let dst = &mut gi[i * hw..(i + 1) * hw][src_range];
                            for (d, &gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                    grad_w[widx] += acc;
                }
            }
        }
    }
}

/// Loss and exact gradient of the weighted Dice+CE loss w.r.t. every parameter.
pub fn backward<T: Scalar>(
    model: &Segmenter<T>,
    image: &Tensor<T>,
    target: &Tensor<u8>,
    weight: T,
) -> Result<(T, Vec<T>)> {
    let fwd = model.forward(image)?;
    let (h, w) = (image.dims()[0], image.dims()[1]);
    check_target(target, model.num_classes, h, w)?;
    let hw = h * w;
    let c = model.num_classes;
    let layout = model.layout();
    let mut grad = vec![T::zero(); layout.total()];
    if weight == T::zero() {
        return Ok((T::zero(), grad));
    }

    let (loss, dprob) = loss_and_prob_grad(&fwd.prob, target, weight);
    let prob = fwd.prob.data();

    // softmax Jacobian: dz_k = p_k (g_k - sum_c g_c p_c)
    let mut dz = vec![T::zero(); c * hw];
    for j in 0..hw {
        let mut dot = T::zero();
        for ci in 0..c {
            dot += dprob[ci * hw + j] * prob[ci * hw + j];
        }
        for ci in 0..c {
            dz[ci * hw + j] = prob[ci * hw + j] * (dprob[ci * hw + j] - dot);
        }
    }

    let act2 = fwd.encoder_map.data();
    let bh = layout.bh();
    let head_w = &model.params[Layout::WH..bh];
    let mut dact2 = vec![T::zero(); ENC2_CHANNELS * hw];
    {
        let (g_head_w, g_head_b) = grad[Layout::WH..].split_at_mut(bh - Layout::WH);
        for ci in 0..c {
            let dzc = &dz[ci * hw..(ci + 1) * hw];
            g_head_b[ci] = dzc.iter().copied().sum();
            for k in 0..ENC2_CHANNELS {
                let a = &act2[k * hw..(k + 1) * hw];
                g_head_w[ci * ENC2_CHANNELS + k] = dzc.iter().zip(a).map(|(&d, &v)| d * v).sum();
                let wv = head_w[ci * ENC2_CHANNELS + k];
                for (g, &d) in dact2[k * hw..(k + 1) * hw].iter_mut().zip(dzc) {
                    *g += wv * d;
                }
            }
        }
    }
    for (g, &a) in dact2.iter_mut().zip(act2) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }

    let mut dact1 = vec![T::zero(); ENC1_CHANNELS * hw];
    {
        let (g_w2, rest) = grad[Layout::W2..].split_at_mut(Layout::B2 - Layout::W2);
        conv3x3_backward(
            &fwd.act1,
            ENC1_CHANNELS,
            h,
            w,
            &model.params[Layout::W2..Layout::B2],
            &dact2,
            g_w2,
            &mut rest[..ENC2_CHANNELS],
            Some(&mut dact1),
        );
    }
    for (g, &a) in dact1.iter_mut().zip(&fwd.act1) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
    {
        let (g_w1, rest) = grad[Layout::W1..].split_at_mut(Layout::B1 - Layout::W1);
        conv3x3_backward(
            image.data(),
            1,
            h,
            w,
            &model.params[Layout::W1..Layout::B1],
            &dact1,
            g_w1,
            &mut rest[..ENC1_CHANNELS],
            None,
        );
    }
    Ok((loss, grad))
}
