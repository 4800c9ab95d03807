//! Weighted mean of soft Dice loss (foreground classes) and cross-entropy.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorio::Tensor;

/// Smoothing term of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub dice: T,
    pub ce: T,
    /// `weight * (dice + ce) / 2`
    pub total: T,
}

pub(crate) fn check_target(target: &Tensor<u8>, classes: usize, h: usize, w: usize) -> Result<()> {
    if target.dims() != [h, w] {
        return Err(Error::Shape(format!(
            "target dims {:?} do not match {h}×{w}",
            target.dims()
        )));
    }
    if let Some(&v) = target.data().iter().find(|&&v| v as usize >= classes) {
        return Err(Error::Shape(format!("target class {v} out of range for {classes} classes")));
    }
    Ok(())
}

fn prob_shape<T>(prob: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *prob.dims() {
        [c, h, w] if c >= 2 => Ok((c, h, w)),
        _ => Err(Error::Shape(format!("expected C×H×W probabilities, got {:?}", prob.dims()))),
    }
}

pub fn loss<T: Scalar>(prob: &Tensor<T>, target: &Tensor<u8>, weight: T) -> Result<LossParts<T>> {
    let (c, h, w) = prob_shape(prob)?;
    check_target(target, c, h, w)?;
    let hw = h * w;
    let p = prob.data();
    let t = target.data();
    let tiny = T::min_positive_value();

    let ce = t
        .iter()
        .enumerate()
        .map(|(j, &k)| -(p[k as usize * hw + j].max(tiny)).ln())
        .sum::<T>()
        / T::from_usize_lossy(hw);

    let eps = T::lit(DICE_SMOOTH);
    let mut dice = T::zero();
    for ci in 1..c {
        let pc = &p[ci * hw..(ci + 1) * hw];
        let (mut inter, mut sp, mut sy) = (T::zero(), T::zero(), T::zero());
        for (&pv, &k) in pc.iter().zip(t) {
            sp += pv;
            if k as usize == ci {
                inter += pv;
                sy += T::one();
            }
        }
        dice += T::one() - (T::lit(2.0) * inter + eps) / (sp + sy + eps);
    }
    dice /= T::from_usize_lossy(c - 1);

    Ok(LossParts {
        dice,
        ce,
        total: weight * T::lit(0.5) * (dice + ce),
    })
}

/// Loss value and its gradient with respect to the probability map.
///
/// The cross-entropy part is returned already folded through the softmax so
/// the caller can add it to the logit gradient. To keep a single output the
/// CE gradient `(p - y) / N` is expressed in probability space as `-y / (p N)`,
/// which the softmax Jacobian maps back to `(p - y) / N` exactly.
pub(crate) fn loss_and_prob_grad<T: Scalar>(
    prob: &Tensor<T>,
    target: &Tensor<u8>,
    weight: T,
) -> (T, Vec<T>) {
    let dims = prob.dims();
    let (c, hw) = (dims[0], dims[1] * dims[2]);
    let p = prob.data();
    let t = target.data();
    let n = T::from_usize_lossy(hw);
    let half_w = weight * T::lit(0.5);
    let eps = T::lit(DICE_SMOOTH);
    let tiny = T::min_positive_value();
    let mut grad = vec![T::zero(); c * hw];

    let mut ce = T::zero();
    for (j, &k) in t.iter().enumerate() {
        let pk = p[k as usize * hw + j].max(tiny);
        ce -= pk.ln();
        grad[k as usize * hw + j] = -half_w / (pk * n);
    }
    ce /= n;

    let fg = T::from_usize_lossy(c - 1);
    let mut dice = T::zero();
    for ci in 1..c {
        let pc = &p[ci * hw..(ci + 1) * hw];
        let (mut inter, mut sp, mut sy) = (T::zero(), T::zero(), T::zero());
        for (&pv, &k) in pc.iter().zip(t) {
            sp += pv;
            if k as usize == ci {
                inter += pv;
                sy += T::one();
            }
        }
        let num = T::lit(2.0) * inter + eps;
        let den = sp + sy + eps;
        dice += T::one() - num / den;
        // d(1 - num/den)/dp_j = -(2 y_j den - num) / den^2
        let scale = half_w / fg / (den * den);
        for (j, &k) in t.iter().enumerate() {
            let y = if k as usize == ci { T::lit(2.0) } else { T::zero() };
            grad[ci * hw + j] -= scale * (y * den - num);
        }
    }
    dice /= fg;
    (half_w * (dice + ce), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_near_zero() {
        let t = Tensor::new(vec![2, 2], vec![0u8, 1, 1, 0]).unwrap();
        let p = Tensor::new(vec![2, 2, 2], vec![1.0f64, 0., 0., 1., 0., 1., 1., 0.]).unwrap();
        let l = loss(&p, &t, 1.0).unwrap();
        assert_eq!(l.ce, 0.0);
        assert!(l.dice.abs() < 1e-9);
        assert!(l.total.abs() < 1e-9);
    }

    #[test]
    fn uniform_binary_all_foreground() {
        let n = 64 * 64;
        let t = Tensor::filled(vec![64, 64], 1u8).unwrap();
        let p = Tensor::filled(vec![2, 64, 64], 0.5f64).unwrap();
        let l = loss(&p, &t, 1.0).unwrap();
        let hw = n as f64;
        let dice = 1.0 - (hw + DICE_SMOOTH) / (1.5 * hw + DICE_SMOOTH);
        assert!((l.ce - 2f64.ln()).abs() < 1e-12);
        assert!((l.dice - dice).abs() < 1e-12);
        assert!((l.total - 0.5132).abs() < 1e-4);
    }

    #[test]
    fn zero_weight_and_bad_target() {
        let t = Tensor::filled(vec![2, 2], 1u8).unwrap();
        let p = Tensor::filled(vec![2, 2, 2], 0.5f64).unwrap();
        assert_eq!(loss(&p, &t, 0.0).unwrap().total, 0.0);
        let bad = Tensor::filled(vec![2, 2], 2u8).unwrap();
        assert!(loss(&p, &bad, 1.0).is_err());
    }

    #[test]
    fn loss_helpers_agree() {
        let t = Tensor::new(vec![2, 3], vec![0u8, 1, 2, 1, 0, 2]).unwrap();
        let raw: Vec<f64> = (0..18).map(|i| 0.1 + (i as f64 * 0.37).sin().abs()).collect();
        let mut p = raw.clone();
        for j in 0..6 {
            let s = raw[j] + raw[6 + j] + raw[12 + j];
            for c in 0..3 {
                p[c * 6 + j] = raw[c * 6 + j] / s;
            }
        }
        let p = Tensor::new(vec![3, 2, 3], p).unwrap();
        let a = loss(&p, &t, 0.7).unwrap();
        let (b, _) = loss_and_prob_grad(&p, &t, 0.7);
        assert!((a.total - b).abs() < 1e-14);
        assert!(a.dice >= 0.0 && a.dice <= 1.0 && a.ce >= 0.0);
    }
}
