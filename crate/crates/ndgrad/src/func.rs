//! Plain (non-recording) versions of the elementwise and normalization ops.
//! The tape ops share these kernels.

use crate::error::{NdError, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-12;

/// Inputs with an L2 norm at or below this pass through `l2_normalize` unchanged.
pub const NORM_EPS: f64 = 1e-12;

pub fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    if !(slope > 0.0 && slope < 1.0) {
        return Err(NdError::Invalid(format!("leaky relu slope {slope} not in (0,1)")));
    }
    Ok(x.map(|v| leaky_relu_scalar(v, slope)))
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Max-subtracted softmax, written into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Softmax over every element of `logits`, keeping its shape.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.numel() == 0 {
        return Err(NdError::Invalid("softmax of an empty input".into()));
    }
    let mut out = vec![0.0; logits.numel()];
    softmax_into(logits.data(), &mut out);
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit L2 norm; vectors with norm `<= NORM_EPS` are returned as is.
pub fn l2_normalize(v: &Tensor) -> Tensor {
    let n = l2_norm(v.data());
    if n <= NORM_EPS {
        v.clone()
    } else {
        v.map(|x| x / n)
    }
}

pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}

/// Binary cross-entropy of one prediction against a `{0,1}` target.
pub fn bce_loss(p_hat: f64, y: f64) -> f64 {
    bce_term(p_hat, y)
}

/// Mean binary cross-entropy over a batch.
pub fn bce_mean(p_hat: &[f64], y: &[f64]) -> Result<f64> {
    if p_hat.len() != y.len() || p_hat.is_empty() {
        return Err(NdError::Invalid(format!(
            "bce over {} predictions and {} targets",
            p_hat.len(),
            y.len()
        )));
    }
    let total: f64 = p_hat.iter().zip(y).map(|(&p, &t)| bce_term(p, t)).sum();
    Ok(total / p_hat.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_values() {
        assert_eq!(leaky_relu_scalar(3.0, 0.2), 3.0);
        assert!((leaky_relu_scalar(-1.0, 0.2) + 0.2).abs() < 1e-15);
        assert!(leaky_relu(&Tensor::scalar(1.0).unwrap(), 1.5).is_err());
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&Tensor::vector(vec![2.5; 3]).unwrap()).unwrap();
        for &p in s.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&Tensor::vector(vec![0.0, 3f64.ln()]).unwrap()).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
        let s = softmax(&Tensor::vector(vec![-7.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[1.0]);
        assert!(softmax(&Tensor::vector(vec![]).unwrap()).is_err());
    }

    #[test]
    fn l2_cases() {
        let v = l2_normalize(&Tensor::vector(vec![3.0, 4.0]).unwrap());
        assert!((v.data()[0] - 0.6).abs() < 1e-15 && (v.data()[1] - 0.8).abs() < 1e-15);
        let u = Tensor::vector(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(l2_normalize(&u), u);
        let z = Tensor::vector(vec![0.0; 4]).unwrap();
        assert_eq!(l2_normalize(&z), z);
    }

    #[test]
    fn bce_cases() {
        assert!(bce_loss(1.0 - BCE_EPS, 1.0) < 1e-11);
        assert!((bce_loss(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        // exact zero and one are clamped rather than producing infinities
        assert!(bce_loss(0.0, 1.0).is_finite());
        assert!(bce_loss(1.0, 0.0).is_finite());
    }

    #[test]
    fn bce_mean_matches_loop() {
        let p = [0.1, 0.7, 0.55, 0.999, 0.02];
        let y = [0.0, 1.0, 0.0, 1.0, 1.0];
        let mut acc = 0.0;
        for i in 0..p.len() {
            acc += -(y[i] * f64::ln(p[i]) + (1.0 - y[i]) * f64::ln(1.0 - p[i]));
        }
        let expected = acc / p.len() as f64;
        assert!((bce_mean(&p, &y).unwrap() - expected).abs() < 1e-14);
    }
}
