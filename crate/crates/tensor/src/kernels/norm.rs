//! Per-channel batch normalization over `N×H×W`.

use crate::element::Element;

/// Statistics saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnSaved {
    /// Mean actually subtracted (batch mean in training, running mean in eval).
    pub mean: Vec<f64>,
    /// `1 / sqrt(var + eps)` for the variance actually used.
    pub inv_std: Vec<f64>,
    pub training: bool,
    /// Unbiased batch variance, for the running-stat update.
    pub unbiased_var: Vec<f64>,
}

pub fn bn_forward<T: Element>(
    x: &[T],
    (n, c, hw): (usize, usize, usize),
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    training: bool,
    eps: f64,
) -> (Vec<T>, BnSaved) {
    let m = (n * hw) as f64;
    let mut mean = vec![0.0f64; c];
    let mut inv_std = vec![0.0f64; c];
    let mut unbiased_var = vec![0.0f64; c];
    for ch in 0..c {
        if training {
            let mut s = 0.0;
            for b in 0..n {
                let base = (b * c + ch) * hw;
                s += x[base..base + hw].iter().map(|v| v.to_f64()).sum::<f64>();
            }
            let mu = s / m;
            let mut ss = 0.0;
            for b in 0..n {
                let base = (b * c + ch) * hw;
                ss += x[base..base + hw]
                    .iter()
                    .map(|v| {
                        let d = v.to_f64() - mu;
                        d * d
                    })
                    .sum::<f64>();
            }
            let var = ss / m;
            mean[ch] = mu;
            inv_std[ch] = 1.0 / (var + eps).sqrt();
            unbiased_var[ch] = if m > 1.0 { ss / (m - 1.0) } else { var };
        } else {
            mean[ch] = running_mean[ch].to_f64();
            inv_std[ch] = 1.0 / (running_var[ch].to_f64() + eps).sqrt();
        }
    }
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let scale = gamma[ch].to_f64() * inv_std[ch];
            let shift = beta[ch].to_f64();
            let mu = mean[ch];
            let base = (b * c + ch) * hw;
            for (d, v) in y[base..base + hw].iter_mut().zip(&x[base..base + hw]) {
                *d = T::from_f64((v.to_f64() - mu) * scale + shift);
            }
        }
    }
    (
        y,
        BnSaved {
            mean,
            inv_std,
            training,
            unbiased_var,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward<T: Element>(
    x: &[T],
    gy: &[f64],
    (n, c, hw): (usize, usize, usize),
    gamma: &[T],
    saved: &BnSaved,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    let mut dx = vec![0.0f64; x.len()];
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for ch in 0..c {
        let mu = saved.mean[ch];
        let is = saved.inv_std[ch];
        let mut sum_gy = 0.0;
        let mut sum_gy_xhat = 0.0;
        for b in 0..n {
            let base = (b * c + ch) * hw;
            for (g, v) in gy[base..base + hw].iter().zip(&x[base..base + hw]) {
                sum_gy += g;
                sum_gy_xhat += g * (v.to_f64() - mu);
            }
        }
        sum_gy_xhat *= is;
        dgamma[ch] = sum_gy_xhat;
        dbeta[ch] = sum_gy;
        let gam = gamma[ch].to_f64();
        for b in 0..n {
            let base = (b * c + ch) * hw;
            let dst = &mut dx[base..base + hw];
            let gs = &gy[base..base + hw];
            if saved.training {
                let (k, mg, kx) = (gam * is, sum_gy / m, is * sum_gy_xhat / m);
                for ((d, g), v) in dst.iter_mut().zip(gs).zip(&x[base..base + hw]) {
                    *d = k * (g - mg - (v.to_f64() - mu) * kx);
                }
            } else {
                for (d, g) in dst.iter_mut().zip(gs) {
                    *d = gam * is * g;
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
