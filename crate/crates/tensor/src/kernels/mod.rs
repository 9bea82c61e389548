//! Raw slice kernels shared by the functional ops and the tape.

pub mod conv;
pub mod gemm;
pub mod norm;

use crate::element::Element;

/// Numerically stable softmax of one row, computed in `f64`.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log(sum(exp(row)))` with max subtraction.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn hard_sigmoid(v: f64) -> f64 {
    ((v + 3.0) / 6.0).clamp(0.0, 1.0)
}

pub fn global_avg_pool<T: Element>(x: &[T], planes: usize, hw: usize) -> Vec<T> {
    (0..planes)
        .map(|p| {
            let s: f64 = x[p * hw..(p + 1) * hw].iter().map(|v| v.to_f64()).sum();
            T::from_f64(s / hw as f64)
        })
        .collect()
}

/// `out[n, o] = Σ_f x[n, f] · w[o, f] + b[o]`.
pub fn linear<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, n: usize, f: usize, o: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * o);
    for i in 0..n {
        let row = &x[i * f..(i + 1) * f];
        for j in 0..o {
            let wr = &w[j * f..(j + 1) * f];
            let mut acc: f64 = row.iter().zip(wr).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
            if let Some(b) = b {
                acc += b[j].to_f64();
            }
            out.push(T::from_f64(acc));
        }
    }
    out
}
