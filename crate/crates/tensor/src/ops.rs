//! Stateless forward ops on plain tensors.
//!
//! Each op runs on a throwaway no-grad [`Graph`], so the functional and
//! taped paths share one implementation.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::graph::Graph;
use crate::kernels::softmax_row;
use crate::tensor::Tensor;

fn unary<T: Element>(x: &Tensor<T>, f: impl FnOnce(&mut Graph<'_, T>, crate::Var) -> Result<crate::Var>) -> Result<Tensor<T>> {
    let mut g = Graph::no_grad();
    let v = g.constant(x);
    let out = f(&mut g, v)?;
    Ok(g.into_value(out))
}

/// Dense convolution, weight `[K, C, kh, kw]`.
pub fn conv2d<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let mut g = Graph::no_grad();
    let x = g.constant(input);
    let w = g.constant(weight);
    let out = g.conv2d(x, w, stride, padding, 1)?;
    Ok(g.into_value(out))
}

/// Depthwise convolution, weight `[C, 1, kh, kw]`.
pub fn depthwise_conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (_, c, _, _) = input.dims4("depthwise_conv2d")?;
    let (k, _, _, _) = weight.dims4("depthwise_conv2d")?;
    if k != c {
        return Err(TensorError::dim(
            "depthwise_conv2d",
            format!("{k} filters for {c} input channels"),
        ));
    }
    let mut g = Graph::no_grad();
    let x = g.constant(input);
    let w = g.constant(weight);
    let out = g.conv2d(x, w, stride, padding, c)?;
    Ok(g.into_value(out))
}

/// Batch norm; in training mode the running statistics are updated with
/// `running = (1 - momentum) * running + momentum * batch` (unbiased variance).
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    training: bool,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<T>> {
    let (out, updates) = {
        let mut g = Graph::no_grad();
        let x = g.constant(input);
        let ga = g.constant(gamma);
        let be = g.constant(beta);
        let y = g.batch_norm(x, ga, be, running_mean, running_var, training, eps, 0)?;
        let ups = g.take_bn_updates();
        (g.into_value(y), ups)
    };
    for u in updates {
        apply_running_update(running_mean, &u.mean, momentum);
        apply_running_update(running_var, &u.var, momentum);
    }
    Ok(out)
}

pub fn apply_running_update<T: Element>(running: &mut Tensor<T>, batch: &[f64], momentum: f64) {
    for (r, b) in running.data_mut().iter_mut().zip(batch) {
        *r = T::from_f64((1.0 - momentum) * r.to_f64() + momentum * b);
    }
}

pub fn relu<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    unary(input, |g, v| g.relu(v))
}

pub fn hard_sigmoid<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    unary(input, |g, v| g.hard_sigmoid(v))
}

pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    unary(input, |g, v| g.global_avg_pool(v))
}

pub fn linear<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::no_grad();
    let x = g.constant(input);
    let w = g.constant(weight);
    let b = g.constant(bias);
    let out = g.linear(x, w, Some(b))?;
    Ok(g.into_value(out))
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = logits.dims2("softmax")?;
    let data = logits.to_f64_vec();
    let mut out = Vec::with_capacity(n * k);
    for row in data.chunks(k.max(1)).take(n) {
        out.extend(softmax_row(row).into_iter().map(T::from_f64));
    }
    Tensor::new(&[n, k], out)
}

/// Mean cross-entropy of `[N, K]` logits against class indices.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::no_grad();
    let v = g.constant(logits);
    let l = g.softmax_cross_entropy(v, labels)?;
    Ok(g.value(l).item()?.to_f64())
}

/// Index of the largest value (first on ties).
pub fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if v.to_f64() > row[best].to_f64() {
            best = i;
        }
    }
    best
}
