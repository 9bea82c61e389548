//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct FdConfig {
    pub h: f64,
    /// Coordinates sampled per parameter tensor; smaller tensors are checked exhaustively.
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            h: 1e-3,
            samples_per_param: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdWorst {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// `max |analytic - numeric| / (|analytic| + 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<FdWorst>,
}

/// Compares tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` receives one [`Var`] per entry of `params` (in order) and must
/// return a scalar. It is called once on a recording graph and twice per
/// checked coordinate on no-grad graphs, so it has to be deterministic.
pub fn finite_diff_check<T, F>(params: &mut [Tensor<T>], cfg: FdConfig, loss_fn: F) -> Result<FdReport>
where
    T: Element,
    F: for<'g> Fn(&mut Graph<'g, T>, &[Var]) -> Result<Var>,
{
    if !(cfg.h > 0.0) {
        return Err(TensorError::Precondition(format!(
            "finite difference step must be > 0, got {}",
            cfg.h
        )));
    }
    for p in params.iter_mut() {
        p.set_requires_grad(true);
    }
    let analytic: Vec<Option<Vec<f64>>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| g.param(p, i)).collect();
        let loss = loss_fn(&mut g, &vars)?;
        let grads = g.backward(loss)?;
        (0..params.len())
            .map(|i| grads.param(i).map(|t| t.to_f64_vec()))
            .collect()
    };

    let eval = |params: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| g.param(p, i)).collect();
        let loss = loss_fn(&mut g, &vars)?;
        Ok(g.value(loss).item()?.to_f64())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for pi in 0..params.len() {
        let numel = params[pi].numel();
        let coords: Vec<usize> = if numel <= cfg.samples_per_param {
            (0..numel).collect()
        } else {
            let mut c = sample(&mut rng, numel, cfg.samples_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for j in coords {
            let orig = params[pi].data()[j];
            params[pi].data_mut()[j] = T::from_f64(orig.to_f64() + cfg.h);
            let plus = eval(params)?;
            params[pi].data_mut()[j] = T::from_f64(orig.to_f64() - cfg.h);
            let minus = eval(params)?;
            params[pi].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.h);
            let a = analytic[pi].as_ref().map_or(0.0, |g| g[j]);
            let rel = (a - numeric).abs() / (a.abs() + 1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some(FdWorst {
                    param: pi,
                    index: j,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
