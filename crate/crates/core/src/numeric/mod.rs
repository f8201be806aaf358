//! Dense tensor math, reverse-mode gradients and the Adam optimizer.
//!
//! Everything runs in `f64` on one thread. Same inputs and seed give
//! bit-identical outputs.

mod graph;
mod mask;
mod optim;
mod rng;
mod tensor;

pub use graph::{Graph, Var};
pub(crate) use graph::rel_offset;
pub use mask::AttendMask;
pub use optim::{lr_schedule, AdamConfig, AdamState};
pub use rng::Rng;
pub use tensor::{layer_norm, matmul, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty loss: every target position is padding")]
    EmptyLoss,
    #[error("backward already ran on this graph; reset it first")]
    BackwardTwice,
    #[error("zero step")]
    ZeroStep,
}

/// Row-wise softmax restricted to permitted columns.
///
/// Forbidden entries are exactly `0.0`. A row with no permitted column is
/// all zeros instead of NaN.
pub fn masked_softmax(logits: &Tensor, mask: &AttendMask) -> Result<Tensor, NumericError> {
    let (m, n) = logits.dims2()?;
    if mask.rows() != m || mask.cols() != n {
        return Err(NumericError::Shape(format!(
            "mask {}x{} for logits {m}x{n}",
            mask.rows(),
            mask.cols()
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = logits.row(i);
        let allowed = mask.row(i);
        let max = row
            .iter()
            .zip(allowed)
            .filter(|(_, &a)| a)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let o = &mut out[i * n..(i + 1) * n];
        let mut z = 0.0;
        for j in 0..n {
            if allowed[j] {
                o[j] = (row[j] - max).exp();
                z += o[j];
            }
        }
        o.iter_mut().for_each(|v| *v /= z);
    }
    Tensor::new(&[m, n], out)
}

/// Mean negative log-likelihood of `targets` over rows not flagged in `pad`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], pad: &[bool]) -> Result<f64, NumericError> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.cross_entropy(l, targets, pad)?;
    Ok(g.scalar(loss))
}

/// Log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Magnitudes below this are compared absolutely in [`finite_diff_check`].
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Compares `backward` gradients of the scalar built by `f` against central
/// differences for every entry of every input, returning the worst
/// `|analytic - numeric| / max(|analytic|, |numeric|, GRADCHECK_FLOOR)`.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64, NumericError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericError>,
{
    if eps == 0.0 {
        return Err(NumericError::ZeroStep);
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64, NumericError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = probe.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut probe = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for ti in 0..inputs.len() {
        for (k, &a) in analytic[ti].iter().enumerate() {
            let orig = inputs[ti].data()[k];
            probe[ti].data_mut()[k] = orig + eps;
            let up = eval(&probe)?;
            probe[ti].data_mut()[k] = orig - eps;
            let down = eval(&probe)?;
            probe[ti].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
