use serde::{Deserialize, Serialize};

use super::{NumericError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// Bias-corrected Adam with one pair of moment buffers per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<(), NumericError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(NumericError::Shape(format!(
                "adam state for {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(NumericError::Shape("adam parameter/gradient length mismatch".into()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.first[i], &mut self.second[i], &grads[i]);
            for (k, x) in p.data_mut().iter_mut().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Inverse square root decay with linear warmup:
/// `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn lr_schedule(step: u64, warmup: u64, d_model: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap()];
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        let mut st = AdamState::new(cfg, &p);
        st.step(&mut p, &[vec![0.5, -2.0, 1e-3]]).unwrap();
        let expect = [1.0 - 0.01, 2.0 + 0.01, 3.0 - 0.01];
        for (a, b) in p[0].data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6 * 0.01, "{a} vs {b}");
        }
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let orig = Tensor::new(&[2], vec![0.3, -0.7]).unwrap();
        let mut p = vec![orig.clone()];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        st.step(&mut p, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p[0], orig);
    }

    #[test]
    fn deterministic_replay() {
        let p0 = vec![Tensor::new(&[2], vec![0.3, -0.7]).unwrap()];
        let run = || {
            let mut p = p0.clone();
            let mut st = AdamState::new(AdamConfig::default(), &p);
            for i in 0..5 {
                st.step(&mut p, &[vec![0.1 * i as f64, -0.2]]).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_shape() {
        let d = 256;
        let w = 4000;
        let at = lr_schedule(w, w, d);
        let expect = 256f64.powf(-0.5) * 4000f64.powf(-0.5);
        assert!((at - expect).abs() < 1e-15);
        // linear before warmup
        let a = lr_schedule(100, w, d);
        let b = lr_schedule(200, w, d);
        assert!((b / a - 2.0).abs() < 1e-12);
        // decays after
        assert!(lr_schedule(16000, w, d) < at);
        assert!((lr_schedule(16000, w, d) / at - 0.5).abs() < 1e-12);
    }
}
