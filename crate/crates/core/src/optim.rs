//! First-order optimizers over flat parameter tensors.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Parameter(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the joint gradient to this L2 norm when it is exceeded.
    pub clip_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }
}

/// Optimizer configuration plus per-tensor moment buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// `sizes` lists the element count of every parameter tensor, in the
    /// order they will be passed to [`OptimizerState::step`].
    pub fn new(config: OptimizerConfig, sizes: &[usize]) -> Self {
        let bufs = || {
            if config.kind == OptimizerKind::Adam {
                sizes.iter().map(|&n| vec![0.0; n]).collect()
            } else {
                Vec::new()
            }
        };
        Self {
            config,
            step: 0,
            m: bufs(),
            v: bufs(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, tensor: usize) -> &[f64] {
        &self.m[tensor]
    }

    pub fn second_moment(&self, tensor: usize) -> &[f64] {
        &self.v[tensor]
    }

    /// Applies one update. Nothing is modified when an error is returned.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Parameter(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.config.kind == OptimizerKind::Adam && self.m.len() != params.len() {
            return Err(Error::Parameter("optimizer built for a different tensor count".into()));
        }
        let mut sq = 0.0;
        for (t, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len()
                || (self.config.kind == OptimizerKind::Adam && self.m[t].len() != p.len())
            {
                return Err(Error::Parameter(format!("shape mismatch in tensor {t}")));
            }
            for &x in g.iter() {
                if !x.is_finite() {
                    return Err(Error::Numeric(format!("non-finite gradient in tensor {t}")));
                }
                sq += x * x;
            }
        }
        let scale = match self.config.clip_norm {
            Some(c) if sq.sqrt() > c => c / sq.sqrt(),
            _ => 1.0,
        };

        self.step += 1;
        let lr = self.config.lr;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, &gx) in p.iter_mut().zip(g.iter()) {
                        *x -= lr * (gx * scale);
                    }
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig {
                    beta1: b1,
                    beta2: b2,
                    eps,
                    ..
                } = self.config;
                let t = self.step as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (ti, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.m[ti];
                    let v = &mut self.v[ti];
                    for (((x, &gx), mx), vx) in
                        p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        let gx = gx * scale;
                        *mx = b1 * *mx + (1.0 - b1) * gx;
                        *vx = b2 * *vx + (1.0 - b2) * gx * gx;
                        let mh = *mx / c1;
                        let vh = *vx / c2;
                        *x -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut st = OptimizerState::new(OptimizerConfig::sgd(0.5), &[2]);
        let mut p = vec![1.0, 2.0];
        st.step(&mut [&mut p], &[&[2.0, -2.0]]).unwrap();
        assert_eq!(p, vec![0.0, 3.0]);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut st = OptimizerState::new(OptimizerConfig::adam(0.1), &[2]);
        let mut p = vec![1.0, -1.0];
        st.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -1.0]);

        st.step(&mut [&mut p], &[&[1.0, 1.0]]).unwrap();
        let m_before = st.first_moment(0).to_vec();
        let v_before = st.second_moment(0).to_vec();
        st.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        for (a, b) in st.first_moment(0).iter().zip(&m_before) {
            assert_eq!(*a, 0.9 * b);
        }
        for (a, b) in st.second_moment(0).iter().zip(&v_before) {
            assert_eq!(*a, 0.999 * b);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut st = OptimizerState::new(OptimizerConfig::adam(0.01), &[3]);
        let mut p = vec![0.0, 0.0, 0.0];
        st.step(&mut [&mut p], &[&[3.0, -0.2, 1e-3]]).unwrap();
        // m_hat / sqrt(v_hat) = g / |g| on the first step
        for (x, sign) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - sign * 0.01).abs() < 1e-7, "{x}");
        }
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // Adam overshoots and oscillates here, so only convergence is checked.
        let mut st = OptimizerState::new(OptimizerConfig::adam(0.1), &[2]);
        let mut p = vec![1.0, 1.0];
        for _ in 0..100 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            st.step(&mut [&mut p], &[&g]).unwrap();
        }
        let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();
        assert!(norm < 0.01, "{norm}");
    }

    #[test]
    fn sgd_descends_monotonically() {
        let mut st = OptimizerState::new(OptimizerConfig::sgd(0.1), &[2]);
        let mut p = vec![1.0, 1.0];
        let mut prev = 2f64.sqrt();
        for _ in 0..100 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            st.step(&mut [&mut p], &[&g]).unwrap();
            let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!(norm < prev);
            prev = norm;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn errors_leave_state_untouched() {
        let mut st = OptimizerState::new(OptimizerConfig::adam(0.1), &[2]);
        let mut p = vec![1.0, 1.0];
        assert!(matches!(
            st.step(&mut [&mut p], &[&[1.0]]),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            st.step(&mut [&mut p], &[&[1.0, f64::NAN]]),
            Err(Error::Numeric(_))
        ));
        assert_eq!(st.steps(), 0);
        assert_eq!(p, vec![1.0, 1.0]);
    }

    #[test]
    fn clipping_rescales() {
        let mut cfg = OptimizerConfig::sgd(1.0);
        cfg.clip_norm = Some(1.0);
        let mut st = OptimizerState::new(cfg, &[2]);
        let mut p = vec![0.0, 0.0];
        st.step(&mut [&mut p], &[&[3.0, 4.0]]).unwrap();
        assert!((p[0] + 0.6).abs() < 1e-15 && (p[1] + 0.8).abs() < 1e-15);
    }
}
