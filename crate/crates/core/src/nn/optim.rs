use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step count for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(AdamConfig),
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } => *lr,
            Optimizer::Adam(c) => c.lr,
        }
    }
}

fn check(params: &[f64], grads: &[f64]) -> Result<(), NnError> {
    if params.len() != grads.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    Ok(())
}

pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), NnError> {
    check(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], state: &mut AdamState, grads: &[f64], cfg: &AdamConfig) -> Result<(), NnError> {
    check(params, grads)?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(NnError::ShapeMismatch(format!(
            "adam state sized {} for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powf(state.t as f64);
    let c2 = 1.0 - cfg.beta2.powf(state.t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0, 3.5];
        sgd_step(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.5]);
        let mut s = AdamState::new(3);
        adam_step(&mut p, &mut s, &[0.0; 3], &AdamConfig::default()).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.5]);
    }

    #[test]
    fn sgd_unit_rate() {
        let mut p = vec![1.0, 1.0];
        sgd_step(&mut p, &[0.25, -1.0], 1.0).unwrap();
        assert_eq!(p, [0.75, 2.0]);
        assert!(sgd_step(&mut p, &[0.0], 1.0).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        let expected = cfg.lr / (1.0 + cfg.eps);
        let mut p = vec![0.0; 4];
        let mut s = AdamState::new(4);
        adam_step(&mut p, &mut s, &[1.0; 4], &cfg).unwrap();
        for v in &p {
            assert!((v + expected).abs() < 1e-15, "{v}");
        }
        assert_eq!(s.t, 1);
        assert!(adam_step(&mut p, &mut AdamState::new(2), &[1.0; 4], &cfg).is_err());
    }
}
