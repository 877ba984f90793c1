use super::{DiffError, Value};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient (λ).
    pub weight_decay: f64,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: Some(5.0),
        }
    }
}

/// One parameter handed to [`Adam::step`].
pub struct ParamSlot<'a> {
    pub value: &'a mut Value,
    pub grad: &'a [f64],
    /// Whether decoupled weight decay applies to this parameter.
    pub decay: bool,
}

/// Adaptive-moment optimizer with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Slots must be passed in the same order on every call.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>]) -> Result<(), DiffError> {
        for s in slots.iter() {
            if s.grad.len() != s.value.len() {
                return Err(DiffError::ShapeMismatch {
                    op: "adam_step",
                    left: s.value.shape().to_vec(),
                    right: vec![s.grad.len()],
                });
            }
        }
        if self.moments.is_empty() {
            self.moments = slots
                .iter()
                .map(|s| (vec![0.0; s.value.len()], vec![0.0; s.value.len()]))
                .collect();
        } else if self.moments.len() != slots.len()
            || self
                .moments
                .iter()
                .zip(slots.iter())
                .any(|(m, s)| m.0.len() != s.value.len())
        {
            return Err(DiffError::Invalid(
                "parameter layout changed between optimizer steps".into(),
            ));
        }

        let clip = match self.config.clip_norm {
            Some(max) => {
                let norm = slots
                    .iter()
                    .flat_map(|s| s.grad.iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (s, (m, v)) in slots.iter_mut().zip(self.moments.iter_mut()) {
            let decay = if s.decay { c.weight_decay } else { 0.0 };
            for (((w, &g), mi), vi) in s
                .value
                .data_mut()
                .iter_mut()
                .zip(s.grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g * clip;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= c.lr * (mhat / (vhat.sqrt() + c.eps) + decay * *w);
            }
        }
        Ok(())
    }
}
