use serde::{Deserialize, Serialize};

use super::{Array, ParamStore};

/// Update rule applied by [`OptimizerState::step`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sgd,
    Adam,
    Rmsprop,
    Adadelta,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Adam,
        Algorithm::Adadelta,
        Algorithm::Rmsprop,
        Algorithm::Sgd,
    ];

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Algorithm::Sgd => 0.01,
            Algorithm::Adam => 0.001,
            Algorithm::Rmsprop => 0.001,
            Algorithm::Adadelta => 1.0,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Algorithm::Sgd),
            "adam" => Ok(Algorithm::Adam),
            "rmsprop" => Ok(Algorithm::Rmsprop),
            "adadelta" => Ok(Algorithm::Adadelta),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

/// Optimizer hyperparameters plus per-parameter auxiliary buffers.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub epsilon: f64,
    step_count: u64,
    // adam: (m, v); rmsprop: (mean square, unused); adadelta: (grad accumulator, update accumulator)
    first: Vec<Array>,
    second: Vec<Array>,
}

impl OptimizerState {
    pub fn new(algorithm: Algorithm, learning_rate: f64, params: &ParamStore) -> Self {
        let (rho, epsilon) = match algorithm {
            Algorithm::Rmsprop => (0.9, 1e-7),
            Algorithm::Adadelta => (0.95, 1e-6),
            _ => (0.0, 1e-8),
        };
        let buffers = || {
            params
                .iter()
                .map(|(_, p)| Array::zeros(p.value.shape()))
                .collect::<Vec<_>>()
        };
        let needs_second = matches!(algorithm, Algorithm::Adam | Algorithm::Adadelta);
        Self {
            algorithm,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            rho,
            epsilon,
            step_count: 0,
            first: if algorithm == Algorithm::Sgd { Vec::new() } else { buffers() },
            second: if needs_second { buffers() } else { Vec::new() },
        }
    }

    pub fn with_default_rate(algorithm: Algorithm, params: &ParamStore) -> Self {
        Self::new(algorithm, algorithm.default_learning_rate(), params)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut ParamStore) {
        self.step_count += 1;
        let lr = self.learning_rate;
        let eps = self.epsilon;
        let t = self.step_count as i32;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let p = params.get_mut(id);
            if !p.trainable {
                continue;
            }
            let grad = p.gradient.data();
            let value = p.value.data_mut();
            match self.algorithm {
                Algorithm::Sgd => {
                    for (v, g) in value.iter_mut().zip(grad) {
                        *v -= lr * g;
                    }
                }
                Algorithm::Adam => {
                    let (b1, b2) = (self.beta1, self.beta2);
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - b2.powi(t);
                    let m = self.first[i].data_mut();
                    let s = self.second[i].data_mut();
                    for k in 0..value.len() {
                        let g = grad[k];
                        m[k] = b1 * m[k] + (1.0 - b1) * g;
                        s[k] = b2 * s[k] + (1.0 - b2) * g * g;
                        let m_hat = m[k] / c1;
                        let s_hat = s[k] / c2;
                        value[k] -= lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
                Algorithm::Rmsprop => {
                    let rho = self.rho;
                    let acc = self.first[i].data_mut();
                    for k in 0..value.len() {
                        let g = grad[k];
                        acc[k] = rho * acc[k] + (1.0 - rho) * g * g;
                        value[k] -= lr * g / (acc[k].sqrt() + eps);
                    }
                }
                Algorithm::Adadelta => {
                    let rho = self.rho;
                    let acc = self.first[i].data_mut();
                    let acc_delta = self.second[i].data_mut();
                    for k in 0..value.len() {
                        let g = grad[k];
                        acc[k] = rho * acc[k] + (1.0 - rho) * g * g;
                        let delta = (acc_delta[k] + eps).sqrt() / (acc[k] + eps).sqrt() * g;
                        acc_delta[k] = rho * acc_delta[k] + (1.0 - rho) * delta * delta;
                        value[k] -= lr * delta;
                    }
                }
            }
        }
        params.zero_grad();
    }
}
