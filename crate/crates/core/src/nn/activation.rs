use serde::{Deserialize, Serialize};

/// Element-wise activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn forward(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => softplus(z),
        }
    }

    /// Derivative with respect to the pre-activation `z`. `y` is the forward
    /// output at `z`, reused where it gives the cheaper form.
    #[inline]
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Softplus => sigmoid(z),
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(z))` without overflow for large `z`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_matches_definition() {
        assert_eq!(sigmoid(0.0), 0.5);
        let z = 1.7;
        let direct = 1.0 / (1.0 + (-z as f64).exp());
        assert!((sigmoid(z) - direct).abs() < 1e-15);
        // Saturation without NaN.
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let eps = 1e-6;
        for act in [
            Activation::Identity,
            Activation::Relu,
            Activation::Sigmoid,
            Activation::Softplus,
        ] {
            for &z in &[-1.3, -0.2, 0.4, 2.1] {
                let y = act.forward(z);
                let numeric = (act.forward(z + eps) - act.forward(z - eps)) / (2.0 * eps);
                assert!(
                    (act.derivative(z, y) - numeric).abs() < 1e-8,
                    "{act:?} at z={z}"
                );
            }
        }
    }

    #[test]
    fn relu_clamps_negative_preactivations() {
        assert_eq!(Activation::Relu.forward(-1.0), 0.0);
        assert_eq!(Activation::Relu.forward(3.0), 3.0);
    }
}
