use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum ArchKind {
    /// `f(x) = W x`, no bias. Linear in the weights, so its linearization is exact.
    Linear,
    /// Fully connected network with biases on every layer.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(z),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a = act(z)`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub input_dim: usize,
    pub output_dim: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
}

/// Position of one dense layer inside the flat weight vector. Weights are
/// stored row-major (`fan_out x fan_in`), followed by the bias if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: Option<usize>,
}

impl Layer {
    pub fn end(&self) -> usize {
        match self.bias_offset {
            Some(b) => b + self.fan_out,
            None => self.weight_offset + self.fan_in * self.fan_out,
        }
    }
}

impl ArchSpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self { kind: ArchKind::Linear, input_dim, output_dim, hidden_widths: Vec::new(), activation: Activation::Tanh }
    }

    pub fn mlp(input_dim: usize, hidden_widths: &[usize], output_dim: usize, activation: Activation) -> Self {
        Self { kind: ArchKind::Mlp, input_dim, output_dim, hidden_widths: hidden_widths.to_vec(), activation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim < 2 {
            return Err(Error::InvalidSpec("output_dim must be at least 2"));
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive"));
        }
        match self.kind {
            ArchKind::Linear if !self.hidden_widths.is_empty() => {
                Err(Error::InvalidSpec("linear architecture takes no hidden layers"))
            }
            ArchKind::Mlp if self.hidden_widths.contains(&0) => {
                Err(Error::InvalidSpec("hidden widths must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn layers(&self) -> Vec<Layer> {
        let mut dims = vec![self.input_dim];
        if self.kind == ArchKind::Mlp {
            dims.extend_from_slice(&self.hidden_widths);
        }
        dims.push(self.output_dim);
        let with_bias = self.kind == ArchKind::Mlp;
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight_offset = offset;
                offset += fan_in * fan_out;
                let bias_offset = with_bias.then(|| {
                    let b = offset;
                    offset += fan_out;
                    b
                });
                Layer { fan_in, fan_out, weight_offset, bias_offset }
            })
            .collect()
    }

    /// Number of trainable parameters `p`.
    pub fn param_count(&self) -> usize {
        self.layers().last().map_or(0, Layer::end)
    }

    /// Random initialization: weights `N(0, 1/fan_in)`, biases zero.
    pub fn init_weights(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![0.0; self.param_count()];
        for layer in self.layers() {
            let std = 1.0 / libm::sqrt(layer.fan_in as f64);
            let normal = Normal::new(0.0, std).expect("finite std");
            for v in &mut w[layer.weight_offset..layer.weight_offset + layer.fan_in * layer.fan_out] {
                *v = normal.sample(&mut rng);
            }
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(ArchSpec::linear(3, 2).param_count(), 6);
        let mlp = ArchSpec::mlp(20, &[40], 5, Activation::Tanh);
        assert_eq!(mlp.param_count(), 20 * 40 + 40 + 40 * 5 + 5);
        let layers = mlp.layers();
        assert_eq!(layers[1].weight_offset, 840);
        assert_eq!(layers[1].bias_offset, Some(1040));
    }

    #[test]
    fn validation() {
        assert!(ArchSpec::linear(3, 1).validate().is_err());
        assert!(ArchSpec::mlp(3, &[0], 2, Activation::Relu).validate().is_err());
        let mut bad = ArchSpec::linear(3, 2);
        bad.hidden_widths.push(4);
        assert!(bad.validate().is_err());
        assert!(ArchSpec::mlp(3, &[4, 4], 2, Activation::Relu).validate().is_ok());
    }
}
