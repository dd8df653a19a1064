//! Small multilayer perceptrons on top of the tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::params::{BoundParams, ModelParams, ParamError};
use crate::tensor::{Tensor, TensorError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Silu => x.silu(),
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Fully connected stack `widths[0] → … → widths[last]`, activation between
/// layers and none after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    prefix: String,
    widths: Vec<usize>,
    activation: Activation,
}

impl Mlp {
    /// Registers weights `{prefix}.{i}.w` and biases `{prefix}.{i}.b`.
    /// With `zero_last` the output layer starts at zero.
    pub fn register(
        params: &mut ModelParams,
        prefix: &str,
        widths: &[usize],
        activation: Activation,
        zero_last: bool,
    ) -> Result<Self, ParamError> {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths.len() - 1;
        for (i, pair) in widths.windows(2).enumerate() {
            let (fi, fo) = (pair[0], pair[1]);
            let w = format!("{prefix}.{i}.w");
            if zero_last && i + 1 == layers {
                params.insert(&w, Tensor::zeros(&[fi, fo]))?;
            } else {
                params.insert_glorot(&w, fi, fo, 1.0)?;
            }
            params.insert(&format!("{prefix}.{i}.b"), Tensor::zeros(&[1, fo]))?;
        }
        Ok(Self {
            prefix: prefix.to_string(),
            widths: widths.to_vec(),
            activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn forward<'t>(&self, bound: &BoundParams<'t>, x: Var<'t>) -> Result<Var<'t>, NnError> {
        let layers = self.widths.len() - 1;
        let mut h = x;
        for i in 0..layers {
            let w = bound.get(&format!("{}.{i}.w", self.prefix))?;
            let b = bound.get(&format!("{}.{i}.b", self.prefix))?;
            h = h.matmul(w)?.add(b)?;
            if i + 1 < layers {
                h = self.activation.apply(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn zero_last_layer_gives_zero_output() {
        let mut p = ModelParams::new(1);
        let mlp = Mlp::register(&mut p, "m", &[3, 8, 2], Activation::Silu, true).unwrap();
        assert_eq!(mlp.param_count(), p.count());
        let tape = Tape::new();
        let b = p.bind(&tape);
        let x = tape.constant(Tensor::full(&[4, 3], 0.7));
        let y = mlp.forward(&b, x).unwrap();
        assert_eq!(y.shape(), vec![4, 2]);
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }
}
