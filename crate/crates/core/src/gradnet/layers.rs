use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::gradnet::tape::{Tape, Var};
use crate::gradnet::tensor::{ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

/// Affine map `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| T::lit(rng.random_range(-limit..=limit)))
            .collect();
        Self::from_values(
            store,
            name,
            in_dim,
            out_dim,
            weights,
            vec![T::zero(); out_dim],
        )
        .expect("generated shapes are consistent")
    }

    pub fn from_values<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        weight: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        let w = Tensor::matrix(out_dim, in_dim, weight)?;
        let b = Tensor::new(vec![1, out_dim], bias)?;
        Ok(Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), b),
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let (_, cols) = tape.shape(x);
        if cols != self.in_dim {
            return Err(dim_err!(
                "linear layer expects {} inputs, got {cols}",
                self.in_dim
            ));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul_nt(x, w)?;
        tape.add_row(xw, b)
    }
}

/// Stack of linear layers with an activation between consecutive layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
    pub activation: Activation,
    /// Also apply the activation after the last layer.
    pub activate_output: bool,
}

impl Mlp {
    /// Builds layers for the widths `dims[0] -> dims[1] -> ... -> dims[n]`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        activation: Activation,
        activate_output: bool,
        rng: &mut R,
    ) -> Self {
        assert!(
            dims.len() >= 2,
            "an mlp needs at least an input and an output width"
        );
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LinearLayer::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            activation,
            activate_output,
        }
    }

    pub fn from_layers(
        layers: Vec<LinearLayer>,
        activation: Activation,
        activate_output: bool,
    ) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(dim_err!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].out_dim,
                    pair[1].in_dim
                ));
            }
        }
        Ok(Self {
            layers,
            activation,
            activate_output,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if (i < last || self.activate_output) && self.activation == Activation::Relu {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Records `input` on a fresh tape and runs the network.
pub fn mlp_forward<T: Scalar>(
    net: &Mlp,
    store: &ParamStore<T>,
    tape: &mut Tape<T>,
    input: &Tensor<T>,
) -> Result<Var> {
    let x = tape.input(input);
    net.forward(tape, store, x)
}
