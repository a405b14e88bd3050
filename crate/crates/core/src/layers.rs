//! Affine layers and two-layer perceptrons on the tape.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{ParamId, ParamStore, RngStream, Tape, Var};

/// `x · W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), inputs, outputs, inputs, rng);
        let bias = store.add_uniform(format!("{name}.bias"), 1, outputs, inputs, rng);
        Linear {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }
}

/// Two affine layers with a ReLU between them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut RngStream,
    ) -> Self {
        Mlp {
            hidden: Linear::new(store, &format!("{name}.0"), inputs, hidden, rng),
            output: Linear::new(store, &format!("{name}.1"), hidden, outputs, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        self.output.forward(tape, store, h)
    }
}
