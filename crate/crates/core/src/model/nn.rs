//! Parameterised layers over the autodiff core.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Conv2dSpec, Float, Graph, ParamId, ParamStore, Var};

/// `x · W + b` on row vectors, `W: (in, out)`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.glorot(format!("{name}.w"), &[input, output], input, output, rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), &[1, output]));
        Linear { w, b, input, output }
    }

    /// `(T, in)` → `(T, out)`.
    pub fn forward<'g, F: Float>(&self, g: &'g Graph<F>, store: &ParamStore<F>, x: Var<'g, F>) -> Result<Var<'g, F>> {
        let y = x.matmul(g.param(store, self.w))?;
        match self.b {
            Some(b) => {
                let rows = y.shape()[0];
                y.add(g.param(store, b).expand(&[rows, self.output])?)
            }
            None => Ok(y),
        }
    }
}

/// 2-D convolution over `(C, H, W)`.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: Conv2dSpec,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        spec: Conv2dSpec,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let area = kernel * kernel;
        let w = store.glorot(format!("{name}.w"), &[output, input, kernel, kernel], input * area, output * area, rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), &[output]));
        Conv { w, b, spec }
    }

    pub fn forward<'g, F: Float>(&self, g: &'g Graph<F>, store: &ParamStore<F>, x: Var<'g, F>) -> Result<Var<'g, F>> {
        x.conv2d(g.param(store, self.w), self.b.map(|b| g.param(store, b)), self.spec)
    }
}

/// Layer normalisation along one axis with a learned gain and shift.
#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const NORM_EPS: f64 = 1e-5;

impl Norm {
    pub fn new<F: Float>(store: &mut ParamStore<F>, name: &str, len: usize) -> Self {
        Norm {
            gamma: store.ones(format!("{name}.gamma"), &[len]),
            beta: store.zeros(format!("{name}.beta"), &[len]),
        }
    }

    pub fn forward<'g, F: Float>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        x: Var<'g, F>,
        axis: usize,
    ) -> Result<Var<'g, F>> {
        x.layer_norm(axis, Some(g.param(store, self.gamma)), Some(g.param(store, self.beta)), NORM_EPS)
    }
}
