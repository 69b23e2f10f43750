use rand::Rng;

use super::{Float, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Weights of one GRU cell. Each gate maps the concatenation `[x, h]`
/// (`input + hidden` wide) to `hidden` units.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    pub w_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub b_h: ParamId,
}

/// A [`GruParams`] bound into one graph.
#[derive(Debug, Clone, Copy)]
pub struct GruVars<'g, F: Float> {
    pub w_z: Var<'g, F>,
    pub b_z: Var<'g, F>,
    pub w_r: Var<'g, F>,
    pub b_r: Var<'g, F>,
    pub w_h: Var<'g, F>,
    pub b_h: Var<'g, F>,
}

impl GruParams {
    pub fn new<F: Float>(store: &mut ParamStore<F>, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fan = input + hidden;
        let mut gate = |name: &str| {
            let w = store.glorot(format!("{prefix}.w_{name}"), &[fan, hidden], fan, hidden, rng);
            let b = store.zeros(format!("{prefix}.b_{name}"), &[1, hidden]);
            (w, b)
        };
        let (w_z, b_z) = gate("z");
        let (w_r, b_r) = gate("r");
        let (w_h, b_h) = gate("h");
        GruParams {
            input,
            hidden,
            w_z,
            b_z,
            w_r,
            b_r,
            w_h,
            b_h,
        }
    }

    pub fn bind<'g, F: Float>(&self, g: &'g Graph<F>, store: &ParamStore<F>) -> GruVars<'g, F> {
        GruVars {
            w_z: g.param(store, self.w_z),
            b_z: g.param(store, self.b_z),
            w_r: g.param(store, self.w_r),
            b_r: g.param(store, self.b_r),
            w_h: g.param(store, self.w_h),
            b_h: g.param(store, self.b_h),
        }
    }
}

/// One GRU step on row vectors `x: (1, input)` and `h: (1, hidden)`:
///
/// ```text
/// z  = σ([x, h] W_z + b_z)
/// r  = σ([x, h] W_r + b_r)
/// h~ = tanh([x, r ⊙ h] W_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h~
/// ```
pub fn gru_cell<'g, F: Float>(x: Var<'g, F>, h: Var<'g, F>, p: &GruVars<'g, F>) -> Result<Var<'g, F>> {
    let (xs, hs) = (x.shape(), h.shape());
    if xs.len() != 2 || hs.len() != 2 || xs[0] != 1 || hs[0] != 1 {
        return Err(Error::shape("gru_cell", &xs, &hs));
    }
    let xh = Var::concat(&[x, h], 1)?;
    let z = xh.matmul(p.w_z)?.add(p.b_z)?.sigmoid();
    let r = xh.matmul(p.w_r)?.add(p.b_r)?.sigmoid();
    let xrh = Var::concat(&[x, r.mul(h)?], 1)?;
    let cand = xrh.matmul(p.w_h)?.add(p.b_h)?.tanh();
    let keep = z.neg().add_scalar(1.0).mul(h)?;
    keep.add(z.mul(cand)?)
}
