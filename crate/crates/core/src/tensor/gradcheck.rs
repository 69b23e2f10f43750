use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub epsilon: f64,
    /// Check at most this many coordinates per tensor (chosen at random).
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            max_coords_per_tensor: None,
            seed: 0,
        }
    }
}

/// Gradients smaller than this are compared on an absolute scale; below it
/// central differences are dominated by rounding.
pub const REL_ERR_FLOOR: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn coords(n: usize, opts: &GradCheckOptions, salt: u64) -> Vec<usize> {
    match opts.max_coords_per_tensor {
        Some(m) if m < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut v = sample(&mut rng, n, m).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..n).collect(),
    }
}

/// Largest relative disagreement between reverse-mode gradients and central
/// differences, `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`, over every coordinate of
/// every input.
pub fn grad_check<Fun>(f: Fun, inputs: &[Tensor<f64>], epsilon: f64) -> Result<f64>
where
    Fun: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let opts = GradCheckOptions {
        epsilon,
        ..Default::default()
    };
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<_> = ins.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.item())
    };

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for c in coords(t.numel(), &opts, ti as u64) {
            let orig = t.data()[c];
            work[ti].data_mut()[c] = orig + epsilon;
            let up = eval(&work)?;
            work[ti].data_mut()[c] = orig - epsilon;
            let down = eval(&work)?;
            work[ti].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(rel_err(analytic[ti].data()[c], numeric));
        }
    }
    Ok(worst)
}

/// [`grad_check`] over the parameters of a store.
pub fn grad_check_params<Fun>(f: Fun, store: &ParamStore<f64>, opts: GradCheckOptions) -> Result<f64>
where
    Fun: for<'g> Fn(&'g Graph<f64>, &ParamStore<f64>) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let loss = f(&g, store)?;
    g.backward(loss)?;
    let mut analytic = super::Gradients::zeros_like(store);
    g.accumulate_param_grads(&mut analytic);

    let mut work = store.clone();
    let mut worst = 0.0f64;
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let g = Graph::inference();
        Ok(f(&g, s)?.item())
    };
    for id in store.ids() {
        for c in coords(store.get(id).numel(), &opts, id.0 as u64) {
            let orig = store.get(id).data()[c];
            work.get_mut(id).data_mut()[c] = orig + opts.epsilon;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig - opts.epsilon;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * opts.epsilon);
            worst = worst.max(rel_err(analytic.get(id)[c], numeric));
        }
    }
    Ok(worst)
}
