#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tridet_core::autograd::gradcheck::{check_gradients, GradCheck, DEFAULT_STEP};
use tridet_core::autograd::{Tape, Tensor, Var};
use tridet_core::params::{Bound, ParamStore};

pub mod reference;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Finite-difference check of `f` with respect to every parameter in
/// `store` (and optionally extra input tensors appended after them).
pub fn check_params<F>(store: &ParamStore, extra: &[Tensor], f: F) -> GradCheck
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>, &[Var<'t>]) -> Var<'t>,
{
    check_params_with_step(store, extra, DEFAULT_STEP, f)
}

/// [`check_params`] with an explicit central-difference step. Deep
/// compositions have large third derivatives, so their truncation error at the
/// default step can exceed the tolerance on its own.
pub fn check_params_with_step<F>(store: &ParamStore, extra: &[Tensor], step: f64, f: F) -> GradCheck
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>, &[Var<'t>]) -> Var<'t>,
{
    let n = store.len();
    let mut inputs: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
    inputs.extend_from_slice(extra);
    check_gradients(&inputs, step, |tape, vars| {
        let bound = Bound::from_vars(vars[..n].to_vec());
        Ok(f(tape, &bound, &vars[n..]))
    })
    .unwrap()
}

/// Sets every parameter to small random values so no ReLU or max sits on a
/// kink by construction.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for t in store.tensors_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x = scale * r.random_range(-1.0..1.0));
    }
}
