//! Central finite-difference gradient checking in 64-bit.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so entries whose true
/// gradient is ~0 are judged against finite-difference round-off rather
/// than against themselves.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// (input index, element index) of the worst entry.
    pub worst: (usize, usize),
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares tape gradients of the scalar `f(inputs)` against central
/// differences with step `h`. At most `max_per_input` entries of each input
/// are perturbed (evenly strided) to bound the cost on larger tensors.
pub fn check<F>(f: F, inputs: &[Tensor<f64>], h: f64, max_per_input: usize) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::inference();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let mut report = GradCheck { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0, worst: (0, 0) };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        let step = n.div_ceil(max_per_input.max(1)).max(1);
        for i in (0..n).step_by(step) {
            let orig = input.data()[i];
            work[k].data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k].data()[i];
            let e = rel_err(a, numeric);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = (k, i);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// `Σ wᵢ yᵢ` with fixed pseudo-random weights, so every output element
/// contributes a distinct amount to the checked scalar.
pub fn weighted_sum<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shape = y.shape();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = y.tape().constant(Tensor::new(shape, w)?);
    y.mul(w)?.sum()
}

/// Uniform random tensor in `[-range, range]`.
pub fn random(shape: &[usize], range: f64, seed: u64) -> Tensor<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-range..=range)).collect()).unwrap()
}
