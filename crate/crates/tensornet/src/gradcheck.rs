//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the forward pass, so it is independent of
//! every backward rule it is used to verify.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
    /// for each input; absolute error when both norms are below `1e-10`.
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Checks the gradient of `build` with respect to every input tensor.
///
/// `build` records some computation on the tape and returns its output. A
/// non-scalar output is reduced to a scalar through a fixed random
/// projection seeded by `seed`, so every output element contributes.
pub fn check<F>(inputs: &[Tensor], h: f64, seed: u64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut projection: Option<Vec<f64>> = None;
    let mut eval = |values: &[Tensor], keep: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let weights = projection.get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..tape.value(out).len()).map(|_| rng.random_range(-1.0..1.0)).collect()
        });
        let shape = tape.shape(out).to_vec();
        let w = tape.constant(Tensor::from_vec(shape, weights.clone())?);
        let prod = tape.mul(out, w)?;
        let loss = tape.sum(prod);
        let value = tape.data(loss)[0];
        let mut grads = Vec::new();
        if keep {
            tape.backward(loss)?;
            grads = vars
                .iter()
                .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).len()]))
                .collect();
        }
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.len()];
        for e in 0..input.len() {
            let orig = input.data()[e];
            work[k].data_mut()[e] = orig + h;
            let (plus, _) = eval(&work, false)?;
            work[k].data_mut()[e] = orig - h;
            let (minus, _) = eval(&work, false)?;
            work[k].data_mut()[e] = orig;
            numeric[e] = (plus - minus) / (2.0 * h);
        }
        relative_errors.push(relative_error(&analytic[k], &numeric));
    }
    Ok(GradCheck { relative_errors })
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}
