use alloc::vec::Vec;

use super::tape::{Tape, Var};
use super::Tensor;
use crate::{math, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// differences.
///
/// Returns the maximum over every parameter entry of
/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.variable(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.variable(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(|g| g.data().to_vec());
        for i in 0..params[pi].len() {
            let orig = params[pi].data()[i];
            probe[pi].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[pi].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |g| g[i]);
            let err = math::abs(a - numeric) / math::abs(numeric).max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
