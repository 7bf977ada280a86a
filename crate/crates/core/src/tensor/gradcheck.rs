use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{usage_err, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Largest relative disagreement between the taped gradient of `f` at
/// `point` and central differences:
/// `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
///
/// `f` must record a scalar-valued computation of its input on the given tape.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    grad_check_coords(f, point, step, &coords)
}

/// [`grad_check`] restricted to the listed flat coordinates.
pub fn grad_check_coords<F>(f: F, point: &Tensor, step: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |p: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(p.clone());
        let y = f(&mut tape, x)?;
        let v = tape.value(y);
        if !v.is_scalar() {
            return Err(usage_err!("grad_check needs a scalar function, got shape {:?}", v.shape()));
        }
        Ok(v.data()[0])
    };
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&mut tape, x)?;
    if !tape.value(y).is_scalar() {
        return Err(usage_err!("grad_check needs a scalar function, got shape {:?}", tape.shape(y)));
    }
    tape.backward(y)?;
    let analytic = tape.grad(x).map(|g| g.to_vec()).unwrap_or_else(|| alloc::vec![0.0; point.numel()]);

    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
