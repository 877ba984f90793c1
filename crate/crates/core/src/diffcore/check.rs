use super::{DiffError, Tape, Value, Var};

/// Worst relative error between `analytic` and central differences of
/// `value_at` around `x`. The denominator is `max(|a|, |n|, 1e-8)`.
pub fn compare_gradients<F>(value_at: F, analytic: &[f64], x: &[f64], eps: f64) -> Result<f64, DiffError>
where
    F: Fn(&[f64]) -> Result<f64, DiffError>,
{
    if analytic.len() != x.len() {
        return Err(DiffError::ShapeMismatch {
            op: "compare_gradients",
            left: vec![analytic.len()],
            right: vec![x.len()],
        });
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for m in 0..x.len() {
        probe[m] = x[m] + eps;
        let up = value_at(&probe)?;
        probe[m] = x[m] - eps;
        let down = value_at(&probe)?;
        probe[m] = x[m];
        if !up.is_finite() || !down.is_finite() {
            return Err(DiffError::NonFinite(m));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[m];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Checks the tape gradient of a scalar function `f` of one parameter vector
/// against central finite differences at `x`.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, DiffError>,
{
    let eval = |point: &[f64], with_grad: bool| -> Result<(f64, Vec<f64>), DiffError> {
        let mut tape = Tape::new();
        let leaf = tape.param(Value::vector(point.to_vec()));
        let root = f(&mut tape, leaf)?;
        let value = tape.value(root).item();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(root)?;
        Ok((value, grads.get(leaf).to_vec()))
    };
    let (v0, analytic) = eval(x, true)?;
    if !v0.is_finite() {
        return Err(DiffError::NonFinite(usize::MAX));
    }
    compare_gradients(|p| eval(p, false).map(|(v, _)| v), &analytic, x, eps)
}
