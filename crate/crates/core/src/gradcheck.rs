//! Central finite-difference checking of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::DifferentiableOp;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-3;

/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e−8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// `(f(x + h) − f(x − h)) / 2h` for a scalar function of one coordinate.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x0: f64, step: f64) -> Result<f64> {
    let plus = f(x0 + step)?;
    let minus = f(x0 - step)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite value during finite differencing at {x0}"
        )));
    }
    Ok((plus - minus) / (2.0 * step))
}

/// Compares `op.backward` against central differences of the scalar
/// `⟨r, op(inputs)⟩` for a fixed random projection `r`, over every input
/// coordinate. Returns the maximum relative error.
pub fn grad_check(
    op: &mut dyn DifferentiableOp<f64>,
    inputs: &[Tensor<f64>],
    step: f64,
) -> Result<f64> {
    if step <= 0.0 {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {step}")));
    }
    for (i, t) in inputs.iter().enumerate() {
        t.check_finite(&format!("grad_check input {i}"))?;
    }
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let out = op.forward(&refs)?;
    out.check_finite("grad_check forward")?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let proj = Tensor::new(
        out.shape().to_vec(),
        (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let wanted = vec![true; inputs.len()];
    let analytic = op.backward(&refs, &out, &proj, &wanted)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        let grad = grad
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("{} returned no gradient for input {i}", op.name())))?;
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            let numeric = central_difference(
                |x| {
                    work[i].data_mut()[j] = x;
                    let refs: Vec<&Tensor<f64>> = work.iter().collect();
                    let y = op.forward(&refs)?;
                    y.dot(&proj)
                },
                x0,
                step,
            )?;
            work[i].data_mut()[j] = x0;
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    // leave cached state consistent with the unperturbed inputs
    op.forward(&refs)?;
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_step() {
        let mut op = crate::ops::Softmax;
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(grad_check(&mut op, &[x], 0.0).is_err());
    }
}
