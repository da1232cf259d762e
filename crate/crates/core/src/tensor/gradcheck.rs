use super::{Result, Tape, Tensor, Var};

/// Compares the tape gradient of a scalar function with central differences.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`
/// over all coordinates of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xv = tape.var(x.clone());
    let y = f(&tape, xv)?;
    let analytic = tape.backward(y)?.wrt(xv);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(Tensor::from_parts(x.shape().to_vec(), data));
        Ok(f(&tape, v)?.item())
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += eps;
        let mut minus = x.to_vec();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(vec![1., 2., 3.]);
        let err = grad_check(|_, v| v.mul(v)?.sum(), &x, 1e-5).unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn constant_function() {
        let x = Tensor::vector(vec![0.3, -0.7]);
        let err = grad_check(|t, _| Ok(t.scalar(4.0)), &x, 1e-5).unwrap();
        assert!(err <= 1e-9, "{err}");
    }
}
