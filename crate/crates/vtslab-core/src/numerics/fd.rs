//! Central finite-difference gradient oracle.
//!
//! The oracle is intentionally independent of the tape: it only evaluates a
//! black-box scalar function, so it can arbitrate whether an analytic
//! backward rule is wrong. Tests freeze comparisons at a relative tolerance
//! appropriate to the composition depth (1e-6 for single ops, 1e-4 for full
//! chains).

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Default probe step for central differences.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`: coordinate `i` is
/// `(f(x + h e_i) - f(x - h e_i)) / (2h)`.
///
/// Errors (naming the coordinate) if `f` fails or returns a non-finite
/// value at any probe point.
pub fn fd_gradient(
    f: impl Fn(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::hyper("fd_gradient.h", h, "must be finite and > 0"));
    }
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];

        probe.data_mut()[i] = orig + h;
        let fp = eval_probe(&f, &probe, i)?;

        probe.data_mut()[i] = orig - h;
        let fm = eval_probe(&f, &probe, i)?;

        probe.data_mut()[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::new(x.shape(), grad)
}

fn eval_probe(
    f: &impl Fn(&Tensor) -> Result<f64>,
    probe: &Tensor,
    coordinate: usize,
) -> Result<f64> {
    match f(probe) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(Error::OracleFailure {
            coordinate,
            msg: format!("function returned non-finite value {v}"),
        }),
        Err(e) => Err(Error::OracleFailure {
            coordinate,
            msg: e.to_string(),
        }),
    }
}

/// Relative error between two scalars with a small floor so that
/// near-zero gradients are compared absolutely (against `tol * 1e-4`)
/// rather than amplifying finite-difference roundoff.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Largest coordinate-wise [`rel_err`] between two same-shape tensors.
pub fn max_rel_err(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "max_rel_err",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact_to_oracle_precision() {
        // f(x) = sum(x^2) has gradient 2x; central differences are exact for
        // quadratics up to roundoff.
        let x = Tensor::vector(&[0.5, -1.25, 2.0]).unwrap();
        let g = fd_gradient(
            |t| Ok(t.data().iter().map(|v| v * v).sum()),
            &x,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        let expected = Tensor::vector(&[1.0, -2.5, 4.0]).unwrap();
        assert!(max_rel_err(&g, &expected).unwrap() < 1e-9);
    }

    #[test]
    fn failure_names_the_coordinate() {
        let x = Tensor::vector(&[1.0, 1e-6]).unwrap();
        // ln goes non-finite when coordinate 1 is probed below zero.
        let err = fd_gradient(
            |t| {
                let v: f64 = t.data().iter().map(|v| v.ln()).sum();
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite { op: "ln".into() })
                }
            },
            &x,
            1e-5,
        )
        .unwrap_err();
        match err {
            Error::OracleFailure { coordinate, .. } => assert_eq!(coordinate, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rel_err_floor_handles_tiny_gradients() {
        // Both near zero: difference is measured against the 1e-4 floor.
        assert!(rel_err(1e-9, -1e-9) < 1e-4);
        // Large values: plain relative error.
        assert!((rel_err(100.0, 101.0) - 1.0 / 101.0).abs() < 1e-12);
    }
}
