use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// `|a - n| / (|a| + |n| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// `(f(x + eps) - f(x - eps)) / 2 eps` for a scalar function.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

fn evaluate<F>(f: &mut F, store: &ParamStore) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let v = tape.value(out).item();
    if !v.is_finite() {
        return Err(Error::numeric(
            "finite_diff_check",
            format!("objective returned {v}"),
        ));
    }
    Ok(v)
}

/// Largest relative error between tape gradients and central differences
/// over every coordinate of `ids`. `f` must be deterministic.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    eps: f64,
    mut f: F,
) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::numeric(
            "finite_diff_check",
            "objective is not finite",
        ));
    }
    let grads = tape.backward(out)?;
    drop(tape);

    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic = grads
            .param(id)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; store.get(id).numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let plus = evaluate(&mut f, store);
            store.get_mut(id).data_mut()[i] = orig - eps;
            let minus = evaluate(&mut f, store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_form_is_exact() {
        let mut store = ParamStore::new();
        let x = store
            .add("x", Tensor::new(vec![1, 3], vec![0.5, -1.25, 2.0]).unwrap())
            .unwrap();
        let a = Tensor::new(
            vec![3, 3],
            vec![2.0, 0.5, 0.0, 0.5, 1.0, 0.3, 0.0, 0.3, 4.0],
        )
        .unwrap();
        let err = finite_diff_check(&mut store, &[x], 1e-5, |tape, s| {
            let xv = tape.param(s, x);
            let m = tape.constant(a.clone());
            let xa = tape.matmul(xv, m);
            let xax = tape.mul(xa, xv);
            Ok(tape.sum(xax))
        })
        .unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn no_parameters_reports_zero() {
        let mut store = ParamStore::new();
        let err = finite_diff_check(&mut store, &[], 1e-5, |tape, _| {
            Ok(tape.constant(Tensor::scalar(5.0)))
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn nan_objective_is_numeric_failure() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(-1.0)).unwrap();
        let err = finite_diff_check(&mut store, &[x], 1e-5, |tape, s| {
            let v = tape.param(s, x);
            Ok(tape.log(v))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }), "{err}");
    }
}
