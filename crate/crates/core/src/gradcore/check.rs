use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck<T> {
    pub max_rel_error: T,
    /// Flat coordinate where the worst error occurred.
    pub worst_index: usize,
    pub analytic: Tensor<T>,
    pub numeric: Tensor<T>,
}

impl<T: Scalar> GradCheck<T> {
    pub fn passes(&self, tol: T) -> bool {
        self.max_rel_error < tol
    }
}

fn eval<T: Scalar, F>(f: &F, point: Tensor<T>) -> Result<T>
where
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.constant(point);
    let y = f(&mut g, x)?;
    let v = g.value(y);
    if v.len() != 1 {
        return Err(Error::NotScalar { shape: v.shape().to_vec() });
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("function value {v} during gradient check")));
    }
    Ok(v)
}

/// Checks the recorded gradient of the scalar function built by `f` at `point`
/// against `(f(x + h e_i) - f(x - h e_i)) / 2h`, coordinate by coordinate.
/// Relative error is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<T: Scalar, F>(f: F, point: &Tensor<T>, h: T) -> Result<GradCheck<T>>
where
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    if !(h > T::zero()) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let y = f(&mut g, x)?;
    if !g.value(y).all_finite() {
        return Err(Error::NonFinite("function value during gradient check".into()));
    }
    let analytic = g.backward(y)?.wrt(x);
    if !analytic.all_finite() {
        return Err(Error::NonFinite("analytic gradient".into()));
    }

    let two_h = h + h;
    let floor = T::lit(1e-8);
    let mut numeric = vec![T::zero(); point.len()];
    let mut worst = (T::zero(), 0);
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let n = (eval(&f, plus)? - eval(&f, minus)?) / two_h;
        numeric[i] = n;
        let a = analytic.data()[i];
        let rel = (a - n).abs() / floor.max(a.abs() + n.abs());
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        worst_index: worst.1,
        analytic,
        numeric: Tensor::new(point.shape().to_vec(), numeric)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_passes_and_wrong_gradient_fails() {
        let point = Tensor::new([3], vec![0.3, -1.2, 2.0]).unwrap();
        let ok = grad_check(
            |g: &mut Graph<f64>, x| {
                let x2 = g.mul(x, x)?;
                let x3 = g.mul(x2, x)?;
                Ok(g.sum(x3))
            },
            &point,
            1e-4,
        )
        .unwrap();
        assert!(ok.passes(1e-6), "{}", ok.max_rel_error);

        // at the clip boundary the central difference sees half the slope
        let bad = grad_check(
            |g: &mut Graph<f64>, x| {
                let c = g.clip(x, 5.0, 6.0);
                Ok(g.sum(c))
            },
            &Tensor::new([1], vec![5.0]).unwrap(),
            1e-3,
        )
        .unwrap();
        assert!(!bad.passes(1e-2));
    }
}
