//! Central finite-difference verification of graph gradients.

use ndarray::Array2;
use serde::Serialize;

use super::{Graph, NumericsError, Var};

/// Accepted step sizes for [`finite_diff_check`].
pub const EPS_RANGE: (f64, f64) = (1e-7, 1e-3);

/// Floor of the relative-error denominator. Central differences at
/// `eps = 1e-5` carry roundoff near `2e-16 · |f| / eps ≈ 2e-11`, so gradients
/// that are exactly zero (shift-invariant biases before a softmax, say) need
/// a floor well above that to compare meaningfully.
pub const REL_FLOOR: f64 = 1e-6;

/// Worst coordinate of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Which parameter and which `(row, col)` produced the maximum.
    pub param: usize,
    pub coord: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Array2<f64>]) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).dim() != (1, 1) {
        return Err(NumericsError::NotScalar(g.value(out).dim()));
    }
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(NumericsError::NonFiniteLoss(v));
    }
    Ok(v)
}

/// Compares the reverse-mode gradient of the scalar function `f` against
/// central differences `(f(x + eps) - f(x - eps)) / 2eps` on every
/// coordinate of every parameter.
///
/// `f` receives a fresh graph and the parameter handles (in the order of
/// `params`) and returns the scalar output node.
pub fn finite_diff_check<F>(
    f: F,
    params: &[Array2<f64>],
    eps: f64,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    if !(EPS_RANGE.0..=EPS_RANGE.1).contains(&eps) {
        return Err(NumericsError::InvalidEps(eps));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.dim() != (1, 1) {
        return Err(NumericsError::NotScalar(v.dim()));
    }
    if !v[[0, 0]].is_finite() {
        return Err(NumericsError::NonFiniteLoss(v[[0, 0]]));
    }
    g.backward(out)?;
    let analytic: Vec<Array2<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| {
            g.grad(*v)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(p.dim()))
        })
        .collect();
    drop(g);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        param: 0,
        coord: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut work: Vec<Array2<f64>> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        let (rows, cols) = params[pi].dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = params[pi][[r, c]];
                work[pi][[r, c]] = orig + eps;
                let plus = evaluate(&f, &work)?;
                work[pi][[r, c]] = orig - eps;
                let minus = evaluate(&f, &work)?;
                work[pi][[r, c]] = orig;

                let numeric = (plus - minus) / (2.0 * eps);
                let a = grad[[r, c]];
                let err = relative_error(a, numeric);
                report.coordinates += 1;
                if err > report.max_rel_error || report.coordinates == 1 {
                    report.max_rel_error = err;
                    report.param = pi;
                    report.coord = (r, c);
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_function_has_zero_error() {
        let r = finite_diff_check(
            |g, _| Ok(g.constant(array![[4.2]])),
            &[array![[1.0, -2.0, 0.5]]],
            1e-5,
        )
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.coordinates, 3);
    }

    #[test]
    fn linear_function_is_exact_to_rounding() {
        let w = array![[0.3], [-1.7], [2.2]];
        let r = finite_diff_check(
            move |g, p| {
                let wv = g.constant(w.clone());
                let y = g.matmul(p[0], wv)?;
                Ok(g.sum(y))
            },
            &[array![[1.0, 2.0, 3.0]]],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-9, "{r:?}");
    }

    #[test]
    fn rejects_eps_out_of_range() {
        for eps in [1e-8, 1e-2, 0.0, f64::NAN] {
            assert!(matches!(
                finite_diff_check(|g, p| Ok(g.sum(p[0])), &[array![[1.0]]], eps),
                Err(NumericsError::InvalidEps(_))
            ));
        }
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let r = finite_diff_check(
            |g, p| {
                let c = g.constant(array![[f64::INFINITY]]);
                let y = g.add(p[0], c)?;
                Ok(g.sum(y))
            },
            &[array![[1.0]]],
            1e-5,
        );
        assert!(matches!(r, Err(NumericsError::NonFiniteLoss(_))));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // scale by 2 but pretend the value is x^2 via a mismatched constant: the
        // analytic gradient of sum(2x) is 2, the function below is sum(x*x)
        // evaluated through a detached copy, so the graph sees only half of it.
        let r = finite_diff_check(
            |g, p| {
                let detached = g.constant(g.value(p[0]).clone());
                let y = g.mul(p[0], detached)?;
                Ok(g.sum(y))
            },
            &[array![[3.0]]],
            1e-5,
        )
        .unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-6, "{r:?}");
    }
}
