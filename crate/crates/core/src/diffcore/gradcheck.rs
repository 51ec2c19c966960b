//! Central-difference validation of tape gradients.

use super::{DiffError, Tape, Tensor, Var};

/// Worst element found by a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Relative error with a unit floor on the denominator, so gradients near
/// zero are compared in absolute terms.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Builds the loss on a fresh tape for `params` and compares its backward
/// gradients with central differences of step `epsilon`.
///
/// `loss_fn` must be deterministic: any noise it uses has to be fixed
/// outside the closure.
pub fn finite_difference_check<F>(
    loss_fn: F,
    params: &[Tensor],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    let value = |ps: &[Tensor]| -> Result<f64, DiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };
    compare_gradients(value, &analytic, params, epsilon, tolerance)
}

/// Compares supplied analytic gradients against central differences of
/// `value_fn`. Exposed separately so a deliberately wrong gradient can be
/// fed in as a negative control.
pub fn compare_gradients<F>(
    value_fn: F,
    analytic: &[Tensor],
    params: &[Tensor],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&[Tensor]) -> Result<f64, DiffError>,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        tolerance,
        checked: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        for k in 0..p.len() {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = orig + epsilon;
            let up = value_fn(&work)?;
            work[pi].data_mut()[k] = orig - epsilon;
            let down = value_fn(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[pi].data()[k];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((pi, k));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(tape: &mut Tape, v: &[Var]) -> Result<Var, DiffError> {
        let sq = tape.square(v[0])?;
        let s = tape.scale(sq, 1.5)?;
        let lin = tape.mul(v[0], v[1])?;
        let tot = tape.add(s, lin)?;
        tape.sum(tot)
    }

    #[test]
    fn quadratic_is_exact() {
        let params = vec![
            Tensor::row(vec![0.3, -1.2, 2.0]),
            Tensor::row(vec![1.0, 0.5, -0.7]),
        ];
        let r = finite_difference_check(quadratic, &params, 1e-5, 1e-8).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.checked, 6);
    }

    #[test]
    fn sign_flip_is_caught() {
        let params = vec![
            Tensor::row(vec![0.3, -1.2, 2.0]),
            Tensor::row(vec![1.0, 0.5, -0.7]),
        ];
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = quadratic(&mut tape, &vars).unwrap();
        let g = tape.backward(loss).unwrap();
        let mut wrong: Vec<Tensor> = vars.iter().map(|&v| g.wrt(v)).collect();
        wrong[0] = wrong[0].map(|x| -x);
        let value = |ps: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
            let l = quadratic(&mut t, &vs)?;
            Ok(t.value(l).item())
        };
        let r = compare_gradients(value, &wrong, &params, 1e-5, 1e-2).unwrap();
        assert!(!r.passed());
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst.unwrap().0, 0);
    }
}
