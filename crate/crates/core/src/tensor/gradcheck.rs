use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_values: (f64, f64),
    pub entries_checked: usize,
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Compares `d f / d params` from the tape with `(f(p+h) - f(p-h)) / 2h`
/// for every entry and returns the largest relative error, using
/// `max(|analytic|, |numeric|, 1e-8)` as denominator.
///
/// `f` must build a scalar on the given tape from the parameter handles.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step h must be > 0, got {h}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let base = tape.value(root).item()?;
    tape.backward(root)?;

    let again = evaluate(&f, params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Contract(format!(
            "function is not deterministic: {base} then {again}"
        )));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        entries_checked: 0,
    };
    let mut probe: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).expect("parameters carry gradients").to_vec();
        for (ei, &an) in analytic.iter().enumerate() {
            let orig = probe[pi].data()[ei];
            probe[pi].data_mut()[ei] = orig + h;
            let up = evaluate(&f, &probe)?;
            probe[pi].data_mut()[ei] = orig - h;
            let down = evaluate(&f, &probe)?;
            probe[pi].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = an.abs().max(numeric.abs()).max(1e-8);
            let rel = (an - numeric).abs() / denom;
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((pi, ei));
                report.worst_values = (an, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let report = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.entries_checked, 12);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::ones(&[2, 2]);
        let report = grad_check(
            |t, v| {
                let z = t.scale(v[0], 0.0)?;
                t.sum(z)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let err = grad_check(
            |t, v| {
                calls.set(calls.get() + 1.0);
                let s = t.scale(v[0], calls.get())?;
                t.sum(s)
            },
            &[Tensor::ones(&[2])],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn rejects_nonpositive_step() {
        let err = grad_check(|t, v| t.sum(v[0]), &[Tensor::ones(&[1])], 0.0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
