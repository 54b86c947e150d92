use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.item(out))
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences and returns the worst `|analytic - numeric| / max(1, |analytic|)`
/// over every entry of every parameter.
///
/// Parameter entries are indexed in flattened order across `params`; a
/// non-finite value anywhere reports the index of the entry being perturbed.
pub fn grad_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "grad_check epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.item(loss).is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut flat = 0usize;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).expect("param leaf has grad").to_vec();
        for (j, a) in analytic.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite { index: flat });
            }
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + epsilon;
            let up = evaluate(&f, &work)?;
            work[pi].data_mut()[j] = orig - epsilon;
            let down = evaluate(&f, &work)?;
            work[pi].data_mut()[j] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite { index: flat });
            }
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
            flat += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = grad_check(
            |t, v| t.mul(v[0], v[0]),
            &[Tensor::scalar(3.0)],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn softmax_first_entry_on_simplex() {
        let x = Tensor::vector(vec![0.3, 0.3, 0.3]);
        let f = |t: &mut Tape, v: &[Var]| {
            let s = t.softmax(v[0], 0.5)?;
            let e = t.constant(&Tensor::vector(vec![1.0, 0.0, 0.0]));
            let m = t.mul(s, e)?;
            Ok(t.sum(m))
        };
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let out = f(&mut tape, &[xv]).unwrap();
        tape.backward(out).unwrap();
        let g: f64 = tape.grad(xv).unwrap().iter().sum();
        assert!(g.abs() < 1e-15);
        assert!(grad_check(f, &[x], 1e-5).unwrap() <= 1e-6);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let r = grad_check(|t, v| Ok(t.sum(v[0])), &[Tensor::scalar(1.0)], 0.1);
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn reports_non_finite_index() {
        // ln-free blow-up: 1/x style via huge scale to overflow
        let params = [Tensor::vector(vec![1.0, 1e308])];
        let r = grad_check(
            |t, v| {
                let s = t.scale(v[0], 10.0);
                Ok(t.sum(s))
            },
            &params,
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
