use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|, 1)` over checked coordinates.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because they sit within `eps` of a kink.
    pub excluded: usize,
    pub passed: bool,
}

/// Compares analytic gradients of `f` against central finite differences.
///
/// A non-scalar output is reduced with a fixed random projection so every
/// output element contributes. Coordinates whose value lies within `eps`
/// of any point in `kinks` are excluded and counted, not failed.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f32, tol: f64, kinks: &[f32], seed: u64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj: Vec<f32> = (0..out.value().len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let grads = tape.backward_seeded(out, &proj)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let t = Tape::inference();
        let vs: Vec<Var<'_>> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&t, &vs)?;
        Ok(o.to_vec().iter().zip(&proj).map(|(a, b)| *a as f64 * *b as f64).sum())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        excluded: 0,
        passed: true,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(v.id()).cloned().flatten().unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data[j];
            if kinks.iter().any(|k| (x0 - k).abs() <= eps) {
                report.excluded += 1;
                continue;
            }
            work[i].data[j] = x0 + eps;
            let fp = eval(&work)?;
            work[i].data[j] = x0 - eps;
            let fm = eval(&work)?;
            work[i].data[j] = x0;
            let numeric = (fp - fm) / (2.0 * eps as f64);
            let a = analytic[j] as f64;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_err < tol;
    Ok(report)
}
