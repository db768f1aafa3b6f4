use super::{SpikeFn, Tape, Var};
use crate::error::Result;
use crate::tensor::RealTensor;

/// Compares backward gradients of `f` at `params` with central differences
/// of step `eps`. Tapes run the smoothed forward. Returns the largest
/// absolute disagreement divided by the largest gradient magnitude seen in
/// either estimate, floored at `1e-12`.
pub fn finite_diff_check<F>(params: &[RealTensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[RealTensor]| -> Result<f64> {
        let mut tape = Tape::new(SpikeFn::Smooth);
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss)?[0])
    };
    let mut tape = Tape::new(SpikeFn::Smooth);
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst_diff = 0.0f64;
    let mut scale = 0.0f64;
    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var)?;
        for (i, &a) in analytic.data().iter().enumerate() {
            let base = params[pi].data()[i];
            let nudged = |delta: f64| {
                let mut data = params[pi].data().to_vec();
                data[i] = base + delta;
                RealTensor::new(params[pi].dims().to_vec(), data)
            };
            work[pi] = nudged(eps)?;
            let plus = eval(&work)?;
            work[pi] = nudged(-eps)?;
            let minus = eval(&work)?;
            work[pi] = params[pi].clone();
            let numeric = (plus - minus) / (2.0 * eps);
            worst_diff = worst_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
    }
    Ok(worst_diff / scale.max(1e-12))
}
