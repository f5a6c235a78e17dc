use super::{Tape, Tensor, TensorError, Var};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`, per input.
    pub per_input: Vec<f64>,
    /// Coordinates whose `±h` probes landed on a different smooth piece of the
    /// function (a `relu`/`abs` input changed sign). Central differences are
    /// meaningless there, so they are excluded from the error.
    pub skipped: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_input.iter().cloned().fold(0.0, f64::max)
    }
}

struct Eval {
    value: f64,
    kinks: Vec<bool>,
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<Eval, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = scalar_of(&tape, out)?;
    Ok(Eval {
        value,
        kinks: tape.kink_signature(),
    })
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64, TensorError> {
    let t = tape.value(v);
    match t.item() {
        Some(x) if x.is_finite() => Ok(x),
        Some(_) => Err(TensorError::NonFinite { op: "gradcheck" }),
        None => Err(TensorError::NonScalarLoss(t.shape().to_vec())),
    }
}

/// Checks the gradient of `f` with respect to every input tensor.
///
/// `f` must build its computation on the supplied tape from the supplied
/// input vars and return a scalar. The analytic gradient comes from one
/// backward pass; each coordinate is then probed at `x ± h`.
pub fn finite_diff_check_many<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let base_kinks = tape.kink_signature();
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut probe = inputs.to_vec();
    let mut report = GradCheckReport {
        per_input: vec![0.0; inputs.len()],
        skipped: 0,
        checked: 0,
    };
    for (k, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + h;
            let plus = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = x0 - h;
            let minus = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = x0;

            if plus.kinks != base_kinks || minus.kinks != base_kinks {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * h);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.per_input[k] = report.per_input[k].max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Single-input form of [`finite_diff_check_many`]; returns the max relative error.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let report = finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)?;
    Ok(report.max_rel_error())
}
