use super::{Tape, Var};
use crate::Result;

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)` per coordinate.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    /// Coordinates where one-sided differences disagree at two step sizes,
    /// i.e. the function has a kink at `point` along that axis.
    pub kinks: Vec<usize>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol && self.kinks.is_empty()
    }

    pub fn nondifferentiable(&self) -> bool {
        !self.kinks.is_empty()
    }
}

/// Denominator floor for relative errors, so exact zeros compare on an
/// absolute scale instead of dividing by roundoff.
pub const REL_FLOOR: f64 = 1e-6;

/// Checks `f` at `point`. `f` receives a fresh tape and the parameter leaf
/// (id 0) holding the point, and returns the scalar output node.
pub fn check_gradients<F>(f: F, point: &[f64], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let eval = |p: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.param(0, p);
        let out = f(&mut tape, x);
        tape.scalar(out)
    };

    let mut tape = Tape::new();
    let x = tape.param(0, point);
    let out = f(&mut tape, x);
    let f0 = tape.scalar(out);
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(0)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.len()]);

    let mut numeric = Vec::with_capacity(point.len());
    let mut rel_errors = Vec::with_capacity(point.len());
    let mut kinks = Vec::new();
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        let at = |probe: &mut Vec<f64>, h: f64| {
            probe[i] = point[i] + h;
            let v = eval(probe);
            probe[i] = point[i];
            v
        };
        let fp = at(&mut probe, step);
        let fm = at(&mut probe, -step);
        let central = (fp - fm) / (2.0 * step);

        let small = step / 10.0;
        let gap_wide = ((fp - f0) / step - (f0 - fm) / step).abs();
        let fps = at(&mut probe, small);
        let fms = at(&mut probe, -small);
        let gap_narrow = ((fps - f0) / small - (f0 - fms) / small).abs();
        if gap_wide > tol * central.abs().max(1.0) && gap_narrow > 0.5 * gap_wide {
            kinks.push(i);
        }

        let a = analytic[i];
        let den = a.abs().max(central.abs()).max(REL_FLOOR);
        rel_errors.push((a - central).abs() / den);
        numeric.push(central);
    }
    let max_rel_error = rel_errors.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        kinks,
        tol,
    })
}
