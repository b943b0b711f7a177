//! Central finite-difference gradient checking.
//!
//! The numeric side evaluates the forward pass only, so it stays
//! independent of the backward implementation it verifies.

use super::{Tape, TensorId};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
pub const DEFAULT_ABS_TOL: f64 = 1e-6;

/// Outcome of a single failed component comparison.
#[derive(Debug)]
pub struct GradMismatch {
    pub input: usize,
    pub component: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl std::fmt::Display for GradMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "input {} component {}: analytic {} vs numeric {}",
            self.input, self.component, self.analytic, self.numeric
        )
    }
}

/// Compare analytic gradients of `build` against central finite differences
/// at `point`. `build` must construct a scalar loss from leaves mounted in
/// the order of `shapes`.
pub fn check<F>(
    build: F,
    shapes: &[(usize, usize)],
    point: &[Vec<f64>],
    step: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<(), GradMismatch>
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let eval = |values: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<TensorId> = values
            .iter()
            .zip(shapes.iter())
            .map(|(v, &(r, c))| tape.leaf(v.clone(), r, c, true))
            .collect();
        let loss = build(&mut tape, &leaves);
        tape.scalar_value(loss)
    };

    // analytic pass
    let mut tape = Tape::new();
    let leaves: Vec<TensorId> = point
        .iter()
        .zip(shapes.iter())
        .map(|(v, &(r, c))| tape.leaf(v.clone(), r, c, true))
        .collect();
    let loss = build(&mut tape, &leaves);
    tape.backward(loss);
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|&l| tape.grad(l).to_vec()).collect();

    let mut values: Vec<Vec<f64>> = point.to_vec();
    for (input, shape_vals) in point.iter().enumerate() {
        for component in 0..shape_vals.len() {
            let central = |h: f64, values: &mut Vec<Vec<f64>>| {
                let orig = values[input][component];
                values[input][component] = orig + h;
                let plus = eval(values);
                values[input][component] = orig - h;
                let minus = eval(values);
                values[input][component] = orig;
                (plus - minus) / (2.0 * h)
            };
            let a = analytic[input][component];
            let mut numeric = central(step, &mut values);
            // a relu/abs kink inside the probe interval makes the estimate
            // invalid; retry with tighter steps before declaring a mismatch
            let mut ok = false;
            for shrink in [1.0, 16.0, 256.0] {
                if shrink > 1.0 {
                    numeric = central(step / shrink, &mut values);
                }
                let tol = abs_tol + rel_tol * a.abs().max(numeric.abs());
                if (a - numeric).abs() <= tol {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(GradMismatch {
                    input,
                    component,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(())
}
