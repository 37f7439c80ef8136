//! Central finite-difference checking of analytic gradients.

use super::{AutodiffError, Graph, Tensor, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` per input tensor.
    pub relative_errors: Vec<f64>,
    /// Largest absolute elementwise difference over all inputs.
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares the reverse-mode gradient of `build` against central differences
/// with step `h`, for every input marked `requires_grad`.
///
/// `build` receives a fresh graph and one var per input and must return a
/// scalar.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
        let loss = build(&mut g, &vars)?;
        g.backward(loss)?;
        vars.iter().map(|&v| g.grad(v)).collect()
    };

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss)[0])
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut relative_errors = Vec::new();
    let mut max_abs_error: f64 = 0.0;
    for (idx, grad) in analytic.iter().enumerate() {
        if !inputs[idx].requires_grad() {
            continue;
        }
        let mut numeric = vec![0.0; grad.len()];
        for (j, num) in numeric.iter_mut().enumerate() {
            let orig = work[idx].values()[j];
            work[idx].values_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[idx].values_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[idx].values_mut()[j] = orig;
            *num = (plus - minus) / (2.0 * h);
        }
        let diff = norm(grad.iter().zip(&numeric).map(|(a, b)| a - b));
        let scale = norm(grad.iter().copied()).max(norm(numeric.iter().copied()));
        relative_errors.push(if scale < 1e-12 { diff } else { diff / scale });
        for (a, b) in grad.iter().zip(&numeric) {
            max_abs_error = max_abs_error.max((a - b).abs());
        }
    }
    Ok(GradCheckReport {
        relative_errors,
        max_abs_error,
    })
}

fn norm(xs: impl Iterator<Item = f64>) -> f64 {
    xs.map(|x| x * x).sum::<f64>().sqrt()
}
