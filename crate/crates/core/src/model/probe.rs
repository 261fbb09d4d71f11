use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::graph::Permutation;

use super::ScoreModel;

/// Quadrature setup for the line integral `f(A) = ∫₀¹ ⟨s(tA), A⟩_F dt`.
#[derive(Clone, Debug)]
pub struct LineIntegralProbe {
    pub steps: usize,
    pub perm: Permutation,
}

impl LineIntegralProbe {
    pub const MIN_STEPS: usize = 100;

    pub fn new(steps: usize, perm: Permutation) -> Result<Self> {
        if steps < Self::MIN_STEPS {
            return Err(Error::invalid(format!(
                "line integral needs at least {} steps, got {steps}",
                Self::MIN_STEPS
            )));
        }
        Ok(Self { steps, perm })
    }
}

/// Composite trapezoid rule over `[0, 1]` for equally spaced samples.
pub fn trapezoid(values: &[f64]) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        len => {
            let h = 1.0 / (len - 1) as f64;
            let inner: f64 = values[1..len - 1].iter().sum();
            h * (inner + 0.5 * (values[0] + values[len - 1]))
        }
    }
}

fn frobenius(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Integrand `⟨s(tA), A⟩_F` sampled at `t = k/steps`, `k = 0..=steps`.
pub fn path_integrand<S: ScoreModel + ?Sized>(model: &S, adj: &Tensor<f64>, level: usize, steps: usize) -> Result<Vec<f64>> {
    (0..=steps)
        .map(|k| {
            let t = k as f64 / steps as f64;
            let s = model.score(&adj.map(|x| x * t), level)?;
            Ok(frobenius(&s, adj))
        })
        .collect()
}

/// Straight-path line integral of the score field from `0` to `adj`.
pub fn line_integral<S: ScoreModel + ?Sized>(model: &S, adj: &Tensor<f64>, level: usize, steps: usize) -> Result<f64> {
    Ok(trapezoid(&path_integrand(model, adj, level, steps)?))
}

/// Returns `(f(A), f(A^π))`.
pub fn invariance_probe<S: ScoreModel + ?Sized>(
    model: &S,
    probe: &LineIntegralProbe,
    adj: &Tensor<f64>,
    level: usize,
) -> Result<(f64, f64)> {
    let permuted = probe.perm.apply_matrix(adj)?;
    Ok((
        line_integral(model, adj, level, probe.steps)?,
        line_integral(model, &permuted, level, probe.steps)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PointMassScore;

    struct Constant(Tensor<f64>);

    impl ScoreModel for Constant {
        fn levels(&self) -> usize {
            1
        }

        fn score(&self, _adj: &Tensor<f64>, _level: usize) -> Result<Tensor<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn constant_field_is_linear() {
        let s = Tensor::matrix(3, 3, |i, j| if i == j { 0.0 } else { (i + j) as f64 });
        let a = Tensor::matrix(3, 3, |i, j| if i == j { 0.0 } else { 0.5 });
        let f = line_integral(&Constant(s.clone()), &a, 0, 100).unwrap();
        assert!((f - frobenius(&s, &a)).abs() < 1e-12);
    }

    #[test]
    fn zero_endpoint() {
        let model = Constant(Tensor::full(&[3, 3], 1.0));
        assert_eq!(line_integral(&model, &Tensor::zeros(&[3, 3]), 0, 100).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_potential_is_exact_in_the_limit() {
        // s(X) = -(X - C)/σ², f(A) = ⟨C, A⟩/σ² - ‖A‖²/(2σ²)
        let clean = Tensor::matrix(3, 3, |i, j| if i + j == 1 { 1.0 } else { 0.0 });
        let model = PointMassScore::new(clean.clone(), vec![0.5]);
        let a = Tensor::matrix(3, 3, |i, j| if i == j { 0.0 } else { 0.3 });
        let f = line_integral(&model, &a, 0, 1000).unwrap();
        let exact = (frobenius(&clean, &a) - 0.5 * frobenius(&a, &a)) / 0.25;
        assert!((f - exact).abs() < 1e-12);
    }

    #[test]
    fn too_few_steps() {
        assert!(LineIntegralProbe::new(99, Permutation::identity(3)).is_err());
    }
}
