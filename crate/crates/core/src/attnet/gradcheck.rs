use super::{backward, AttnModel};
use crate::Result;

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckResult {
    /// Max relative error per parameter tensor, in checkpoint order.
    pub per_param: Vec<(&'static str, f64)>,
    pub eps: f64,
}

impl GradCheckResult {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Compares [`backward`] against central finite differences of the loss for
/// every scalar parameter.
pub fn grad_check(
    model: &AttnModel,
    tokens: &[usize],
    labels: &[usize],
    eps: f64,
) -> Result<GradCheckResult> {
    let (_, analytic) = backward(model, tokens, labels)?;
    let mut probe = model.clone();
    let mut per_param = Vec::new();
    let names: Vec<&'static str> = model.params.tensors().iter().map(|(n, _)| *n).collect();
    for (ti, name) in names.into_iter().enumerate() {
        let len = model.params.tensors()[ti].1.as_slice().len();
        let mut worst: f64 = 0.0;
        for k in 0..len {
            let orig = model.params.tensors()[ti].1.as_slice()[k];
            probe.params.tensors_mut()[ti].1.as_mut_slice()[k] = orig + eps;
            let up = probe.loss(tokens, labels)?;
            probe.params.tensors_mut()[ti].1.as_mut_slice()[k] = orig - eps;
            let down = probe.loss(tokens, labels)?;
            probe.params.tensors_mut()[ti].1.as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.tensors()[ti].1.as_slice()[k];
            worst = worst.max(relative_error(a, numeric));
        }
        per_param.push((name, worst));
    }
    Ok(GradCheckResult { per_param, eps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attnet::ModelShape;
    use crate::geometry::{Denominator, LayerNormVariant};
    use rand::SeedableRng;

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let variants = [
            LayerNormVariant::FULL,
            LayerNormVariant::ProjectionOnly,
            LayerNormVariant::SCALING_ONLY,
            LayerNormVariant::ScalingOnly(Denominator::Rms),
            LayerNormVariant::Identity,
        ];
        for (s, &variant) in variants.iter().enumerate() {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s as u64);
            let m = AttnModel::init(
                ModelShape {
                    vocab: 5,
                    d: 4,
                    k_out: 3,
                    max_len: Some(5),
                },
                variant,
                s % 2 == 1,
                0.5,
                &mut rng,
            )
            .unwrap();
            let r = grad_check(&m, &[0, 3, 1, 4, 3], &[2, 0, 1, 1, 0], 1e-5).unwrap();
            assert!(r.max_error() < 1e-4, "{variant}: {:?}", r.per_param);
        }
    }
}
