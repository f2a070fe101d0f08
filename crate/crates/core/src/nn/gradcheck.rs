use super::model::ModelParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference estimate of `d loss / d p` for every scalar parameter,
/// returned as one tensor per parameter tensor (in `ModelParams::tensors`
/// order). `loss` is evaluated twice per scalar on a perturbed copy.
pub fn finite_diff_grad<F>(params: &ModelParams, mut loss: F, h: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&ModelParams) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::arg(format!("finite-difference step {h} must be positive")));
    }
    let mut probe = params.clone();
    probe.clear_grads();
    let mut grads = Vec::new();
    let (mut li, mut ti) = (0, 0);
    for layer in &params.layers {
        for tensor in layer {
            let mut g = Tensor::zeros(tensor.shape().to_vec());
            for k in 0..tensor.len() {
                let orig = tensor.data()[k];
                probe.layers[li][ti].data_mut()[k] = orig + h;
                let up = loss(&probe)?;
                probe.layers[li][ti].data_mut()[k] = orig - h;
                let down = loss(&probe)?;
                probe.layers[li][ti].data_mut()[k] = orig;
                g.data_mut()[k] = (up - down) / (2.0 * h);
            }
            grads.push(g);
            ti += 1;
        }
        li += 1;
        ti = 0;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = ModelParams {
            version: 1,
            layers: vec![vec![Tensor::new(vec![1], vec![3.0]).unwrap()]],
        };
        let g = finite_diff_grad(&p, |q| Ok(q.layers[0][0].data()[0].powi(2)), 1e-5).unwrap();
        assert!((g[0].data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn zero_step_rejected() {
        let p = ModelParams {
            version: 1,
            layers: vec![],
        };
        assert!(finite_diff_grad(&p, |_| Ok(0.0), 0.0).is_err());
        assert!(finite_diff_grad(&p, |_| Ok(0.0), -1e-5).is_err());
    }
}
