use super::{AutodiffError, Tensor};

/// Scale applied to gradients whose global L2 norm exceeds `clip`.
pub fn clip_factor(global_norm: f64, clip: f64) -> f64 {
    if global_norm > clip && global_norm > 0.0 {
        clip / global_norm
    } else {
        1.0
    }
}

/// Plain SGD with global-norm clipping: `p <- p - lr * g * min(1, clip / |g|)`.
///
/// `names` labels each parameter for error reporting. Returns the global
/// gradient norm before clipping. Parameters are left untouched on error.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    names: &[&str],
    lr: f64,
    clip: f64,
) -> Result<f64, AutodiffError> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(AutodiffError::LearningRate(lr));
    }
    if params.len() != grads.len() {
        return Err(AutodiffError::Contract(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    let mut sq = 0.0;
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(AutodiffError::Shape {
                op: "sgd_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            let param = names.get(i).map_or_else(|| format!("#{i}"), |n| n.to_string());
            return Err(AutodiffError::NonFiniteGradient { param });
        }
        sq += g.sq_norm();
    }
    let norm = sq.sqrt();
    let step = lr * clip_factor(norm, clip);
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, gv) in p.values_mut().iter_mut().zip(g.values()) {
            *pv -= step * gv;
        }
    }
    Ok(norm)
}
