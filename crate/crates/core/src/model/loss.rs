use super::ModelError;
use crate::cam::Cam;

/// Targets at or above this value count as positive for class balancing.
pub const POSITIVE_THRESHOLD: f64 = 0.5;

/// Class-balanced binary cross entropy on label-smoothed soft targets.
///
/// Targets are smoothed as `t' = (1 - eps) t + eps / 2`. Pixels with
/// `t >= 0.5` are weighted `N / (2 N_pos)`, the rest `N / (2 N_neg)`; when
/// either group is empty every weight is 1. Returns the pixel-mean loss and
/// its gradient with respect to each prediction.
pub fn loss_ls_bce(pred: &Cam, target: &Cam, eps: f64) -> Result<(f64, Vec<f64>), ModelError> {
    if pred.shape() != target.shape() {
        return Err(ModelError::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if !(0.0..0.5).contains(&eps) {
        return Err(ModelError::InvalidConfig(format!(
            "label smoothing {eps} outside [0, 0.5)"
        )));
    }
    if let Some((index, &value)) = pred
        .values()
        .iter()
        .enumerate()
        .find(|(_, &p)| !(p > 0.0 && p < 1.0))
    {
        return Err(ModelError::DomainError { index, value });
    }

    let n = pred.values().len();
    let n_pos = target
        .values()
        .iter()
        .filter(|&&t| t >= POSITIVE_THRESHOLD)
        .count();
    let n_neg = n - n_pos;
    let (w_pos, w_neg) = if n_pos == 0 || n_neg == 0 {
        (1.0, 1.0)
    } else {
        (n as f64 / (2.0 * n_pos as f64), n as f64 / (2.0 * n_neg as f64))
    };

    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&p, &t) in pred.values().iter().zip(target.values()) {
        let w = if t >= POSITIVE_THRESHOLD { w_pos } else { w_neg };
        let ts = (1.0 - eps) * t + eps / 2.0;
        total += -w * (ts * p.ln() + (1.0 - ts) * (1.0 - p).ln());
        grad.push(-w * (ts / p - (1.0 - ts) / (1.0 - p)) * inv_n);
    }
    Ok((total * inv_n, grad))
}
