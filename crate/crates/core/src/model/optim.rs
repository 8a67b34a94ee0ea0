use super::network::{ConvTensors, FcnParams, ParamGrads};
use super::ModelError;

/// Polynomial decay `lr0 * (1 - t/T)^power`; `t` is clamped to `[0, T]`.
pub fn poly_lr(lr0: f64, t: u64, total: u64, power: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = t.min(total) as f64 / total as f64;
    lr0 * (1.0 - frac).powf(power)
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<ConvTensors>,
}

impl SgdState {
    pub fn new(params: &FcnParams) -> Self {
        Self {
            velocity: params.zeros_like(),
        }
    }
}

fn check_shapes(a: &[ConvTensors], b: &[ConvTensors], what: &str) -> Result<(), ModelError> {
    let same = a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| x.weight.len() == y.weight.len() && x.bias.len() == y.bias.len());
    if same {
        Ok(())
    } else {
        Err(ModelError::ShapeMismatch(format!("{what} do not match the parameters")))
    }
}

/// One SGD step: `v <- momentum v + (g + weight_decay theta)`, then
/// `theta <- theta - lr v`.
pub fn sgd_step(
    params: &mut FcnParams,
    grads: &ParamGrads,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    state: &mut SgdState,
) -> Result<(), ModelError> {
    check_shapes(&params.convs, &grads.convs, "gradients")?;
    check_shapes(&params.convs, &state.velocity, "momentum buffers")?;
    for ((p, g), v) in params
        .convs
        .iter_mut()
        .zip(&grads.convs)
        .zip(&mut state.velocity)
    {
        let pairs = p
            .weight
            .iter_mut()
            .zip(&g.weight)
            .zip(&mut v.weight)
            .chain(p.bias.iter_mut().zip(&g.bias).zip(&mut v.bias));
        for ((theta, &grad), vel) in pairs {
            *vel = momentum * *vel + grad + weight_decay * *theta;
            *theta -= lr * *vel;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::{FcnArchitecture, LayerSpec};
    use crate::model::network::init_params;

    fn tiny() -> FcnParams {
        let arch = FcnArchitecture {
            layers: vec![LayerSpec::conv1(1, 1), LayerSpec::Sigmoid],
        };
        init_params(&arch, 0).unwrap()
    }

    fn constant_grads(params: &FcnParams, g: f64) -> ParamGrads {
        let mut grads = ParamGrads::zeros_for(params);
        for t in &mut grads.convs {
            t.weight.iter_mut().for_each(|x| *x = g);
            t.bias.iter_mut().for_each(|x| *x = g);
        }
        grads
    }

    #[test]
    fn poly_schedule_endpoints() {
        assert_eq!(poly_lr(0.001, 0, 100, 0.9), 0.001);
        assert_eq!(poly_lr(0.001, 100, 100, 0.9), 0.0);
        assert!((poly_lr(0.001, 50, 100, 1.0) - 0.0005).abs() < 1e-18);
        assert_eq!(poly_lr(0.001, 150, 100, 0.9), 0.0);
    }

    #[test]
    fn zero_momentum_is_plain_descent() {
        let mut params = tiny();
        let before = params.clone();
        let grads = constant_grads(&params, 0.5);
        let mut state = SgdState::new(&params);
        sgd_step(&mut params, &grads, 0.1, 0.0, 0.0, &mut state).unwrap();
        assert_eq!(params.convs[0].weight[0], before.convs[0].weight[0] - 0.05);
        assert_eq!(params.convs[0].bias[0], -0.05);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut params = tiny();
        let before = params.clone();
        let grads = constant_grads(&params, 3.0);
        let mut state = SgdState::new(&params);
        sgd_step(&mut params, &grads, 0.0, 0.9, 0.0, &mut state).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn two_momentum_steps_unroll() {
        // v1 = g, v2 = m g + g: displacement lr g (2 + m).
        let (lr, g, m) = (0.25, 0.5, 0.9);
        let mut params = tiny();
        let start = params.convs[0].bias[0];
        let grads = constant_grads(&params, g);
        let mut state = SgdState::new(&params);
        sgd_step(&mut params, &grads, lr, m, 0.0, &mut state).unwrap();
        sgd_step(&mut params, &grads, lr, m, 0.0, &mut state).unwrap();
        let moved = start - params.convs[0].bias[0];
        assert!((moved - lr * g * (2.0 + m)).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_grads() {
        let mut params = tiny();
        let grads = ParamGrads { convs: vec![] };
        let mut state = SgdState::new(&params);
        assert!(matches!(
            sgd_step(&mut params, &grads, 0.1, 0.9, 0.0, &mut state),
            Err(ModelError::ShapeMismatch(_))
        ));
    }
}
