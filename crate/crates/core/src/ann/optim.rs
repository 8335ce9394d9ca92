/// `p ← p − α g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], alpha: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= alpha * g;
    }
}

/// Adam moments with the AMSGrad running maximum of the second moment.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            v_hat: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AMSGrad step with the bias correction folded into the step size,
/// `α_t = α sqrt(1 − β2^t) / (1 − β1^t)` and `p ← p − α_t m / (sqrt(v̂) + ε)`.
pub fn adam_amsgrad_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], alpha: f64) {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let alpha_t = alpha * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        state.v_hat[i] = state.v_hat[i].max(state.v[i]);
        params[i] -= alpha_t * state.m[i] / (state.v_hat[i].sqrt() + state.eps);
    }
}
