use super::tape::Mat;

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamState {
    /// Zero moments shaped like `params`, with the usual constants
    /// `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Mat>) -> Self {
        let m: Vec<Mat> = params.into_iter().map(|p| Mat::zeros(p.raw_dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One bias-corrected Adam step that decreases the objective whose
/// gradient is `grads`.
pub fn adam_step(params: &mut [&mut Mat], grads: &[Mat], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "state built for a different parameter list");
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.dim(), g.dim(), "gradient shape");
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        ndarray::Zip::from(&mut **p)
            .and(m)
            .and(v)
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
}
