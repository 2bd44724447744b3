//! AdamW with decoupled weight decay.

use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(lr: f64, weight_decay: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        assert!(weight_decay >= 0.0);
        assert!((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2));
        assert!(eps > 0.0);
        OptimizerState {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One decoupled-weight-decay Adam update over all parameters.
///
/// Every parameter must have a populated gradient buffer. Gradients are
/// zeroed after the update and the step counter advances by one.
pub fn adamw_step(params: &mut [&mut Tensor], st: &mut OptimizerState) {
    if st.m.is_empty() {
        st.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        st.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    }
    assert_eq!(st.m.len(), params.len(), "optimizer/parameter count mismatch");
    for (i, p) in params.iter().enumerate() {
        assert_eq!(
            st.m[i].len(),
            p.numel(),
            "moment {} not shape-congruent with parameter",
            i
        );
    }

    st.step += 1;
    let t = st.step as i32;
    let bc1 = 1.0 - st.beta1.powi(t);
    let bc2 = 1.0 - st.beta2.powi(t);

    for (i, p) in params.iter_mut().enumerate() {
        assert!(p.grad().is_some(), "missing grad on parameter {}", i);
        let decay = 1.0 - st.lr * st.weight_decay;
        let m = &mut st.m[i];
        let v = &mut st.v[i];
        let grad = p.grad().unwrap().to_vec();
        let data = p.data_mut();
        for j in 0..data.len() {
            let g = grad[j];
            data[j] *= decay;
            m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * g;
            v[j] = st.beta2 * v[j] + (1.0 - st.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] -= st.lr * m_hat / (v_hat.sqrt() + st.eps);
        }
        p.zero_grad();
    }
}
