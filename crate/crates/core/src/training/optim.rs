use crate::encoder::ParamSet;

/// Adam with decoupled weight decay. Decay applies to matrices (projection
/// weights and embedding tables); biases and normalization parameters are
/// left alone.
#[derive(Clone, Debug)]
pub struct AdamW<P> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: P,
    v: P,
    steps: u64,
}

impl<P: ParamSet + Clone> AdamW<P> {
    pub fn new(model: &P, learning_rate: f64, weight_decay: f64) -> Self {
        let mut zeros = model.clone();
        zeros.fill(0.0);
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, model: &mut P, grads: &P) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (lr, b1, b2, eps) = (self.learning_rate, self.beta1, self.beta2, self.eps);
        let decay = 1.0 - lr * self.weight_decay;
        let g = grads.views();
        let params = model.views_mut().into_iter();
        let moments = self.m.views_mut().into_iter().zip(self.v.views_mut());
        for ((p, g), (m, v)) in params.zip(g).zip(moments) {
            debug_assert_eq!(p.name, g.name);
            let decays = p.shape.len() == 2;
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                if decays {
                    p.data[i] *= decay;
                }
                let m_hat = m.data[i] / c1;
                let v_hat = v.data[i] / c2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
