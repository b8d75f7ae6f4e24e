use std::f64::consts::PI;

/// Linear warmup from `base/25` to `base` over the first 30% of steps,
/// then cosine decay to `base/100`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycle {
    pub base_lr: f64,
    pub total_steps: usize,
}

impl OneCycle {
    pub const WARMUP_FRACTION: f64 = 0.3;
    pub const START_DIVISOR: f64 = 25.0;
    pub const FINAL_DIVISOR: f64 = 100.0;

    pub fn new(base_lr: f64, total_steps: usize) -> Self {
        OneCycle {
            base_lr,
            total_steps,
        }
    }

    fn warmup_steps(&self) -> usize {
        ((self.total_steps as f64 * Self::WARMUP_FRACTION).ceil() as usize).max(1)
    }

    pub fn lr(&self, step: usize) -> f64 {
        let warm = self.warmup_steps();
        let start = self.base_lr / Self::START_DIVISOR;
        let end = self.base_lr / Self::FINAL_DIVISOR;
        if step < warm {
            return start + (self.base_lr - start) * step as f64 / warm as f64;
        }
        let decay = self.total_steps.saturating_sub(warm).max(1);
        let frac = ((step - warm) as f64 / decay as f64).min(1.0);
        end + 0.5 * (self.base_lr - end) * (1.0 + (PI * frac).cos())
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
