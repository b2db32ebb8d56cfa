use crate::autodiff::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction. Moments are kept per parameter slot; slots that
/// are never updated keep zero moments.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.squared_norm()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

impl Adam {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates each `params[i]` that has a gradient `grads[i]`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameters");
        assert_eq!(grads.len(), self.m.len(), "gradient list does not match parameters");
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (p, &gj)) in params[i].data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::row(vec![1.0, -2.0]);
        let mut adam = Adam::new(&[2]);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Some(Tensor::row(vec![0.0, 0.0]))], 0.1);
        }
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_steps_by_lr() {
        let mut p = Tensor::row(vec![0.0, 0.0]);
        let mut adam = Adam::new(&[2]);
        let lr = 1e-3;
        let mut last = p.data().to_vec();
        for i in 0..5000 {
            adam.step(&mut [&mut p], &[Some(Tensor::row(vec![0.3, -7.0]))], lr);
            let step: Vec<f64> = p.data().iter().zip(&last).map(|(a, b)| a - b).collect();
            if i == 0 || i == 4999 {
                assert!((step[0] + lr).abs() < 1e-8, "{step:?}");
                assert!((step[1] - lr).abs() < 1e-8, "{step:?}");
            }
            last = p.data().to_vec();
        }
    }

    #[test]
    fn clipping_scales_exactly() {
        let mut g = vec![Some(Tensor::row(vec![6.0, 0.0])), None, Some(Tensor::row(vec![8.0]))];
        let norm = clip_global_norm(&mut g, 5.0);
        assert_eq!(norm, 10.0);
        assert_eq!(g[0].as_ref().unwrap().data(), &[3.0, 0.0]);
        assert_eq!(g[2].as_ref().unwrap().data(), &[4.0]);
        let mut small = vec![Some(Tensor::row(vec![1.0]))];
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small[0].as_ref().unwrap().data(), &[1.0]);
    }
}
