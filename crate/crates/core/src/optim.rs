use crate::tensor::DenseTensor;

/// Adam with the usual defaults (β1 = 0.9, β2 = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<DenseTensor>,
    second: Vec<DenseTensor>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|&(r, c)| DenseTensor::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| DenseTensor::zeros(r, c)).collect(),
        }
    }

    /// One descent step; `params` and `grads` must follow the shape order
    /// given at construction.
    pub fn step(&mut self, params: Vec<&mut DenseTensor>, grads: &[DenseTensor]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = DenseTensor::column(vec![3.0, -2.0]);
        let mut opt = Adam::new(0.1, &[(2, 1)]);
        for _ in 0..500 {
            let g = x.scaled(2.0);
            opt.step(vec![&mut x], &[g]);
        }
        assert!(x.norm() < 1e-2);
    }
}
