use super::params::ParamSet;

/// Adaptive moment estimation over one `ParamSet`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, (_, g))) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.iter())
            .enumerate()
        {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.values_mut().iter_mut().zip(g.values()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::DenseArray;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamSet::new();
        let id = p.insert("x", DenseArray::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(&p, 0.05);
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            let x = p.get(id).values().to_vec();
            g.get_mut(id)
                .values_mut()
                .copy_from_slice(&[2.0 * (x[0] - 1.0), 2.0 * (x[1] + 0.5)]);
            opt.step(&mut p, &g);
        }
        let x = p.get(id).values();
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3);
    }
}
