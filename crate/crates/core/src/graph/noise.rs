use rand::Rng;
use rand_distr::StandardNormal;

use super::instance::GraphInstance;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Strictly decreasing positive noise scales σ₁ > … > σ_L.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigmas: vec![1.6, 0.8, 0.6, 0.4, 0.2, 0.1],
        }
    }
}

impl NoiseSchedule {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::invalid("noise schedule is empty"));
        }
        if sigmas.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("noise scales must be positive: {sigmas:?}")));
        }
        if sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid(format!(
                "noise scales must be strictly decreasing: {sigmas:?}"
            )));
        }
        Ok(Self { sigmas })
    }

    /// Single-level schedule, used by the supervised edge tasks.
    pub fn single(sigma: f64) -> Result<Self> {
        Self::new(vec![sigma])
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn sigma(&self, level: usize) -> f64 {
        self.sigmas[level]
    }

    pub fn smallest(&self) -> f64 {
        *self.sigmas.last().expect("schedule is nonempty")
    }
}

/// Symmetric matrix with i.i.d. standard normal upper triangle and zero diagonal.
pub fn symmetric_normal<G: Rng + ?Sized>(n: usize, rng: &mut G) -> Tensor<f64> {
    let mut z = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rng.sample(StandardNormal);
            z.set(i, j, v);
            z.set(j, i, v);
        }
    }
    z
}

/// Adds `σ·z` to every upper-triangle entry and mirrors it.
pub fn perturb<G: Rng + ?Sized>(g: &GraphInstance, sigma: f64, rng: &mut G) -> Result<GraphInstance> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("noise scale must be positive, got {sigma}")));
    }
    let n = g.n();
    let z = symmetric_normal(n, rng);
    let adj = Tensor::matrix(n, n, |i, j| g.weight(i, j) + sigma * z.at(i, j));
    let mut out = GraphInstance::from_adjacency(adj)?;
    if let Some(x) = g.node_features() {
        out = out.with_features(x.clone())?;
    }
    Ok(out)
}

/// Score of the Gaussian perturbation kernel, `−(Ã − A)/σ²`.
pub fn oracle_score(clean: &GraphInstance, noisy: &GraphInstance, sigma: f64) -> Result<Tensor<f64>> {
    oracle_score_matrix(clean.adj(), noisy.adj(), sigma)
}

pub fn oracle_score_matrix(clean: &Tensor<f64>, noisy: &Tensor<f64>, sigma: f64) -> Result<Tensor<f64>> {
    if clean.shape() != noisy.shape() {
        return Err(Error::shape("oracle_score", clean.shape(), noisy.shape()));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("noise scale must be positive, got {sigma}")));
    }
    let inv = 1.0 / (sigma * sigma);
    let n = clean.rows();
    Ok(Tensor::matrix(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            -(noisy.at(i, j) - clean.at(i, j)) * inv
        }
    }))
}

/// Thresholds at 0.5 (strictly greater maps to 1).
pub fn quantize(g: &GraphInstance) -> GraphInstance {
    quantize_matrix(g.adj())
}

pub fn quantize_matrix(m: &Tensor<f64>) -> GraphInstance {
    let n = m.rows();
    let adj = Tensor::matrix(n, n, |i, j| {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        if i != j && m.at(a, b) > 0.5 {
            1.0
        } else {
            0.0
        }
    });
    GraphInstance::from_adjacency(adj).expect("thresholded upper triangle is symmetric")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g4() -> GraphInstance {
        GraphInstance::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap()
    }

    #[test]
    fn schedule_validation() {
        assert_eq!(NoiseSchedule::default().len(), 6);
        assert_eq!(NoiseSchedule::default().smallest(), 0.1);
        assert!(NoiseSchedule::new(vec![0.5, 0.5]).is_err());
        assert!(NoiseSchedule::new(vec![1.0, -0.1]).is_err());
        assert!(NoiseSchedule::new(vec![]).is_err());
    }

    #[test]
    fn perturb_is_symmetric_and_not_binary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = perturb(&g4(), 0.3, &mut rng).unwrap();
        assert!(!p.is_binary());
        for i in 0..4 {
            assert_eq!(p.weight(i, i), 0.0);
        }
        assert!(perturb(&g4(), 0.0, &mut rng).is_err());
    }

    #[test]
    fn tiny_sigma_returns_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = perturb(&g4(), 1e-300, &mut rng).unwrap();
        assert!(p.adj().max_abs_diff(g4().adj()) < 1e-250);
    }

    #[test]
    fn oracle_score_examples() {
        let g = g4();
        assert!(oracle_score(&g, &g, 0.5).unwrap().data().iter().all(|&x| x == 0.0));
        let sigma = 0.5;
        let mut noisy = g.adj().clone();
        noisy.set(0, 1, 1.0 + sigma * sigma);
        noisy.set(1, 0, 1.0 + sigma * sigma);
        let noisy = GraphInstance::from_adjacency(noisy).unwrap();
        let s = oracle_score(&g, &noisy, sigma).unwrap();
        assert_eq!(s.at(0, 1), -1.0);
        assert_eq!(s.at(1, 0), -1.0);
        let s2 = oracle_score(&g, &noisy, 2.0 * sigma).unwrap();
        assert_eq!(s2.at(0, 1), -0.25);
    }

    #[test]
    fn quantize_threshold_is_strict() {
        let m = Tensor::new(vec![3, 3], vec![0.0, 0.3, 0.5, 0.3, 0.0, 0.7, 0.5, 0.7, 0.0]).unwrap();
        let q = quantize_matrix(&m);
        assert_eq!(q.weight(0, 1), 0.0);
        assert_eq!(q.weight(1, 2), 1.0);
        assert_eq!(q.weight(0, 2), 0.0);
        assert!(q.is_binary());
        assert_eq!(quantize(&q), q);
    }

    #[test]
    fn score_recovers_clean_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = g4();
        let sigma = 0.6;
        let noisy = perturb(&g, sigma, &mut rng).unwrap();
        let s = oracle_score(&g, &noisy, sigma).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let back = noisy.weight(i, j) + sigma * sigma * s.at(i, j);
                assert!((back - g.weight(i, j)).abs() < 1e-15);
            }
        }
    }
}
