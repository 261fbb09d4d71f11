use rand::seq::SliceRandom;
use rand::Rng;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// A simple undirected graph held as a dense symmetric adjacency matrix.
///
/// Entries are edge weights; the diagonal is always zero. Optional node
/// features are an `n×F` matrix whose row `i` belongs to node `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInstance {
    adj: Tensor<f64>,
    is_binary: bool,
    node_features: Option<Tensor<f64>>,
}

impl GraphInstance {
    /// Validates symmetry and the zero diagonal of `adj`.
    pub fn from_adjacency(adj: Tensor<f64>) -> Result<Self> {
        let shape = adj.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::invalid(format!("adjacency must be square, got {shape:?}")));
        }
        let n = shape[0];
        for i in 0..n {
            if adj.at(i, i) != 0.0 {
                return Err(Error::invalid(format!("nonzero diagonal entry at node {i}")));
            }
            for j in i + 1..n {
                if adj.at(i, j) != adj.at(j, i) {
                    return Err(Error::invalid(format!("asymmetric entry at ({i}, {j})")));
                }
            }
        }
        let is_binary = adj.data().iter().all(|&x| x == 0.0 || x == 1.0);
        Ok(Self {
            adj,
            is_binary,
            node_features: None,
        })
    }

    /// Builds from the upper triangle of `matrix`, mirroring it and zeroing the diagonal.
    pub fn from_upper(matrix: &Tensor<f64>) -> Self {
        let n = matrix.rows();
        let adj = Tensor::matrix(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Less => matrix.at(i, j),
            std::cmp::Ordering::Greater => matrix.at(j, i),
            std::cmp::Ordering::Equal => 0.0,
        });
        Self::from_adjacency(adj).expect("mirrored matrix is symmetric")
    }

    pub fn empty(n: usize) -> Self {
        Self::from_adjacency(Tensor::zeros(&[n, n])).expect("zero matrix is a graph")
    }

    /// Builds from 0-based weighted edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adj = Tensor::zeros(&[n, n]);
        for &(u, v, w) in edges {
            if u >= n || v >= n || u == v {
                return Err(Error::invalid(format!("bad edge ({u}, {v}) for n = {n}")));
            }
            adj.set(u, v, w);
            adj.set(v, u, w);
        }
        Self::from_adjacency(adj)
    }

    pub fn with_features(mut self, features: Tensor<f64>) -> Result<Self> {
        if features.rank() != 2 || features.rows() != self.n() {
            return Err(Error::shape("node_features", &[self.n()], features.shape()));
        }
        self.node_features = Some(features);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.adj.rows()
    }

    pub fn adj(&self) -> &Tensor<f64> {
        &self.adj
    }

    pub fn into_adj(self) -> Tensor<f64> {
        self.adj
    }

    pub fn is_binary(&self) -> bool {
        self.is_binary
    }

    pub fn node_features(&self) -> Option<&Tensor<f64>> {
        self.node_features.as_ref()
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adj.at(i, j)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj.at(i, j) != 0.0
    }

    /// Edges `(i, j, w)` with `i < j` and nonzero weight.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j, self.adj.at(i, j))))
            .filter(|&(_, _, w)| w != 0.0)
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&j| self.adj.at(i, j) != 0.0)
    }

    /// Number of incident edges of every node.
    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n()).map(|i| self.neighbors(i).count()).collect()
    }

    /// Row sums of the adjacency matrix.
    pub fn weighted_degrees(&self) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|i| (0..n).map(|j| self.adj.at(i, j)).sum()).collect()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Relabels nodes so that node `i` of the result is node `π(i)` of `self`.
    pub fn permute(&self, perm: &Permutation) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::invalid(format!(
                "permutation of {} indices applied to a graph of {n} nodes",
                perm.len()
            )));
        }
        let adj = perm.apply_matrix(&self.adj)?;
        let node_features = self
            .node_features
            .as_ref()
            .map(|x| Tensor::matrix(n, x.cols(), |i, f| x.at(perm.get(i), f)));
        Ok(Self {
            adj,
            is_binary: self.is_binary,
            node_features,
        })
    }
}

/// A bijection on `{0, …, n-1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || seen[m] {
                return Err(Error::invalid(format!("not a bijection: {mapping:?}")));
            }
            seen[m] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn random<G: Rng + ?Sized>(n: usize, rng: &mut G) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Self { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self { mapping: inv }
    }

    /// `out[i, j] = m[π(i), π(j)]` for a square matrix.
    pub fn apply_matrix<R: crate::Real>(&self, m: &Tensor<R>) -> Result<Tensor<R>> {
        let n = self.len();
        if m.shape() != [n, n] {
            return Err(Error::shape("permute", &[n, n], m.shape()));
        }
        Ok(Tensor::matrix(n, n, |i, j| m.at(self.mapping[i], self.mapping[j])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3() -> GraphInstance {
        GraphInstance::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn rejects_asymmetric_and_loops() {
        let mut a = Tensor::zeros(&[2, 2]);
        a.set(0, 1, 1.0);
        assert!(GraphInstance::from_adjacency(a.clone()).is_err());
        a.set(1, 0, 1.0);
        a.set(0, 0, 1.0);
        assert!(GraphInstance::from_adjacency(a).is_err());
    }

    #[test]
    fn identity_permutation_is_noop() {
        let g = path3();
        assert_eq!(g.permute(&Permutation::identity(3)).unwrap(), g);
    }

    #[test]
    fn swapping_path_ends_keeps_structure() {
        let g = path3();
        let h = g.permute(&Permutation::new(vec![2, 1, 0]).unwrap()).unwrap();
        assert_eq!(h.edge_count(), 2);
        let mut d = h.degrees();
        d.sort();
        assert_eq!(d, vec![1, 1, 2]);
    }

    #[test]
    fn permutation_inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GraphInstance::from_edges(5, &[(0, 3, 0.25), (1, 4, 2.0), (2, 3, 1.0)])
            .unwrap()
            .with_features(Tensor::from_fn(&[5, 2], |k| k as f64))
            .unwrap();
        for _ in 0..20 {
            let p = Permutation::random(5, &mut rng);
            assert_eq!(g.permute(&p).unwrap().permute(&p.inverse()).unwrap(), g);
        }
    }

    #[test]
    fn size_mismatch_is_error() {
        assert!(path3().permute(&Permutation::identity(4)).is_err());
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
    }
}
