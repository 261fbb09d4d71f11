//! Graph statistics and maximum mean discrepancy between graph sets.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::GraphInstance;

pub const CLUSTERING_BINS: usize = 100;

/// Order of the entries returned by [`orbit4_stats`].
pub const GRAPHLETS4: [&str; 6] = ["path", "star", "cycle", "paw", "diamond", "clique"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StatKind {
    Degree,
    Clustering,
    Orbit4,
}

impl StatKind {
    pub const ALL: [StatKind; 3] = [StatKind::Degree, StatKind::Clustering, StatKind::Orbit4];

    pub fn name(self) -> &'static str {
        match self {
            StatKind::Degree => "degree",
            StatKind::Clustering => "clustering",
            StatKind::Orbit4 => "orbit",
        }
    }

    pub fn stats(self, g: &GraphInstance) -> Vec<f64> {
        match self {
            StatKind::Degree => degree_stats(g),
            StatKind::Clustering => clustering_stats(g),
            StatKind::Orbit4 => orbit4_stats(g).to_vec(),
        }
    }
}

/// Degree histogram with bins `0..n` (at least one bin).
pub fn degree_stats(g: &GraphInstance) -> Vec<f64> {
    let mut hist = vec![0.0; g.n().max(1)];
    for d in g.degrees() {
        hist[d] += 1.0;
    }
    hist
}

/// Local clustering coefficient of every node; zero below degree 2.
pub fn clustering_coefficients(g: &GraphInstance) -> Vec<f64> {
    (0..g.n())
        .map(|i| {
            let nb: Vec<usize> = g.neighbors(i).collect();
            let d = nb.len();
            if d < 2 {
                return 0.0;
            }
            let mut tri = 0usize;
            for (a, &u) in nb.iter().enumerate() {
                for &v in &nb[a + 1..] {
                    if g.has_edge(u, v) {
                        tri += 1;
                    }
                }
            }
            2.0 * tri as f64 / (d * (d - 1)) as f64
        })
        .collect()
}

/// Clustering coefficients binned into 100 equal bins on `[0, 1]`.
pub fn clustering_stats(g: &GraphInstance) -> Vec<f64> {
    let mut hist = vec![0.0; CLUSTERING_BINS];
    for c in clustering_coefficients(g) {
        let bin = ((c * CLUSTERING_BINS as f64) as usize).min(CLUSTERING_BINS - 1);
        hist[bin] += 1.0;
    }
    hist
}

/// Counts of connected induced 4-node subgraphs by type, see [`GRAPHLETS4`].
pub fn orbit4_stats(g: &GraphInstance) -> [f64; 6] {
    let n = g.n();
    let mut counts = [0.0; 6];
    let adj: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| g.has_edge(i, j)).collect()).collect();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let nodes = [a, b, c, d];
                    let mut deg = [0usize; 4];
                    let mut edges = 0;
                    for x in 0..4 {
                        for y in x + 1..4 {
                            if adj[nodes[x]][nodes[y]] {
                                deg[x] += 1;
                                deg[y] += 1;
                                edges += 1;
                            }
                        }
                    }
                    let max = *deg.iter().max().expect("four nodes");
                    let isolated = deg.contains(&0);
                    let kind = match (edges, max) {
                        (3, 2) if !isolated => Some(0),
                        (3, 3) => Some(1),
                        (4, 2) => Some(2),
                        (4, 3) => Some(3),
                        (5, _) => Some(4),
                        (6, _) => Some(5),
                        _ => None,
                    };
                    if let Some(k) = kind {
                        counts[k] += 1.0;
                    }
                }
            }
        }
    }
    counts
}

fn binomial4(n: usize) -> f64 {
    if n < 4 {
        return 1.0;
    }
    let n = n as f64;
    n * (n - 1.0) * (n - 2.0) * (n - 3.0) / 24.0
}

/// First Wasserstein distance between two histograms on a common grid of
/// spacing `bin_width`, each normalized to unit mass; `L1(CDF_a − CDF_b)`.
///
/// An all-zero histogram is treated as a point mass at bin 0.
pub fn wasserstein1(a: &[f64], b: &[f64], bin_width: f64) -> f64 {
    let len = a.len().max(b.len());
    let mass = |h: &[f64]| h.iter().sum::<f64>();
    let (ma, mb) = (mass(a), mass(b));
    let norm = |h: &[f64], m: f64, k: usize| -> f64 {
        if m > 0.0 {
            h.get(k).copied().unwrap_or(0.0) / m
        } else if k == 0 {
            1.0
        } else {
            0.0
        }
    };
    let (mut ca, mut cb, mut total) = (0.0, 0.0, 0.0);
    for k in 0..len.saturating_sub(1) {
        ca += norm(a, ma, k);
        cb += norm(b, mb, k);
        total += (ca - cb).abs();
    }
    total * bin_width
}

/// Per-graph summary fed to the kernel.
#[derive(Clone, Debug, PartialEq)]
enum Embedding {
    Histogram { hist: Vec<f64>, bin_width: f64 },
    Vector(Vec<f64>),
}

fn embed(g: &GraphInstance, kind: StatKind) -> Embedding {
    match kind {
        StatKind::Degree => Embedding::Histogram {
            hist: degree_stats(g),
            bin_width: 1.0,
        },
        StatKind::Clustering => Embedding::Histogram {
            hist: clustering_stats(g),
            bin_width: 1.0 / CLUSTERING_BINS as f64,
        },
        StatKind::Orbit4 => {
            let total = binomial4(g.n());
            Embedding::Vector(orbit4_stats(g).iter().map(|c| c / total).collect())
        }
    }
}

fn distance(x: &Embedding, y: &Embedding) -> f64 {
    match (x, y) {
        (Embedding::Histogram { hist: a, bin_width }, Embedding::Histogram { hist: b, .. }) => {
            wasserstein1(a, b, *bin_width)
        }
        (Embedding::Vector(a), Embedding::Vector(b)) => {
            a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
        }
        _ => unreachable!("embeddings of one statistic share a variant"),
    }
}

/// Mean of `exp(−d(x, y)²/(2τ²))` over all pairs, summed in sorted order so
/// the value does not depend on the order of the two sets.
fn mean_kernel(xs: &[Embedding], ys: &[Embedding], bandwidth: f64) -> f64 {
    let mut values: Vec<f64> = xs
        .par_iter()
        .flat_map_iter(|x| {
            ys.iter().map(move |y| {
                let d = distance(x, y);
                (-d * d / (2.0 * bandwidth * bandwidth)).exp()
            })
        })
        .collect();
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Biased squared MMD with a Gaussian kernel on the statistic distance,
/// clamped at zero.
pub fn mmd(set_a: &[GraphInstance], set_b: &[GraphInstance], kind: StatKind, bandwidth: f64) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::invalid("MMD needs two nonempty graph sets"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::invalid("MMD bandwidth must be positive"));
    }
    let ea: Vec<Embedding> = set_a.par_iter().map(|g| embed(g, kind)).collect();
    let eb: Vec<Embedding> = set_b.par_iter().map(|g| embed(g, kind)).collect();
    let kaa = mean_kernel(&ea, &ea, bandwidth);
    let kbb = mean_kernel(&eb, &eb, bandwidth);
    let kab = mean_kernel(&ea, &eb, bandwidth);
    Ok((kaa + kbb - 2.0 * kab).max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MmdReport {
    pub degree: f64,
    pub clustering: f64,
    pub orbit: f64,
    pub average: f64,
    pub size_a: usize,
    pub size_b: usize,
    pub bandwidth: f64,
}

impl MmdReport {
    pub fn compute(set_a: &[GraphInstance], set_b: &[GraphInstance], bandwidth: f64) -> Result<Self> {
        let degree = mmd(set_a, set_b, StatKind::Degree, bandwidth)?;
        let clustering = mmd(set_a, set_b, StatKind::Clustering, bandwidth)?;
        let orbit = mmd(set_a, set_b, StatKind::Orbit4, bandwidth)?;
        Ok(Self {
            degree,
            clustering,
            orbit,
            average: (degree + clustering + orbit) / 3.0,
            size_a: set_a.len(),
            size_b: set_b.len(),
            bandwidth,
        })
    }

    /// `key = value` lines for the four MMD values, after a comment line
    /// with the set sizes and bandwidth.
    pub fn to_key_value(&self) -> String {
        let mut out = format!(
            "# samples {} reference {} bandwidth {}\n",
            self.size_a, self.size_b, self.bandwidth
        );
        let _ = writeln!(out, "degree = {:.10e}", self.degree);
        let _ = writeln!(out, "clustering = {:.10e}", self.clustering);
        let _ = writeln!(out, "orbit = {:.10e}", self.orbit);
        let _ = writeln!(out, "average = {:.10e}", self.average);
        out
    }

    pub const CSV_HEADER: &'static str = "degree,clustering,orbit,average,samples,reference,bandwidth";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.10e},{:.10e},{:.10e},{:.10e},{},{},{}",
            self.degree, self.clustering, self.orbit, self.average, self.size_a, self.size_b, self.bandwidth
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::erdos_renyi;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn complete(n: usize) -> GraphInstance {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0))).collect();
        GraphInstance::from_edges(n, &edges).unwrap()
    }

    fn graph(n: usize, edges: &[(usize, usize)]) -> GraphInstance {
        let e: Vec<_> = edges.iter().map(|&(u, v)| (u, v, 1.0)).collect();
        GraphInstance::from_edges(n, &e).unwrap()
    }

    #[test]
    fn degrees() {
        assert_eq!(degree_stats(&complete(4)), vec![0.0, 0.0, 0.0, 4.0]);
        let star = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        assert_eq!(star.degrees(), vec![3, 1, 1, 1]);
        assert_eq!(degree_stats(&GraphInstance::empty(5))[0], 5.0);
    }

    #[test]
    fn clustering() {
        assert_eq!(clustering_coefficients(&complete(3)), vec![1.0; 3]);
        assert_eq!(clustering_coefficients(&complete(4)), vec![1.0; 4]);
        let p3 = graph(3, &[(0, 1), (1, 2)]);
        assert_eq!(clustering_coefficients(&p3)[1], 0.0);
        assert_eq!(clustering_stats(&complete(4))[99], 4.0);
    }

    #[test]
    fn orbits() {
        assert_eq!(orbit4_stats(&complete(4)), [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(orbit4_stats(&complete(5)), [0.0, 0.0, 0.0, 0.0, 0.0, 5.0]);
        assert_eq!(orbit4_stats(&graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)])), [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(orbit4_stats(&graph(4, &[(0, 1), (0, 2), (0, 3)])), [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(orbit4_stats(&graph(4, &[(0, 1), (1, 2), (2, 3)])), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(orbit4_stats(&graph(4, &[(0, 1), (1, 2), (2, 0), (2, 3)])), [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(orbit4_stats(&graph(4, &[(0, 1), (1, 2), (2, 0)])), [0.0; 6]);
        assert_eq!(orbit4_stats(&graph(3, &[(0, 1), (1, 2)])), [0.0; 6]);
    }

    #[test]
    fn w1_basics() {
        assert_eq!(wasserstein1(&[1.0, 0.0, 0.0], &[0.0, 0.0, 2.0], 1.0), 2.0);
        assert_eq!(wasserstein1(&[1.0, 3.0], &[1.0, 3.0], 0.5), 0.0);
        assert_eq!(wasserstein1(&[1.0], &[0.0, 1.0], 1.0), 1.0);
    }

    #[test]
    fn mmd_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a: Vec<_> = (0..20).map(|_| erdos_renyi(10, 0.3, false, &mut rng)).collect();
        let b: Vec<_> = (0..15).map(|_| erdos_renyi(10, 0.5, false, &mut rng)).collect();
        for kind in StatKind::ALL {
            assert!(mmd(&a, &a, kind, 1.0).unwrap() < 1e-12);
            assert_eq!(mmd(&a, &b, kind, 1.0).unwrap(), mmd(&b, &a, kind, 1.0).unwrap());
        }
        assert!(mmd(&a, &[], StatKind::Degree, 1.0).is_err());
    }

    #[test]
    fn report_fields() {
        let g = vec![complete(5)];
        let r = MmdReport::compute(&g, &g, 1.0).unwrap();
        assert_eq!(r.average, 0.0);
        let fields = r.to_key_value().lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(fields, 4);
        assert_eq!(r.csv_row().split(',').count(), MmdReport::CSV_HEADER.split(',').count());
    }
}
