//! Synthetic graph datasets.

use std::path::PathBuf;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::instance::GraphInstance;
use super::io::read_graph_dir;
use crate::error::{Error, Result};

/// Host network that ego graphs are cut from.
#[derive(Clone, Debug, PartialEq)]
pub enum EgoHost {
    /// Preferential-attachment graph; a stand-in for a citation network,
    /// not equivalent to one.
    PreferentialAttachment { nodes: usize, attach: usize },
    EdgeList(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetKind {
    ErdosRenyi {
        n_min: usize,
        n_max: usize,
        p: f64,
        weighted: bool,
    },
    /// Two equal E-R halves joined by `⌈inter_fraction·N⌉` random cross edges.
    CommunitySmall {
        n_min: usize,
        n_max: usize,
        p_intra: f64,
        inter_fraction: f64,
    },
    EgoSmall {
        host: EgoHost,
        n_min: usize,
        n_max: usize,
    },
    /// Caterpillar spine plus two rounds of leaves.
    Lobster {
        n_min: usize,
        n_max: usize,
        p_leaf: f64,
    },
    EdgeListDir {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub count: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn community_small(count: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::CommunitySmall {
                n_min: 12,
                n_max: 20,
                p_intra: 0.7,
                inter_fraction: 0.05,
            },
            count,
            seed,
        }
    }

    pub fn erdos_renyi(n: usize, p: f64, count: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::ErdosRenyi {
                n_min: n,
                n_max: n,
                p,
                weighted: false,
            },
            count,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |lo: usize, hi: usize| {
            if lo > hi {
                Err(Error::invalid(format!("n_min {lo} exceeds n_max {hi}")))
            } else {
                Ok(())
            }
        };
        let prob = |p: f64, name: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {p} outside [0, 1]")))
            }
        };
        match &self.kind {
            DatasetKind::ErdosRenyi { n_min, n_max, p, .. } => {
                range(*n_min, *n_max)?;
                prob(*p, "p")
            }
            DatasetKind::CommunitySmall {
                n_min,
                n_max,
                p_intra,
                inter_fraction,
            } => {
                range(*n_min, *n_max)?;
                prob(*p_intra, "p_intra")?;
                if *inter_fraction < 0.0 {
                    return Err(Error::invalid("inter_fraction must be nonnegative"));
                }
                if (*n_min..=*n_max).all(|n| n % 2 == 1 || n < 2) {
                    return Err(Error::invalid("community sizes need an even n in range"));
                }
                Ok(())
            }
            DatasetKind::EgoSmall { n_min, n_max, host } => {
                range(*n_min, *n_max)?;
                if let EgoHost::PreferentialAttachment { nodes, attach } = host {
                    if *attach == 0 || nodes <= attach {
                        return Err(Error::invalid("host graph needs nodes > attach > 0"));
                    }
                }
                Ok(())
            }
            DatasetKind::Lobster { n_min, n_max, p_leaf } => {
                range(*n_min, *n_max)?;
                prob(*p_leaf, "p_leaf")?;
                if *n_max < 3 {
                    return Err(Error::invalid("lobster needs n_max >= 3"));
                }
                Ok(())
            }
            DatasetKind::EdgeListDir { .. } => Ok(()),
        }
    }
}

/// Generates (or loads) the dataset; equal seeds give identical output.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<GraphInstance>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match &spec.kind {
        DatasetKind::ErdosRenyi {
            n_min,
            n_max,
            p,
            weighted,
        } => Ok((0..spec.count)
            .map(|_| {
                let n = rng.random_range(*n_min..=*n_max);
                erdos_renyi(n, *p, *weighted, &mut rng)
            })
            .collect()),
        DatasetKind::CommunitySmall {
            n_min,
            n_max,
            p_intra,
            inter_fraction,
        } => {
            let sizes: Vec<usize> = (*n_min..=*n_max).filter(|n| n % 2 == 0 && *n >= 2).collect();
            Ok((0..spec.count)
                .map(|_| {
                    let n = *sizes.choose(&mut rng).expect("validated nonempty");
                    let cross = (inter_fraction * n as f64).ceil() as usize;
                    community_graph(n, *p_intra, cross, &mut rng)
                })
                .collect())
        }
        DatasetKind::EgoSmall { host, n_min, n_max } => {
            let host = match host {
                EgoHost::PreferentialAttachment { nodes, attach } => {
                    preferential_attachment(*nodes, *attach, &mut rng)
                }
                EgoHost::EdgeList(path) => super::io::read_edge_list(path)?,
            };
            ego_graphs(&host, *n_min, *n_max, spec.count, &mut rng)
        }
        DatasetKind::Lobster { n_min, n_max, p_leaf } => {
            let attempts = 1000 * spec.count.max(1);
            let mut out = Vec::with_capacity(spec.count);
            for _ in 0..attempts {
                if out.len() == spec.count {
                    break;
                }
                let g = lobster(*n_max, *p_leaf, &mut rng);
                if (*n_min..=*n_max).contains(&g.n()) {
                    out.push(g);
                }
            }
            if out.len() < spec.count {
                return Err(Error::Unreachable(format!(
                    "only {} lobster graphs within [{n_min}, {n_max}] after {attempts} attempts",
                    out.len()
                )));
            }
            Ok(out)
        }
        DatasetKind::EdgeListDir { path } => {
            let mut graphs = read_graph_dir(path, None)?;
            if spec.count > 0 && spec.count < graphs.len() {
                graphs.truncate(spec.count);
            }
            Ok(graphs)
        }
    }
}

/// G(n, p); weights are U[0, 1] when `weighted`.
pub fn erdos_renyi<G: Rng + ?Sized>(n: usize, p: f64, weighted: bool, rng: &mut G) -> GraphInstance {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                let w = if weighted {
                    // strictly positive so the edge stays present
                    loop {
                        let w: f64 = rng.random();
                        if w > 0.0 {
                            break w;
                        }
                    }
                } else {
                    1.0
                };
                edges.push((i, j, w));
            }
        }
    }
    GraphInstance::from_edges(n, &edges).expect("generated edges are valid")
}

/// Two E-R(p) blocks of `n/2` nodes plus `cross` distinct edges between them.
pub fn community_graph<G: Rng + ?Sized>(n: usize, p: f64, cross: usize, rng: &mut G) -> GraphInstance {
    let half = n / 2;
    let mut edges = Vec::new();
    for block in 0..2 {
        let offset = block * half;
        for i in 0..half {
            for j in i + 1..half {
                if rng.random::<f64>() < p {
                    edges.push((offset + i, offset + j, 1.0));
                }
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (0..half)
        .flat_map(|i| (half..n).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(rng);
    edges.extend(pairs.into_iter().take(cross).map(|(i, j)| (i, j, 1.0)));
    GraphInstance::from_edges(n, &edges).expect("generated edges are valid")
}

/// Barabási–Albert style growth: each new node links to `attach` existing
/// nodes chosen proportionally to degree.
pub fn preferential_attachment<G: Rng + ?Sized>(nodes: usize, attach: usize, rng: &mut G) -> GraphInstance {
    let mut edges = Vec::new();
    // endpoint multiset; sampling from it is degree-proportional
    let mut targets: Vec<usize> = Vec::new();
    for v in 0..=attach.min(nodes.saturating_sub(1)) {
        for u in 0..v {
            edges.push((u, v, 1.0));
            targets.extend([u, v]);
        }
    }
    for v in attach + 1..nodes {
        let mut chosen: Vec<usize> = Vec::with_capacity(attach);
        while chosen.len() < attach {
            let u = *targets.choose(rng).expect("seed clique has edges");
            if !chosen.contains(&u) {
                chosen.push(u);
            }
        }
        for u in chosen {
            edges.push((u, v, 1.0));
            targets.extend([u, v]);
        }
    }
    GraphInstance::from_edges(nodes, &edges).expect("generated edges are valid")
}

/// One-hop ego graph of `center`: the center, its neighbors, and every edge among them.
pub fn ego_graph(host: &GraphInstance, center: usize) -> GraphInstance {
    let mut nodes = vec![center];
    nodes.extend(host.neighbors(center));
    let mut edges = Vec::new();
    for (a, &u) in nodes.iter().enumerate() {
        for (b, &v) in nodes.iter().enumerate().skip(a + 1) {
            let w = host.weight(u, v);
            if w != 0.0 {
                edges.push((a, b, w));
            }
        }
    }
    GraphInstance::from_edges(nodes.len(), &edges).expect("induced subgraph is valid")
}

fn ego_graphs<G: Rng + ?Sized>(
    host: &GraphInstance,
    n_min: usize,
    n_max: usize,
    count: usize,
    rng: &mut G,
) -> Result<Vec<GraphInstance>> {
    let eligible: Vec<usize> = (0..host.n())
        .filter(|&c| (n_min..=n_max).contains(&(host.neighbors(c).count() + 1)))
        .collect();
    if eligible.is_empty() && count > 0 {
        return Err(Error::Unreachable(format!(
            "host network has no ego graph with {n_min}..={n_max} nodes"
        )));
    }
    // centers drawn with replacement; overlapping ego graphs are kept
    Ok((0..count)
        .map(|_| ego_graph(host, *eligible.choose(rng).expect("nonempty")))
        .collect())
}

/// Random lobster: a path spine of length uniform in `[3, n_max]`, then two
/// rounds in which every node of the previous layer grows a geometric number
/// of leaves with continuation probability `p_leaf`.
pub fn lobster<G: Rng + ?Sized>(n_max: usize, p_leaf: f64, rng: &mut G) -> GraphInstance {
    let spine = rng.random_range(3..=n_max.max(3));
    let mut edges: Vec<(usize, usize, f64)> = (1..spine).map(|v| (v - 1, v, 1.0)).collect();
    let mut next = spine;
    let mut layer: Vec<usize> = (0..spine).collect();
    for _ in 0..2 {
        let mut grown = Vec::new();
        for &u in &layer {
            while rng.random::<f64>() < p_leaf {
                edges.push((u, next, 1.0));
                grown.push(next);
                next += 1;
            }
        }
        layer = grown;
    }
    GraphInstance::from_edges(next, &edges).expect("generated edges are valid")
}

/// Draws node counts with the frequencies observed in a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeCountSampler {
    sizes: Vec<usize>,
}

impl NodeCountSampler {
    pub fn from_graphs(graphs: &[GraphInstance]) -> Result<Self> {
        Self::from_sizes(graphs.iter().map(GraphInstance::n).collect())
    }

    pub fn from_sizes(mut sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::invalid("node-count distribution needs at least one graph"));
        }
        sizes.sort_unstable();
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn probability(&self, n: usize) -> f64 {
        self.sizes.iter().filter(|&&s| s == n).count() as f64 / self.sizes.len() as f64
    }

    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> usize {
        self.sizes[rng.random_range(0..self.sizes.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_er() {
        let g = generate_dataset(&DatasetSpec::erdos_renyi(5, 1.0, 1, 0)).unwrap();
        assert_eq!(g[0].edge_count(), 10);
    }

    #[test]
    fn er_mean_edge_count() {
        let graphs = generate_dataset(&DatasetSpec::erdos_renyi(12, 0.3, 10_000, 7)).unwrap();
        let mean = graphs.iter().map(|g| g.edge_count() as f64).sum::<f64>() / graphs.len() as f64;
        // binomial expectation 0.3·66
        assert!((mean - 19.8).abs() / 19.8 < 0.02, "{mean}");
    }

    #[test]
    fn weighted_er_weights_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = erdos_renyi(12, 0.5, true, &mut rng);
        assert!(!g.is_binary());
        assert!(g.edges().all(|(_, _, w)| w > 0.0 && w < 1.0));
    }

    #[test]
    fn community_blocks_before_cross_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [12, 16, 20] {
            let g = community_graph(n, 0.7, 0, &mut rng);
            assert!(g.edges().all(|(i, j, _)| (i < n / 2) == (j < n / 2)));
            let g = community_graph(n, 0.7, (0.05 * n as f64).ceil() as usize, &mut rng);
            let cross = g.edges().filter(|&(i, j, _)| (i < n / 2) != (j < n / 2)).count();
            assert_eq!(cross, (0.05 * n as f64).ceil() as usize);
        }
    }

    #[test]
    fn community_sizes_even_and_in_range() {
        let graphs = generate_dataset(&DatasetSpec::community_small(200, 1)).unwrap();
        assert!(graphs.iter().all(|g| g.n() % 2 == 0 && (12..=20).contains(&g.n())));
    }

    #[test]
    fn datasets_are_reproducible() {
        let spec = DatasetSpec::community_small(20, 11);
        assert_eq!(generate_dataset(&spec).unwrap(), generate_dataset(&spec).unwrap());
        let lob = DatasetSpec {
            kind: DatasetKind::Lobster {
                n_min: 10,
                n_max: 10,
                p_leaf: 0.5,
            },
            count: 10,
            seed: 3,
        };
        let a = generate_dataset(&lob).unwrap();
        assert!(a.iter().all(|g| g.n() == 10 && g.edge_count() == 9 && g.is_connected()));
        assert_eq!(a, generate_dataset(&lob).unwrap());
    }

    #[test]
    fn ego_graphs_within_window() {
        let spec = DatasetSpec {
            kind: DatasetKind::EgoSmall {
                host: EgoHost::PreferentialAttachment {
                    nodes: 400,
                    attach: 2,
                },
                n_min: 4,
                n_max: 18,
            },
            count: 50,
            seed: 2,
        };
        let graphs = generate_dataset(&spec).unwrap();
        assert_eq!(graphs.len(), 50);
        assert!(graphs.iter().all(|g| (4..=18).contains(&g.n()) && g.is_connected()));
    }

    #[test]
    fn unreachable_ego_window_errors() {
        let spec = DatasetSpec {
            kind: DatasetKind::EgoSmall {
                host: EgoHost::PreferentialAttachment { nodes: 50, attach: 1 },
                n_min: 60,
                n_max: 70,
            },
            count: 5,
            seed: 0,
        };
        assert!(matches!(generate_dataset(&spec), Err(Error::Unreachable(_))));
    }

    #[test]
    fn node_sampler_frequencies() {
        assert!(NodeCountSampler::from_sizes(vec![]).is_err());
        let s = NodeCountSampler::from_sizes(vec![12, 20, 12, 12]).unwrap();
        assert_eq!(s.probability(12), 0.75);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = 100_000;
        let hits = (0..draws).filter(|_| s.sample(&mut rng) == 12).count();
        assert!((hits as f64 / draws as f64 - 0.75).abs() < 0.01);
        let all12 = NodeCountSampler::from_sizes(vec![12; 5]).unwrap();
        assert!((0..100).all(|_| all12.sample(&mut rng) == 12));
    }
}
