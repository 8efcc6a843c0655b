//! Sensor deployments, communication graphs and per-round link degradation.

use std::borrow::Cow;
use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{distance, Domain, Point};

const MAX_DEPLOY_ATTEMPTS: usize = 100;

/// Undirected communication graph; no self-loops are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    positions: Vec<Point>,
    d_comm: f64,
    neighbors: Vec<Vec<usize>>,
}

impl NetworkGraph {
    /// Disk graph: `i ~ j` iff `|x_i - x_j| <= d_comm`.
    pub fn from_positions(positions: Vec<Point>, d_comm: f64) -> Self {
        let n = positions.len();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if distance(&positions[i], &positions[j]) <= d_comm {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        NetworkGraph {
            positions,
            d_comm,
            neighbors,
        }
    }

    /// Topology-only graph from an explicit edge list. Positions are zero and
    /// the communication radius is undefined (NaN).
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(invalid(format!("bad edge ({i}, {j}) for {n} nodes")));
            }
            if !neighbors[i].contains(&j) {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(NetworkGraph {
            positions: vec![[0.0, 0.0]; n],
            d_comm: f64::NAN,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn d_comm(&self) -> f64 {
        self.d_comm
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn mean_degree(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64 / self.len() as f64
    }

    /// Undirected edges with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &v in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.hop_distances(0).iter().all(Option::is_some)
    }

    /// Longest shortest path in hops, `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for s in 0..self.len() {
            for d in self.hop_distances(s) {
                best = best.max(d?);
            }
        }
        Some(best)
    }

    /// One `i j` pair per line, `i < j`, zero-based.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, j) in self.edges() {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }
}

/// Radius giving roughly `degree` neighbours per node for `count` uniform
/// points, ignoring boundary losses.
pub fn d_comm_for_target_degree(count: usize, domain: &Domain, degree: f64) -> f64 {
    let others = count.saturating_sub(1).max(1) as f64;
    (degree * domain.area() / (std::f64::consts::PI * others)).sqrt()
}

/// Uniform positions over `domain`, redrawn until the disk graph is
/// connected.
pub fn random_geometric_deployment<R: Rng + ?Sized>(
    count: usize,
    domain: &Domain,
    d_comm: f64,
    rng: &mut R,
) -> Result<NetworkGraph> {
    if count == 0 {
        return Err(invalid("deployment needs at least one sensor"));
    }
    if !domain.is_valid() {
        return Err(invalid("deployment domain is empty"));
    }
    for _ in 0..MAX_DEPLOY_ATTEMPTS {
        let positions: Vec<Point> = (0..count)
            .map(|_| {
                [
                    domain.xmin + rng.random::<f64>() * domain.width(),
                    domain.ymin + rng.random::<f64>() * domain.height(),
                ]
            })
            .collect();
        let graph = NetworkGraph::from_positions(positions, d_comm);
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    Err(Error::Configuration(format!(
        "no connected deployment of {count} sensors with d_comm = {d_comm} in {MAX_DEPLOY_ATTEMPTS} attempts"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkModel {
    /// Every edge delivers every round.
    Sync,
    /// Each undirected lossy edge delivers in both directions with
    /// probability `p` per round.
    Async { p: f64 },
    /// Every edge delivers, but each message is truncated with probability
    /// `p`: a row `i` is drawn uniformly and rows `i..` arrive as zeros.
    PacketLoss { p: f64 },
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LinkModel::Sync => Ok(()),
            LinkModel::Async { p } | LinkModel::PacketLoss { p } => {
                if (0.0..=1.0).contains(&p) {
                    Ok(())
                } else {
                    Err(invalid(format!("link probability {p} outside [0, 1]")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub from: usize,
    pub to: usize,
    /// Zero-based first row that arrives zeroed, if the message was cut.
    pub drop_from_row: Option<usize>,
}

/// Deliveries for one consensus round.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EffectiveLinks {
    pub deliveries: Vec<Delivery>,
}

impl EffectiveLinks {
    pub fn all(graph: &NetworkGraph) -> Self {
        let deliveries = graph
            .edges()
            .into_iter()
            .flat_map(|(i, j)| {
                [
                    Delivery {
                        from: i,
                        to: j,
                        drop_from_row: None,
                    },
                    Delivery {
                        from: j,
                        to: i,
                        drop_from_row: None,
                    },
                ]
            })
            .collect();
        EffectiveLinks { deliveries }
    }
}

/// Samples one round of deliveries. `lossy` marks which undirected edges
/// (in [`NetworkGraph::edges`] order) are subject to async failures;
/// `None` means all of them. `rows` is the message height used for
/// packet-loss truncation.
pub fn effective_links<R: Rng + ?Sized>(
    graph: &NetworkGraph,
    model: &LinkModel,
    lossy: Option<&[bool]>,
    rows: usize,
    rng: &mut R,
) -> EffectiveLinks {
    let edges = graph.edges();
    let mut deliveries = Vec::with_capacity(2 * edges.len());
    for (k, (i, j)) in edges.into_iter().enumerate() {
        match *model {
            LinkModel::Sync => {
                deliveries.push(Delivery {
                    from: i,
                    to: j,
                    drop_from_row: None,
                });
                deliveries.push(Delivery {
                    from: j,
                    to: i,
                    drop_from_row: None,
                });
            }
            LinkModel::Async { p } => {
                let is_lossy = lossy.is_none_or(|l| l[k]);
                if !is_lossy || rng.random::<f64>() < p {
                    deliveries.push(Delivery {
                        from: i,
                        to: j,
                        drop_from_row: None,
                    });
                    deliveries.push(Delivery {
                        from: j,
                        to: i,
                        drop_from_row: None,
                    });
                }
            }
            LinkModel::PacketLoss { p } => {
                for (from, to) in [(i, j), (j, i)] {
                    let drop_from_row =
                        (rows > 0 && rng.random::<f64>() < p).then(|| rng.random_range(0..rows));
                    deliveries.push(Delivery {
                        from,
                        to,
                        drop_from_row,
                    });
                }
            }
        }
    }
    EffectiveLinks { deliveries }
}

/// Seeded source of per-round link decisions. Round `t` always yields the
/// same deliveries for the same seed regardless of which rounds were asked
/// for before.
#[derive(Debug, Clone)]
pub struct LinkSampler {
    model: LinkModel,
    seed: u64,
    lossy: Option<Vec<bool>>,
}

impl LinkSampler {
    /// `lossy_fraction` below 1 marks a seeded random subset of edges as
    /// lossy for the async model; the rest always deliver.
    pub fn new(
        graph: &NetworkGraph,
        model: LinkModel,
        lossy_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        model.validate()?;
        if !(0.0..=1.0).contains(&lossy_fraction) {
            return Err(invalid(format!(
                "lossy fraction {lossy_fraction} outside [0, 1]"
            )));
        }
        let lossy = (lossy_fraction < 1.0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            graph
                .edges()
                .iter()
                .map(|_| rng.random::<f64>() < lossy_fraction)
                .collect()
        });
        Ok(LinkSampler { model, seed, lossy })
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    pub fn round(&self, graph: &NetworkGraph, round: u64, rows: usize) -> EffectiveLinks {
        if self.model == LinkModel::Sync {
            return EffectiveLinks::all(graph);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(round);
        effective_links(graph, &self.model, self.lossy.as_deref(), rows, &mut rng)
    }
}

/// Graph plus link sampler plus a running round counter.
#[derive(Debug, Clone)]
pub struct Channel {
    pub graph: NetworkGraph,
    pub sampler: LinkSampler,
    next_round: u64,
}

impl Channel {
    pub fn new(graph: NetworkGraph, sampler: LinkSampler) -> Self {
        Channel {
            graph,
            sampler,
            next_round: 0,
        }
    }

    pub fn sync(graph: NetworkGraph) -> Self {
        let sampler = LinkSampler {
            model: LinkModel::Sync,
            seed: 0,
            lossy: None,
        };
        Channel::new(graph, sampler)
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn next_links(&mut self, rows: usize) -> EffectiveLinks {
        let links = self.sampler.round(&self.graph, self.next_round, rows);
        self.next_round += 1;
        links
    }
}

fn truncate_rows(m: &DMatrix<f64>, from: usize) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in from.min(m.nrows())..m.nrows() {
        out.row_mut(i).fill(0.0);
    }
    out
}

/// Routes each sensor's outgoing matrix along the delivered links. Cut
/// messages arrive with their tail rows zeroed; nothing is delivered to the
/// sender itself.
pub fn exchange<'a>(
    outboxes: &'a [DMatrix<f64>],
    links: &EffectiveLinks,
) -> Vec<Vec<Cow<'a, DMatrix<f64>>>> {
    let mut inboxes: Vec<Vec<Cow<'a, DMatrix<f64>>>> = vec![Vec::new(); outboxes.len()];
    for d in &links.deliveries {
        if d.from == d.to {
            continue;
        }
        let msg = &outboxes[d.from];
        let item = match d.drop_from_row {
            Some(row) => Cow::Owned(truncate_rows(msg, row)),
            None => Cow::Borrowed(msg),
        };
        inboxes[d.to].push(item);
    }
    inboxes
}
