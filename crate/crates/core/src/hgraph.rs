//! Heterogeneous instance graph over the seen classes.
//!
//! Every training instance is a node. Nodes of one class form a complete
//! subgraph, and one node per class (the representative) additionally links
//! to the representatives of its nearest classes. Node ids are positions in
//! the training dataset.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ot::{
    default_cost_matrix, normalize_to_simplex, sinkhorn_distance, wasserstein_barycenter,
    BarycenterWeights, Histogram, SinkhornConfig,
};
use crate::{Error, Result};

/// One training or test item.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub id: usize,
    pub feature: Vec<f64>,
    pub label: u32,
}

/// Semantic attribute vector of a class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype {
    pub class_id: u32,
    pub attributes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Regular,
    Representative,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Regular => "regular",
            NodeKind::Representative => "representative",
        }
    }
}

/// How the representative instance of a class is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RepSelection {
    /// Closest to the Wasserstein barycenter of the normalized features.
    WassersteinBarycenter,
    /// Closest to the arithmetic mean of the raw features.
    EuclideanBarycenter,
    /// Seeded uniform draw.
    Random,
}

/// Distance used to pick each representative's nearest classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KnnMetric {
    /// Euclidean distance between raw representative features.
    Euclidean,
    /// Sinkhorn distance between normalized representative features.
    Wasserstein,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    /// Nearest-class fan-out, shared with unseen-class neighbor selection.
    pub k: usize,
    /// Cap on sampled neighbors per node during aggregation.
    pub sample_size: usize,
    pub sinkhorn: SinkhornConfig,
    pub rep_selection: RepSelection,
    pub knn_metric: KnnMetric,
    pub intra_enabled: bool,
    pub inter_enabled: bool,
    /// Seed for [`RepSelection::Random`].
    pub seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k: 2,
            sample_size: 50,
            sinkhorn: SinkhornConfig::default(),
            rep_selection: RepSelection::WassersteinBarycenter,
            knn_metric: KnnMetric::Euclidean,
            intra_enabled: true,
            inter_enabled: true,
            seed: 0,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.sample_size == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        self.sinkhorn.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    node_kind: Vec<NodeKind>,
    class_of: Vec<u32>,
    /// Sorted class ids; a class's slot is its index here.
    classes: Vec<u32>,
    members: Vec<Vec<usize>>,
    rep_of_class: Vec<usize>,
    rep_neighbors: Vec<Vec<usize>>,
    intra_enabled: bool,
    warnings: Vec<String>,
}

impl HeteroGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_kind.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Class ids in ascending order.
    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn node_kind(&self, v: usize) -> NodeKind {
        self.node_kind[v]
    }

    pub fn class_of(&self, v: usize) -> u32 {
        self.class_of[v]
    }

    pub fn class_slot(&self, class_id: u32) -> Option<usize> {
        self.classes.binary_search(&class_id).ok()
    }

    /// Node ids of a class in ascending order, regardless of the intra switch.
    pub fn members(&self, class_id: u32) -> &[usize] {
        self.class_slot(class_id)
            .map(|s| self.members[s].as_slice())
            .unwrap_or(&[])
    }

    pub fn rep_of_class(&self, class_id: u32) -> Option<usize> {
        self.class_slot(class_id).map(|s| self.rep_of_class[s])
    }

    /// Representative node ids, one per class, in class order.
    pub fn representatives(&self) -> &[usize] {
        &self.rep_of_class
    }

    /// Nearest other representatives of the representative of `class_id`,
    /// closest first.
    pub fn rep_neighbors(&self, class_id: u32) -> &[usize] {
        self.class_slot(class_id)
            .map(|s| self.rep_neighbors[s].as_slice())
            .unwrap_or(&[])
    }

    /// Same-class neighbors of `v`, excluding `v`.
    pub fn intra_adj(&self, v: usize) -> Vec<usize> {
        if !self.intra_enabled {
            return Vec::new();
        }
        let slot = self.class_slot(self.class_of[v]).expect("node class is indexed");
        self.members[slot].iter().copied().filter(|&u| u != v).collect()
    }

    /// Full aggregation neighborhood: same-class members, plus the nearest
    /// representatives when `v` is a representative.
    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out = self.intra_adj(v);
        if self.node_kind[v] == NodeKind::Representative {
            out.extend_from_slice(self.rep_neighbors(self.class_of[v]));
        }
        out
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Adjacency dump, one line per node: `node_id kind class_id neighbors...`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for v in 0..self.num_nodes() {
            write!(out, "{} {} {}", v, self.node_kind[v].as_str(), self.class_of[v]).unwrap();
            for u in self.neighbors(v) {
                write!(out, " {u}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn check_class<'a>(instances: &[&'a InstanceRecord]) -> Result<u32> {
    let first = instances.first().ok_or(Error::EmptyClass(u32::MAX))?;
    let n = first.feature.len();
    for r in instances {
        if r.label != first.label {
            return Err(Error::Config(format!(
                "instances of class {} mixed with class {}",
                first.label, r.label
            )));
        }
        if r.feature.len() != n {
            return Err(Error::dim(format!(
                "instance {} has {} features, expected {n}",
                r.id,
                r.feature.len()
            )));
        }
    }
    Ok(first.label)
}

/// Wasserstein barycenter of a class's normalized features, uniform weights,
/// default cost.
pub fn class_barycenter(instances: &[&InstanceRecord], cfg: &GraphConfig) -> Result<Histogram> {
    check_class(instances)?;
    let hs = instances
        .iter()
        .map(|r| normalize_to_simplex(&r.feature))
        .collect::<Result<Vec<_>>>()?;
    let cost = default_cost_matrix(hs[0].len())?;
    let weights = BarycenterWeights::uniform(hs.len())?;
    Ok(wasserstein_barycenter(&hs, &weights, &cost, &cfg.sinkhorn)?.histogram)
}

/// Position (within `instances`) of the representative; ties go to the
/// smaller instance id.
fn representative_index(
    instances: &[&InstanceRecord],
    bary: &Histogram,
    cfg: &GraphConfig,
) -> Result<usize> {
    let label = check_class(instances)?;
    let scores: Vec<f64> = match cfg.rep_selection {
        RepSelection::WassersteinBarycenter => {
            let cost = default_cost_matrix(bary.len())?;
            instances
                .iter()
                .map(|r| {
                    let h = normalize_to_simplex(&r.feature)?;
                    Ok(sinkhorn_distance(&h, bary, &cost, &cfg.sinkhorn)?.cost)
                })
                .collect::<Result<_>>()?
        }
        RepSelection::EuclideanBarycenter => {
            let n = instances[0].feature.len();
            let mut mean = vec![0.0; n];
            for r in instances {
                for (m, x) in mean.iter_mut().zip(&r.feature) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= instances.len() as f64);
            instances.iter().map(|r| sq_dist(&r.feature, &mean)).collect()
        }
        RepSelection::Random => {
            let mut order: Vec<usize> = (0..instances.len()).collect();
            order.sort_by_key(|&i| instances[i].id);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (u64::from(label) << 32));
            return Ok(order[rng.random_range(0..order.len())]);
        }
    };
    Ok(argmin_by_id(instances, &scores))
}

fn argmin_by_id(instances: &[&InstanceRecord], scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..instances.len() {
        let better = scores[i] < scores[best]
            || (scores[i] == scores[best] && instances[i].id < instances[best].id);
        if better {
            best = i;
        }
    }
    best
}

/// Id of the instance chosen as the class representative.
///
/// `bary` is only consulted under [`RepSelection::WassersteinBarycenter`].
pub fn select_representative(
    instances: &[&InstanceRecord],
    bary: &Histogram,
    cfg: &GraphConfig,
) -> Result<usize> {
    let i = representative_index(instances, bary, cfg)?;
    Ok(instances[i].id)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Node ids grouped by label, labels ascending.
fn partition(dataset: &[InstanceRecord]) -> BTreeMap<u32, Vec<usize>> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (v, r) in dataset.iter().enumerate() {
        by_class.entry(r.label).or_default().push(v);
    }
    by_class
}

/// Barycenter per class in ascending class order. Only needed for
/// [`RepSelection::WassersteinBarycenter`]; computing them once lets several
/// graphs over the same data share the work.
pub fn class_barycenters(dataset: &[InstanceRecord], cfg: &GraphConfig) -> Result<Vec<Histogram>> {
    partition(dataset)
        .values()
        .map(|ids| {
            let rs: Vec<&InstanceRecord> = ids.iter().map(|&v| &dataset[v]).collect();
            class_barycenter(&rs, cfg)
        })
        .collect()
}

pub fn build_graph(
    dataset: &[InstanceRecord],
    prototypes: &[ClassPrototype],
    cfg: &GraphConfig,
) -> Result<HeteroGraph> {
    let barycenters = match cfg.rep_selection {
        RepSelection::WassersteinBarycenter => Some(class_barycenters(dataset, cfg)?),
        _ => None,
    };
    build_graph_with(dataset, prototypes, cfg, barycenters.as_deref())
}

/// [`build_graph`] with barycenters supplied by the caller (ascending class
/// order, as from [`class_barycenters`]).
pub fn build_graph_with(
    dataset: &[InstanceRecord],
    prototypes: &[ClassPrototype],
    cfg: &GraphConfig,
    barycenters: Option<&[Histogram]>,
) -> Result<HeteroGraph> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::dim("empty training set"));
    }
    let n = dataset[0].feature.len();
    if let Some(r) = dataset.iter().find(|r| r.feature.len() != n) {
        return Err(Error::dim(format!(
            "instance {} has {} features, expected {n}",
            r.id,
            r.feature.len()
        )));
    }
    let by_class = partition(dataset);
    // Prototypes of classes without instances (unseen ones) are allowed.
    for &c in by_class.keys() {
        if !prototypes.iter().any(|p| p.class_id == c) {
            return Err(Error::Config(format!("class {c} has no prototype")));
        }
    }
    if cfg.rep_selection == RepSelection::WassersteinBarycenter {
        match barycenters {
            Some(bs) if bs.len() == by_class.len() => {}
            Some(bs) => {
                return Err(Error::dim(format!(
                    "{} barycenters for {} classes",
                    bs.len(),
                    by_class.len()
                )))
            }
            None => return Err(Error::State("Wasserstein selection needs barycenters".into())),
        }
    }

    let classes: Vec<u32> = by_class.keys().copied().collect();
    let members: Vec<Vec<usize>> = by_class.into_values().collect();
    let placeholder = Histogram::uniform(n)?;
    let mut rep_of_class = Vec::with_capacity(classes.len());
    for (slot, ids) in members.iter().enumerate() {
        let rs: Vec<&InstanceRecord> = ids.iter().map(|&v| &dataset[v]).collect();
        let bary = barycenters.map(|bs| &bs[slot]).unwrap_or(&placeholder);
        rep_of_class.push(ids[representative_index(&rs, bary, cfg)?]);
    }

    let mut warnings = Vec::new();
    let rep_neighbors = if !cfg.inter_enabled {
        vec![Vec::new(); classes.len()]
    } else if classes.len() < 2 {
        warnings.push("fewer than two classes; no inter-class links".to_string());
        vec![Vec::new(); classes.len()]
    } else {
        nearest_representatives(dataset, &rep_of_class, cfg)?
    };

    let mut node_kind = vec![NodeKind::Regular; dataset.len()];
    for &r in &rep_of_class {
        node_kind[r] = NodeKind::Representative;
    }
    Ok(HeteroGraph {
        node_kind,
        class_of: dataset.iter().map(|r| r.label).collect(),
        classes,
        members,
        rep_of_class,
        rep_neighbors,
        intra_enabled: cfg.intra_enabled,
        warnings,
    })
}

/// For each representative, the `min(k, L-1)` nearest other representatives;
/// ties go to the smaller class.
fn nearest_representatives(
    dataset: &[InstanceRecord],
    reps: &[usize],
    cfg: &GraphConfig,
) -> Result<Vec<Vec<usize>>> {
    let l = reps.len();
    let mut dist = vec![vec![0.0; l]; l];
    match cfg.knn_metric {
        KnnMetric::Euclidean => {
            for a in 0..l {
                for b in 0..l {
                    dist[a][b] = euclidean(&dataset[reps[a]].feature, &dataset[reps[b]].feature);
                }
            }
        }
        KnnMetric::Wasserstein => {
            let hs = reps
                .iter()
                .map(|&r| normalize_to_simplex(&dataset[r].feature))
                .collect::<Result<Vec<_>>>()?;
            let cost = default_cost_matrix(hs[0].len())?;
            for a in 0..l {
                for b in 0..l {
                    if a != b {
                        dist[a][b] = sinkhorn_distance(&hs[a], &hs[b], &cost, &cfg.sinkhorn)?.cost;
                    }
                }
            }
        }
    }
    let take = cfg.k.min(l - 1);
    Ok((0..l)
        .map(|a| {
            let mut others: Vec<usize> = (0..l).filter(|&b| b != a).collect();
            others.sort_by(|&x, &y| dist[a][x].total_cmp(&dist[a][y]).then(x.cmp(&y)));
            others.into_iter().take(take).map(|b| reps[b]).collect()
        })
        .collect())
}

/// At most `s` of `neighbors`: the list itself when short enough, otherwise a
/// seeded uniform sample without replacement, kept in original order.
pub fn sample_neighbors(neighbors: &[usize], s: usize, seed: u64) -> Vec<usize> {
    if neighbors.len() <= s {
        return neighbors.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, neighbors.len(), s).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| neighbors[i]).collect()
}
