//! Inductive zero-shot inference and evaluation.
//!
//! An unseen class enters the trained network as a virtual node whose
//! initial state is its attribute vector and whose neighbors are the
//! representatives of its nearest seen classes in attribute space. The
//! resulting embedding joins the seen representatives' embeddings, and test
//! features are labeled by their nearest embedding.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array1, ArrayView1};

use crate::data::{DatasetBundle, Split};
use crate::gnn::{self, derive_seed, leaky, GnnParams, NodeStates, TrainConfig};
use crate::hgraph::{
    build_graph_with, class_barycenters, euclidean, sample_neighbors, ClassPrototype, GraphConfig,
    HeteroGraph, InstanceRecord, RepSelection,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UnseenClass {
    pub class_id: u32,
    pub attributes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictMode {
    /// Search seen and unseen classes together.
    Generalized,
    /// Search unseen classes only.
    ConventionalUnseenOnly,
    /// Search seen classes only.
    SeenOnly,
}

impl PredictMode {
    fn admits(self, split: Split) -> bool {
        match self {
            PredictMode::Generalized => true,
            PredictMode::ConventionalUnseenOnly => split == Split::Unseen,
            PredictMode::SeenOnly => split == Split::Seen,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PredictMode::Generalized => "generalized",
            PredictMode::ConventionalUnseenOnly => "unseen-only",
            PredictMode::SeenOnly => "seen-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub provenance: Split,
    pub embedding: Vec<f64>,
}

/// Class embeddings in the visual feature space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub entries: BTreeMap<u32, TableEntry>,
}

impl EmbeddingTable {
    pub fn insert(&mut self, class_id: u32, provenance: Split, embedding: Vec<f64>) -> Result<()> {
        if let Some(first) = self.entries.values().next() {
            if first.embedding.len() != embedding.len() {
                return Err(Error::dim(format!(
                    "embedding of class {class_id} has length {}, table holds {}",
                    embedding.len(),
                    first.embedding.len()
                )));
            }
        }
        self.entries.insert(class_id, TableEntry { provenance, embedding });
        Ok(())
    }

    pub fn get(&self, class_id: u32) -> Option<&TableEntry> {
        self.entries.get(&class_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `class_id,provenance,e0,..,e{n-1}`
    pub fn to_csv(&self) -> String {
        let n = self.entries.values().next().map(|e| e.embedding.len()).unwrap_or(0);
        let mut out = String::from("class_id,provenance");
        (0..n).for_each(|j| write!(out, ",e{j}").unwrap());
        out.push('\n');
        for (c, e) in &self.entries {
            write!(out, "{c},{}", e.provenance.as_str()).unwrap();
            for x in &e.embedding {
                write!(out, ",{x}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// The `min(k, L)` seen classes with the nearest prototypes, closest first,
/// ties to the smaller id.
pub fn unseen_neighbors(u: &UnseenClass, prototypes: &[ClassPrototype], k: usize) -> Result<Vec<u32>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if prototypes.is_empty() {
        return Err(Error::Config("no seen classes to link to".into()));
    }
    if let Some(p) = prototypes.iter().find(|p| p.attributes.len() != u.attributes.len()) {
        return Err(Error::dim(format!(
            "class {} has {} attributes, unseen class {} has {}",
            p.class_id,
            p.attributes.len(),
            u.class_id,
            u.attributes.len()
        )));
    }
    if prototypes.iter().any(|p| p.class_id == u.class_id) {
        return Err(Error::Config(format!("class {} is both seen and unseen", u.class_id)));
    }
    let mut scored: Vec<(f64, u32)> = prototypes
        .iter()
        .map(|p| (euclidean(&p.attributes, &u.attributes), p.class_id))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, c)| c).collect())
}

fn mean_of(rows: impl Iterator<Item = Array1<f64>>, width: usize) -> Array1<f64> {
    let mut acc = Array1::zeros(width);
    let mut count = 0usize;
    for r in rows {
        acc += &r;
        count += 1;
    }
    if count > 0 {
        acc /= count as f64;
    }
    acc
}

fn layer(self_part: ArrayView1<f64>, nbr: &Array1<f64>, w: &ndarray::Array2<f64>, b: &Array1<f64>, cfg: &TrainConfig) -> Array1<f64> {
    let input: Array1<f64> = self_part.iter().copied().chain(nbr.iter().map(|x| cfg.mu * x)).collect();
    (w.dot(&input) + b).mapv(|x| leaky(x, cfg.leaky_slope))
}

/// Embedding of an unseen class through the trained network. Reads, never
/// writes, the graph and the stored states.
pub fn embed_unseen(
    u: &UnseenClass,
    graph: &HeteroGraph,
    states: &NodeStates,
    prototypes: &[ClassPrototype],
    params: &GnnParams,
    k: usize,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    params.check_shapes()?;
    let (d, h, _) = params.dims();
    if u.attributes.len() != d {
        return Err(Error::dim(format!("unseen class {} has {} attributes, network expects {d}", u.class_id, u.attributes.len())));
    }
    if states.h0.ncols() != d || states.h1.ncols() != h || states.h1.nrows() != graph.num_nodes() {
        return Err(Error::dim("stored states do not match the network and graph"));
    }
    let seen: Vec<ClassPrototype> = prototypes
        .iter()
        .filter(|p| graph.class_slot(p.class_id).is_some())
        .cloned()
        .collect();
    let classes = unseen_neighbors(u, &seen, k)?;
    let reps: Vec<usize> = classes.iter().filter_map(|&c| graph.rep_of_class(c)).collect();
    let reps = sample_neighbors(&reps, cfg.sample_size, derive_seed(cfg.seed, &[4, u64::from(u.class_id)]));

    let own = Array1::from(u.attributes.clone());
    let agg0 = mean_of(reps.iter().map(|&r| states.h0.row(r).to_owned()), d);
    let h1 = layer(own.view(), &agg0, &params.w1, &params.b1, cfg);
    let agg1 = mean_of(reps.iter().map(|&r| states.h1.row(r).to_owned()), h);
    Ok(layer(h1.view(), &agg1, &params.w2, &params.b2, cfg).to_vec())
}

/// Seen representative embeddings plus one embedding per unseen class.
pub fn build_embedding_table(
    graph: &HeteroGraph,
    states: &NodeStates,
    prototypes: &[ClassPrototype],
    unseen: &[UnseenClass],
    params: &GnnParams,
    k: usize,
    cfg: &TrainConfig,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::default();
    for &c in graph.classes() {
        let z = states
            .class_embedding(graph, c)
            .ok_or_else(|| Error::State(format!("class {c} has no representative embedding")))?;
        table.insert(c, Split::Seen, z.to_vec())?;
    }
    for u in unseen {
        let z = embed_unseen(u, graph, states, prototypes, params, k, cfg)?;
        table.insert(u.class_id, Split::Unseen, z)?;
    }
    Ok(table)
}

/// Nearest admitted class embedding, ties to the smaller id.
pub fn predict(x: &[f64], table: &EmbeddingTable, mode: PredictMode) -> Result<u32> {
    let mut best: Option<(f64, u32)> = None;
    for (&c, e) in &table.entries {
        if !mode.admits(e.provenance) {
            continue;
        }
        if e.embedding.len() != x.len() {
            return Err(Error::dim(format!("feature of length {}, embeddings of length {}", x.len(), e.embedding.len())));
        }
        let dist: f64 = e.embedding.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.is_none_or(|(bd, _)| dist < bd) {
            best = Some((dist, c));
        }
    }
    best.map(|(_, c)| c).ok_or(Error::EmptyMode(mode.name()))
}

pub fn harmonic_mean(tr: f64, ts: f64) -> f64 {
    if tr + ts > 0.0 {
        2.0 * tr * ts / (tr + ts)
    } else {
        0.0
    }
}

/// Per-class top-1 accuracies and their seen/unseen averages, all in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GzslMetrics {
    pub per_class_acc: BTreeMap<u32, f64>,
    /// Split of every class in `per_class_acc`.
    pub split: BTreeMap<u32, Split>,
    pub ts: f64,
    pub tr: f64,
    pub h: f64,
    pub warnings: Vec<String>,
}

impl GzslMetrics {
    /// `ts=.. tr=.. H=..` in percent with one decimal.
    pub fn line(&self) -> String {
        format!("ts={:.1} tr={:.1} H={:.1}", 100.0 * self.ts, 100.0 * self.tr, 100.0 * self.h)
    }

    /// `class_id,seen_or_unseen,accuracy`
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class_id,seen_or_unseen,accuracy\n");
        for (c, acc) in &self.per_class_acc {
            writeln!(out, "{c},{},{acc}", self.split[c].as_str()).unwrap();
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Accuracy per class of the instances whose label the mode can predict.
fn class_accuracies(
    test_set: &[InstanceRecord],
    table: &EmbeddingTable,
    split: &BTreeMap<u32, Split>,
    mode: PredictMode,
) -> Result<BTreeMap<u32, f64>> {
    let mut hits: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for r in test_set {
        let s = *split
            .get(&r.label)
            .ok_or_else(|| Error::Config(format!("test label {} is neither seen nor unseen", r.label)))?;
        if !mode.admits(s) {
            continue;
        }
        let e = hits.entry(r.label).or_default();
        e.1 += 1;
        if predict(&r.feature, table, mode)? == r.label {
            e.0 += 1;
        }
    }
    Ok(hits.into_iter().map(|(c, (ok, n))| (c, ok as f64 / n as f64)).collect())
}

fn split_map(seen_ids: &[u32], unseen_ids: &[u32]) -> Result<BTreeMap<u32, Split>> {
    let mut split = BTreeMap::new();
    for &c in seen_ids {
        split.insert(c, Split::Seen);
    }
    for &c in unseen_ids {
        if split.insert(c, Split::Unseen).is_some() {
            return Err(Error::Config(format!("class {c} is both seen and unseen")));
        }
    }
    Ok(split)
}

fn assemble(
    per_class: BTreeMap<u32, f64>,
    split: &BTreeMap<u32, Split>,
    ts_from: &BTreeMap<u32, f64>,
    tr_from: &BTreeMap<u32, f64>,
) -> GzslMetrics {
    let avg = |src: &BTreeMap<u32, f64>, which: Split| {
        mean(&src.iter().filter(|(c, _)| split[c] == which).map(|(_, &a)| a).collect::<Vec<_>>())
    };
    let ts = avg(ts_from, Split::Unseen);
    let tr = avg(tr_from, Split::Seen);
    let warnings = split
        .keys()
        .filter(|c| !per_class.contains_key(c))
        .map(|c| format!("class {c} has no test instances; left out of its average"))
        .collect();
    GzslMetrics {
        split: per_class.keys().map(|c| (*c, split[c])).collect(),
        per_class_acc: per_class,
        ts,
        tr,
        h: harmonic_mean(tr, ts),
        warnings,
    }
}

/// Generalized protocol: every test instance is labeled among all classes.
pub fn evaluate(
    test_set: &[InstanceRecord],
    table: &EmbeddingTable,
    seen_ids: &[u32],
    unseen_ids: &[u32],
) -> Result<GzslMetrics> {
    let split = split_map(seen_ids, unseen_ids)?;
    let acc = class_accuracies(test_set, table, &split, PredictMode::Generalized)?;
    Ok(assemble(acc.clone(), &split, &acc, &acc))
}

/// Restricted protocol: unseen instances are labeled among unseen classes
/// only (`ts`), seen instances among seen classes only (`tr`).
pub fn evaluate_conventional(
    test_set: &[InstanceRecord],
    table: &EmbeddingTable,
    seen_ids: &[u32],
    unseen_ids: &[u32],
) -> Result<GzslMetrics> {
    let split = split_map(seen_ids, unseen_ids)?;
    let unseen = if unseen_ids.is_empty() {
        BTreeMap::new()
    } else {
        class_accuracies(test_set, table, &split, PredictMode::ConventionalUnseenOnly)?
    };
    let seen = if seen_ids.is_empty() {
        BTreeMap::new()
    } else {
        class_accuracies(test_set, table, &split, PredictMode::SeenOnly)?
    };
    let mut all = unseen.clone();
    all.extend(seen.iter().map(|(c, a)| (*c, *a)));
    Ok(assemble(all, &split, &unseen, &seen))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalMode {
    Gzsl,
    Conventional,
    Both,
}

impl EvalMode {
    pub fn gzsl(self) -> bool {
        matches!(self, EvalMode::Gzsl | EvalMode::Both)
    }

    pub fn conventional(self) -> bool {
        matches!(self, EvalMode::Conventional | EvalMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub graph: GraphConfig,
    pub train: TrainConfig,
}

impl PipelineConfig {
    /// Same seed for representative draws, initialization and sampling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.graph.seed = seed;
        self.train.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub table: EmbeddingTable,
    pub gzsl: GzslMetrics,
    pub conventional: GzslMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub graph: HeteroGraph,
    pub params: GnnParams,
    pub loss_history: Vec<f64>,
    pub evaluation: Evaluation,
}

/// Embeds every class with fixed parameters and scores the bundle's test set.
pub fn evaluate_params(
    bundle: &DatasetBundle,
    graph: &HeteroGraph,
    params: &GnnParams,
    cfg: &PipelineConfig,
) -> Result<Evaluation> {
    let states = gnn::forward(graph, &bundle.prototypes, params, &cfg.train)?;
    let table = build_embedding_table(
        graph,
        &states,
        &bundle.prototypes,
        &bundle.unseen_classes(),
        params,
        cfg.graph.k,
        &cfg.train,
    )?;
    let (seen, unseen) = (bundle.seen_ids(), bundle.unseen_ids());
    let test = &bundle.test_instances;
    Ok(Evaluation {
        gzsl: evaluate(test, &table, &seen, &unseen)?,
        conventional: evaluate_conventional(test, &table, &seen, &unseen)?,
        table,
    })
}

/// Graph construction, training and evaluation in one call.
pub fn run_pipeline(bundle: &DatasetBundle, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let barycenters = match cfg.graph.rep_selection {
        RepSelection::WassersteinBarycenter => Some(class_barycenters(&bundle.features, &cfg.graph)?),
        _ => None,
    };
    run_with_barycenters(bundle, cfg, barycenters.as_deref())
}

fn run_with_barycenters(
    bundle: &DatasetBundle,
    cfg: &PipelineConfig,
    barycenters: Option<&[crate::ot::Histogram]>,
) -> Result<PipelineOutcome> {
    bundle.validate()?;
    let graph = build_graph_with(&bundle.features, &bundle.prototypes, &cfg.graph, barycenters)?;
    let trained = gnn::train(&graph, &bundle.features, &bundle.prototypes, &cfg.train)?;
    let evaluation = evaluate_params(bundle, &graph, &trained.params, cfg)?;
    Ok(PipelineOutcome { graph, params: trained.params, loss_history: trained.loss_history, evaluation })
}

/// One point of an ablation grid: the graph switches that differ from the
/// base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AblationVariant {
    pub intra_enabled: bool,
    pub inter_enabled: bool,
    pub rep_selection: RepSelection,
}

impl AblationVariant {
    pub fn of(cfg: &GraphConfig) -> Self {
        AblationVariant {
            intra_enabled: cfg.intra_enabled,
            inter_enabled: cfg.inter_enabled,
            rep_selection: cfg.rep_selection,
        }
    }

    pub fn apply(self, cfg: &PipelineConfig) -> PipelineConfig {
        let mut out = cfg.clone();
        out.graph.intra_enabled = self.intra_enabled;
        out.graph.inter_enabled = self.inter_enabled;
        out.graph.rep_selection = self.rep_selection;
        out
    }

    pub fn label(self) -> String {
        let sel = match self.rep_selection {
            RepSelection::WassersteinBarycenter => "wasserstein",
            RepSelection::EuclideanBarycenter => "euclidean",
            RepSelection::Random => "random",
        };
        format!(
            "intra={} inter={} select={sel}",
            if self.intra_enabled { "on" } else { "off" },
            if self.inter_enabled { "on" } else { "off" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub gzsl: GzslMetrics,
    pub conventional: GzslMetrics,
}

/// Runs the pipeline once per variant with the base seed. Class barycenters
/// are computed once and shared.
pub fn run_ablation(
    bundle: &DatasetBundle,
    base: &PipelineConfig,
    grid: &[AblationVariant],
) -> Result<Vec<AblationRow>> {
    let needs_bary = grid.iter().any(|v| v.rep_selection == RepSelection::WassersteinBarycenter);
    let barycenters = if needs_bary { Some(class_barycenters(&bundle.features, &base.graph)?) } else { None };
    grid.iter()
        .map(|&variant| {
            let cfg = variant.apply(base);
            let out = run_with_barycenters(bundle, &cfg, barycenters.as_deref())?;
            Ok(AblationRow { variant, gzsl: out.evaluation.gzsl, conventional: out.evaluation.conventional })
        })
        .collect()
}

/// Rows of the ablation table: variant label followed by the metrics line.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    for r in rows {
        writeln!(out, "{} {}", r.variant.label(), r.gzsl.line()).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};
    use crate::gnn::forward;
    use crate::hgraph::build_graph;

    fn proto(c: u32, a: Vec<f64>) -> ClassPrototype {
        ClassPrototype { class_id: c, attributes: a }
    }

    #[test]
    fn neighbor_examples() {
        let ps = vec![proto(0, vec![0.0]), proto(1, vec![1.0]), proto(2, vec![4.0])];
        let u = UnseenClass { class_id: 9, attributes: vec![1.9] };
        assert_eq!(unseen_neighbors(&u, &ps, 2).unwrap(), vec![1, 0]);
        assert_eq!(unseen_neighbors(&u, &ps, 10).unwrap(), vec![1, 0, 2]);
        let on3 = UnseenClass { class_id: 9, attributes: vec![4.0] };
        assert_eq!(unseen_neighbors(&on3, &ps, 1).unwrap(), vec![2]);
        let tie = UnseenClass { class_id: 9, attributes: vec![0.5] };
        assert_eq!(unseen_neighbors(&tie, &ps, 1).unwrap(), vec![0]);
        let bad = UnseenClass { class_id: 9, attributes: vec![1.0, 2.0] };
        assert!(matches!(unseen_neighbors(&bad, &ps, 1), Err(Error::Dimension(_))));
        let clash = UnseenClass { class_id: 1, attributes: vec![1.0] };
        assert!(unseen_neighbors(&clash, &ps, 1).is_err());
    }

    fn small_setup(d: usize, h: usize, n: usize, params: Option<GnnParams>) -> (HeteroGraph, NodeStates, Vec<ClassPrototype>, GnnParams, TrainConfig) {
        let data: Vec<InstanceRecord> = (0..9)
            .map(|i| InstanceRecord { id: i, label: (i / 3) as u32, feature: (0..n).map(|j| ((i * 7 + j * 3) % 5) as f64 * 0.2).collect() })
            .collect();
        let protos: Vec<ClassPrototype> = (0..3)
            .map(|c| proto(c, (0..d).map(|j| ((c as usize + j) % 3) as f64 - 1.0).collect()))
            .collect();
        let gcfg = GraphConfig { k: 1, rep_selection: RepSelection::EuclideanBarycenter, ..GraphConfig::default() };
        let graph = build_graph(&data, &protos, &gcfg).unwrap();
        let params = params.unwrap_or_else(|| GnnParams::init(d, h, n, 3).unwrap());
        let cfg = TrainConfig { hidden_dim: h, ..TrainConfig::default() };
        let states = forward(&graph, &protos, &params, &cfg).unwrap();
        (graph, states, protos, params, cfg)
    }

    #[test]
    fn unseen_embedding_shape_and_zero_map() {
        let (graph, states, protos, params, cfg) = small_setup(3, 5, 4, None);
        let u = UnseenClass { class_id: 7, attributes: protos[0].attributes.clone() };
        let z = embed_unseen(&u, &graph, &states, &protos, &params, 1, &cfg).unwrap();
        assert_eq!(z.len(), 4);
        assert!(z.iter().all(|x| x.is_finite()));

        let (graph, states, protos, params, cfg) = small_setup(3, 5, 4, Some(GnnParams::zeros(3, 5, 4)));
        let z = embed_unseen(&u, &graph, &states, &protos, &params, 2, &cfg).unwrap();
        assert_eq!(z, vec![0.0; 4]);
    }

    #[test]
    fn unseen_embedding_matches_hand_computation() {
        let (graph, states, protos, params, cfg) = small_setup(2, 3, 2, None);
        let u = UnseenClass { class_id: 5, attributes: vec![0.3, -0.2] };
        let nb = unseen_neighbors(&u, &protos, 2).unwrap();
        let reps: Vec<usize> = nb.iter().map(|&c| graph.rep_of_class(c).unwrap()).collect();
        let agg0 = gnn::aggregate_mean(
            &reps.iter().map(|&r| states.h0.row(r).to_slice().unwrap()).collect::<Vec<_>>(),
            &u.attributes,
        )
        .unwrap();
        let h1 = gnn::embed_layer(&u.attributes, &agg0, &params.w1, &params.b1, cfg.mu, cfg.leaky_slope).unwrap();
        let agg1 = gnn::aggregate_mean(
            &reps.iter().map(|&r| states.h1.row(r).to_slice().unwrap()).collect::<Vec<_>>(),
            &h1,
        )
        .unwrap();
        let want = gnn::embed_layer(&h1, &agg1, &params.w2, &params.b2, cfg.mu, cfg.leaky_slope).unwrap();
        let got = embed_unseen(&u, &graph, &states, &protos, &params, 2, &cfg).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn embedding_leaves_inputs_untouched() {
        let (graph, states, protos, params, cfg) = small_setup(3, 5, 4, None);
        let before = (graph.clone(), states.clone(), params.clone());
        let u = UnseenClass { class_id: 8, attributes: vec![0.1, 0.2, 0.3] };
        build_embedding_table(&graph, &states, &protos, &[u], &params, 2, &cfg).unwrap();
        assert_eq!((graph, states, params), before);
    }

    fn table(rows: &[(u32, Split, Vec<f64>)]) -> EmbeddingTable {
        let mut t = EmbeddingTable::default();
        for (c, s, e) in rows {
            t.insert(*c, *s, e.clone()).unwrap();
        }
        t
    }

    #[test]
    fn predict_examples() {
        let t = table(&[(1, Split::Seen, vec![0.0, 0.0]), (2, Split::Unseen, vec![4.0, 0.0]), (7, Split::Seen, vec![2.0, 5.0])]);
        assert_eq!(predict(&[2.0, 5.0], &t, PredictMode::Generalized).unwrap(), 7);
        assert_eq!(predict(&[1.0, 0.0], &t, PredictMode::Generalized).unwrap(), 1);
        assert_eq!(predict(&[1.0, 0.0], &t, PredictMode::ConventionalUnseenOnly).unwrap(), 2);
        assert_eq!(predict(&[3.0, 0.0], &t, PredictMode::SeenOnly).unwrap(), 1);
        let twins = table(&[(4, Split::Seen, vec![1.0]), (3, Split::Unseen, vec![1.0])]);
        assert_eq!(predict(&[0.0], &twins, PredictMode::Generalized).unwrap(), 3);
        let seen_only = table(&[(1, Split::Seen, vec![0.0])]);
        assert!(matches!(predict(&[0.0], &seen_only, PredictMode::ConventionalUnseenOnly), Err(Error::EmptyMode(_))));
        assert!(predict(&[0.0, 1.0], &seen_only, PredictMode::Generalized).is_err());
    }

    #[test]
    fn harmonic_mean_examples() {
        assert!((100.0 * harmonic_mean(0.365, 0.223) - 27.7).abs() < 0.05);
        assert!((harmonic_mean(0.4, 0.4) - 0.4).abs() < 1e-15);
        assert_eq!(harmonic_mean(0.7, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    fn rec(id: usize, label: u32, f: Vec<f64>) -> InstanceRecord {
        InstanceRecord { id, label, feature: f }
    }

    #[test]
    fn evaluate_counts_per_class() {
        let t = table(&[(0, Split::Seen, vec![0.0]), (1, Split::Seen, vec![10.0]), (2, Split::Unseen, vec![5.0])]);
        let test = vec![
            rec(0, 0, vec![0.1]),
            rec(1, 0, vec![6.0]),
            rec(2, 1, vec![9.0]),
            rec(3, 2, vec![5.2]),
            rec(4, 2, vec![0.3]),
            rec(5, 2, vec![4.0]),
        ];
        let m = evaluate(&test, &t, &[0, 1], &[2]).unwrap();
        assert_eq!(m.per_class_acc[&0], 0.5);
        assert_eq!(m.per_class_acc[&1], 1.0);
        assert!((m.per_class_acc[&2] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.tr, 0.75);
        assert!((m.h - harmonic_mean(0.75, 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(m.line(), "ts=66.7 tr=75.0 H=70.6");
        assert!(m.per_class_csv().starts_with("class_id,seen_or_unseen,accuracy\n0,seen,0.5\n"));

        let c = evaluate_conventional(&test, &t, &[0, 1], &[2]).unwrap();
        assert_eq!(c.ts, 1.0);
        assert_eq!(c.per_class_acc[&0], 0.5);
    }

    #[test]
    fn absent_class_is_warned_about() {
        let t = table(&[(0, Split::Seen, vec![0.0]), (1, Split::Unseen, vec![1.0]), (2, Split::Unseen, vec![2.0])]);
        let m = evaluate(&[rec(0, 1, vec![1.0])], &t, &[0], &[1, 2]).unwrap();
        assert_eq!(m.ts, 1.0);
        assert_eq!(m.tr, 0.0);
        assert_eq!(m.warnings.len(), 2);
    }

    #[test]
    fn embedding_csv_layout() {
        let t = table(&[(3, Split::Seen, vec![0.5, 1.0]), (4, Split::Unseen, vec![-1.0, 2.0])]);
        assert_eq!(t.to_csv(), "class_id,provenance,e0,e1\n3,seen,0.5,1\n4,unseen,-1,2\n");
    }

    fn small_bundle(seed: u64) -> DatasetBundle {
        synth_generate(&SynthSpec { num_classes: 5, num_unseen: 2, instances_per_class: 6, feature_dim: 6, attribute_dim: 4, seed, ..SynthSpec::default() }).unwrap()
    }

    fn quick_cfg() -> PipelineConfig {
        PipelineConfig {
            graph: GraphConfig { rep_selection: RepSelection::EuclideanBarycenter, ..GraphConfig::default() },
            train: TrainConfig { hidden_dim: 8, epochs: 20, lr: 1e-2, ..TrainConfig::default() },
        }
    }

    #[test]
    fn single_variant_grid_equals_direct_run() {
        let b = small_bundle(2);
        let cfg = quick_cfg();
        let direct = run_pipeline(&b, &cfg).unwrap();
        let rows = run_ablation(&b, &cfg, &[AblationVariant::of(&cfg.graph)]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].gzsl, direct.evaluation.gzsl);
    }

    #[test]
    fn intra_pair_gives_two_rows() {
        let b = small_bundle(3);
        let cfg = quick_cfg();
        let on = AblationVariant::of(&cfg.graph);
        let off = AblationVariant { intra_enabled: false, ..on };
        let rows = run_ablation(&b, &cfg, &[on, off]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].variant, off);
        assert_eq!(ablation_table(&rows).lines().count(), 2);
    }

    #[test]
    fn conventional_agrees_with_generalized_on_unseen_argmin() {
        let b = small_bundle(4);
        let out = run_pipeline(&b, &quick_cfg()).unwrap();
        let t = &out.evaluation.table;
        for r in &b.test_instances {
            let g = predict(&r.feature, t, PredictMode::Generalized).unwrap();
            if t.get(g).unwrap().provenance == Split::Unseen {
                assert_eq!(predict(&r.feature, t, PredictMode::ConventionalUnseenOnly).unwrap(), g);
            }
        }
        let m = &out.evaluation.gzsl;
        assert!(m.h >= 0.0 && m.h <= (m.ts + m.tr) / 2.0 + 1e-15);
    }

    #[test]
    fn relabeling_classes_permutes_predictions() {
        let b = small_bundle(6);
        let cfg = quick_cfg();
        // Reverses the class order; node order stays as is.
        let map = |c: u32| 40 - c;
        let mut p = b.clone();
        p.features.iter_mut().chain(p.test_instances.iter_mut()).for_each(|r| r.label = map(r.label));
        p.prototypes.iter_mut().for_each(|q| q.class_id = map(q.class_id));
        p.split = b.split.iter().map(|(c, s)| (map(*c), *s)).collect();
        let a = run_pipeline(&b, &cfg).unwrap().evaluation.gzsl;
        let z = run_pipeline(&p, &cfg).unwrap().evaluation.gzsl;
        for (c, acc) in &a.per_class_acc {
            assert_eq!(z.per_class_acc[&map(*c)], *acc);
        }
        assert!((a.ts - z.ts).abs() < 1e-12 && (a.tr - z.tr).abs() < 1e-12);
    }

    #[test]
    fn untrained_accuracy_near_chance() {
        // 20 seeds of untrained networks on a 6-class problem.
        let classes = 6usize;
        let mut accs = Vec::new();
        for seed in 0..20 {
            let b = synth_generate(&SynthSpec { num_classes: classes, num_unseen: 2, instances_per_class: 10, feature_dim: 6, attribute_dim: 4, seed, ..SynthSpec::default() }).unwrap();
            let cfg = PipelineConfig { train: TrainConfig { epochs: 0, seed: seed + 1000, ..quick_cfg().train }, ..quick_cfg() };
            let out = run_pipeline(&b, &cfg).unwrap();
            let m = &out.evaluation.gzsl;
            accs.push(m.per_class_acc.values().sum::<f64>() / m.per_class_acc.len() as f64);
        }
        let k = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / k;
        let sd = (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (k - 1.0)).sqrt();
        let chance = 1.0 / classes as f64;
        assert!((mean - chance).abs() <= 3.0 * sd / k.sqrt(), "mean {mean} chance {chance} sd {sd}");
    }
}
