//! Two-layer neighbor-aggregation network.
//!
//! Every node starts from its class prototype. Layer one mixes each node's
//! state with the mean of its sampled neighbors and maps it to the hidden
//! space; layer two does the same for output nodes (representatives by
//! default) and maps into the visual feature space, where the result is
//! regressed onto the training features.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hgraph::{sample_neighbors, ClassPrototype, HeteroGraph, InstanceRecord};
use crate::{Error, Result};

/// Which embedding each training instance is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossTarget {
    /// The output of its class's representative node.
    Representative,
    /// The output of its own node; every node then gets a layer-two state.
    PerNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    /// Weight of the neighbor half of each concatenation.
    pub mu: f64,
    /// Squared-Frobenius penalty on both weight matrices.
    pub xi: f64,
    pub lr: f64,
    pub leaky_slope: f64,
    pub epochs: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss_target: LossTarget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 1600,
            mu: 0.1,
            xi: 1e-3,
            lr: 1e-4,
            leaky_slope: 0.2,
            epochs: 1000,
            sample_size: 50,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            loss_target: LossTarget::Representative,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden_dim == 0 {
            return bad("hidden dimension must be positive");
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu must be finite and non-negative");
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return bad("xi must be finite and non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope.is_finite()) {
            return bad("leaky slope must be non-negative");
        }
        if self.sample_size == 0 {
            return bad("sample size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        Ok(())
    }
}

/// Weights and biases of both layers. Also used for gradients and Adam
/// moments, which share the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    /// `h x 2d`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `n x 2h`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl GnnParams {
    pub fn zeros(d: usize, h: usize, n: usize) -> Self {
        GnnParams {
            w1: Array2::zeros((h, 2 * d)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((n, 2 * h)),
            b2: Array1::zeros(n),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(d: usize, h: usize, n: usize, seed: u64) -> Result<Self> {
        if d == 0 || h == 0 || n == 0 {
            return Err(Error::dim(format!("network dims must be positive, got d={d} h={h} n={n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GnnParams::zeros(d, h, n);
        let a1 = 1.0 / ((2 * d) as f64).sqrt();
        p.w1.mapv_inplace(|_| rng.random_range(-a1..a1));
        let a2 = 1.0 / ((2 * h) as f64).sqrt();
        p.w2.mapv_inplace(|_| rng.random_range(-a2..a2));
        Ok(p)
    }

    /// `(d, h, n)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.ncols() / 2, self.w1.nrows(), self.w2.nrows())
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (d, h, n) = self.dims();
        let ok = d > 0
            && h > 0
            && n > 0
            && self.w1.ncols() == 2 * d
            && self.b1.len() == h
            && self.w2.ncols() == 2 * h
            && self.b2.len() == n;
        if ok {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "inconsistent parameter shapes: W1 {:?}, b1 {}, W2 {:?}, b2 {}",
                self.w1.dim(),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )))
        }
    }

    pub fn parts(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn parts_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_values(&self) -> usize {
        self.parts().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }

    pub fn weight_sq_norm(&self) -> f64 {
        self.w1.iter().chain(self.w2.iter()).map(|x| x * x).sum()
    }
}

/// Layer states of one forward pass. Rows of `h0` and `h1` are indexed by
/// node id; rows of `h2` follow `h2_nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStates {
    pub h0: Array2<f64>,
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
    pub h2_nodes: Vec<usize>,
}

impl NodeStates {
    pub fn embedding(&self, node: usize) -> Option<ArrayView1<'_, f64>> {
        self.h2_nodes.iter().position(|&v| v == node).map(|i| self.h2.row(i))
    }

    /// Output embedding of a class's representative.
    pub fn class_embedding(&self, graph: &HeteroGraph, class_id: u32) -> Option<ArrayView1<'_, f64>> {
        graph.rep_of_class(class_id).and_then(|r| self.embedding(r))
    }
}

pub(crate) fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Element-wise mean of the neighbor vectors, or `self_vector` when there
/// are none.
pub fn aggregate_mean(neighbor_vectors: &[&[f64]], self_vector: &[f64]) -> Result<Vec<f64>> {
    let len = self_vector.len();
    if let Some(v) = neighbor_vectors.iter().find(|v| v.len() != len) {
        return Err(Error::dim(format!("neighbor of length {} next to self of length {len}", v.len())));
    }
    if neighbor_vectors.is_empty() {
        return Ok(self_vector.to_vec());
    }
    let mut out = vec![0.0; len];
    for v in neighbor_vectors {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let k = neighbor_vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    Ok(out)
}

/// `LeakyReLU(W · [h_self; mu·h_nbr] + b)`
pub fn embed_layer(
    h_self: &[f64],
    h_nbr: &[f64],
    w: &Array2<f64>,
    b: &Array1<f64>,
    mu: f64,
    slope: f64,
) -> Result<Vec<f64>> {
    let m = h_self.len();
    if h_nbr.len() != m || w.ncols() != 2 * m || b.len() != w.nrows() {
        return Err(Error::dim(format!(
            "layer input {m}+{} against W {:?} and b {}",
            h_nbr.len(),
            w.dim(),
            b.len()
        )));
    }
    let input: Array1<f64> = h_self.iter().copied().chain(h_nbr.iter().map(|x| mu * x)).collect();
    Ok((w.dot(&input) + b).mapv(|x| leaky(x, slope)).to_vec())
}

/// Derives independent seeds from a base seed and a path of indices.
pub(crate) fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut z = base;
    for &p in path {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Everything the backward pass needs, with neighbor samples frozen.
#[derive(Debug, Clone)]
pub(crate) struct Pass {
    out_nodes: Vec<usize>,
    nb2: Vec<Vec<usize>>,
    in1: Array2<f64>,
    pub(crate) pre1: Array2<f64>,
    in2: Array2<f64>,
    pub(crate) pre2: Array2<f64>,
    states: NodeStates,
}

/// Stacks the class prototype of every node; checks coverage and widths.
fn initial_states(graph: &HeteroGraph, prototypes: &[ClassPrototype]) -> Result<Array2<f64>> {
    let table: BTreeMap<u32, &[f64]> =
        prototypes.iter().map(|p| (p.class_id, p.attributes.as_slice())).collect();
    let d = prototypes.first().map(|p| p.attributes.len()).unwrap_or(0);
    if let Some(p) = prototypes.iter().find(|p| p.attributes.len() != d) {
        return Err(Error::dim(format!("class {} has {} attributes, expected {d}", p.class_id, p.attributes.len())));
    }
    let mut h0 = Array2::zeros((graph.num_nodes(), d));
    for v in 0..graph.num_nodes() {
        let c = graph.class_of(v);
        let a = table.get(&c).ok_or_else(|| Error::Config(format!("class {c} has no prototype")))?;
        h0.row_mut(v).assign(&ArrayView1::from(*a));
    }
    Ok(h0)
}

fn mean_rows(src: &Array2<f64>, rows: &[usize], fallback: usize) -> Array1<f64> {
    if rows.is_empty() {
        return src.row(fallback).to_owned();
    }
    let mut acc = Array1::zeros(src.ncols());
    for &u in rows {
        acc += &src.row(u);
    }
    acc / rows.len() as f64
}

pub(crate) fn run_forward(
    graph: &HeteroGraph,
    prototypes: &[ClassPrototype],
    params: &GnnParams,
    cfg: &TrainConfig,
    sampling_seed: u64,
) -> Result<Pass> {
    params.check_shapes()?;
    let (d, h, n) = params.dims();
    let h0 = initial_states(graph, prototypes)?;
    if h0.ncols() != d {
        return Err(Error::dim(format!("prototypes have {} attributes, network expects {d}", h0.ncols())));
    }
    let nodes = graph.num_nodes();
    let s = cfg.sample_size;

    let mut in1 = Array2::zeros((nodes, 2 * d));
    for v in 0..nodes {
        let nb = sample_neighbors(&graph.neighbors(v), s, derive_seed(sampling_seed, &[1, v as u64]));
        in1.slice_mut(s![v, ..d]).assign(&h0.row(v));
        in1.slice_mut(s![v, d..]).assign(&(mean_rows(&h0, &nb, v) * cfg.mu));
    }
    let pre1 = in1.dot(&params.w1.t()) + &params.b1;
    let h1 = pre1.mapv(|x| leaky(x, cfg.leaky_slope));

    let out_nodes: Vec<usize> = match cfg.loss_target {
        LossTarget::Representative => graph.representatives().to_vec(),
        LossTarget::PerNode => (0..nodes).collect(),
    };
    let mut nb2 = Vec::with_capacity(out_nodes.len());
    let mut in2 = Array2::zeros((out_nodes.len(), 2 * h));
    for (m, &v) in out_nodes.iter().enumerate() {
        let nb = sample_neighbors(&graph.neighbors(v), s, derive_seed(sampling_seed, &[2, v as u64]));
        in2.slice_mut(s![m, ..h]).assign(&h1.row(v));
        in2.slice_mut(s![m, h..]).assign(&(mean_rows(&h1, &nb, v) * cfg.mu));
        nb2.push(nb);
    }
    let pre2 = in2.dot(&params.w2.t()) + &params.b2;
    let h2 = pre2.mapv(|x| leaky(x, cfg.leaky_slope));
    debug_assert_eq!(h2.ncols(), n);

    Ok(Pass {
        states: NodeStates { h0, h1, h2, h2_nodes: out_nodes.clone() },
        out_nodes,
        nb2,
        in1,
        pre1,
        in2,
        pre2,
    })
}

/// Forward pass with neighbor samples drawn from `cfg.seed`.
pub fn forward(
    graph: &HeteroGraph,
    prototypes: &[ClassPrototype],
    params: &GnnParams,
    cfg: &TrainConfig,
) -> Result<NodeStates> {
    Ok(run_forward(graph, prototypes, params, cfg, cfg.seed)?.states)
}

fn check_features(dataset: &[InstanceRecord], n: usize) -> Result<()> {
    match dataset.iter().find(|r| r.feature.len() != n) {
        Some(r) => Err(Error::dim(format!("instance {} has {} features, network outputs {n}", r.id, r.feature.len()))),
        None => Ok(()),
    }
}

/// Row of `states.h2` each instance is compared against.
fn targets(
    states: &NodeStates,
    dataset: &[InstanceRecord],
    graph: &HeteroGraph,
    target: LossTarget,
) -> Result<Vec<usize>> {
    let row_of: BTreeMap<usize, usize> = states.h2_nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    dataset
        .iter()
        .enumerate()
        .map(|(pos, r)| {
            let node = match target {
                LossTarget::Representative => graph
                    .rep_of_class(r.label)
                    .ok_or_else(|| Error::State(format!("class {} has no representative", r.label)))?,
                LossTarget::PerNode => pos,
            };
            row_of
                .get(&node)
                .copied()
                .ok_or_else(|| Error::State(format!("node {node} has no output embedding")))
        })
        .collect()
}

/// Mean squared distance between each instance's feature and its class
/// representative's embedding, plus `xi` times the squared weight norms.
pub fn loss(
    states: &NodeStates,
    dataset: &[InstanceRecord],
    graph: &HeteroGraph,
    params: &GnnParams,
    xi: f64,
) -> Result<f64> {
    loss_with_target(states, dataset, graph, params, xi, LossTarget::Representative)
}

pub fn loss_with_target(
    states: &NodeStates,
    dataset: &[InstanceRecord],
    graph: &HeteroGraph,
    params: &GnnParams,
    xi: f64,
    target: LossTarget,
) -> Result<f64> {
    check_features(dataset, states.h2.ncols())?;
    let rows = targets(states, dataset, graph, target)?;
    let mut data = 0.0;
    for (r, &row) in dataset.iter().zip(&rows) {
        data += states.h2.row(row).iter().zip(&r.feature).map(|(z, x)| (z - x) * (z - x)).sum::<f64>();
    }
    if !dataset.is_empty() {
        data /= dataset.len() as f64;
    }
    Ok(data + xi * params.weight_sq_norm())
}

/// Loss and exact gradient for one frozen neighbor sample.
pub(crate) fn loss_and_gradients(
    graph: &HeteroGraph,
    dataset: &[InstanceRecord],
    prototypes: &[ClassPrototype],
    params: &GnnParams,
    cfg: &TrainConfig,
    sampling_seed: u64,
) -> Result<(f64, GnnParams)> {
    let pass = run_forward(graph, prototypes, params, cfg, sampling_seed)?;
    let (d, h, n) = params.dims();
    check_features(dataset, n)?;
    let value = loss_with_target(&pass.states, dataset, graph, params, cfg.xi, cfg.loss_target)?;
    let rows = targets(&pass.states, dataset, graph, cfg.loss_target)?;

    let slope = cfg.leaky_slope;
    let mut dz = Array2::<f64>::zeros(pass.states.h2.dim());
    if !dataset.is_empty() {
        let scale = 2.0 / dataset.len() as f64;
        for (r, &row) in dataset.iter().zip(&rows) {
            let mut g = dz.row_mut(row);
            for ((gi, z), x) in g.iter_mut().zip(pass.states.h2.row(row)).zip(&r.feature) {
                *gi += scale * (z - x);
            }
        }
    }
    let delta2 = dz * pass.pre2.mapv(|x| leaky_grad(x, slope));
    let mut grads = GnnParams::zeros(d, h, n);
    grads.w2 = delta2.t().dot(&pass.in2);
    grads.b2 = delta2.sum_axis(Axis(0));

    let d_in2 = delta2.dot(&params.w2);
    let mut dh1 = Array2::<f64>::zeros((graph.num_nodes(), h));
    for (m, &v) in pass.out_nodes.iter().enumerate() {
        let self_part = d_in2.slice(s![m, ..h]);
        let nbr_part = d_in2.slice(s![m, h..]);
        {
            let mut row = dh1.row_mut(v);
            row += &self_part;
        }
        let nb = &pass.nb2[m];
        if nb.is_empty() {
            dh1.row_mut(v).scaled_add(cfg.mu, &nbr_part);
        } else {
            let w = cfg.mu / nb.len() as f64;
            for &u in nb {
                dh1.row_mut(u).scaled_add(w, &nbr_part);
            }
        }
    }
    let delta1 = dh1 * pass.pre1.mapv(|x| leaky_grad(x, slope));
    grads.w1 = delta1.t().dot(&pass.in1);
    grads.b1 = delta1.sum_axis(Axis(0));

    grads.w1.scaled_add(2.0 * cfg.xi, &params.w1);
    grads.w2.scaled_add(2.0 * cfg.xi, &params.w2);
    Ok((value, grads))
}

/// Gradient of the training loss with neighbor samples drawn from `cfg.seed`.
pub fn gradients(
    graph: &HeteroGraph,
    dataset: &[InstanceRecord],
    prototypes: &[ClassPrototype],
    params: &GnnParams,
    cfg: &TrainConfig,
) -> Result<GnnParams> {
    Ok(loss_and_gradients(graph, dataset, prototypes, params, cfg, cfg.seed)?.1)
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: GnnParams,
    pub v: GnnParams,
}

impl AdamMoments {
    pub fn zeros_like(p: &GnnParams) -> Self {
        let (d, h, n) = p.dims();
        AdamMoments { m: GnnParams::zeros(d, h, n), v: GnnParams::zeros(d, h, n) }
    }
}

/// One bias-corrected Adam update in place. Step index `t` starts at 1.
/// Nothing is modified when the gradient holds a non-finite value.
pub fn adam_step(
    params: &mut GnnParams,
    grads: &GnnParams,
    moments: &mut AdamMoments,
    t: u64,
    cfg: &TrainConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Config("Adam step index starts at 1".into()));
    }
    if params.dims() != grads.dims() || params.dims() != moments.m.dims() {
        return Err(Error::dim("parameter, gradient and moment shapes differ"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!("gradient at step {t}")));
    }
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let [gw1, gb1, gw2, gb2] = grads.parts();
    let g = [gw1, gb1, gw2, gb2];
    let AdamMoments { m, v } = moments;
    for (((p, g), m), v) in params.parts_mut().into_iter().zip(g).zip(m.parts_mut()).zip(v.parts_mut()) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Trained parameters and the loss before each epoch's update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: GnnParams,
    pub loss_history: Vec<f64>,
}

/// Full-batch Adam training; neighbor samples are redrawn every epoch.
pub fn train(
    graph: &HeteroGraph,
    dataset: &[InstanceRecord],
    prototypes: &[ClassPrototype],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = initial_params(dataset, prototypes, cfg)?;
    train_from(graph, dataset, prototypes, cfg, params)
}

/// Seeded initialization sized from the data.
pub fn initial_params(
    dataset: &[InstanceRecord],
    prototypes: &[ClassPrototype],
    cfg: &TrainConfig,
) -> Result<GnnParams> {
    cfg.validate()?;
    let d = prototypes.first().map(|p| p.attributes.len()).unwrap_or(0);
    let n = dataset.first().map(|r| r.feature.len()).unwrap_or(0);
    GnnParams::init(d, cfg.hidden_dim, n, derive_seed(cfg.seed, &[0]))
}

pub fn train_from(
    graph: &HeteroGraph,
    dataset: &[InstanceRecord],
    prototypes: &[ClassPrototype],
    cfg: &TrainConfig,
    mut params: GnnParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut moments = AdamMoments::zeros_like(&params);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let seed = derive_seed(cfg.seed, &[3, epoch as u64]);
        let (value, grads) = loss_and_gradients(graph, dataset, prototypes, &params, cfg, seed)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss {value} at epoch {epoch}")));
        }
        history.push(value);
        adam_step(&mut params, &grads, &mut moments, epoch as u64 + 1, cfg)?;
    }
    Ok(TrainOutcome { params, loss_history: history })
}

/// Text checkpoint: header `d h n`, then the rows of W1, b1, the rows of W2
/// and b2, one space-separated row per line.
pub fn checkpoint_to_string(p: &GnnParams) -> String {
    let (d, h, n) = p.dims();
    let mut out = format!("{d} {h} {n}\n");
    let mut row = |xs: ArrayView1<f64>| {
        let line: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    };
    p.w1.rows().into_iter().for_each(&mut row);
    row(p.b1.view());
    p.w2.rows().into_iter().for_each(&mut row);
    row(p.b2.view());
    out
}

pub fn checkpoint_from_str(text: &str, origin: &str) -> Result<GnnParams> {
    let err = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty checkpoint".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| err(1, format!("bad dimension {t:?}"))))
        .collect::<Result<_>>()?;
    let [d, h, n] = dims[..] else {
        return Err(err(1, "header must be `d h n`".into()));
    };
    if d == 0 || h == 0 || n == 0 {
        return Err(err(1, "dimensions must be positive".into()));
    }
    let mut next_row = |width: usize| -> Result<Vec<f64>> {
        let (ln, line) = lines.next().ok_or_else(|| err(0, "checkpoint ends early".into()))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(ln, format!("bad number {t:?}"))))
            .collect::<Result<_>>()?;
        if row.len() != width {
            return Err(err(ln, format!("{} values, expected {width}", row.len())));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(err(ln, "non-finite value".into()));
        }
        Ok(row)
    };
    let mut p = GnnParams::zeros(d, h, n);
    for i in 0..h {
        p.w1.row_mut(i).assign(&ArrayView1::from(&next_row(2 * d)?));
    }
    p.b1 = Array1::from(next_row(h)?);
    for i in 0..n {
        p.w2.row_mut(i).assign(&ArrayView1::from(&next_row(2 * h)?));
    }
    p.b2 = Array1::from(next_row(n)?);
    if let Some((ln, _)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(err(ln, "trailing data after b2".into()));
    }
    Ok(p)
}

/// `epoch,loss`, epochs counted from 0.
pub fn loss_history_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        out.push_str(&format!("{e},{l}\n"));
    }
    out
}
