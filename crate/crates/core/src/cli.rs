//! Command-line front end.
//!
//! Settings resolve as built-in defaults, then an optional `key=value`
//! config file, then flags. Every command writes its artifacts into one run
//! directory together with `manifest.txt`, which lists input files, the
//! resolved configuration and SHA-256 hashes of everything written.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::data::{self, load_dataset, save_dataset, synth_generate, DatasetBundle, DatasetPaths, SynthSpec};
use crate::gnn::{self, LossTarget, TrainConfig};
use crate::hgraph::{self, build_graph, GraphConfig, InstanceRecord, KnnMetric, RepSelection};
use crate::ot::{histograms_to_csv, SinkhornConfig};
use crate::zsl::{self, AblationVariant, EvalMode, PipelineConfig};
use crate::{Error, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HGKT_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "hgkt-runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Gzsl,
    Conventional,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionArg {
    Wasserstein,
    Euclidean,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KnnArg {
    Euclidean,
    Wasserstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Representative,
    PerNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridAxis {
    /// Intra-class edges on and off.
    Intra,
    /// Inter-class edges on and off.
    Inter,
    /// Wasserstein, Euclidean and random representatives.
    Select,
}

/// Every tunable setting of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hidden_dim: usize,
    pub k: usize,
    pub mu: f64,
    pub xi: f64,
    pub lr: f64,
    pub leaky_slope: f64,
    pub epsilon: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    pub sample_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: ModeArg,
    pub rep_selection: SelectionArg,
    pub knn_metric: KnnArg,
    pub intra: bool,
    pub inter: bool,
    pub loss_target: TargetArg,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hidden_dim: 1600,
            k: 2,
            mu: 0.1,
            xi: 1e-3,
            lr: 1e-4,
            leaky_slope: 0.2,
            epsilon: 1e-5,
            sinkhorn_max_iter: 10_000,
            sinkhorn_tol: 1e-6,
            sample_size: 50,
            epochs: 1000,
            seed: 0,
            mode: ModeArg::Both,
            rep_selection: SelectionArg::Wasserstein,
            knn_metric: KnnArg::Euclidean,
            intra: true,
            inter: true,
            loss_target: TargetArg::Representative,
        }
    }
}

fn value_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

fn parse_enum<T: ValueEnum>(key: &str, value: &str) -> Result<T> {
    T::from_str(value, true).map_err(|_| Error::Config(format!("{key}: unknown value {value:?}")))
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected on or off, got {value:?}"))),
    }
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl RunConfig {
    /// Sets one field by its flag name; underscores and dashes are
    /// interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let k = key.as_str();
        let v = value.trim();
        match k {
            "hidden-dim" => self.hidden_dim = parse_value(k, v)?,
            "k" => self.k = parse_value(k, v)?,
            "mu" => self.mu = parse_value(k, v)?,
            "xi" => self.xi = parse_value(k, v)?,
            "lr" => self.lr = parse_value(k, v)?,
            "leaky-slope" => self.leaky_slope = parse_value(k, v)?,
            "epsilon" => self.epsilon = parse_value(k, v)?,
            "sinkhorn-max-iter" => self.sinkhorn_max_iter = parse_value(k, v)?,
            "sinkhorn-tol" => self.sinkhorn_tol = parse_value(k, v)?,
            "sample-size" => self.sample_size = parse_value(k, v)?,
            "epochs" => self.epochs = parse_value(k, v)?,
            "seed" => self.seed = parse_value(k, v)?,
            "mode" => self.mode = parse_enum(k, v)?,
            "rep-selection" => self.rep_selection = parse_enum(k, v)?,
            "knn-metric" => self.knn_metric = parse_enum(k, v)?,
            "intra" => self.intra = parse_switch(k, v)?,
            "inter" => self.inter = parse_switch(k, v)?,
            "loss-target" => self.loss_target = parse_enum(k, v)?,
            _ => return Err(Error::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse = |msg: String| Error::Parse { path: path.display().to_string(), line: i + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| parse("expected key=value".into()))?;
            self.set(key, value).map_err(|e| parse(e.to_string()))?;
        }
        Ok(())
    }

    /// Inverse of [`RunConfig::apply_file`]; the output reloads to `self`.
    pub fn to_config_text(&self) -> String {
        let pairs: Vec<(&str, String)> = vec![
            ("hidden-dim", self.hidden_dim.to_string()),
            ("k", self.k.to_string()),
            ("mu", self.mu.to_string()),
            ("xi", self.xi.to_string()),
            ("lr", self.lr.to_string()),
            ("leaky-slope", self.leaky_slope.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("sinkhorn-max-iter", self.sinkhorn_max_iter.to_string()),
            ("sinkhorn-tol", self.sinkhorn_tol.to_string()),
            ("sample-size", self.sample_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("mode", value_name(self.mode)),
            ("rep-selection", value_name(self.rep_selection)),
            ("knn-metric", value_name(self.knn_metric)),
            ("intra", switch(self.intra).to_string()),
            ("inter", switch(self.inter).to_string()),
            ("loss-target", value_name(self.loss_target)),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let graph = GraphConfig {
            k: self.k,
            sample_size: self.sample_size,
            sinkhorn: SinkhornConfig {
                epsilon: self.epsilon,
                max_iter: self.sinkhorn_max_iter,
                marginal_tol: self.sinkhorn_tol,
                ..SinkhornConfig::default()
            },
            rep_selection: match self.rep_selection {
                SelectionArg::Wasserstein => RepSelection::WassersteinBarycenter,
                SelectionArg::Euclidean => RepSelection::EuclideanBarycenter,
                SelectionArg::Random => RepSelection::Random,
            },
            knn_metric: match self.knn_metric {
                KnnArg::Euclidean => KnnMetric::Euclidean,
                KnnArg::Wasserstein => KnnMetric::Wasserstein,
            },
            intra_enabled: self.intra,
            inter_enabled: self.inter,
            seed: self.seed,
        };
        let train = TrainConfig {
            hidden_dim: self.hidden_dim,
            mu: self.mu,
            xi: self.xi,
            lr: self.lr,
            leaky_slope: self.leaky_slope,
            epochs: self.epochs,
            sample_size: self.sample_size,
            seed: self.seed,
            loss_target: match self.loss_target {
                TargetArg::Representative => LossTarget::Representative,
                TargetArg::PerNode => LossTarget::PerNode,
            },
            ..TrainConfig::default()
        };
        PipelineConfig { graph, train }
    }

    pub fn eval_mode(&self) -> EvalMode {
        match self.mode {
            ModeArg::Gzsl => EvalMode::Gzsl,
            ModeArg::Conventional => EvalMode::Conventional,
            ModeArg::Both => EvalMode::Both,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hgkt", version, about = "Graph-based knowledge transfer for generalized zero-shot learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset bundle.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the Wasserstein barycenter of one class's training features.
    Barycenter {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        class: u32,
    },
    /// Build the instance graph and write its adjacency dump.
    BuildGraph {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train the network; writes a checkpoint and the loss curve.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint on the bundle's test set.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run an ablation grid over graph switches and representative choice.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Axes to vary, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "intra,inter,select")]
        grid: Vec<GridAxis>,
    },
    /// Load or synthesize data, then build, train and evaluate.
    Pipeline {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Bundle directory holding features.csv, attributes.csv, split.csv and test.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    attributes: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

impl DataArgs {
    fn given(&self) -> bool {
        self.data.is_some()
            || self.features.is_some()
            || self.attributes.is_some()
            || self.split.is_some()
            || self.test.is_some()
    }

    fn paths(&self) -> Result<DatasetPaths> {
        let base = self.data.as_deref().map(DatasetPaths::in_dir);
        let pick = |own: &Option<PathBuf>, from_dir: Option<&PathBuf>, name: &str| {
            own.clone()
                .or_else(|| from_dir.cloned())
                .ok_or_else(|| Error::Config(format!("no {name} file: pass --data or --{name}")))
        };
        Ok(DatasetPaths {
            features: pick(&self.features, base.as_ref().map(|b| &b.features), "features")?,
            attributes: pick(&self.attributes, base.as_ref().map(|b| &b.attributes), "attributes")?,
            split: pick(&self.split, base.as_ref().map(|b| &b.split), "split")?,
            test: pick(&self.test, base.as_ref().map(|b| &b.test), "test")?,
        })
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    unseen: usize,
    #[arg(long, default_value_t = 30)]
    per_class: usize,
    #[arg(long, default_value_t = 20)]
    feature_dim: usize,
    #[arg(long, default_value_t = 10)]
    attribute_dim: usize,
    #[arg(long, default_value_t = 0.3)]
    spread: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Rank of the class-center subspace; 0 draws centers at full rank.
    #[arg(long, default_value_t = 5)]
    center_rank: usize,
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
}

impl SynthArgs {
    fn spec(&self) -> SynthSpec {
        SynthSpec {
            num_classes: self.classes,
            num_unseen: self.unseen,
            instances_per_class: self.per_class,
            feature_dim: self.feature_dim,
            attribute_dim: self.attribute_dim,
            cluster_spread: self.spread,
            attribute_noise: self.noise,
            center_rank: (self.center_rank > 0).then_some(self.center_rank),
            seed: self.synth_seed,
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// key=value settings applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parent of run directories; defaults to $HGKT_OUT_DIR, then ./hgkt-runs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run directory name under the output directory; defaults to the command name.
    #[arg(long)]
    run_name: Option<String>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    leaky_slope: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    sinkhorn_max_iter: Option<usize>,
    #[arg(long)]
    sinkhorn_tol: Option<f64>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    rep_selection: Option<SelectionArg>,
    #[arg(long, value_enum)]
    knn_metric: Option<KnnArg>,
    /// on or off
    #[arg(long)]
    intra: Option<String>,
    /// on or off
    #[arg(long)]
    inter: Option<String>,
    #[arg(long, value_enum)]
    loss_target: Option<TargetArg>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        take!(hidden_dim, k, mu, xi, lr, leaky_slope, epsilon, sinkhorn_max_iter, sinkhorn_tol,
              sample_size, epochs, seed, mode, rep_selection, knn_metric, loss_target);
        if let Some(v) = &self.intra {
            c.intra = parse_switch("intra", v)?;
        }
        if let Some(v) = &self.inter {
            c.inter = parse_switch("inter", v)?;
        }
        Ok(c)
    }

    fn run_dir(&self, command: &str) -> PathBuf {
        let parent = self
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        parent.join(self.run_name.as_deref().unwrap_or(command))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects artifacts of one run and writes them with a manifest.
struct RunDir {
    dir: PathBuf,
    inputs: Vec<(String, String)>,
    artifacts: Vec<(String, String)>,
    config: Option<String>,
}

impl RunDir {
    fn create(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(RunDir { dir, inputs: Vec::new(), artifacts: Vec::new(), config: None })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push((path.display().to_string(), sha256_hex(&bytes)));
        Ok(())
    }

    fn inputs(&mut self, paths: &DatasetPaths) -> Result<()> {
        for p in [&paths.features, &paths.attributes, &paths.split, &paths.test] {
            self.input(p)?;
        }
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        data::write_file(&path, contents)?;
        self.artifacts.push((name.to_string(), sha256_hex(contents.as_bytes())));
        Ok(path)
    }

    fn config(&mut self, cfg: &RunConfig) -> Result<()> {
        let text = cfg.to_config_text();
        self.write("config.txt", &text)?;
        self.config = Some(text);
        Ok(())
    }

    fn finish(self) -> Result<PathBuf> {
        let mut m = String::new();
        for (path, hash) in &self.inputs {
            writeln!(m, "input {path} sha256={hash}").unwrap();
        }
        if let Some(cfg) = &self.config {
            for line in cfg.lines() {
                writeln!(m, "config {line}").unwrap();
            }
        }
        for (name, hash) in &self.artifacts {
            writeln!(m, "artifact {name} sha256={hash}").unwrap();
        }
        let path = self.dir.join("manifest.txt");
        data::write_file(&path, &m)?;
        Ok(self.dir)
    }
}

fn load(data_args: &DataArgs, run: &mut RunDir) -> Result<DatasetBundle> {
    let paths = data_args.paths()?;
    let bundle = load_dataset(&paths)?;
    run.inputs(&paths)?;
    Ok(bundle)
}

fn report_warnings(ws: &[String]) {
    for w in ws {
        eprintln!("warning: {w}");
    }
}

fn metrics_text(eval: &zsl::Evaluation, mode: EvalMode) -> String {
    let mut out = String::new();
    if mode.gzsl() {
        writeln!(out, "mode=gzsl {}", eval.gzsl.line()).unwrap();
    }
    if mode.conventional() {
        writeln!(out, "mode=conventional {}", eval.conventional.line()).unwrap();
    }
    out
}

fn write_evaluation(run: &mut RunDir, eval: &zsl::Evaluation, mode: EvalMode) -> Result<String> {
    let text = metrics_text(eval, mode);
    run.write("metrics.txt", &text)?;
    if mode.gzsl() {
        run.write("per_class.csv", &eval.gzsl.per_class_csv())?;
        report_warnings(&eval.gzsl.warnings);
    }
    if mode.conventional() {
        run.write("per_class_conventional.csv", &eval.conventional.per_class_csv())?;
        if !mode.gzsl() {
            report_warnings(&eval.conventional.warnings);
        }
    }
    run.write("embeddings.csv", &eval.table.to_csv())?;
    Ok(text)
}

fn ablation_grid(base: &GraphConfig, axes: &[GridAxis]) -> Vec<AblationVariant> {
    let first = AblationVariant::of(base);
    let mut grid = vec![first];
    let mut push = |v: AblationVariant| {
        if !grid.contains(&v) {
            grid.push(v);
        }
    };
    for axis in axes {
        match axis {
            GridAxis::Intra => push(AblationVariant { intra_enabled: !first.intra_enabled, ..first }),
            GridAxis::Inter => push(AblationVariant { inter_enabled: !first.inter_enabled, ..first }),
            GridAxis::Select => {
                for sel in [RepSelection::WassersteinBarycenter, RepSelection::EuclideanBarycenter, RepSelection::Random] {
                    push(AblationVariant { rep_selection: sel, ..first });
                }
            }
        }
    }
    grid
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::Synth { synth, out } => {
            let bundle = synth_generate(&synth.spec())?;
            save_dataset(&bundle, &out)?;
            println!("wrote {} training and {} test instances to {}", bundle.features.len(), bundle.test_instances.len(), out.display());
        }
        Command::Barycenter { data, run, class } => {
            let cfg = run.resolve()?;
            let mut dir = RunDir::create(run.run_dir("barycenter"))?;
            let bundle = load(&data, &mut dir)?;
            let members: Vec<&InstanceRecord> = bundle.features.iter().filter(|r| r.label == class).collect();
            if members.is_empty() {
                return Err(Error::EmptyClass(class));
            }
            let bary = hgraph::class_barycenter(&members, &cfg.pipeline().graph)?;
            let csv = histograms_to_csv(std::slice::from_ref(&bary));
            dir.config(&cfg)?;
            dir.write("barycenter.csv", &csv)?;
            dir.finish()?;
            print!("{csv}");
        }
        Command::BuildGraph { data, run } => {
            let cfg = run.resolve()?;
            let mut dir = RunDir::create(run.run_dir("build-graph"))?;
            let bundle = load(&data, &mut dir)?;
            let p = cfg.pipeline();
            let graph = build_graph(&bundle.features, &bundle.prototypes, &p.graph)?;
            report_warnings(graph.warnings());
            dir.config(&cfg)?;
            let path = dir.write("graph.txt", &graph.dump())?;
            dir.finish()?;
            println!("graph with {} nodes and {} classes written to {}", graph.num_nodes(), graph.num_classes(), path.display());
        }
        Command::Train { data, run } => {
            let cfg = run.resolve()?;
            let mut dir = RunDir::create(run.run_dir("train"))?;
            let bundle = load(&data, &mut dir)?;
            let p = cfg.pipeline();
            let graph = build_graph(&bundle.features, &bundle.prototypes, &p.graph)?;
            report_warnings(graph.warnings());
            let out = gnn::train(&graph, &bundle.features, &bundle.prototypes, &p.train)?;
            dir.config(&cfg)?;
            dir.write("graph.txt", &graph.dump())?;
            let ck = dir.write("checkpoint.txt", &gnn::checkpoint_to_string(&out.params))?;
            dir.write("loss.csv", &gnn::loss_history_csv(&out.loss_history))?;
            dir.finish()?;
            match (out.loss_history.first(), out.loss_history.last()) {
                (Some(a), Some(b)) => println!("loss {a} -> {b}; checkpoint {}", ck.display()),
                _ => println!("no epochs run; checkpoint {}", ck.display()),
            }
        }
        Command::Eval { data, run, checkpoint } => {
            let cfg = run.resolve()?;
            let text = fs::read_to_string(&checkpoint).map_err(|e| Error::io(&checkpoint, e))?;
            let params = gnn::checkpoint_from_str(&text, &checkpoint.display().to_string())?;
            let mut dir = RunDir::create(run.run_dir("eval"))?;
            let bundle = load(&data, &mut dir)?;
            dir.input(&checkpoint)?;
            let p = cfg.pipeline();
            let graph = build_graph(&bundle.features, &bundle.prototypes, &p.graph)?;
            let eval = zsl::evaluate_params(&bundle, &graph, &params, &p)?;
            dir.config(&cfg)?;
            let lines = write_evaluation(&mut dir, &eval, cfg.eval_mode())?;
            dir.finish()?;
            print!("{lines}");
        }
        Command::Ablate { data, run, grid } => {
            let cfg = run.resolve()?;
            let mut dir = RunDir::create(run.run_dir("ablate"))?;
            let bundle = load(&data, &mut dir)?;
            let p = cfg.pipeline();
            let rows = zsl::run_ablation(&bundle, &p, &ablation_grid(&p.graph, &grid))?;
            let table = zsl::ablation_table(&rows);
            dir.config(&cfg)?;
            dir.write("ablation.txt", &table)?;
            dir.finish()?;
            print!("{table}");
        }
        Command::Pipeline { data, synth, run } => {
            let cfg = run.resolve()?;
            let mut dir = RunDir::create(run.run_dir("pipeline"))?;
            let bundle = if data.given() {
                load(&data, &mut dir)?
            } else {
                let bundle = synth_generate(&synth.spec())?;
                let paths = save_dataset(&bundle, &dir.dir.join("data"))?;
                dir.inputs(&paths)?;
                bundle
            };
            let p = cfg.pipeline();
            let out = zsl::run_pipeline(&bundle, &p)?;
            report_warnings(out.graph.warnings());
            dir.config(&cfg)?;
            dir.write("graph.txt", &out.graph.dump())?;
            dir.write("checkpoint.txt", &gnn::checkpoint_to_string(&out.params))?;
            dir.write("loss.csv", &gnn::loss_history_csv(&out.loss_history))?;
            let lines = write_evaluation(&mut dir, &out.evaluation, cfg.eval_mode())?;
            dir.finish()?;
            print!("{lines}");
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status: 0 on success, 2 on usage errors, 1 on failures.
pub fn cmd_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = RunConfig::default();
        assert_eq!((c.hidden_dim, c.k, c.sample_size), (1600, 2, 50));
        assert_eq!((c.mu, c.xi, c.lr, c.leaky_slope, c.epsilon), (0.1, 1e-3, 1e-4, 0.2, 1e-5));
    }

    #[test]
    fn config_text_round_trips() {
        let mut c = RunConfig::default();
        c.set("hidden_dim", "64").unwrap();
        c.set("mode", "gzsl").unwrap();
        c.set("rep-selection", "random").unwrap();
        c.set("inter", "off").unwrap();
        c.set("mu", "0.01").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        fs::write(&path, format!("# saved\n\n{}", c.to_config_text())).unwrap();
        let mut back = RunConfig::default();
        back.apply_file(&path).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_settings_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("colour", "blue").is_err());
        assert!(c.set("k", "two").is_err());
        assert!(c.set("intra", "maybe").is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        fs::write(&path, "k=3\nnot a pair\n").unwrap();
        match c.apply_file(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        fs::write(&path, "k=3\nmu=0.5\n").unwrap();
        let cli = Cli::try_parse_from([
            "hgkt", "build-graph", "--data", "x", "--config", path.to_str().unwrap(), "--k", "4",
        ])
        .unwrap();
        let Command::BuildGraph { run, .. } = cli.command else { panic!() };
        let c = run.resolve().unwrap();
        assert_eq!((c.k, c.mu), (4, 0.5));
    }

    #[test]
    fn grid_axes_expand_from_base() {
        let base = GraphConfig::default();
        assert_eq!(ablation_grid(&base, &[GridAxis::Intra]).len(), 2);
        assert_eq!(ablation_grid(&base, &[GridAxis::Select]).len(), 3);
        assert_eq!(ablation_grid(&base, &[GridAxis::Intra, GridAxis::Inter, GridAxis::Select]).len(), 5);
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(cmd_dispatch(["hgkt", "train", "--no-such-flag"]), 2);
        assert_eq!(cmd_dispatch(["hgkt", "frobnicate"]), 2);
        assert_eq!(cmd_dispatch(["hgkt", "eval", "--data", "x", "--mode", "weird", "--checkpoint", "c"]), 2);
    }
}
