//! Dataset bundles: CSV reading and writing, validation, and a seeded
//! synthetic generator.
//!
//! File layout of a bundle directory:
//!
//! * `features.csv`: header `id,label,f0,..,f{n-1}`, one training instance per line
//! * `test.csv`: same layout; labels may be seen or unseen
//! * `attributes.csv`: header `class,a0,..,a{d-1}`, one class per line
//! * `split.csv`: lines `class,seen` or `class,unseen`, optional header
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! save followed by a load reproduces every value exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::hgraph::{ClassPrototype, InstanceRecord};
use crate::zsl::UnseenClass;
use crate::{Error, Result};

pub const FEATURES_FILE: &str = "features.csv";
pub const TEST_FILE: &str = "test.csv";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";
pub const SPLIT_FILE: &str = "split.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Seen,
    Unseen,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub features: Vec<InstanceRecord>,
    pub prototypes: Vec<ClassPrototype>,
    pub split: BTreeMap<u32, Split>,
    pub test_instances: Vec<InstanceRecord>,
}

impl DatasetBundle {
    fn ids_with(&self, which: Split) -> Vec<u32> {
        self.split.iter().filter(|(_, &s)| s == which).map(|(&c, _)| c).collect()
    }

    pub fn seen_ids(&self) -> Vec<u32> {
        self.ids_with(Split::Seen)
    }

    pub fn unseen_ids(&self) -> Vec<u32> {
        self.ids_with(Split::Unseen)
    }

    pub fn seen_prototypes(&self) -> Vec<ClassPrototype> {
        self.prototypes
            .iter()
            .filter(|p| self.split.get(&p.class_id) == Some(&Split::Seen))
            .cloned()
            .collect()
    }

    pub fn unseen_classes(&self) -> Vec<UnseenClass> {
        self.prototypes
            .iter()
            .filter(|p| self.split.get(&p.class_id) == Some(&Split::Unseen))
            .map(|p| UnseenClass { class_id: p.class_id, attributes: p.attributes.clone() })
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map(|r| r.feature.len()).unwrap_or(0)
    }

    pub fn attribute_dim(&self) -> usize {
        self.prototypes.first().map(|p| p.attributes.len()).unwrap_or(0)
    }

    /// Checks widths, class coverage, and that no unseen class appears in
    /// the training table.
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("training table is empty".into()));
        }
        let n = self.feature_dim();
        for r in self.features.iter().chain(&self.test_instances) {
            if r.feature.len() != n {
                return Err(Error::Schema(format!(
                    "instance {} has {} features, expected {n}",
                    r.id,
                    r.feature.len()
                )));
            }
        }
        let d = self.attribute_dim();
        let mut seen_proto = BTreeMap::new();
        for p in &self.prototypes {
            if p.attributes.len() != d {
                return Err(Error::Schema(format!(
                    "class {} has {} attributes, expected {d}",
                    p.class_id,
                    p.attributes.len()
                )));
            }
            if seen_proto.insert(p.class_id, ()).is_some() {
                return Err(Error::Schema(format!("class {} has two attribute rows", p.class_id)));
            }
        }
        for &c in self.split.keys() {
            if !seen_proto.contains_key(&c) {
                return Err(Error::Schema(format!("class {c} has no attribute row")));
            }
        }
        for r in &self.features {
            match self.split.get(&r.label) {
                Some(Split::Seen) => {}
                Some(Split::Unseen) => {
                    return Err(Error::ProtocolViolation(format!(
                        "training instance {} belongs to unseen class {}",
                        r.id, r.label
                    )))
                }
                None => {
                    return Err(Error::Schema(format!(
                        "training instance {} has label {} missing from the split",
                        r.id, r.label
                    )))
                }
            }
        }
        if let Some(r) = self.test_instances.iter().find(|r| !self.split.contains_key(&r.label)) {
            return Err(Error::Schema(format!(
                "test instance {} has label {} missing from the split",
                r.id, r.label
            )));
        }
        Ok(())
    }
}

/// Locations of the four bundle files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub features: PathBuf,
    pub attributes: PathBuf,
    pub split: PathBuf,
    pub test: PathBuf,
}

impl DatasetPaths {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            features: dir.join(FEATURES_FILE),
            attributes: dir.join(ATTRIBUTES_FILE),
            split: dir.join(SPLIT_FILE),
            test: dir.join(TEST_FILE),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Non-blank lines with 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, field: &str, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} {field:?}")))
}

fn parse_header(path: &Path, line: usize, header: &str, lead: &[&str], prefix: char) -> Result<usize> {
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < lead.len() + 1 || cols[..lead.len()] != *lead {
        return Err(parse_err(path, line, format!("expected header {},{prefix}0,..", lead.join(","))));
    }
    for (j, c) in cols[lead.len()..].iter().enumerate() {
        if *c != format!("{prefix}{j}") {
            return Err(parse_err(path, line, format!("header column {c:?}, expected {prefix}{j}")));
        }
    }
    Ok(cols.len() - lead.len())
}

pub fn read_instances(path: &Path) -> Result<Vec<InstanceRecord>> {
    let text = read(path)?;
    let mut it = lines(&text);
    let (hl, header) = it.next().ok_or_else(|| parse_err(path, 1, "missing header"))?;
    let width = parse_header(path, hl, header, &["id", "label"], 'f')?;
    let mut out = Vec::new();
    for (ln, line) in it {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 2 {
            return Err(Error::Schema(format!(
                "{}:{ln}: {} features, header declares {width}",
                path.display(),
                fields.len().saturating_sub(2)
            )));
        }
        let id = parse_num(path, ln, fields[0], "id")?;
        let label = parse_num(path, ln, fields[1], "label")?;
        let feature = fields[2..]
            .iter()
            .map(|f| parse_finite(path, ln, f))
            .collect::<Result<Vec<f64>>>()?;
        out.push(InstanceRecord { id, feature, label });
    }
    Ok(out)
}

fn parse_finite(path: &Path, line: usize, field: &str) -> Result<f64> {
    let x: f64 = parse_num(path, line, field, "number")?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(parse_err(path, line, format!("non-finite value {field:?}")))
    }
}

pub fn read_prototypes(path: &Path) -> Result<Vec<ClassPrototype>> {
    let text = read(path)?;
    let mut it = lines(&text);
    let (hl, header) = it.next().ok_or_else(|| parse_err(path, 1, "missing header"))?;
    let width = parse_header(path, hl, header, &["class"], 'a')?;
    let mut out = Vec::new();
    for (ln, line) in it {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 1 {
            return Err(Error::Schema(format!(
                "{}:{ln}: {} attributes, header declares {width}",
                path.display(),
                fields.len().saturating_sub(1)
            )));
        }
        let class_id = parse_num(path, ln, fields[0], "class id")?;
        let attributes = fields[1..]
            .iter()
            .map(|f| parse_finite(path, ln, f))
            .collect::<Result<Vec<f64>>>()?;
        out.push(ClassPrototype { class_id, attributes });
    }
    Ok(out)
}

pub fn read_split(path: &Path) -> Result<BTreeMap<u32, Split>> {
    let text = read(path)?;
    let mut out = BTreeMap::new();
    for (k, (ln, line)) in lines(&text).enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if k == 0 && fields.first() == Some(&"class") {
            continue;
        }
        if fields.len() != 2 {
            return Err(parse_err(path, ln, "expected class,seen|unseen"));
        }
        let class: u32 = parse_num(path, ln, fields[0], "class id")?;
        let split = match fields[1] {
            "seen" => Split::Seen,
            "unseen" => Split::Unseen,
            other => return Err(parse_err(path, ln, format!("split {other:?} is neither seen nor unseen"))),
        };
        if out.insert(class, split).is_some() {
            return Err(parse_err(path, ln, format!("class {class} listed twice")));
        }
    }
    Ok(out)
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<DatasetBundle> {
    let bundle = DatasetBundle {
        features: read_instances(&paths.features)?,
        prototypes: read_prototypes(&paths.attributes)?,
        split: read_split(&paths.split)?,
        test_instances: read_instances(&paths.test)?,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn join_numbers(out: &mut String, xs: &[f64]) {
    for x in xs {
        write!(out, ",{x}").unwrap();
    }
}

pub fn instances_to_csv(rs: &[InstanceRecord], n: usize) -> String {
    let mut out = String::from("id,label");
    (0..n).for_each(|j| write!(out, ",f{j}").unwrap());
    out.push('\n');
    for r in rs {
        write!(out, "{},{}", r.id, r.label).unwrap();
        join_numbers(&mut out, &r.feature);
        out.push('\n');
    }
    out
}

pub fn prototypes_to_csv(ps: &[ClassPrototype], d: usize) -> String {
    let mut out = String::from("class");
    (0..d).for_each(|j| write!(out, ",a{j}").unwrap());
    out.push('\n');
    for p in ps {
        write!(out, "{}", p.class_id).unwrap();
        join_numbers(&mut out, &p.attributes);
        out.push('\n');
    }
    out
}

pub fn split_to_csv(split: &BTreeMap<u32, Split>) -> String {
    let mut out = String::from("class,split\n");
    for (c, s) in split {
        writeln!(out, "{c},{}", s.as_str()).unwrap();
    }
    out
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the bundle under standard names in `dir`, creating it if needed.
pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<DatasetPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths::in_dir(dir);
    let n = bundle.feature_dim();
    write_file(&paths.features, &instances_to_csv(&bundle.features, n))?;
    write_file(&paths.test, &instances_to_csv(&bundle.test_instances, n))?;
    write_file(&paths.attributes, &prototypes_to_csv(&bundle.prototypes, bundle.attribute_dim()))?;
    write_file(&paths.split, &split_to_csv(&bundle.split))?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub num_unseen: usize,
    /// Instances per class in both the training and the test table.
    pub instances_per_class: usize,
    pub feature_dim: usize,
    pub attribute_dim: usize,
    pub cluster_spread: f64,
    pub attribute_noise: f64,
    /// Rank of the subspace holding the class centers; `None` draws them
    /// freely in the full feature space.
    pub center_rank: Option<usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 10,
            num_unseen: 2,
            instances_per_class: 30,
            feature_dim: 20,
            attribute_dim: 10,
            cluster_spread: 0.3,
            attribute_noise: 0.05,
            center_rank: Some(5),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_unseen >= self.num_classes {
            return bad(format!("{} unseen of {} classes leaves nothing to train on", self.num_unseen, self.num_classes));
        }
        if self.num_classes < 2 || self.feature_dim < 2 || self.attribute_dim < 2 {
            return bad("class count and dimensions must be at least 2".into());
        }
        if self.center_rank == Some(0) {
            return bad("center rank must be positive".into());
        }
        if self.instances_per_class == 0 {
            return bad("instances per class must be positive".into());
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return bad("cluster spread must be positive".into());
        }
        if !(self.attribute_noise >= 0.0 && self.attribute_noise.is_finite()) {
            return bad("attribute noise must be non-negative".into());
        }
        Ok(())
    }
}

/// Gaussian class clusters whose attributes are a fixed random linear image
/// of the cluster centers. With a center rank at most the attribute
/// dimension, attributes determine the centers and the map from attributes
/// to features is learnable from the seen classes. Spread and noise are checked for sign only, so a
/// zero spread (noiseless clusters) is available to tests through
/// [`synth_generate_unchecked`].
pub fn synth_generate(spec: &SynthSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    synth_generate_unchecked(spec)
}

pub(crate) fn synth_generate_unchecked(spec: &SynthSpec) -> Result<DatasetBundle> {
    let (l, n, d) = (spec.num_classes, spec.feature_dim, spec.attribute_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let centers = match spec.center_rank {
        Some(r) if r < n => {
            let latent = Array2::from_shape_simple_fn((l, r), &mut normal);
            let scale = 1.0 / (r as f64).sqrt();
            let basis = Array2::from_shape_simple_fn((r, n), || normal() * scale);
            latent.dot(&basis)
        }
        _ => Array2::from_shape_simple_fn((l, n), &mut normal),
    };
    let scale = 1.0 / (n as f64).sqrt();
    let projection = Array2::from_shape_simple_fn((d, n), || normal() * scale);
    let clean = centers.dot(&projection.t());
    let prototypes: Vec<ClassPrototype> = (0..l)
        .map(|c| ClassPrototype {
            class_id: c as u32,
            attributes: clean.row(c).iter().map(|a| a + spec.attribute_noise * normal()).collect(),
        })
        .collect();

    let mut draw = |c: usize, id: usize| InstanceRecord {
        id,
        label: c as u32,
        feature: centers.row(c).iter().map(|x| x + spec.cluster_spread * normal()).collect(),
    };
    let mut features = Vec::new();
    let mut test_instances = Vec::new();
    let m = spec.instances_per_class;

    let mut split_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_5eed);
    let unseen: Vec<usize> = index::sample(&mut split_rng, l, spec.num_unseen).into_vec();
    let split: BTreeMap<u32, Split> = (0..l)
        .map(|c| (c as u32, if unseen.contains(&c) { Split::Unseen } else { Split::Seen }))
        .collect();
    for c in 0..l {
        if split[&(c as u32)] == Split::Seen {
            for _ in 0..m {
                let id = features.len();
                features.push(draw(c, id));
            }
        }
        for _ in 0..m {
            let id = test_instances.len();
            test_instances.push(draw(c, id));
        }
    }
    let bundle = DatasetBundle { features, prototypes, split, test_instances };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let w = |name: &str, s: &str| fs::write(dir.path().join(name), s).unwrap();
        w(FEATURES_FILE, "id,label,f0,f1\n0,0,1.0,0.5\n1,0,0.9,0.4\n2,1,0.1,1.2\n");
        w(TEST_FILE, "id,label,f0,f1\n0,0,1.1,0.5\n1,2,0.3,0.3\n");
        w(ATTRIBUTES_FILE, "class,a0,a1,a2\n0,1,0,0\n1,0,1,0\n2,0,0,1\n");
        w(SPLIT_FILE, "0,seen\n1,seen\n2,unseen\n");
        dir
    }

    #[test]
    fn loads_toy_bundle() {
        let dir = toy_dir();
        let b = load_dataset(&DatasetPaths::in_dir(dir.path())).unwrap();
        assert_eq!(b.seen_ids(), vec![0, 1]);
        assert_eq!(b.unseen_ids(), vec![2]);
        assert_eq!(b.features.len(), 3);
        assert_eq!(b.feature_dim(), 2);
        assert_eq!(b.attribute_dim(), 3);
        assert_eq!(b.unseen_classes()[0].attributes, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn unseen_training_row_is_a_protocol_violation() {
        let dir = toy_dir();
        fs::write(dir.path().join(FEATURES_FILE), "id,label,f0,f1\n0,0,1,1\n1,2,1,1\n").unwrap();
        let err = load_dataset(&DatasetPaths::in_dir(dir.path())).unwrap_err();
        assert!(matches!(err, Error::ProtocolViolation(_)), "{err}");
    }

    #[test]
    fn ragged_attribute_row_is_a_schema_error() {
        let dir = toy_dir();
        fs::write(dir.path().join(ATTRIBUTES_FILE), "class,a0,a1,a2\n0,1,0,0\n1,0,1\n2,0,0,1\n").unwrap();
        let err = load_dataset(&DatasetPaths::in_dir(dir.path())).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn malformed_number_reports_line() {
        let dir = toy_dir();
        fs::write(dir.path().join(FEATURES_FILE), "id,label,f0,f1\n0,0,1,1\n\n1,0,x,1\n").unwrap();
        match load_dataset(&DatasetPaths::in_dir(dir.path())).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn other_malformed_inputs_are_rejected() {
        let cases: &[(&str, &str)] = &[
            (FEATURES_FILE, "id,lbl,f0,f1\n0,0,1,1\n"),
            (FEATURES_FILE, "id,label,f0,f2\n0,0,1,1\n"),
            (FEATURES_FILE, "id,label,f0,f1\n0,0,1,inf\n"),
            (FEATURES_FILE, "id,label,f0,f1\n0,9,1,1\n"),
            (FEATURES_FILE, ""),
            (SPLIT_FILE, "0,seen\n1,maybe\n2,unseen\n"),
            (SPLIT_FILE, "0,seen\n0,unseen\n"),
            (SPLIT_FILE, "0,seen,extra\n"),
            (ATTRIBUTES_FILE, "class,a0,a1,a2\n0,1,0,0\n1,0,1,0\n"),
            (TEST_FILE, "id,label,f0,f1,f2\n0,0,1,1,1\n"),
            (TEST_FILE, "id,label,f0,f1\n0,7,1,1\n"),
        ];
        for (file, contents) in cases {
            let dir = toy_dir();
            fs::write(dir.path().join(file), contents).unwrap();
            assert!(load_dataset(&DatasetPaths::in_dir(dir.path())).is_err(), "{file}: {contents:?}");
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let dir = toy_dir();
        fs::remove_file(dir.path().join(TEST_FILE)).unwrap();
        let err = load_dataset(&DatasetPaths::in_dir(dir.path())).unwrap_err();
        assert!(err.to_string().contains(TEST_FILE));
    }

    #[test]
    fn noiseless_synth_sits_on_centers() {
        let spec = SynthSpec { cluster_spread: 0.0, attribute_noise: 0.0, num_classes: 4, num_unseen: 1, center_rank: None, ..SynthSpec::default() };
        let b = synth_generate_unchecked(&spec).unwrap();
        for c in 0..4u32 {
            let rows: Vec<&InstanceRecord> = b.test_instances.iter().filter(|r| r.label == c).collect();
            assert!(rows.iter().all(|r| r.feature == rows[0].feature));
        }
        // Attributes are the same linear map of each center: check that it
        // is linear by comparing a least-squares fit on all classes.
        let n = spec.feature_dim;
        let first: Vec<Vec<f64>> = (0..4u32)
            .map(|c| b.test_instances.iter().find(|r| r.label == c).unwrap().feature.clone())
            .collect();
        let centers = Array2::from_shape_fn((4, n), |(i, j)| first[i][j]);
        let attrs = Array2::from_shape_fn((4, spec.attribute_dim), |(i, j)| b.prototypes[i].attributes[j]);
        // Regenerate the projection from the same seed stream.
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let _ = Array2::from_shape_simple_fn((4, n), &mut normal);
        let proj = Array2::from_shape_simple_fn((spec.attribute_dim, n), || normal() / (n as f64).sqrt());
        let want = centers.dot(&proj.t());
        for (a, w) in attrs.iter().zip(want.iter()) {
            assert!((a - w).abs() < 1e-12);
        }
    }

    #[test]
    fn synth_counts_and_determinism() {
        let spec = SynthSpec::default();
        let a = synth_generate(&spec).unwrap();
        assert_eq!(a.features.len(), 8 * 30);
        assert_eq!(a.unseen_ids().len(), 2);
        let test_classes: std::collections::BTreeSet<u32> = a.test_instances.iter().map(|r| r.label).collect();
        assert_eq!(test_classes.len(), 10);
        assert_eq!(a, synth_generate(&spec).unwrap());
        assert_ne!(a, synth_generate(&SynthSpec { seed: 1, ..spec }).unwrap());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = SynthSpec::default();
        for spec in [
            SynthSpec { num_unseen: 10, ..base.clone() },
            SynthSpec { feature_dim: 1, ..base.clone() },
            SynthSpec { cluster_spread: 0.0, ..base.clone() },
            SynthSpec { attribute_noise: -1.0, ..base.clone() },
            SynthSpec { instances_per_class: 0, ..base.clone() },
            SynthSpec { center_rank: Some(0), ..base.clone() },
        ] {
            assert!(matches!(synth_generate(&spec), Err(Error::Config(_))));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn save_then_load_is_exact(seed in any::<u64>(), classes in 2usize..6, per in 1usize..4) {
            let spec = SynthSpec {
                num_classes: classes, num_unseen: 1, instances_per_class: per,
                feature_dim: 3, attribute_dim: 2, seed, ..SynthSpec::default()
            };
            let b = synth_generate(&spec).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let paths = save_dataset(&b, dir.path()).unwrap();
            prop_assert_eq!(load_dataset(&paths).unwrap(), b);
        }
    }
}
