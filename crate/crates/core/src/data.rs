//! Synthetic multi-domain benchmark.
//!
//! Every class is a mixture of Gaussian subclusters in a shared latent space.
//! Each domain draws from the subclusters its mask allows and then applies a
//! per-domain affine map `x = scale ⊙ z + offset`, the analog of a systematic
//! staining shift. One class-1 subcluster is masked out everywhere except the
//! test domain.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Affine map and subcluster mask of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    /// `mask[class][k]`: whether subcluster `k` of `class` occurs in the domain.
    pub mask: Vec<Vec<bool>>,
    /// Fraction of class-1 samples.
    pub class1_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// One entry per domain; domain ids are 1-based positions in this list.
    pub domains: Vec<DomainShift>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_domains: usize,
    pub dim: usize,
    pub samples_per_domain: usize,
    pub seed: u64,
    /// `centers[class][k]`: latent mean of subcluster `k`.
    pub centers: Vec<Vec<Vec<f64>>>,
    pub cluster_std: f64,
    pub val_domain: u32,
    pub test_domain: u32,
    pub shift: ShiftSpec,
}

const SUBCLUSTERS: usize = 3;
/// Class-1 subcluster that only the test domain contains.
const MASKED_SUBCLUSTER: usize = 2;
const MIN_SAMPLES_PER_DOMAIN: usize = 100;

impl GeneratorConfig {
    /// The default five-domain benchmark (domains 1–3 train, 4 val, 5 test).
    ///
    /// Latent axis 0 carries the class. Axis 1 is the "stain" axis: it is
    /// correlated with the class in the training domains and is where the
    /// domain offsets act. The masked subcluster is class 1 on axis 0 but sits
    /// with class 0 on axis 1.
    pub fn default_benchmark(seed: u64) -> Self {
        let dim = 8;
        let texture = |k: usize, sign: f64| -> Vec<f64> {
            (2..dim)
                .map(|j| sign * 0.5 * if (j + k) % 3 == 0 { 1.0 } else { -0.5 })
                .collect()
        };
        let center = |a0: f64, a1: f64, rest: Vec<f64>| {
            let mut c = vec![a0, a1];
            c.extend(rest);
            c
        };
        let centers = vec![
            vec![
                center(-1.0, 0.6, texture(0, 1.0)),
                center(-1.3, 0.9, texture(1, 1.0)),
                center(-0.8, 0.4, texture(2, 1.0)),
            ],
            vec![
                center(1.0, -0.6, texture(0, -1.0)),
                center(1.3, -0.9, texture(1, -1.0)),
                center(1.0, 0.6, texture(2, -1.0)),
            ],
        ];
        // (offset along the stain axis, stain-axis scale, small offset
        // elsewhere, class-1 fraction)
        let domain_params = [
            (-0.3, 1.0, 0.05, 0.6),
            (0.0, 0.9, -0.05, 0.6),
            (0.3, 1.1, 0.0, 0.6),
            (2.3, 1.2, 0.1, 0.3),
            (2.6, 1.3, -0.1, 0.4),
        ];
        let test_domain = 5;
        let domains = domain_params
            .iter()
            .enumerate()
            .map(|(i, &(stain, stain_scale, other, class1_fraction))| {
                let mut offset = vec![other; dim];
                offset[1] = stain;
                let mut scale = vec![1.0; dim];
                scale[1] = stain_scale;
                let mut mask = vec![vec![true; SUBCLUSTERS]; NUM_CLASSES];
                mask[1][MASKED_SUBCLUSTER] = i + 1 == test_domain;
                DomainShift {
                    scale,
                    offset,
                    mask,
                    class1_fraction,
                }
            })
            .collect();
        Self {
            num_domains: 5,
            dim,
            samples_per_domain: 3000,
            seed,
            centers,
            cluster_std: 0.4,
            val_domain: 4,
            test_domain: test_domain as u32,
            shift: ShiftSpec { domains },
        }
    }

    /// Same class geometry with identity shifts and every subcluster present.
    pub fn unshifted(seed: u64) -> Self {
        let mut cfg = Self::default_benchmark(seed);
        for d in &mut cfg.shift.domains {
            d.scale = vec![1.0; cfg.dim];
            d.offset = vec![0.0; cfg.dim];
            d.mask = vec![vec![true; SUBCLUSTERS]; NUM_CLASSES];
        }
        cfg
    }

    pub fn split_of(&self, domain: u32) -> Split {
        if domain == self.val_domain {
            Split::Val
        } else if domain == self.test_domain {
            Split::Test
        } else {
            Split::Train
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_domains < 3 {
            return bad(format!("num_domains must be >= 3, got {}", self.num_domains));
        }
        if self.samples_per_domain < MIN_SAMPLES_PER_DOMAIN {
            return bad(format!(
                "samples_per_domain must be >= {MIN_SAMPLES_PER_DOMAIN}, got {}",
                self.samples_per_domain
            ));
        }
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return bad("cluster_std must be positive".into());
        }
        let ids = 1..=self.num_domains as u32;
        if !ids.contains(&self.val_domain)
            || !ids.contains(&self.test_domain)
            || self.val_domain == self.test_domain
        {
            return bad("val_domain and test_domain must be distinct domain ids".into());
        }
        if self.centers.len() != NUM_CLASSES
            || self.centers.iter().any(|c| c.is_empty())
            || self.centers.iter().flatten().any(|c| c.len() != self.dim)
        {
            return bad(format!(
                "centers must be {NUM_CLASSES} non-empty lists of {}-vectors",
                self.dim
            ));
        }
        if self.shift.domains.len() != self.num_domains {
            return bad(format!(
                "shift lists {} domains, expected {}",
                self.shift.domains.len(),
                self.num_domains
            ));
        }
        for (i, d) in self.shift.domains.iter().enumerate() {
            if d.scale.len() != self.dim || d.offset.len() != self.dim {
                return bad(format!("domain {}: scale/offset must have length {}", i + 1, self.dim));
            }
            if d.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return bad(format!("domain {}: scale entries must be positive", i + 1));
            }
            if !(0.0..=1.0).contains(&d.class1_fraction) {
                return bad(format!("domain {}: class1_fraction must lie in [0, 1]", i + 1));
            }
            if d.mask.len() != NUM_CLASSES
                || d.mask.iter().zip(&self.centers).any(|(m, c)| m.len() != c.len())
            {
                return bad(format!("domain {}: mask shape does not match centers", i + 1));
            }
        }
        for (i, d) in self.shift.domains.iter().enumerate() {
            let counts = self.class_counts(d);
            for class in 0..NUM_CLASSES {
                if counts[class] > 0 && !d.mask[class].iter().any(|&m| m) {
                    return bad(format!("domain {}: class {class} has no subcluster", i + 1));
                }
            }
        }
        let train: Vec<&DomainShift> = (1..=self.num_domains as u32)
            .filter(|&d| self.split_of(d) == Split::Train)
            .map(|d| &self.shift.domains[d as usize - 1])
            .collect();
        for class in 0..NUM_CLASSES {
            if train.iter().all(|d| self.class_counts(d)[class] == 0) {
                return bad(format!("class {class} is absent from every training domain"));
            }
        }
        Ok(())
    }

    fn class_counts(&self, domain: &DomainShift) -> [usize; NUM_CLASSES] {
        let n1 = (self.samples_per_domain as f64 * domain.class1_fraction).round() as usize;
        [self.samples_per_domain - n1, n1]
    }

    /// Global subcluster tags that occur in the test domain only.
    pub fn masked_tags(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let test = (self.test_domain - 1) as usize;
        for (class, centers) in self.centers.iter().enumerate() {
            for k in 0..centers.len() {
                let elsewhere = self
                    .shift
                    .domains
                    .iter()
                    .enumerate()
                    .any(|(i, d)| i != test && d.mask[class][k]);
                if self.shift.domains[test].mask[class][k] && !elsewhere {
                    out.push(self.tag(class, k));
                }
            }
        }
        out
    }

    fn tag(&self, class: usize, k: usize) -> u32 {
        (self.centers[..class].iter().map(Vec::len).sum::<usize>() + k) as u32
    }
}

/// Dataset-level metadata kept next to the samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub generator: Option<GeneratorConfig>,
    /// Subcluster tags absent from every training domain.
    pub masked_subclusters: Vec<u32>,
}

/// Labeled samples tagged with domain and split.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub domains: Vec<u32>,
    pub splits: Vec<Split>,
    /// Per-sample subcluster tags, when known.
    pub subclusters: Option<Vec<u32>>,
    pub metadata: DatasetMetadata,
}

/// Rows of one split.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub domains: Vec<u32>,
    pub subclusters: Option<Vec<u32>>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split(&self, split: Split) -> SplitData {
        let idx = self.indices(split);
        SplitData {
            features: self.features.select(Axis(0), &idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            domains: idx.iter().map(|&i| self.domains[i]).collect(),
            subclusters: self
                .subclusters
                .as_ref()
                .map(|t| idx.iter().map(|&i| t[i]).collect()),
        }
    }

    /// Split of every domain, checking that each domain has exactly one.
    pub fn domain_splits(&self) -> Result<BTreeMap<u32, Split>> {
        let mut out = BTreeMap::new();
        for (&d, &s) in self.domains.iter().zip(&self.splits) {
            if *out.entry(d).or_insert(s) != s {
                return Err(Error::Config(format!("domain {d} carries more than one split")));
            }
        }
        Ok(out)
    }

    pub fn samples_per_domain(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for &d in &self.domains {
            *out.entry(d).or_insert(0) += 1;
        }
        out
    }

    /// Checks the split topology: exactly one validation domain, exactly one
    /// test domain and at least one training domain.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.features.nrows() != n || self.domains.len() != n || self.splits.len() != n {
            return Err(Error::Contract("dataset columns differ in length".into()));
        }
        if self.subclusters.as_ref().is_some_and(|t| t.len() != n) {
            return Err(Error::Contract("subcluster column differs in length".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Contract(format!("label {bad} out of range")));
        }
        let splits = self.domain_splits()?;
        let count = |s: Split| splits.values().filter(|&&v| v == s).count();
        if count(Split::Train) == 0 || count(Split::Val) != 1 || count(Split::Test) != 1 {
            return Err(Error::Config(format!(
                "need >= 1 train domain and exactly one val and one test domain, got {} / {} / {}",
                count(Split::Train),
                count(Split::Val),
                count(Split::Test)
            )));
        }
        Ok(())
    }
}

/// Draws a dataset from `config`. Deterministic per `config.seed`.
pub fn generate(config: &GeneratorConfig) -> Result<DomainDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.num_domains * config.samples_per_domain;
    let mut features = Array2::zeros((n, config.dim));
    let mut labels = Vec::with_capacity(n);
    let mut domains = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    let mut row = 0;
    for (i, shift) in config.shift.domains.iter().enumerate() {
        let domain = i as u32 + 1;
        let [n0, n1] = config.class_counts(shift);
        let mut classes: Vec<usize> = std::iter::repeat_n(0, n0).chain(std::iter::repeat_n(1, n1)).collect();
        classes.shuffle(&mut rng);
        for class in classes {
            let present: Vec<usize> = (0..config.centers[class].len())
                .filter(|&k| shift.mask[class][k])
                .collect();
            let k = present[rng.random_range(0..present.len())];
            let center = &config.centers[class][k];
            for j in 0..config.dim {
                let noise: f64 = rng.sample(StandardNormal);
                let z = center[j] + config.cluster_std * noise;
                features[[row, j]] = shift.scale[j] * z + shift.offset[j];
            }
            labels.push(class);
            domains.push(domain);
            splits.push(config.split_of(domain));
            tags.push(config.tag(class, k));
            row += 1;
        }
    }
    Ok(DomainDataset {
        features,
        labels,
        domains,
        splits,
        subclusters: Some(tags),
        metadata: DatasetMetadata {
            generator: Some(config.clone()),
            masked_subclusters: config.masked_tags(),
        },
    })
}

/// Exchanges the split tags of the validation and test domains.
pub fn swap_val_test(dataset: &DomainDataset) -> DomainDataset {
    let mut out = dataset.clone();
    for s in &mut out.splits {
        *s = match *s {
            Split::Val => Split::Test,
            Split::Test => Split::Val,
            Split::Train => Split::Train,
        };
    }
    if let Some(g) = out.metadata.generator.as_mut() {
        std::mem::swap(&mut g.val_domain, &mut g.test_domain);
    }
    out
}

/// Significant digits of serialized features.
const SIGNIFICANT_DIGITS: usize = 9;

fn format_feature(v: f64) -> String {
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v)
}

/// Writes the sample table as CSV.
///
/// Columns are `domain_id,split,label`, then `subcluster` when tags are
/// present, then `f0 … f{d-1}`.
pub fn write_csv<W: std::io::Write>(dataset: &DomainDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["domain_id".to_string(), "split".into(), "label".into()];
    if dataset.subclusters.is_some() {
        header.push("subcluster".into());
    }
    header.extend((0..dataset.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..dataset.len() {
        let mut rec = vec![
            dataset.domains[i].to_string(),
            dataset.splits[i].to_string(),
            dataset.labels[i].to_string(),
        ];
        if let Some(tags) = &dataset.subclusters {
            rec.push(tags[i].to_string());
        }
        rec.extend(dataset.features.row(i).iter().map(|&v| format_feature(v)));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Parses a sample table written by [`write_csv`]. Metadata is left empty.
pub fn read_csv<R: std::io::Read>(input: R) -> Result<DomainDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file, expected a header".into(),
            })
        }
        Some(r) => r.map_err(csv_error)?,
    };
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 4 || cols[..3] != ["domain_id", "split", "label"] {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with domain_id,split,label".into(),
        });
    }
    let has_tags = cols[3] == "subcluster";
    let first_feature = if has_tags { 4 } else { 3 };
    let dim = cols.len() - first_feature;
    let feature_names_ok = cols[first_feature..]
        .iter()
        .enumerate()
        .all(|(j, c)| *c == format!("f{j}"));
    if dim == 0 || !feature_names_ok {
        return Err(Error::Parse {
            line: 1,
            message: "feature columns must be f0, f1, … in order".into(),
        });
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut domains = Vec::new();
    let mut splits = Vec::new();
    let mut tags = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse { line, message };
        if rec.len() != cols.len() {
            return Err(err(format!("expected {} fields, found {}", cols.len(), rec.len())));
        }
        domains.push(rec[0].parse::<u32>().map_err(|e| err(format!("domain_id: {e}")))?);
        splits.push(rec[1].parse::<Split>().map_err(|e| err(e.to_string()))?);
        let label = rec[2].parse::<usize>().map_err(|e| err(format!("label: {e}")))?;
        if label >= NUM_CLASSES {
            return Err(err(format!("label {label} is not 0 or 1")));
        }
        labels.push(label);
        if has_tags {
            tags.push(rec[3].parse::<u32>().map_err(|e| err(format!("subcluster: {e}")))?);
        }
        for (j, field) in rec.iter().skip(first_feature).enumerate() {
            let v = field
                .parse::<f64>()
                .map_err(|e| err(format!("f{j}: {e}")))?;
            if !v.is_finite() {
                return Err(err(format!("f{j} is not finite")));
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no samples".into(),
        });
    }
    let features = Array2::from_shape_vec((labels.len(), dim), values)
        .map_err(|e| Error::Contract(e.to_string()))?;
    Ok(DomainDataset {
        features,
        labels,
        domains,
        splits,
        subclusters: has_tags.then_some(tags),
        metadata: DatasetMetadata::default(),
    })
}

/// File names inside a dataset directory.
pub const SAMPLES_FILE: &str = "samples.csv";
pub const METADATA_FILE: &str = "dataset.json";

/// Writes `samples.csv` and `dataset.json` into `dir`.
pub fn save(dataset: &DomainDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(SAMPLES_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file))?;
    let meta = dir.join(METADATA_FILE);
    let text = serde_json::to_string_pretty(&dataset.metadata)?;
    fs::write(&meta, text + "\n").map_err(|e| Error::io(&meta, e))
}

/// Loads a dataset from a directory written by [`save`], or from a bare CSV
/// file. Metadata is read when `dataset.json` is present.
pub fn load(path: &Path) -> Result<DomainDataset> {
    let (csv_path, meta_path) = if path.is_dir() {
        (path.join(SAMPLES_FILE), Some(path.join(METADATA_FILE)))
    } else {
        (path.to_path_buf(), None)
    };
    let file = fs::File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut dataset = read_csv(std::io::BufReader::new(file))?;
    if let Some(meta) = meta_path.filter(|p| p.exists()) {
        let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        dataset.metadata = serde_json::from_str(&text)?;
    }
    Ok(dataset)
}

/// Domain ids of a split, ascending.
pub fn split_domains(dataset: &DomainDataset, split: Split) -> BTreeSet<u32> {
    dataset
        .domains
        .iter()
        .zip(&dataset.splits)
        .filter(|(_, &s)| s == split)
        .map(|(&d, _)| d)
        .collect()
}
