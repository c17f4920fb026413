//! Long-tailed class-count profiles and synthetic Gaussian-cluster datasets.
//!
//! Class sizes decay exponentially from the head class (`n_max`) to the tail
//! class (`n_max / IF`). The synthetic data places one isotropic Gaussian
//! cluster per class on a sphere of radius `class_center_scale`; the ratio of
//! that radius to `cluster_spread` sets how much the classes overlap.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FblError, Result};

/// Per-class training sample counts, sorted from head to tail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ClassCounts(Vec<usize>);

impl ClassCounts {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(FblError::InvalidCounts(format!(
                "need at least 2 classes, got {}",
                counts.len()
            )));
        }
        if counts.contains(&0) {
            return Err(FblError::InvalidCounts("every class needs at least one sample".into()));
        }
        if counts.windows(2).any(|w| w[1] > w[0]) {
            return Err(FblError::InvalidCounts("counts must be non-increasing".into()));
        }
        Ok(Self(counts))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn n_max(&self) -> usize {
        self.0[0]
    }

    pub fn n_min(&self) -> usize {
        self.0[self.0.len() - 1]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// `n_max / n_min`.
    pub fn imbalance_factor(&self) -> f64 {
        self.n_max() as f64 / self.n_min() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("Vec<usize> serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl TryFrom<Vec<usize>> for ClassCounts {
    type Error = FblError;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClassCounts> for Vec<usize> {
    fn from(c: ClassCounts) -> Self {
        c.0
    }
}

/// Exponential long-tail profile: `n_j = round(n_max * IF^(-j/(C-1)))`.
///
/// Rounding is half-up, clamped to at least one sample.
pub fn make_class_counts(num_classes: usize, n_max: usize, imbalance_factor: f64) -> Result<ClassCounts> {
    if num_classes < 2 {
        return Err(FblError::InvalidCounts(format!("need C >= 2, got {num_classes}")));
    }
    if n_max == 0 {
        return Err(FblError::InvalidCounts("n_max must be >= 1".into()));
    }
    if !imbalance_factor.is_finite() || imbalance_factor < 1.0 {
        return Err(FblError::InvalidCounts(format!(
            "imbalance factor must be finite and >= 1, got {imbalance_factor}"
        )));
    }
    if (n_max as f64) < imbalance_factor {
        return Err(FblError::InvalidCounts(format!(
            "n_max={n_max} < IF={imbalance_factor}: tail class would be empty"
        )));
    }
    let last = (num_classes - 1) as f64;
    let counts = (0..num_classes)
        .map(|j| {
            let raw = n_max as f64 * imbalance_factor.powf(-(j as f64) / last);
            ((raw + 0.5).floor() as usize).max(1)
        })
        .collect();
    ClassCounts::new(counts)
}

/// `λ_j = log(n_max) − log(n_j)` for arbitrary (unsorted) positive counts.
///
/// Evaluated as `ln(n_max / n_j)` so that scaling every count by the same
/// integer leaves the result bit-identical.
pub fn lambdas_from_counts(counts: &[usize]) -> Vec<f64> {
    let n_max = counts.iter().copied().max().unwrap_or(1) as f64;
    counts.iter().map(|&n| (n_max / n as f64).ln()).collect()
}

/// Stimulus intensities for each class: zero for the head, growing toward the tail.
pub fn lambda_vector(counts: &ClassCounts) -> Vec<f64> {
    lambdas_from_counts(counts.as_slice())
}

/// Parameters of a synthetic long-tailed Gaussian-cluster problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub n_max: usize,
    pub imbalance_factor: f64,
    pub feature_dim: usize,
    pub cluster_spread: f64,
    pub class_center_scale: f64,
    pub seed: u64,
    pub test_per_class: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            n_max: 5000,
            imbalance_factor: 100.0,
            feature_dim: 16,
            cluster_spread: 1.0,
            class_center_scale: 2.0,
            seed: 0,
            test_per_class: 200,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FblError::InvalidSpec(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.feature_dim < 2 {
            return bad(format!("feature_dim must be >= 2, got {}", self.feature_dim));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return bad(format!("cluster_spread must be > 0, got {}", self.cluster_spread));
        }
        if !(self.class_center_scale > 0.0 && self.class_center_scale.is_finite()) {
            return bad(format!("class_center_scale must be > 0, got {}", self.class_center_scale));
        }
        if self.test_per_class == 0 {
            return bad("test_per_class must be >= 1".into());
        }
        Ok(())
    }
}

/// Labelled train/test split with the class counts that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_x: Array2<f64>,
    pub train_y: Vec<usize>,
    pub test_x: Array2<f64>,
    pub test_y: Vec<usize>,
    pub counts: ClassCounts,
}

impl Dataset {
    pub fn new(
        train_x: Array2<f64>,
        train_y: Vec<usize>,
        test_x: Array2<f64>,
        test_y: Vec<usize>,
        counts: ClassCounts,
    ) -> Result<Self> {
        let c = counts.num_classes();
        if train_x.nrows() != train_y.len() {
            return Err(crate::error::shape_err(
                format!("{} train labels", train_x.nrows()),
                train_y.len(),
            ));
        }
        if test_x.nrows() != test_y.len() {
            return Err(crate::error::shape_err(
                format!("{} test labels", test_x.nrows()),
                test_y.len(),
            ));
        }
        if train_x.ncols() != test_x.ncols() {
            return Err(crate::error::shape_err(
                format!("{} test columns", train_x.ncols()),
                test_x.ncols(),
            ));
        }
        if let Some(&bad) = train_y.iter().chain(&test_y).find(|&&y| y >= c) {
            return Err(FblError::InvalidSpec(format!("label {bad} outside [0, {c})")));
        }
        if histogram(&train_y, c) != counts.as_slice() {
            return Err(FblError::InvalidCounts(
                "train label histogram disagrees with class counts".into(),
            ));
        }
        Ok(Self { train_x, train_y, test_x, test_y, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.num_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.train_x.ncols()
    }

    /// Writes `train.csv`, `test.csv` and `counts.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("train.csv"), to_csv(&self.train_x, &self.train_y))?;
        fs::write(dir.join("test.csv"), to_csv(&self.test_x, &self.test_y))?;
        fs::write(dir.join("counts.json"), self.counts.to_json())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| {
                FblError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
            })
        };
        let counts = ClassCounts::from_json(&read("counts.json")?)?;
        let (train_x, train_y) = from_csv(&read("train.csv")?)?;
        let (test_x, test_y) = from_csv(&read("test.csv")?)?;
        Self::new(train_x, train_y, test_x, test_y, counts)
    }
}

pub fn histogram(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for &y in labels {
        h[y] += 1;
    }
    h
}

/// Draws a dataset from `spec`. Centers, train and test samples use separate
/// RNG streams, so changing `test_per_class` leaves the training set intact.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let counts = make_class_counts(spec.num_classes, spec.n_max, spec.imbalance_factor)?;
    let d = spec.feature_dim;

    let mut center_rng = stream(spec.seed, 0);
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| center_rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.iter().map(|x| x / norm * spec.class_center_scale).collect()
        })
        .collect();

    let draw = |rng: &mut ChaCha8Rng, per_class: &[usize]| {
        let n: usize = per_class.iter().sum();
        let mut x = Array2::zeros((n, d));
        let mut y = Vec::with_capacity(n);
        let mut row = 0;
        for (class, &count) in per_class.iter().enumerate() {
            for _ in 0..count {
                for (k, &c) in centers[class].iter().enumerate() {
                    let noise: f64 = rng.sample(StandardNormal);
                    x[[row, k]] = c + spec.cluster_spread * noise;
                }
                y.push(class);
                row += 1;
            }
        }
        (x, y)
    };

    let (train_x, train_y) = draw(&mut stream(spec.seed, 1), counts.as_slice());
    let test_counts = vec![spec.test_per_class; spec.num_classes];
    let (test_x, test_y) = draw(&mut stream(spec.seed, 2), &test_counts);
    Dataset::new(train_x, train_y, test_x, test_y, counts)
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn to_csv(x: &Array2<f64>, y: &[usize]) -> String {
    let mut out = String::from("label");
    for k in 0..x.ncols() {
        write!(out, ",f{k}").unwrap();
    }
    out.push('\n');
    for (row, label) in x.rows().into_iter().zip(y) {
        write!(out, "{label}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn from_csv(text: &str) -> Result<(Array2<f64>, Vec<usize>)> {
    let fmt = |detail: String| FblError::Format { what: "dataset CSV", detail };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fmt("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"label") {
        return Err(fmt(format!("header must start with `label`, got `{header}`")));
    }
    for (k, name) in cols[1..].iter().enumerate() {
        if *name != format!("f{k}") {
            return Err(fmt(format!("unexpected column `{name}` at position {}", k + 1)));
        }
    }
    let d = cols.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let mut fields = line.split(',');
        let label = fields
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| fmt(format!("bad label on line {}", i + 2)))?;
        let before = data.len();
        for f in fields {
            data.push(f.parse::<f64>().map_err(|e| fmt(format!("line {}: {e}", i + 2)))?);
        }
        if data.len() - before != d {
            return Err(fmt(format!("line {} has {} features, expected {d}", i + 2, data.len() - before)));
        }
        labels.push(label);
    }
    let x = Array2::from_shape_vec((labels.len(), d), data).map_err(|e| fmt(e.to_string()))?;
    Ok((x, labels))
}
