//! Datasets, member/non-member splits, and a synthetic generator modelled on
//! binary purchase-history records.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::RealMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: RealMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(features: RealMatrix, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidInput(format!("label {bad} >= num_classes {num_classes}")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }

    /// Writes the `f0,...,f{d-1},label` CSV layout read by [`load_csv`].
    /// Values use the shortest representation that round-trips exactly.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header: Vec<String> = (0..self.feature_dim())
            .map(|j| format!("f{j}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        for i in 0..self.len() {
            let mut line = String::new();
            for v in self.features.row(i) {
                line.push_str(&format!("{v:?},"));
            }
            line.push_str(&self.labels[i].to_string());
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a `f0,...,f{d-1},label` CSV. The class count is `max label + 1`.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader.headers()?.clone();
    let width = header.len();
    if width < 2 || header.get(width - 1).map(str::trim) != Some("label") {
        return Err(parse_err(1, "header must be f0,...,f{d-1},label".into()));
    }
    for (j, h) in header.iter().take(width - 1).enumerate() {
        if h.trim() != format!("f{j}") {
            return Err(parse_err(1, format!("expected column `f{j}`, found `{h}`")));
        }
    }
    let d = width - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(parse_err(line, format!("expected {width} cells, found {}", record.len())));
        }
        for (j, cell) in record.iter().take(d).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(parse_err(line, format!("missing value in column f{j}")));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric value `{cell}` in column f{j}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value in column f{j}")));
            }
            values.push(v);
        }
        let raw = record[d].trim();
        if raw.is_empty() {
            return Err(parse_err(line, "missing label".into()));
        }
        let label: i64 = raw
            .parse()
            .map_err(|_| parse_err(line, format!("label `{raw}` is not an integer")))?;
        if label < 0 {
            return Err(parse_err(line, format!("negative label {label}")));
        }
        labels.push(label as usize);
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let n = labels.len();
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(RealMatrix::from_vec(n, d, values)?, labels, num_classes, name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub prototype_flip_rate: f64,
    pub label_noise_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if self.feature_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::Config("feature_dim and samples_per_class must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.prototype_flip_rate) {
            return Err(Error::Config(format!(
                "prototype_flip_rate {} outside [0, 0.5)",
                self.prototype_flip_rate
            )));
        }
        if !(0.0..1.0).contains(&self.label_noise_fraction) {
            return Err(Error::Config(format!(
                "label_noise_fraction {} outside [0, 1)",
                self.label_noise_fraction
            )));
        }
        Ok(())
    }
}

/// A dataset plus the indices whose labels were deliberately corrupted.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub dataset: Dataset,
    pub noisy_indices: Vec<usize>,
}

/// Draws one random binary prototype per class; every sample is its class
/// prototype with each bit flipped independently. Samples are laid out class
/// by class. The planted label noise is applied last.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<NoisyDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (m, d) = (spec.num_classes, spec.feature_dim);
    let prototypes: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect())
        .collect();
    let n = m * spec.samples_per_class;
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, proto) in prototypes.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            for &bit in proto {
                let flip = rng.random::<f64>() < spec.prototype_flip_rate;
                values.push(if flip { 1.0 - bit } else { bit });
            }
            labels.push(c);
        }
    }
    let clean = Dataset::new(RealMatrix::from_vec(n, d, values)?, labels, m, "synthetic")?;
    inject_label_noise_with(&clean, spec.label_noise_fraction, &mut rng)
}

/// Reassigns `⌊fraction·n⌋` labels, chosen without replacement, to a
/// uniformly random different class.
pub fn inject_label_noise(dataset: &Dataset, fraction: f64, seed: u64) -> Result<NoisyDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    inject_label_noise_with(dataset, fraction, &mut rng)
}

fn inject_label_noise_with<R: Rng>(dataset: &Dataset, fraction: f64, rng: &mut R) -> Result<NoisyDataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("noise fraction {fraction} outside [0, 1)")));
    }
    let n = dataset.len();
    let count = (fraction * n as f64).floor() as usize;
    if count > 0 && dataset.num_classes < 2 {
        return Err(Error::Config("label noise needs at least 2 classes".into()));
    }
    let mut noisy = dataset.clone();
    let mut chosen = index::sample(rng, n, count).into_vec();
    chosen.sort_unstable();
    for &i in &chosen {
        let old = noisy.labels[i];
        let mut new = rng.random_range(0..dataset.num_classes - 1);
        if new >= old {
            new += 1;
        }
        noisy.labels[i] = new;
    }
    Ok(NoisyDataset {
        dataset: noisy,
        noisy_indices: chosen,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub member_indices: Vec<usize>,
    pub nonmember_indices: Vec<usize>,
    pub seed: u64,
}

impl DataSplit {
    pub fn validate(&self, n: usize) -> Result<()> {
        let members: BTreeSet<usize> = self.member_indices.iter().copied().collect();
        if members.len() != self.member_indices.len() {
            return Err(Error::InvalidInput("duplicate member index".into()));
        }
        if let Some(i) = self.nonmember_indices.iter().find(|i| members.contains(i)) {
            return Err(Error::InvalidInput(format!("index {i} is both member and non-member")));
        }
        if let Some(i) = members.iter().chain(&self.nonmember_indices).find(|&&i| i >= n) {
            return Err(Error::InvalidInput(format!("index {i} out of range for {n} samples")));
        }
        Ok(())
    }
}

/// Class-stratified split: per-class member and non-member counts follow the
/// class proportions (largest-remainder rounding), and the samples inside each
/// class are drawn uniformly without replacement.
pub fn split(dataset: &Dataset, n_member: usize, n_nonmember: usize, seed: u64) -> Result<DataSplit> {
    let n = dataset.len();
    if n_member + n_nonmember > n {
        return Err(Error::InvalidInput(format!(
            "requested {n_member} members + {n_nonmember} non-members from {n} samples"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let total = apportion(n_member + n_nonmember, &sizes, &sizes);
    let members = apportion(n_member, &sizes, &total);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut member_indices = Vec::with_capacity(n_member);
    let mut nonmember_indices = Vec::with_capacity(n_nonmember);
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        member_indices.extend_from_slice(&idx[..members[c]]);
        nonmember_indices.extend_from_slice(&idx[members[c]..total[c]]);
    }
    member_indices.sort_unstable();
    nonmember_indices.sort_unstable();
    Ok(DataSplit {
        member_indices,
        nonmember_indices,
        seed,
    })
}

/// Splits `total` across buckets proportionally to `weights` using largest
/// remainders, never exceeding `caps`.
fn apportion(total: usize, weights: &[usize], caps: &[usize]) -> Vec<usize> {
    let wsum: usize = weights.iter().sum();
    if wsum == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights
        .iter()
        .zip(caps)
        .map(|(&w, &cap)| ((total * w) / wsum).min(cap))
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // remainder of total*w/wsum, descending; index breaks ties
    order.sort_by_key(|&i| (std::cmp::Reverse((total * weights[i]) % wsum), i));
    let mut assigned: usize = out.iter().sum();
    while assigned < total {
        let before = assigned;
        for &i in &order {
            if assigned == total {
                break;
            }
            if out[i] < caps[i] {
                out[i] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(flip: f64, noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: 10,
            feature_dim: 200,
            samples_per_class: 100,
            prototype_flip_rate: flip,
            label_noise_fraction: noise,
            seed: 42,
        }
    }

    #[test]
    fn zero_flip_rate_copies_prototypes() {
        let data = generate_synthetic(&spec(0.0, 0.0)).unwrap().dataset;
        for c in 0..10 {
            let rows: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
            let first = data.features.row(rows[0]);
            assert!(rows.iter().all(|&i| data.features.row(i) == first));
        }
    }

    #[test]
    fn label_noise_count_is_exact() {
        let noisy = generate_synthetic(&spec(0.1, 0.1)).unwrap();
        let clean = generate_synthetic(&spec(0.1, 0.0)).unwrap();
        assert_eq!(noisy.noisy_indices.len(), 100);
        let changed = (0..1000)
            .filter(|&i| noisy.dataset.labels[i] != clean.dataset.labels[i])
            .count();
        assert_eq!(changed, 100);
        assert_eq!(noisy.dataset.features, clean.dataset.features);
    }

    #[test]
    fn nearest_prototype_classifies_clean_samples() {
        let s = spec(0.1, 0.0);
        let data = generate_synthetic(&s).unwrap().dataset;
        let noiseless = generate_synthetic(&SyntheticSpec {
            prototype_flip_rate: 0.0,
            ..s
        })
        .unwrap()
        .dataset;
        let protos: Vec<&[f64]> = (0..10).map(|c| noiseless.features.row(c * 100)).collect();
        let correct = (0..data.len())
            .filter(|&i| {
                let x = data.features.row(i);
                let best = (0..10)
                    .min_by_key(|&c| x.iter().zip(protos[c]).filter(|(a, b)| a != b).count())
                    .unwrap();
                best == data.labels[i]
            })
            .count();
        assert!(correct as f64 / data.len() as f64 >= 0.99);
    }

    #[test]
    fn generation_is_pure() {
        assert_eq!(generate_synthetic(&spec(0.2, 0.1)).unwrap(), generate_synthetic(&spec(0.2, 0.1)).unwrap());
        assert!(generate_synthetic(&spec(0.5, 0.0)).is_err());
    }

    #[test]
    fn noise_on_two_classes_flips() {
        let data = Dataset::new(RealMatrix::zeros(10, 1), vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2, "t").unwrap();
        let noisy = inject_label_noise(&data, 0.35, 1).unwrap();
        assert_eq!(noisy.noisy_indices.len(), 3);
        for &i in &noisy.noisy_indices {
            assert_eq!(noisy.dataset.labels[i], 1 - data.labels[i]);
        }
        assert_eq!(inject_label_noise(&data, 0.0, 1).unwrap().dataset, data);
    }

    #[test]
    fn full_split_partitions() {
        let data = generate_synthetic(&spec(0.1, 0.0)).unwrap().dataset;
        let s = split(&data, 600, 400, 3).unwrap();
        let mut all: Vec<usize> = s.member_indices.iter().chain(&s.nonmember_indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(s, split(&data, 600, 400, 3).unwrap());
        assert!(split(&data, 600, 401, 3).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..997).map(|i| if i < 500 { 0 } else if i < 800 { 1 } else { 2 }).collect();
        let data = Dataset::new(RealMatrix::zeros(997, 1), labels, 3, "t").unwrap();
        let s = split(&data, 333, 300, 9).unwrap();
        s.validate(997).unwrap();
        assert_eq!(s.member_indices.len(), 333);
        assert_eq!(s.nonmember_indices.len(), 300);
        let sizes = [500.0, 300.0, 197.0];
        for (c, &size) in sizes.iter().enumerate() {
            let count = s.member_indices.iter().filter(|&&i| data.labels[i] == c).count() as f64;
            assert!((count - 333.0 * size / 997.0).abs() <= 1.0, "class {c}: {count}");
        }
    }
}
