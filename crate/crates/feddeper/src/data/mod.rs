//! Dataset ingestion, synthetic problems, and the non-iid partitioning that
//! manufactures statistical heterogeneity across clients.

mod idx;
mod synthgen;

pub use idx::{load_idx, load_idx_dir, write_idx_images, write_idx_labels, Split};
pub use synthgen::{write_digit_dataset, DigitGenConfig};

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{sample_indices, shuffle_in_place, ParamVector, Purpose, RngStream};

/// Feature matrix plus class labels.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<u32>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.nrows(),
                labels: labels.len(),
            });
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: 0,
                value: *v,
                context: "dataset features",
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidParameter {
                name: "labels",
                reason: format!("label {bad} out of range for {num_classes} classes"),
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Copy the rows at `indices` into a dense batch.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<u32>) {
        let mut features = Array2::zeros((indices.len(), self.feature_dim()));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            features.row_mut(row).assign(&self.features.row(idx));
            labels.push(self.labels[idx]);
        }
        (features, labels)
    }

    /// Per-class sample counts over `indices` (or the whole set).
    pub fn label_histogram(&self, indices: Option<&[usize]>) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        match indices {
            Some(idx) => {
                for &i in idx {
                    hist[self.labels[i] as usize] += 1;
                }
            }
            None => {
                for &l in &self.labels {
                    hist[l as usize] += 1;
                }
            }
        }
        hist
    }

    /// Seeded subsample of `count` rows without replacement.
    pub fn subsample(&self, count: usize, master_seed: u64) -> Result<LabeledDataset> {
        if count > self.count() {
            return Err(Error::InvalidParameter {
                name: "count",
                reason: format!(
                    "subsample of {count} from dataset of {}",
                    self.count()
                ),
            });
        }
        let mut rng = RngStream::simple(master_seed, Purpose::Subsample).rng();
        let chosen = sample_indices(&mut rng, self.count(), count);
        let (features, labels) = self.gather(&chosen);
        LabeledDataset::new(features, labels, self.num_classes)
    }
}

/// How a [`Partition`] was produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionScheme {
    SortedNoniid { shards_per_client: usize },
    Iid,
    /// Individual test sets: one label class per client.
    SingleClass,
}

/// Disjoint index shards over a parent dataset, one per client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub scheme: PartitionScheme,
    pub seed: u64,
    shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.shards[client]
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    /// Check pairwise disjointness and range against the parent size.
    pub fn validate(&self, parent_count: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (client, shard) in self.shards.iter().enumerate() {
            for &idx in shard {
                if idx >= parent_count {
                    return Err(Error::InfeasiblePartition {
                        reason: format!(
                            "client {client} references index {idx} beyond parent size {parent_count}"
                        ),
                    });
                }
                if !seen.insert(idx) {
                    return Err(Error::InfeasiblePartition {
                        reason: format!("index {idx} appears in more than one shard"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Serialize to the cache format: client id -> index list, plus scheme
    /// and seed.
    pub fn to_cache_json(&self) -> serde_json::Value {
        let mut clients = serde_json::Map::new();
        for (id, shard) in self.shards.iter().enumerate() {
            clients.insert(id.to_string(), json!(shard));
        }
        let mut root = serde_json::Map::new();
        match &self.scheme {
            PartitionScheme::SortedNoniid { shards_per_client } => {
                root.insert("scheme".into(), json!("sorted_noniid"));
                root.insert("shards_per_client".into(), json!(shards_per_client));
            }
            PartitionScheme::Iid => {
                root.insert("scheme".into(), json!("iid"));
            }
            PartitionScheme::SingleClass => {
                root.insert("scheme".into(), json!("single_class"));
            }
        }
        root.insert("seed".into(), json!(self.seed));
        root.insert("clients".into(), serde_json::Value::Object(clients));
        serde_json::Value::Object(root)
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_cache_json())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read_cache(path: &Path) -> Result<Partition> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let obj = value.as_object().ok_or_else(|| Error::Config {
            field: "partition".into(),
            reason: "cache root must be an object".into(),
        })?;
        let scheme = match obj.get("scheme").and_then(|v| v.as_str()) {
            Some("sorted_noniid") => PartitionScheme::SortedNoniid {
                shards_per_client: obj
                    .get("shards_per_client")
                    .and_then(|v| v.as_u64())
                    .unwrap_or(1) as usize,
            },
            Some("iid") => PartitionScheme::Iid,
            Some("single_class") => PartitionScheme::SingleClass,
            other => {
                return Err(Error::Config {
                    field: "scheme".into(),
                    reason: format!("unknown scheme {other:?}"),
                })
            }
        };
        let seed = obj.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
        let clients = obj
            .get("clients")
            .and_then(|v| v.as_object())
            .ok_or_else(|| Error::Config {
                field: "clients".into(),
                reason: "missing client map".into(),
            })?;
        let mut shards = vec![Vec::new(); clients.len()];
        for (key, value) in clients {
            let id: usize = key.parse().map_err(|_| Error::Config {
                field: "clients".into(),
                reason: format!("client id {key} is not an integer"),
            })?;
            if id >= shards.len() {
                return Err(Error::Config {
                    field: "clients".into(),
                    reason: format!("client id {id} out of range"),
                });
            }
            let indices = value
                .as_array()
                .ok_or_else(|| Error::Config {
                    field: "clients".into(),
                    reason: "index list must be an array".into(),
                })?
                .iter()
                .map(|v| v.as_u64().map(|u| u as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Config {
                    field: "clients".into(),
                    reason: "index list must contain integers".into(),
                })?;
            shards[id] = indices;
        }
        Ok(Partition {
            scheme,
            seed,
            shards,
        })
    }
}

/// Sorted non-iid split: order by label, cut into `n * shards_per_client`
/// equal contiguous shards (remainder dropped), deal shards to clients by a
/// seeded permutation.
pub fn partition_sorted_noniid(
    ds: &LabeledDataset,
    n: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<Partition> {
    if n == 0 || shards_per_client == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "client count and shards_per_client must be positive".into(),
        });
    }
    let total_shards = n * shards_per_client;
    if total_shards > ds.count() {
        return Err(Error::InfeasiblePartition {
            reason: format!(
                "{total_shards} shards requested from {} samples",
                ds.count()
            ),
        });
    }
    let shard_size = ds.count() / total_shards;

    let mut order: Vec<usize> = (0..ds.count()).collect();
    order.sort_by_key(|&i| (ds.labels[i], i));

    let mut shard_ids: Vec<usize> = (0..total_shards).collect();
    let mut rng = RngStream::simple(seed, Purpose::Partition).rng();
    shuffle_in_place(&mut rng, &mut shard_ids);

    let mut shards = Vec::with_capacity(n);
    for client in 0..n {
        let mut indices = Vec::with_capacity(shards_per_client * shard_size);
        for s in 0..shards_per_client {
            let shard_id = shard_ids[client * shards_per_client + s];
            let start = shard_id * shard_size;
            indices.extend_from_slice(&order[start..start + shard_size]);
        }
        indices.sort_unstable();
        shards.push(indices);
    }
    Ok(Partition {
        scheme: PartitionScheme::SortedNoniid { shards_per_client },
        seed,
        shards,
    })
}

/// IID split: seeded shuffle, equal contiguous cuts (remainder dropped).
pub fn partition_iid(ds: &LabeledDataset, n: usize, seed: u64) -> Result<Partition> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "client count must be positive".into(),
        });
    }
    if n > ds.count() {
        return Err(Error::InfeasiblePartition {
            reason: format!("{n} clients requested from {} samples", ds.count()),
        });
    }
    let mut order: Vec<usize> = (0..ds.count()).collect();
    let mut rng = RngStream::simple(seed, Purpose::Partition).rng();
    shuffle_in_place(&mut rng, &mut order);
    let per_client = ds.count() / n;
    let mut shards = Vec::with_capacity(n);
    for client in 0..n {
        let mut indices = order[client * per_client..(client + 1) * per_client].to_vec();
        indices.sort_unstable();
        shards.push(indices);
    }
    Ok(Partition {
        scheme: PartitionScheme::Iid,
        seed,
        shards,
    })
}

/// Individual test sets: client `i` holds samples of class `i mod C` only.
/// Each class's pool is seeded-shuffled and split equally among the clients
/// assigned to it (remainder dropped).
pub fn make_individual_test_sets(
    test: &LabeledDataset,
    n: usize,
    seed: u64,
) -> Result<Partition> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "client count must be positive".into(),
        });
    }
    if test.num_classes() == 0 {
        return Err(Error::EmptyDataset);
    }
    let classes = test.num_classes();
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (idx, &label) in test.labels.iter().enumerate() {
        pools[label as usize].push(idx);
    }

    let mut shards = vec![Vec::new(); n];
    for class in 0..classes {
        let clients: Vec<usize> = (0..n).filter(|i| i % classes == class).collect();
        if clients.is_empty() {
            continue;
        }
        if pools[class].is_empty() {
            return Err(Error::EmptyClass {
                class: class as u32,
            });
        }
        let per_client = pools[class].len() / clients.len();
        if per_client == 0 {
            return Err(Error::InfeasiblePartition {
                reason: format!(
                    "class {class} has {} samples for {} clients",
                    pools[class].len(),
                    clients.len()
                ),
            });
        }
        let mut rng = RngStream::with_index(seed, Purpose::TestAssign, class as u64).rng();
        shuffle_in_place(&mut rng, &mut pools[class]);
        for (slot, &client) in clients.iter().enumerate() {
            let mut indices = pools[class][slot * per_client..(slot + 1) * per_client].to_vec();
            indices.sort_unstable();
            shards[client] = indices;
        }
    }
    Ok(Partition {
        scheme: PartitionScheme::SingleClass,
        seed,
        shards,
    })
}

/// Append seeded samples of `extra` additional distinct classes to a test
/// shard, matching the base shard's per-class size.
pub fn add_extra_classes(
    shard: &[usize],
    test: &LabeledDataset,
    extra: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if extra + 1 > test.num_classes() {
        return Err(Error::InvalidParameter {
            name: "extra",
            reason: format!(
                "extra = {extra} exceeds num_classes - 1 = {}",
                test.num_classes().saturating_sub(1)
            ),
        });
    }
    let mut expanded = shard.to_vec();
    if extra == 0 {
        return Ok(expanded);
    }
    let base_classes: BTreeSet<u32> = shard.iter().map(|&i| test.labels[i]).collect();
    let per_class = if base_classes.is_empty() {
        0
    } else {
        shard.len() / base_classes.len()
    };
    let candidates: Vec<u32> = (0..test.num_classes() as u32)
        .filter(|c| !base_classes.contains(c))
        .collect();
    if extra > candidates.len() {
        return Err(Error::InvalidParameter {
            name: "extra",
            reason: format!(
                "only {} classes available beyond the shard's own",
                candidates.len()
            ),
        });
    }
    let mut rng = RngStream::simple(seed, Purpose::ExtraClasses).rng();
    let chosen = sample_indices(&mut rng, candidates.len(), extra);
    for slot in chosen {
        let class = candidates[slot];
        let pool: Vec<usize> = (0..test.count())
            .filter(|&i| test.labels[i] == class)
            .collect();
        if pool.is_empty() {
            return Err(Error::EmptyClass { class });
        }
        let take = per_class.min(pool.len()).max(1);
        let mut picked: Vec<usize> = sample_indices(&mut rng, pool.len(), take)
            .into_iter()
            .map(|slot| pool[slot])
            .collect();
        picked.sort_unstable();
        expanded.extend(picked);
    }
    Ok(expanded)
}

/// Analytic test bed: `f_i(x) = 0.5 * ||x - c_i||^2` per client.
///
/// The global optimum is the arithmetic mean of the centers. `noise` is the
/// Assumption-style stochastic-gradient bound: injected noise vectors have
/// `E||noise||^2 = noise^2` (per-coordinate std `noise / sqrt(d)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblem {
    centers: Vec<ParamVector>,
    noise: f64,
}

impl QuadraticProblem {
    pub fn new(centers: Vec<ParamVector>, noise: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidParameter {
                name: "centers",
                reason: "at least one client center required".into(),
            });
        }
        let dim = centers[0].dim();
        for (i, c) in centers.iter().enumerate() {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: c.dim(),
                    right: dim,
                    context: "quadratic centers",
                });
            }
            let _ = i;
        }
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(Error::InvalidParameter {
                name: "noise",
                reason: format!("noise level must be a nonnegative real, got {noise}"),
            });
        }
        Ok(Self { centers, noise })
    }

    pub fn num_clients(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].dim()
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn center(&self, client: usize) -> &ParamVector {
        &self.centers[client]
    }

    pub fn centers(&self) -> &[ParamVector] {
        &self.centers
    }

    /// Mean of the centers; equals the analytic global optimum.
    pub fn optimum(&self) -> ParamVector {
        let mut mean = ParamVector::zeros(self.dim());
        for c in &self.centers {
            mean.axpy_in_place(1.0 / self.num_clients() as f64, c);
        }
        mean
    }

    /// `f(x) = (1/n) sum_i 0.5 ||x - c_i||^2`.
    pub fn global_loss(&self, x: &ParamVector) -> f64 {
        self.centers
            .iter()
            .map(|c| 0.5 * x.squared_distance(c))
            .sum::<f64>()
            / self.num_clients() as f64
    }

    /// `grad f(x) = x - mean(c_i)`.
    pub fn global_grad(&self, x: &ParamVector) -> ParamVector {
        x.sub(&self.optimum()).expect("dims fixed at construction")
    }

    /// `(1/n) sum_i ||c_i - mean||^2`; the analytic dissimilarity constant
    /// for this problem (Assumption-style G^2 with B^2 = 1).
    pub fn center_variance(&self) -> f64 {
        let mean = self.optimum();
        self.centers
            .iter()
            .map(|c| c.squared_distance(&mean))
            .sum::<f64>()
            / self.num_clients() as f64
    }
}

/// Seeded isotropic Gaussian centers with per-coordinate std `spread`;
/// `spread = 0` gives identical (all-zero) centers.
pub fn synth_quadratic(n: usize, d: usize, spread: f64, seed: u64) -> Result<QuadraticProblem> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "need n >= 1 clients and d >= 1 dimensions".into(),
        });
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::InvalidParameter {
            name: "spread",
            reason: format!("spread must be a nonnegative real, got {spread}"),
        });
    }
    let mut centers = Vec::with_capacity(n);
    for client in 0..n {
        let mut rng = RngStream::with_index(seed, Purpose::Centers, client as u64).rng();
        let values: Vec<f64> = (0..d)
            .map(|_| spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        centers.push(ParamVector::new(values).expect("gaussian draw is finite"));
    }
    QuadraticProblem::new(centers, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced_dataset(count: usize, classes: usize) -> LabeledDataset {
        let feature_dim = 4;
        let mut features = Array2::zeros((count, feature_dim));
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = (i % classes) as u32;
            features[[i, 0]] = class as f64;
            features[[i, 1]] = i as f64;
            labels.push(class);
        }
        LabeledDataset::new(features, labels, classes).unwrap()
    }

    fn distinct_labels(ds: &LabeledDataset, shard: &[usize]) -> usize {
        shard
            .iter()
            .map(|&i| ds.labels()[i])
            .collect::<BTreeSet<_>>()
            .len()
    }

    #[test]
    fn sorted_noniid_single_shard_is_single_class() {
        let ds = balanced_dataset(1000, 10);
        let part = partition_sorted_noniid(&ds, 10, 1, 3).unwrap();
        part.validate(ds.count()).unwrap();
        for client in 0..10 {
            assert_eq!(distinct_labels(&ds, part.shard(client)), 1);
            assert_eq!(part.shard(client).len(), 100);
        }
    }

    #[test]
    fn sorted_noniid_bounds_distinct_labels() {
        let ds = balanced_dataset(1200, 10);
        for seed in 0..5 {
            let part = partition_sorted_noniid(&ds, 20, 2, seed).unwrap();
            part.validate(ds.count()).unwrap();
            for client in 0..20 {
                assert!(distinct_labels(&ds, part.shard(client)) <= 2);
            }
        }
    }

    #[test]
    fn sorted_noniid_single_client_gets_everything() {
        let ds = balanced_dataset(100, 10);
        let part = partition_sorted_noniid(&ds, 1, 1, 0).unwrap();
        assert_eq!(part.shard(0).len(), 100);
    }

    #[test]
    fn sorted_noniid_infeasible() {
        let ds = balanced_dataset(10, 2);
        assert!(matches!(
            partition_sorted_noniid(&ds, 6, 2, 0),
            Err(Error::InfeasiblePartition { .. })
        ));
    }

    #[test]
    fn iid_partition_sizes_and_determinism() {
        let ds = balanced_dataset(1000, 10);
        let a = partition_iid(&ds, 10, 9).unwrap();
        let b = partition_iid(&ds, 10, 9).unwrap();
        assert_eq!(a, b);
        a.validate(ds.count()).unwrap();
        for client in 0..10 {
            assert_eq!(a.shard(client).len(), 100);
        }
    }

    #[test]
    fn iid_histograms_close_to_global() {
        let ds = balanced_dataset(5000, 10);
        let part = partition_iid(&ds, 10, 4).unwrap();
        let global = ds.label_histogram(None);
        let total: usize = global.iter().sum();
        for client in 0..10 {
            let local = ds.label_histogram(Some(part.shard(client)));
            let local_total: usize = local.iter().sum();
            let tv: f64 = global
                .iter()
                .zip(&local)
                .map(|(&g, &l)| {
                    (g as f64 / total as f64 - l as f64 / local_total as f64).abs()
                })
                .sum::<f64>()
                / 2.0;
            assert!(tv <= 0.1, "client {client} tv distance {tv}");
        }
    }

    #[test]
    fn individual_test_sets_single_class() {
        let ds = balanced_dataset(10_000, 10);
        let part = make_individual_test_sets(&ds, 100, 5).unwrap();
        part.validate(ds.count()).unwrap();
        for client in 0..100 {
            assert_eq!(distinct_labels(&ds, part.shard(client)), 1);
            assert_eq!(part.shard(client).len(), 100);
            let class = ds.labels()[part.shard(client)[0]];
            assert_eq!(class as usize, client % 10);
        }
    }

    #[test]
    fn individual_test_sets_bijective_when_n_equals_classes() {
        let ds = balanced_dataset(200, 10);
        let part = make_individual_test_sets(&ds, 10, 0).unwrap();
        let mut seen = BTreeSet::new();
        for client in 0..10 {
            let class = ds.labels()[part.shard(client)[0]];
            assert_eq!(distinct_labels(&ds, part.shard(client)), 1);
            seen.insert(class);
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn individual_test_sets_single_client_gets_class_zero() {
        let ds = balanced_dataset(50, 5);
        let part = make_individual_test_sets(&ds, 1, 0).unwrap();
        assert_eq!(distinct_labels(&ds, part.shard(0)), 1);
        assert_eq!(ds.labels()[part.shard(0)[0]], 0);
    }

    #[test]
    fn extra_classes_counts() {
        let ds = balanced_dataset(1000, 10);
        let part = make_individual_test_sets(&ds, 10, 1).unwrap();
        let base = part.shard(3).to_vec();
        assert_eq!(add_extra_classes(&base, &ds, 0, 7).unwrap(), base);
        let with3 = add_extra_classes(&base, &ds, 3, 7).unwrap();
        assert_eq!(distinct_labels(&ds, &with3), 4);
        let all = add_extra_classes(&base, &ds, 9, 7).unwrap();
        assert_eq!(distinct_labels(&ds, &all), 10);
        assert!(add_extra_classes(&base, &ds, 10, 7).is_err());
    }

    #[test]
    fn quadratic_homogeneous_and_explicit_centers() {
        let p = synth_quadratic(4, 3, 0.0, 11).unwrap();
        for c in p.centers() {
            assert_eq!(c, &ParamVector::zeros(3));
        }
        assert_eq!(p.optimum(), ParamVector::zeros(3));

        let explicit = QuadraticProblem::new(
            vec![
                ParamVector::new(vec![0.0]).unwrap(),
                ParamVector::new(vec![2.0]).unwrap(),
            ],
            0.0,
        )
        .unwrap();
        assert_eq!(explicit.optimum(), ParamVector::new(vec![1.0]).unwrap());
    }

    #[test]
    fn quadratic_spread_gives_positive_dissimilarity() {
        let p = synth_quadratic(10, 5, 1.0, 3).unwrap();
        // (1/n) sum ||grad f_i(0)||^2 - ||grad f(0)||^2 evaluated directly.
        let x = ParamVector::zeros(5);
        let mean_sq: f64 = p
            .centers()
            .iter()
            .map(|c| x.sub(c).unwrap().squared_norm())
            .sum::<f64>()
            / 10.0;
        let global = p.global_grad(&x).squared_norm();
        assert!(mean_sq - global > 0.0);
        // Identity check: gap equals the center variance.
        assert!((mean_sq - global - p.center_variance()).abs() < 1e-12);
    }

    #[test]
    fn partition_cache_round_trip() {
        let ds = balanced_dataset(100, 5);
        let part = partition_sorted_noniid(&ds, 5, 2, 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partition.json");
        part.write_cache(&path).unwrap();
        let back = Partition::read_cache(&path).unwrap();
        assert_eq!(part, back);
    }

    #[test]
    fn subsample_is_seeded() {
        let ds = balanced_dataset(500, 10);
        let a = ds.subsample(50, 3).unwrap();
        let b = ds.subsample(50, 3).unwrap();
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.count(), 50);
    }
}
