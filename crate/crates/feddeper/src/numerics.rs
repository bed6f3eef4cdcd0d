//! Deterministic vector arithmetic and lineage-keyed randomness.
//!
//! Everything downstream (models, optimizers, diagnostics) is built on the
//! two types here: [`ParamVector`], a flat dense `f64` parameter vector that
//! is finite after every public operation, and [`RngStream`], a stateless
//! counter-style RNG keyed by `(master seed, purpose, client, round, step)`
//! so that concurrent client execution cannot perturb determinism.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Flat dense vector of `binary64` model parameters.
///
/// Invariants: non-empty, every entry finite. Constructors and public
/// operations enforce both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Build from raw values, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: "parameter vector must have positive dimension".into(),
            });
        }
        check_finite(&values, "ParamVector::new")?;
        Ok(Self(values))
    }

    /// All-zero vector of dimension `dim`.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Mutable access for internal kernels; callers must keep entries finite.
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub(crate) fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    /// Squared Euclidean distance to `other`.
    pub fn squared_distance(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Elementwise sum; dims must match.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dims(self, other, "add")?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Elementwise difference; dims must match.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dims(self, other, "sub")?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> ParamVector {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += factor * other`, without re-validation (internal hot path).
    pub(crate) fn axpy_in_place(&mut self, factor: f64, other: &ParamVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, f64)> {
        self.0
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
            .map(|(i, v)| (i, *v))
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

fn check_finite(values: &[f64], context: &'static str) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                index,
                value,
                context,
            });
        }
    }
    Ok(())
}

fn check_dims(a: &ParamVector, b: &ParamVector, context: &'static str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
            context,
        });
    }
    Ok(())
}

/// Convex mix `(1-lambda)*a + lambda*b`.
///
/// Computed as `a + lambda*(b - a)` so that `mix(a, a, lambda) == a` for
/// every `lambda`; the endpoints `lambda = 0` and `lambda = 1` return `a`
/// and `b` bitwise.
pub fn mix(a: &ParamVector, b: &ParamVector, lambda: f64) -> Result<ParamVector> {
    check_dims(a, b, "mix")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            reason: format!("mixing rate must lie in [0, 1], got {lambda}"),
        });
    }
    if lambda == 0.0 {
        return Ok(a.clone());
    }
    if lambda == 1.0 {
        return Ok(b.clone());
    }
    let out: Vec<f64> = a
        .0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| x + lambda * (y - x))
        .collect();
    check_finite(&out, "mix")?;
    Ok(ParamVector(out))
}

/// One SGD step `p - eta * g`.
pub fn sgd_step(p: &ParamVector, g: &ParamVector, eta: f64) -> Result<ParamVector> {
    check_dims(p, g, "sgd_step")?;
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "eta",
            reason: format!("learning rate must be a positive finite real, got {eta}"),
        });
    }
    if let Some((index, value)) = g.first_non_finite() {
        return Err(Error::NonFinite {
            index,
            value,
            context: "sgd_step gradient",
        });
    }
    let out: Vec<f64> = p.0.iter().zip(&g.0).map(|(x, gi)| x - eta * gi).collect();
    check_finite(&out, "sgd_step")?;
    Ok(ParamVector(out))
}

/// Central-difference gradient estimate of a scalar function.
///
/// Second-order accurate: `(f(p + h*e_i) - f(p - h*e_i)) / (2h)` per
/// coordinate. `DEFAULT_FD_STEP` is small enough for the 1e-6 relative
/// tolerance the gradient checks use.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

pub fn finite_difference_grad<F>(f: F, p: &ParamVector, h: f64) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!("step must be a positive finite real, got {h}"),
        });
    }
    let mut probe = p.clone();
    let mut grad = Vec::with_capacity(p.dim());
    for i in 0..p.dim() {
        let original = probe.0[i];
        probe.0[i] = original + h;
        let plus = eval_probe(&f, &probe, i, h)?;
        probe.0[i] = original - h;
        let minus = eval_probe(&f, &probe, i, -h)?;
        probe.0[i] = original;
        grad.push((plus - minus) / (2.0 * h));
    }
    check_finite(&grad, "finite_difference_grad")?;
    Ok(ParamVector(grad))
}

fn eval_probe<F>(f: &F, probe: &ParamVector, coordinate: usize, offset: f64) -> Result<f64>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    let value = f(probe)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteEvaluation { coordinate, offset });
    }
    Ok(value)
}

/// What a [`RngStream`] is drawn for. Part of the lineage key, so streams
/// for different purposes never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum Purpose {
    /// Per-round client subset selection.
    ClientSampling = 1,
    /// Minibatch selection for the uploaded (globalized) model path.
    BatchGlobal = 2,
    /// Minibatch selection for the retained (personalized) model path.
    BatchPersonal = 3,
    /// Injected gradient noise, globalized path.
    NoiseGlobal = 4,
    /// Injected gradient noise, personalized path.
    NoisePersonal = 5,
    /// Model parameter initialization.
    ParamInit = 6,
    /// Dataset partition shuffles.
    Partition = 7,
    /// Individual test-set assignment.
    TestAssign = 8,
    /// Extra-class augmentation of test shards.
    ExtraClasses = 9,
    /// Synthetic quadratic center draws.
    Centers = 10,
    /// Probe points for constant estimation.
    Probe = 11,
    /// Synthetic digit image generation.
    DataGen = 12,
    /// Seeded dataset subsampling.
    Subsample = 13,
}

/// Stateless, lineage-keyed random stream.
///
/// Two independently constructed streams with equal `(master_seed, lineage)`
/// emit identical output on every platform; distinct lineages are keyed
/// through SHA-256, so their ChaCha streams are statistically independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    master_seed: u64,
    purpose: Purpose,
    client: u64,
    round: u64,
    step: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, purpose: Purpose, client: u64, round: u64, step: u64) -> Self {
        Self {
            master_seed,
            purpose,
            client,
            round,
            step,
        }
    }

    /// Stream for client sampling in round `round`. Deliberately independent
    /// of the algorithm kind so runs with a shared seed sample the same
    /// client subsets.
    pub fn client_sampling(master_seed: u64, round: usize) -> Self {
        Self::new(master_seed, Purpose::ClientSampling, 0, round as u64, 0)
    }

    pub fn batch(master_seed: u64, purpose: Purpose, client: usize, round: usize, step: usize) -> Self {
        Self::new(master_seed, purpose, client as u64, round as u64, step as u64)
    }

    pub fn param_init(master_seed: u64) -> Self {
        Self::new(master_seed, Purpose::ParamInit, 0, 0, 0)
    }

    pub fn simple(master_seed: u64, purpose: Purpose) -> Self {
        Self::new(master_seed, purpose, 0, 0, 0)
    }

    pub fn with_index(master_seed: u64, purpose: Purpose, index: u64) -> Self {
        Self::new(master_seed, purpose, index, 0, 0)
    }

    /// Instantiate the concrete generator for this lineage.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update([self.purpose as u8]);
        hasher.update(self.client.to_le_bytes());
        hasher.update(self.round.to_le_bytes());
        hasher.update(self.step.to_le_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }
}

/// Draw `count` distinct indices from `0..population`, uniform over subsets,
/// returned in ascending order. Partial Fisher-Yates on an index table.
pub fn sample_indices(
    rng: &mut ChaCha8Rng,
    population: usize,
    count: usize,
) -> Vec<usize> {
    use rand::Rng;
    assert!(count <= population);
    let mut table: Vec<usize> = (0..population).collect();
    for i in 0..count {
        let j = rng.gen_range(i..population);
        table.swap(i, j);
    }
    let mut chosen = table[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Seeded Fisher-Yates shuffle.
pub fn shuffle_in_place<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
