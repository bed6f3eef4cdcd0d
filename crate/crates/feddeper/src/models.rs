//! Differentiable objectives: loss and analytic stochastic gradient for
//! quadratic, logistic-regression, and MLP models.
//!
//! The logistic and MLP kinds share one dense-network core (logistic is the
//! zero-hidden-layer case). Hidden activations are ReLU; the output layer is
//! softmax cross-entropy. All reductions over a batch are means, so the
//! learning rate has batch-size-independent meaning.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamVector, RngStream};

/// Which objective a parameter vector parameterizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `f_i(x) = 0.5 * ||x - c_i||^2` with per-client centers.
    Quadratic { dim: usize },
    /// Linear softmax classifier.
    Logistic { features: usize, classes: usize },
    /// Fully connected ReLU network; `layers` lists every width from input
    /// to output, e.g. `[784, 512, 256, 10]`.
    Mlp { layers: Vec<usize> },
}

impl ModelSpec {
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 2);
        layers.push(input);
        layers.extend_from_slice(hidden);
        layers.push(classes);
        ModelSpec::Mlp { layers }
    }

    /// Total parameter dimension `d`.
    pub fn param_count(&self) -> usize {
        match self {
            ModelSpec::Quadratic { dim } => *dim,
            _ => self
                .layer_sizes()
                .windows(2)
                .map(|w| w[0] * w[1] + w[1])
                .sum(),
        }
    }

    /// Dense layer widths, `[input, hidden.., classes]`; empty for quadratic.
    pub fn layer_sizes(&self) -> Vec<usize> {
        match self {
            ModelSpec::Quadratic { .. } => Vec::new(),
            ModelSpec::Logistic { features, classes } => vec![*features, *classes],
            ModelSpec::Mlp { layers } => layers.clone(),
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            ModelSpec::Quadratic { .. } => None,
            ModelSpec::Logistic { classes, .. } => Some(*classes),
            ModelSpec::Mlp { layers } => layers.last().copied(),
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, ModelSpec::Quadratic { .. })
    }

    fn check_dim(&self, p: &ParamVector) -> Result<()> {
        if p.dim() != self.param_count() {
            return Err(Error::DimensionMismatch {
                left: p.dim(),
                right: self.param_count(),
                context: "parameter vector vs model spec",
            });
        }
        Ok(())
    }
}

/// One minibatch. Quadratic batches carry the client's center plus any
/// pre-drawn gradient noise; supervised batches own gathered rows.
#[derive(Clone, Debug)]
pub enum Batch {
    Quadratic {
        center: ParamVector,
        /// Pre-drawn additive gradient noise (already scaled); `None` for
        /// the exact full-batch gradient.
        noise: Option<Vec<f64>>,
    },
    Supervised {
        features: Array2<f64>,
        labels: Vec<u32>,
    },
}

impl Batch {
    pub fn supervised(features: Array2<f64>, labels: Vec<u32>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if features.nrows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.nrows(),
                labels: labels.len(),
            });
        }
        Ok(Batch::Supervised { features, labels })
    }

    pub fn len(&self) -> usize {
        match self {
            Batch::Quadratic { .. } => 1,
            Batch::Supervised { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean loss of `p` over the batch.
///
/// Quadratic: `0.5 * ||p - c||^2` (injected noise affects only the
/// stochastic gradient, never the reported loss). Classifiers: mean softmax
/// cross-entropy.
pub fn loss(spec: &ModelSpec, p: &ParamVector, batch: &Batch) -> Result<f64> {
    spec.check_dim(p)?;
    let value = match (spec, batch) {
        (ModelSpec::Quadratic { .. }, Batch::Quadratic { center, .. }) => {
            0.5 * p.squared_distance(center)
        }
        (_, Batch::Supervised { features, labels }) if spec.is_classifier() => {
            dense_loss(spec, p, features.view(), labels)?
        }
        _ => {
            return Err(Error::InvalidParameter {
                name: "batch",
                reason: "batch kind does not match model kind".into(),
            })
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite {
            index: 0,
            value,
            context: "loss",
        });
    }
    Ok(value)
}

/// Analytic gradient of [`loss`] at `p`, mean-reduced over the batch.
pub fn grad(spec: &ModelSpec, p: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    spec.check_dim(p)?;
    match (spec, batch) {
        (ModelSpec::Quadratic { .. }, Batch::Quadratic { center, noise }) => {
            let mut g = p.sub(center)?;
            if let Some(noise) = noise {
                debug_assert_eq!(noise.len(), g.dim());
                for (gi, ni) in g.as_mut_slice().iter_mut().zip(noise) {
                    *gi += ni;
                }
            }
            if let Some((index, value)) = g.first_non_finite() {
                return Err(Error::NonFinite {
                    index,
                    value,
                    context: "quadratic gradient",
                });
            }
            Ok(g)
        }
        (_, Batch::Supervised { features, labels }) if spec.is_classifier() => {
            let (_, g) = dense_loss_grad(spec, p, features.view(), labels)?;
            Ok(g)
        }
        _ => Err(Error::InvalidParameter {
            name: "batch",
            reason: "batch kind does not match model kind".into(),
        }),
    }
}

/// Analytic gradient over a borrowed feature view, avoiding the batch copy.
/// Classifier kinds only.
pub fn grad_dense(
    spec: &ModelSpec,
    p: &ParamVector,
    features: ArrayView2<f64>,
    labels: &[u32],
) -> Result<ParamVector> {
    if !spec.is_classifier() {
        return Err(Error::InvalidParameter {
            name: "spec",
            reason: "grad_dense requires a classification model".into(),
        });
    }
    spec.check_dim(p)?;
    let (_, g) = dense_loss_grad(spec, p, features, labels)?;
    Ok(g)
}

/// Seeded parameter initialization.
///
/// Quadratic kind starts at the origin. Dense layers draw weights and biases
/// uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_params(spec: &ModelSpec, stream: &RngStream) -> ParamVector {
    match spec {
        ModelSpec::Quadratic { dim } => ParamVector::zeros(*dim),
        _ => {
            let sizes = spec.layer_sizes();
            let mut rng = stream.rng();
            let mut values = Vec::with_capacity(spec.param_count());
            for w in sizes.windows(2) {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                for _ in 0..(fan_in * fan_out + fan_out) {
                    values.push(rng.gen_range(-bound..=bound));
                }
            }
            ParamVector::new(values).expect("uniform init is finite")
        }
    }
}

/// Mean loss and top-1 accuracy over a dataset view.
///
/// Accuracy breaks argmax ties toward the lowest class id, which makes the
/// whole evaluation deterministic. Classifier kinds only.
pub fn evaluate(
    spec: &ModelSpec,
    p: &ParamVector,
    features: ArrayView2<f64>,
    labels: &[u32],
) -> Result<(f64, f64)> {
    if !spec.is_classifier() {
        return Err(Error::InvalidParameter {
            name: "spec",
            reason: "evaluate requires a classification model".into(),
        });
    }
    spec.check_dim(p)?;
    if features.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if features.nrows() != labels.len() {
        return Err(Error::CountMismatch {
            images: features.nrows(),
            labels: labels.len(),
        });
    }

    // Fixed chunk size with sequential combination keeps the float-summation
    // order independent of how the caller obtained the view.
    const CHUNK: usize = 1024;
    let rows = features.nrows();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut start = 0;
    while start < rows {
        let end = (start + CHUNK).min(rows);
        let chunk = features.slice(ndarray::s![start..end, ..]);
        let chunk_labels = &labels[start..end];
        let logits = dense_logits(spec, p, chunk)?;
        for (row, &label) in logits.outer_iter().zip(chunk_labels) {
            let mut best = 0usize;
            let mut best_val = row[0];
            for (idx, &v) in row.iter().enumerate().skip(1) {
                if v > best_val {
                    best = idx;
                    best_val = v;
                }
            }
            if best == label as usize {
                correct += 1;
            }
            loss_sum += cross_entropy_row(row.as_slice().expect("contiguous row"), label);
        }
        start = end;
    }
    Ok((loss_sum / rows as f64, correct as f64 / rows as f64))
}

// ---------------------------------------------------------------------------
// Dense network core (logistic = zero hidden layers)
// ---------------------------------------------------------------------------

struct LayerViews<'a> {
    weights: ArrayView2<'a, f64>,
    bias: &'a [f64],
}

fn layer_views<'a>(sizes: &[usize], flat: &'a [f64]) -> Vec<LayerViews<'a>> {
    let mut views = Vec::with_capacity(sizes.len() - 1);
    let mut offset = 0;
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weights =
            ArrayView2::from_shape((fan_in, fan_out), &flat[offset..offset + fan_in * fan_out])
                .expect("contiguous layout");
        offset += fan_in * fan_out;
        let bias = &flat[offset..offset + fan_out];
        offset += fan_out;
        views.push(LayerViews { weights, bias });
    }
    views
}

fn check_features(sizes: &[usize], features: &ArrayView2<f64>) -> Result<()> {
    if features.ncols() != sizes[0] {
        return Err(Error::DimensionMismatch {
            left: features.ncols(),
            right: sizes[0],
            context: "feature width vs model input",
        });
    }
    Ok(())
}

/// Forward pass returning raw logits.
fn dense_logits(spec: &ModelSpec, p: &ParamVector, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    let sizes = spec.layer_sizes();
    check_features(&sizes, &features)?;
    let layers = layer_views(&sizes, p.as_slice());
    let mut activation = features.to_owned();
    for (idx, layer) in layers.iter().enumerate() {
        let mut z = activation.dot(&layer.weights);
        for mut row in z.outer_iter_mut() {
            for (v, b) in row.iter_mut().zip(layer.bias) {
                *v += b;
            }
        }
        if idx + 1 < layers.len() {
            z.mapv_inplace(|v| v.max(0.0));
        }
        activation = z;
    }
    Ok(activation)
}

/// `-log softmax(logits)[label]`, computed stably.
fn cross_entropy_row(logits: &[f64], label: u32) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label as usize]
}

fn dense_loss(
    spec: &ModelSpec,
    p: &ParamVector,
    features: ArrayView2<f64>,
    labels: &[u32],
) -> Result<f64> {
    if features.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let logits = dense_logits(spec, p, features)?;
    let mut sum = 0.0;
    for (row, &label) in logits.outer_iter().zip(labels) {
        sum += cross_entropy_row(row.as_slice().expect("contiguous row"), label);
    }
    Ok(sum / labels.len() as f64)
}

fn dense_loss_grad(
    spec: &ModelSpec,
    p: &ParamVector,
    features: ArrayView2<f64>,
    labels: &[u32],
) -> Result<(f64, ParamVector)> {
    if features.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let sizes = spec.layer_sizes();
    check_features(&sizes, &features)?;
    let layers = layer_views(&sizes, p.as_slice());
    let rows = features.nrows();

    // Forward, retaining post-activation values per layer.
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(layers.len() + 1);
    activations.push(features.to_owned());
    for (idx, layer) in layers.iter().enumerate() {
        let mut z = activations[idx].dot(&layer.weights);
        for mut row in z.outer_iter_mut() {
            for (v, b) in row.iter_mut().zip(layer.bias) {
                *v += b;
            }
        }
        if idx + 1 < layers.len() {
            z.mapv_inplace(|v| v.max(0.0));
        }
        activations.push(z);
    }

    // Loss and softmax-CE delta at the output, mean reduction folded in.
    let logits = activations.last().expect("output activation");
    let mut delta = Array2::<f64>::zeros(logits.raw_dim());
    let mut loss_sum = 0.0;
    let inv_rows = 1.0 / rows as f64;
    for ((logit_row, mut delta_row), &label) in logits
        .outer_iter()
        .zip(delta.outer_iter_mut())
        .zip(labels)
    {
        let slice = logit_row.as_slice().expect("contiguous row");
        let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = slice.iter().map(|v| (v - max).exp()).sum();
        loss_sum += max + denom.ln() - slice[label as usize];
        for (c, d) in delta_row.iter_mut().enumerate() {
            let prob = (slice[c] - max).exp() / denom;
            *d = (prob - if c == label as usize { 1.0 } else { 0.0 }) * inv_rows;
        }
    }

    // Backward through the layers into one flat gradient.
    let mut grad_flat = vec![0.0; spec.param_count()];
    let mut offsets = Vec::with_capacity(layers.len());
    {
        let mut offset = 0;
        for w in sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
    }
    let mut delta = delta;
    for idx in (0..layers.len()).rev() {
        let (fan_in, fan_out) = (sizes[idx], sizes[idx + 1]);
        let input = &activations[idx];
        let dw = input.t().dot(&delta);
        let db = delta.sum_axis(Axis(0));
        let base = offsets[idx];
        grad_flat[base..base + fan_in * fan_out]
            .copy_from_slice(dw.as_slice().expect("contiguous"));
        grad_flat[base + fan_in * fan_out..base + fan_in * fan_out + fan_out]
            .copy_from_slice(db.as_slice().expect("contiguous"));
        if idx > 0 {
            let mut upstream = delta.dot(&layers[idx].weights.t());
            // ReLU mask from the retained post-activation values.
            for (u, a) in upstream.iter_mut().zip(input.iter()) {
                if *a <= 0.0 {
                    *u = 0.0;
                }
            }
            delta = upstream;
        }
    }
    let grad = ParamVector::new(grad_flat)?;
    Ok((loss_sum * inv_rows, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_grad, Purpose};
    use ndarray::array;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn quadratic_loss_and_grad() {
        let spec = ModelSpec::Quadratic { dim: 1 };
        let batch = Batch::Quadratic {
            center: pv(&[1.0]),
            noise: None,
        };
        assert_eq!(loss(&spec, &pv(&[1.0]), &batch).unwrap(), 0.0);
        assert_eq!(grad(&spec, &pv(&[3.0]), &batch).unwrap(), pv(&[2.0]));
    }

    #[test]
    fn logistic_zero_weights_uniform_loss() {
        let spec = ModelSpec::Logistic {
            features: 3,
            classes: 2,
        };
        let p = ParamVector::zeros(spec.param_count());
        let batch = Batch::supervised(
            array![[0.3, -1.0, 0.5], [2.0, 0.1, -0.2]],
            vec![0, 1],
        )
        .unwrap();
        let l = loss(&spec, &p, &batch).unwrap();
        assert!((l - (2.0f64).ln()).abs() < 1e-12, "{l}");
    }

    #[test]
    fn mlp_param_count_matches_architecture() {
        let spec = ModelSpec::mlp(784, &[512, 256], 10);
        assert_eq!(spec.param_count(), 535_818);
    }

    #[test]
    fn init_is_deterministic_and_zero_for_quadratic() {
        let spec = ModelSpec::Quadratic { dim: 4 };
        assert_eq!(
            init_params(&spec, &RngStream::param_init(9)),
            ParamVector::zeros(4)
        );
        let mlp = ModelSpec::mlp(5, &[4], 3);
        let a = init_params(&mlp, &RngStream::param_init(7));
        let b = init_params(&mlp, &RngStream::param_init(7));
        assert_eq!(a, b);
        assert_ne!(a, init_params(&mlp, &RngStream::param_init(8)));
    }

    /// Independent per-sample forward pass written as straight-line code,
    /// used as a second oracle for the batched implementation.
    fn straight_line_forward(sizes: &[usize], flat: &[f64], sample: &[f64]) -> Vec<f64> {
        let mut acts = sample.to_vec();
        let mut offset = 0;
        for (li, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let mut z = flat[offset + fan_in * fan_out + o];
                for i in 0..fan_in {
                    z += acts[i] * flat[offset + i * fan_out + o];
                }
                next[o] = z;
            }
            if li + 2 < sizes.len() {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            offset += fan_in * fan_out + fan_out;
            acts = next;
        }
        acts
    }

    #[test]
    fn mlp_loss_matches_straight_line_reimplementation() {
        let spec = ModelSpec::mlp(6, &[5, 4], 3);
        let p = init_params(&spec, &RngStream::param_init(11));
        let mut rng = RngStream::simple(12, Purpose::Probe).rng();
        let rows = 32;
        let mut feats = Array2::<f64>::zeros((rows, 6));
        let mut labels = Vec::new();
        for mut row in feats.outer_iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        for _ in 0..rows {
            labels.push(rng.gen_range(0..3u32));
        }
        let batch = Batch::supervised(feats.clone(), labels.clone()).unwrap();
        let batched = loss(&spec, &p, &batch).unwrap();

        let sizes = spec.layer_sizes();
        let mut manual = 0.0;
        for (row, &label) in feats.outer_iter().zip(&labels) {
            let logits =
                straight_line_forward(&sizes, p.as_slice(), row.as_slice().unwrap());
            manual += cross_entropy_row(&logits, label);
        }
        manual /= rows as f64;
        assert!(
            (batched - manual).abs() <= 1e-10 * (1.0 + manual.abs()),
            "batched {batched} vs manual {manual}"
        );
    }

    fn random_batch(spec: &ModelSpec, seed: u64, rows: usize) -> Batch {
        let sizes = spec.layer_sizes();
        let classes = *sizes.last().unwrap() as u32;
        let mut rng = RngStream::simple(seed, Purpose::Probe).rng();
        let mut feats = Array2::<f64>::zeros((rows, sizes[0]));
        for v in feats.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let labels = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
        Batch::supervised(feats, labels).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (spec, tol) in [
            (
                ModelSpec::Logistic {
                    features: 4,
                    classes: 3,
                },
                1e-6,
            ),
            (ModelSpec::mlp(5, &[6, 4], 3), 1e-5),
        ] {
            let batch = random_batch(&spec, 31, 16);
            for seed in 0..5u64 {
                let p = init_params(&spec, &RngStream::param_init(100 + seed));
                let analytic = grad(&spec, &p, &batch).unwrap();
                let numeric = finite_difference_grad(
                    |q| loss(&spec, q, &batch),
                    &p,
                    crate::numerics::DEFAULT_FD_STEP,
                )
                .unwrap();
                let diff = analytic.sub(&numeric).unwrap().norm();
                let denom = analytic.norm().max(1e-12);
                assert!(
                    diff / denom <= tol,
                    "rel err {} for {:?} seed {}",
                    diff / denom,
                    spec,
                    seed
                );
            }
        }
    }

    #[test]
    fn full_batch_grad_is_mean_of_per_sample_grads() {
        let spec = ModelSpec::Logistic {
            features: 4,
            classes: 3,
        };
        let p = init_params(&spec, &RngStream::param_init(5));
        let batch = random_batch(&spec, 77, 8);
        let full = grad(&spec, &p, &batch).unwrap();
        let (feats, labels) = match &batch {
            Batch::Supervised { features, labels } => (features, labels),
            _ => unreachable!(),
        };
        let mut acc = ParamVector::zeros(spec.param_count());
        for (row, &label) in feats.outer_iter().zip(labels) {
            let one = Batch::supervised(
                Array2::from_shape_vec((1, 4), row.to_vec()).unwrap(),
                vec![label],
            )
            .unwrap();
            acc.axpy_in_place(1.0 / labels.len() as f64, &grad(&spec, &p, &one).unwrap());
        }
        let diff = full.sub(&acc).unwrap().norm();
        assert!(diff <= 1e-12 * (1.0 + full.norm()), "{diff}");
    }

    #[test]
    fn evaluate_tie_breaks_to_lowest_class() {
        let spec = ModelSpec::Logistic {
            features: 2,
            classes: 4,
        };
        let p = ParamVector::zeros(spec.param_count());
        let feats = array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [1.0, 1.0]];
        let labels = vec![0u32, 1, 0, 0];
        let (_, acc) = evaluate(&spec, &p, feats.view(), &labels).unwrap();
        // Zero weights -> all logits equal -> argmax is class 0 everywhere.
        assert_eq!(acc, 3.0 / 4.0);
    }

    #[test]
    fn evaluate_matches_per_sample_counting() {
        let spec = ModelSpec::mlp(6, &[5], 4);
        let p = init_params(&spec, &RngStream::param_init(21));
        let batch = random_batch(&spec, 99, 50);
        let (feats, labels) = match &batch {
            Batch::Supervised { features, labels } => (features.clone(), labels.clone()),
            _ => unreachable!(),
        };
        let (_, acc) = evaluate(&spec, &p, feats.view(), &labels).unwrap();
        let sizes = spec.layer_sizes();
        let mut correct = 0;
        for (row, &label) in feats.outer_iter().zip(&labels) {
            let logits =
                straight_line_forward(&sizes, p.as_slice(), row.as_slice().unwrap());
            let mut best = 0;
            for (i, &v) in logits.iter().enumerate().skip(1) {
                if v > logits[best] {
                    best = i;
                }
            }
            if best == label as usize {
                correct += 1;
            }
        }
        assert_eq!(acc, correct as f64 / labels.len() as f64);
    }

    #[test]
    fn evaluate_rejects_empty_dataset() {
        let spec = ModelSpec::Logistic {
            features: 2,
            classes: 2,
        };
        let p = ParamVector::zeros(spec.param_count());
        let feats = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            evaluate(&spec, &p, feats.view(), &[]),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn directional_derivative_consistency() {
        let spec = ModelSpec::mlp(5, &[4], 3);
        let batch = random_batch(&spec, 13, 12);
        let p = init_params(&spec, &RngStream::param_init(3));
        let g = grad(&spec, &p, &batch).unwrap();
        let h = 1e-6;
        let mut rng = RngStream::simple(55, Purpose::Probe).rng();
        for _ in 0..10 {
            let dir: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = ParamVector::new(dir).unwrap();
            let u = u.scale(1.0 / u.norm());
            let plus = loss(&spec, &p.add(&u.scale(h)).unwrap(), &batch).unwrap();
            let minus = loss(&spec, &p.add(&u.scale(-h)).unwrap(), &batch).unwrap();
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = g.dot(&u);
            assert!(
                (numeric - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()),
                "dir deriv {numeric} vs {analytic}"
            );
        }
    }

    #[test]
    fn loss_invariant_under_batch_permutation() {
        let spec = ModelSpec::Logistic {
            features: 3,
            classes: 2,
        };
        let p = init_params(&spec, &RngStream::param_init(1));
        let feats = array![[1.0, 0.0, 1.0], [0.0, 2.0, 0.5], [1.5, -1.0, 0.0]];
        let labels = vec![0u32, 1, 0];
        let fwd = loss(
            &spec,
            &p,
            &Batch::supervised(feats.clone(), labels.clone()).unwrap(),
        )
        .unwrap();
        let rev_feats = array![[1.5, -1.0, 0.0], [0.0, 2.0, 0.5], [1.0, 0.0, 1.0]];
        let rev = loss(
            &spec,
            &p,
            &Batch::supervised(rev_feats, vec![0, 1, 0]).unwrap(),
        )
        .unwrap();
        assert!((fwd - rev).abs() < 1e-12);
    }
}
