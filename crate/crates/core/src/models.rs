//! Small trainable models and mini-batch SGD.
//!
//! Parameters are laid out layer by layer, weights (row-major, one row per
//! output unit) before biases:
//!
//! - linear regression / softmax: `W[out x in]`, `b[out]`
//! - one-hidden-layer MLP: `W1[hidden x in]`, `b1[hidden]`, `W2[out x hidden]`, `b2[out]`
//!
//! Regression uses per-sample squared error `||y_hat - y||^2`; classifiers use
//! softmax cross-entropy. The MLP uses `tanh` and takes its loss from the
//! dataset's target kind.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::paramvec::ParamVector;
use crate::streams::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearRegression,
    #[serde(alias = "softmax")]
    SoftmaxClassifier,
    #[serde(alias = "mlp")]
    Mlp1Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Only meaningful for [`ModelKind::Mlp1Hidden`].
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Local epochs per training round.
    pub epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 8,
            epochs: 3,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid("batch_size and epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Class index per sample.
    Classes(Vec<usize>),
    /// `dim` real outputs per sample, flattened.
    Values { dim: usize, values: Vec<f64> },
}

/// Row-major samples with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_dim: usize,
    inputs: Vec<f64>,
    targets: Targets,
}

#[derive(Debug, Clone, Copy)]
enum Target<'a> {
    Class(usize),
    Values(&'a [f64]),
}

impl Dataset {
    pub fn new(input_dim: usize, inputs: Vec<f64>, targets: Targets) -> Result<Self> {
        if input_dim == 0 {
            return Err(invalid("input_dim must be positive"));
        }
        if !inputs.len().is_multiple_of(input_dim) {
            return Err(invalid("inputs are not a whole number of rows"));
        }
        let n = inputs.len() / input_dim;
        let n_targets = match &targets {
            Targets::Classes(c) => c.len(),
            Targets::Values { dim, values } => {
                if *dim == 0 || values.len() % dim != 0 {
                    return Err(invalid("target values are not a whole number of rows"));
                }
                values.len() / dim
            }
        };
        if n != n_targets {
            return Err(invalid(format!("{n} inputs but {n_targets} targets")));
        }
        Ok(Self {
            input_dim,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    fn target(&self, i: usize) -> Target<'_> {
        match &self.targets {
            Targets::Classes(c) => Target::Class(c[i]),
            Targets::Values { dim, values } => Target::Values(&values[i * dim..(i + 1) * dim]),
        }
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        let targets = match &self.targets {
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
            Targets::Values { dim, values } => {
                let mut out = Vec::with_capacity(indices.len() * dim);
                for &i in indices {
                    out.extend_from_slice(&values[i * dim..(i + 1) * dim]);
                }
                Targets::Values { dim: *dim, values: out }
            }
        };
        Dataset {
            input_dim: self.input_dim,
            inputs,
            targets,
        }
    }

    /// Concatenates datasets with matching shapes.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut iter = parts.into_iter();
        let first = iter.next().ok_or_else(|| invalid("concat of no datasets"))?;
        let mut out = first.clone();
        for d in iter {
            if d.input_dim != out.input_dim {
                return Err(invalid("input_dim mismatch in concat"));
            }
            out.inputs.extend_from_slice(&d.inputs);
            match (&mut out.targets, &d.targets) {
                (Targets::Classes(a), Targets::Classes(b)) => a.extend_from_slice(b),
                (Targets::Values { dim: da, values: a }, Targets::Values { dim: db, values: b }) if da == db => {
                    a.extend_from_slice(b)
                }
                _ => return Err(invalid("target kind mismatch in concat")),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LossKind {
    SquaredError,
    CrossEntropy,
}

struct Scratch {
    hidden: Vec<f64>,
    out: Vec<f64>,
    d_out: Vec<f64>,
    d_hidden: Vec<f64>,
}

impl ModelSpec {
    pub fn linear_regression(input_dim: usize, output_dim: usize) -> Self {
        Self {
            kind: ModelKind::LinearRegression,
            input_dim,
            output_dim,
            hidden_dim: 0,
        }
    }

    pub fn softmax(input_dim: usize, n_classes: usize) -> Self {
        Self {
            kind: ModelKind::SoftmaxClassifier,
            input_dim,
            output_dim: n_classes,
            hidden_dim: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            kind: ModelKind::Mlp1Hidden,
            input_dim,
            output_dim,
            hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(invalid("model input_dim and output_dim must be positive"));
        }
        if self.kind == ModelKind::Mlp1Hidden && self.hidden_dim == 0 {
            return Err(invalid("mlp hidden_dim must be positive"));
        }
        if self.kind == ModelKind::SoftmaxClassifier && self.output_dim < 2 {
            return Err(invalid("softmax classifier needs at least 2 classes"));
        }
        Ok(())
    }

    /// Exact number of parameters implied by kind and dimensions.
    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::SoftmaxClassifier => {
                self.input_dim * self.output_dim + self.output_dim
            }
            ModelKind::Mlp1Hidden => {
                self.input_dim * self.hidden_dim + self.hidden_dim + self.hidden_dim * self.output_dim + self.output_dim
            }
        }
    }

    /// `(fan_in, weight_count, bias_count)` for each layer in layout order.
    fn layers(&self) -> Vec<(usize, usize, usize)> {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::SoftmaxClassifier => {
                vec![(self.input_dim, self.input_dim * self.output_dim, self.output_dim)]
            }
            ModelKind::Mlp1Hidden => vec![
                (self.input_dim, self.input_dim * self.hidden_dim, self.hidden_dim),
                (self.hidden_dim, self.hidden_dim * self.output_dim, self.output_dim),
            ],
        }
    }

    /// Deterministic initialisation: weights uniform in `±1/sqrt(fan_in)`,
    /// biases zero. Identical `(spec, seed)` gives identical parameters.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = stream(seed, Purpose::Init, 0, 0);
        let mut values = Vec::with_capacity(self.param_count());
        for (fan_in, weights, biases) in self.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..weights {
                values.push(rng.random_range(-bound..=bound));
            }
            values.extend(std::iter::repeat_n(0.0, biases));
        }
        ParamVector::from_finite(values)
    }

    fn loss_for(&self, data: &Dataset) -> Result<LossKind> {
        if data.input_dim() != self.input_dim {
            return Err(invalid(format!(
                "dataset input_dim {} does not match model input_dim {}",
                data.input_dim(),
                self.input_dim
            )));
        }
        match (&data.targets, self.kind) {
            (Targets::Classes(c), ModelKind::SoftmaxClassifier | ModelKind::Mlp1Hidden) => {
                if let Some(&bad) = c.iter().find(|&&k| k >= self.output_dim) {
                    return Err(invalid(format!("class index {bad} >= output_dim {}", self.output_dim)));
                }
                Ok(LossKind::CrossEntropy)
            }
            (Targets::Values { dim, .. }, ModelKind::LinearRegression | ModelKind::Mlp1Hidden) => {
                if *dim != self.output_dim {
                    return Err(invalid(format!(
                        "target dim {dim} does not match model output_dim {}",
                        self.output_dim
                    )));
                }
                Ok(LossKind::SquaredError)
            }
            _ => Err(invalid(format!("{:?} cannot fit these targets", self.kind))),
        }
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.param_count(),
                found: params.len(),
            });
        }
        Ok(())
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            hidden: vec![0.0; self.hidden_dim],
            out: vec![0.0; self.output_dim],
            d_out: vec![0.0; self.output_dim],
            d_hidden: vec![0.0; self.hidden_dim],
        }
    }

    /// Loss of one sample; when `grad` is given, adds the sample's gradient to it.
    fn sample_loss(
        &self,
        params: &[f64],
        x: &[f64],
        target: Target<'_>,
        loss: LossKind,
        grad: Option<&mut [f64]>,
        s: &mut Scratch,
    ) -> f64 {
        let (i, o, h) = (self.input_dim, self.output_dim, self.hidden_dim);
        // Forward.
        let head_input: &[f64] = match self.kind {
            ModelKind::Mlp1Hidden => {
                let (w1, rest) = params.split_at(i * h);
                let b1 = &rest[..h];
                for u in 0..h {
                    let row = &w1[u * i..(u + 1) * i];
                    s.hidden[u] = (dot(row, x) + b1[u]).tanh();
                }
                &s.hidden
            }
            _ => x,
        };
        let head_offset = match self.kind {
            ModelKind::Mlp1Hidden => i * h + h,
            _ => 0,
        };
        let fan_in = head_input.len();
        let w = &params[head_offset..head_offset + fan_in * o];
        let b = &params[head_offset + fan_in * o..head_offset + fan_in * o + o];
        for u in 0..o {
            s.out[u] = dot(&w[u * fan_in..(u + 1) * fan_in], head_input) + b[u];
        }

        let value = match (loss, target) {
            (LossKind::SquaredError, Target::Values(y)) => {
                let mut acc = 0.0;
                for ((d, &out), &t) in s.d_out.iter_mut().zip(&s.out).zip(y.iter()).take(o) {
                    let r = out - t;
                    acc += r * r;
                    *d = 2.0 * r;
                }
                acc
            }
            (LossKind::CrossEntropy, Target::Class(c)) => {
                let max = s.out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for u in 0..o {
                    z += (s.out[u] - max).exp();
                }
                let log_z = max + z.ln();
                for u in 0..o {
                    s.d_out[u] = (s.out[u] - log_z).exp();
                }
                s.d_out[c] -= 1.0;
                log_z - s.out[c]
            }
            _ => unreachable!("loss kind checked against targets"),
        };

        let Some(grad) = grad else {
            return value;
        };

        // Backward through the head.
        {
            let (gw, gb) = grad[head_offset..head_offset + fan_in * o + o].split_at_mut(fan_in * o);
            for u in 0..o {
                let d = s.d_out[u];
                for (g, &a) in gw[u * fan_in..(u + 1) * fan_in].iter_mut().zip(head_input) {
                    *g += d * a;
                }
                gb[u] += d;
            }
        }
        if self.kind == ModelKind::Mlp1Hidden {
            for k in 0..h {
                let mut acc = 0.0;
                for u in 0..o {
                    acc += w[u * h + k] * s.d_out[u];
                }
                s.d_hidden[k] = acc * (1.0 - s.hidden[k] * s.hidden[k]);
            }
            let (gw1, rest) = grad[..i * h + h].split_at_mut(i * h);
            for u in 0..h {
                let d = s.d_hidden[u];
                for (g, &a) in gw1[u * i..(u + 1) * i].iter_mut().zip(x) {
                    *g += d * a;
                }
                rest[u] += d;
            }
        }
        value
    }

    /// Mean loss over `indices` and, if requested, its gradient (overwritten).
    pub fn loss_and_gradient(
        &self,
        params: &ParamVector,
        data: &Dataset,
        indices: &[usize],
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        self.check_params(params)?;
        let loss = self.loss_for(data)?;
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut s = self.scratch();
        let scale = 1.0 / indices.len() as f64;
        match grad {
            Some(g) => {
                if g.len() != params.len() {
                    return Err(Error::LengthMismatch {
                        expected: params.len(),
                        found: g.len(),
                    });
                }
                g.fill(0.0);
                let mut total = 0.0;
                for &k in indices {
                    total += self.sample_loss(params.as_slice(), data.input(k), data.target(k), loss, Some(g), &mut s);
                }
                for v in g.iter_mut() {
                    *v *= scale;
                }
                Ok(total * scale)
            }
            None => {
                let mut total = 0.0;
                for &k in indices {
                    total += self.sample_loss(params.as_slice(), data.input(k), data.target(k), loss, None, &mut s);
                }
                Ok(total * scale)
            }
        }
    }

    /// `epochs` passes of mini-batch SGD. Each epoch visits the samples in an
    /// order shuffled by a stream derived from `(seed, epoch)`. The input
    /// parameters are left untouched.
    pub fn train(&self, params: &ParamVector, data: &Dataset, hyper: &Hyperparams, seed: u64) -> Result<ParamVector> {
        self.check_params(params)?;
        hyper.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let loss = self.loss_for(data)?;
        let mut out = params.clone();
        let mut grad = vec![0.0; params.len()];
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut s = self.scratch();
        for epoch in 0..hyper.epochs {
            order.sort_unstable();
            order.shuffle(&mut stream(seed, Purpose::Shuffle, epoch as u64, 0));
            for batch in order.chunks(hyper.batch_size) {
                grad.fill(0.0);
                for &k in batch {
                    self.sample_loss(
                        out.as_slice(),
                        data.input(k),
                        data.target(k),
                        loss,
                        Some(&mut grad),
                        &mut s,
                    );
                }
                let step = hyper.learning_rate / batch.len() as f64;
                for (p, g) in out.as_mut_slice().iter_mut().zip(&grad) {
                    *p -= step * g;
                }
            }
        }
        out.ensure_finite("train")?;
        Ok(out)
    }

    /// Mean per-sample loss over the whole dataset.
    pub fn evaluate(&self, params: &ParamVector, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let all: Vec<usize> = (0..data.len()).collect();
        self.loss_and_gradient(params, data, &all, None)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data(xs: &[f64], slope: f64) -> Dataset {
        let ys: Vec<f64> = xs.iter().map(|x| slope * x).collect();
        Dataset::new(1, xs.to_vec(), Targets::Values { dim: 1, values: ys }).unwrap()
    }

    fn random_classification(spec: &ModelSpec, n: usize, seed: u64) -> Dataset {
        let mut rng = stream(seed, Purpose::Data, 0, 0);
        let inputs: Vec<f64> = (0..n * spec.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let classes = (0..n).map(|_| rng.random_range(0..spec.output_dim)).collect();
        Dataset::new(spec.input_dim, inputs, Targets::Classes(classes)).unwrap()
    }

    fn random_regression(spec: &ModelSpec, n: usize, seed: u64) -> Dataset {
        let mut rng = stream(seed, Purpose::Data, 1, 0);
        let inputs: Vec<f64> = (0..n * spec.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values = (0..n * spec.output_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        Dataset::new(
            spec.input_dim,
            inputs,
            Targets::Values {
                dim: spec.output_dim,
                values,
            },
        )
        .unwrap()
    }

    #[test]
    fn param_counts() {
        let lin = ModelSpec::linear_regression(3, 1);
        assert_eq!(lin.param_count(), 4);
        assert_eq!(lin.init_params(1).len(), 4);
        let mlp = ModelSpec::mlp(2, 4, 2);
        assert_eq!(mlp.param_count(), 2 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(mlp.param_count(), 22);
        assert_eq!(ModelSpec::softmax(5, 3).param_count(), 18);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = ModelSpec::mlp(3, 5, 2);
        let a = spec.init_params(42);
        assert_eq!(a, spec.init_params(42));
        assert_ne!(a, spec.init_params(43));
        let v = a.as_slice();
        assert!(v[15..20].iter().all(|&b| b == 0.0));
        assert!(v[30..].iter().all(|&b| b == 0.0));
        let bound = 1.0 / 3f64.sqrt();
        assert!(v[..15].iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn learns_slope_two() {
        let spec = ModelSpec::linear_regression(1, 1);
        let xs: Vec<f64> = (0..20).map(|i| -1.0 + i as f64 / 10.0).collect();
        let data = line_data(&xs, 2.0);
        let hyper = Hyperparams {
            learning_rate: 0.1,
            batch_size: 4,
            epochs: 300,
        };
        let out = spec.train(&spec.init_params(0), &data, &hyper, 9).unwrap();
        assert!((out.as_slice()[0] - 2.0).abs() < 1e-3, "{:?}", out);
        assert!(out.as_slice()[1].abs() < 1e-3);
        assert!(spec.evaluate(&out, &data).unwrap() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let spec = ModelSpec::softmax(3, 4);
        let data = random_classification(&spec, 17, 3);
        let init = spec.init_params(5);
        let hyper = Hyperparams {
            learning_rate: 0.0,
            batch_size: 5,
            epochs: 4,
        };
        assert_eq!(spec.train(&init, &data, &hyper, 1).unwrap(), init);
    }

    #[test]
    fn one_step_matches_hand_gradient() {
        // y_hat = w x + b, loss (y_hat - y)^2, dL/dw = 2 (y_hat - y) x, dL/db = 2 (y_hat - y).
        let spec = ModelSpec::linear_regression(1, 1);
        let params = ParamVector::new(vec![0.5, -0.25]).unwrap();
        let data = Dataset::new(
            1,
            vec![3.0],
            Targets::Values {
                dim: 1,
                values: vec![2.0],
            },
        )
        .unwrap();
        let hyper = Hyperparams {
            learning_rate: 0.01,
            batch_size: 1,
            epochs: 1,
        };
        let residual = 0.5 * 3.0 - 0.25 - 2.0;
        let expected = [0.5 - 0.01 * 2.0 * residual * 3.0, -0.25 - 0.01 * 2.0 * residual];
        let out = spec.train(&params, &data, &hyper, 0).unwrap();
        assert!((out.as_slice()[0] - expected[0]).abs() < 1e-15);
        assert!((out.as_slice()[1] - expected[1]).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_and_uniform_softmax_losses() {
        let spec = ModelSpec::linear_regression(1, 1);
        let data = line_data(&[1.0, 2.0, -3.0], 2.0);
        let exact = ParamVector::new(vec![2.0, 0.0]).unwrap();
        assert_eq!(spec.evaluate(&exact, &data).unwrap(), 0.0);

        let k = 5;
        let soft = ModelSpec::softmax(2, k);
        let data = random_classification(&soft, 12, 1);
        let zero = ParamVector::zeros(soft.param_count());
        assert!((soft.evaluate(&zero, &data).unwrap() - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let spec = ModelSpec::linear_regression(2, 1);
        let empty = Dataset::new(2, vec![], Targets::Values { dim: 1, values: vec![] }).unwrap();
        let p = spec.init_params(0);
        assert_eq!(spec.evaluate(&p, &empty), Err(Error::EmptyDataset));
        assert_eq!(
            spec.train(&p, &empty, &Hyperparams::default(), 0),
            Err(Error::EmptyDataset)
        );
    }

    #[test]
    fn mismatched_targets_are_rejected() {
        let spec = ModelSpec::linear_regression(2, 1);
        let classes = random_classification(&ModelSpec::softmax(2, 3), 4, 0);
        assert!(spec.evaluate(&spec.init_params(0), &classes).is_err());
        let soft = ModelSpec::softmax(2, 2);
        let too_many = random_classification(&ModelSpec::softmax(2, 4), 30, 0);
        assert!(soft.evaluate(&soft.init_params(0), &too_many).is_err());
    }

    fn gradient_check(spec: &ModelSpec, data: &Dataset, seed: u64) {
        let mut rng = stream(seed, Purpose::Init, 9, 9);
        let params = ParamVector::new((0..spec.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect()).unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; params.len()];
        spec.loss_and_gradient(&params, data, &idx, Some(&mut grad)).unwrap();
        let h = 1e-5;
        for j in 0..params.len() {
            let mut plus = params.to_vec();
            let mut minus = params.to_vec();
            plus[j] += h;
            minus[j] -= h;
            let lp = spec
                .loss_and_gradient(&ParamVector::new(plus).unwrap(), data, &idx, None)
                .unwrap();
            let lm = spec
                .loss_and_gradient(&ParamVector::new(minus).unwrap(), data, &idx, None)
                .unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (numeric - grad[j]).abs() / numeric.abs().max(grad[j].abs()).max(1e-8);
            assert!(
                rel < 1e-4,
                "{:?} param {j}: analytic {} numeric {}",
                spec.kind,
                grad[j],
                numeric
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let lin = ModelSpec::linear_regression(3, 2);
            gradient_check(&lin, &random_regression(&lin, 7, seed), seed);
            let soft = ModelSpec::softmax(3, 4);
            gradient_check(&soft, &random_classification(&soft, 9, seed), seed);
            let mlp = ModelSpec::mlp(3, 5, 3);
            gradient_check(&mlp, &random_classification(&mlp, 8, seed), seed);
            let mlp_reg = ModelSpec::mlp(2, 4, 2);
            gradient_check(&mlp_reg, &random_regression(&mlp_reg, 6, seed), seed);
        }
    }

    #[test]
    fn small_full_batch_step_decreases_loss() {
        for spec in [ModelSpec::linear_regression(4, 1), ModelSpec::softmax(4, 3)] {
            let data = match spec.kind {
                ModelKind::LinearRegression => random_regression(&spec, 25, 4),
                _ => random_classification(&spec, 25, 4),
            };
            let p = spec.init_params(2);
            let hyper = Hyperparams {
                learning_rate: 1e-3,
                batch_size: data.len(),
                epochs: 1,
            };
            let before = spec.evaluate(&p, &data).unwrap();
            let after = spec
                .evaluate(&spec.train(&p, &data, &hyper, 0).unwrap(), &data)
                .unwrap();
            assert!(after < before, "{:?}: {after} !< {before}", spec.kind);
        }
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let spec = ModelSpec::mlp(3, 4, 3);
        let data = random_classification(&spec, 40, 8);
        let p = spec.init_params(1);
        let hyper = Hyperparams::default();
        let a = spec.train(&p, &data, &hyper, 77).unwrap();
        let b = spec.train(&p, &data, &hyper, 77).unwrap();
        let bits = |v: &ParamVector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, spec.train(&p, &data, &hyper, 78).unwrap());
    }
}
