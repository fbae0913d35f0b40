//! Flat parameter-vector algebra.
//!
//! Every model is flattened into a single [`ParamVector`] in a fixed block
//! order: layer by layer, each layer's weight matrix (row-major, one row per
//! output unit) followed by its bias vector. Similarity between clients is
//! only meaningful because every client uses the same layout.
//!
//! Dot products and norms use Neumaier-compensated summation.

use std::cell::Cell;
use std::fmt;

use crate::error::{invalid, Error, Result};

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

fn track_alloc() {
    LIVE.with(|live| {
        let now = live.get() + 1;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

fn track_drop() {
    LIVE.with(|live| live.set(live.get().saturating_sub(1)));
}

/// Live-vector accounting used to check memory bounds.
///
/// Counts are per thread, so concurrently running tests do not see each
/// other's vectors.
pub mod instrument {
    use super::{LIVE, PEAK};

    /// Number of [`ParamVector`](super::ParamVector)s alive on this thread.
    pub fn live_vectors() -> usize {
        LIVE.with(|c| c.get())
    }

    /// High-water mark since the last [`reset_peak`].
    pub fn peak_vectors() -> usize {
        PEAK.with(|c| c.get())
    }

    /// Resets the high-water mark to the current live count.
    pub fn reset_peak() {
        let live = live_vectors();
        PEAK.with(|c| c.set(live));
    }

    /// Measures how many vectors an operation allocates beyond what was
    /// alive when the window opened.
    #[derive(Debug)]
    pub struct Window {
        start: usize,
    }

    impl Window {
        pub fn open() -> Self {
            reset_peak();
            Self { start: live_vectors() }
        }

        /// Peak number of additional vectors alive at any point in the window.
        pub fn extra_peak(&self) -> usize {
            peak_vectors().saturating_sub(self.start)
        }
    }
}

/// Flat real-valued model parameters. Length is fixed at construction and
/// every entry is finite.
#[derive(PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ParamVector::new"));
        }
        Ok(Self::from_finite(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self::from_finite(vec![0.0; len])
    }

    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        track_alloc();
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Overwrites this vector with `other` without reallocating.
    pub fn copy_from(&mut self, other: &ParamVector) -> Result<()> {
        check_len(self, other)?;
        self.values.copy_from_slice(&other.values);
        Ok(())
    }

    /// In-place form of [`interpolate`]: `self <- (1 - weight) self + weight remote`.
    pub fn interpolate_toward(&mut self, remote: &ParamVector, weight: f64) -> Result<()> {
        check_len(self, remote)?;
        check_weight(weight)?;
        for (l, &r) in self.values.iter_mut().zip(&remote.values) {
            *l = mix(*l, r, weight);
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        let mut acc = CompensatedSum::default();
        for &v in &self.values {
            acc.add(v * v);
        }
        acc.total().sqrt()
    }

    pub(crate) fn ensure_finite(&self, context: &'static str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }
}

impl Clone for ParamVector {
    fn clone(&self) -> Self {
        Self::from_finite(self.values.clone())
    }
}

impl Drop for ParamVector {
    fn drop(&mut self) {
        track_drop();
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ParamVector").field(&self.values).finish()
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

fn check_len(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

fn check_weight(weight: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(invalid(format!("interpolation weight {weight} outside [0, 1]")));
    }
    Ok(())
}

// Exact at both endpoints, which `l + w (r - l)` is not.
#[inline]
fn mix(l: f64, r: f64, w: f64) -> f64 {
    if w == 0.0 {
        l
    } else if w == 1.0 {
        r
    } else {
        (1.0 - w) * l + w * r
    }
}

/// Elementwise `current - prior`.
pub fn delta(current: &ParamVector, prior: &ParamVector) -> Result<ParamVector> {
    check_len(current, prior)?;
    let values: Vec<f64> = current.values.iter().zip(&prior.values).map(|(c, p)| c - p).collect();
    ParamVector::new(values).map_err(|_| Error::NonFinite("delta"))
}

fn cosine_from_parts(dot: f64, norm_a_sq: f64, norm_b_sq: f64) -> f64 {
    if norm_a_sq == 0.0 || norm_b_sq == 0.0 {
        return 0.0;
    }
    let s = dot / (norm_a_sq.sqrt() * norm_b_sq.sqrt());
    if s.is_nan() {
        0.0
    } else {
        s.clamp(-1.0, 1.0)
    }
}

/// Cosine similarity in `[-1, 1]`. Zero-norm inputs carry no direction and
/// yield 0.
pub fn cosine_similarity(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_len(a, b)?;
    let (mut dot, mut na, mut nb) = (
        CompensatedSum::default(),
        CompensatedSum::default(),
        CompensatedSum::default(),
    );
    for (&x, &y) in a.values.iter().zip(&b.values) {
        dot.add(x * y);
        na.add(x * x);
        nb.add(y * y);
    }
    Ok(cosine_from_parts(dot.total(), na.total(), nb.total()))
}

/// Maps a cosine similarity from `[-1, 1]` onto `[0, 1]`.
pub fn scale_similarity(cosine: f64) -> f64 {
    (cosine + 1.0) / 2.0
}

/// Cosine similarity rescaled to `[0, 1]`; zero-norm inputs yield 0.5.
pub fn scaled_similarity(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    cosine_similarity(a, b).map(scale_similarity)
}

/// Cosine similarity of `local - baseline` and `remote - baseline`, computed
/// in one pass without materialising either delta.
pub fn cosine_similarity_from_baseline(
    local: &ParamVector,
    remote: &ParamVector,
    baseline: &ParamVector,
) -> Result<f64> {
    check_len(local, remote)?;
    check_len(local, baseline)?;
    let (mut dot, mut na, mut nb) = (
        CompensatedSum::default(),
        CompensatedSum::default(),
        CompensatedSum::default(),
    );
    for ((&l, &r), &b) in local.values.iter().zip(&remote.values).zip(&baseline.values) {
        let x = l - b;
        let y = r - b;
        dot.add(x * y);
        na.add(x * x);
        nb.add(y * y);
    }
    Ok(cosine_from_parts(dot.total(), na.total(), nb.total()))
}

/// Scaled form of [`cosine_similarity_from_baseline`].
pub fn scaled_similarity_from_baseline(
    local: &ParamVector,
    remote: &ParamVector,
    baseline: &ParamVector,
) -> Result<f64> {
    cosine_similarity_from_baseline(local, remote, baseline).map(scale_similarity)
}

/// Elementwise `(1 - weight) local + weight remote`, `weight` in `[0, 1]`.
pub fn interpolate(local: &ParamVector, remote: &ParamVector, weight: f64) -> Result<ParamVector> {
    check_len(local, remote)?;
    check_weight(weight)?;
    let values = local
        .values
        .iter()
        .zip(&remote.values)
        .map(|(&l, &r)| mix(l, r, weight))
        .collect();
    Ok(ParamVector::from_finite(values))
}

/// Weighted mean of vectors with non-negative weights. Fails when the
/// weights sum to zero.
pub fn weighted_mean<'a, I>(items: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = (&'a ParamVector, f64)>,
{
    let items: Vec<(&ParamVector, f64)> = items.into_iter().collect();
    let Some(&(first, _)) = items.first() else {
        return Err(invalid("weighted mean of no vectors"));
    };
    let mut total = CompensatedSum::default();
    for &(v, w) in &items {
        check_len(first, v)?;
        if !(w >= 0.0 && w.is_finite()) {
            return Err(invalid(format!("mixing weight {w} must be finite and non-negative")));
        }
        total.add(w);
    }
    let total = total.total();
    if total <= 0.0 {
        return Err(invalid("mixing weights sum to zero"));
    }
    let mut out = vec![CompensatedSum::default(); first.len()];
    for &(v, w) in &items {
        let share = w / total;
        for (acc, &x) in out.iter_mut().zip(&v.values) {
            acc.add(share * x);
        }
    }
    ParamVector::new(out.iter().map(CompensatedSum::total).collect()).map_err(|_| Error::NonFinite("weighted_mean"))
}
