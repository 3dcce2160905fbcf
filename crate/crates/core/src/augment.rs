//! View construction and embedding-space masks.
//!
//! Two views per record come from temporal neighbouring: adjacent halves of
//! the sampled window become query and key. Inside the encoder, after the input
//! projection, each view gets a frequency mask (selected Fourier bins zeroed)
//! followed by a timestamp mask (whole rows zeroed). Both masks are linear
//! projections, so their backward pass is the same mask applied to the
//! upstream gradient.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::SampleRecord;
use crate::error::AugmentError;
use crate::nn::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub timestamp_p: f64,
    pub freq_frac: f64,
    pub enable_time_mask: bool,
    pub enable_freq_mask: bool,
    pub enable_neighbor: bool,
    pub per_channel_freq: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            timestamp_p: 0.5,
            freq_frac: 0.1,
            enable_time_mask: true,
            enable_freq_mask: true,
            enable_neighbor: true,
            per_channel_freq: false,
        }
    }
}

impl MaskConfig {
    /// Everything off: what finetuning and evaluation use.
    pub fn disabled() -> Self {
        Self {
            enable_time_mask: false,
            enable_freq_mask: false,
            enable_neighbor: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, value) in [("timestamp_p", self.timestamp_p), ("freq_frac", self.freq_frac)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(AugmentError::BadProbability { name, value });
            }
        }
        Ok(())
    }

    /// Length of each view for records of length `sample_len`.
    pub fn view_len(&self, sample_len: usize) -> usize {
        if self.enable_neighbor {
            sample_len / 2
        } else {
            sample_len
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub query_view: Array2<f32>,
    pub key_view: Array2<f32>,
    pub patient_id: u64,
}

/// Query and key views of one record.
///
/// With neighbouring enabled the record is the sampled window `[t, t+2Δt)` with
/// `t = 0`, `Δt = S/2`: the query is its first half and the key its second.
/// Disabled, both views are copies of the whole record.
pub fn sample_neighbor_views(record: &SampleRecord, enable_neighbor: bool) -> Result<ViewPair, AugmentError> {
    let (query_view, key_view) = neighbor_views(record.values.view(), enable_neighbor)?;
    Ok(ViewPair {
        query_view,
        key_view,
        patient_id: record.patient_id,
    })
}

/// [`sample_neighbor_views`] on a bare `(S, L)` array.
pub fn neighbor_views<T: Clone>(
    values: ArrayView2<'_, T>,
    enable_neighbor: bool,
) -> Result<(Array2<T>, Array2<T>), AugmentError> {
    let s = values.nrows();
    if !enable_neighbor {
        return Ok((values.to_owned(), values.to_owned()));
    }
    if s % 2 != 0 {
        return Err(AugmentError::OddLength(s));
    }
    let half = s / 2;
    Ok((
        values.slice(s![..half, ..]).to_owned(),
        values.slice(s![half.., ..]).to_owned(),
    ))
}

/// Neighbouring views of half-length `delta` inside a longer record, with
/// the window start `t` drawn uniformly from `[0, S - 2Δt]`.
pub fn sample_neighbor_window<R: Rng + ?Sized>(
    record: &SampleRecord,
    delta: usize,
    rng: &mut R,
) -> Result<(usize, ViewPair), AugmentError> {
    let s = record.values.nrows();
    if delta == 0 || 2 * delta > s {
        return Err(AugmentError::OddLength(s));
    }
    let t = rng.random_range(0..=s - 2 * delta);
    Ok((
        t,
        ViewPair {
            query_view: record.values.slice(s![t..t + delta, ..]).to_owned(),
            key_view: record.values.slice(s![t + delta..t + 2 * delta, ..]).to_owned(),
            patient_id: record.patient_id,
        },
    ))
}

/// One keep-bit per timestamp; a dropped row is zeroed across all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMask {
    pub keep: Vec<bool>,
}

impl TimeMask {
    /// Each row is dropped independently with probability `p`.
    pub fn draw<R: Rng + ?Sized>(rows: usize, p: f64, rng: &mut R) -> Self {
        Self {
            keep: (0..rows).map(|_| rng.random::<f64>() >= p).collect(),
        }
    }

    pub fn masked_fraction(&self) -> f64 {
        self.keep.iter().filter(|k| !**k).count() as f64 / self.keep.len().max(1) as f64
    }

    pub fn apply_inplace<T: Scalar>(&self, x: &mut Array2<T>) {
        for (mut row, &keep) in x.axis_iter_mut(Axis(0)).zip(&self.keep) {
            if !keep {
                row.fill(T::zero());
            }
        }
    }
}

/// Fourier bins (of the real transform along time) to zero, either one set
/// shared by every channel or one set per channel.
#[derive(Debug, Clone, PartialEq)]
pub enum FreqMask {
    Shared(Vec<usize>),
    PerChannel(Vec<Vec<usize>>),
}

/// `⌈frac·(⌊n/2⌋+1)⌉` distinct bins out of the `⌊n/2⌋+1` real-FFT bins.
pub fn masked_bin_count(rows: usize, frac: f64) -> usize {
    let bins = rows / 2 + 1;
    ((frac * bins as f64 - 1e-9).ceil().max(0.0) as usize).min(bins)
}

impl FreqMask {
    pub fn draw<R: Rng + ?Sized>(rows: usize, channels: usize, frac: f64, per_channel: bool, rng: &mut R) -> Self {
        let bins = rows / 2 + 1;
        let count = masked_bin_count(rows, frac);
        let mut pick = || {
            let mut v = index::sample(rng, bins, count).into_vec();
            v.sort_unstable();
            v
        };
        if per_channel {
            FreqMask::PerChannel((0..channels).map(|_| pick()).collect())
        } else {
            FreqMask::Shared(pick())
        }
    }

    fn bins_for(&self, channel: usize) -> &[usize] {
        match self {
            FreqMask::Shared(b) => b,
            FreqMask::PerChannel(b) => &b[channel],
        }
    }

    /// Applies the mask and also returns the largest imaginary residue seen
    /// in the inverse transform before it was discarded.
    pub fn apply_with_residue<T: Scalar>(&self, x: ArrayView2<'_, T>) -> (Array2<T>, f64) {
        let (n, channels) = x.dim();
        let mut out = Array2::zeros((n, channels));
        if n == 0 {
            return (out, 0.0);
        }
        let mut planner = FftPlanner::<T>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scale = T::one() / T::lit(n as f64);
        let mut residue = 0.0f64;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for c in 0..channels {
            for (b, &v) in buf.iter_mut().zip(x.column(c)) {
                *b = Complex::new(v, T::zero());
            }
            fwd.process(&mut buf);
            for &j in self.bins_for(c) {
                buf[j] = Complex::new(T::zero(), T::zero());
                if j != 0 {
                    buf[n - j] = Complex::new(T::zero(), T::zero());
                }
            }
            inv.process(&mut buf);
            for (o, b) in out.column_mut(c).iter_mut().zip(&buf) {
                *o = b.re * scale;
                residue = residue.max((b.im * scale).abs().as_f64());
            }
        }
        (out, residue)
    }

    pub fn apply<T: Scalar>(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        self.apply_with_residue(x).0
    }
}

/// Zeroes whole rows of `embedding`, each independently with probability `p`.
pub fn timestamp_mask<T: Scalar, R: Rng + ?Sized>(embedding: ArrayView2<'_, T>, p: f64, rng: &mut R) -> Array2<T> {
    let mask = TimeMask::draw(embedding.nrows(), p, rng);
    let mut out = embedding.to_owned();
    mask.apply_inplace(&mut out);
    out
}

/// Zeroes a random shared subset of Fourier bins of every channel.
pub fn frequency_mask<T: Scalar, R: Rng + ?Sized>(embedding: ArrayView2<'_, T>, freq_frac: f64, rng: &mut R) -> Array2<T> {
    let (rows, channels) = embedding.dim();
    FreqMask::draw(rows, channels, freq_frac, false, rng).apply(embedding)
}

/// Masks drawn for one view, kept so the backward pass can replay them.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMasks {
    pub freq: Option<FreqMask>,
    pub time: Option<TimeMask>,
}

impl ViewMasks {
    pub fn none() -> Self {
        Self { freq: None, time: None }
    }

    pub fn draw<R: Rng + ?Sized>(cfg: &MaskConfig, rows: usize, channels: usize, rng: &mut R) -> Self {
        let freq = cfg
            .enable_freq_mask
            .then(|| FreqMask::draw(rows, channels, cfg.freq_frac, cfg.per_channel_freq, rng));
        let time = cfg
            .enable_time_mask
            .then(|| TimeMask::draw(rows, cfg.timestamp_p, rng));
        Self { freq, time }
    }

    pub fn forward<T: Scalar>(&self, x: Array2<T>) -> Array2<T> {
        let mut x = match &self.freq {
            Some(f) => f.apply(x.view()),
            None => x,
        };
        if let Some(t) = &self.time {
            t.apply_inplace(&mut x);
        }
        x
    }

    /// Both masks are symmetric linear maps; the adjoint runs them in reverse.
    pub fn backward<T: Scalar>(&self, mut dy: Array2<T>) -> Array2<T> {
        if let Some(t) = &self.time {
            t.apply_inplace(&mut dy);
        }
        match &self.freq {
            Some(f) => f.apply(dy.view()),
            None => dy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use ndarray::concatenate;
    use proptest::prelude::*;

    fn record(s: usize, l: usize) -> SampleRecord {
        SampleRecord {
            values: Array2::from_shape_fn((s, l), |(t, c)| (t * l + c) as f32),
            patient_id: 3,
            label: None,
            trial_id: 0,
        }
    }

    #[test]
    fn neighbor_views_reconstruct() {
        let r = record(300, 12);
        let v = sample_neighbor_views(&r, true).unwrap();
        assert_eq!(v.query_view.dim(), (150, 12));
        let joined = concatenate(Axis(0), &[v.query_view.view(), v.key_view.view()]).unwrap();
        assert_eq!(joined, r.values);
        let same = sample_neighbor_views(&r, false).unwrap();
        assert_eq!(same.query_view, r.values);
        assert_eq!(same.key_view, r.values);
        assert!(matches!(sample_neighbor_views(&record(7, 2), true), Err(AugmentError::OddLength(7))));
    }

    #[test]
    fn neighbor_window_is_adjacent() {
        let r = record(100, 2);
        let mut g = rng::stream(1, Stream::Neighbor, &[]);
        for _ in 0..20 {
            let (t, v) = sample_neighbor_window(&r, 20, &mut g).unwrap();
            assert!(t + 40 <= 100);
            let joined = concatenate(Axis(0), &[v.query_view.view(), v.key_view.view()]).unwrap();
            assert_eq!(joined, r.values.slice(s![t..t + 40, ..]));
        }
    }

    #[test]
    fn timestamp_mask_extremes() {
        let mut g = rng::stream(1, Stream::QueryView, &[]);
        let x = Array2::from_shape_fn((50, 4), |(i, j)| (i + j) as f64 + 1.0);
        assert_eq!(timestamp_mask(x.view(), 0.0, &mut g), x);
        assert!(timestamp_mask(x.view(), 1.0, &mut g).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn timestamp_mask_fraction() {
        let mut g = rng::stream(2, Stream::QueryView, &[]);
        let m = TimeMask::draw(10_000, 0.5, &mut g);
        // 3σ for Binomial(10000, 0.5) is 0.015
        assert!((m.masked_fraction() - 0.5).abs() < 0.015, "{}", m.masked_fraction());
    }

    #[test]
    fn frequency_mask_extremes() {
        let mut g = rng::stream(3, Stream::QueryView, &[]);
        let x = Array2::from_shape_fn((37, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let same = frequency_mask(x.view(), 0.0, &mut g);
        assert!(same.iter().zip(x.iter()).all(|(a, b)| (a - b).abs() < 1e-5));
        let zero = frequency_mask(x.view(), 1.0, &mut g);
        assert!(zero.iter().all(|v| v.abs() < 1e-9));
        let dc = Array2::from_elem((16, 2), 3.5f64);
        let out = FreqMask::Shared(vec![0]).apply(dc.view());
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn bin_counts() {
        assert_eq!(masked_bin_count(64, 0.1), 4); // 33 bins
        assert_eq!(masked_bin_count(64, 0.0), 0);
        assert_eq!(masked_bin_count(64, 1.0), 33);
        assert_eq!(masked_bin_count(7, 0.5), 2); // 4 bins
    }

    #[test]
    fn per_channel_bins_differ() {
        let mut g = rng::stream(4, Stream::QueryView, &[]);
        match FreqMask::draw(64, 8, 0.3, true, &mut g) {
            FreqMask::PerChannel(sets) => {
                assert_eq!(sets.len(), 8);
                assert!(sets.iter().any(|s| s != &sets[0]));
            }
            FreqMask::Shared(_) => panic!("expected per-channel"),
        }
    }

    /// Independent path: remove each masked real Fourier component by direct
    /// projection onto cos/sin of that frequency.
    fn project_out(x: &Array2<f64>, bins: &[usize]) -> Array2<f64> {
        let n = x.nrows();
        let mut out = x.clone();
        for c in 0..x.ncols() {
            for &j in bins {
                let w = std::f64::consts::TAU * j as f64 / n as f64;
                let (mut re, mut im) = (0.0, 0.0);
                for t in 0..n {
                    re += x[[t, c]] * (w * t as f64).cos();
                    im += x[[t, c]] * (w * t as f64).sin();
                }
                let weight = if j == 0 || 2 * j == n { 1.0 } else { 2.0 } / n as f64;
                for t in 0..n {
                    out[[t, c]] -= weight * (re * (w * t as f64).cos() + im * (w * t as f64).sin());
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn frequency_mask_properties(n in 2usize..40, frac in 0.0f64..1.0, seed in any::<u64>()) {
            let mut g = rng::stream(seed, Stream::QueryView, &[]);
            let x = Array2::from_shape_simple_fn((n, 3), || g.random_range(-1.0..1.0));
            let mask = FreqMask::draw(n, 3, frac, false, &mut g);
            let (y, residue) = mask.apply_with_residue(x.view());
            prop_assert_eq!(y.dim(), x.dim());
            prop_assert!(residue < 1e-6);
            let energy = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
            prop_assert!(energy(&y) <= energy(&x) * (1.0 + 1e-5));
            let FreqMask::Shared(bins) = &mask else { unreachable!() };
            let oracle = project_out(&x, bins);
            for (a, b) in y.iter().zip(oracle.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn masks_are_self_adjoint(n in 2usize..32, seed in any::<u64>()) {
            let mut g = rng::stream(seed, Stream::KeyView, &[]);
            let cfg = MaskConfig { freq_frac: 0.3, ..MaskConfig::default() };
            let masks = ViewMasks::draw(&cfg, n, 2, &mut g);
            let a = Array2::from_shape_simple_fn((n, 2), || g.random_range(-1.0f64..1.0));
            let b = Array2::from_shape_simple_fn((n, 2), || g.random_range(-1.0..1.0));
            let lhs = (&masks.forward(a.clone()) * &b).sum();
            let rhs = (&a * &masks.backward(b.clone())).sum();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn reproducible_with_seed() {
        let cfg = MaskConfig::default();
        let a = ViewMasks::draw(&cfg, 64, 8, &mut rng::stream(9, Stream::QueryView, &[1]));
        let b = ViewMasks::draw(&cfg, 64, 8, &mut rng::stream(9, Stream::QueryView, &[1]));
        let c = ViewMasks::draw(&cfg, 64, 8, &mut rng::stream(9, Stream::KeyView, &[1]));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
