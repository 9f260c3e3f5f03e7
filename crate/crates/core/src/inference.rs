//! Inference-only kernel: supports, soft winner-take-all and classification.
//!
//! The per-stage functions here are shared by the training loop and by the
//! streaming pipeline, so every execution path performs the same arithmetic
//! in the same order.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::time::Instant;

use crate::encoding::{complementary_encode_into, Dataset};
use crate::error::{Error, Result};
use crate::network::{NetworkState, Projection};
use crate::precision::{cast_model, Precision, PrecisionMode, QuantizationStats};

/// Prediction for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult {
    pub predicted_class: usize,
    pub output_probabilities: Vec<f64>,
    pub hidden_activity: Option<Vec<f32>>,
}

/// Accumulates `acc += w * x` lane block by lane block. The split into
/// blocks never changes which terms meet in which order.
#[inline]
pub(crate) fn axpy_lanes(mode: PrecisionMode, acc: &mut [f32], w: &[f32], x: f32, lanes: usize) {
    match lanes {
        _ if lanes >= acc.len() => mode.axpy(acc, w, x),
        8 => axpy_blocks::<8>(mode, acc, w, x),
        16 => axpy_blocks::<16>(mode, acc, w, x),
        _ => {
            for (a, w) in acc.chunks_mut(lanes).zip(w.chunks(lanes)) {
                mode.axpy(a, w, x);
            }
        }
    }
}

#[inline(always)]
fn axpy_blocks<const L: usize>(mode: PrecisionMode, acc: &mut [f32], w: &[f32], x: f32) {
    let mut a = acc.chunks_exact_mut(L);
    let mut b = w.chunks_exact(L);
    for (a, b) in (&mut a).zip(&mut b) {
        mode.axpy(a, b, x);
    }
    mode.axpy(a.into_remainder(), b.remainder(), x);
}

/// Supports of post hypercolumn `h`: bias first, then one weight row per
/// non-zero pre-synaptic minicolumn, in active-slot order.
pub(crate) fn hcu_support(
    proj: &Projection,
    biases: &[f32],
    pre: &[f32],
    h: usize,
    mode: PrecisionMode,
    lanes: usize,
    out: &mut [f32],
) {
    let m = proj.post_mcus;
    let pm = proj.pre_mcus;
    for (o, &b) in out.iter_mut().zip(&biases[h * m..(h + 1) * m]) {
        *o = mode.acc_init(b);
    }
    for (slot, &c) in proj.connectivity.active(h).iter().enumerate() {
        let off = proj.slot_offset(h, slot);
        let xs = &pre[c as usize * pm..(c as usize + 1) * pm];
        for (i, &x) in xs.iter().enumerate() {
            if x != 0.0 {
                let row = off + i * m;
                axpy_lanes(mode, out, &proj.weights[row..row + m], x, lanes);
            }
        }
    }
    for o in out.iter_mut() {
        *o = mode.acc_finish(*o);
    }
}

/// Supports for every post hypercolumn of a projection.
pub(crate) fn layer_support(
    proj: &Projection,
    biases: &[f32],
    pre: &[f32],
    mode: PrecisionMode,
    lanes: usize,
    out: &mut [f32],
) {
    let m = proj.post_mcus;
    for h in 0..proj.n_post_hcu() {
        hcu_support(proj, biases, pre, h, mode, lanes, &mut out[h * m..(h + 1) * m]);
    }
}

/// Soft-WTA (or hard WTA) within each group of `m` supports. Exponentials
/// are evaluated in f64 and rounded once onto the mode's storage grid.
pub(crate) fn wta_layer(
    supports: &[f32],
    m: usize,
    beta: f64,
    mode: PrecisionMode,
    hard: bool,
    out: &mut [f32],
) {
    for (s, y) in supports.chunks_exact(m).zip(out.chunks_exact_mut(m)) {
        if hard {
            y.fill(0.0);
            y[argmax(s)] = 1.0;
            continue;
        }
        let max = s.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let sum: f64 = s.iter().map(|&sj| (beta * (sj as f64 - max)).exp()).sum();
        for (yj, &sj) in y.iter_mut().zip(s) {
            *yj = mode.store((beta * (sj as f64 - max)).exp() / sum);
        }
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Support vector of hypercolumn `hcu` in `projection` for the given
/// pre-synaptic activity (FP32 arithmetic, silent slots ignored).
pub fn compute_support(pre_activity: &[f32], projection: &Projection, hcu: usize) -> Result<Vec<f32>> {
    if pre_activity.len() != projection.n_pre_mcu() {
        return Err(Error::ShapeMismatch {
            what: "pre-synaptic activity",
            expected: projection.n_pre_mcu(),
            actual: pre_activity.len(),
        });
    }
    if hcu >= projection.n_post_hcu() {
        return Err(Error::IndexOutOfRange {
            what: "hypercolumn",
            index: hcu,
            len: projection.n_post_hcu(),
        });
    }
    let mut out = vec![0.0; projection.post_mcus];
    hcu_support(
        projection,
        &projection.biases,
        pre_activity,
        hcu,
        PrecisionMode::FP32,
        usize::MAX,
        &mut out,
    );
    Ok(out)
}

/// Softmax with gain `beta`, stabilized by subtracting the maximum.
pub fn soft_wta(supports: &[f64], beta: f64) -> Result<Vec<f64>> {
    if supports.iter().any(|s| s.is_nan()) {
        return Err(Error::NanSupport);
    }
    let max = supports.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = supports.iter().map(|&s| (beta * (s - max)).exp()).collect();
    let sum: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / sum).collect())
}

/// Reusable inference state: parameters on the mode's storage grid plus
/// scratch buffers.
#[derive(Clone, Debug)]
pub struct InferenceKernel<'a> {
    net: Cow<'a, NetworkState>,
    mode: PrecisionMode,
    pub hard_wta: bool,
    pub lanes: usize,
    stats: QuantizationStats,
    x: Vec<f32>,
    hidden_s: Vec<f32>,
    hidden_y: Vec<f32>,
    out_s: Vec<f32>,
}

/// Casts `net` onto the storage grid of `mode` unless it already sits there.
pub(crate) fn prepare(net: &NetworkState, mode: PrecisionMode) -> (Cow<'_, NetworkState>, QuantizationStats) {
    if mode.precision == Precision::Fp32 || net.stored_precision == mode.precision {
        (Cow::Borrowed(net), QuantizationStats::default())
    } else {
        let (n, s) = cast_model(net, mode);
        (Cow::Owned(n), s)
    }
}

impl<'a> InferenceKernel<'a> {
    pub fn new(net: &'a NetworkState, mode: PrecisionMode) -> InferenceKernel<'a> {
        let (net, stats) = prepare(net, mode);
        let c = &net.config;
        InferenceKernel {
            x: vec![0.0; c.n_input_mcu()],
            hidden_s: vec![0.0; c.n_hidden_mcu()],
            hidden_y: vec![0.0; c.n_hidden_mcu()],
            out_s: vec![0.0; c.n_classes],
            lanes: mode.precision.default_parallel_factor(),
            hard_wta: false,
            stats,
            mode,
            net,
        }
    }

    pub fn network(&self) -> &NetworkState {
        &self.net
    }

    pub fn mode(&self) -> PrecisionMode {
        self.mode
    }

    /// Saturation counts from casting the parameters to the storage format.
    pub fn quantization(&self) -> QuantizationStats {
        self.stats
    }

    /// Classifies one image without touching the network.
    pub fn predict(&mut self, image: &[f32]) -> Result<InferenceResult> {
        let r = self.classify(image)?;
        Ok(InferenceResult {
            predicted_class: r,
            output_probabilities: self.probabilities(),
            hidden_activity: None,
        })
    }

    /// Like [`predict`](Self::predict) but also returns the hidden activity.
    pub fn predict_verbose(&mut self, image: &[f32]) -> Result<InferenceResult> {
        let mut r = self.predict(image)?;
        r.hidden_activity = Some(self.hidden_y.clone());
        Ok(r)
    }

    /// Predicted class only; the cheapest entry point.
    pub fn classify(&mut self, image: &[f32]) -> Result<usize> {
        let net: &NetworkState = &self.net;
        encode_input(image, self.mode, &mut self.x)?;
        let c = &net.config;
        layer_support(
            &net.input_hidden,
            &net.input_hidden.biases,
            &self.x,
            self.mode,
            self.lanes,
            &mut self.hidden_s,
        );
        wta_layer(
            &self.hidden_s,
            c.hidden_mcu_per_hcu,
            c.beta,
            self.mode,
            self.hard_wta,
            &mut self.hidden_y,
        );
        layer_support(
            &net.hidden_output,
            &net.hidden_output.biases,
            &self.hidden_y,
            self.mode,
            self.lanes,
            &mut self.out_s,
        );
        Ok(argmax(&self.out_s))
    }

    fn probabilities(&self) -> Vec<f64> {
        let s: Vec<f64> = self.out_s.iter().map(|&v| v as f64).collect();
        soft_wta(&s, self.net.config.beta).expect("finite output supports")
    }
}

/// Encodes an image onto the mode's storage grid.
pub(crate) fn encode_input(image: &[f32], mode: PrecisionMode, out: &mut [f32]) -> Result<()> {
    if image.len() * 2 != out.len() {
        return Err(Error::ShapeMismatch {
            what: "image pixels",
            expected: out.len() / 2,
            actual: image.len(),
        });
    }
    complementary_encode_into(image, out)?;
    if mode.is_reduced() {
        for v in out.iter_mut() {
            *v = mode.store(*v as f64);
        }
    }
    Ok(())
}

/// One-shot prediction. Casts the parameters first when `precision` is
/// reduced; use [`InferenceKernel`] to amortize that over many images.
pub fn predict(net: &NetworkState, image: &[f32], precision: PrecisionMode) -> Result<InferenceResult> {
    InferenceKernel::new(net, precision).predict_verbose(image)
}

/// Order statistics over per-image latencies, in microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub min_us: f64,
    pub mean_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> LatencyStats {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let rank = |q: f64| s[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        LatencyStats {
            count: n,
            min_us: s[0],
            mean_us: s.iter().sum::<f64>() / n as f64,
            median_us: if n % 2 == 1 {
                s[n / 2]
            } else {
                (s[n / 2 - 1] + s[n / 2]) / 2.0
            },
            p95_us: rank(0.95),
            max_us: s[n - 1],
        }
    }
}

/// Outcome of running a dataset through the inference kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mode: PrecisionMode,
    pub correct: usize,
    pub total: usize,
    /// `confusion[label][pred]`
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
    pub latencies_us: Vec<f64>,
    pub latency: LatencyStats,
    pub quantization: QuantizationStats,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    /// Builds an evaluation from predictions made elsewhere.
    pub fn from_predictions(
        dataset: &Dataset,
        predictions: Vec<usize>,
        latencies_us: Vec<f64>,
        mode: PrecisionMode,
        quantization: QuantizationStats,
    ) -> Evaluation {
        let k = dataset.n_classes;
        let mut confusion = vec![vec![0; k]; k];
        let mut correct = 0;
        for (n, &p) in predictions.iter().enumerate() {
            let l = dataset.label(n);
            confusion[l][p.min(k - 1)] += 1;
            correct += (l == p) as usize;
        }
        Evaluation {
            mode,
            correct,
            total: predictions.len(),
            confusion,
            latency: LatencyStats::from_samples(&latencies_us),
            predictions,
            latencies_us,
            quantization,
        }
    }

    /// `sample,label,pred,latency_us` rows with a header line.
    pub fn to_csv(&self, dataset: &Dataset) -> String {
        let mut s = String::from("sample,label,pred,latency_us\n");
        for (n, (&p, &t)) in self.predictions.iter().zip(&self.latencies_us).enumerate() {
            let _ = writeln!(s, "{n},{},{p},{t:.3}", dataset.label(n));
        }
        s
    }

    /// Human-readable summary with the confusion matrix.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let l = &self.latency;
        let _ = writeln!(
            s,
            "precision {}  accuracy {:.4} ({}/{})",
            self.mode,
            self.accuracy(),
            self.correct,
            self.total
        );
        let _ = writeln!(
            s,
            "latency us  min {:.1}  mean {:.1}  median {:.1}  p95 {:.1}",
            l.min_us, l.mean_us, l.median_us, l.p95_us
        );
        let _ = writeln!(
            s,
            "q3.12 saturation {}/{}",
            self.quantization.saturated, self.quantization.total
        );
        let _ = write!(s, "label\\pred");
        for k in 0..self.confusion.len() {
            let _ = write!(s, "{k:>6}");
        }
        s.push('\n');
        for (k, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{k:>10}");
            for v in row {
                let _ = write!(s, "{v:>6}");
            }
            s.push('\n');
        }
        s
    }
}

/// Classifies every sample, timing each predict call.
pub fn evaluate(net: &NetworkState, dataset: &Dataset, precision: PrecisionMode) -> Result<Evaluation> {
    evaluate_with(&mut InferenceKernel::new(net, precision), dataset)
}

pub fn evaluate_with(kernel: &mut InferenceKernel<'_>, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut latencies = Vec::with_capacity(dataset.len());
    for (image, _) in dataset.iter() {
        let t = Instant::now();
        let p = kernel.classify(image)?;
        latencies.push(t.elapsed().as_secs_f64() * 1e6);
        predictions.push(p);
    }
    Ok(Evaluation::from_predictions(
        dataset,
        predictions,
        latencies,
        kernel.mode(),
        kernel.quantization(),
    ))
}
