//! Staged streaming execution.
//!
//! Every stage runs on its own thread and talks to its neighbours through
//! bounded channels only. The inference pipeline has five stages:
//!
//! ```text
//! encode -> hidden-support -> hidden-wta -> output -> classify
//! ```
//!
//! where `output` fuses output support and output soft-WTA. The training
//! pipeline adds `trace-update` and `weight-update` after `hidden-wta`. In
//! training the network itself travels as a token through the stateful
//! stages and returns to `hidden-support` only once the sample's update is
//! done, so sample `t + 1` never reads traces or weights before sample `t`
//! has written them. Encoding still runs ahead.

use std::borrow::Cow;
use std::fmt::{self, Write as _};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender, TryRecvError, TrySendError};

use crate::encoding::Dataset;
use crate::error::{Error, Result};
use crate::inference::{argmax, encode_input, layer_support, prepare, soft_wta, wta_layer, Evaluation, InferenceResult};
use crate::learning::{
    clamp_label, derive_selected, effective_hidden_bias, learn_step, train_full_with, Derive, EpochMetrics, Phase,
    PhaseCtx, TrainingParams,
};
use crate::network::NetworkState;
use crate::precision::{Precision, PrecisionMode, QuantizationStats};

pub const DEFAULT_CHANNEL_CAPACITY: usize = 64;
/// Lane width of the training pipeline's support stages.
pub const TRAIN_PARALLEL_FACTOR: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StageKind {
    Encode,
    HiddenSupport,
    HiddenWta,
    TraceUpdate,
    WeightUpdate,
    OutputSupport,
    OutputWta,
    Classify,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Encode => "encode",
            StageKind::HiddenSupport => "hidden-support",
            StageKind::HiddenWta => "hidden-wta",
            StageKind::TraceUpdate => "trace-update",
            StageKind::WeightUpdate => "weight-update",
            StageKind::OutputSupport => "output-support",
            StageKind::OutputWta => "output-wta",
            StageKind::Classify => "classify",
        }
    }

    pub fn parse(s: &str) -> Option<StageKind> {
        INFER_STAGES
            .iter()
            .chain(&TRAIN_STAGES)
            .copied()
            .find(|k| k.name() == s)
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const INFER_STAGES: [StageKind; 6] = [
    StageKind::Encode,
    StageKind::HiddenSupport,
    StageKind::HiddenWta,
    StageKind::OutputSupport,
    StageKind::OutputWta,
    StageKind::Classify,
];

pub const TRAIN_STAGES: [StageKind; 8] = [
    StageKind::Encode,
    StageKind::HiddenSupport,
    StageKind::HiddenWta,
    StageKind::TraceUpdate,
    StageKind::WeightUpdate,
    StageKind::OutputSupport,
    StageKind::OutputWta,
    StageKind::Classify,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PipelineKind {
    Infer,
    Train,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineSpec {
    pub stages: Vec<StageKind>,
    pub channel_capacity: usize,
    /// Values accumulated per lane step in the support stages.
    pub parallel_factor: usize,
    pub precision: PrecisionMode,
    pub hard_wta: bool,
}

impl PipelineSpec {
    pub fn infer(precision: PrecisionMode) -> PipelineSpec {
        PipelineSpec {
            stages: INFER_STAGES.to_vec(),
            channel_capacity: DEFAULT_CHANNEL_CAPACITY,
            parallel_factor: precision.precision.default_parallel_factor(),
            precision,
            hard_wta: false,
        }
    }

    pub fn train() -> PipelineSpec {
        PipelineSpec {
            stages: TRAIN_STAGES.to_vec(),
            channel_capacity: DEFAULT_CHANNEL_CAPACITY,
            parallel_factor: TRAIN_PARALLEL_FACTOR,
            precision: PrecisionMode::FP32,
            hard_wta: false,
        }
    }

    pub fn validate(&self, kind: PipelineKind) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPipeline(m));
        if self.channel_capacity == 0 {
            return bad("channel capacity must be at least 1".into());
        }
        if self.parallel_factor == 0 {
            return bad("parallel factor must be at least 1".into());
        }
        let has_updates = self
            .stages
            .iter()
            .any(|s| matches!(s, StageKind::TraceUpdate | StageKind::WeightUpdate));
        let expected: &[StageKind] = match kind {
            PipelineKind::Infer => {
                if has_updates {
                    return bad("an inference pipeline cannot contain update stages".into());
                }
                &INFER_STAGES
            }
            PipelineKind::Train => {
                if !self.stages.contains(&StageKind::TraceUpdate) || !self.stages.contains(&StageKind::WeightUpdate) {
                    return bad("a training pipeline needs trace-update and weight-update stages".into());
                }
                if self.precision.precision != Precision::Fp32 {
                    return bad("training runs in fp32 only".into());
                }
                &TRAIN_STAGES
            }
        };
        if self.stages != expected {
            let names: Vec<&str> = expected.iter().map(|s| s.name()).collect();
            return bad(format!("stage list must be {}", names.join(",")));
        }
        Ok(())
    }
}

/// Counters of one stage thread.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageCounters {
    pub stage: &'static str,
    pub items: u64,
    /// Sends that found the outgoing channel full.
    pub send_stalls: u64,
    /// Receives that found the incoming channel empty.
    pub recv_stalls: u64,
    pub busy: Duration,
}

impl StageCounters {
    fn new(stage: &'static str) -> StageCounters {
        StageCounters {
            stage,
            ..Default::default()
        }
    }

    pub fn busy_us(&self) -> u64 {
        self.busy.as_micros() as u64
    }

    fn absorb(&mut self, o: &StageCounters) {
        self.items += o.items;
        self.send_stalls += o.send_stalls;
        self.recv_stalls += o.recv_stalls;
        self.busy += o.busy;
    }
}

/// Per-stage summary with the bottleneck (largest busy time) marked.
#[derive(Clone, Debug, PartialEq)]
pub struct CountersReport {
    pub rows: Vec<StageCounters>,
    pub bottleneck: Option<usize>,
}

pub const COUNTERS_CSV_HEADER: &str = "stage,items,send_stalls,recv_stalls,busy_us";

pub fn counters_report(counters: &[StageCounters]) -> CountersReport {
    let bottleneck = counters
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.busy.is_zero())
        .max_by_key(|&(i, c)| (c.busy, std::cmp::Reverse(i)))
        .map(|(i, _)| i);
    CountersReport {
        rows: counters.to_vec(),
        bottleneck,
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl CountersReport {
    pub fn bottleneck_stage(&self) -> Option<&'static str> {
        self.bottleneck.map(|i| self.rows[i].stage)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(COUNTERS_CSV_HEADER);
        s.push('\n');
        for c in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.stage,
                c.items,
                c.send_stalls,
                c.recv_stalls,
                c.busy_us()
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>9} {:>12} {:>10} {:>10} {:>12}\n",
            "stage", "items", "items/s", "send_stall", "recv_stall", "busy_us"
        );
        for (i, c) in self.rows.iter().enumerate() {
            let per_s = if c.busy.is_zero() {
                0.0
            } else {
                c.items as f64 / c.busy.as_secs_f64()
            };
            let _ = writeln!(
                s,
                "{:<16} {:>9} {:>12.0} {:>10.3} {:>10.3} {:>12}{}",
                c.stage,
                c.items,
                per_s,
                ratio(c.send_stalls, c.items),
                ratio(c.recv_stalls, c.items),
                c.busy_us(),
                if self.bottleneck == Some(i) { "  <- bottleneck" } else { "" }
            );
        }
        s
    }
}

/// Predictions from an inference stream, in input order.
#[derive(Clone, Debug)]
pub struct StreamOutput {
    pub results: Vec<InferenceResult>,
    /// Stage time spent on each sample, excluding time queued in channels.
    pub latencies_us: Vec<f64>,
    pub counters: Vec<StageCounters>,
}

impl StreamOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.results.iter().map(|r| r.predicted_class).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub metrics: Vec<EpochMetrics>,
    /// Counters summed over all epochs.
    pub counters: Vec<StageCounters>,
}

/// A validated pipeline bound to a network. Inference pipelines hold the
/// parameters already cast to the spec's precision.
#[derive(Clone, Debug)]
pub struct Pipeline<'a> {
    kind: PipelineKind,
    spec: PipelineSpec,
    net: Cow<'a, NetworkState>,
    quantization: QuantizationStats,
}

pub fn build_pipeline(net: &NetworkState, kind: PipelineKind, spec: PipelineSpec) -> Result<Pipeline<'_>> {
    spec.validate(kind)?;
    let (net, quantization) = match kind {
        PipelineKind::Infer => prepare(net, spec.precision),
        PipelineKind::Train => (Cow::Borrowed(net), QuantizationStats::default()),
    };
    Ok(Pipeline {
        kind,
        spec,
        net,
        quantization,
    })
}

/// Buffers of one sample in flight.
#[derive(Clone)]
struct Item {
    n: usize,
    /// Stage time spent on this sample so far.
    work: Duration,
    x: Vec<f32>,
    hidden_s: Vec<f32>,
    hidden_y: Vec<f32>,
    out_s: Vec<f32>,
    probs: Vec<f64>,
}

impl Item {
    fn new(net: &NetworkState) -> Item {
        let c = &net.config;
        Item {
            n: 0,
            work: Duration::ZERO,
            x: vec![0.0; c.n_input_mcu()],
            hidden_s: vec![0.0; c.n_hidden_mcu()],
            hidden_y: vec![0.0; c.n_hidden_mcu()],
            out_s: vec![0.0; c.n_classes],
            probs: Vec::new(),
        }
    }
}

fn recv<T>(rx: &Receiver<T>, c: &mut StageCounters) -> Option<T> {
    match rx.try_recv() {
        Ok(v) => Some(v),
        Err(TryRecvError::Empty) => {
            c.recv_stalls += 1;
            rx.recv().ok()
        }
        Err(TryRecvError::Disconnected) => None,
    }
}

/// False once the receiving side is gone.
fn send<T>(tx: &Sender<T>, v: T, c: &mut StageCounters) -> bool {
    match tx.try_send(v) {
        Ok(()) => true,
        Err(TrySendError::Full(v)) => {
            c.send_stalls += 1;
            tx.send(v).is_ok()
        }
        Err(TrySendError::Disconnected(_)) => false,
    }
}

/// Forwards items through `f` until either side closes.
fn relay<I, O>(
    rx: Receiver<I>,
    tx: Sender<O>,
    c: &mut StageCounters,
    mut f: impl FnMut(I) -> Result<O>,
) -> Result<()> {
    while let Some(v) = recv(&rx, c) {
        let t = Instant::now();
        let out = f(v)?;
        c.busy += t.elapsed();
        c.items += 1;
        if !send(&tx, out, c) {
            break;
        }
    }
    Ok(())
}

type StageFn<'s> = Box<dyn FnOnce(&mut StageCounters) -> Result<()> + Send + 's>;

/// Runs stages on scoped threads. Reports the error of the first failing
/// stage in pipeline order; the others only ever see closed channels.
fn run_stages<'s>(stages: Vec<(&'static str, StageFn<'s>)>) -> Result<Vec<StageCounters>> {
    let joined: Vec<(StageCounters, thread::Result<Result<()>>)> = thread::scope(|scope| {
        let handles: Vec<_> = stages
            .into_iter()
            .map(|(name, f)| {
                thread::Builder::new()
                    .name(name.to_string())
                    .spawn_scoped(scope, move || {
                        let mut c = StageCounters::new(name);
                        let r = f(&mut c);
                        (c, r)
                    })
                    .map(|h| (name, h))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| match h {
                Ok((name, h)) => match h.join() {
                    Ok((c, r)) => (c, Ok(r)),
                    Err(p) => (StageCounters::new(name), Err(p)),
                },
                Err(e) => (
                    StageCounters::new("spawn"),
                    Ok(Err(Error::StageFailed {
                        stage: "spawn",
                        message: e.to_string(),
                    })),
                ),
            })
            .collect()
    });
    let mut counters = Vec::with_capacity(joined.len());
    let mut first_err = None;
    for (c, r) in joined {
        let e = match r {
            Ok(Ok(())) => None,
            Ok(Err(e)) => Some(e),
            Err(p) => Some(Error::StageFailed {
                stage: c.stage,
                message: panic_message(&p),
            }),
        };
        if first_err.is_none() {
            first_err = e;
        }
        counters.push(c);
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(counters),
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

impl<'a> Pipeline<'a> {
    pub fn kind(&self) -> PipelineKind {
        self.kind
    }

    pub fn spec(&self) -> &PipelineSpec {
        &self.spec
    }

    pub fn network(&self) -> &NetworkState {
        &self.net
    }

    pub fn into_network(self) -> NetworkState {
        self.net.into_owned()
    }

    pub fn quantization(&self) -> QuantizationStats {
        self.quantization
    }

    /// Number of stage threads.
    pub fn n_stages(&self) -> usize {
        match self.kind {
            PipelineKind::Infer => 5,
            PipelineKind::Train => 7,
        }
    }

    /// Streams images through an inference pipeline.
    pub fn run_stream(&self, images: &[&[f32]]) -> Result<StreamOutput> {
        self.infer(images.len(), &|n| images[n])
    }

    /// Streams every image of `dataset` through an inference pipeline.
    pub fn run_dataset(&self, dataset: &Dataset) -> Result<StreamOutput> {
        self.infer(dataset.len(), &|n| dataset.image(n))
    }

    /// Accuracy report of a streamed pass over `dataset`.
    pub fn evaluate(&self, dataset: &Dataset) -> Result<(Evaluation, Vec<StageCounters>)> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let out = self.run_dataset(dataset)?;
        let eval = Evaluation::from_predictions(
            dataset,
            out.predictions(),
            out.latencies_us,
            self.spec.precision,
            self.quantization,
        );
        Ok((eval, out.counters))
    }

    fn infer<'i>(&self, count: usize, image: &(dyn Fn(usize) -> &'i [f32] + Sync)) -> Result<StreamOutput> {
        if self.kind != PipelineKind::Infer {
            return Err(Error::InvalidPipeline("run_stream needs an inference pipeline".into()));
        }
        let net: &NetworkState = &self.net;
        let c = &net.config;
        let mode = self.spec.precision;
        let lanes = self.spec.parallel_factor;
        let hard = self.spec.hard_wta;
        let cap = self.spec.channel_capacity;

        let (tx_enc, rx_enc) = bounded::<Box<Item>>(cap);
        let (tx_hs, rx_hs) = bounded::<Box<Item>>(cap);
        let (tx_hw, rx_hw) = bounded::<Box<Item>>(cap);
        let (tx_out, rx_out) = bounded::<Box<Item>>(cap);
        // Spent buffers go back to the encoder.
        let (tx_free, rx_free) = crossbeam_channel::unbounded::<Box<Item>>();
        let mut results: Vec<Option<(InferenceResult, f64)>> = vec![None; count];
        let sink = &mut results;

        let stages: Vec<(&'static str, StageFn<'_>)> = vec![
            (
                "encode",
                Box::new(move |cn: &mut StageCounters| {
                    for n in 0..count {
                        let start = Instant::now();
                        let mut it = rx_free.try_recv().unwrap_or_else(|_| Box::new(Item::new(net)));
                        it.n = n;
                        encode_input(image(n), mode, &mut it.x)?;
                        it.work = start.elapsed();
                        cn.busy += it.work;
                        cn.items += 1;
                        if !send(&tx_enc, it, cn) {
                            break;
                        }
                    }
                    Ok(())
                }),
            ),
            (
                "hidden-support",
                Box::new(move |cn: &mut StageCounters| {
                    relay(rx_enc, tx_hs, cn, |mut it: Box<Item>| {
                        let t = Instant::now();
                        let p = &net.input_hidden;
                        layer_support(p, &p.biases, &it.x, mode, lanes, &mut it.hidden_s);
                        it.work += t.elapsed();
                        Ok(it)
                    })
                }),
            ),
            (
                "hidden-wta",
                Box::new(move |cn: &mut StageCounters| {
                    relay(rx_hs, tx_hw, cn, |mut it: Box<Item>| {
                        let t = Instant::now();
                        let Item { hidden_s, hidden_y, .. } = &mut *it;
                        wta_layer(hidden_s, c.hidden_mcu_per_hcu, c.beta, mode, hard, hidden_y);
                        it.work += t.elapsed();
                        Ok(it)
                    })
                }),
            ),
            (
                "output",
                Box::new(move |cn: &mut StageCounters| {
                    relay(rx_hw, tx_out, cn, |mut it: Box<Item>| {
                        let t = Instant::now();
                        let p = &net.hidden_output;
                        let Item { hidden_y, out_s, probs, .. } = &mut *it;
                        layer_support(p, &p.biases, hidden_y, mode, lanes, out_s);
                        let s: Vec<f64> = out_s.iter().map(|&v| v as f64).collect();
                        *probs = soft_wta(&s, c.beta)?;
                        it.work += t.elapsed();
                        Ok(it)
                    })
                }),
            ),
            (
                "classify",
                Box::new(move |cn: &mut StageCounters| {
                    while let Some(mut it) = recv(&rx_out, cn) {
                        let t = Instant::now();
                        let r = InferenceResult {
                            predicted_class: argmax(&it.out_s),
                            output_probabilities: std::mem::take(&mut it.probs),
                            hidden_activity: None,
                        };
                        let dt = t.elapsed();
                        sink[it.n] = Some((r, (it.work + dt).as_secs_f64() * 1e6));
                        cn.busy += dt;
                        cn.items += 1;
                        let _ = tx_free.send(it);
                    }
                    Ok(())
                }),
            ),
        ];
        let counters = run_stages(stages)?;
        let mut out = StreamOutput {
            results: Vec::with_capacity(count),
            latencies_us: Vec::with_capacity(count),
            counters,
        };
        for r in results {
            let (r, l) = r.ok_or_else(|| Error::StageFailed {
                stage: "classify",
                message: "sample lost in flight".into(),
            })?;
            out.results.push(r);
            out.latencies_us.push(l);
        }
        Ok(out)
    }

    /// Trains the pipeline's own copy of the network with both phases. The
    /// result equals [`train_full`](crate::learning::train_full) bit for bit.
    pub fn train(
        &mut self,
        dataset: &Dataset,
        test: Option<&Dataset>,
        params: &TrainingParams,
        on_epoch: &mut dyn FnMut(&EpochMetrics),
    ) -> Result<TrainOutput> {
        if self.kind != PipelineKind::Train {
            return Err(Error::InvalidPipeline("train needs a training pipeline".into()));
        }
        let spec = self.spec.clone();
        let mut totals: Vec<StageCounters> = Vec::new();
        let mut runner = |net: &mut NetworkState, ds: &Dataset, order: &[usize], ctx: &mut PhaseCtx<'_>| {
            let counters = train_epoch(&spec, net, ds, order, ctx)?;
            if totals.is_empty() {
                totals = counters;
            } else {
                for (t, c) in totals.iter_mut().zip(&counters) {
                    t.absorb(c);
                }
            }
            Ok(())
        };
        let metrics = train_full_with(self.net.to_mut(), dataset, test, params, on_epoch, &mut runner)?;
        Ok(TrainOutput {
            metrics,
            counters: totals,
        })
    }
}

/// One training epoch through the seven stages. The network reference is
/// the token that serializes the stateful stages.
fn train_epoch(
    spec: &PipelineSpec,
    net: &mut NetworkState,
    dataset: &Dataset,
    order: &[usize],
    ctx: &mut PhaseCtx<'_>,
) -> Result<Vec<StageCounters>> {
    let cap = spec.channel_capacity;
    let lanes = spec.parallel_factor;
    let phase = ctx.phase;
    let (alpha, eps) = (ctx.params.alpha, ctx.params.eps);
    let cfg = net.config.clone();
    let template = Item::new(net);
    type Tok<'n> = (Box<Item>, &'n mut NetworkState);

    let (tx_enc, rx_enc) = bounded::<Box<Item>>(cap);
    let (tx_tok, rx_tok) = bounded::<&mut NetworkState>(1);
    let (tx_hs, rx_hs) = bounded::<Tok<'_>>(cap);
    let (tx_hw, rx_hw) = bounded::<Tok<'_>>(cap);
    let (tx_tu, rx_tu) = bounded::<Tok<'_>>(cap);
    let (tx_wu, rx_wu) = bounded::<Tok<'_>>(cap);
    let (tx_out, rx_out) = bounded::<Box<Item>>(cap);
    let (tx_free, rx_free) = crossbeam_channel::unbounded::<Box<Item>>();
    tx_tok.send(net).expect("fresh channel");
    let template = &template;
    let cfg = &cfg;

    let stages: Vec<(&'static str, StageFn<'_>)> = vec![
        (
            "encode",
            Box::new(move |cn: &mut StageCounters| {
                for &n in order {
                    let start = Instant::now();
                    let mut it = rx_free
                        .try_recv()
                        .unwrap_or_else(|_| Box::new(template.clone()));
                    it.n = n;
                    encode_input(dataset.image(n), PrecisionMode::FP32, &mut it.x)?;
                    cn.busy += start.elapsed();
                    cn.items += 1;
                    if !send(&tx_enc, it, cn) {
                        break;
                    }
                }
                Ok(())
            }),
        ),
        (
            "hidden-support",
            Box::new(move |cn: &mut StageCounters| {
                let mut bias = vec![0.0f32; cfg.n_hidden_mcu()];
                let homeostatic = phase == Phase::Unsupervised && cfg.homeostasis != 0.0;
                while let Some(mut it) = recv(&rx_enc, cn) {
                    let Some(net) = recv(&rx_tok, cn) else { break };
                    let t = Instant::now();
                    let p = &net.input_hidden;
                    let b = if homeostatic {
                        effective_hidden_bias(p, cfg.homeostasis, &mut bias);
                        &bias
                    } else {
                        &p.biases
                    };
                    layer_support(p, b, &it.x, PrecisionMode::FP32, lanes, &mut it.hidden_s);
                    cn.busy += t.elapsed();
                    cn.items += 1;
                    if !send(&tx_hs, (it, net), cn) {
                        break;
                    }
                }
                Ok(())
            }),
        ),
        (
            "hidden-wta",
            Box::new(move |cn: &mut StageCounters| {
                relay(rx_hs, tx_hw, cn, |(mut it, net): Tok<'_>| {
                    let Item { hidden_s, hidden_y, .. } = &mut *it;
                    wta_layer(
                        hidden_s,
                        cfg.hidden_mcu_per_hcu,
                        cfg.beta,
                        PrecisionMode::FP32,
                        false,
                        hidden_y,
                    );
                    Ok((it, net))
                })
            }),
        ),
        (
            "trace-update",
            Box::new(move |cn: &mut StageCounters| {
                let mut target = vec![0.0f32; cfg.n_classes];
                relay(rx_hw, tx_tu, cn, |(it, net): Tok<'_>| {
                    match phase {
                        Phase::Unsupervised => {
                            learn_step(&mut net.input_hidden, &it.x, &it.hidden_y, alpha, eps, Derive::None)
                        }
                        Phase::Supervised => {
                            clamp_label(dataset.label(it.n), &mut target)?;
                            learn_step(&mut net.hidden_output, &it.hidden_y, &target, alpha, eps, Derive::None)
                        }
                    }
                    Ok((it, net))
                })
            }),
        ),
        (
            "weight-update",
            Box::new(move |cn: &mut StageCounters| {
                relay(rx_tu, tx_wu, cn, |(it, net): Tok<'_>| {
                    match phase {
                        Phase::Unsupervised => {
                            derive_selected(&mut net.input_hidden, eps, Derive::Active);
                            ctx.after_unsupervised_step(&mut net.input_hidden);
                        }
                        Phase::Supervised => derive_selected(&mut net.hidden_output, eps, Derive::All),
                    }
                    Ok((it, net))
                })
            }),
        ),
        (
            "output",
            Box::new(move |cn: &mut StageCounters| {
                while let Some((mut it, net)) = recv(&rx_wu, cn) {
                    let t = Instant::now();
                    let p = &net.hidden_output;
                    let Item { hidden_y, out_s, .. } = &mut *it;
                    layer_support(p, &p.biases, hidden_y, PrecisionMode::FP32, lanes, out_s);
                    cn.busy += t.elapsed();
                    // The sample's update is complete; release the network. After
                    // the last sample nobody is waiting for it any more.
                    let _ = send(&tx_tok, net, cn);
                    let t = Instant::now();
                    let s: Vec<f64> = out_s.iter().map(|&v| v as f64).collect();
                    it.probs = soft_wta(&s, cfg.beta)?;
                    cn.busy += t.elapsed();
                    cn.items += 1;
                    if !send(&tx_out, it, cn) {
                        break;
                    }
                }
                Ok(())
            }),
        ),
        (
            "classify",
            Box::new(move |cn: &mut StageCounters| {
                while let Some(it) = recv(&rx_out, cn) {
                    let t = Instant::now();
                    std::hint::black_box(argmax(&it.out_s));
                    cn.busy += t.elapsed();
                    cn.items += 1;
                    let _ = tx_free.send(it);
                }
                Ok(())
            }),
        ),
    ];
    run_stages(stages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetworkConfig;
    use crate::inference::InferenceKernel;
    use crate::learning::train_full;
    use crate::network::build_network;
    use rand::{Rng, SeedableRng};

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            n_input_hcu: 12,
            n_hidden_hcu: 3,
            hidden_mcu_per_hcu: 6,
            n_classes: 3,
            n_act: 4,
            n_sil: 3,
            n_replace: 1,
            epochs_unsup: 2,
            epochs_sup: 2,
            ..NetworkConfig::mnist()
        }
    }

    fn dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut px = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let l = rng.gen_range(0..3u8);
            for p in 0..12 {
                let on = p / 4 == l as usize;
                px.push(if on { rng.gen_range(0.6..1.0) } else { rng.gen_range(0.0..0.3) });
            }
            labels.push(l);
        }
        Dataset::new(px, labels, 12, 1, 3).unwrap()
    }

    fn trained() -> NetworkState {
        let ds = dataset(60, 1);
        let mut net = build_network(&tiny()).unwrap();
        let params = TrainingParams::new(&net.config, ds.len()).unwrap();
        train_full(&mut net, &ds, None, &params, &mut |_| {}).unwrap();
        net
    }

    #[test]
    fn stage_lists() {
        let net = build_network(&tiny()).unwrap();
        let p = build_pipeline(&net, PipelineKind::Infer, PipelineSpec::infer(PrecisionMode::FP32)).unwrap();
        assert_eq!(p.n_stages(), 5);
        let p = build_pipeline(&net, PipelineKind::Train, PipelineSpec::train()).unwrap();
        assert_eq!(p.n_stages(), 7);

        let mut s = PipelineSpec::train();
        s.stages.retain(|k| !matches!(k, StageKind::TraceUpdate | StageKind::WeightUpdate));
        assert!(matches!(
            build_pipeline(&net, PipelineKind::Train, s),
            Err(Error::InvalidPipeline(_))
        ));
        assert!(build_pipeline(&net, PipelineKind::Infer, PipelineSpec::train()).is_err());
        let mut s = PipelineSpec::infer(PrecisionMode::FP32);
        s.channel_capacity = 0;
        assert!(build_pipeline(&net, PipelineKind::Infer, s).is_err());
        let mut s = PipelineSpec::infer(PrecisionMode::FP32);
        s.stages.swap(1, 2);
        assert!(build_pipeline(&net, PipelineKind::Infer, s).is_err());
        assert_eq!(StageKind::parse("weight-update"), Some(StageKind::WeightUpdate));
    }

    #[test]
    fn empty_stream() {
        let net = build_network(&tiny()).unwrap();
        let p = build_pipeline(&net, PipelineKind::Infer, PipelineSpec::infer(PrecisionMode::FP32)).unwrap();
        let out = p.run_stream(&[]).unwrap();
        assert!(out.results.is_empty());
        assert!(out.counters.iter().all(|c| c.items == 0 && c.send_stalls == 0));
    }

    #[test]
    fn matches_sequential_kernel() {
        let net = trained();
        let ds = dataset(40, 9);
        for mode in [PrecisionMode::FP32, PrecisionMode::FP16, PrecisionMode::MIXED] {
            let mut k = InferenceKernel::new(&net, mode);
            let expect: Vec<InferenceResult> = ds.iter().map(|(im, _)| k.predict(im).unwrap()).collect();
            for cap in [1, 3, 64] {
                for pf in [1, 8, 16] {
                    let mut spec = PipelineSpec::infer(mode);
                    spec.channel_capacity = cap;
                    spec.parallel_factor = pf;
                    let out = build_pipeline(&net, PipelineKind::Infer, spec)
                        .unwrap()
                        .run_dataset(&ds)
                        .unwrap();
                    assert_eq!(out.results, expect, "{mode} cap {cap} pf {pf}");
                    assert!(out.counters.iter().all(|c| c.items == 40));
                }
            }
        }
    }

    #[test]
    fn training_matches_sequential() {
        let ds = dataset(50, 2);
        let cfg = NetworkConfig {
            init_sample_mix: 0.5,
            homeostasis: 2.0,
            rewire_period: Some(7),
            ..tiny()
        };
        let net = build_network(&cfg).unwrap();
        let params = TrainingParams::new(&cfg, ds.len()).unwrap();
        let mut seq = net.clone();
        train_full(&mut seq, &ds, Some(&ds), &params, &mut |_| {}).unwrap();
        for cap in [1, 64] {
            let mut spec = PipelineSpec::train();
            spec.channel_capacity = cap;
            let mut p = build_pipeline(&net, PipelineKind::Train, spec).unwrap();
            let out = p.train(&ds, Some(&ds), &params, &mut |_| {}).unwrap();
            assert_eq!(out.metrics.len(), 4);
            assert_eq!(out.counters.len(), 7);
            assert!(out.counters.iter().all(|c| c.items == 200));
            let got = p.into_network();
            assert_eq!(got.fingerprint(), seq.fingerprint());
            assert_eq!(got.input_hidden.traces, seq.input_hidden.traces);
        }
    }

    #[test]
    fn stage_error_surfaces() {
        let net = trained();
        let p = build_pipeline(&net, PipelineKind::Infer, PipelineSpec::infer(PrecisionMode::FP32)).unwrap();
        let good = [0.5f32; 12];
        let bad = [0.5f32; 5];
        let images: Vec<&[f32]> = (0..200).map(|n| if n == 100 { &bad[..] } else { &good[..] }).collect();
        assert!(matches!(p.run_stream(&images), Err(Error::ShapeMismatch { .. })));

        let ds = Dataset::new(vec![0.5; 24], vec![0, 2], 12, 1, 3).unwrap();
        let small = NetworkConfig { n_classes: 2, ..tiny() };
        let fresh = build_network(&small).unwrap();
        let mut p = build_pipeline(&fresh, PipelineKind::Train, PipelineSpec::train()).unwrap();
        let params = TrainingParams::new(&small, 2).unwrap();
        let r = p.train(&ds, None, &params, &mut |_| {});
        assert!(matches!(r, Err(Error::LabelOutOfRange { label: 2, .. })), "{r:?}");
    }

    #[test]
    fn report_flags_bottleneck() {
        let mk = |stage, items, busy_ms| StageCounters {
            stage,
            items,
            busy: Duration::from_millis(busy_ms),
            ..Default::default()
        };
        let r = counters_report(&[mk("a", 5, 10), mk("b", 5, 100), mk("c", 5, 10)]);
        assert_eq!(r.bottleneck_stage(), Some("b"));
        assert!(r.to_table().lines().nth(2).unwrap().ends_with("<- bottleneck"));
        assert_eq!(r.to_csv().lines().nth(2).unwrap(), "b,5,0,0,100000");

        let r = counters_report(&[mk("a", 0, 0), mk("b", 0, 0)]);
        assert_eq!(r.bottleneck, None);
        assert!(!r.to_table().contains("NaN"));
        let r = counters_report(&[mk("only", 9, 1)]);
        assert_eq!(r.rows[0].items, 9);
    }
}
