//! Online learning: probability-trace updates, weight and bias derivation,
//! structural plasticity and the two-phase training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::encoding::{complementary_encode_into, Dataset};
use crate::error::{Error, Result};
use crate::fastmath::ln_pos;
use crate::inference::{argmax, evaluate, layer_support, wta_layer};
use crate::network::{rng_for, streams, NetworkState, Projection};
use crate::precision::PrecisionMode;

/// Default guard added inside every logarithm.
pub const EPS: f64 = 1e-8;

/// Per-run learning parameters derived from the configuration and the
/// training-set size.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingParams {
    pub alpha: f64,
    pub rewire_period: usize,
    pub n_replace: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub eps: f64,
}

impl TrainingParams {
    /// `alpha = 1 / (tau_p * n_train)`, clamped to `(0, 1]`.
    pub fn new(config: &NetworkConfig, n_train: usize) -> Result<TrainingParams> {
        if n_train == 0 {
            return Err(Error::EmptyDataset);
        }
        let alpha = (1.0 / (config.tau_p * n_train as f64)).min(1.0);
        check_alpha(alpha)?;
        Ok(TrainingParams {
            alpha,
            rewire_period: config.rewire_period_for(n_train),
            n_replace: config.n_replace,
            shuffle: true,
            seed: config.seed,
            eps: EPS,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange(alpha))
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            what,
            expected,
            actual,
        })
    }
}

/// Which slots get their weights re-derived after a trace update.
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Derive {
    None,
    Active,
    All,
}

/// Mixes one activation pair into the traces and optionally re-derives
/// weights and biases. Every stored pair decays; the joint term uses the
/// pre activity of the slot's input hypercolumn.
pub(crate) fn learn_step(proj: &mut Projection, pre: &[f32], post: &[f32], alpha: f64, eps: f64, derive: Derive) {
    let decay = 1.0 - alpha;
    let m = proj.post_mcus;
    let pm = proj.pre_mcus;

    for (p, &x) in proj.traces.p_pre.iter_mut().zip(pre) {
        *p = decay * *p + alpha * x as f64;
    }
    for (p, &y) in proj.traces.p_post.iter_mut().zip(post) {
        *p = decay * *p + alpha * y as f64;
    }
    if derive != Derive::None {
        for (b, &p) in proj.biases.iter_mut().zip(&proj.traces.p_post) {
            *b = (p + eps).ln() as f32;
        }
    }

    let lpost: Vec<f64> = proj.traces.p_post.iter().map(|&p| (p + eps).ln()).collect();
    let n_act = proj.connectivity.n_act();
    let n_slots = proj.connectivity.n_slots();
    let slot_len = pm * m;
    let mut y = vec![0.0f64; m];
    for h in 0..proj.n_post_hcu() {
        for (yj, &v) in y.iter_mut().zip(&post[h * m..(h + 1) * m]) {
            *yj = v as f64;
        }
        let lp = &lpost[h * m..(h + 1) * m];
        let base = h * n_slots * slot_len;
        for slot in 0..n_slots {
            let c = proj.connectivity.slots(h)[slot] as usize;
            let write = match derive {
                Derive::None => false,
                Derive::Active => slot < n_act,
                Derive::All => true,
            };
            for i in 0..pm {
                let k = c * pm + i;
                let a = alpha * pre[k] as f64;
                let lpi = (proj.traces.p_pre[k] + eps).ln();
                let off = base + slot * slot_len + i * m;
                let pj = &mut proj.traces.p_joint[off..off + m];
                if write {
                    let w = &mut proj.weights[off..off + m];
                    for j in 0..m {
                        let p = decay * pj[j] + a * y[j];
                        pj[j] = p;
                        w[j] = (ln_pos(p + eps) - lpi - lp[j]) as f32;
                    }
                } else {
                    for j in 0..m {
                        pj[j] = decay * pj[j] + a * y[j];
                    }
                }
            }
        }
    }
}

/// Exponential-moving-average update of every trace of `projection`:
/// `p <- (1 - alpha) p + alpha * target` with targets `x`, `y` and `x*y`.
pub fn update_traces(projection: &mut Projection, pre_act: &[f32], post_act: &[f32], alpha: f64) -> Result<()> {
    check_len("pre-synaptic activity", projection.n_pre_mcu(), pre_act.len())?;
    check_len("post-synaptic activity", projection.n_post_mcu(), post_act.len())?;
    check_alpha(alpha)?;
    learn_step(projection, pre_act, post_act, alpha, EPS, Derive::None);
    Ok(())
}

/// Recomputes biases `ln(p_post + eps)` and weights
/// `ln((p_joint + eps) / ((p_pre + eps)(p_post + eps)))` for every stored pair.
pub fn derive_weights(projection: &mut Projection, eps: f64) {
    derive_selected(projection, eps, Derive::All);
}

fn derive_slot(proj: &mut Projection, h: usize, slot: usize, eps: f64) {
    let m = proj.post_mcus;
    let lp: Vec<f64> = proj.traces.p_post[h * m..(h + 1) * m].iter().map(|&p| (p + eps).ln()).collect();
    derive_slot_with(proj, h, slot, &lp, eps);
}

fn derive_slot_with(proj: &mut Projection, h: usize, slot: usize, lp: &[f64], eps: f64) {
    let m = proj.post_mcus;
    let pm = proj.pre_mcus;
    let c = proj.connectivity.slots(h)[slot] as usize;
    let off = proj.slot_offset(h, slot);
    for i in 0..pm {
        let lpi = (proj.traces.p_pre[c * pm + i] + eps).ln();
        let row = off + i * m;
        for j in 0..m {
            proj.weights[row + j] = (ln_pos(proj.traces.p_joint[row + j] + eps) - lpi - lp[j]) as f32;
        }
    }
}

/// Biases plus the weights of the slots selected by `derive`. Produces the
/// same values as the fused path of [`learn_step`].
pub(crate) fn derive_selected(proj: &mut Projection, eps: f64, derive: Derive) {
    if derive == Derive::None {
        return;
    }
    for (b, &p) in proj.biases.iter_mut().zip(&proj.traces.p_post) {
        *b = (p + eps).ln() as f32;
    }
    let m = proj.post_mcus;
    let n = match derive {
        Derive::Active => proj.connectivity.n_act(),
        _ => proj.connectivity.n_slots(),
    };
    let mut lp = vec![0.0; m];
    for h in 0..proj.n_post_hcu() {
        for (l, &p) in lp.iter_mut().zip(&proj.traces.p_post[h * m..(h + 1) * m]) {
            *l = (p + eps).ln();
        }
        for slot in 0..n {
            derive_slot_with(proj, h, slot, &lp, eps);
        }
    }
}

/// Trace-estimated mutual information between hidden hypercolumn `hidden_hcu`
/// and each of its connected input hypercolumns, in slot order (active, then
/// silent).
pub fn connection_score(projection: &Projection, hidden_hcu: usize) -> Result<Vec<f64>> {
    if hidden_hcu >= projection.n_post_hcu() {
        return Err(Error::IndexOutOfRange {
            what: "hidden hypercolumn",
            index: hidden_hcu,
            len: projection.n_post_hcu(),
        });
    }
    let len = projection.slot_len();
    Ok((0..projection.connectivity.n_slots())
        .map(|slot| {
            let off = projection.slot_offset(hidden_hcu, slot);
            projection.traces.p_joint[off..off + len]
                .iter()
                .zip(&projection.weights[off..off + len])
                .map(|(&p, &w)| p * w as f64)
                .sum()
        })
        .collect())
}

/// Structural plasticity for every post hypercolumn: rank links by score
/// (ties to the lower input index), promote the best `n_act`, and replace the
/// `n_replace` weakest silent links with random unconnected inputs whose
/// traces start from the independence prior.
pub fn rewire(projection: &mut Projection, params: &TrainingParams, rng: &mut impl Rng) {
    derive_weights(projection, params.eps);
    rewire_derived(projection, params.n_replace, params.eps, rng);
}

fn rewire_derived(proj: &mut Projection, n_replace: usize, eps: f64, rng: &mut impl Rng) {
    let n_act = proj.connectivity.n_act();
    let n_slots = proj.connectivity.n_slots();
    let n_pre = proj.connectivity.n_pre_hcu();
    let len = proj.slot_len();
    let mut connected = vec![false; n_pre];
    for h in 0..proj.n_post_hcu() {
        let scores = connection_score(proj, h).expect("in range");
        let slots = proj.connectivity.slots(h).to_vec();
        let mut rank: Vec<usize> = (0..n_slots).collect();
        rank.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(slots[a].cmp(&slots[b])));

        // Weakest silent links, by rank.
        let n_sil = n_slots - n_act;
        let replaced: Vec<usize> = rank[n_slots - n_replace.min(n_sil)..].to_vec();

        let mut active: Vec<usize> = rank[..n_act].to_vec();
        let mut silent: Vec<usize> = rank[n_act..].to_vec();
        active.sort_by_key(|&s| slots[s]);
        silent.sort_by_key(|&s| slots[s]);

        // New index per slot, before replacement.
        let order: Vec<usize> = active.iter().chain(&silent).copied().collect();
        let off = proj.slot_offset(h, 0);
        let block = off..off + n_slots * len;
        let old_p = proj.traces.p_joint[block.clone()].to_vec();
        let old_w = proj.weights[block].to_vec();
        let dst = proj.connectivity.slots_mut(h);
        for (new, &old) in order.iter().enumerate() {
            dst[new] = slots[old];
            proj.traces.p_joint[off + new * len..off + (new + 1) * len]
                .copy_from_slice(&old_p[old * len..(old + 1) * len]);
            proj.weights[off + new * len..off + (new + 1) * len]
                .copy_from_slice(&old_w[old * len..(old + 1) * len]);
        }

        connected.fill(false);
        for &c in &slots {
            connected[c as usize] = true;
        }
        let mut free: Vec<u32> = (0..n_pre as u32).filter(|&c| !connected[c as usize]).collect();
        let mut fresh = Vec::new();
        for old in replaced {
            if free.is_empty() {
                break;
            }
            let pick = free.swap_remove(rng.gen_range(0..free.len()));
            let new_slot = order.iter().position(|&s| s == old).unwrap();
            proj.connectivity.slots_mut(h)[new_slot] = pick;
            fresh.push(new_slot);
        }
        if fresh.is_empty() {
            continue;
        }
        // Keep the silent list sorted; move trace blocks along with indices.
        let sil: Vec<(u32, usize)> = (n_act..n_slots)
            .map(|s| (proj.connectivity.slots(h)[s], s))
            .collect();
        let mut sorted = sil.clone();
        sorted.sort_unstable();
        let old_p = proj.traces.p_joint[off..off + n_slots * len].to_vec();
        let old_w = proj.weights[off..off + n_slots * len].to_vec();
        for (k, &(c, from)) in sorted.iter().enumerate() {
            let to = n_act + k;
            proj.connectivity.slots_mut(h)[to] = c;
            proj.traces.p_joint[off + to * len..off + (to + 1) * len]
                .copy_from_slice(&old_p[from * len..(from + 1) * len]);
            proj.weights[off + to * len..off + (to + 1) * len]
                .copy_from_slice(&old_w[from * len..(from + 1) * len]);
            if fresh.contains(&from) {
                proj.reset_slot(h, to);
                derive_slot(proj, h, to, eps);
            }
        }
    }
}

/// Training phase of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Unsupervised,
    Supervised,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Unsupervised => "unsupervised",
            Phase::Supervised => "supervised",
        }
    }
}

/// Wall time and test accuracy after one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based, counted across both phases.
    pub epoch: usize,
    pub phase: Phase,
    pub wall_ms: f64,
    pub test_accuracy: Option<f64>,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,phase,wall_ms,test_accuracy";

    pub fn csv_row(&self) -> String {
        let acc = self.test_accuracy.map(|a| format!("{a:.4}")).unwrap_or_default();
        format!("{},{},{:.1},{}", self.epoch, self.phase.name(), self.wall_ms, acc)
    }
}

/// Scratch buffers for the per-sample loop.
struct Scratch {
    x: Vec<f32>,
    bias: Vec<f32>,
    hidden_s: Vec<f32>,
    hidden_y: Vec<f32>,
    out_y: Vec<f32>,
}

impl Scratch {
    fn new(c: &NetworkConfig) -> Scratch {
        Scratch {
            x: vec![0.0; c.n_input_mcu()],
            bias: vec![0.0; c.n_hidden_mcu()],
            hidden_s: vec![0.0; c.n_hidden_mcu()],
            hidden_y: vec![0.0; c.n_hidden_mcu()],
            out_y: vec![0.0; c.n_classes],
        }
    }
}

fn check_dataset(net: &NetworkState, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_len("image pixels", net.config.n_input_hcu, dataset.n_pixels())?;
    if dataset.n_classes > net.config.n_classes {
        if let Some(&l) = dataset.labels().iter().find(|&&l| l as usize >= net.config.n_classes) {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                n_classes: net.config.n_classes,
            });
        }
    }
    Ok(())
}

fn epoch_order(n: usize, params: &TrainingParams, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if params.shuffle {
        order.shuffle(rng);
    }
    order
}

/// Biases seen by the hidden layer while it learns. With homeostasis on,
/// minicolumns used less than their fair share `1/M` get their (negative)
/// log-prior scaled by `1 - k (1 - M p)^2`, which turns into a boost as
/// usage drops.
pub(crate) fn effective_hidden_bias(proj: &Projection, homeostasis: f64, out: &mut [f32]) {
    if homeostasis == 0.0 {
        out.copy_from_slice(&proj.biases);
        return;
    }
    let m = proj.post_mcus as f64;
    for ((o, &b), &p) in out.iter_mut().zip(&proj.biases).zip(&proj.traces.p_post) {
        let u = (1.0 - m * p).max(0.0);
        *o = (b as f64 * (1.0 - homeostasis * u * u)) as f32;
    }
}

/// Hidden activity of an image through the input-to-hidden projection.
fn hidden_forward(net: &NetworkState, image: &[f32], homeostatic: bool, s: &mut Scratch) -> Result<()> {
    complementary_encode_into(image, &mut s.x)?;
    let p = &net.input_hidden;
    layer_support(
        p,
        if homeostatic { &s.bias } else { &p.biases },
        &s.x,
        PrecisionMode::FP32,
        usize::MAX,
        &mut s.hidden_s,
    );
    wta_layer(
        &s.hidden_s,
        net.config.hidden_mcu_per_hcu,
        net.config.beta,
        PrecisionMode::FP32,
        false,
        &mut s.hidden_y,
    );
    Ok(())
}

/// Seeds each hidden minicolumn's conditional input traces with a randomly
/// drawn training image blended with the dataset mean:
/// `p_joint = p_post ((1 - mix) mean + mix x)`, with `p_pre = mean`.
fn seed_from_samples(net: &mut NetworkState, dataset: &Dataset, mix: f64, eps: f64) -> Result<()> {
    let mut rng = rng_for(net.config.seed, streams::INIT_SAMPLES);
    let proj = &mut net.input_hidden;
    let m = proj.post_mcus;
    let pm = proj.pre_mcus;
    let n_in = dataset.n_pixels() * pm;
    let mut x = vec![0.0f32; n_in];
    let mut mean = vec![0.0f64; n_in];
    for (image, _) in dataset.iter() {
        complementary_encode_into(image, &mut x)?;
        for (a, &v) in mean.iter_mut().zip(&x) {
            *a += v as f64;
        }
    }
    for a in mean.iter_mut() {
        *a /= dataset.len() as f64;
    }
    // The marginals must agree with the seeded joints, or stale priors would
    // make constant inputs look informative.
    proj.traces.p_pre.copy_from_slice(&mean);
    for h in 0..proj.n_post_hcu() {
        for j in 0..m {
            complementary_encode_into(dataset.image(rng.gen_range(0..dataset.len())), &mut x)?;
            let pj = proj.traces.p_post[h * m + j];
            for slot in 0..proj.connectivity.n_slots() {
                let c = proj.connectivity.slots(h)[slot] as usize;
                let off = proj.slot_offset(h, slot);
                for i in 0..pm {
                    let k = c * pm + i;
                    proj.traces.p_joint[off + i * m + j] = pj * ((1.0 - mix) * mean[k] + mix * x[k] as f64);
                }
            }
        }
    }
    derive_weights(proj, eps);
    Ok(())
}

fn is_pristine(p: &Projection) -> bool {
    p.weights.iter().all(|&w| w == 0.0)
}

/// Mutable per-phase state shared by the epochs of one phase.
pub(crate) struct PhaseCtx<'p> {
    pub phase: Phase,
    pub params: &'p TrainingParams,
    pub seen: usize,
    pub rewire_rng: ChaCha8Rng,
}

impl PhaseCtx<'_> {
    /// Counts one unsupervised sample and rewires when the period is due.
    pub fn after_unsupervised_step(&mut self, proj: &mut Projection) {
        self.seen += 1;
        if proj.connectivity.n_sil() > 0 && self.seen % self.params.rewire_period == 0 {
            derive_weights(proj, self.params.eps);
            rewire_derived(proj, self.params.n_replace, self.params.eps, &mut self.rewire_rng);
        }
    }
}

/// One-hot target for a label.
pub(crate) fn clamp_label(label: usize, out: &mut [f32]) -> Result<()> {
    if label >= out.len() {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: out.len(),
        });
    }
    out.fill(0.0);
    out[label] = 1.0;
    Ok(())
}

/// Runs one epoch over `order`, sample by sample.
pub(crate) type EpochRunner<'r> =
    dyn FnMut(&mut NetworkState, &Dataset, &[usize], &mut PhaseCtx<'_>) -> Result<()> + 'r;

fn sequential_epoch(net: &mut NetworkState, dataset: &Dataset, order: &[usize], ctx: &mut PhaseCtx<'_>) -> Result<()> {
    let mut s = Scratch::new(&net.config);
    let (alpha, eps) = (ctx.params.alpha, ctx.params.eps);
    let homeostasis = net.config.homeostasis;
    for &n in order {
        let image = dataset.image(n);
        match ctx.phase {
            Phase::Unsupervised => {
                effective_hidden_bias(&net.input_hidden, homeostasis, &mut s.bias);
                hidden_forward(net, image, homeostasis != 0.0, &mut s)?;
                learn_step(&mut net.input_hidden, &s.x, &s.hidden_y, alpha, eps, Derive::Active);
                ctx.after_unsupervised_step(&mut net.input_hidden);
            }
            Phase::Supervised => {
                hidden_forward(net, image, false, &mut s)?;
                clamp_label(dataset.label(n), &mut s.out_y)?;
                learn_step(&mut net.hidden_output, &s.hidden_y, &s.out_y, alpha, eps, Derive::All);
            }
        }
    }
    Ok(())
}

/// Unsupervised phase: the input-to-hidden projection learns from the
/// soft-WTA hidden response to each sample, rewiring every `rewire_period`
/// samples. The hidden-to-output projection is left alone.
pub fn train_unsupervised(net: &mut NetworkState, dataset: &Dataset, params: &TrainingParams) -> Result<()> {
    check_dataset(net, dataset)?;
    train_phase(net, dataset, params, Phase::Unsupervised, None, &mut |_| {}, &mut sequential_epoch)
}

/// Supervised phase: the frozen hidden representation is associated with a
/// one-hot clamp of the label in the hidden-to-output projection.
pub fn train_supervised(net: &mut NetworkState, dataset: &Dataset, params: &TrainingParams) -> Result<()> {
    check_dataset(net, dataset)?;
    train_phase(net, dataset, params, Phase::Supervised, None, &mut |_| {}, &mut sequential_epoch)
}

fn train_phase(
    net: &mut NetworkState,
    dataset: &Dataset,
    params: &TrainingParams,
    phase: Phase,
    test: Option<&Dataset>,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
    run_epoch: &mut EpochRunner<'_>,
) -> Result<()> {
    check_alpha(params.alpha)?;
    let (epochs, first) = match phase {
        Phase::Unsupervised => (net.config.epochs_unsup, 1),
        Phase::Supervised => (net.config.epochs_sup, net.config.epochs_unsup + 1),
    };
    if epochs == 0 {
        return Ok(());
    }
    net.alpha = params.alpha;
    let mut shuffle_rng = rng_for(params.seed, streams::SHUFFLE + 16 * phase as u64);
    let mut ctx = PhaseCtx {
        phase,
        params,
        seen: 0,
        rewire_rng: rng_for(params.seed, streams::REWIRE),
    };

    if phase == Phase::Unsupervised && net.config.init_sample_mix > 0.0 && is_pristine(&net.input_hidden) {
        seed_from_samples(net, dataset, net.config.init_sample_mix, params.eps)?;
    }

    for e in 0..epochs {
        let t = Instant::now();
        let order = epoch_order(dataset.len(), params, &mut shuffle_rng);
        run_epoch(net, dataset, &order, &mut ctx)?;
        if phase == Phase::Unsupervised {
            derive_weights(&mut net.input_hidden, params.eps);
        }
        let wall_ms = t.elapsed().as_secs_f64() * 1e3;
        let test_accuracy = match (phase, test) {
            (Phase::Supervised, Some(t)) => Some(evaluate(net, t, PrecisionMode::FP32)?.accuracy()),
            _ => None,
        };
        on_epoch(&EpochMetrics {
            epoch: first + e,
            phase,
            wall_ms,
            test_accuracy,
        });
    }
    Ok(())
}

/// Both phases in order, reporting metrics after every epoch. Test accuracy
/// is measured after supervised epochs only, since the output layer is
/// untrained before that.
pub fn train_full(
    net: &mut NetworkState,
    dataset: &Dataset,
    test: Option<&Dataset>,
    params: &TrainingParams,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    train_full_with(net, dataset, test, params, on_epoch, &mut sequential_epoch)
}

pub(crate) fn train_full_with(
    net: &mut NetworkState,
    dataset: &Dataset,
    test: Option<&Dataset>,
    params: &TrainingParams,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
    run_epoch: &mut EpochRunner<'_>,
) -> Result<Vec<EpochMetrics>> {
    check_dataset(net, dataset)?;
    let mut all = Vec::new();
    let mut record = |m: &EpochMetrics| {
        on_epoch(m);
        all.push(m.clone());
    };
    for phase in [Phase::Unsupervised, Phase::Supervised] {
        train_phase(net, dataset, params, phase, test, &mut record, run_epoch)?;
    }
    Ok(all)
}

/// The full kernel's forward pass: the same stages the trainer runs, minus
/// every update. Returns the predicted class.
pub struct FullKernelForward<'a> {
    net: &'a NetworkState,
    s: Scratch,
    out_s: Vec<f32>,
}

impl<'a> FullKernelForward<'a> {
    pub fn new(net: &'a NetworkState) -> FullKernelForward<'a> {
        FullKernelForward {
            s: Scratch::new(&net.config),
            out_s: vec![0.0; net.config.n_classes],
            net,
        }
    }

    pub fn classify(&mut self, image: &[f32]) -> Result<usize> {
        hidden_forward(self.net, image, false, &mut self.s)?;
        let p = &self.net.hidden_output;
        layer_support(
            p,
            &p.biases,
            &self.s.hidden_y,
            PrecisionMode::FP32,
            usize::MAX,
            &mut self.out_s,
        );
        Ok(argmax(&self.out_s))
    }
}
