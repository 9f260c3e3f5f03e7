//! Latency measurement, model-size sweeps and their reports.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use crate::config::NetworkConfig;
use crate::encoding::Dataset;
use crate::error::{Error, Result};
use crate::inference::{Evaluation, InferenceKernel, LatencyStats};
use crate::learning::{train_full, TrainingParams};
use crate::network::{build_network, NetworkState};
use crate::pipeline::{build_pipeline, PipelineKind, PipelineSpec};
use crate::precision::PrecisionMode;

/// Times `repeats` passes of `predict` over `dataset` after `warmup`
/// untimed passes.
pub fn bench_latency(
    net: &NetworkState,
    dataset: &Dataset,
    mode: PrecisionMode,
    repeats: usize,
    warmup: usize,
) -> Result<LatencyStats> {
    let mut k = InferenceKernel::new(net, mode);
    bench_kernel(&mut k, dataset, repeats, warmup)
}

pub fn bench_kernel(k: &mut InferenceKernel<'_>, dataset: &Dataset, repeats: usize, warmup: usize) -> Result<LatencyStats> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for _ in 0..warmup {
        for (image, _) in dataset.iter() {
            std::hint::black_box(k.predict(image)?);
        }
    }
    let mut samples = Vec::with_capacity(repeats * dataset.len());
    for _ in 0..repeats {
        for (image, _) in dataset.iter() {
            let t = Instant::now();
            std::hint::black_box(k.predict(image)?);
            samples.push(t.elapsed().as_secs_f64() * 1e6);
        }
    }
    Ok(LatencyStats::from_samples(&samples))
}

/// One axis of a model-size sweep with its explicit values.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Hcu(Vec<usize>),
    Mcu(Vec<usize>),
    /// `(n_act, n_sil)` pairs.
    Links(Vec<(usize, usize)>),
    Precision(Vec<PrecisionMode>),
}

impl SweepAxis {
    fn name(&self) -> &'static str {
        match self {
            SweepAxis::Hcu(_) => "hcu",
            SweepAxis::Mcu(_) => "mcu",
            SweepAxis::Links(_) => "links",
            SweepAxis::Precision(_) => "precision",
        }
    }
}

/// Axes written as `hcu=30,10;mcu=400,200;links=320/80,160/40;precision=fp32,mixed`.
///
/// Structural axes (`hcu`, `mcu`, `links`) vary one at a time from the base
/// configuration, in the order given. Every structural variant is then
/// evaluated at each listed precision.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axes: Vec<SweepAxis>,
}

impl FromStr for SweepSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<SweepSpec> {
        let bad = |m: String| Error::InvalidSweep(m);
        let mut axes: Vec<SweepAxis> = Vec::new();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected axis=values, got {part:?}")))?;
            let values: Vec<&str> = v.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(bad(format!("axis {k:?} has no values")));
            }
            let count = |v: &str| -> Result<usize> {
                match v.parse::<usize>() {
                    Ok(n) if n > 0 => Ok(n),
                    _ => Err(bad(format!("{v:?} is not a positive count"))),
                }
            };
            let axis = match k.trim() {
                "hcu" => SweepAxis::Hcu(values.iter().map(|v| count(v)).collect::<Result<_>>()?),
                "mcu" => SweepAxis::Mcu(values.iter().map(|v| count(v)).collect::<Result<_>>()?),
                "links" => SweepAxis::Links(
                    values
                        .iter()
                        .map(|v| {
                            let (a, b) = v
                                .split_once('/')
                                .ok_or_else(|| bad(format!("links value {v:?} is not act/sil")))?;
                            Ok((count(a)?, b.parse().map_err(|_| bad(format!("bad silent count {b:?}")))?))
                        })
                        .collect::<Result<_>>()?,
                ),
                "precision" => SweepAxis::Precision(
                    values
                        .iter()
                        .map(|v| v.parse().map_err(|e: String| bad(e)))
                        .collect::<Result<_>>()?,
                ),
                other => return Err(bad(format!("unknown axis {other:?}"))),
            };
            if axes.iter().any(|a| a.name() == axis.name()) {
                return Err(bad(format!("axis {} given twice", axis.name())));
            }
            axes.push(axis);
        }
        if axes.is_empty() {
            return Err(bad("empty sweep".into()));
        }
        Ok(SweepSpec { axes })
    }
}

impl SweepSpec {
    /// Structural variants of `base` as `(id, config)`, in sweep order. With
    /// no structural axis the base itself is the only variant.
    pub fn variants(&self, base: &NetworkConfig) -> Result<Vec<(String, NetworkConfig)>> {
        let mut out = Vec::new();
        for axis in &self.axes {
            match axis {
                SweepAxis::Hcu(v) => {
                    for &h in v {
                        out.push((format!("hcu={h}"), NetworkConfig { n_hidden_hcu: h, ..base.clone() }));
                    }
                }
                SweepAxis::Mcu(v) => {
                    for &m in v {
                        out.push((format!("mcu={m}"), NetworkConfig { hidden_mcu_per_hcu: m, ..base.clone() }));
                    }
                }
                SweepAxis::Links(v) => {
                    for &(a, s) in v {
                        let n_replace = if base.n_sil == s {
                            base.n_replace
                        } else {
                            NetworkConfig::default_n_replace(s)
                        };
                        out.push((
                            format!("links={a}/{s}"),
                            NetworkConfig {
                                n_act: a,
                                n_sil: s,
                                n_replace,
                                ..base.clone()
                            },
                        ));
                    }
                }
                SweepAxis::Precision(_) => {}
            }
        }
        if out.is_empty() {
            out.push(("base".to_string(), base.clone()));
        }
        for (id, c) in &out {
            c.validate()
                .map_err(|e| Error::InvalidSweep(format!("variant {id}: {e}")))?;
        }
        Ok(out)
    }

    /// Precisions to evaluate; the base precision when the axis is absent.
    pub fn precisions(&self, base: &NetworkConfig) -> Vec<PrecisionMode> {
        self.axes
            .iter()
            .find_map(|a| match a {
                SweepAxis::Precision(p) => Some(p.clone()),
                _ => None,
            })
            .unwrap_or_else(|| vec![base.precision])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub config_id: String,
    pub precision: PrecisionMode,
    /// Support multiply-adds per image.
    pub support_ops: u64,
    pub accuracy: f64,
    pub latency: LatencyStats,
    pub wall_ms: f64,
    pub saturated: usize,
    /// Mean latency over the reference row's mean latency.
    pub relative_latency: f64,
}

impl BenchRow {
    pub fn from_evaluation(config_id: impl Into<String>, config: &NetworkConfig, eval: &Evaluation, wall_ms: f64) -> BenchRow {
        BenchRow {
            config_id: config_id.into(),
            precision: eval.mode,
            support_ops: config.support_ops(),
            accuracy: eval.accuracy(),
            latency: eval.latency,
            wall_ms,
            saturated: eval.quantization.saturated,
            relative_latency: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

pub const BENCH_CSV_HEADER: &str =
    "config,precision,support_ops,accuracy,mean_us,median_us,p95_us,wall_ms,saturated,relative_latency";

impl BenchReport {
    /// Sets every row's relative latency against row `base`.
    pub fn normalize_to(&mut self, base: usize) {
        let Some(r) = self.rows.get(base) else { return };
        let m = r.latency.mean_us;
        for row in &mut self.rows {
            row.relative_latency = if m > 0.0 { row.latency.mean_us / m } else { 0.0 };
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{BENCH_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.3},{:.3},{:.3},{:.1},{},{:.4}",
                r.config_id,
                r.precision,
                r.support_ops,
                r.accuracy,
                r.latency.mean_us,
                r.latency.median_us,
                r.latency.p95_us,
                r.wall_ms,
                r.saturated,
                r.relative_latency
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<16} {:<16} {:>12} {:>9} {:>10} {:>10} {:>10} {:>10} {:>6}\n",
            "config", "precision", "ops/image", "accuracy", "mean_us", "median_us", "p95_us", "saturated", "rel"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:<16} {:>12} {:>9.4} {:>10.1} {:>10.1} {:>10.1} {:>10} {:>6.3}",
                r.config_id,
                r.precision.to_string(),
                r.support_ops,
                r.accuracy,
                r.latency.mean_us,
                r.latency.median_us,
                r.latency.p95_us,
                r.saturated,
                r.relative_latency
            );
        }
        s
    }
}

/// Pipeline settings shared by every evaluation of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalSettings {
    /// `None` picks the precision's default lane width.
    pub parallel_factor: Option<usize>,
    pub channel_capacity: usize,
    pub hard_wta: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            parallel_factor: None,
            channel_capacity: crate::pipeline::DEFAULT_CHANNEL_CAPACITY,
            hard_wta: false,
        }
    }
}

/// Evaluates `net` on `test` through the inference pipeline.
pub fn evaluate_pipelined(
    net: &NetworkState,
    test: &Dataset,
    mode: PrecisionMode,
    settings: EvalSettings,
) -> Result<(Evaluation, Vec<crate::pipeline::StageCounters>)> {
    let mut spec = PipelineSpec::infer(mode);
    spec.channel_capacity = settings.channel_capacity;
    if let Some(f) = settings.parallel_factor {
        spec.parallel_factor = f;
    }
    spec.hard_wta = settings.hard_wta;
    build_pipeline(net, PipelineKind::Infer, spec)?.evaluate(test)
}

/// Trains every structural variant on `train` and evaluates it on `test` at
/// each sweep precision. Relative latency is normalized to the row that
/// matches the base configuration, or the first row if none does.
pub fn run_sweep(
    base: &NetworkConfig,
    train: &Dataset,
    test: &Dataset,
    spec: &SweepSpec,
    settings: EvalSettings,
    on_row: &mut dyn FnMut(&BenchRow),
) -> Result<BenchReport> {
    let variants = spec.variants(base)?;
    let precisions = spec.precisions(base);
    let mut report = BenchReport::default();
    let mut reference = None;
    for (id, cfg) in variants {
        let t = Instant::now();
        let mut net = build_network(&cfg)?;
        let params = TrainingParams::new(&cfg, train.len())?;
        train_full(&mut net, train, None, &params, &mut |_| {})?;
        let train_ms = t.elapsed().as_secs_f64() * 1e3;
        for &mode in &precisions {
            let t = Instant::now();
            let (eval, _) = evaluate_pipelined(&net, test, mode, settings)?;
            let wall_ms = train_ms + t.elapsed().as_secs_f64() * 1e3;
            let row = BenchRow::from_evaluation(id.clone(), &cfg, &eval, wall_ms);
            if reference.is_none() && cfg == *base && mode == base.precision {
                reference = Some(report.rows.len());
            }
            on_row(&row);
            report.rows.push(row);
        }
    }
    report.normalize_to(reference.unwrap_or(0));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_axes_in_order() {
        let s: SweepSpec = "hcu=30,10; links=320/80 ;precision=fp32,mixed".parse().unwrap();
        assert_eq!(
            s.axes,
            vec![
                SweepAxis::Hcu(vec![30, 10]),
                SweepAxis::Links(vec![(320, 80)]),
                SweepAxis::Precision(vec![PrecisionMode::FP32, PrecisionMode::MIXED]),
            ]
        );
        let base = NetworkConfig::pneumonia();
        let v = s.variants(&base).unwrap();
        let ids: Vec<&str> = v.iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, ["hcu=30", "hcu=10", "links=320/80"]);
        assert_eq!(v[0].1, base);
        assert_eq!(v[1].1.n_hidden_hcu, 10);
    }

    #[test]
    fn rejects_bad_specs() {
        for s in ["", " ; ", "hcu=", "hcu=0", "foo=1", "hcu=1;hcu=2", "links=3", "precision=fp8", "hcu"] {
            assert!(matches!(s.parse::<SweepSpec>(), Err(Error::InvalidSweep(_))), "{s:?}");
        }
        let s: SweepSpec = "links=900/0".parse().unwrap();
        assert!(s.variants(&NetworkConfig::mnist()).is_err());
    }

    #[test]
    fn precision_only_sweep_uses_base() {
        let s: SweepSpec = "precision=fp16".parse().unwrap();
        let base = NetworkConfig::mnist();
        assert_eq!(s.variants(&base).unwrap(), vec![("base".to_string(), base.clone())]);
        assert_eq!(s.precisions(&base), vec![PrecisionMode::FP16]);
    }

    #[test]
    fn pneumonia_hcu_ops_drop() {
        let base = NetworkConfig::pneumonia();
        let small = NetworkConfig { n_hidden_hcu: 10, ..base.clone() };
        let drop = 1.0 - small.support_ops() as f64 / base.support_ops() as f64;
        assert!(drop >= 0.6, "{drop}");
    }

    fn tiny_data() -> Dataset {
        let px: Vec<f32> = (0..8 * 6).map(|i| ((i * 7) % 11) as f32 / 10.0).collect();
        Dataset::new(px, vec![0, 1, 0, 1, 1, 0], 8, 1, 2).unwrap()
    }

    fn tiny_cfg() -> NetworkConfig {
        NetworkConfig {
            n_input_hcu: 8,
            n_hidden_hcu: 2,
            hidden_mcu_per_hcu: 4,
            n_classes: 2,
            n_act: 3,
            n_sil: 2,
            n_replace: 1,
            epochs_unsup: 1,
            epochs_sup: 1,
            ..NetworkConfig::mnist()
        }
    }

    #[test]
    fn latency_counts() {
        let ds = tiny_data();
        let net = build_network(&tiny_cfg()).unwrap();
        let one = ds.take(1);
        let s = bench_latency(&net, &one, PrecisionMode::FP32, 1, 0).unwrap();
        assert_eq!(s.count, 1);
        assert_eq!(s.min_us, s.max_us);
        let s = bench_latency(&net, &ds, PrecisionMode::FP16, 5, 1).unwrap();
        assert_eq!(s.count, 30);
        assert!(s.p95_us >= s.median_us && s.min_us > 0.0);
        assert!(matches!(
            bench_latency(&net, &ds, PrecisionMode::FP32, 0, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn single_value_sweep_is_one_row() {
        let ds = tiny_data();
        let base = tiny_cfg();
        let spec: SweepSpec = "hcu=2".parse().unwrap();
        let r = run_sweep(&base, &ds, &ds, &spec, EvalSettings::default(), &mut |_| {}).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].relative_latency, 1.0);

        let mut net = build_network(&base).unwrap();
        let params = TrainingParams::new(&base, ds.len()).unwrap();
        train_full(&mut net, &ds, None, &params, &mut |_| {}).unwrap();
        let (e, _) = evaluate_pipelined(&net, &ds, PrecisionMode::FP32, EvalSettings::default()).unwrap();
        assert_eq!(r.rows[0].accuracy, e.accuracy());
        assert!(r.to_csv().starts_with(BENCH_CSV_HEADER));
        assert_eq!(r.to_csv().lines().count(), 2);
    }
}
