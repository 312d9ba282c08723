//! Train, tune and detect over a windowed stream with a static or dynamic
//! baseline, and score detections against known class boundaries.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hasher};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{SpectralExtractor, TimeSeriesWindow};
use crate::gan::{train_gan, GanModel, GanTrainConfig};
use crate::gaussian::{fit_1cg, quartiles_in_bins, JointGaussian, DEFAULT_SHRINKAGE};
use crate::reliability::{
    default_mchs_iterations, system_fails, tune_system, DetectionSystem, ElementId,
    PercentilePlan, Scorer, TuneConfig, Tuning,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    Static,
    Dynamic,
}

impl std::str::FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Self::Static),
            "dynamic" => Ok(Self::Dynamic),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub d_l: usize,
    pub t_l: usize,
    pub v_l: usize,
    pub beta: f64,
    pub mode: BaselineMode,
    pub gan: GanTrainConfig,
    /// `None` picks the default for `beta`.
    pub mchs_iterations: Option<usize>,
    pub seed: u64,
    pub shrinkage: f64,
    pub percentiles: PercentilePlan,
    pub shared_resistance: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            d_l: 1000,
            t_l: 100,
            v_l: 10,
            beta: 3.0,
            mode: BaselineMode::Dynamic,
            gan: GanTrainConfig::default(),
            mchs_iterations: None,
            seed: 0,
            shrinkage: DEFAULT_SHRINKAGE,
            percentiles: PercentilePlan::default(),
            shared_resistance: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_l < 4 || self.d_l % 2 != 0 {
            return Err(Error::invalid(format!("d_l must be even and at least 4, got {}", self.d_l)));
        }
        if self.t_l < 2 {
            return Err(Error::invalid(format!("t_l must be at least 2, got {}", self.t_l)));
        }
        if self.v_l < 2 {
            return Err(Error::invalid(format!("v_l must be at least 2, got {}", self.v_l)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.shrinkage >= 0.0) {
            return Err(Error::invalid("shrinkage must be non-negative"));
        }
        if let Some(n) = self.mchs_iterations {
            if n < 100 {
                return Err(Error::invalid(format!("mchs_iterations must be at least 100, got {n}")));
            }
        }
        self.percentiles.validate()?;
        self.gan.validate()
    }

    pub fn iterations(&self) -> usize {
        self.mchs_iterations.unwrap_or_else(|| default_mchs_iterations(self.beta))
    }

    /// Settings that determine a trained (untuned) baseline.
    fn training_signature(&self) -> String {
        serde_json::json!({
            "d_l": self.d_l,
            "t_l": self.t_l,
            "gan": self.gan,
            "seed": self.seed,
            "shrinkage": self.shrinkage,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRange {
    pub start: usize,
    pub end: usize,
}

impl WindowRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Learned models for one class, plus thresholds once tuned.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub class_ordinal: usize,
    pub gan: GanModel,
    pub gaussian: JointGaussian,
    pub system: Option<DetectionSystem>,
    pub training_windows: WindowRange,
    pub channels: usize,
    pub window_len: usize,
}

impl BaselineModel {
    pub fn scorer(&self) -> Result<Scorer<'_>> {
        Scorer::new(&self.gan, &self.gaussian, self.channels, self.window_len)
    }

    pub fn tuned_system(&self) -> Result<&DetectionSystem> {
        self.system
            .as_ref()
            .ok_or_else(|| Error::InvalidState("baseline has not been tuned".into()))
    }
}

#[derive(Debug)]
struct Trained {
    gan: GanModel,
    gaussian: JointGaussian,
}

/// Memoizes trained models by training data, start window and settings.
///
/// Training is seeded from the start window, so the same windows and
/// settings always give the same models and can be shared across runs.
#[derive(Debug, Default)]
pub struct TrainingCache {
    entries: HashMap<(String, usize, u64), Arc<Trained>>,
}

impl TrainingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn fingerprint(windows: &[TimeSeriesWindow]) -> u64 {
    let mut h = DefaultHasher::new();
    for w in windows {
        h.write_usize(w.index);
        for v in w.data() {
            h.write_u64(v.to_bits());
        }
    }
    h.finish()
}

fn check_windows(windows: &[TimeSeriesWindow], d_l: usize) -> Result<usize> {
    let first = windows
        .first()
        .ok_or_else(|| Error::invalid("no windows supplied"))?;
    let channels = first.channels();
    for w in windows {
        if w.len() != d_l || w.channels() != channels {
            return Err(Error::invalid(format!(
                "window {} is {}x{}, expected {channels}x{d_l}",
                w.index,
                w.channels(),
                w.len()
            )));
        }
    }
    Ok(channels)
}

/// Feature I rows and bin-unit Feature II rows for a set of windows.
fn feature_matrices(
    windows: &[TimeSeriesWindow],
    extractor: &SpectralExtractor,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let d_l = extractor.window_len();
    let mut f1_rows = Vec::with_capacity(windows.len());
    let mut f2_rows = Vec::with_capacity(windows.len());
    for w in windows {
        let (f1, f2) = extractor.features(w)?;
        f1_rows.push(f1.into_vec());
        f2_rows.push(quartiles_in_bins(f2.as_slice(), d_l));
    }
    let to_matrix = |rows: Vec<Vec<f64>>| {
        let width = rows[0].len();
        Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("rows of equal width")
    };
    Ok((to_matrix(f1_rows), to_matrix(f2_rows)))
}

/// Trains the GAN and the joint Gaussian on exactly `t_l` windows.
pub fn train_baseline(
    windows: &[TimeSeriesWindow],
    cfg: &EngineConfig,
    class_ordinal: usize,
) -> Result<BaselineModel> {
    train_baseline_cached(windows, cfg, class_ordinal, &mut TrainingCache::new())
}

pub fn train_baseline_cached(
    windows: &[TimeSeriesWindow],
    cfg: &EngineConfig,
    class_ordinal: usize,
    cache: &mut TrainingCache,
) -> Result<BaselineModel> {
    cfg.validate()?;
    if windows.len() != cfg.t_l {
        return Err(Error::invalid(format!(
            "training needs exactly {} windows, got {}",
            cfg.t_l,
            windows.len()
        )));
    }
    let channels = check_windows(windows, cfg.d_l)?;
    let start = windows[0].index;
    let key = (cfg.training_signature(), start, fingerprint(windows));
    let trained = match cache.entries.get(&key) {
        Some(t) => Arc::clone(t),
        None => {
            let extractor = SpectralExtractor::new(cfg.d_l)?;
            let (f1, f2) = feature_matrices(windows, &extractor)?;
            let mut gan_cfg = cfg.gan.clone();
            gan_cfg.seed = derive_seed(cfg.seed, start as u64);
            log::info!("training baseline on windows {start}..{}", start + cfg.t_l);
            let gan = train_gan(f1.view(), &gan_cfg)?;
            let gaussian = fit_1cg(f2.view(), cfg.shrinkage)?;
            let t = Arc::new(Trained { gan, gaussian });
            cache.entries.insert(key, Arc::clone(&t));
            t
        }
    };
    Ok(BaselineModel {
        class_ordinal,
        gan: trained.gan.clone(),
        gaussian: trained.gaussian.clone(),
        system: None,
        training_windows: WindowRange {
            start,
            end: start + cfg.t_l,
        },
        channels,
        window_len: cfg.d_l,
    })
}

/// Tunes thresholds for `baseline` at the configured `beta` and `v_l`.
pub fn tune(baseline: &mut BaselineModel, cfg: &EngineConfig) -> Result<Tuning> {
    cfg.validate()?;
    let tune_cfg = TuneConfig {
        beta_system: cfg.beta,
        v_l: cfg.v_l,
        iterations: cfg.iterations(),
        seed: derive_seed(derive_seed(cfg.seed, baseline.training_windows.start as u64), 1),
        percentiles: cfg.percentiles,
        shared_resistance: cfg.shared_resistance,
    };
    let tuning = tune_system(&baseline.scorer()?, &tune_cfg)?;
    baseline.system = Some(tuning.system.clone());
    Ok(tuning)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub iteration: usize,
    pub windows: WindowRange,
    pub baseline: usize,
    pub failed: Vec<ElementId>,
    pub loads: [f64; 3],
    pub thresholds: [f64; 3],
    /// Filled in by [`evaluate`].
    pub false_alarm: Option<bool>,
}

/// One detection iteration, kept for score-versus-threshold traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub windows: WindowRange,
    pub baseline: usize,
    pub loads: [f64; 3],
    pub thresholds: [f64; 3],
    pub alarm: bool,
}

/// Scores `v_l` windows against a tuned baseline.
pub fn detect_iteration(
    baseline: &BaselineModel,
    windows: &[TimeSeriesWindow],
    iteration: usize,
) -> Result<(TraceRow, Option<AlarmEvent>)> {
    let system = baseline.tuned_system()?;
    if windows.len() != system.v_l {
        return Err(Error::invalid(format!(
            "detection needs {} windows, got {}",
            system.v_l,
            windows.len()
        )));
    }
    let channels = check_windows(windows, baseline.window_len)?;
    if channels != baseline.channels {
        return Err(Error::invalid(format!(
            "windows have {channels} channels, baseline expects {}",
            baseline.channels
        )));
    }
    let scorer = baseline.scorer()?;
    let extractor = SpectralExtractor::new(baseline.window_len)?;
    let mut f1_rows = Vec::with_capacity(windows.len() * baseline.gan.feature_len());
    let mut gaussian_scores = Vec::with_capacity(windows.len());
    for w in windows {
        let (f1, f2) = extractor.features(w)?;
        gaussian_scores.push(scorer.gaussian_score(f2.as_slice())?);
        f1_rows.extend(f1.into_vec());
    }
    let f1 = Array2::from_shape_vec((windows.len(), baseline.gan.feature_len()), f1_rows)
        .expect("feature length checked by scorer");
    let gan_scores = scorer.gan_scores(f1.view())?;
    let loads = system.loads(&gan_scores, &gaussian_scores);
    let failed = system.failed_elements(&loads);
    let alarm = system_fails(&failed);
    let range = WindowRange {
        start: windows[0].index,
        end: windows[windows.len() - 1].index + 1,
    };
    let row = TraceRow {
        iteration,
        windows: range,
        baseline: baseline.class_ordinal,
        loads,
        thresholds: system.thresholds(),
        alarm,
    };
    let event = alarm.then(|| AlarmEvent {
        iteration,
        windows: range,
        baseline: baseline.class_ordinal,
        failed,
        loads,
        thresholds: system.thresholds(),
        false_alarm: None,
    });
    Ok((row, event))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub ordinal: usize,
    pub training_windows: WindowRange,
    pub thresholds: Option<[f64; 3]>,
    /// False when the stream ended before `t_l` training windows were available.
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "outcome")]
pub enum ClassOutcome {
    DetectedOnTime,
    DetectedWithDelay { iterations: usize },
    Undetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub boundaries: Vec<usize>,
    pub class_outcomes: Vec<ClassOutcome>,
    pub false_alarms: usize,
    pub false_alarm_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub v_l: usize,
    pub iterations: usize,
    pub alarms: Vec<AlarmEvent>,
    pub baselines: Vec<BaselineRecord>,
    pub trace: Vec<TraceRow>,
    pub evaluation: Option<Evaluation>,
}

/// Window indices at which each novel class starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    boundaries: Vec<usize>,
}

impl GroundTruth {
    pub fn new(boundaries: Vec<usize>, t_l: usize) -> Result<Self> {
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("class boundaries must be strictly increasing"));
        }
        if let Some(&first) = boundaries.first() {
            if first < t_l {
                return Err(Error::invalid(format!(
                    "first class boundary {first} lies inside the training windows (t_l = {t_l})"
                )));
            }
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }
}

fn record(baseline: &BaselineModel) -> BaselineRecord {
    BaselineRecord {
        ordinal: baseline.class_ordinal,
        training_windows: baseline.training_windows,
        thresholds: baseline.system.as_ref().map(|s| s.thresholds()),
        complete: true,
    }
}

/// Tracks which class the next true alarm must belong to.
struct Attribution<'a> {
    boundaries: &'a [usize],
    v_l: usize,
    pending: usize,
    retrains: bool,
}

impl Attribution<'_> {
    /// Class index a true alarm at batch start `start` belongs to, or `None`
    /// for a false alarm.
    fn classify(&mut self, start: usize) -> Option<usize> {
        let earliest = |j: usize| self.boundaries[j].saturating_sub(self.v_l);
        let floor = if self.retrains { self.pending } else { 0 };
        if floor >= self.boundaries.len() || start < earliest(floor) {
            return None;
        }
        let class = (0..self.boundaries.len())
            .rev()
            .find(|&j| earliest(j) <= start)
            .expect("floor class qualifies");
        self.pending = self.pending.max(class + 1);
        Some(class)
    }
}

fn run_stream(
    windows: &[TimeSeriesWindow],
    cfg: &EngineConfig,
    mode: BaselineMode,
    truth: Option<&GroundTruth>,
    cache: &mut TrainingCache,
) -> Result<DetectionReport> {
    cfg.validate()?;
    check_windows(windows, cfg.d_l)?;
    if windows.len() < cfg.t_l + cfg.v_l {
        return Err(Error::InsufficientData {
            needed: cfg.t_l + cfg.v_l,
            available: windows.len(),
        });
    }
    let retrains = mode == BaselineMode::Dynamic;
    let mut attribution = truth.map(|t| Attribution {
        boundaries: t.boundaries(),
        v_l: cfg.v_l,
        pending: 0,
        retrains,
    });

    let mut baseline = train_baseline_cached(&windows[..cfg.t_l], cfg, 0, cache)?;
    tune(&mut baseline, cfg)?;
    let mut baselines = vec![record(&baseline)];
    let mut alarms = Vec::new();
    let mut trace = Vec::new();
    let mut pos = cfg.t_l;
    while pos + cfg.v_l <= windows.len() {
        let iteration = trace.len();
        let batch = &windows[pos..pos + cfg.v_l];
        let (row, event) = detect_iteration(&baseline, batch, iteration)?;
        trace.push(row);
        pos += cfg.v_l;
        let Some(event) = event else { continue };
        let start = event.windows.start;
        alarms.push(event);
        if !retrains {
            continue;
        }
        if let Some(a) = attribution.as_mut() {
            if a.classify(start).is_none() {
                continue;
            }
        }
        let ordinal = baseline.class_ordinal + 1;
        if pos + cfg.t_l > windows.len() {
            baselines.push(BaselineRecord {
                ordinal,
                training_windows: WindowRange {
                    start: pos,
                    end: windows.len(),
                },
                thresholds: None,
                complete: false,
            });
            break;
        }
        baseline = train_baseline_cached(&windows[pos..pos + cfg.t_l], cfg, ordinal, cache)?;
        tune(&mut baseline, cfg)?;
        baselines.push(record(&baseline));
        pos += cfg.t_l;
    }

    let mut report = DetectionReport {
        v_l: cfg.v_l,
        iterations: trace.len(),
        alarms,
        baselines,
        trace,
        evaluation: None,
    };
    if let Some(t) = truth {
        evaluate(&mut report, t, mode);
    }
    Ok(report)
}

/// Train and tune once on the first `t_l` windows, then monitor the rest in
/// consecutive batches of `v_l`.
pub fn run_static(
    windows: &[TimeSeriesWindow],
    cfg: &EngineConfig,
    truth: Option<&GroundTruth>,
    cache: &mut TrainingCache,
) -> Result<DetectionReport> {
    run_stream(windows, cfg, BaselineMode::Static, truth, cache)
}

/// Like [`run_static`], but each alarm starts a new baseline trained on the
/// `t_l` windows that follow the alarming batch. Those windows are not
/// monitored. With ground truth, alarms judged false keep the current
/// baseline.
pub fn run_dynamic(
    windows: &[TimeSeriesWindow],
    cfg: &EngineConfig,
    truth: Option<&GroundTruth>,
    cache: &mut TrainingCache,
) -> Result<DetectionReport> {
    run_stream(windows, cfg, BaselineMode::Dynamic, truth, cache)
}

pub fn run(
    windows: &[TimeSeriesWindow],
    cfg: &EngineConfig,
    truth: Option<&GroundTruth>,
    cache: &mut TrainingCache,
) -> Result<DetectionReport> {
    run_stream(windows, cfg, cfg.mode, truth, cache)
}

/// Labels alarms true or false and classifies each novel class.
///
/// An alarm is false when its batch starts more than `v_l` windows before the
/// start of the class it could belong to. In dynamic mode that is the first
/// class not yet detected; in static mode every novel class counts. A class
/// is detected on time when its first true alarm comes from the first
/// detection iteration that reaches into the class; the delay counts the
/// iterations in between.
pub fn evaluate(report: &mut DetectionReport, truth: &GroundTruth, mode: BaselineMode) {
    let mut attribution = Attribution {
        boundaries: truth.boundaries(),
        v_l: report.v_l,
        pending: 0,
        retrains: mode == BaselineMode::Dynamic,
    };
    let mut outcomes = vec![ClassOutcome::Undetected; truth.boundaries().len()];
    let mut false_alarms = 0;
    for alarm in &mut report.alarms {
        let start = alarm.windows.start;
        match attribution.classify(start) {
            None => {
                alarm.false_alarm = Some(true);
                false_alarms += 1;
            }
            Some(class) => {
                alarm.false_alarm = Some(false);
                if outcomes[class] == ClassOutcome::Undetected {
                    let boundary = truth.boundaries()[class];
                    let delay = report
                        .trace
                        .iter()
                        .filter(|r| r.windows.end > boundary && r.windows.start < start)
                        .count();
                    outcomes[class] = if delay == 0 {
                        ClassOutcome::DetectedOnTime
                    } else {
                        ClassOutcome::DetectedWithDelay { iterations: delay }
                    };
                }
            }
        }
    }
    let ratio = if report.iterations == 0 {
        0.0
    } else {
        false_alarms as f64 / report.iterations as f64
    };
    report.evaluation = Some(Evaluation {
        boundaries: truth.boundaries().to_vec(),
        class_outcomes: outcomes,
        false_alarms,
        false_alarm_ratio: ratio,
    });
}

/// Monitors `windows` against an already tuned baseline without retraining.
pub fn detect_stream(baseline: &BaselineModel, windows: &[TimeSeriesWindow]) -> Result<DetectionReport> {
    let system = baseline.tuned_system()?;
    let v_l = system.v_l;
    let mut alarms = Vec::new();
    let mut trace = Vec::new();
    for batch in windows.chunks_exact(v_l) {
        let (row, event) = detect_iteration(baseline, batch, trace.len())?;
        trace.push(row);
        alarms.extend(event);
    }
    Ok(DetectionReport {
        v_l,
        iterations: trace.len(),
        alarms,
        baselines: vec![record(baseline)],
        trace,
        evaluation: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamConfig;
    use crate::reliability::{LimitStateElement, ReliabilityTargets, ScoreSource};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn tone_windows(count: usize, d_l: usize, freq_bin: f64, first: usize, seed: u64) -> Vec<TimeSeriesWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        (0..count)
            .map(|k| {
                let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let data = Array2::from_shape_fn((2, d_l), |(ch, t)| {
                    let w = std::f64::consts::TAU * freq_bin * t as f64 / d_l as f64;
                    0.04 * (1.0 + ch as f64) * (w + phase).sin() + noise.sample(&mut rng)
                });
                TimeSeriesWindow::new(first + k, data).unwrap()
            })
            .collect()
    }

    fn small_cfg(t_l: usize, v_l: usize) -> EngineConfig {
        EngineConfig {
            d_l: 32,
            t_l,
            v_l,
            beta: 3.0,
            mode: BaselineMode::Static,
            gan: GanTrainConfig {
                epochs: 40,
                latent_dim: 4,
                generator_hidden: vec![16],
                discriminator_hidden: vec![16],
                seed: 0,
                optimizer: AdamConfig {
                    lr: 2e-3,
                    ..AdamConfig::default()
                },
            },
            mchs_iterations: Some(200),
            seed: 3,
            ..EngineConfig::default()
        }
    }

    fn fixed_system(thresholds: [f64; 3], v_l: usize) -> DetectionSystem {
        let plan = PercentilePlan::default();
        DetectionSystem {
            elements: std::array::from_fn(|k| LimitStateElement {
                id: ElementId::ALL[k],
                threshold: thresholds[k],
                source: [ScoreSource::Gan, ScoreSource::Gaussian, ScoreSource::Gan][k],
                main_percentile: plan.main[k],
                analogous_percentile: plan.analogous[k],
            }),
            targets: ReliabilityTargets {
                beta_system: 3.0,
                beta_element: 3.0,
                p_fail_element: 0.00135,
            },
            v_l,
            iterations: 100,
            seed: 0,
            shared_resistance: false,
        }
    }

    #[test]
    fn config_validation() {
        assert!(small_cfg(10, 4).validate().is_ok());
        assert!(small_cfg(1, 4).validate().is_err());
        assert!(small_cfg(10, 1).validate().is_err());
        let mut c = small_cfg(10, 4);
        c.beta = 0.0;
        assert!(c.validate().is_err());
        c = small_cfg(10, 4);
        c.d_l = 31;
        assert!(c.validate().is_err());
        assert_eq!("dynamic".parse::<BaselineMode>().unwrap(), BaselineMode::Dynamic);
        assert!("both".parse::<BaselineMode>().is_err());
    }

    #[test]
    fn training_dimensions_and_determinism() {
        let cfg = small_cfg(12, 4);
        let w = tone_windows(12, 32, 5.0, 0, 1);
        let a = train_baseline(&w, &cfg, 0).unwrap();
        assert_eq!(a.gan.feature_len(), 2 * 16);
        assert_eq!(a.gaussian.dim(), 6);
        let b = train_baseline(&w, &cfg, 0).unwrap();
        assert_eq!(a, b);
        assert!(train_baseline(&w[..11], &cfg, 0).is_err());
    }

    #[test]
    fn cache_reuses_models() {
        let cfg = small_cfg(12, 4);
        let w = tone_windows(12, 32, 5.0, 0, 1);
        let mut cache = TrainingCache::new();
        let a = train_baseline_cached(&w, &cfg, 0, &mut cache).unwrap();
        let b = train_baseline_cached(&w, &cfg, 0, &mut cache).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(a, b);
        assert_eq!(a, train_baseline(&w, &cfg, 0).unwrap());
    }

    fn baseline_with(thresholds: [f64; 3], v_l: usize) -> BaselineModel {
        let cfg = small_cfg(12, v_l);
        let w = tone_windows(12, 32, 5.0, 0, 1);
        let mut b = train_baseline(&w, &cfg, 0).unwrap();
        b.system = Some(fixed_system(thresholds, v_l));
        b
    }

    #[test]
    fn detect_iteration_topology() {
        let w = tone_windows(4, 32, 5.0, 20, 2);
        let quiet = baseline_with([1e9, 1e9, 1e9], 4);
        let (row, event) = detect_iteration(&quiet, &w, 0).unwrap();
        assert!(event.is_none() && !row.alarm);

        let series = baseline_with([-1e9, 1e9, 1e9], 4);
        let (_, event) = detect_iteration(&series, &w, 0).unwrap();
        assert_eq!(event.unwrap().failed, vec![ElementId::I]);

        let one_parallel = baseline_with([1e9, -1e9, 1e9], 4);
        assert!(detect_iteration(&one_parallel, &w, 0).unwrap().1.is_none());

        let both_parallel = baseline_with([1e9, -1e9, -1e9], 4);
        let event = detect_iteration(&both_parallel, &w, 0).unwrap().1.unwrap();
        assert_eq!(event.failed, vec![ElementId::II, ElementId::III]);
        assert_eq!(event.windows, WindowRange { start: 20, end: 24 });

        assert!(detect_iteration(&quiet, &w[..3], 0).is_err());
    }

    #[test]
    fn untuned_baseline_cannot_detect() {
        let cfg = small_cfg(12, 4);
        let w = tone_windows(12, 32, 5.0, 0, 1);
        let b = train_baseline(&w, &cfg, 0).unwrap();
        assert!(matches!(detect_iteration(&b, &w[..4], 0), Err(Error::InvalidState(_))));
    }

    fn report_with_alarms(starts: &[usize], v_l: usize, first: usize, total: usize) -> DetectionReport {
        let trace: Vec<TraceRow> = (0..(total - first) / v_l)
            .map(|k| {
                let s = first + k * v_l;
                TraceRow {
                    iteration: k,
                    windows: WindowRange { start: s, end: s + v_l },
                    baseline: 0,
                    loads: [0.0; 3],
                    thresholds: [0.0; 3],
                    alarm: starts.contains(&s),
                }
            })
            .collect();
        let alarms = trace
            .iter()
            .filter(|r| r.alarm)
            .map(|r| AlarmEvent {
                iteration: r.iteration,
                windows: r.windows,
                baseline: 0,
                failed: vec![ElementId::I],
                loads: [0.0; 3],
                thresholds: [0.0; 3],
                false_alarm: None,
            })
            .collect();
        DetectionReport {
            v_l,
            iterations: trace.len(),
            alarms,
            baselines: vec![],
            trace,
            evaluation: None,
        }
    }

    #[test]
    fn evaluation_rules() {
        let truth = GroundTruth::new(vec![100, 200], 50).unwrap();
        // exactly at the boundary: true and on time
        let mut r = report_with_alarms(&[100], 10, 50, 300);
        evaluate(&mut r, &truth, BaselineMode::Dynamic);
        let e = r.evaluation.as_ref().unwrap();
        assert_eq!(e.class_outcomes[0], ClassOutcome::DetectedOnTime);
        assert_eq!(e.class_outcomes[1], ClassOutcome::Undetected);
        assert_eq!(r.alarms[0].false_alarm, Some(false));

        // starting v_l + 1 windows early: false
        let mut r = report_with_alarms(&[89], 10, 49, 300);
        evaluate(&mut r, &truth, BaselineMode::Dynamic);
        assert_eq!(r.alarms[0].false_alarm, Some(true));
        assert_eq!(r.evaluation.as_ref().unwrap().false_alarms, 1);

        // two iterations late
        let mut r = report_with_alarms(&[60, 120, 230], 10, 50, 300);
        evaluate(&mut r, &truth, BaselineMode::Dynamic);
        let e = r.evaluation.as_ref().unwrap();
        assert_eq!(e.false_alarms, 1);
        assert_eq!(e.class_outcomes[0], ClassOutcome::DetectedWithDelay { iterations: 2 });
        assert_eq!(e.class_outcomes[1], ClassOutcome::DetectedWithDelay { iterations: 3 });
        assert!((e.false_alarm_ratio - 1.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn static_evaluation_accepts_any_alarm_inside_novel_classes() {
        let truth = GroundTruth::new(vec![100, 200], 50).unwrap();
        let mut r = report_with_alarms(&[100, 140, 150, 200], 10, 50, 300);
        evaluate(&mut r, &truth, BaselineMode::Static);
        let e = r.evaluation.as_ref().unwrap();
        assert_eq!(e.false_alarms, 0);
        assert_eq!(e.class_outcomes, vec![ClassOutcome::DetectedOnTime; 2]);

        let mut d = report_with_alarms(&[100, 140, 150, 200], 10, 50, 300);
        evaluate(&mut d, &truth, BaselineMode::Dynamic);
        assert_eq!(d.evaluation.as_ref().unwrap().false_alarms, 2);
    }

    #[test]
    fn false_alarm_ratio_arithmetic() {
        let starts: Vec<usize> = vec![0, 10, 20];
        let mut r = report_with_alarms(&starts, 10, 0, 18180);
        let truth = GroundTruth::new(vec![18000], 0).unwrap();
        evaluate(&mut r, &truth, BaselineMode::Dynamic);
        let e = r.evaluation.unwrap();
        assert_eq!(r.iterations, 1818);
        assert!((e.false_alarm_ratio - 0.00165).abs() < 1e-5);
    }

    #[test]
    fn ground_truth_validation() {
        assert!(GroundTruth::new(vec![10, 10], 5).is_err());
        assert!(GroundTruth::new(vec![4, 10], 5).is_err());
        assert!(GroundTruth::new(vec![5, 10], 5).is_ok());
    }

    #[test]
    fn static_and_dynamic_runs() {
        let cfg = small_cfg(12, 4);
        let mut w = tone_windows(30, 32, 5.0, 0, 4);
        w.extend(tone_windows(30, 32, 11.0, 30, 5));
        let mut cache = TrainingCache::new();
        let s = run_static(&w, &cfg, None, &mut cache).unwrap();
        assert_eq!(s.iterations, (60 - 12) / 4);
        assert_eq!(s.baselines.len(), 1);
        let again = run_static(&w, &cfg, None, &mut cache).unwrap();
        assert_eq!(s, again);

        let d = run_dynamic(&w, &cfg, None, &mut cache).unwrap();
        assert_eq!(d.baselines.len(), d.alarms.len() + 1);
        if d.alarms.is_empty() {
            assert_eq!(d, s);
        }
        for a in &d.alarms {
            assert!(system_fails(&a.failed));
        }
        // every retrained baseline starts right after its alarming batch
        for (a, b) in d.alarms.iter().zip(&d.baselines[1..]) {
            assert_eq!(b.training_windows.start, a.windows.end);
        }
    }

    #[test]
    fn short_stream_is_rejected() {
        let cfg = small_cfg(12, 4);
        let w = tone_windows(15, 32, 5.0, 0, 4);
        assert!(matches!(
            run_static(&w, &cfg, None, &mut TrainingCache::new()),
            Err(Error::InsufficientData { .. })
        ));
    }
}
