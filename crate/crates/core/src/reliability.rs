//! Limit-state detection system and threshold tuning by Monte Carlo
//! histogram sampling over generator output.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::feature_ii_from_feature_i;
use crate::gan::GanModel;
use crate::gaussian::{fit_gmm2, quartiles_in_bins, JointGaussian};
use crate::rng::substream;
use crate::stats::{normal_quantile, normal_sf, percentile, percentile_sorted};

/// `T − S`; negative means the element fails.
pub fn limit_state(threshold: f64, load: f64) -> f64 {
    threshold - load
}

/// An element fails only when its load strictly exceeds the threshold.
pub fn element_fails(threshold: f64, load: f64) -> bool {
    limit_state(threshold, load) < 0.0
}

/// Reliability of element I in series with the parallel pair II, III.
pub fn system_reliability(r1: f64, r2: f64, r3: f64) -> Result<f64> {
    for r in [r1, r2, r3] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::invalid(format!("reliability {r} outside [0, 1]")));
        }
    }
    Ok(r1 * (r2 + r3 - r2 * r3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTargets {
    pub beta_system: f64,
    pub beta_element: f64,
    pub p_fail_element: f64,
}

/// Equal element reliabilities meeting the system index `beta_system`.
pub fn element_beta_from_system(beta_system: f64) -> Result<ReliabilityTargets> {
    if !(beta_system > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta_system}")));
    }
    let mut t = element_targets_from_failure(normal_sf(beta_system))?;
    t.beta_system = beta_system;
    Ok(t)
}

/// Same solve starting from a system failure probability.
///
/// With element failure probability `q`, the system fails with probability
/// `q + q² − q³`; that cubic is increasing on `[0, 1]` and is bisected in `q`
/// directly so small probabilities keep full relative precision.
pub fn element_targets_from_failure(p_system: f64) -> Result<ReliabilityTargets> {
    if !(p_system > 0.0 && p_system < 1.0) {
        return Err(Error::invalid(format!(
            "system failure probability {p_system} outside (0, 1)"
        )));
    }
    let f = |q: f64| q + q * q - q * q * q - p_system;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let q = 0.5 * (lo + hi);
    assert!(q > 0.0 && q < 1.0, "no element root for {p_system}");
    Ok(ReliabilityTargets {
        beta_system: -normal_quantile(p_system),
        beta_element: -normal_quantile(q),
        p_fail_element: q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElementId {
    I,
    II,
    III,
}

impl ElementId {
    pub const ALL: [ElementId; 3] = [ElementId::I, ElementId::II, ElementId::III];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for ElementId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ElementId::I => "I",
            ElementId::II => "II",
            ElementId::III => "III",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSource {
    Gan,
    Gaussian,
}

/// Percentiles (in `[0, 100]`) used to turn a batch of scores into loads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentilePlan {
    /// Applied to real windows during detection.
    pub main: [f64; 3],
    /// Applied to generated windows during tuning.
    pub analogous: [f64; 3],
}

impl Default for PercentilePlan {
    fn default() -> Self {
        Self {
            main: [20.0, 50.0, 50.0],
            analogous: [80.0, 50.0, 50.0],
        }
    }
}

impl PercentilePlan {
    pub fn validate(&self) -> Result<()> {
        if self
            .main
            .iter()
            .chain(&self.analogous)
            .all(|p| *p > 0.0 && *p < 100.0)
        {
            Ok(())
        } else {
            Err(Error::invalid("percentiles must lie in (0, 100)"))
        }
    }
}

const SOURCES: [ScoreSource; 3] = [ScoreSource::Gan, ScoreSource::Gaussian, ScoreSource::Gan];

/// Loads `[I, II, III]` from one batch of scores.
pub fn loads_from_scores(gan: &[f64], gaussian: &[f64], percentiles: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (k, source) in SOURCES.iter().enumerate() {
        let scores = match source {
            ScoreSource::Gan => gan,
            ScoreSource::Gaussian => gaussian,
        };
        out[k] = percentile(scores, percentiles[k]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitStateElement {
    pub id: ElementId,
    pub threshold: f64,
    pub source: ScoreSource,
    pub main_percentile: f64,
    pub analogous_percentile: f64,
}

/// Element I in series with the parallel pair II, III.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSystem {
    pub elements: [LimitStateElement; 3],
    pub targets: ReliabilityTargets,
    pub v_l: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Element III reuses element I's threshold.
    pub shared_resistance: bool,
}

impl DetectionSystem {
    pub fn thresholds(&self) -> [f64; 3] {
        self.elements.map(|e| e.threshold)
    }

    pub fn main_percentiles(&self) -> [f64; 3] {
        self.elements.map(|e| e.main_percentile)
    }

    pub fn failed_elements(&self, loads: &[f64; 3]) -> Vec<ElementId> {
        self.elements
            .iter()
            .zip(loads)
            .filter(|(e, &s)| element_fails(e.threshold, s))
            .map(|(e, _)| e.id)
            .collect()
    }

    /// Main-system loads for a batch of real-window scores.
    pub fn loads(&self, gan: &[f64], gaussian: &[f64]) -> [f64; 3] {
        loads_from_scores(gan, gaussian, self.main_percentiles())
    }
}

/// System failure for a set of failed elements.
pub fn system_fails(failed: &[ElementId]) -> bool {
    failed.contains(&ElementId::I)
        || (failed.contains(&ElementId::II) && failed.contains(&ElementId::III))
}

/// One pass of histogram cleaning that removed the upper component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalRound {
    pub round: usize,
    pub lower_mean: f64,
    pub upper_mean: f64,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadHistogram {
    pub element: ElementId,
    pub samples: Vec<f64>,
    pub cleaned: bool,
    pub removal_log: Vec<RemovalRound>,
}

impl LoadHistogram {
    pub fn new(element: ElementId, samples: Vec<f64>) -> Self {
        Self {
            element,
            samples,
            cleaned: false,
            removal_log: Vec::new(),
        }
    }
}

/// The two scoring models of a baseline plus the window geometry they expect.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    gan: &'a GanModel,
    gaussian: &'a JointGaussian,
    channels: usize,
    window_len: usize,
}

impl<'a> Scorer<'a> {
    pub fn new(
        gan: &'a GanModel,
        gaussian: &'a JointGaussian,
        channels: usize,
        window_len: usize,
    ) -> Result<Self> {
        if gan.feature_len() != channels * (window_len / 2) {
            return Err(Error::invalid(format!(
                "GAN expects {} features, windows give {}",
                gan.feature_len(),
                channels * (window_len / 2)
            )));
        }
        if gaussian.dim() != 3 * channels {
            return Err(Error::invalid(format!(
                "joint Gaussian has dimension {}, expected {}",
                gaussian.dim(),
                3 * channels
            )));
        }
        if !(gaussian.training_mean_nl() > 0.0) {
            return Err(Error::DegenerateModel(format!(
                "training mean NL {} is not positive",
                gaussian.training_mean_nl()
            )));
        }
        Ok(Self {
            gan,
            gaussian,
            channels,
            window_len,
        })
    }

    pub fn gan(&self) -> &GanModel {
        self.gan
    }

    pub fn gan_scores(&self, f1_rows: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.gan.score_batch(f1_rows)
    }

    /// Joint-Gaussian score of a Feature II vector (fraction-of-Nyquist units).
    pub fn gaussian_score(&self, f2: &[f64]) -> Result<f64> {
        self.gaussian.score(&quartiles_in_bins(f2, self.window_len))
    }

    /// Joint-Gaussian score of a generated Feature I vector.
    pub fn gaussian_score_from_f1(&self, f1: &[f64]) -> Result<f64> {
        let f2 = feature_ii_from_feature_i(f1, self.channels, self.window_len)?;
        self.gaussian_score(f2.as_slice())
    }
}

/// Attempts to replace a generated vector whose spectrum is degenerate.
const MAX_RESAMPLES: usize = 100;
const CHUNK_ITERATIONS: usize = 256;

/// Monte Carlo loads: each iteration scores `v_l` generated windows and
/// records one analogous-percentile load per element. Iteration `k` draws
/// its latents from substream `k` of `seed`.
pub fn mchs_sample_loads(
    scorer: &Scorer<'_>,
    v_l: usize,
    iterations: usize,
    seed: u64,
    plan: &PercentilePlan,
) -> Result<[LoadHistogram; 3]> {
    if v_l < 2 {
        return Err(Error::invalid(format!("v_l must be at least 2, got {v_l}")));
    }
    if iterations < 100 {
        return Err(Error::invalid(format!(
            "at least 100 iterations required, got {iterations}"
        )));
    }
    plan.validate()?;
    let gan = scorer.gan;
    let mut samples: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(iterations));

    let mut start = 0;
    while start < iterations {
        let end = (start + CHUNK_ITERATIONS).min(iterations);
        let mut rngs: Vec<_> = (start..end).map(|k| substream(seed, k as u64)).collect();
        let latents: Vec<Array2<f64>> = rngs
            .iter_mut()
            .map(|rng| gan.sample_latent(v_l, rng))
            .collect();
        let views: Vec<_> = latents.iter().map(|z| z.view()).collect();
        let fake = gan.generate_from_latent(concatenate(Axis(0), &views).expect("equal widths").view())?;
        let mut gan_scores = scorer.gan_scores(fake.view())?;

        for (local, rng) in rngs.iter_mut().enumerate() {
            let rows = local * v_l..(local + 1) * v_l;
            let mut cg = Vec::with_capacity(v_l);
            for r in rows.clone() {
                let mut row = fake.row(r).to_vec();
                let mut attempts = 0;
                let score = loop {
                    match scorer.gaussian_score_from_f1(&row) {
                        Ok(s) => break s,
                        Err(Error::DegenerateSpectrum { .. }) if attempts < MAX_RESAMPLES => {
                            attempts += 1;
                            let z = gan.sample_latent(1, rng);
                            let f1 = gan.generate_from_latent(z.view())?;
                            row = f1.row(0).to_vec();
                            gan_scores[r] = scorer.gan_scores(f1.view())?[0];
                        }
                        Err(e) => return Err(e),
                    }
                };
                cg.push(score);
            }
            let loads = loads_from_scores(&gan_scores[rows], &cg, plan.analogous);
            for (k, load) in loads.into_iter().enumerate() {
                samples[k].push(load);
            }
        }
        start = end;
    }
    let [a, b, c] = samples;
    Ok([
        LoadHistogram::new(ElementId::I, a),
        LoadHistogram::new(ElementId::II, b),
        LoadHistogram::new(ElementId::III, c),
    ])
}

/// Iteratively fits a two-component mixture and discards the upper
/// component while its mean exceeds `round + 1` times the lower mean.
///
/// Cleaning also stops when fewer than four samples remain, the fit is
/// degenerate, or the lower mean is not positive (the ratio test is then
/// meaningless).
pub fn clean_histogram(h: &LoadHistogram) -> LoadHistogram {
    let mut samples = h.samples.clone();
    let mut log = h.removal_log.clone();
    let mut round = 1usize;
    while samples.len() >= 4 {
        let Ok(gmm) = fit_gmm2(&samples) else { break };
        let lower = gmm.components[0].mean;
        let upper = gmm.components[1].mean;
        if !(lower > 0.0 && upper / lower > (round + 1) as f64) {
            break;
        }
        let kept: Vec<f64> = samples.iter().copied().filter(|&x| gmm.assign(x) == 0).collect();
        if kept.is_empty() || kept.len() == samples.len() {
            break;
        }
        log.push(RemovalRound {
            round,
            lower_mean: lower,
            upper_mean: upper,
            removed: samples.len() - kept.len(),
        });
        samples = kept;
        round += 1;
    }
    LoadHistogram {
        element: h.element,
        samples,
        cleaned: true,
        removal_log: log,
    }
}

/// Empirical `1 − p_fail` quantile of the histogram.
pub fn select_threshold(h: &LoadHistogram, p_fail: f64) -> Result<f64> {
    if !(p_fail > 0.0 && p_fail < 1.0) {
        return Err(Error::invalid(format!("failure probability {p_fail} outside (0, 1)")));
    }
    if h.samples.is_empty() {
        return Err(Error::InvalidState(format!(
            "element {} histogram is empty",
            h.element
        )));
    }
    let mut sorted = h.samples.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, 100.0 * (1.0 - p_fail)))
}

/// Default Monte Carlo iteration count for a system reliability index.
pub fn default_mchs_iterations(beta_system: f64) -> usize {
    if beta_system <= 3.0 {
        5000
    } else {
        12500
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub beta_system: f64,
    pub v_l: usize,
    pub iterations: usize,
    pub seed: u64,
    pub percentiles: PercentilePlan,
    pub shared_resistance: bool,
}

/// Thresholds together with the histograms they were read from.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuning {
    pub system: DetectionSystem,
    pub raw: [LoadHistogram; 3],
    pub cleaned: [LoadHistogram; 3],
}

pub fn tune_system(scorer: &Scorer<'_>, cfg: &TuneConfig) -> Result<Tuning> {
    let targets = element_beta_from_system(cfg.beta_system)?;
    let raw = mchs_sample_loads(scorer, cfg.v_l, cfg.iterations, cfg.seed, &cfg.percentiles)?;
    let cleaned = [
        clean_histogram(&raw[0]),
        clean_histogram(&raw[1]),
        clean_histogram(&raw[2]),
    ];
    let mut thresholds = [0.0; 3];
    for (t, h) in thresholds.iter_mut().zip(&cleaned) {
        *t = select_threshold(h, targets.p_fail_element)?;
    }
    if cfg.shared_resistance {
        thresholds[2] = thresholds[0];
    }
    let elements = std::array::from_fn(|k| LimitStateElement {
        id: ElementId::ALL[k],
        threshold: thresholds[k],
        source: SOURCES[k],
        main_percentile: cfg.percentiles.main[k],
        analogous_percentile: cfg.percentiles.analogous[k],
    });
    Ok(Tuning {
        system: DetectionSystem {
            elements,
            targets,
            v_l: cfg.v_l,
            iterations: cfg.iterations,
            seed: cfg.seed,
            shared_resistance: cfg.shared_resistance,
        },
        raw,
        cleaned,
    })
}
