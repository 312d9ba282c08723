//! Generator/discriminator pair over Feature I vectors.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FEATURE_CAP;
use crate::nn::{init_weights, Activation, AdamConfig, AdamState, Gradients, LayerSpec, Mlp};
use crate::rng::{derive_seed, substream};

/// Clamp applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

pub const DEFAULT_LATENT_DIM: usize = 200;

const HIDDEN_LEAK: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub epochs: usize,
    #[serde(flatten)]
    pub optimizer: AdamConfig,
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            optimizer: AdamConfig::default(),
            latent_dim: DEFAULT_LATENT_DIM,
            generator_hidden: vec![512, 1024, 2048],
            discriminator_hidden: vec![1024, 512, 256],
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be at least 1"));
        }
        if self.generator_hidden.contains(&0) || self.discriminator_hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be non-zero"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::invalid("optimizer settings out of range"));
        }
        Ok(())
    }
}

/// Losses recorded after the discriminator and generator steps of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// Binary cross-entropy of the discriminator on real (1) and fake (0).
    pub discriminator: f64,
    /// Non-saturating generator loss `-mean(log D(G(z)))`.
    pub generator: f64,
    /// `-mean(log D(x) + log D(G(z)))`, kept for diagnostics only.
    pub discriminator_both_real: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    generator: Mlp,
    discriminator: Mlp,
    latent_dim: usize,
    loss_history: Vec<EpochLoss>,
    eps: f64,
}

fn hidden_stack(widths: &[usize], output: LayerSpec) -> Vec<LayerSpec> {
    widths
        .iter()
        .map(|&units| LayerSpec {
            units,
            activation: Activation::LeakyRelu(HIDDEN_LEAK),
        })
        .chain(std::iter::once(output))
        .collect()
}

fn latent_batch<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, dim), || rng.sample(StandardNormal))
}

fn add_into(acc: &mut Gradients, other: &Gradients) {
    for (a, b) in acc.weights.iter_mut().zip(&other.weights) {
        *a += b;
    }
    for (a, b) in acc.biases.iter_mut().zip(&other.biases) {
        *a += b;
    }
}

fn mean_ln(values: &Array2<f64>, f: impl Fn(f64) -> f64) -> f64 {
    values.iter().map(|&v| f(v).ln()).sum::<f64>() / values.len() as f64
}

/// Trains on the rows of `features` (each an `N·D_L/2` Feature I vector).
pub fn train_gan(features: ArrayView2<'_, f64>, cfg: &GanTrainConfig) -> Result<GanModel> {
    cfg.validate()?;
    let (rows, width) = features.dim();
    if rows == 0 || width == 0 {
        return Err(Error::invalid("empty training set"));
    }
    if rows < 2 {
        return Err(Error::invalid(format!("need at least 2 training vectors, got {rows}")));
    }
    if features.iter().any(|v| !(0.0..=FEATURE_CAP).contains(v)) {
        return Err(Error::InvalidData("training features must lie in [0, 10]".into()));
    }
    if let Some(&penultimate) = cfg.generator_hidden.last() {
        if penultimate > width {
            log::warn!(
                "generator penultimate width {penultimate} exceeds feature length {width}"
            );
        }
    }

    let eps = LOG_EPS;
    let mut generator = init_weights(
        cfg.latent_dim,
        &hidden_stack(
            &cfg.generator_hidden,
            LayerSpec {
                units: width,
                activation: Activation::ScaledSigmoid(FEATURE_CAP),
            },
        ),
        derive_seed(cfg.seed, 0),
    )?;
    let mut discriminator = init_weights(
        width,
        &hidden_stack(
            &cfg.discriminator_hidden,
            LayerSpec {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ),
        derive_seed(cfg.seed, 1),
    )?;
    let mut g_opt = AdamState::new(&generator, cfg.optimizer);
    let mut d_opt = AdamState::new(&discriminator, cfg.optimizer);
    let mut rng = substream(derive_seed(cfg.seed, 2), 0);
    let scale = 1.0 / rows as f64;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        // discriminator step
        let fake = generator.predict(latent_batch(rows, cfg.latent_dim, &mut rng).view())?;
        let (real_out, real_cache) = discriminator.forward(features)?;
        let (fake_out, fake_cache) = discriminator.forward(fake.view())?;
        let d_loss = -(mean_ln(&real_out, |o| o + eps) + mean_ln(&fake_out, |o| 1.0 - o + eps));
        let d_loss_both_real = -(mean_ln(&real_out, |o| o + eps) + mean_ln(&fake_out, |o| o + eps));
        // gradients are taken with respect to the output logit
        let real_grad = real_out.mapv(|o| -scale * (1.0 - o));
        let fake_grad = fake_out.mapv(|o| scale * o);
        let (mut d_grads, _) = discriminator.backward_from_pre_activation(&real_cache, real_grad.view())?;
        let (fake_grads, _) = discriminator.backward_from_pre_activation(&fake_cache, fake_grad.view())?;
        add_into(&mut d_grads, &fake_grads);
        d_opt.step(&mut discriminator, &d_grads)?;

        // generator step
        let z = latent_batch(rows, cfg.latent_dim, &mut rng);
        let (fake, g_cache) = generator.forward(z.view())?;
        let (fooled, d_cache) = discriminator.forward(fake.view())?;
        let g_loss = -mean_ln(&fooled, |o| o + eps);
        let out_grad = fooled.mapv(|o| -scale * (1.0 - o));
        let (_, fake_input_grad) = discriminator.backward_from_pre_activation(&d_cache, out_grad.view())?;
        let (g_grads, _) = generator.backward(&g_cache, fake_input_grad.view())?;
        g_opt.step(&mut generator, &g_grads)?;

        if !(d_loss.is_finite() && g_loss.is_finite()) {
            return Err(Error::TrainingDiverged(format!(
                "non-finite loss at epoch {epoch}: D {d_loss}, G {g_loss}"
            )));
        }
        history.push(EpochLoss {
            discriminator: d_loss,
            generator: g_loss,
            discriminator_both_real: d_loss_both_real,
        });
    }

    Ok(GanModel {
        generator,
        discriminator,
        latent_dim: cfg.latent_dim,
        loss_history: history,
        eps,
    })
}

/// `-log10(max(p, eps))`
pub fn score_from_probability(p: f64, eps: f64) -> f64 {
    -p.max(eps).log10()
}

impl GanModel {
    pub fn from_parts(
        generator: Mlp,
        discriminator: Mlp,
        latent_dim: usize,
        loss_history: Vec<EpochLoss>,
        eps: f64,
    ) -> Result<Self> {
        if generator.input_dim() != latent_dim {
            return Err(Error::invalid("generator input does not match latent_dim"));
        }
        if generator.output_dim() != discriminator.input_dim() || discriminator.output_dim() != 1 {
            return Err(Error::invalid("generator and discriminator shapes disagree"));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::invalid("eps must lie in (0, 1)"));
        }
        Ok(Self {
            generator,
            discriminator,
            latent_dim,
            loss_history,
            eps,
        })
    }

    pub fn generator(&self) -> &Mlp {
        &self.generator
    }

    pub fn discriminator(&self) -> &Mlp {
        &self.discriminator
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn feature_len(&self) -> usize {
        self.discriminator.input_dim()
    }

    pub fn loss_history(&self) -> &[EpochLoss] {
        &self.loss_history
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `count` standard-normal latent vectors.
    pub fn sample_latent<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Array2<f64> {
        latent_batch(count, self.latent_dim, rng)
    }

    /// Generator output for each latent row.
    pub fn generate_from_latent(&self, latent: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.generator.predict(latent)
    }

    /// `count` generated Feature I vectors from standard-normal latents.
    pub fn generate<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Array2<f64> {
        let z = self.sample_latent(count, rng);
        self.generator
            .predict(z.view())
            .expect("latent width matches generator")
    }

    /// Discriminator output for each row of `features`.
    pub fn discriminate(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let out = self.discriminator.predict(features)?;
        Ok(out.index_axis(Axis(1), 0).to_vec())
    }

    pub fn score(&self, f1: &[f64]) -> Result<f64> {
        if f1.len() != self.feature_len() {
            return Err(Error::invalid(format!(
                "feature length {} does not match discriminator input {}",
                f1.len(),
                self.feature_len()
            )));
        }
        let row = ArrayView2::from_shape((1, f1.len()), f1).expect("contiguous slice");
        Ok(self.score_batch(row)?[0])
    }

    pub fn score_batch(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self
            .discriminate(features)?
            .into_iter()
            .map(|p| score_from_probability(p, self.eps))
            .collect())
    }
}
