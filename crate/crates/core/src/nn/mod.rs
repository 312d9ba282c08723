//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Everything is `f64` and single-threaded so that a given seed, data set and
//! configuration always reproduce the same parameters bit for bit.

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::read_from as read_checkpoint_from;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Linear,
    /// `c · sigmoid(z)`, output in `(0, c)`.
    ScaledSigmoid(f64),
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu(alpha) => {
                if z > 0.0 {
                    z
                } else {
                    alpha * z
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
            Activation::ScaledSigmoid(c) => c * sigmoid(z),
        }
    }

    /// Derivative given the pre-activation `z` and the output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu(alpha) => {
                if z > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
            Activation::ScaledSigmoid(c) => {
                let s = a / c;
                c * s * (1.0 - s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// A stack of dense layers.
///
/// `version` changes on every parameter update so that a [`ForwardCache`]
/// taken before an update cannot be fed to [`Mlp::backward`] afterwards.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Values retained by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// `activations[0]` is the input; `activations[l + 1]` the output of layer `l`.
    activations: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache has an input")
    }
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.biases.raw_dim()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.biases.len() != l.output_dim() {
                return Err(Error::invalid(format!(
                    "layer {i}: {} biases for {} outputs",
                    l.biases.len(),
                    l.output_dim()
                )));
            }
            if l.weights.iter().chain(l.biases.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::invalid(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn check_input(&self, batch: &ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "batch width {} does not match network input {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(layer: &DenseLayer, input: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = input.dot(&layer.weights.t());
        z += &layer.biases;
        z
    }

    /// Forward pass without retaining intermediates.
    pub fn predict(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&batch)?;
        let mut x: Option<Array2<f64>> = None;
        for layer in &self.layers {
            let mut z = match &x {
                Some(prev) => Self::affine(layer, &prev.view()),
                None => Self::affine(layer, &batch),
            };
            let act = layer.activation;
            z.mapv_inplace(|v| act.apply(v));
            x = Some(z);
        }
        Ok(x.expect("at least one layer"))
    }

    /// Forward pass on a `B × in` batch.
    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(batch.to_owned());
        for layer in &self.layers {
            let z = Self::affine(layer, &activations.last().unwrap().view());
            let act = layer.activation;
            let a = z.mapv(|v| act.apply(v));
            pre_activations.push(z);
            activations.push(a);
        }
        let out = activations.last().unwrap().clone();
        Ok((
            out,
            ForwardCache {
                version: self.version,
                activations,
                pre_activations,
            },
        ))
    }

    /// Reverse-mode pass. `loss_grad` is `∂L/∂output` (`B × out`); returns the
    /// parameter gradients and `∂L/∂input` (`B × in`).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        loss_grad: ArrayView2<'_, f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        self.backprop(cache, loss_grad, false)
    }

    /// Like [`Mlp::backward`], but `pre_grad` is the gradient with respect to
    /// the output layer's pre-activation, which stays well conditioned when
    /// a sigmoid output saturates.
    pub fn backward_from_pre_activation(
        &self,
        cache: &ForwardCache,
        pre_grad: ArrayView2<'_, f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        self.backprop(cache, pre_grad, true)
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        grad: ArrayView2<'_, f64>,
        skip_output_activation: bool,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.version != self.version || cache.pre_activations.len() != self.layers.len() {
            return Err(Error::InvalidState(
                "forward cache does not belong to the current parameters".into(),
            ));
        }
        let out = cache.output();
        if grad.dim() != out.dim() {
            return Err(Error::InvalidState(format!(
                "loss gradient shape {:?} does not match output {:?}",
                grad.dim(),
                out.dim()
            )));
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut upstream = grad.to_owned();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let act = layer.activation;
            let mut delta = upstream;
            if !(skip_output_activation && l == n - 1) {
                Zip::from(&mut delta)
                    .and(&cache.pre_activations[l])
                    .and(&cache.activations[l + 1])
                    .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            }
            weights.push(delta.t().dot(&cache.activations[l]));
            biases.push(delta.sum_axis(Axis(0)));
            upstream = delta.dot(&layer.weights);
        }
        weights.reverse();
        biases.reverse();
        Ok((Gradients { weights, biases }, upstream))
    }

    /// Mutable access to the layers; invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.version += 1;
        &mut self.layers
    }
}

/// One layer of a network description: output width and activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_weights(input_dim: usize, layers: &[LayerSpec], seed: u64) -> Result<Mlp> {
    if input_dim == 0 || layers.is_empty() || layers.iter().any(|l| l.units == 0) {
        return Err(Error::invalid("network dimensions must be non-zero"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fan_in = input_dim;
    let mut built = Vec::with_capacity(layers.len());
    for spec in layers {
        let bound = (6.0 / (fan_in + spec.units) as f64).sqrt();
        let weights =
            Array2::from_shape_simple_fn((spec.units, fan_in), || rng.random_range(-bound..bound));
        built.push(DenseLayer {
            weights,
            biases: Array1::zeros(spec.units),
            activation: spec.activation,
        });
        fan_in = spec.units;
    }
    Mlp::new(built)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::{prop, prop_assert, proptest, ProptestConfig};

    fn layer(w: Array2<f64>, b: Array1<f64>, act: Activation) -> DenseLayer {
        DenseLayer {
            weights: w,
            biases: b,
            activation: act,
        }
    }

    #[test]
    fn identity_layer() {
        let net = Mlp::new(vec![layer(
            Array2::eye(3),
            Array1::zeros(3),
            Activation::Linear,
        )])
        .unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(net.predict(x.view()).unwrap(), x);
    }

    #[test]
    fn sigmoid_of_zero() {
        let net = Mlp::new(vec![layer(
            array![[2.0, -1.0]],
            array![0.0],
            Activation::Sigmoid,
        )])
        .unwrap();
        assert_eq!(net.predict(array![[0.0, 0.0]].view()).unwrap()[[0, 0]], 0.5);
    }

    #[test]
    fn two_layer_hand_computed() {
        // h = leaky(W1 x + b1) with alpha 0.2, y = W2 h + b2
        let net = Mlp::new(vec![
            layer(
                array![[1.0, 2.0], [-1.0, 0.5]],
                array![0.5, -1.0],
                Activation::LeakyRelu(0.2),
            ),
            layer(array![[3.0, -2.0]], array![0.25], Activation::Linear),
        ])
        .unwrap();
        // x = (1, 1): z1 = (3.5, -1.5), h = (3.5, -0.3), y = 10.5 + 0.6 + 0.25
        let y = net.predict(array![[1.0, 1.0]].view()).unwrap();
        assert!((y[[0, 0]] - 11.35).abs() < 1e-12);
        let (y2, _) = net.forward(array![[1.0, 1.0]].view()).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn dimension_mismatch() {
        let net = init_weights(4, &[LayerSpec { units: 2, activation: Activation::Linear }], 1)
            .unwrap();
        assert!(net.predict(Array2::zeros((1, 3)).view()).is_err());
        assert!(Mlp::new(vec![
            layer(Array2::zeros((2, 3)), Array1::zeros(2), Activation::Linear),
            layer(Array2::zeros((1, 3)), Array1::zeros(1), Activation::Linear),
        ])
        .is_err());
    }

    #[test]
    fn zero_loss_gradient() {
        let net = random_net(&[3, 5, 2], 4);
        let (out, cache) = net.forward(Array2::ones((4, 3)).view()).unwrap();
        let (g, dx) = net.backward(&cache, Array2::zeros(out.raw_dim()).view()).unwrap();
        assert!(g.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(g.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn least_squares_closed_form() {
        let net = random_net(&[3, 2], 11);
        let x = array![[0.1, 0.2, -0.3], [1.0, -1.0, 0.5], [0.3, 0.0, 2.0], [-0.7, 0.4, 0.1]];
        let y = array![[1.0, 0.0], [0.5, -0.5], [0.0, 2.0], [1.5, 1.0]];
        let b = x.nrows() as f64;
        let (pred, cache) = net.forward(x.view()).unwrap();
        let resid = &pred - &y;
        let grad_out = resid.mapv(|r| 2.0 * r / b);
        let (g, _) = net.backward(&cache, grad_out.view()).unwrap();
        // dW = (2/B) (ŷ - y)ᵀ X
        let expected = resid.t().dot(&x) * (2.0 / b);
        for (a, e) in g.weights[0].iter().zip(expected.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn pre_activation_backward_matches_chain_rule() {
        let net = random_net(&[3, 4, 1], 6);
        let net = {
            let mut layers = net.layers().to_vec();
            layers.last_mut().unwrap().activation = Activation::Sigmoid;
            Mlp::new(layers).unwrap()
        };
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let (out, cache) = net.forward(x.view()).unwrap();
        let through = out.mapv(|a| -1.0 / a);
        let direct = out.mapv(|a| -(1.0 - a));
        let (g1, dx1) = net.backward(&cache, through.view()).unwrap();
        let (g2, dx2) = net.backward_from_pre_activation(&cache, direct.view()).unwrap();
        for (a, b) in g1.weights.iter().zip(&g2.weights) {
            assert!(a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-12));
        }
        assert!(dx1.iter().zip(&dx2).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = random_net(&[2, 2], 1);
        let (out, cache) = net.forward(Array2::ones((1, 2)).view()).unwrap();
        let grads = Gradients::zeros_like(&net);
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step(&mut net, &grads).unwrap();
        assert!(matches!(
            net.backward(&cache, out.view()),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let spec = [LayerSpec {
            units: 100,
            activation: Activation::LeakyRelu(0.2),
        }];
        let a = init_weights(100, &spec, 42).unwrap();
        let b = init_weights(100, &spec, 42).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 200.0).sqrt();
        assert!((bound - 0.1732).abs() < 1e-4);
        let w = &a.layers()[0].weights;
        assert!(w.iter().all(|v| v.abs() <= bound));
        assert!(w.iter().any(|v| v.abs() > 0.9 * bound));
        assert!(a.layers()[0].biases.iter().all(|&v| v == 0.0));
        assert_ne!(a, init_weights(100, &spec, 43).unwrap());
    }

    pub(crate) fn random_net(dims: &[usize], seed: u64) -> Mlp {
        let acts = [
            Activation::LeakyRelu(0.2),
            Activation::Sigmoid,
            Activation::ScaledSigmoid(10.0),
            Activation::Linear,
        ];
        let specs: Vec<LayerSpec> = dims[1..]
            .iter()
            .enumerate()
            .map(|(i, &u)| LayerSpec {
                units: u,
                activation: acts[(seed as usize + i) % acts.len()],
            })
            .collect();
        let mut net = init_weights(dims[0], &specs, seed).unwrap();
        // non-zero biases so that every path is exercised
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for l in net.layers_mut() {
            l.biases.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        net
    }

    /// Central-difference check of every parameter against `backward`,
    /// using loss `Σ c ⊙ output` for a fixed random `c`.
    pub(crate) fn max_fd_error(net: &Mlp, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((3, net.input_dim()), || rng.random_range(-1.5..1.5));
        let c = Array2::from_shape_simple_fn((3, net.output_dim()), || rng.random_range(-1.0..1.0));
        let loss = |n: &Mlp| (n.predict(x.view()).unwrap() * &c).sum();
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, _) = net.backward(&cache, c.view()).unwrap();

        let h = 1e-5;
        let mut probe = net.clone();
        let mut worst = 0.0f64;
        let mut check = |probe: &mut Mlp, param: &dyn Fn(&mut DenseLayer) -> &mut f64, l: usize, analytic: f64| {
            let orig = *param(&mut probe.layers_mut()[l]);
            *param(&mut probe.layers_mut()[l]) = orig + h;
            let up = loss(probe);
            *param(&mut probe.layers_mut()[l]) = orig - h;
            let down = loss(probe);
            *param(&mut probe.layers_mut()[l]) = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        };
        for l in 0..net.layers().len() {
            let (rows, cols) = net.layers()[l].weights.dim();
            for r in 0..rows {
                for k in 0..cols {
                    check(&mut probe, &|d: &mut DenseLayer| &mut d.weights[[r, k]], l, g.weights[l][[r, k]]);
                }
                check(&mut probe, &|d: &mut DenseLayer| &mut d.biases[r], l, g.biases[l][r]);
            }
        }
        worst
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gradients_match_finite_differences(
            dims in prop::collection::vec(1usize..=16, 2..=4),
            seed in 0u64..10_000,
        ) {
            let net = random_net(&dims, seed);
            let err = max_fd_error(&net, seed + 1);
            prop_assert!(err < 1e-4, "relative error {err}");
        }
    }
}
