//! Pointwise layer stacks standing in for convolutional feature extractors.
//!
//! A [`LayerStack`] is a chain of 1×1 convolutions: at every spatial location
//! of an h×w×c map, the c-vector goes through `x·W + b` and an optional ReLU.
//! The same type serves as the local feature extractor and as the φ and ψ
//! transforms of the attention block.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::rng::seeded;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerStackConfig {
    /// Channel count of the incoming feature map.
    pub input: usize,
    /// Output width of each layer; the last one is the stack's output width.
    pub widths: Vec<usize>,
    /// One activation per layer.
    pub activations: Vec<Activation>,
    pub seed: u64,
}

impl LayerStackConfig {
    /// `depth` layers of width `width`, ReLU everywhere.
    pub fn uniform(input: usize, width: usize, depth: usize, seed: u64) -> Self {
        LayerStackConfig { input, widths: vec![width; depth], activations: vec![Activation::Relu; depth], seed }
    }

    pub fn output(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.input)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::argument("layer stack needs at least one layer"));
        }
        if self.input == 0 || self.widths.contains(&0) {
            return Err(Error::argument(format!("zero-width layer in stack {} -> {:?}", self.input, self.widths)));
        }
        if self.activations.len() != self.widths.len() {
            return Err(Error::argument(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.widths.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// in × out
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
}

impl LayerStack {
    /// He-initialized weights (σ = √(2 / fan-in)) and zero biases.
    pub fn init(config: &LayerStackConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.seed);
        let mut fan_in = config.input;
        let mut layers = Vec::with_capacity(config.widths.len());
        for (&width, &activation) in config.widths.iter().zip(&config.activations) {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let data = (0..fan_in * width).map(|_| normal.sample(&mut rng)).collect();
            layers.push(Layer {
                weight: Tensor::new(vec![fan_in, width], data)?,
                bias: Tensor::zeros(&[width]),
                activation,
            });
            fan_in = width;
        }
        Ok(LayerStack { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty stack").weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundStack {
        self.bind_with(&mut |t| tape.param(t.clone()))
    }

    /// Binds using `leaf` to obtain a var for each parameter, in visit order.
    pub fn bind_with(&self, leaf: &mut dyn FnMut(&Tensor) -> Var) -> BoundStack {
        BoundStack { layers: self.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias), l.activation)).collect() }
    }

    /// Evaluates the stack on a plain feature map without recording gradients.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = bound.forward(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }
}

impl Parameters for LayerStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            f(format!("{prefix}.{i}.weight"), &l.weight);
            f(format!("{prefix}.{i}.bias"), &l.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for l in &mut self.layers {
            f(&mut l.weight);
            f(&mut l.bias);
        }
    }
}

/// A [`LayerStack`] whose parameters are leaves on a tape.
#[derive(Clone, Debug)]
pub struct BoundStack {
    pub layers: Vec<(Var, Var, Activation)>,
}

impl BoundStack {
    pub fn vars(&self, out: &mut Vec<Var>) {
        for &(w, b, _) in &self.layers {
            out.push(w);
            out.push(b);
        }
    }

    /// Applies every layer at each location of an h×w×c map.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::shape(format!("layer stack input must be h×w×c, got {shape:?}")));
        }
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        let expected = tape.shape(self.layers[0].0)[0];
        if c != expected {
            return Err(Error::shape(format!("stack expects {expected} channels, map has {c}")));
        }
        let mut cur = tape.reshape(x, &[h * w, c])?;
        for &(weight, bias, activation) in &self.layers {
            cur = tape.matmul(cur, weight)?;
            cur = tape.add_bias(cur, bias)?;
            if activation == Activation::Relu {
                cur = tape.relu(cur);
            }
        }
        let out = tape.shape(cur)[1];
        tape.reshape(cur, &[h, w, out])
    }
}

/// Cuts an image into a `grid.0 × grid.1` grid of patches and flattens each
/// patch row-major, giving an h×w×(patch area) map.
pub fn patchify(image: &Image, grid: (usize, usize)) -> Result<Tensor> {
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 || !image.height.is_multiple_of(gh) || !image.width.is_multiple_of(gw) {
        return Err(Error::argument(format!(
            "{}×{} image does not divide into a {gh}×{gw} grid",
            image.height, image.width
        )));
    }
    let (ph, pw) = (image.height / gh, image.width / gw);
    let mut data = Vec::with_capacity(image.pixels.len());
    for gi in 0..gh {
        for gj in 0..gw {
            for r in 0..ph {
                for c in 0..pw {
                    data.push(image.at(gi * ph + r, gj * pw + c));
                }
            }
        }
    }
    Tensor::new(vec![gh, gw, ph * pw], data)
}

/// Local feature map F of an image: patch vectors pushed through `extractor`.
pub fn extract_features(tape: &mut Tape, image: &Image, extractor: &BoundStack, grid: (usize, usize)) -> Result<Var> {
    let patches = tape.constant(patchify(image, grid)?);
    extractor.forward(tape, patches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck, DEFAULT_STEP, DEFAULT_TOLERANCE};

    #[test]
    fn init_shapes_and_determinism() {
        let cfg = LayerStackConfig::uniform(8, 8, 1, 0);
        let s = LayerStack::init(&cfg).unwrap();
        assert_eq!(s.layers[0].weight.shape(), &[8, 8]);
        assert_eq!(s.layers[0].bias, Tensor::zeros(&[8]));
        assert_eq!(s, LayerStack::init(&cfg).unwrap());
        assert_ne!(s, LayerStack::init(&LayerStackConfig { seed: 1, ..cfg }).unwrap());
    }

    #[test]
    fn zero_width_is_rejected() {
        let cfg = LayerStackConfig::uniform(8, 0, 1, 0);
        assert!(matches!(LayerStack::init(&cfg), Err(Error::Argument(_))));
        let empty = LayerStackConfig::uniform(8, 4, 0, 0);
        assert!(LayerStack::init(&empty).is_err());
    }

    #[test]
    fn he_init_standard_deviation() {
        let s = LayerStack::init(&LayerStackConfig::uniform(64, 64, 1, 3)).unwrap();
        let w = s.layers[0].weight.data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let target = (2.0f64 / 64.0).sqrt();
        assert!((var.sqrt() - target).abs() < 0.2 * target, "std {}", var.sqrt());
    }

    #[test]
    fn identity_layer_is_identity() {
        let stack = LayerStack {
            layers: vec![Layer {
                weight: Tensor::identity(3),
                bias: Tensor::zeros(&[3]),
                activation: Activation::None,
            }],
        };
        let x = Tensor::new(vec![2, 2, 3], (0..12).map(|i| i as f64 - 5.0).collect()).unwrap();
        assert_eq!(stack.apply(&x).unwrap(), x);
    }

    #[test]
    fn negative_preactivations_vanish() {
        let stack = LayerStack {
            layers: vec![Layer {
                weight: Tensor::full(&[3, 2], -1.0),
                bias: Tensor::full(&[2], -0.1),
                activation: Activation::Relu,
            }],
        };
        let x = Tensor::full(&[2, 2, 3], 0.5);
        assert_eq!(stack.apply(&x).unwrap(), Tensor::zeros(&[2, 2, 2]));
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let stack = LayerStack::init(&LayerStackConfig::uniform(4, 4, 1, 0)).unwrap();
        assert!(matches!(stack.apply(&Tensor::zeros(&[2, 2, 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn stack_gradcheck() {
        let stack = LayerStack::init(&LayerStackConfig::uniform(8, 8, 2, 11)).unwrap();
        let x = crate::rng::normal_tensor(&[4, 4, 8], 5);
        let mut inputs = vec![x];
        stack.visit("s", &mut |_, t| inputs.push(t.clone()));
        let weights = crate::rng::normal_tensor(&[4, 4, 8], 6);
        let report = gradcheck(
            |t, v| {
                let bound = BoundStack { layers: vec![(v[1], v[2], Activation::Relu), (v[3], v[4], Activation::Relu)] };
                let y = bound.forward(t, v[0])?;
                let wv = t.constant(weights.clone());
                let p = t.mul(y, wv)?;
                Ok(t.sum(p))
            },
            &inputs,
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        );
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn patch_shapes() {
        let img = Image::new(8, 8, vec![0.5; 64]);
        let p = patchify(&img, (2, 2)).unwrap();
        assert_eq!(p.shape(), &[2, 2, 16]);
        let mnist = Image::new(28, 28, vec![0.0; 784]);
        assert_eq!(patchify(&mnist, (4, 4)).unwrap().shape(), &[4, 4, 49]);
        assert!(matches!(patchify(&img, (3, 3)), Err(Error::Argument(_))));
    }

    #[test]
    fn patch_contents_follow_the_grid() {
        let img = Image::new(4, 4, (0..16).map(f64::from).collect());
        let p = patchify(&img, (2, 2)).unwrap();
        // top-right patch holds rows 0..2, cols 2..4
        assert_eq!(&p.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn constant_image_gives_constant_features() {
        let img = Image::new(8, 8, vec![0.7; 64]);
        let stack = LayerStack::init(&LayerStackConfig::uniform(16, 6, 2, 2)).unwrap();
        let mut tape = Tape::new();
        let bound = stack.bind(&mut tape);
        let f = extract_features(&mut tape, &img, &bound, (2, 2)).unwrap();
        let v = tape.value(f);
        for loc in v.data().chunks(6) {
            assert_eq!(loc, &v.data()[..6]);
        }
    }
}
