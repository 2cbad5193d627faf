use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dictionary::{Dictionary, SelectionMode};
use super::select::{merge, select};
use crate::backbone::{Activation, BoundStack, LayerStack, LayerStackConfig};
use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::rng::{derive_seed, seeded};
use crate::tensor::{Tape, Tensor, Var, DEFAULT_EPSILON};

/// Where the attention masks are applied relative to ψ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Mask the raw map, then refine each masked copy with ψ.
    Pre,
    /// Transform the map with ψ, then mask.
    Post,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Pre => "pre",
            Strategy::Post => "post",
        }
    }
}

/// Layer widths and activations of φ or ψ; the input width comes from the map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackShape {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl StackShape {
    pub fn to_config(&self, input: usize, seed: u64) -> LayerStackConfig {
        LayerStackConfig { input, widths: self.widths.clone(), activations: self.activations.clone(), seed }
    }

    pub fn output(&self, input: usize) -> usize {
        self.widths.last().copied().unwrap_or(input)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiabloConfig {
    pub strategy: Strategy,
    pub mode: SelectionMode,
    /// Dictionary size N.
    pub branches: usize,
    /// Total embedding size E; each branch gets E / N.
    pub embedding: usize,
    /// Hardness of the soft assignment.
    pub alpha: f64,
    /// Channel count c of the incoming feature map F.
    pub channels: usize,
    pub phi: StackShape,
    pub psi: StackShape,
}

impl Default for DiabloConfig {
    fn default() -> Self {
        DiabloConfig {
            strategy: Strategy::Pre,
            mode: SelectionMode::Dimension,
            branches: 8,
            embedding: 64,
            alpha: 5.0,
            channels: 16,
            phi: StackShape { widths: vec![16, 16], activations: vec![Activation::Relu, Activation::None] },
            psi: StackShape { widths: vec![16, 16], activations: vec![Activation::Relu, Activation::Relu] },
        }
    }
}

impl DiabloConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branches < 1 {
            return Err(Error::config("branches", "must be at least 1"));
        }
        if self.embedding == 0 || !self.embedding.is_multiple_of(self.branches) {
            return Err(Error::config(
                "embedding",
                format!("{} is not a positive multiple of branches = {}", self.embedding, self.branches),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be a positive finite number"));
        }
        if self.channels == 0 {
            return Err(Error::config("channels", "must be positive"));
        }
        for (name, shape) in [("phi", &self.phi), ("psi", &self.psi)] {
            shape.to_config(self.channels, 0).validate().map_err(|e| Error::config(name, e.to_string()))?;
        }
        Ok(())
    }

    pub fn branch_width(&self) -> usize {
        self.embedding / self.branches
    }

    /// Channel count of the maps the attention multiplies.
    pub fn attended_channels(&self) -> usize {
        match self.strategy {
            Strategy::Pre => self.channels,
            Strategy::Post => self.psi.output(self.channels),
        }
    }
}

/// Per-branch pooling head: mean pool, linear map to E/N, ℓ2 normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl BranchHead {
    /// Weights ~ N(0, 1/fan-in), zero bias.
    pub fn init(input: usize, output: usize, seed: u64) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(Error::argument("branch head extents must be positive"));
        }
        let normal = Normal::new(0.0, (1.0 / input as f64).sqrt()).expect("positive std");
        let mut rng = seeded(seed);
        let data = (0..input * output).map(|_| normal.sample(&mut rng)).collect();
        Ok(BranchHead { weight: Tensor::new(vec![input, output], data)?, bias: Tensor::zeros(&[output]) })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundHead {
        self.bind_with(&mut |t| tape.param(t.clone()))
    }

    pub fn bind_with(&self, leaf: &mut dyn FnMut(&Tensor) -> Var) -> BoundHead {
        BoundHead { weight: leaf(&self.weight), bias: leaf(&self.bias) }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundHead {
    pub weight: Var,
    pub bias: Var,
}

/// Pools one branch map and embeds it as a unit vector of length E/N.
pub fn branch_head(tape: &mut Tape, map: Var, head: BoundHead) -> Result<Var> {
    let pooled = tape.spatial_mean_pool(map)?;
    let c = tape.shape(pooled)[0];
    let row = tape.reshape(pooled, &[1, c])?;
    let projected = tape.matmul(row, head.weight)?;
    let projected = tape.add_bias(projected, head.bias)?;
    let width = tape.shape(projected)[1];
    let flat = tape.reshape(projected, &[width])?;
    tape.l2_normalize(flat, 0, DEFAULT_EPSILON)
}

/// Learnable state of the attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct Diablo {
    pub config: DiabloConfig,
    pub phi: LayerStack,
    /// Shared by all branches.
    pub psi: LayerStack,
    pub dictionary: Dictionary,
    pub heads: Vec<BranchHead>,
}

impl Diablo {
    pub fn init(config: &DiabloConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let phi = LayerStack::init(&config.phi.to_config(c, derive_seed(seed, 1)))?;
        let psi = LayerStack::init(&config.psi.to_config(c, derive_seed(seed, 2)))?;
        let dictionary = Dictionary::init(
            config.mode,
            config.branches,
            phi.output_width(),
            config.attended_channels(),
            config.alpha,
            derive_seed(seed, 3),
        )?;
        let heads = (0..config.branches)
            .map(|n| BranchHead::init(psi.output_width(), config.branch_width(), derive_seed(seed, 100 + n as u64)))
            .collect::<Result<_>>()?;
        Ok(Diablo { config: config.clone(), phi, psi, dictionary, heads })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundDiablo {
        self.bind_with(&mut |t| tape.param(t.clone()))
    }

    /// Binds using `leaf` to obtain a var for each parameter, in visit order.
    pub fn bind_with(&self, leaf: &mut dyn FnMut(&Tensor) -> Var) -> BoundDiablo {
        BoundDiablo {
            strategy: self.config.strategy,
            mode: self.dictionary.mode,
            alpha: self.dictionary.alpha,
            channels: self.dictionary.channels,
            phi: self.phi.bind_with(leaf),
            psi: self.psi.bind_with(leaf),
            dictionary: leaf(&self.dictionary.entries),
            heads: self.heads.iter().map(|h| h.bind_with(leaf)).collect(),
        }
    }

    /// Embeds a feature map without keeping a tape around.
    pub fn embed(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let f = tape.constant(features.clone());
        let out = bound.forward(&mut tape, f)?;
        Ok(tape.value(out.embedding).clone())
    }
}

impl Parameters for Diablo {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.phi.visit(&format!("{prefix}.phi"), f);
        self.psi.visit(&format!("{prefix}.psi"), f);
        f(format!("{prefix}.dictionary"), &self.dictionary.entries);
        for (n, h) in self.heads.iter().enumerate() {
            f(format!("{prefix}.head.{n}.weight"), &h.weight);
            f(format!("{prefix}.head.{n}.bias"), &h.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.phi.visit_mut(f);
        self.psi.visit_mut(f);
        f(&mut self.dictionary.entries);
        for h in &mut self.heads {
            f(&mut h.weight);
            f(&mut h.bias);
        }
    }
}

/// A [`Diablo`] block whose parameters are leaves on a tape.
#[derive(Clone, Debug)]
pub struct BoundDiablo {
    pub strategy: Strategy,
    pub mode: SelectionMode,
    pub alpha: f64,
    pub channels: usize,
    pub phi: BoundStack,
    pub psi: BoundStack,
    pub dictionary: Var,
    pub heads: Vec<BoundHead>,
}

/// Intermediate and final results of one forward pass.
#[derive(Clone, Debug)]
pub struct DiabloOutput {
    /// N×h×w×c attention weights.
    pub attention: Var,
    /// The N maps fed to the branch heads.
    pub maps: Vec<Var>,
    /// Unit-norm branch embeddings, each of length E/N.
    pub branches: Vec<Var>,
    /// Concatenation of the branches, length E.
    pub embedding: Var,
}

impl BoundDiablo {
    /// Parameter vars in [`Parameters::visit`] order.
    pub fn vars(&self, out: &mut Vec<Var>) {
        self.phi.vars(out);
        self.psi.vars(out);
        out.push(self.dictionary);
        for h in &self.heads {
            out.push(h.weight);
            out.push(h.bias);
        }
    }

    pub fn forward(&self, tape: &mut Tape, features: Var) -> Result<DiabloOutput> {
        match self.strategy {
            Strategy::Post => post_attention_forward(tape, features, self),
            Strategy::Pre => pre_attention_forward(tape, features, self),
        }
    }

    fn attention(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let phi_f = self.phi.forward(tape, features)?;
        select(tape, phi_f, self.dictionary, self.mode, self.alpha, self.channels)
    }

    fn finish(&self, tape: &mut Tape, attention: Var, maps: Vec<Var>) -> Result<DiabloOutput> {
        if maps.len() != self.heads.len() {
            return Err(Error::shape(format!("{} maps for {} heads", maps.len(), self.heads.len())));
        }
        let branches =
            maps.iter().zip(&self.heads).map(|(&m, &h)| branch_head(tape, m, h)).collect::<Result<Vec<_>>>()?;
        let embedding = tape.concat(&branches)?;
        Ok(DiabloOutput { attention, maps, branches, embedding })
    }
}

/// A = S(φ(F)); G = ψ(F); H = M(G; A); then one head per branch.
pub fn post_attention_forward(tape: &mut Tape, features: Var, block: &BoundDiablo) -> Result<DiabloOutput> {
    let attention = block.attention(tape, features)?;
    let g = block.psi.forward(tape, features)?;
    let maps = merge(tape, g, attention)?;
    block.finish(tape, attention, maps)
}

/// A = S(φ(F)); Gⁿ = M(F; A)ⁿ; Hⁿ = ψ(Gⁿ) with one shared ψ; then the heads.
pub fn pre_attention_forward(tape: &mut Tape, features: Var, block: &BoundDiablo) -> Result<DiabloOutput> {
    let attention = block.attention(tape, features)?;
    let masked = merge(tape, features, attention)?;
    let maps = masked.into_iter().map(|g| block.psi.forward(tape, g)).collect::<Result<Vec<_>>>()?;
    block.finish(tape, attention, maps)
}

/// The attention-free reference: head(ψ(F)).
pub fn baseline_forward(tape: &mut Tape, features: Var, psi: &BoundStack, head: BoundHead) -> Result<Var> {
    let g = psi.forward(tape, features)?;
    branch_head(tape, g, head)
}
