//! Full image-to-embedding network: patch extractor followed by the attention block.

use serde::{Deserialize, Serialize};

use crate::attention::{BoundDiablo, Diablo, DiabloConfig};
use crate::backbone::{extract_features, Activation, BoundStack, LayerStack, LayerStackConfig};
use crate::data::{Dataset, Image};
use crate::error::{Error, Result};
use crate::evaluation::EmbeddingIndex;
use crate::params::Parameters;
use crate::rng::derive_seed;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    /// Patch grid (rows, columns); the feature map is grid.0 × grid.1.
    pub grid: [usize; 2],
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig { grid: [4, 4], widths: vec![16], activations: vec![Activation::Relu] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub extractor: ExtractorConfig,
    pub attention: DiabloConfig,
}

impl ModelConfig {
    /// Checks internal consistency for images of the given size.
    pub fn validate(&self, image_height: usize, image_width: usize) -> Result<()> {
        let [gh, gw] = self.extractor.grid;
        if gh == 0 || gw == 0 || !image_height.is_multiple_of(gh) || !image_width.is_multiple_of(gw) {
            return Err(Error::config(
                "model.extractor.grid",
                format!("{image_height}×{image_width} images do not divide into a {gh}×{gw} grid"),
            ));
        }
        self.extractor_config(image_height, image_width, 0)
            .validate()
            .map_err(|e| Error::config("model.extractor", e.to_string()))?;
        self.attention.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(format!("model.attention.{path}"), message),
            other => other,
        })?;
        let out = *self.extractor.widths.last().expect("validated non-empty");
        if out != self.attention.channels {
            return Err(Error::config(
                "model.attention.channels",
                format!("extractor produces {out} channels but attention expects {}", self.attention.channels),
            ));
        }
        Ok(())
    }

    fn extractor_config(&self, image_height: usize, image_width: usize, seed: u64) -> LayerStackConfig {
        let [gh, gw] = self.extractor.grid;
        LayerStackConfig {
            input: (image_height / gh.max(1)) * (image_width / gw.max(1)),
            widths: self.extractor.widths.clone(),
            activations: self.extractor.activations.clone(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub extractor: LayerStack,
    pub block: Diablo,
    pub grid: (usize, usize),
}

pub struct BoundModel {
    pub extractor: BoundStack,
    pub block: BoundDiablo,
    pub grid: (usize, usize),
}

impl Model {
    pub fn init(config: &ModelConfig, image_height: usize, image_width: usize, seed: u64) -> Result<Self> {
        config.validate(image_height, image_width)?;
        let extractor = LayerStack::init(&config.extractor_config(image_height, image_width, derive_seed(seed, 10)))?;
        let block = Diablo::init(&config.attention, derive_seed(seed, 11))?;
        Ok(Model { extractor, block, grid: (config.extractor.grid[0], config.extractor.grid[1]) })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        self.bind_with(&mut |t| tape.param(t.clone()))
    }

    pub fn bind_with(&self, leaf: &mut dyn FnMut(&Tensor) -> Var) -> BoundModel {
        BoundModel { extractor: self.extractor.bind_with(leaf), block: self.block.bind_with(leaf), grid: self.grid }
    }

    /// Embedding of one image, without gradients.
    pub fn embed(&self, image: &Image) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let e = bound.embed(&mut tape, image)?;
        Ok(tape.value(e).clone())
    }

    /// Embeds every sample of `dataset` into a leave-one-out index.
    pub fn index(&self, dataset: &Dataset) -> Result<EmbeddingIndex> {
        let rows =
            dataset.samples.iter().map(|s| self.embed(&s.image).map(Tensor::into_data)).collect::<Result<Vec<_>>>()?;
        EmbeddingIndex::from_rows(rows, dataset.labels())
    }
}

impl Parameters for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.extractor.visit(&format!("{prefix}extractor"), f);
        self.block.visit(&format!("{prefix}attention"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.extractor.visit_mut(f);
        self.block.visit_mut(f);
    }
}

impl BoundModel {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.extractor.vars(&mut out);
        self.block.vars(&mut out);
        out
    }

    pub fn embed(&self, tape: &mut Tape, image: &Image) -> Result<Var> {
        let features = extract_features(tape, image, &self.extractor, self.grid)?;
        Ok(self.block.forward(tape, features)?.embedding)
    }
}
