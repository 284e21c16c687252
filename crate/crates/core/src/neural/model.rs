use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::EmbeddingMatrix;
use crate::masking::{MaskKind, MaskSet};
use crate::matrix::Matrix;
use crate::neural::graph::{Graph, Var};
use crate::neural::nets::{seeded_rng, ArchConfig, EmbeddingNet, Module, SeparationNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Embedding network feeding the mask network.
    Def,
    /// Mask network on normalized magnitudes, no embeddings.
    Baseline,
}

/// Graph handles produced by one forward pass.
pub struct ForwardOut {
    pub embeddings: Option<Var>,
    pub masks: Vec<Var>,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub arch: ArchConfig,
    pub embed: Option<EmbeddingNet>,
    pub separator: SeparationNet,
}

impl Model {
    pub fn new_def(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seeded_rng(seed);
        let embed = EmbeddingNet::new(arch, &mut rng);
        let input = arch.bins * arch.embed_dim + if arch.concat_magnitude { arch.bins } else { 0 };
        let separator = SeparationNet::new(input, arch.sep_layers, arch, &mut rng);
        Ok(Self {
            kind: ModelKind::Def,
            arch: arch.clone(),
            embed: Some(embed),
            separator,
        })
    }

    pub fn new_baseline(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seeded_rng(seed);
        let separator = SeparationNet::new(arch.bins, arch.baseline_layers, arch, &mut rng);
        Ok(Self {
            kind: ModelKind::Baseline,
            arch: arch.clone(),
            embed: None,
            separator,
        })
    }

    pub fn new(kind: ModelKind, arch: &ArchConfig, seed: u64) -> Result<Self> {
        match kind {
            ModelKind::Def => Self::new_def(arch, seed),
            ModelKind::Baseline => Self::new_baseline(arch, seed),
        }
    }

    /// Builds the forward graph. With `with_masks == false` only the
    /// embedding branch is evaluated.
    pub fn forward(&self, g: &mut Graph, mag_norm: &Matrix, with_masks: bool) -> Result<ForwardOut> {
        let (frames, bins) = mag_norm.shape();
        if bins != self.arch.bins {
            return Err(Error::shape(format!("{bins} bins, model expects {}", self.arch.bins)));
        }
        let x = g.constant(mag_norm.clone());
        match (&self.kind, &self.embed) {
            (ModelKind::Def, Some(embed)) => {
                let v = embed.forward(g, "embed", x)?;
                let masks = if with_masks {
                    let mut input = g.reshape(v, frames, bins * embed.dim);
                    if self.arch.concat_magnitude {
                        input = g.concat_cols(&[input, x]);
                    }
                    self.separator.forward(g, "sep", input)?
                } else {
                    Vec::new()
                };
                Ok(ForwardOut {
                    embeddings: Some(v),
                    masks,
                    frames,
                })
            }
            (ModelKind::Baseline, _) => Ok(ForwardOut {
                embeddings: None,
                masks: self.separator.forward(g, "sep", x)?,
                frames,
            }),
            (ModelKind::Def, None) => Err(Error::InvalidConfig("deep-embedding model without an embedding network".into())),
        }
    }

    /// Eval-mode embeddings.
    pub fn embed(&self, mag_norm: &Matrix) -> Result<EmbeddingMatrix> {
        if self.embed.is_none() {
            return Err(Error::UnsupportedStage("model has no embedding network".into()));
        }
        let mut g = Graph::new(false, 0);
        let out = self.forward(&mut g, mag_norm, false)?;
        g.guard()?;
        EmbeddingMatrix::new(g.value(out.embeddings.expect("def model")).clone())
    }

    /// Eval-mode masks.
    pub fn masks(&self, mag_norm: &Matrix) -> Result<MaskSet> {
        let mut g = Graph::new(false, 0);
        let out = self.forward(&mut g, mag_norm, true)?;
        g.guard()?;
        MaskSet::new(
            out.masks.iter().map(|&m| g.value(m).clone()).collect(),
            MaskKind::Estimated,
        )
    }

    pub fn set_all(&mut self, value: f64) {
        self.visit_mut("", &mut |_, m| m.as_mut_slice().fill(value));
    }
}

impl Module for Model {
    fn visit(&self, _prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        if let Some(e) = &self.embed {
            e.visit("embed", f);
        }
        self.separator.visit("sep", f);
    }

    fn visit_mut(&mut self, _prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        if let Some(e) = &mut self.embed {
            e.visit_mut("embed", f);
        }
        self.separator.visit_mut("sep", f);
    }
}
