//! Perturbation generator: template (and optional direction mask) in, one
//! search-sized perturbation out.

mod mask;
mod net;
mod perturbation;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use mask::{direction, direction_box, direction_cell, make_direction_mask, upsample_mask, ConditionMask};
pub use net::{GeneratorCache, GeneratorNet, GeneratorNetConfig, INPUT_SIZE, OUTPUT_SIZE};
pub use perturbation::{apply, Perturbation, PerturbationStats};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Module, Tensor};

pub const CHECKPOINT_KIND: &str = "generator";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub net: GeneratorNetConfig,
    /// Takes a direction mask as a fourth input channel.
    pub conditional: bool,
    /// L-infinity budget on the 0-255 scale.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            net: GeneratorNetConfig::default(),
            conditional: false,
            epsilon: 16.0,
            seed: 0,
        }
    }
}

/// Generator weights plus a shared count of forward passes per template.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub net: GeneratorNet,
    calls: Arc<AtomicUsize>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Self {
        let channels = if config.conditional { 4 } else { 3 };
        let net = GeneratorNet::new(config.net.clone(), channels, config.seed);
        Self {
            config,
            net,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn scale(&self) -> f32 {
        (self.config.epsilon / 255.0) as f32
    }

    /// Generator invocations (one per template) since creation or the last reset.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub(crate) fn count_calls(&self, n: usize) {
        self.calls.fetch_add(n, Ordering::SeqCst);
    }

    /// Network input for one template: the image, plus the upsampled mask
    /// channel for a conditional generator.
    pub fn input(&self, template: &Image, mask: Option<&ConditionMask>) -> Result<Image> {
        if template.channels != 3 || template.height != INPUT_SIZE || template.width != INPUT_SIZE {
            return Err(Error::Shape(format!(
                "template must be 3x{INPUT_SIZE}x{INPUT_SIZE}, got {}x{}x{}",
                template.channels, template.height, template.width
            )));
        }
        match (self.config.conditional, mask) {
            (false, None) => Ok(template.clone()),
            (true, Some(m)) => {
                let mut data = template.data.clone();
                data.extend_from_slice(&upsample_mask(m, INPUT_SIZE).data);
                Image::from_vec(4, INPUT_SIZE, INPUT_SIZE, data)
            }
            (true, None) => Err(Error::Conditioning("conditional generator needs a mask".into())),
            (false, Some(_)) => Err(Error::Conditioning("unconditional generator takes no mask".into())),
        }
    }

    /// One forward pass producing the perturbation for `template`.
    pub fn generate(&self, template: &Image, mask: Option<&ConditionMask>) -> Result<Perturbation> {
        let x = Tensor::from_images(&[&self.input(template, mask)?])?;
        let (d, _) = self.net.forward(&x, self.scale(), false)?;
        self.count_calls(1);
        Ok(Perturbation {
            delta: d.image(0),
            epsilon: self.config.epsilon,
        })
    }

    /// Batched forward with activations kept for training; counts one call
    /// per batch item.
    pub fn forward_train(&self, inputs: &Tensor) -> Result<(Tensor, GeneratorCache)> {
        let (d, cache) = self.net.forward(inputs, self.scale(), true)?;
        self.count_calls(inputs.n());
        Ok((d, cache.expect("kept")))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::to_value(&self.config).expect("config serializes");
        Checkpoint::new(CHECKPOINT_KIND, meta, self.net.params().into_iter().cloned().collect())
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let ck = ck.expect_kind(CHECKPOINT_KIND)?;
        let config: GeneratorConfig = serde_json::from_value(ck.meta)?;
        let mut g = Self::new(config);
        g.net.load_params(&ck.tensors)?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AnchorGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn template(seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(3, 127, 127, (0..3 * 127 * 127).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn generate_is_deterministic_and_bounded() {
        let g = Generator::new(GeneratorConfig::default());
        let a = g.generate(&template(1), None).unwrap();
        let b = g.generate(&template(1), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(g.calls(), 2);
        assert!(a.linf() <= 16.0 / 255.0);
        assert_eq!((a.delta.channels, a.delta.height, a.delta.width), (3, 255, 255));
    }

    #[test]
    fn conditioning_is_checked() {
        let plain = Generator::new(GeneratorConfig::default());
        let cond = Generator::new(GeneratorConfig {
            conditional: true,
            ..GeneratorConfig::default()
        });
        let m = make_direction_mask(0, 12, 4.0, 64.0, &AnchorGrid::default_search()).unwrap();
        assert!(matches!(plain.generate(&template(2), Some(&m)), Err(Error::Conditioning(_))));
        assert!(matches!(cond.generate(&template(2), None), Err(Error::Conditioning(_))));
        let a = cond.generate(&template(2), Some(&m)).unwrap();
        let m2 = make_direction_mask(6, 12, 4.0, 64.0, &AnchorGrid::default_search()).unwrap();
        assert_ne!(a, cond.generate(&template(2), Some(&m2)).unwrap());
        assert_eq!(plain.calls(), 0);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let g = Generator::new(GeneratorConfig {
            epsilon: 8.0,
            seed: 5,
            ..GeneratorConfig::default()
        });
        let back = Generator::from_checkpoint(Checkpoint::from_bytes(&g.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.config, g.config);
        assert_eq!(back.generate(&template(3), None).unwrap(), g.generate(&template(3), None).unwrap());
    }
}
