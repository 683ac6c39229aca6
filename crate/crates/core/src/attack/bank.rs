use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::image_hash;
use crate::error::{Error, Result};
use crate::generator::{make_direction_mask, Generator, Perturbation, OUTPUT_SIZE};
use crate::geometry::AnchorGrid;
use crate::image::Image;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::Param;

pub const BANK_KIND: &str = "bank";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub k: usize,
    pub d: f64,
    pub epsilon: f64,
    pub box_side: f64,
    pub template_hash: String,
}

/// `K` directional perturbations for one template. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationBank {
    pub perturbations: Vec<Perturbation>,
    pub meta: BankMeta,
}

impl PerturbationBank {
    pub fn len(&self) -> usize {
        self.perturbations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perturbations.is_empty()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self
            .perturbations
            .iter()
            .enumerate()
            .map(|(k, p)| Param {
                name: format!("delta.{k}"),
                shape: vec![p.delta.channels, p.delta.height, p.delta.width],
                value: p.delta.data.clone(),
                grad: Vec::new(),
            })
            .collect();
        Checkpoint::new(BANK_KIND, serde_json::to_value(&self.meta).expect("meta serializes"), tensors)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let ck = ck.expect_kind(BANK_KIND)?;
        let meta: BankMeta = serde_json::from_value(ck.meta)?;
        if ck.tensors.len() != meta.k {
            return Err(Error::Checkpoint(format!("bank holds {} entries, metadata says {}", ck.tensors.len(), meta.k)));
        }
        let perturbations = ck
            .tensors
            .into_iter()
            .map(|t| match t.shape[..] {
                [c, h, w] => Ok(Perturbation {
                    delta: Image::from_vec(c, h, w, t.value)?,
                    epsilon: meta.epsilon,
                }),
                _ => Err(Error::Checkpoint(format!("bank entry {} has shape {:?}", t.name, t.shape))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { perturbations, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

/// One conditional generator call per direction.
pub fn build_bank(generator: &Generator, template: &Image, k: usize, d: f64, box_side: f64, grid: &AnchorGrid) -> Result<PerturbationBank> {
    if !generator.config.conditional {
        return Err(Error::Conditioning("a perturbation bank needs a conditional generator".into()));
    }
    let perturbations = (0..k)
        .map(|i| {
            let mask = make_direction_mask(i, k, d, box_side, grid)?;
            let p = generator.generate(template, Some(&mask))?;
            debug_assert_eq!(p.delta.width, OUTPUT_SIZE);
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PerturbationBank {
        perturbations,
        meta: BankMeta {
            k,
            d,
            epsilon: generator.config.epsilon,
            box_side,
            template_hash: image_hash(template),
        },
    })
}

/// Bank index whose direction is angularly closest to `v` (image axes, y
/// down). Ties and zero-length vectors keep `previous`.
pub fn select_direction(v: (f64, f64), k: usize, previous: usize) -> usize {
    if v.0 == 0.0 && v.1 == 0.0 {
        return previous;
    }
    let angle = v.1.atan2(v.0).rem_euclid(TAU);
    let step = TAU / k as f64;
    let dist = |i: usize| {
        let diff = (angle - step * i as f64).rem_euclid(TAU);
        diff.min(TAU - diff)
    };
    let best = (0..k).map(dist).fold(f64::INFINITY, f64::min);
    let ties: Vec<usize> = (0..k).filter(|&i| dist(i) <= best + 1e-9).collect();
    if ties.contains(&previous) {
        previous
    } else {
        ties[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;
    use proptest::prelude::*;

    #[test]
    fn axis_directions() {
        assert_eq!(select_direction((1.0, 0.0), 12, 5), 0);
        assert_eq!(select_direction((0.0, 1.0), 12, 5), 3);
        assert_eq!(select_direction((-1.0, 0.0), 12, 5), 6);
        assert_eq!(select_direction((0.0, -1.0), 12, 5), 9);
        assert_eq!(select_direction((3.0, 3.0), 8, 0), 1);
    }

    #[test]
    fn ties_and_zero_vectors_keep_previous() {
        assert_eq!(select_direction((0.0, 0.0), 12, 7), 7);
        // 45 degrees sits between the 30 and 60 degree bins
        assert_eq!(select_direction((3.0, 3.0), 12, 2), 2);
        assert_eq!(select_direction((3.0, 3.0), 12, 1), 1);
        assert_eq!(select_direction((3.0, 3.0), 12, 9), 1);
    }

    #[test]
    fn bank_needs_conditional_generator() {
        let g = Generator::new(GeneratorConfig::default());
        let t = Image::filled(3, 127, 127, 0.5);
        assert!(matches!(
            build_bank(&g, &t, 12, 4.0, 64.0, &AnchorGrid::default_search()),
            Err(Error::Conditioning(_))
        ));
    }

    #[test]
    fn bank_roundtrip_and_call_count() {
        let g = Generator::new(GeneratorConfig {
            conditional: true,
            ..GeneratorConfig::default()
        });
        let t = Image::filled(3, 127, 127, 0.5);
        let bank = build_bank(&g, &t, 4, 4.0, 64.0, &AnchorGrid::default_search()).unwrap();
        assert_eq!(g.calls(), 4);
        assert_eq!(bank.len(), 4);
        assert!(bank.perturbations.iter().all(|p| p.linf() <= 16.0 / 255.0));
        let back = PerturbationBank::from_checkpoint(Checkpoint::from_bytes(&bank.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, bank);
        let again = build_bank(&g, &t, 4, 4.0, 64.0, &AnchorGrid::default_search()).unwrap();
        assert_eq!(again, bank);
    }

    proptest! {
        #[test]
        fn quantization_error_is_bounded(theta in 0.0f64..TAU, k in 1usize..24, prev in 0usize..24) {
            let prev = prev % k;
            let i = select_direction((theta.cos(), theta.sin()), k, prev);
            let diff = (theta - TAU * i as f64 / k as f64).rem_euclid(TAU);
            prop_assert!(diff.min(TAU - diff) <= std::f64::consts::PI / k as f64 + 1e-9);
        }
    }
}
