//! Procedural two-domain benchmark: articulated figures with exact pixel
//! labels, a compound domain shift, and the on-disk dataset layout.

mod scene;
mod shift;
mod store;

pub use scene::{generate_scene, SceneParams, BACKGROUND, HEAD, LOWER_BODY, NUM_CLASSES, UPPER_BODY};
pub use shift::{apply_domain_shift, ShiftParams};
pub use store::{load_dataset, write_dataset, MANIFEST};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Dataset(format!("unknown domain `{other}`"))),
        }
    }
}

/// One image with its label map. Target training samples carry no label.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSample {
    pub id: String,
    /// `3 × H × W`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `H × W` class ids.
    pub label: Option<Tensor<u8>>,
    pub domain: Domain,
}

/// Samples in manifest order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<DomainSample>,
}

impl Dataset {
    pub fn new(samples: Vec<DomainSample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.label.is_some())
    }

    /// `(H, W)` of the first image.
    pub fn image_hw(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.image.dims()[1], s.image.dims()[2]))
    }

    /// Stack the images at `indices` into an `N × 3 × H × W` batch.
    pub fn images<T: Scalar>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let parts: Vec<&Tensor<f32>> = indices.iter().map(|&i| &self.samples[i].image).collect();
        Ok(Tensor::stack(&parts)?.cast())
    }

    /// Stack the label maps at `indices` into an `N × H × W` batch.
    pub fn labels(&self, indices: &[usize]) -> Result<Tensor<u8>> {
        let parts = indices
            .iter()
            .map(|&i| {
                let s = &self.samples[i];
                s.label.as_ref().ok_or_else(|| Error::Dataset(format!("sample `{}` has no label", s.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&parts)
    }
}

/// Render scenes `first..first + count` and, for the target domain, apply
/// `shift` with a per-sample noise seed. Labels are kept when `keep_labels`.
pub fn generate_domain(
    scene: &SceneParams,
    shift: &ShiftParams,
    domain: Domain,
    first: u64,
    count: usize,
    keep_labels: bool,
) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let index = first + k as u64;
        let mut s = generate_scene(scene, index)?;
        if domain == Domain::Target {
            s.image = apply_domain_shift(&s.image, shift, mix_seed(scene.seed, index))?;
        }
        s.domain = domain;
        s.id = format!("{k:05}");
        if !keep_labels {
            s.label = None;
        }
        samples.push(s);
    }
    Ok(Dataset::new(samples))
}

/// SplitMix64-style mixing of two integers into one seed.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
