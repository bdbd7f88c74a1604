use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Stride of the extractor up to its first pooling stage.
pub const PREFIX_STRIDE: usize = 2;
/// Overall extractor stride: three stride-2 pools, then stride-1 pools.
pub const EXTRACTOR_STRIDE: usize = 8;

/// Layer widths and counts for all five networks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScaleProfile {
    /// Output channels of the five extractor stages.
    pub stage_channels: [usize; 5],
    /// 3×3 convolutions per extractor stage.
    pub convs_per_stage: [usize; 5],
    pub comp_base_channels: usize,
    pub num_residual_blocks: usize,
    /// One feature-adversary branch per dilation rate.
    pub aspp_dilations: Vec<usize>,
    /// Width of the labeler fc6/fc7 layers and of the feature-adversary branches.
    pub head_channels: usize,
    pub label_adv_stride2_layers: usize,
    pub label_adv_base_channels: usize,
    pub num_classes: usize,
    pub input_hw: (usize, usize),
}

impl ScaleProfile {
    /// Small networks that train on a CPU in minutes.
    pub fn desk() -> Self {
        ScaleProfile {
            stage_channels: [8, 16, 32, 32, 32],
            convs_per_stage: [1, 1, 1, 1, 1],
            comp_base_channels: 8,
            num_residual_blocks: 6,
            aspp_dilations: vec![2, 4],
            head_channels: 32,
            label_adv_stride2_layers: 3,
            label_adv_base_channels: 8,
            num_classes: 4,
            input_hw: (49, 25),
        }
    }

    /// VGG-16 / DeepLab widths with a 241×121 input.
    pub fn paper() -> Self {
        ScaleProfile {
            stage_channels: [64, 128, 256, 512, 512],
            convs_per_stage: [2, 2, 3, 3, 3],
            comp_base_channels: 64,
            num_residual_blocks: 6,
            aspp_dilations: vec![6, 12, 18, 24],
            head_channels: 1024,
            label_adv_stride2_layers: 3,
            label_adv_base_channels: 64,
            num_classes: 4,
            input_hw: (241, 121),
        }
    }

    /// Stride of the compensation path (one stride-2 pool per group of three blocks).
    pub fn compensator_stride(&self) -> usize {
        1usize << (self.num_residual_blocks / 3).min(16)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProfile(msg));
        if self.stage_channels.contains(&0) {
            return bad(format!("stage_channels {:?} must be positive", self.stage_channels));
        }
        if self.convs_per_stage.contains(&0) {
            return bad(format!("convs_per_stage {:?} must be positive", self.convs_per_stage));
        }
        for (name, v) in [
            ("comp_base_channels", self.comp_base_channels),
            ("head_channels", self.head_channels),
            ("label_adv_base_channels", self.label_adv_base_channels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.num_residual_blocks == 0 || !self.num_residual_blocks.is_multiple_of(3) {
            return bad(format!("num_residual_blocks {} must be a positive multiple of 3", self.num_residual_blocks));
        }
        if self.compensator_stride() * PREFIX_STRIDE != EXTRACTOR_STRIDE {
            return bad(format!(
                "compensation path stride {} × prefix stride {PREFIX_STRIDE} does not equal extractor stride {EXTRACTOR_STRIDE} (num_residual_blocks {})",
                self.compensator_stride(),
                self.num_residual_blocks
            ));
        }
        if self.aspp_dilations.is_empty() || self.aspp_dilations.contains(&0) {
            return bad(format!("aspp_dilations {:?} must be non-empty and positive", self.aspp_dilations));
        }
        if self.label_adv_stride2_layers == 0 {
            return bad("label_adv_stride2_layers must be at least 1".into());
        }
        if !(2..=255).contains(&self.num_classes) {
            return bad(format!("num_classes {} must be in 2..=255", self.num_classes));
        }
        if self.input_hw.0 < 8 || self.input_hw.1 < 8 {
            return bad(format!("input_hw {:?} must be at least 8×8", self.input_hw));
        }
        Ok(())
    }

    /// Spatial size of extractor features (and of labeler scores) for an input.
    pub fn feature_hw(&self, (h, w): (usize, usize)) -> (usize, usize) {
        (h.div_ceil(EXTRACTOR_STRIDE), w.div_ceil(EXTRACTOR_STRIDE))
    }

    pub const KEYS: [&'static str; 10] = [
        "stage_channels",
        "convs_per_stage",
        "comp_base_channels",
        "num_residual_blocks",
        "aspp_dilations",
        "head_channels",
        "label_adv_stride2_layers",
        "label_adv_base_channels",
        "num_classes",
        "input_hw",
    ];

    /// `key = value` lines, parseable by [`ScaleProfile::set`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("known key"));
        }
        s
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        Some(match key {
            "stage_channels" => list(&self.stage_channels),
            "convs_per_stage" => list(&self.convs_per_stage),
            "comp_base_channels" => self.comp_base_channels.to_string(),
            "num_residual_blocks" => self.num_residual_blocks.to_string(),
            "aspp_dilations" => list(&self.aspp_dilations),
            "head_channels" => self.head_channels.to_string(),
            "label_adv_stride2_layers" => self.label_adv_stride2_layers.to_string(),
            "label_adv_base_channels" => self.label_adv_base_channels.to_string(),
            "num_classes" => self.num_classes.to_string(),
            "input_hw" => format!("{},{}", self.input_hw.0, self.input_hw.1),
            _ => return None,
        })
    }

    /// Set one field from its text form. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let parse_list = || -> Result<Vec<usize>> {
            value
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidConfig(format!("{key}: `{value}` is not a list of integers")))
                })
                .collect()
        };
        let parse_one = || -> Result<usize> {
            value.trim().parse().map_err(|_| Error::InvalidConfig(format!("{key}: `{value}` is not an integer")))
        };
        let fixed = |v: Vec<usize>, n: usize| -> Result<Vec<usize>> {
            if v.len() != n {
                return Err(Error::InvalidConfig(format!("{key}: expected {n} values, got {}", v.len())));
            }
            Ok(v)
        };
        match key {
            "stage_channels" => self.stage_channels.copy_from_slice(&fixed(parse_list()?, 5)?),
            "convs_per_stage" => self.convs_per_stage.copy_from_slice(&fixed(parse_list()?, 5)?),
            "comp_base_channels" => self.comp_base_channels = parse_one()?,
            "num_residual_blocks" => self.num_residual_blocks = parse_one()?,
            "aspp_dilations" => self.aspp_dilations = parse_list()?,
            "head_channels" => self.head_channels = parse_one()?,
            "label_adv_stride2_layers" => self.label_adv_stride2_layers = parse_one()?,
            "label_adv_base_channels" => self.label_adv_base_channels = parse_one()?,
            "num_classes" => self.num_classes = parse_one()?,
            "input_hw" => {
                let v = fixed(parse_list()?, 2)?;
                self.input_hw = (v[0], v[1]);
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = ScaleProfile::desk();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::InvalidConfig(format!("profile line `{line}` lacks `=`")))?;
            if !p.set(k.trim(), v.trim())? {
                return Err(Error::InvalidConfig(format!("unknown profile key `{}`", k.trim())));
            }
        }
        Ok(p)
    }
}

impl Default for ScaleProfile {
    fn default() -> Self {
        Self::desk()
    }
}
