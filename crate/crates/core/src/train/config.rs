use crate::error::{Error, Result};
use crate::nn::ScaleProfile;

/// Which parts of the alternating schedule run besides the supervised step
/// on plain source features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Branches {
    /// Compensator and feature adversary updates.
    pub feature: bool,
    /// Parser-adversarial and label adversary updates, every `K_C` iterations.
    pub label: bool,
    /// Supervised step on compensated source features.
    pub compensated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Adapt,
    SourceOnly,
    FeatureOnly,
    LabelOnly,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] =
        [TrainMode::Adapt, TrainMode::SourceOnly, TrainMode::FeatureOnly, TrainMode::LabelOnly];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Adapt => "adapt",
            TrainMode::SourceOnly => "source_only",
            TrainMode::FeatureOnly => "feat_only",
            TrainMode::LabelOnly => "label_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::InvalidConfig(format!("unknown mode `{s}` (expected adapt, source_only, feat_only or label_only)"))
        })
    }

    pub fn branches(self) -> Branches {
        let (feature, label, compensated) = match self {
            TrainMode::Adapt => (true, true, true),
            TrainMode::SourceOnly => (false, false, false),
            TrainMode::FeatureOnly => (true, false, true),
            TrainMode::LabelOnly => (false, true, false),
        };
        Branches { feature, label, compensated }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub k_c: u64,
    pub batch_size: usize,
    pub lr_main: f64,
    pub lr_feature_adv: f64,
    pub lr_label_adv: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub sgd_momentum: f64,
    pub sgd_weight_decay: f64,
    pub seed: u64,
    pub profile: ScaleProfile,
    pub branches: Branches,
    /// Let the forward passes of the adversarial steps update batch-norm
    /// running statistics. Off in the equivalence mode, where only the
    /// supervised steps touch them.
    pub adversarial_bn_updates: bool,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            iterations: 600,
            k_c: 5,
            batch_size: 4,
            lr_main: 1e-2,
            lr_feature_adv: 1e-3,
            lr_label_adv: 1e-3,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            sgd_momentum: 0.9,
            sgd_weight_decay: 5e-4,
            seed: 0,
            profile: ScaleProfile::desk(),
            branches: TrainMode::Adapt.branches(),
            adversarial_bn_updates: true,
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 10,
            lr_main: 1e-8,
            lr_feature_adv: 1e-5,
            lr_label_adv: 1e-8,
            profile: ScaleProfile::paper(),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.k_c == 0 {
            return bad("k_c must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_main > 0.0 && self.lr_main.is_finite()) {
            return bad(format!("lr_main must be positive, got {}", self.lr_main));
        }
        // Zero adversarial rates are allowed: they freeze C, A_f, A_l and the
        // parser-adversarial step, which is the documented equivalence mode.
        for (name, v) in [("lr_feature_adv", self.lr_feature_adv), ("lr_label_adv", self.lr_label_adv)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        for (name, v) in
            [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2), ("sgd_momentum", self.sgd_momentum)]
        {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.sgd_weight_decay >= 0.0 && self.sgd_weight_decay.is_finite()) {
            return bad(format!("sgd_weight_decay must be nonnegative, got {}", self.sgd_weight_decay));
        }
        self.profile.validate()
    }
}
