use std::fmt;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_models, save_models, Checkpoint, PROFILE_RECORD};
use crate::nn::{
    downsample_labels, forward_compensated, one_hot, Mode, Models, Network, NormUpdates, EXTRACTOR_STRIDE,
};
use crate::scalar::Scalar;
use crate::tensor::io::TypedAny;
use crate::tensor::{Graph, NetTag, Tensor, Var};
use crate::train::losses::{
    loss_compensator, loss_feature_adversary, loss_label_adversary, loss_parser_adversarial, pixelwise_cross_entropy,
};
use crate::train::optim::{Adam, Sgd};
use crate::train::sampler::EpochSampler;
use crate::train::TrainConfig;

pub const ITERATION_RECORD: &str = "meta/iteration";
const SOURCE_SALT: u64 = 1;
const TARGET_SALT: u64 = 2;

/// The six updates of one iteration, in schedule order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StepKind {
    /// Cross-entropy on plain source features; updates E, L.
    P1,
    /// Compensator against the feature adversary; updates C.
    Eq2,
    /// Feature adversary on target vs compensated source features; updates A_f.
    Eq1,
    /// Parser against the label adversary on target predictions; updates E, L.
    Eq4,
    /// Label adversary on ground truth vs target predictions; updates A_l.
    Eq3,
    /// Cross-entropy on compensated source features; updates E, L.
    P2,
}

impl StepKind {
    pub const ALL: [StepKind; 6] =
        [StepKind::P1, StepKind::Eq2, StepKind::Eq1, StepKind::Eq4, StepKind::Eq3, StepKind::P2];

    pub fn name(self) -> &'static str {
        match self {
            StepKind::P1 => "P1",
            StepKind::Eq2 => "EQ2",
            StepKind::Eq1 => "EQ1",
            StepKind::Eq4 => "EQ4",
            StepKind::Eq3 => "EQ3",
            StepKind::P2 => "P2",
        }
    }

    pub fn updates(self) -> &'static [NetTag] {
        match self {
            StepKind::P1 | StepKind::Eq4 | StepKind::P2 => &[NetTag::Extractor, NetTag::Labeler],
            StepKind::Eq2 => &[NetTag::Compensator],
            StepKind::Eq1 => &[NetTag::FeatureAdversary],
            StepKind::Eq3 => &[NetTag::LabelAdversary],
        }
    }

    pub fn params_label(self) -> String {
        self.updates().iter().map(|t| t.short()).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One audited update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub step: StepKind,
    pub loss: f64,
    /// Networks whose parameter hash changed during the step.
    pub changed: Vec<NetTag>,
}

impl StepRecord {
    /// Only the networks the step is meant to update were modified.
    pub fn isolated(&self) -> bool {
        self.changed.iter().all(|t| self.step.updates().contains(t))
    }
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} step={} params={} loss={}", self.t, self.step, self.step.params_label(), self.loss)
    }
}

/// Source and target batches of one iteration.
#[derive(Clone, Debug)]
pub struct IterationBatch<T> {
    pub source_images: Tensor<T>,
    /// Source labels at score resolution.
    pub source_labels: Tensor<u8>,
    pub target_images: Tensor<T>,
}

/// Networks, optimizer state and iteration counter of one run.
#[derive(Clone, Debug)]
pub struct TrainState<T: Scalar> {
    pub config: TrainConfig,
    pub models: Models<T>,
    pub iteration: u64,
    sgd_e: Sgd<T>,
    sgd_l: Sgd<T>,
    adv_sgd_e: Sgd<T>,
    adv_sgd_l: Sgd<T>,
    adam_c: Adam<T>,
    adam_af: Adam<T>,
    adam_al: Adam<T>,
}

fn sgd<T: Scalar>(net: &Network<T>, lr: f64, c: &TrainConfig) -> Sgd<T> {
    Sgd::new(net.params(), lr, c.sgd_momentum, c.sgd_weight_decay)
}

fn adam<T: Scalar>(net: &Network<T>, lr: f64, c: &TrainConfig) -> Adam<T> {
    Adam::new(net.params(), lr, c.adam_beta1, c.adam_beta2)
}

fn finite_loss<T: Scalar>(g: &Graph<T>, loss: Var, t: u64, step: StepKind) -> Result<f64> {
    let v = g.value(loss).item().as_f64();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{step} loss {v} at iteration {t}")))
    }
}

/// Attach the step and iteration to a non-finite value error.
fn at_iteration(e: Error, step: StepKind, t: u64) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} in {step} at iteration {t}")),
        other => other,
    }
}

/// Running-statistic updates gathered from the forward passes of one step.
#[derive(Default)]
struct StepUpdates<T> {
    e: NormUpdates<T>,
    c: NormUpdates<T>,
    l: NormUpdates<T>,
    af: NormUpdates<T>,
    al: NormUpdates<T>,
}

/// `E1` and `E` activations of a source batch.
type FeatureCache<T> = (Tensor<T>, Tensor<T>);

/// Loss node of one objective, the bindings of the networks it trains, and
/// the nodes to cache for EQ1.
struct Objective {
    loss: Var,
    bound: Vec<crate::nn::Bound>,
    cache: Option<(Var, Var)>,
}

/// Refresh `net`'s gradient accumulators from a finished backward pass.
fn collect_grads<T: Scalar>(net: &mut Network<T>, g: &Graph<T>, b: &crate::nn::Bound) {
    net.zero_grads();
    net.accumulate_grads(g, b);
}

impl<T: Scalar + TypedAny> TrainState<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut models = Models::build(&config.profile, config.seed)?;
        models.set_mode(Mode::Train);
        let c = &config;
        Ok(TrainState {
            sgd_e: sgd(&models.extractor, c.lr_main, c),
            sgd_l: sgd(&models.labeler, c.lr_main, c),
            adv_sgd_e: sgd(&models.extractor, c.lr_label_adv, c),
            adv_sgd_l: sgd(&models.labeler, c.lr_label_adv, c),
            adam_c: adam(&models.compensator, c.lr_feature_adv, c),
            adam_af: adam(&models.feature_adversary, c.lr_feature_adv, c),
            adam_al: adam(&models.label_adversary, c.lr_label_adv, c),
            models,
            iteration: 0,
            config,
        })
    }

    /// Schedule of iteration `t` under this configuration.
    pub fn schedule(&self, t: u64) -> Vec<StepKind> {
        let b = self.config.branches;
        let mut s = vec![StepKind::P1];
        if b.feature {
            s.extend([StepKind::Eq2, StepKind::Eq1]);
        }
        if b.label && t.is_multiple_of(self.config.k_c) {
            s.extend([StepKind::Eq4, StepKind::Eq3]);
        }
        if b.compensated {
            s.push(StepKind::P2);
        }
        s
    }

    fn check_datasets(&self, source: &Dataset, target: &Dataset) -> Result<()> {
        let hw = self.config.profile.input_hw;
        for (name, ds) in [("source", source), ("target", target)] {
            if ds.is_empty() {
                return Err(Error::Dataset(format!("{name} dataset is empty")));
            }
            if ds.image_hw() != Some(hw) {
                return Err(Error::Dataset(format!(
                    "{name} images are {:?}, the profile expects {}×{}",
                    ds.image_hw(),
                    hw.0,
                    hw.1
                )));
            }
        }
        if !source.is_labeled() {
            return Err(Error::Dataset("source dataset must be fully labeled".into()));
        }
        Ok(())
    }

    /// Batches drawn at 1-based iteration `t`.
    pub fn batch(&self, source: &Dataset, target: &Dataset, t: u64) -> Result<IterationBatch<T>> {
        let b = self.config.batch_size;
        let seed = self.config.seed;
        let si = EpochSampler::new(source.len(), seed, SOURCE_SALT).batch(t, b);
        let ti = EpochSampler::new(target.len(), seed, TARGET_SALT).batch(t, b);
        Ok(IterationBatch {
            source_images: source.images(&si)?,
            source_labels: downsample_labels(&source.labels(&si)?, EXTRACTOR_STRIDE)?,
            target_images: target.images(&ti)?,
        })
    }

    /// Run iteration `iteration + 1` and return its audit records.
    pub fn step(&mut self, source: &Dataset, target: &Dataset) -> Result<Vec<StepRecord>> {
        self.check_datasets(source, target)?;
        let t = self.iteration + 1;
        let batch = self.batch(source, target, t)?;
        let mut records = Vec::new();
        let mut cache = None;
        for kind in self.schedule(t) {
            let (record, out) = self.apply_at(kind, &batch, cache.take(), t)?;
            cache = out;
            records.push(record);
        }
        self.iteration = t;
        Ok(records)
    }

    /// One update of `kind` on `batch`, outside the schedule; the iteration
    /// counter does not advance.
    pub fn apply(&mut self, kind: StepKind, batch: &IterationBatch<T>) -> Result<StepRecord> {
        Ok(self.apply_at(kind, batch, None, self.iteration + 1)?.0)
    }

    /// Value of the objective minimized by `kind` on `batch`, with batch
    /// statistics and no side effects.
    pub fn objective(&mut self, kind: StepKind, batch: &IterationBatch<T>) -> Result<f64> {
        Ok(self.run(kind, batch, None, self.iteration + 1, false)?.0)
    }

    fn apply_at(
        &mut self,
        kind: StepKind,
        batch: &IterationBatch<T>,
        cache: Option<FeatureCache<T>>,
        t: u64,
    ) -> Result<(StepRecord, Option<FeatureCache<T>>)> {
        let before = self.hashes();
        let (loss, out) = self.run(kind, batch, cache, t, true)?;
        let after = self.hashes();
        let changed = before.iter().zip(&after).filter(|(a, b)| a.1 != b.1).map(|(a, _)| a.0).collect();
        Ok((StepRecord { t, step: kind, loss, changed }, out))
    }

    fn hashes(&self) -> [(NetTag, u64); 5] {
        self.models.networks().map(|n| (n.tag(), n.param_hash()))
    }

    fn run(
        &mut self,
        kind: StepKind,
        b: &IterationBatch<T>,
        cache: Option<FeatureCache<T>>,
        t: u64,
        update: bool,
    ) -> Result<(f64, Option<FeatureCache<T>>)> {
        let mut g = Graph::new();
        let mut u = StepUpdates::default();
        let out = match kind {
            StepKind::P1 | StepKind::P2 => self.supervised(&mut g, &mut u, b, kind == StepKind::P2, update)?,
            StepKind::Eq2 => self.compensator_step(&mut g, &mut u, b, update)?,
            StepKind::Eq1 => self.feature_adversary_step(&mut g, &mut u, b, cache, update)?,
            StepKind::Eq4 => self.parser_adversarial_step(&mut g, &mut u, b, update)?,
            StepKind::Eq3 => self.label_adversary_step(&mut g, &mut u, b, update)?,
        };
        let loss = finite_loss(&g, out.loss, t, kind)?;
        if update {
            g.backward(out.loss)?;
            let m = &mut self.models;
            let at = |e| at_iteration(e, kind, t);
            match kind {
                StepKind::P1 | StepKind::P2 => {
                    collect_grads(&mut m.extractor, &g, &out.bound[0]);
                    collect_grads(&mut m.labeler, &g, &out.bound[1]);
                    self.sgd_e.step("E", m.extractor.params_mut()).map_err(at)?;
                    self.sgd_l.step("L", m.labeler.params_mut()).map_err(at)?;
                }
                StepKind::Eq4 => {
                    collect_grads(&mut m.extractor, &g, &out.bound[0]);
                    collect_grads(&mut m.labeler, &g, &out.bound[1]);
                    self.adv_sgd_e.step("E", m.extractor.params_mut()).map_err(at)?;
                    self.adv_sgd_l.step("L", m.labeler.params_mut()).map_err(at)?;
                }
                StepKind::Eq2 => {
                    collect_grads(&mut m.compensator, &g, &out.bound[0]);
                    self.adam_c.step("C", m.compensator.params_mut()).map_err(at)?;
                }
                StepKind::Eq1 => {
                    collect_grads(&mut m.feature_adversary, &g, &out.bound[0]);
                    self.adam_af.step("A_f", m.feature_adversary.params_mut()).map_err(at)?;
                }
                StepKind::Eq3 => {
                    collect_grads(&mut m.label_adversary, &g, &out.bound[0]);
                    self.adam_al.step("A_l", m.label_adversary.params_mut()).map_err(at)?;
                }
            }
            if matches!(kind, StepKind::P1 | StepKind::P2) || self.config.adversarial_bn_updates {
                m.extractor.commit_norm_updates(u.e);
                m.compensator.commit_norm_updates(u.c);
                m.labeler.commit_norm_updates(u.l);
                m.feature_adversary.commit_norm_updates(u.af);
                m.label_adversary.commit_norm_updates(u.al);
            }
        }
        let cache = out.cache.map(|(prefix, plain)| (g.value(prefix).clone(), g.value(plain).clone()));
        Ok((loss, cache))
    }

    /// P1 (plain) or P2 (compensated, C frozen but differentiated through).
    fn supervised(
        &self,
        g: &mut Graph<T>,
        u: &mut StepUpdates<T>,
        b: &IterationBatch<T>,
        compensated: bool,
        update: bool,
    ) -> Result<Objective> {
        let m = &self.models;
        let eb = m.extractor.bind(g, update);
        let lb = m.labeler.bind(g, update);
        let x = g.constant(b.source_images.clone());
        let feat = if compensated {
            let cb = m.compensator.bind(g, false);
            forward_compensated(g, (&m.extractor, &eb), (&m.compensator, &cb), x, &mut u.e, &mut u.c)?.compensated
        } else {
            m.extractor.forward(g, &eb, x, &mut u.e)?
        };
        let scores = m.labeler.forward(g, &lb, feat, &mut u.l)?;
        let loss = pixelwise_cross_entropy(g, scores, &b.source_labels, None)?;
        Ok(Objective { loss, bound: vec![eb, lb], cache: None })
    }

    /// EQ2. Also exposes the `E1` and `E` activations of the source batch,
    /// which EQ1 reuses since E does not change in between.
    fn compensator_step(
        &self,
        g: &mut Graph<T>,
        u: &mut StepUpdates<T>,
        b: &IterationBatch<T>,
        update: bool,
    ) -> Result<Objective> {
        let m = &self.models;
        let eb = m.extractor.bind(g, false);
        let cb = m.compensator.bind(g, update);
        let fb = m.feature_adversary.bind(g, false);
        let x = g.constant(b.source_images.clone());
        let f = forward_compensated(g, (&m.extractor, &eb), (&m.compensator, &cb), x, &mut u.e, &mut u.c)?;
        let d = m.feature_adversary.forward(g, &fb, f.compensated, &mut u.af)?;
        let loss = loss_compensator(g, d);
        Ok(Objective { loss, bound: vec![cb], cache: Some((f.prefix, f.plain)) })
    }

    /// EQ1 on detached target features and detached compensated source features.
    fn feature_adversary_step(
        &self,
        g: &mut Graph<T>,
        u: &mut StepUpdates<T>,
        b: &IterationBatch<T>,
        cache: Option<FeatureCache<T>>,
        update: bool,
    ) -> Result<Objective> {
        let m = &self.models;
        let eb = m.extractor.bind(g, false);
        let cb = m.compensator.bind(g, false);
        let fb = m.feature_adversary.bind(g, update);
        let (prefix, plain) = match cache {
            Some((prefix, plain)) => (g.constant(prefix), g.constant(plain)),
            None => {
                let x = g.constant(b.source_images.clone());
                let prefix = m.extractor.forward_prefix(g, &eb, x, &mut u.e)?;
                let plain = m.extractor.forward_suffix(g, &eb, prefix, &mut u.e)?;
                (prefix, plain)
            }
        };
        let correction = m.compensator.forward(g, &cb, prefix, &mut u.c)?;
        let comp = g.add(plain, correction)?;
        let comp = g.detach(comp);
        let tx = g.constant(b.target_images.clone());
        let target_feat = m.extractor.forward(g, &eb, tx, &mut u.e)?;
        let target_feat = g.detach(target_feat);
        let d_target = m.feature_adversary.forward(g, &fb, target_feat, &mut u.af)?;
        let d_comp = m.feature_adversary.forward(g, &fb, comp, &mut u.af)?;
        let loss = loss_feature_adversary(g, d_target, d_comp)?;
        Ok(Objective { loss, bound: vec![fb], cache: None })
    }

    /// EQ4: E and L pushed toward target predictions that A_l scores as ground truth.
    fn parser_adversarial_step(
        &self,
        g: &mut Graph<T>,
        u: &mut StepUpdates<T>,
        b: &IterationBatch<T>,
        update: bool,
    ) -> Result<Objective> {
        let m = &self.models;
        let eb = m.extractor.bind(g, update);
        let lb = m.labeler.bind(g, update);
        let ab = m.label_adversary.bind(g, false);
        let tx = g.constant(b.target_images.clone());
        let feat = m.extractor.forward(g, &eb, tx, &mut u.e)?;
        let scores = m.labeler.forward(g, &lb, feat, &mut u.l)?;
        let probs = g.softmax(scores)?;
        let d = m.label_adversary.forward(g, &ab, probs, &mut u.al)?;
        let loss = loss_parser_adversarial(g, d);
        Ok(Objective { loss, bound: vec![eb, lb], cache: None })
    }

    /// EQ3: A_l separates one-hot source labels from detached target predictions.
    fn label_adversary_step(
        &self,
        g: &mut Graph<T>,
        u: &mut StepUpdates<T>,
        b: &IterationBatch<T>,
        update: bool,
    ) -> Result<Objective> {
        let m = &self.models;
        let eb = m.extractor.bind(g, false);
        let lb = m.labeler.bind(g, false);
        let ab = m.label_adversary.bind(g, update);
        let tx = g.constant(b.target_images.clone());
        let feat = m.extractor.forward(g, &eb, tx, &mut u.e)?;
        let scores = m.labeler.forward(g, &lb, feat, &mut u.l)?;
        let probs = g.softmax(scores)?;
        let probs = g.detach(probs);
        let gt = g.constant(one_hot(&b.source_labels, m.profile.num_classes)?);
        let d_gt = m.label_adversary.forward(g, &ab, gt, &mut u.al)?;
        let d_pred = m.label_adversary.forward(g, &ab, probs, &mut u.al)?;
        let loss = loss_label_adversary(g, d_gt, d_pred)?;
        Ok(Objective { loss, bound: vec![ab], cache: None })
    }

    /// Parameters, running statistics, optimizer state and iteration counter.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        save_models(&mut ckpt, &self.models);
        ckpt.put_u64(ITERATION_RECORD, self.iteration);
        let m = &self.models;
        self.sgd_e.save(&mut ckpt, "opt/sgd/E", m.extractor.params());
        self.sgd_l.save(&mut ckpt, "opt/sgd/L", m.labeler.params());
        self.adv_sgd_e.save(&mut ckpt, "opt/adv_sgd/E", m.extractor.params());
        self.adv_sgd_l.save(&mut ckpt, "opt/adv_sgd/L", m.labeler.params());
        self.adam_c.save(&mut ckpt, "opt/adam/C", m.compensator.params());
        self.adam_af.save(&mut ckpt, "opt/adam/A_f", m.feature_adversary.params());
        self.adam_al.save(&mut ckpt, "opt/adam/A_l", m.label_adversary.params());
        ckpt
    }

    /// Resume from a checkpoint written by [`to_checkpoint`](Self::to_checkpoint);
    /// its profile must match `config.profile`.
    pub fn from_checkpoint(config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut state = Self::new(config)?;
        let stored = ckpt.get_text(PROFILE_RECORD)?;
        if stored != state.config.profile.to_text() {
            return Err(Error::InvalidConfig("checkpoint profile differs from the configured profile".into()));
        }
        let mut models: Models<T> = load_models(ckpt)?;
        models.set_mode(Mode::Train);
        state.models = models;
        state.iteration = ckpt.get_u64(ITERATION_RECORD)?;
        let m = &state.models;
        state.sgd_e.load(ckpt, "opt/sgd/E", m.extractor.params())?;
        state.sgd_l.load(ckpt, "opt/sgd/L", m.labeler.params())?;
        state.adv_sgd_e.load(ckpt, "opt/adv_sgd/E", m.extractor.params())?;
        state.adv_sgd_l.load(ckpt, "opt/adv_sgd/L", m.labeler.params())?;
        state.adam_c.load(ckpt, "opt/adam/C", m.compensator.params())?;
        state.adam_af.load(ckpt, "opt/adam/A_f", m.feature_adversary.params())?;
        state.adam_al.load(ckpt, "opt/adam/A_l", m.label_adversary.params())?;
        Ok(state)
    }
}

/// Step until `state.iteration == until`, calling `observer` after every
/// iteration with the state and that iteration's records.
pub fn run_training<T, F>(
    state: &mut TrainState<T>,
    source: &Dataset,
    target: &Dataset,
    until: u64,
    mut observer: F,
) -> Result<()>
where
    T: Scalar + TypedAny,
    F: FnMut(&TrainState<T>, &[StepRecord]) -> Result<()>,
{
    while state.iteration < until {
        let records = state.step(source, target)?;
        observer(state, &records)?;
    }
    Ok(())
}
