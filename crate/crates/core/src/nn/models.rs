//! Builders for `E`, `C`, `L`, `A_f`, `A_l` and the two composite forward paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::network::{Block, Init, Mode, NetBuilder, Network, NormUpdates};
use crate::nn::profile::ScaleProfile;
use crate::scalar::Scalar;
use crate::tensor::{Activation, ConvParams, Graph, NetTag, OpTrace, PoolParams, Tensor, Var};

/// Standard deviation of the normal init used by networks without a pretrained stand-in.
pub const ADVERSARIAL_INIT_STD: f64 = 0.02;
pub const LABEL_ADV_SLOPE: f64 = 0.2;

const DOWN: PoolParams = PoolParams { window: 2, stride: 2, padding: 0, ceil_mode: true };
const KEEP: PoolParams = PoolParams { window: 3, stride: 1, padding: 1, ceil_mode: true };

/// Feature extractor `E`: five 3×3 conv stages with ReLU. Stages 1–3 end in a
/// stride-2 pool, stages 4–5 in a stride-1 pool, and stage 5 convolutions use
/// dilation 2. The split point follows the first pool.
pub fn build_extractor<T: Scalar, R: Rng>(profile: &ScaleProfile, rng: &mut R) -> Result<Network<T>> {
    profile.validate()?;
    let mut b = NetBuilder::new(NetTag::Extractor, 3, rng);
    let mut cin = 3;
    for stage in 0..5 {
        let cout = profile.stage_channels[stage];
        let dilation = if stage == 4 { 2 } else { 1 };
        for j in 0..profile.convs_per_stage[stage] {
            let u = b.unit(
                &format!("conv{}_{}", stage + 1, j + 1),
                cin,
                cout,
                3,
                ConvParams::same(3, dilation),
                Init::He,
                false,
                Some(Activation::Relu),
            );
            b.push(Block::Unit(u));
            cin = cout;
        }
        b.push(Block::Pool(if stage < 3 { DOWN } else { KEEP }));
        if stage == 0 {
            b.mark_split();
        }
    }
    Ok(b.finish())
}

/// Compensation network `C`: a 7×7 stem, then groups of three residual
/// blocks, each group closed by a stride-2 pool and a 3×3 conv. The last
/// group's conv is the output layer and emits `stage_channels[4]` channels.
pub fn build_compensator<T: Scalar, R: Rng>(profile: &ScaleProfile, rng: &mut R) -> Result<Network<T>> {
    profile.validate()?;
    let init = Init::Normal(ADVERSARIAL_INIT_STD);
    let cin = profile.stage_channels[0];
    let mut ch = profile.comp_base_channels;
    let mut b = NetBuilder::new(NetTag::Compensator, cin, rng);
    let stem = b.unit("stem", cin, ch, 7, ConvParams::new(1, 1, 3), init, true, Some(Activation::Relu));
    b.push(Block::Unit(stem));
    let groups = profile.num_residual_blocks / 3;
    let mut block_no = 0;
    for gi in 0..groups {
        for _ in 0..3 {
            block_no += 1;
            let name = format!("block{block_no}");
            let first =
                b.unit(&format!("{name}.conv1"), ch, ch, 3, ConvParams::same(3, 1), init, true, Some(Activation::Relu));
            let second = b.unit(&format!("{name}.conv2"), ch, ch, 3, ConvParams::same(3, 1), init, true, None);
            b.push(Block::Residual(first, second));
        }
        b.push(Block::Pool(DOWN));
        if gi + 1 == groups {
            let out = profile.stage_channels[4];
            let u = b.unit("final", ch, out, 3, ConvParams::same(3, 1), init, false, None);
            b.push(Block::Unit(u));
        } else {
            let u = b.unit(
                &format!("transition{}", gi + 1),
                ch,
                ch * 2,
                3,
                ConvParams::same(3, 1),
                init,
                true,
                Some(Activation::Relu),
            );
            b.push(Block::Unit(u));
            ch *= 2;
        }
    }
    Ok(b.finish())
}

/// Pixel-wise labeler `L`: fc6 (3×3, dilation 4), fc7 (1×1), fc8 (1×1 to class scores).
pub fn build_labeler<T: Scalar, R: Rng>(profile: &ScaleProfile, rng: &mut R) -> Result<Network<T>> {
    profile.validate()?;
    let cin = profile.stage_channels[4];
    let hc = profile.head_channels;
    let mut b = NetBuilder::new(NetTag::Labeler, cin, rng);
    let fc6 = b.unit("fc6", cin, hc, 3, ConvParams::same(3, 4), Init::He, false, Some(Activation::Relu));
    let fc7 = b.unit("fc7", hc, hc, 1, ConvParams::same(1, 1), Init::He, false, Some(Activation::Relu));
    let fc8 = b.unit("fc8", hc, profile.num_classes, 1, ConvParams::same(1, 1), Init::He, false, None);
    for u in [fc6, fc7, fc8] {
        b.push(Block::Unit(u));
    }
    Ok(b.finish())
}

/// Feature adversary `A_f`: one dilated 3×3 + 1×1 branch per ASPP rate,
/// summed, then a 3×3 conv to a single-channel map of the input's size.
pub fn build_feature_adversary<T: Scalar, R: Rng>(profile: &ScaleProfile, rng: &mut R) -> Result<Network<T>> {
    profile.validate()?;
    let init = Init::Normal(ADVERSARIAL_INIT_STD);
    let cin = profile.stage_channels[4];
    let hc = profile.head_channels;
    let mut b = NetBuilder::new(NetTag::FeatureAdversary, cin, rng);
    let mut branches = Vec::new();
    for &d in &profile.aspp_dilations {
        let fc6 =
            b.unit(&format!("aspp{d}.fc6"), cin, hc, 3, ConvParams::same(3, d), init, false, Some(Activation::Relu));
        let fc7 =
            b.unit(&format!("aspp{d}.fc7"), hc, hc, 1, ConvParams::same(1, 1), init, false, Some(Activation::Relu));
        branches.push(vec![fc6, fc7]);
    }
    b.push(Block::Branches(branches));
    let out = b.unit("out", hc, 1, 3, ConvParams::same(3, 1), init, false, None);
    b.push(Block::Unit(out));
    Ok(b.finish())
}

/// Structured label adversary `A_l`: 5×5 stride-2 convs with batch norm and
/// LeakyReLU, then a 5×5 stride-1 conv to a one-channel confidence map.
pub fn build_label_adversary<T: Scalar, R: Rng>(profile: &ScaleProfile, rng: &mut R) -> Result<Network<T>> {
    profile.validate()?;
    let init = Init::Normal(ADVERSARIAL_INIT_STD);
    let mut b = NetBuilder::new(NetTag::LabelAdversary, profile.num_classes, rng);
    let mut cin = profile.num_classes;
    for i in 0..profile.label_adv_stride2_layers {
        let cout = profile.label_adv_base_channels << i.min(16);
        let u = b.unit(
            &format!("conv{}", i + 1),
            cin,
            cout,
            5,
            ConvParams::new(2, 1, 2),
            init,
            true,
            Some(Activation::LeakyRelu(LABEL_ADV_SLOPE)),
        );
        b.push(Block::Unit(u));
        cin = cout;
    }
    let out = b.unit("out", cin, 1, 5, ConvParams::new(1, 1, 2), init, false, None);
    b.push(Block::Unit(out));
    Ok(b.finish())
}

/// The five networks of one training run.
#[derive(Clone, Debug)]
pub struct Models<T: Scalar> {
    pub profile: ScaleProfile,
    pub extractor: Network<T>,
    pub compensator: Network<T>,
    pub labeler: Network<T>,
    pub feature_adversary: Network<T>,
    pub label_adversary: Network<T>,
}

impl<T: Scalar> Models<T> {
    /// Build all five networks from one seeded stream, in the order E, C, L, A_f, A_l.
    pub fn build(profile: &ScaleProfile, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Models {
            profile: profile.clone(),
            extractor: build_extractor(profile, &mut rng)?,
            compensator: build_compensator(profile, &mut rng)?,
            labeler: build_labeler(profile, &mut rng)?,
            feature_adversary: build_feature_adversary(profile, &mut rng)?,
            label_adversary: build_label_adversary(profile, &mut rng)?,
        })
    }

    pub fn networks(&self) -> [&Network<T>; 5] {
        [&self.extractor, &self.compensator, &self.labeler, &self.feature_adversary, &self.label_adversary]
    }

    pub fn networks_mut(&mut self) -> [&mut Network<T>; 5] {
        [
            &mut self.extractor,
            &mut self.compensator,
            &mut self.labeler,
            &mut self.feature_adversary,
            &mut self.label_adversary,
        ]
    }

    pub fn get(&self, tag: NetTag) -> Option<&Network<T>> {
        self.networks().into_iter().find(|n| n.tag() == tag)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for n in self.networks_mut() {
            n.set_mode(mode);
        }
    }

    /// Check an image batch against the profile's input size.
    pub fn check_image_dims(&self, dims: &[usize]) -> Result<()> {
        let (h, w) = self.profile.input_hw;
        match dims {
            [_, 3, ih, iw] if *ih == h && *iw == w => Ok(()),
            _ => {
                Err(Error::shape("forward_parse", format!("image dims {dims:?} do not match the expected N×3×{h}×{w}")))
            }
        }
    }

    /// Class probabilities `softmax(L(E(image)))` per pixel, computed with
    /// the extractor and labeler only. Both must be in eval mode.
    pub fn forward_parse(&self, image: &Tensor<T>) -> Result<(Tensor<T>, OpTrace)> {
        forward_parse(&self.extractor, &self.labeler, image, &self.profile)
    }
}

pub fn forward_parse<T: Scalar>(
    extractor: &Network<T>,
    labeler: &Network<T>,
    image: &Tensor<T>,
    profile: &ScaleProfile,
) -> Result<(Tensor<T>, OpTrace)> {
    for n in [extractor, labeler] {
        if n.mode() != Mode::Eval {
            return Err(Error::InvalidArgument(format!("forward_parse needs {} in eval mode", n.tag())));
        }
    }
    let (h, w) = profile.input_hw;
    match image.dims() {
        [_, 3, ih, iw] if *ih == h && *iw == w => {}
        d => {
            return Err(Error::shape(
                "forward_parse",
                format!("image dims {d:?} do not match the expected N×3×{h}×{w}"),
            ))
        }
    }
    let mut g = Graph::<T>::new();
    let mut upd = NormUpdates::default();
    let eb = extractor.bind(&mut g, false);
    let lb = labeler.bind(&mut g, false);
    let x = g.constant(image.clone());
    let feat = extractor.forward(&mut g, &eb, x, &mut upd)?;
    let scores = labeler.forward(&mut g, &lb, feat, &mut upd)?;
    let probs = g.softmax(scores)?;
    Ok((g.value(probs).clone(), g.trace().clone()))
}

/// Nodes produced by [`forward_compensated`].
#[derive(Clone, Copy, Debug)]
pub struct CompensatedFeatures {
    pub prefix: Var,
    pub plain: Var,
    pub correction: Var,
    pub compensated: Var,
}

/// `E(x) + C(E1(x))`, with the `E1` activations computed once and shared.
pub fn forward_compensated<T: Scalar>(
    g: &mut Graph<T>,
    extractor: (&Network<T>, &crate::nn::Bound),
    compensator: (&Network<T>, &crate::nn::Bound),
    x: Var,
    upd_e: &mut NormUpdates<T>,
    upd_c: &mut NormUpdates<T>,
) -> Result<CompensatedFeatures> {
    let (e, eb) = extractor;
    let (c, cb) = compensator;
    let prefix = e.forward_prefix(g, eb, x, upd_e)?;
    let plain = e.forward_suffix(g, eb, prefix, upd_e)?;
    let correction = c.forward(g, cb, prefix, upd_c)?;
    if g.dims(correction) != g.dims(plain) {
        return Err(Error::shape(
            "forward_compensated",
            format!("compensator output {:?} does not match extractor output {:?}", g.dims(correction), g.dims(plain)),
        ));
    }
    let compensated = g.add(plain, correction)?;
    Ok(CompensatedFeatures { prefix, plain, correction, compensated })
}

/// Per-pixel argmax over classes (first maximum on ties) of an `N × K × h × w` map.
pub fn argmax_classes<T: Scalar>(probs: &Tensor<T>) -> Result<Tensor<u8>> {
    let [n, k, h, w] = probs.dims4("argmax")?;
    let hw = h * w;
    let d = probs.data();
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if d[(b * k + c) * hw + p] > d[(b * k + best) * hw + p] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    Tensor::new(vec![n, h, w], out)
}

/// Nearest-neighbor upsampling of `N × h × w` class maps by `stride`, cropped to `H × W`.
pub fn upsample_labels(labels: &Tensor<u8>, stride: usize, (h, w): (usize, usize)) -> Result<Tensor<u8>> {
    let (n, lh, lw) = match labels.dims() {
        [n, lh, lw] => (*n, *lh, *lw),
        d => return Err(Error::shape("upsample_labels", format!("expected N×h×w, got {d:?}"))),
    };
    if lh * stride < h || lw * stride < w {
        return Err(Error::shape("upsample_labels", format!("{lh}×{lw} at stride {stride} does not cover {h}×{w}")));
    }
    let src = labels.data();
    let mut out = Vec::with_capacity(n * h * w);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                out.push(src[(b * lh + y / stride) * lw + x / stride]);
            }
        }
    }
    Tensor::new(vec![n, h, w], out)
}

/// Nearest-neighbor downsampling of `N × H × W` class maps to the stride-`stride`
/// grid, sampling each cell's center pixel.
pub fn downsample_labels(labels: &Tensor<u8>, stride: usize) -> Result<Tensor<u8>> {
    let (n, h, w) = match labels.dims() {
        [n, h, w] => (*n, *h, *w),
        d => return Err(Error::shape("downsample_labels", format!("expected N×H×W, got {d:?}"))),
    };
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let src = labels.data();
    let mut out = Vec::with_capacity(n * oh * ow);
    for b in 0..n {
        for i in 0..oh {
            let y = (i * stride + stride / 2).min(h - 1);
            for j in 0..ow {
                let x = (j * stride + stride / 2).min(w - 1);
                out.push(src[(b * h + y) * w + x]);
            }
        }
    }
    Tensor::new(vec![n, oh, ow], out)
}

/// One-hot `N × K × h × w` encoding of class maps.
pub fn one_hot<T: Scalar>(labels: &Tensor<u8>, classes: usize) -> Result<Tensor<T>> {
    let (n, h, w) = match labels.dims() {
        [n, h, w] => (*n, *h, *w),
        d => return Err(Error::shape("one_hot", format!("expected N×h×w, got {d:?}"))),
    };
    let hw = h * w;
    let mut out = vec![T::zero(); n * classes * hw];
    for b in 0..n {
        for p in 0..hw {
            let c = labels.data()[b * hw + p] as usize;
            if c >= classes {
                return Err(Error::shape("one_hot", format!("class id {c} is not below {classes}")));
            }
            out[(b * classes + c) * hw + p] = T::one();
        }
    }
    Tensor::new(vec![n, classes, h, w], out)
}
