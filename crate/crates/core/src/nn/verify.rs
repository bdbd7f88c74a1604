//! Finite-difference checks of whole networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{Mode, Models, Network, NormUpdates, ScaleProfile};
use crate::tensor::{grad_check, GradCheckConfig, GradCheckReport, NetTag, Tensor};

/// Input sizes for the network checks: small enough that few perturbations
/// cross a ReLU or pooling kink, large enough to exercise every layer.
pub fn check_input_dims(profile: &ScaleProfile) -> [(NetTag, [usize; 4]); 5] {
    let sc = profile.stage_channels;
    [
        (NetTag::Extractor, [1, 3, 9, 9]),
        (NetTag::Compensator, [1, sc[0], 9, 9]),
        (NetTag::Labeler, [2, sc[4], 4, 4]),
        (NetTag::FeatureAdversary, [2, sc[4], 4, 4]),
        (NetTag::LabelAdversary, [2, profile.num_classes, 7, 4]),
    ]
}

/// Check a random-weighted sum of the output of `net` against every parameter.
pub fn check_network(net: &Network<f64>, input: [usize; 4], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = Tensor::<f64>::uniform(&input, 0.0, 1.0, &mut r);
    let weights = Tensor::<f64>::randn(&net.output_dims(input)?, 1.0, &mut r);
    let params: Vec<Tensor<f64>> = net.params().iter().map(|p| p.value.clone()).collect();
    grad_check(
        &params,
        |g, vars| {
            let b = net.bind_vars(vars.to_vec())?;
            let xv = g.constant(x.clone());
            let y = net.forward(g, &b, xv, &mut NormUpdates::default())?;
            let wv = g.constant(weights.clone());
            let m = g.mul(y, wv)?;
            Ok(g.sum(m))
        },
        cfg,
    )
}

/// Check all five networks of `profile` in 64-bit. Networks run in eval mode
/// with randomized running statistics, under which batch norm is a
/// per-channel affine map.
pub fn check_all_networks(profile: &ScaleProfile, cfg: &GradCheckConfig) -> Result<Vec<(NetTag, GradCheckReport)>> {
    let mut m = Models::<f64>::build(profile, cfg.seed)?;
    m.set_mode(Mode::Eval);
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    for net in m.networks_mut() {
        for n in net.norms_mut() {
            n.running_mean = Tensor::randn(n.running_mean.dims(), 0.1, &mut r);
            n.running_var = Tensor::uniform(n.running_var.dims(), 0.5, 1.5, &mut r);
        }
    }
    check_input_dims(profile)
        .into_iter()
        .map(|(tag, dims)| {
            let net = m.get(tag).expect("all five networks are built");
            Ok((tag, check_network(net, dims, cfg)?))
        })
        .collect()
}
