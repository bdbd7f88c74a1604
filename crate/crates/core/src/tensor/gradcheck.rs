//! Central finite-difference oracle for graph gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub tolerance: f64,
    pub epsilon: f64,
    /// Coordinates checked per parameter tensor (all of them when fewer exist).
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Multiply analytic gradients by this factor before comparing.
    pub gradient_fault: Option<f64>,
    /// Retry coordinates whose ±ε perturbation changes a pool argmax or an
    /// activation sign at ε/10 and ε/100, then skip them, drawing
    /// replacements until enough are checked.
    pub skip_kinks: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            tolerance: 1e-4,
            epsilon: 1e-3,
            samples_per_tensor: 50,
            seed: 0,
            gradient_fault: None,
            skip_kinks: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub index: usize,
    pub checked: usize,
    /// Coordinates rejected because every perturbation size crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
    pub tensors: Vec<TensorCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compare backward gradients of a scalar-valued graph with central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`.
///
/// `build` receives a fresh 64-bit graph plus one leaf per entry of `params`
/// and must return the scalar loss. It is called once for the analytic pass
/// and twice per checked coordinate.
pub fn grad_check<F>(params: &[Tensor<f64>], mut build: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::<f64>::new();
    let leaves: Vec<Var> = params.iter().map(|p| graph.param(p.clone())).collect();
    let loss = build(&mut graph, &leaves)?;
    let base_signature = graph.branch_signature();
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(params)
        .map(|(v, p)| graph.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut eval = |perturbed: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| g.constant(p.clone())).collect();
        let l = build(&mut g, &vars)?;
        Ok((g.value(l).item(), g.branch_signature()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut tensors = Vec::with_capacity(params.len());
    for (ti, p) in params.iter().enumerate() {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.shuffle(&mut rng);
        let mut worst = (0.0f64, 0usize);
        let (mut checked, mut skipped) = (0, 0);
        for &i in &order {
            if checked == cfg.samples_per_tensor {
                break;
            }
            let orig = p.data()[i];
            let mut numeric = None;
            for eps in [cfg.epsilon, cfg.epsilon / 10.0, cfg.epsilon / 100.0] {
                work[ti].data_mut()[i] = orig + eps;
                let (plus, sig_plus) = eval(&work)?;
                work[ti].data_mut()[i] = orig - eps;
                let (minus, sig_minus) = eval(&work)?;
                work[ti].data_mut()[i] = orig;
                if !cfg.skip_kinks || (sig_plus == base_signature && sig_minus == base_signature) {
                    numeric = Some((plus - minus) / (2.0 * eps));
                    break;
                }
            }
            let Some(numeric) = numeric else {
                skipped += 1;
                continue;
            };
            checked += 1;
            let a = analytic[ti][i] * cfg.gradient_fault.unwrap_or(1.0);
            let err = relative_error(a, numeric);
            if err > worst.0 || !err.is_finite() {
                worst = (err, i);
            }
        }
        tensors.push(TensorCheck { index: ti, checked, skipped, max_rel_error: worst.0, worst: worst.1 });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    let pass = max_rel_error.is_finite() && max_rel_error <= cfg.tolerance && tensors.iter().all(|t| t.checked > 0);
    Ok(GradCheckReport { max_rel_error, pass, tensors })
}
