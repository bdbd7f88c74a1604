//! Finite-difference sweeps over randomly configured primitives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{grad_check, Activation, ConvParams, GradCheckConfig, Graph, NormStats, PoolParams, Tensor, Var};

/// Outcome of every random configuration of one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub cases: usize,
    pub passed: usize,
    pub max_rel_error: f64,
}

impl PrimitiveCheck {
    pub fn pass(&self) -> bool {
        self.cases > 0 && self.passed == self.cases
    }
}

pub const PRIMITIVES: [&str; 10] = [
    "conv2d",
    "max_pool2d",
    "batch_norm2d_batch",
    "batch_norm2d_running",
    "relu",
    "leaky_relu",
    "add",
    "softmax",
    "cross_entropy",
    "least_squares",
];

/// Weighted sum of `y` against fixed random weights, so every output matters.
fn project(g: &mut Graph<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = g.constant(w.clone());
    let m = g.mul(y, wv)?;
    Ok(g.sum(m))
}

/// Run `cases` random configurations of every primitive in [`PRIMITIVES`].
pub fn check_primitives(cfg: &GradCheckConfig, cases: usize) -> Result<Vec<PrimitiveCheck>> {
    let mut out = Vec::with_capacity(PRIMITIVES.len());
    for (pi, name) in PRIMITIVES.into_iter().enumerate() {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1000 * pi as u64));
        let mut result = PrimitiveCheck { name, cases, passed: 0, max_rel_error: 0.0 };
        for _ in 0..cases {
            let case_cfg = GradCheckConfig { seed: r.gen(), ..cfg.clone() };
            let report = check_case(name, &mut r, &case_cfg)?;
            if report.pass {
                result.passed += 1;
            }
            result.max_rel_error = result.max_rel_error.max(report.max_rel_error);
        }
        out.push(result);
    }
    Ok(out)
}

fn check_case(name: &str, r: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<crate::tensor::GradCheckReport> {
    match name {
        "conv2d" => {
            let (n, cin, cout) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
            let k: usize = [1, 3, 5][r.gen_range(0..3)];
            let p = ConvParams::new(r.gen_range(1..3), r.gen_range(1..3), r.gen_range(0..3));
            let span = p.dilation * (k - 1) + 1;
            let lo = span.saturating_sub(2 * p.padding).max(1);
            let (h, w) = (r.gen_range(lo..span + 5), r.gen_range(lo..span + 5));
            let x = Tensor::randn(&[n, cin, h, w], 1.0, r);
            let kt = Tensor::randn(&[cout, cin, k, k], 1.0, r);
            let b = Tensor::randn(&[cout], 1.0, r);
            let mut g0 = Graph::<f64>::new();
            let (xv, kv) = (g0.constant(x.clone()), g0.constant(kt.clone()));
            let y0 = g0.conv2d(xv, kv, None, p)?;
            let wt = Tensor::randn(g0.dims(y0), 1.0, r);
            grad_check(
                &[x, kt, b],
                |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), p)?;
                    project(g, y, &wt)
                },
                cfg,
            )
        }
        "max_pool2d" => {
            let window = r.gen_range(1..4);
            let p = PoolParams {
                window,
                stride: r.gen_range(1..3),
                padding: r.gen_range(0..=window / 2),
                ceil_mode: r.gen_bool(0.5),
            };
            let (h, w) = (r.gen_range(window..window + 6), r.gen_range(window..window + 6));
            let x = Tensor::randn(&[2, 2, h, w], 1.0, r);
            let mut g0 = Graph::<f64>::new();
            let xv = g0.constant(x.clone());
            let y0 = g0.max_pool2d(xv, p)?;
            let wt = Tensor::randn(g0.dims(y0), 1.0, r);
            grad_check(
                &[x],
                |g, v| {
                    let y = g.max_pool2d(v[0], p)?;
                    project(g, y, &wt)
                },
                cfg,
            )
        }
        "batch_norm2d_batch" | "batch_norm2d_running" => {
            let (n, c, h, w) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(2..5), r.gen_range(2..5));
            let x = Tensor::randn(&[n, c, h, w], 2.0, r);
            let gamma = Tensor::uniform(&[c], 0.5, 1.5, r);
            let beta = Tensor::randn(&[c], 1.0, r);
            let mean = Tensor::<f64>::randn(&[c], 0.5, r);
            let var = Tensor::<f64>::uniform(&[c], 0.5, 1.5, r);
            let wt = Tensor::randn(&[n, c, h, w], 1.0, r);
            let running = name == "batch_norm2d_running";
            grad_check(
                &[x, gamma, beta],
                |g, v| {
                    let stats = if running {
                        NormStats::Running { mean: mean.data(), var: var.data() }
                    } else {
                        NormStats::Batch
                    };
                    let (y, _) = g.batch_norm2d(v[0], v[1], v[2], stats, 1e-5)?;
                    project(g, y, &wt)
                },
                cfg,
            )
        }
        "relu" | "leaky_relu" => {
            let kind = if name == "relu" { Activation::Relu } else { Activation::LeakyRelu(r.gen_range(0.05..0.5)) };
            let dims = [r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..5), r.gen_range(1..5)];
            let x = Tensor::randn(&dims, 1.0, r);
            let wt = Tensor::randn(&dims, 1.0, r);
            grad_check(
                &[x],
                |g, v| {
                    let y = g.activation(v[0], kind)?;
                    project(g, y, &wt)
                },
                cfg,
            )
        }
        "add" => {
            let dims = [r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..5), r.gen_range(1..5)];
            let (a, b, wt) = (Tensor::randn(&dims, 1.0, r), Tensor::randn(&dims, 1.0, r), Tensor::randn(&dims, 1.0, r));
            grad_check(
                &[a, b],
                |g, v| {
                    let y = g.add(v[0], v[1])?;
                    project(g, y, &wt)
                },
                cfg,
            )
        }
        "softmax" | "cross_entropy" | "least_squares" => {
            let k = r.gen_range(2..6);
            let dims = [r.gen_range(1..3), k, r.gen_range(1..4), r.gen_range(1..4)];
            let s = Tensor::randn(&dims, 1.5, r);
            let wt = Tensor::randn(&dims, 1.0, r);
            let labels = Tensor::<u8>::new(
                vec![dims[0], dims[2], dims[3]],
                (0..dims[0] * dims[2] * dims[3]).map(|_| r.gen_range(0..k) as u8).collect(),
            )?;
            let target = r.gen_range(-1.0..1.0);
            grad_check(
                &[s],
                |g, v| match name {
                    "softmax" => {
                        let p = g.softmax(v[0])?;
                        project(g, p, &wt)
                    }
                    "cross_entropy" => g.cross_entropy(v[0], &labels, None),
                    _ => Ok(g.least_squares(v[0], target)),
                },
                cfg,
            )
        }
        _ => unreachable!("unknown primitive {name}"),
    }
}
