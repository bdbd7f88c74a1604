//! Acceptance suite: prints one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 6 decide the exit status. Criterion 7 is measured and
//! printed like the others but only fails the process when
//! `ACCEPTANCE_STRICT=1`; criterion 8 is a report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use adaptseg::data::{generate_domain, Dataset, Domain, SceneParams, ShiftParams};
use adaptseg::metrics::{compute_metrics, confusion_counts, MetricReport};
use adaptseg::nn::checkpoint::{load_models, Checkpoint};
use adaptseg::nn::verify::check_all_networks;
use adaptseg::nn::ScaleProfile;
use adaptseg::tensor::{check_primitives, GradCheckConfig, Graph, PRIMITIVES};
use adaptseg::train::losses::{
    loss_compensator, loss_feature_adversary, loss_label_adversary, loss_parser_adversarial, pixelwise_cross_entropy,
};
use adaptseg::train::{predict_labels, StepKind, TrainConfig, TrainState};
use adaptseg::{Models32, NetTag, Tensor, Tensor32, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_adaptseg");

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-3;
const PRIMITIVE_CASES: usize = 20;
const IDENTITY_TOL: f64 = 1e-12;
const ORACLE_PAIRS: usize = 100;
const BENEFIT_SEEDS: [u64; 3] = [0, 1, 2];
const BENEFIT_ITERATIONS: &str = "600";
const BENEFIT_MARGIN: f64 = 0.02;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = Result<Outcome, String>;

fn outcome(pass: bool, detail: impl Into<String>) -> Check {
    Ok(Outcome { pass, detail: detail.into() })
}

fn cli(dir: &Path, args: &[&str]) -> Result<Output, String> {
    let out = Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .env_remove("ADAPT_PARSE_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`adaptseg {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn tempdir() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(|e| e.to_string())
}

fn e2s(e: adaptseg::Error) -> String {
    e.to_string()
}

fn gradient_correctness() -> Check {
    let cfg = GradCheckConfig { tolerance: GRAD_TOL, epsilon: GRAD_EPS, ..GradCheckConfig::default() };
    let prims = check_primitives(&cfg, PRIMITIVE_CASES).map_err(e2s)?;
    let nets = check_all_networks(&ScaleProfile::desk(), &cfg).map_err(e2s)?;
    let failed: Vec<&str> = prims
        .iter()
        .filter(|p| !p.pass() || p.cases < PRIMITIVE_CASES)
        .map(|p| p.name)
        .chain(nets.iter().filter(|(_, r)| !r.pass).map(|(t, _)| t.short()))
        .collect();
    let worst_prim = prims.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    let worst_net = nets.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    let covered = prims.len() == PRIMITIVES.len() && nets.len() == 5;
    outcome(
        failed.is_empty() && covered,
        format!(
            "{} primitives x {PRIMITIVE_CASES} configs (max rel err {worst_prim:.1e}), E C L A_f A_l (max rel err {worst_net:.1e}); tol {GRAD_TOL:e}, eps {GRAD_EPS:e}{}",
            prims.len(),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

fn loss_value(build: impl FnOnce(&mut Graph<f64>) -> adaptseg::Result<Var>) -> Result<f64, String> {
    let mut g = Graph::new();
    let l = build(&mut g).map_err(e2s)?;
    Ok(g.value(l).item())
}

fn filled(g: &mut Graph<f64>, v: f64) -> Var {
    g.constant(Tensor::new(vec![2, 1, 3, 3], vec![v; 18]).expect("dims match"))
}

fn loss_identities() -> Check {
    let labels = |v: Vec<u8>| Tensor::new(vec![1, 1, v.len()], v).expect("dims match");
    let skewed = [0.7f64, 0.1, 0.1, 0.1];
    let cases: Vec<(&str, f64, f64)> = vec![
        (
            "CE uniform K=4",
            loss_value(|g| {
                let s = g.constant(Tensor::zeros(&[1, 4, 1, 4]));
                pixelwise_cross_entropy(g, s, &labels(vec![0, 1, 2, 3]), None)
            })?,
            4f64.ln(),
        ),
        (
            "CE p=0.7",
            loss_value(|g| {
                let s = g.constant(Tensor::new(vec![1, 4, 1, 1], skewed.map(f64::ln).to_vec()).expect("dims match"));
                pixelwise_cross_entropy(g, s, &labels(vec![0]), None)
            })?,
            -(0.7f64.ln()),
        ),
        (
            "A_f at 1|0",
            loss_value(|g| {
                let (a, b) = (filled(g, 1.0), filled(g, 0.0));
                loss_feature_adversary(g, a, b)
            })?,
            0.0,
        ),
        (
            "A_f at 0.5",
            loss_value(|g| {
                let (a, b) = (filled(g, 0.5), filled(g, 0.5));
                loss_feature_adversary(g, a, b)
            })?,
            0.25,
        ),
        (
            "C at 0",
            loss_value(|g| {
                let a = filled(g, 0.0);
                Ok(loss_compensator(g, a))
            })?,
            0.5,
        ),
        (
            "C at 1",
            loss_value(|g| {
                let a = filled(g, 1.0);
                Ok(loss_compensator(g, a))
            })?,
            0.0,
        ),
        (
            "A_l at 0.5",
            loss_value(|g| {
                let (a, b) = (filled(g, 0.5), filled(g, 0.5));
                loss_label_adversary(g, a, b)
            })?,
            0.25,
        ),
        (
            "A_l at 0|1",
            loss_value(|g| {
                let (a, b) = (filled(g, 0.0), filled(g, 1.0));
                loss_label_adversary(g, a, b)
            })?,
            1.0,
        ),
        (
            "parser at 0.8",
            loss_value(|g| {
                let a = filled(g, 0.8);
                Ok(loss_parser_adversarial(g, a))
            })?,
            0.5 * 0.2 * 0.2,
        ),
        (
            "parser at 0",
            loss_value(|g| {
                let a = filled(g, 0.0);
                Ok(loss_parser_adversarial(g, a))
            })?,
            0.5,
        ),
    ];
    let worst = cases.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let bad: Vec<&str> =
        cases.iter().filter(|(_, got, want)| (got - want).abs() >= IDENTITY_TOL).map(|c| c.0).collect();
    outcome(
        bad.is_empty(),
        format!(
            "{} analytic cases, max abs err {worst:.1e} (tol {IDENTITY_TOL:e}){}",
            cases.len(),
            if bad.is_empty() { String::new() } else { format!("; off: {}", bad.join(", ")) }
        ),
    )
}

fn small_domains(seed: u64, n: usize) -> Result<(Dataset, Dataset), String> {
    let scene = SceneParams { seed, ..SceneParams::default() };
    let source = generate_domain(&scene, &ShiftParams::identity(), Domain::Source, 0, n, true).map_err(e2s)?;
    let target =
        generate_domain(&scene, &ShiftParams::default_target(), Domain::Target, 1_000_000, n, false).map_err(e2s)?;
    Ok((source, target))
}

fn schedule_audit() -> Check {
    let (n, k_c) = (20u64, 5u64);
    let (source, target) = small_domains(0, 8)?;
    let mut state = TrainState::<f32>::new(TrainConfig { iterations: n, k_c, ..TrainConfig::desk() }).map_err(e2s)?;
    let mut counts = [0usize; 6];
    let mut problems = Vec::new();
    for t in 1..=n {
        let records = state.step(&source, &target).map_err(e2s)?;
        let mut expected = vec![StepKind::P1, StepKind::Eq2, StepKind::Eq1];
        if t % k_c == 0 {
            expected.extend([StepKind::Eq4, StepKind::Eq3]);
        }
        expected.push(StepKind::P2);
        let got: Vec<StepKind> = records.iter().map(|r| r.step).collect();
        if got != expected {
            problems.push(format!("iteration {t} order {got:?}"));
        }
        for r in &records {
            counts[StepKind::ALL.iter().position(|k| *k == r.step).expect("known step")] += 1;
            if !r.isolated() || r.changed.is_empty() {
                problems.push(format!("isolation: {r} changed {:?}", r.changed));
            }
        }
    }
    let want = [20, 20, 20, 4, 4, 20];
    let summary: Vec<String> = StepKind::ALL.iter().zip(counts).map(|(k, c)| format!("{k}={c}")).collect();
    outcome(
        counts == want && problems.is_empty(),
        format!(
            "N={n} K_C={k_c}: {}; order and isolation {}",
            summary.join(" "),
            problems.first().map_or("hold for every step".to_string(), |p| format!("broken, first: {p}"))
        ),
    )
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Mean of fractions over the lcm of their denominators.
fn exact_mean(fracs: &[(u64, u64)]) -> f64 {
    let l = fracs.iter().filter(|f| f.1 > 0).fold(1u128, |l, f| l / gcd(l, f.1 as u128) * f.1 as u128);
    let num: u128 = fracs.iter().filter(|f| f.1 > 0).map(|&(n, d)| n as u128 * (l / d as u128)).sum();
    let den = l * fracs.len() as u128;
    let g = gcd(num, den);
    (num / g) as f64 / (den / g) as f64
}

/// Per-pixel recount and the textbook definitions.
fn metric_oracle(pred: &[u8], gt: &[u8], k: usize) -> MetricReport {
    let pairs: Vec<(u8, u8)> = pred.iter().copied().zip(gt.iter().copied()).collect();
    let count = |f: &dyn Fn(&(u8, u8)) -> bool| pairs.iter().filter(|p| f(p)).count() as u64;
    let fg = count(&|&(_, g)| g != 0);
    let fg_hit = count(&|&(p, g)| g != 0 && p == g);
    let (mut ps, mut rs, mut fs, mut per_class) = (vec![], vec![], vec![], vec![]);
    for c in 0..k as u8 {
        let tp = count(&|&(p, g)| p == c && g == c);
        let fp = count(&|&(p, g)| p == c && g != c);
        let fneg = count(&|&(p, g)| p != c && g == c);
        if tp + fneg == 0 {
            per_class.push(None);
            continue;
        }
        ps.push((tp, tp + fp));
        rs.push((tp, tp + fneg));
        fs.push((2 * tp, 2 * tp + fp + fneg));
        per_class.push(Some(if tp == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fneg) as f64 }));
    }
    MetricReport {
        pixel_accuracy: count(&|&(p, g)| p == g) as f64 / pairs.len() as f64,
        foreground_accuracy: (fg > 0).then(|| fg_hit as f64 / fg as f64),
        avg_precision: exact_mean(&ps),
        avg_recall: exact_mean(&rs),
        avg_f1: exact_mean(&fs),
        per_class_f1: per_class,
    }
}

fn metrics_oracle() -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for k in [2usize, 4, 12] {
        for _ in 0..ORACLE_PAIRS {
            let (h, w) = (r.gen_range(1..12), r.gen_range(1..12));
            let gt: Vec<u8> = (0..h * w).map(|_| r.gen_range(0..k) as u8).collect();
            let noise = r.gen_range(0.0..1.0);
            let pred: Vec<u8> =
                gt.iter().map(|&g| if r.gen_bool(noise) { r.gen_range(0..k) as u8 } else { g }).collect();
            let (pt, gtt) = (
                Tensor::new(vec![h, w], pred.clone()).map_err(e2s)?,
                Tensor::new(vec![h, w], gt.clone()).map_err(e2s)?,
            );
            let got = compute_metrics(&confusion_counts(&pt, &gtt, k).map_err(e2s)?, 0).map_err(e2s)?;
            if got != metric_oracle(&pred, &gt, k) {
                mismatches += 1;
            }
        }
    }
    let gt = Tensor::new(vec![2, 2], vec![0u8, 1, 1, 1]).map_err(e2s)?;
    let pred = Tensor::new(vec![2, 2], vec![0u8, 1, 0, 1]).map_err(e2s)?;
    let worked = compute_metrics(&confusion_counts(&pred, &gt, 2).map_err(e2s)?, 0).map_err(e2s)?.avg_f1;
    outcome(
        mismatches == 0 && worked == 11.0 / 15.0,
        format!("{mismatches} mismatches over {ORACLE_PAIRS} pairs each for K=2,4,12; worked 2x2 avg_f1 = {worked} (11/15 = {})", 11.0 / 15.0),
    )
}

const SMALL_DATA: [&str; 6] = ["--source-count", "16", "--target-train-count", "16", "--target-test-count", "8"];

fn small_cli_data(dir: &Path) -> Result<(), String> {
    let mut args = vec!["gen-data"];
    args.extend(SMALL_DATA);
    cli(dir, &args).map(|_| ())
}

fn inference_purity() -> Check {
    let d = tempdir()?;
    small_cli_data(d.path())?;
    cli(d.path(), &["train", "--iterations", "10", "--eval-interval", "0", "--checkpoint-interval", "10"])?;
    let ckpt = d.path().join("runs/adapt/checkpoints/iter_000010.ckpt");
    let out = cli(
        d.path(),
        &[
            "infer",
            "--checkpoint",
            &ckpt.to_string_lossy(),
            "--image",
            "data/target/test/images/00000.tsr",
            "--out",
            "pred.tsr",
            "--assert-purity",
        ],
    )?;
    let models: Models32 = load_models(&Checkpoint::load(&ckpt).map_err(e2s)?).map_err(e2s)?;
    let (h, w) = models.profile.input_hw;
    let (_, trace) = predict_labels(&models, &Tensor32::zeros(&[1, 3, h, w])).map_err(e2s)?;
    let tags: Vec<&str> = trace.tags().into_iter().map(NetTag::short).collect();
    let pure =
        [NetTag::Compensator, NetTag::FeatureAdversary, NetTag::LabelAdversary].iter().all(|t| !trace.contains_tag(*t))
            && trace.contains_tag(NetTag::Extractor)
            && trace.contains_tag(NetTag::Labeler);
    outcome(
        pure && String::from_utf8_lossy(&out.stderr).contains("purity check passed"),
        format!(
            "infer --assert-purity exit 0 on a 10-iteration adapt checkpoint; trace of {} ops tagged {}",
            trace.len(),
            tags.join(",")
        ),
    )
}

fn determinism() -> Check {
    let d = tempdir()?;
    small_cli_data(d.path())?;
    let train = |run: &str, iters: &str, resume: Option<&str>| {
        let mut args = vec![
            "train",
            "--iterations",
            iters,
            "--k-c",
            "5",
            "--eval-interval",
            "10",
            "--checkpoint-interval",
            "10",
            "--run-dir",
            run,
        ];
        if let Some(r) = resume {
            args.extend(["--resume", r]);
        }
        cli(d.path(), &args)
    };
    train("a", "20", None)?;
    train("b", "20", None)?;
    train("c", "10", None)?;
    train("c", "20", Some("c/checkpoints/iter_000010.ckpt"))?;
    let files = ["checkpoints/iter_000010.ckpt", "checkpoints/iter_000020.ckpt", "metrics.csv", "audit.log"];
    let mut differing = Vec::new();
    for run in ["b", "c"] {
        for f in files {
            if read(&d.path().join("a").join(f))? != read(&d.path().join(run).join(f))? {
                differing.push(format!("{run}/{f}"));
            }
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "two 20-iteration runs and a 10+10 resumed run: checkpoints, metrics.csv and audit.log {}",
            if differing.is_empty() {
                "byte-identical".to_string()
            } else {
                format!("differ: {}", differing.join(", "))
            }
        ),
    )
}

/// Final target `avg_f1` of one 600-iteration run on the default split sizes.
fn final_f1(root: &Path, seed: u64, mode: &str) -> Result<f64, String> {
    let s = seed.to_string();
    let (data, run) = (format!("data_{seed}"), format!("runs/{mode}_{seed}"));
    let (source, target) = (format!("{data}/source"), format!("{data}/target"));
    if !root.join(&source).exists() {
        cli(root, &["gen-data", "--seed", &s, "--source-dir", &source, "--target-dir", &target])?;
    }
    let started = Instant::now();
    cli(
        root,
        &[
            "train",
            "--seed",
            &s,
            "--mode",
            mode,
            "--iterations",
            BENEFIT_ITERATIONS,
            "--eval-interval",
            BENEFIT_ITERATIONS,
            "--checkpoint-interval",
            BENEFIT_ITERATIONS,
            "--source-dir",
            &source,
            "--target-dir",
            &target,
            "--run-dir",
            &run,
        ],
    )?;
    let csv = String::from_utf8(read(&root.join(&run).join("metrics.csv"))?).map_err(|e| e.to_string())?;
    let last = csv.lines().last().ok_or("empty metrics.csv")?;
    let f1: f64 =
        last.rsplit(',').next().and_then(|v| v.parse().ok()).ok_or_else(|| format!("bad metrics row `{last}`"))?;
    eprintln!("  {mode:<11} seed {seed}: target avg_f1 {f1:.4} ({:.0} s)", started.elapsed().as_secs_f64());
    Ok(f1)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

fn mode_scores(root: &Path, mode: &str) -> Result<Vec<f64>, String> {
    BENEFIT_SEEDS.iter().map(|&s| final_f1(root, s, mode)).collect()
}

fn describe(mode: &str, scores: &[f64]) -> String {
    let mut s = format!("{mode} median {:.4} [", median(scores));
    for (i, v) in scores.iter().enumerate() {
        let _ = write!(s, "{}{v:.4}", if i > 0 { " " } else { "" });
    }
    s + "]"
}

fn adaptation_benefit(root: &Path) -> Check {
    let adapt = mode_scores(root, "adapt")?;
    let base = mode_scores(root, "source_only")?;
    let margin = median(&adapt) - median(&base);
    outcome(
        margin >= BENEFIT_MARGIN,
        format!(
            "{} vs {}; margin {margin:+.4} (need >= {BENEFIT_MARGIN}), seeds {BENEFIT_SEEDS:?}, 500/500/100 samples, {BENEFIT_ITERATIONS} iterations",
            describe("adapt", &adapt),
            describe("source_only", &base)
        ),
    )
}

fn ablations(root: &Path) -> Check {
    let feat = mode_scores(root, "feat_only")?;
    let label = mode_scores(root, "label_only")?;
    outcome(
        true,
        format!(
            "{}; {} (reported, no ordering asserted)",
            describe("feat_only", &feat),
            describe("label_only", &label)
        ),
    )
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let root = match tempdir() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("cannot create a work directory: {e}");
            std::process::exit(1);
        }
    };
    type Criterion<'a> = (u8, &'a str, bool, Box<dyn Fn() -> Check + 'a>);
    let criteria: Vec<Criterion> = vec![
        (1, "gradient correctness", true, Box::new(gradient_correctness)),
        (2, "loss identities", true, Box::new(loss_identities)),
        (3, "schedule audit", true, Box::new(schedule_audit)),
        (4, "metrics oracle", true, Box::new(metrics_oracle)),
        (5, "inference purity", true, Box::new(inference_purity)),
        (6, "determinism and resume", true, Box::new(determinism)),
        (7, "desk-scale adaptation benefit", strict, Box::new(|| adaptation_benefit(root.path()))),
        (8, "ablation report", false, Box::new(|| ablations(root.path()))),
    ];
    let mut gated_failures = 0;
    for (id, name, gating, check) in criteria {
        let started = Instant::now();
        let result = check();
        let secs = started.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let note = if !pass && !gating { " [not gating]" } else { "" };
        println!("{} {id} {name}: {detail} ({secs:.1} s){note}", if pass { "PASS" } else { "FAIL" });
        if !pass && gating {
            gated_failures += 1;
        }
    }
    if gated_failures > 0 {
        std::process::exit(1);
    }
}
