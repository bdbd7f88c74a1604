use adaptseg::nn::verify::check_all_networks;
use adaptseg::nn::ScaleProfile;
use adaptseg::tensor::{check_primitives, GradCheckConfig};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Checks the five networks of the desk profile, seeded from the config.
pub fn gradcheck(c: &ExperimentConfig, inject_fault: Option<f64>, primitives: usize) -> CliResult<()> {
    let cfg = GradCheckConfig { seed: c.train.seed, gradient_fault: inject_fault, ..GradCheckConfig::default() };
    println!(
        "gradient check: 64-bit, epsilon {}, tolerance {}, seed {}{}",
        cfg.epsilon,
        cfg.tolerance,
        cfg.seed,
        inject_fault.map_or(String::new(), |f| format!(", analytic gradients scaled by {f}"))
    );
    let mut failed = Vec::new();
    for (tag, report) in check_all_networks(&ScaleProfile::desk(), &cfg)? {
        println!("[{}]", tag.short());
        for t in &report.tensors {
            println!(
                "  param {:>2}: checked {:>3} skipped {:>2} max_rel_error {:.3e}",
                t.index, t.checked, t.skipped, t.max_rel_error
            );
        }
        println!("  {} max_rel_error {:.3e}", verdict(report.pass), report.max_rel_error);
        if !report.pass {
            failed.push(tag.short().to_string());
        }
    }
    if primitives > 0 {
        println!("[primitives]");
        for p in check_primitives(&cfg, primitives)? {
            println!(
                "  {:<22} {}/{} max_rel_error {:.3e} {}",
                p.name,
                p.passed,
                p.cases,
                p.max_rel_error,
                verdict(p.pass())
            );
            if !p.pass() {
                failed.push(p.name.to_string());
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("gradient check failed for {}", failed.join(", "))))
    }
}
