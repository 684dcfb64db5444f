use kare_core::ddpo::gradcheck::{grad_check_grid, GradCheckOptions};

use crate::args::GradcheckArgs;
use crate::config::FileConfig;
use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 7;

pub fn cmd_gradcheck(args: GradcheckArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let d = GradCheckOptions::default();
    let t = &cfg.train;
    let opts = GradCheckOptions {
        trials: args.trials.or(t.trials).unwrap_or(d.trials),
        h: args.h.unwrap_or(d.h),
        tol: args.tol.or(t.tol).unwrap_or(d.tol),
    };
    if !(opts.h > 0.0) || !(opts.tol > 0.0) || opts.trials == 0 {
        return Err(CliError::usage("--trials, --h and --tol must be positive"));
    }
    let seed = args.seed.or(t.seed).unwrap_or(DEFAULT_SEED);
    let report = grad_check_grid(seed, &opts)?;
    println!(
        "checked {} coordinates; max relative error {:.3e} (tol {:.0e})",
        report.checked, report.max_rel_err, opts.tol
    );
    if report.untouched_nonzero > 0 {
        println!(
            "{} of {} unread coordinates have a nonzero gradient",
            report.untouched_nonzero, report.untouched
        );
    }
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        if let Some(w) = report.worst {
            println!(
                "worst coordinate {}: analytic {:.9e} numeric {:.9e}",
                w.index, w.analytic, w.numeric
            );
        }
        Err(CliError::data(
            "GradCheckFailed",
            format!("{} coordinate(s) above tolerance", report.failures.len()),
        ))
    }
}
