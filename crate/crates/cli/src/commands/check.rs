//! `dppsel check`: the numerical verification suite.
//!
//! Exit 0 only when every check passes; exit 4 otherwise. The human report
//! prints one line per check; `--out` writes the same data as JSON.

use serde::Serialize;

use dppsel::oracle::run_suite;

use crate::args::CheckArgs;
use crate::commands::write_or_stdout;
use crate::config::{manifest_beside, pick, Ctx, Manifest};
use crate::CmdResult;

#[derive(Serialize)]
struct Echo {
    trials: usize,
    out: Option<String>,
}

pub fn run(ctx: &Ctx, args: &CheckArgs) -> CmdResult<i32> {
    let trials = pick(args.trials, ctx.file.trials, 1000);
    let out = args.out.clone().or_else(|| ctx.file.out.clone());

    let report = run_suite(trials, ctx.seed);
    print!("{report}");
    if let Some(path) = &out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_or_stdout(&format!("{json}\n"), Some(path))?;
    }

    let echo = Echo {
        trials,
        out: out.as_ref().map(|p| p.display().to_string()),
    };
    let mut manifest = Manifest::new("check", ctx.seed, echo)
        .input_opt(ctx.config_input.clone());
    if let Some(p) = &out {
        manifest = manifest.output("report", p);
    }
    manifest.emit(out.as_deref().map(manifest_beside))?;
    Ok(if report.all_passed { 0 } else { 4 })
}
