//! One module per subcommand.

pub mod check;
pub mod eval;
pub mod margins;
pub mod select;
pub mod split;
pub mod synth;
pub mod train;

use std::fs;
use std::path::Path;

use dppsel::adapter::{load_params, AdapterParams};

use crate::{CmdResult, Failure};

/// Load adapter parameters when a path was given. Any problem with the file
/// — unreadable, malformed, wrong version — is an input error.
pub(crate) fn load_params_opt(path: Option<&Path>) -> CmdResult<Option<AdapterParams>> {
    match path {
        None => Ok(None),
        Some(p) => load_params(p)
            .map(Some)
            .map_err(|e| Failure::input(format!("params {}: {e}", p.display()))),
    }
}

/// Adapter and embeddings must agree on dimensionality before any math runs.
pub(crate) fn check_adapter_dim(params: Option<&AdapterParams>, d: usize) -> CmdResult<()> {
    if let Some(p) = params {
        if p.d != d {
            return Err(Failure::input(format!(
                "adapter expects dimension {}, embeddings have {}",
                p.d, d
            )));
        }
    }
    Ok(())
}

/// Write to `out` when given, otherwise print to stdout.
pub(crate) fn write_or_stdout(text: &str, out: Option<&Path>) -> CmdResult<()> {
    match out {
        Some(path) => fs::write(path, text.as_bytes())
            .map_err(|e| Failure::input(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
