//! Report sink: a file when --out is given, stdout otherwise.

use std::fs;
use std::path::PathBuf;

use sepc_core::Result;

pub fn emit(out: &Option<PathBuf>, report: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, report)?,
        None => print!("{report}"),
    }
    Ok(())
}
