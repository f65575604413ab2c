use std::env;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Relative output paths resolve against this directory when it is set.
pub const OUTPUT_DIR_ENV: &str = "HM_OUTPUT_DIR";

pub fn resolve(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Write `body` to `path` (resolved) or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, body: &[u8]) -> Result<()> {
    match path {
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(body)?;
            lock.flush()?;
        }
        Some(p) => {
            let p = resolve(p);
            let file = File::create(&p).with_context(|| format!("cannot write {}", p.display()))?;
            let mut w = BufWriter::new(file);
            w.write_all(body)?;
            w.flush()
                .with_context(|| format!("cannot write {}", p.display()))?;
        }
    }
    Ok(())
}
