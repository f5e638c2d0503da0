//! Run-directory plumbing: effective-config resolution, the lock file,
//! and the echoed configuration.

use anyhow::{bail, Context, Result};
use sparseshape_core::trainer::TrainConfig;
use std::path::{Path, PathBuf};

/// Guard on `<run>/.lock`; released (removed) on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<RunLock> {
        std::fs::create_dir_all(run_dir)?;
        let path = run_dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "run directory {} is locked by another command (remove {} if stale)",
                run_dir.display(),
                path.display()
            ),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Effective configuration: `--config` file, else the run directory's
/// echoed `config.toml`, else desk-scale defaults; `--seed`/`--out`
/// override whatever was loaded.
pub fn effective_config(
    config_path: &Option<PathBuf>,
    seed: Option<u64>,
    out: &Path,
) -> Result<TrainConfig> {
    let mut config = if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        TrainConfig::from_toml(&text)?
    } else {
        let echoed = out.join("config.toml");
        if echoed.exists() {
            TrainConfig::from_toml(&std::fs::read_to_string(&echoed)?)?
        } else {
            TrainConfig::desk_scale()
        }
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.out_dir = out.to_path_buf();
    config.validate()?;
    Ok(config)
}

/// Write the effective configuration into the run directory.
pub fn echo_config(config: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    std::fs::write(config.out_dir.join("config.toml"), config.to_toml()?)?;
    Ok(())
}
