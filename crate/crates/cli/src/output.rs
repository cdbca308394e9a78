//! Atomic file output confined to the run's output directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::config::RunConfig;

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    /// Write `name` through a temporary file in the same directory and a rename.
    pub fn write(&self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            bail!("output name '{name}' must be a plain file name");
        }
        let target = self.root.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).with_context(|| format!("creating a temporary file in {}", self.root.display()))?;
        tmp.write_all(contents)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target).with_context(|| format!("renaming into {}", target.display()))?;
        Ok(target)
    }

    /// Write `<stem>.<ext>` together with `<stem>.manifest`.
    pub fn write_with_manifest(&self, stem: &str, ext: &str, contents: &[u8], cfg: &RunConfig) -> Result<PathBuf> {
        let path = self.write(&format!("{stem}.{ext}"), contents)?;
        self.write(&format!("{stem}.manifest"), cfg.to_manifest().as_bytes())?;
        Ok(path)
    }
}
