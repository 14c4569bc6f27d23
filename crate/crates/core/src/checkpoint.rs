//! Run persistence: the committed state is rewritten atomically after each
//! episode, so a crash mid-episode resumes from the last commit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{RunObserver, RunState};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "adasup-checkpoint/1";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Serialize, Deserialize)]
struct Envelope<S> {
    schema: String,
    state: S,
}

pub fn save(path: &Path, state: &RunState) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let body = serde_json::to_vec(&Envelope {
        schema: CHECKPOINT_SCHEMA.to_owned(),
        state,
    })?;
    std::fs::write(&tmp, body).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn load(path: &Path) -> Result<RunState> {
    let text = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let env: Envelope<RunState> = serde_json::from_slice(&text)?;
    if env.schema != CHECKPOINT_SCHEMA {
        return Err(Error::Checkpoint(format!(
            "unsupported schema {:?}, expected {CHECKPOINT_SCHEMA:?}",
            env.schema
        )));
    }
    Ok(env.state)
}

/// Observer that checkpoints every commit to `path`.
pub struct Journal {
    pub path: PathBuf,
}

impl Journal {
    pub fn in_dir(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        Ok(Self {
            path: dir.join(CHECKPOINT_FILE),
        })
    }
}

impl RunObserver for Journal {
    fn committed(&self, state: &RunState) -> Result<()> {
        save(&self.path, state)
    }
}
