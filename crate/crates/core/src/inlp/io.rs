use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{InlpTrace, Projector, ProjectorKind, ProjectorSource};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::npy;

/// JSON written next to each projector matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorSidecar {
    pub kind: ProjectorKind,
    pub rank: usize,
    pub dim: usize,
    pub source: ProjectorSource,
    pub matrix: String,
    pub directions: String,
    #[serde(default)]
    pub trace: Option<InlpTrace>,
}

/// Writes `<stem>.npy` (d×d, f64), `<stem>.directions.npy` (k×d) and
/// `<stem>.json`; returns the sidecar path.
pub fn save_projector(
    dir: &Path,
    stem: &str,
    p: &Projector,
    trace: Option<&InlpTrace>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let matrix = format!("{stem}.npy");
    let directions = format!("{stem}.directions.npy");
    npy::write_matrix(&dir.join(&matrix), &p.matrix)?;
    npy::write_matrix(&dir.join(&directions), &p.directions)?;
    let sidecar = ProjectorSidecar {
        kind: p.kind,
        rank: p.rank(),
        dim: p.dim(),
        source: p.source.clone(),
        matrix,
        directions,
        trace: trace.cloned(),
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &sidecar)?;
    Ok(path)
}

pub fn load_projector(sidecar_path: &Path) -> Result<(Projector, ProjectorSidecar)> {
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let sc: ProjectorSidecar = read_json(sidecar_path, "projector sidecar")?;
    let matrix = npy::read_matrix(&dir.join(&sc.matrix))?;
    let directions = npy::read_matrix(&dir.join(&sc.directions))?;
    if matrix.nrows() != sc.dim || matrix.ncols() != sc.dim || directions.ncols() != sc.dim {
        return Err(Error::dims(sc.dim, matrix.ncols(), format!("projector {}", sc.matrix)));
    }
    let p = Projector {
        matrix,
        kind: sc.kind,
        source: sc.source.clone(),
        directions,
    };
    if p.rank() != sc.rank {
        return Err(Error::Parse {
            what: "projector sidecar",
            path: sidecar_path.to_path_buf(),
            message: format!("rank {} does not match {} stored directions", sc.rank, p.n_directions()),
        });
    }
    Ok((p, sc))
}
