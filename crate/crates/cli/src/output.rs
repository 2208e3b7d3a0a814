use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// What is needed to re-run the command that produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    /// SHA-256 of the checkpoint file, when the command loads a model.
    pub model_hash: Option<String>,
    /// SHA-256 of the instances as JSON lines.
    pub dataset_hash: Option<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<T> {
    pub provenance: Provenance,
    pub result: T,
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    provenance: &'a Provenance,
    result: &'a T,
}

/// Output directory plus the provenance stamped on every report.
pub struct Sink {
    dir: PathBuf,
    pub provenance: Provenance,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path, provenance: Provenance) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Sink { dir: dir.to_path_buf(), provenance, written: Vec::new() })
    }

    pub fn report<T: Serialize>(&mut self, name: &str, result: &T) -> Result<()> {
        let envelope = Envelope { provenance: &self.provenance, result };
        let mut text = serde_json::to_string_pretty(&envelope)?;
        text.push('\n');
        self.raw(name, text.as_bytes())
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Write to a temporary file in the target directory, then rename over.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("writing {}", path.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Binary PPM of a score grid: blue for −1, white for 0, red for +1, grey
/// for missing cells. Each cell is drawn as a `scale × scale` block.
pub fn heatmap_ppm(values: &Array2<f64>, scale: usize) -> Vec<u8> {
    let (rows, cols) = values.dim();
    let (w, h) = (cols * scale, rows * scale);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            out.extend_from_slice(&color(values[[y / scale, x / scale]]));
        }
    }
    out
}

fn color(v: f64) -> [u8; 3] {
    if !v.is_finite() {
        return [128, 128, 128];
    }
    let t = v.clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        [255, fade, fade]
    } else {
        [fade, fade, 255]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ppm_layout_and_colors() {
        let img = heatmap_ppm(&array![[1.0, -1.0], [0.0, f64::NAN]], 2);
        let header = b"P6\n4 4\n255\n";
        assert_eq!(&img[..header.len()], header);
        let px = &img[header.len()..];
        assert_eq!(px.len(), 4 * 4 * 3);
        assert_eq!(&px[0..3], &[255, 0, 0]);
        assert_eq!(&px[6..9], &[0, 0, 255]);
        assert_eq!(&px[24..27], &[255, 255, 255]);
        assert_eq!(&px[px.len() - 3..], &[128, 128, 128]);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
