//! File emission: CSV series with lossless 17-significant-digit floats, an
//! optional gnuplot script, and a JSON run manifest listing every produced
//! file with its SHA-256 hash. Writes are atomic (temp file + rename) and a
//! failed run removes everything it wrote. No timestamps anywhere: reruns
//! with the same config and seed are bit-identical.

use crate::error::{Error, Result};
use crate::fp::DensityField;
use crate::phase::Trajectory;
use crate::sde::PathEnsemble;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Lossless decimal rendering of a binary64 value (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Accumulates output files in a directory; collects name, size and hash
/// for the manifest.
pub struct OutputWriter {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

impl OutputWriter {
    /// Create the directory (if needed) and verify it is writable before
    /// any computation starts.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let probe = dir.join(".write-probe");
        fs::write(&probe, b"probe")?;
        fs::remove_file(&probe)?;
        Ok(OutputWriter { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn write_file(&mut self, name: &str, contents: &str) -> Result<()> {
        let tmp = self.dir.join(format!("{name}.tmp"));
        let path = self.dir.join(name);
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, &path)?;
        let mut hasher = Sha256::new();
        hasher.update(contents.as_bytes());
        self.files.push(FileRecord {
            name: name.to_string(),
            bytes: contents.len(),
            sha256: format!("{:x}", hasher.finalize()),
        });
        Ok(())
    }

    /// Remove everything written so far (failure path).
    pub fn abort(self) {
        for f in &self.files {
            let _ = fs::remove_file(self.dir.join(&f.name));
        }
    }

    /// Write `manifest.json` and return the full manifest.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.files = std::mem::take(&mut self.files);
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::NonFinite(format!("manifest serialization: {e}")))?;
        let tmp = self.dir.join("manifest.json.tmp");
        fs::write(&tmp, &text)?;
        fs::rename(&tmp, self.dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

/// Run manifest: tool version, configuration hash, seeds, grid spacings,
/// headline diagnostics, and the file list.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: ToolInfo,
    pub kind: String,
    pub config_sha256: String,
    pub seed: u64,
    pub grid: GridInfo,
    pub summary: serde_json::Value,
    pub files: Vec<FileRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl ToolInfo {
    pub fn current() -> Self {
        ToolInfo { name: "chemostat-fpk", version: env!("CARGO_PKG_VERSION") }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub s_max: f64,
    pub b_max: f64,
    pub n1: usize,
    pub n2: usize,
    pub h1: f64,
    pub h2: f64,
}

pub fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    format!("{:x}", hasher.finalize())
}

/// `t,washout_prob,mean_S,mean_B,mass_residual` rows.
pub fn scalar_series_csv(rows: &[(f64, f64, f64, f64, f64)]) -> String {
    let mut out = String::from("t,washout_prob,mean_S,mean_B,mass_residual\n");
    for &(t, w, ms, mb, res) in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(t),
            fmt_f64(w),
            fmt_f64(ms),
            fmt_f64(mb),
            fmt_f64(res)
        ));
    }
    out
}

/// Interior density samples `s,b,p_density`.
pub fn interior_density_csv(field: &DensityField) -> String {
    let mut out = String::from("s,b,p_density\n");
    let grid = field.grid;
    for k2 in 1..=grid.n2 {
        for k1 in 0..=grid.n1 {
            let (s, b) = grid.coords(k1, k2);
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_f64(s),
                fmt_f64(b),
                fmt_f64(field.interior[grid.index(k1, k2)])
            ));
        }
    }
    out
}

/// Washout density samples `s,q_density`.
pub fn washout_density_csv(field: &DensityField) -> String {
    let mut out = String::from("s,q_density\n");
    let grid = field.grid;
    for (k1, &q) in field.washout.iter().enumerate() {
        let (s, _) = grid.coords(k1, 0);
        out.push_str(&format!("{},{}\n", fmt_f64(s), fmt_f64(q)));
    }
    out
}

/// Ensemble snapshots `t,path_id,S,B,washed_out`.
pub fn ensemble_csv(e: &PathEnsemble) -> String {
    let mut out = String::from("t,path_id,S,B,washed_out\n");
    for (snap, states) in e.states.iter().enumerate() {
        let t = e.snapshot_times[snap];
        for (path, st) in states.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_f64(t),
                path,
                fmt_f64(st.s),
                fmt_f64(st.b),
                u8::from(st.washed_out())
            ));
        }
    }
    out
}

/// Trajectory rows `t,s,b`.
pub fn trajectory_csv(tr: &Trajectory) -> String {
    let mut out = String::from("t,s,b\n");
    for (t, (s, b)) in tr.times.iter().zip(&tr.states) {
        out.push_str(&format!("{},{},{}\n", fmt_f64(*t), fmt_f64(*s), fmt_f64(*b)));
    }
    out
}

/// Polyline rows `s,b`.
pub fn polyline_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("s,b\n");
    for &(s, b) in points {
        out.push_str(&format!("{},{}\n", fmt_f64(s), fmt_f64(b)));
    }
    out
}

/// Equilibria table.
pub fn equilibria_csv(eqs: &[crate::model::EquilibriumPoint]) -> String {
    let mut out = String::from("s,b,kind,stability,re_lambda1,re_lambda2\n");
    for eq in eqs {
        out.push_str(&format!(
            "{},{},{:?},{:?},{},{}\n",
            fmt_f64(eq.s),
            fmt_f64(eq.b),
            eq.kind,
            eq.stability,
            fmt_f64(eq.eigenvalues[0].0),
            fmt_f64(eq.eigenvalues[1].0)
        ));
    }
    out
}

/// Minimal gnuplot script plotting the washout-probability series files.
pub fn gnuplot_series_script(series_files: &[String]) -> String {
    let mut out = String::from(
        "set datafile separator ','\nset xlabel 't (h)'\nset ylabel 'P(B_t = 0)'\nset key left top\nplot \\\n",
    );
    let plots: Vec<String> = series_files
        .iter()
        .map(|f| format!("  '{f}' using 1:2 with lines title '{f}'"))
        .collect();
    out.push_str(&plots.join(", \\\n"));
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_roundtrips() {
        for x in [0.45, 1.0 / 3.0, 2.0 / 70.0, 1e-300, -0.0, 6.02e23] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(x.to_bits(), back.to_bits(), "{s}");
        }
    }

    #[test]
    fn writer_is_atomic_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = OutputWriter::create(dir.path()).unwrap();
        w.write_file("a.csv", "x,y\n1,2\n").unwrap();
        assert!(dir.path().join("a.csv").exists());
        assert!(!dir.path().join("a.csv.tmp").exists());
        assert_eq!(w.files.len(), 1);
        assert_eq!(w.files[0].sha256, sha256_hex("x,y\n1,2\n"));
    }

    #[test]
    fn abort_removes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = OutputWriter::create(dir.path()).unwrap();
        w.write_file("a.csv", "data").unwrap();
        w.abort();
        assert!(!dir.path().join("a.csv").exists());
    }

    #[test]
    fn unwritable_directory_fails_early() {
        let err = OutputWriter::create(Path::new("/proc/definitely-not-writable"));
        assert!(err.is_err());
    }
}
