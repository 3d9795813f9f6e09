//! Artifact writers: CSV tables, SVG plots, and the checksummed manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// Collects emitted files so the manifest can list and checksum them.
pub struct ArtifactSink {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl ArtifactSink {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(ArtifactSink { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes)?;
        self.files.push(FileEntry { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn into_entries(mut self) -> Vec<FileEntry> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        self.files
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// CSV from a header and row-formatting closure. All floats use the
/// shortest round-trip representation, so reruns are byte-identical.
pub fn csv_table(header: &[&str], rows: usize, mut cell: impl FnMut(usize, usize) -> String) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "{}", header.join(",")).expect("in-memory write");
    for r in 0..rows {
        let row: Vec<String> = (0..header.len()).map(|c| cell(r, c)).collect();
        writeln!(out, "{}", row.join(",")).expect("in-memory write");
    }
    out
}

/// Minimal line-plot SVG: one polyline per series over shared axes.
pub fn svg_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, &[f64], &[f64])],
    timestamp: Option<u64>,
) -> Result<Vec<u8>> {
    let (w, h, ml, mb) = (640.0, 400.0, 60.0, 40.0);
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, xs, ys) in series {
        for (&x, &y) in xs.iter().zip(ys.iter()) {
            if x.is_finite() && y.is_finite() {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
    }
    if !x_min.is_finite() || !y_min.is_finite() {
        return Err(CliError::Config(format!("plot '{title}' has no finite points")));
    }
    if x_max - x_min < 1e-300 {
        x_max = x_min + 1.0;
    }
    if y_max - y_min < 1e-300 {
        y_max = y_min + 1.0;
    }
    let px = |x: f64| ml + (x - x_min) / (x_max - x_min) * (w - ml - 20.0);
    let py = |y: f64| (h - mb) - (y - y_min) / (y_max - y_min) * (h - mb - 30.0);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut out = Vec::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" font-family="monospace" font-size="12">"#
    )?;
    if let Some(ts) = timestamp {
        writeln!(out, "<!-- generated at unix time {ts} -->")?;
    }
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#)?;
    writeln!(out, r#"<text x="{}" y="18" text-anchor="middle">{title}</text>"#, w / 2.0)?;
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, w / 2.0, h - 8.0)?;
    writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        h / 2.0,
        h / 2.0
    )?;
    // Axes with min/max tick labels.
    writeln!(
        out,
        r#"<polyline points="{},{} {},{} {},{}" fill="none" stroke="black"/>"#,
        px(x_min),
        py(y_max),
        px(x_min),
        py(y_min),
        px(x_max),
        py(y_min)
    )?;
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{y_max:.4}</text>"#, ml - 4.0, py(y_max) + 4.0)?;
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{y_min:.4}</text>"#, ml - 4.0, py(y_min) + 4.0)?;
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{x_min:.4}</text>"#, px(x_min), h - mb + 16.0)?;
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{x_max:.4}</text>"#, px(x_max), h - mb + 16.0)?;
    for (k, (label, xs, ys)) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let points: Vec<String> = xs
            .iter()
            .zip(ys.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, points.join(" "))?;
        writeln!(out, r#"<text x="{}" y="{}" fill="{color}">{label}</text>"#, w - 150.0, 30.0 + 16.0 * k as f64)?;
    }
    writeln!(out, "</svg>")?;
    Ok(out)
}
