use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use somni_core::{SOmninet, Sample, Tape, Tensor};

use crate::error::{HarnessError, Result};
use crate::run_config::RunConfig;

/// One exported map and its files, relative to the export directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportedMap {
    pub stream: String,
    pub layer: usize,
    pub head: usize,
    pub rows: usize,
    pub cols: usize,
    pub csv: PathBuf,
    pub pgm: PathBuf,
}

/// CSV with a header of source indices and one line per destination row.
pub fn map_csv(m: &Tensor) -> String {
    let mut s = String::from("row");
    for c in 0..m.cols() {
        write!(s, ",{c}").unwrap();
    }
    s.push('\n');
    for r in 0..m.rows() {
        write!(s, "{r}").unwrap();
        for v in m.row(r) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Binary 8-bit PGM (P5), scaled so the largest weight is 255.
pub fn map_pgm(m: &Tensor) -> Vec<u8> {
    let max = m.data().iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    out.extend(m.data().iter().map(|&v| if max > 0.0 { (v / max * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 }));
    out
}

/// Writes every retained cross-cache attention map of one sample as
/// `{stream}_{layer}_{head}.{csv,pgm}` plus `index.tsv`.
pub fn export_attention(model: &SOmninet, sample: &Sample, out: &Path) -> Result<Vec<ExportedMap>> {
    let p = model.prepare(sample)?;
    let mut tape = Tape::with_params(&model.store);
    let fwd = model.forward(&mut tape, &p, true)?;
    if fwd.fusion.maps.is_empty() {
        return Err(HarnessError::Run("the model produced no cross-cache attention maps".into()));
    }
    std::fs::create_dir_all(out)?;
    let mut index = String::from("stream\tlayer\thead\trows\tcols\tcsv\tpgm\n");
    let mut exported = Vec::new();
    for m in &fwd.fusion.maps {
        let stem = format!("{}_{}_{}", m.stream, m.layer, m.head);
        let (csv, pgm) = (PathBuf::from(format!("{stem}.csv")), PathBuf::from(format!("{stem}.pgm")));
        std::fs::write(out.join(&csv), map_csv(&m.weights))?;
        std::fs::write(out.join(&pgm), map_pgm(&m.weights))?;
        let (rows, cols) = (m.weights.rows(), m.weights.cols());
        writeln!(index, "{}\t{}\t{}\t{rows}\t{cols}\t{}\t{}", m.stream, m.layer, m.head, csv.display(), pgm.display()).unwrap();
        exported.push(ExportedMap { stream: m.stream.clone(), layer: m.layer, head: m.head, rows, cols, csv, pgm });
    }
    std::fs::write(out.join("index.tsv"), index)?;
    Ok(exported)
}

/// Loads a checkpoint written by training together with its run
/// configuration, refusing checkpoints trained without attention export.
pub fn load_for_export(checkpoint: &Path) -> Result<(SOmninet, RunConfig)> {
    let cfg = RunConfig::load(&checkpoint.join("run.txt"))?;
    if !cfg.train.export_attention {
        return Err(HarnessError::Run(format!("{} was trained with export_attention = false", checkpoint.display())));
    }
    Ok((SOmninet::load(checkpoint)?, cfg))
}
