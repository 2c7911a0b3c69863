//! Artifact writers and readers: mask CSVs, per-epoch trajectories, and
//! key=value metric reports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use conftrack_core::selectors::SelectionMask;
use conftrack_core::{Error, Result};

use crate::pipeline::EpochReport;

/// `sample_id, selected` plus whichever per-sample scores the method
/// produced.
pub fn write_mask_csv(
    path: &Path,
    mask: &SelectionMask,
    z_min: Option<&[f64]>,
    avg_margin: Option<&[f64]>,
    gmm_posterior: Option<&[f64]>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "sample_id,selected")?;
    if z_min.is_some() {
        write!(w, ",z_min")?;
    }
    if avg_margin.is_some() {
        write!(w, ",avg_margin")?;
    }
    if gmm_posterior.is_some() {
        write!(w, ",gmm_posterior")?;
    }
    writeln!(w)?;
    for i in 0..mask.len() {
        write!(w, "{i},{}", u8::from(mask.is_selected(i)))?;
        // shortest round-trip exponent notation: compact even for denormals
        if let Some(z) = z_min {
            write!(w, ",{:e}", z[i])?;
        }
        if let Some(m) = avg_margin {
            write!(w, ",{:e}", m[i])?;
        }
        if let Some(p) = gmm_posterior {
            write!(w, ",{:e}", p[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Read back the `selected` column of a mask CSV.
pub fn read_mask_csv(path: &Path) -> Result<SelectionMask> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty mask file".into(),
            })
        }
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let selected_col = columns
        .iter()
        .position(|c| *c == "selected")
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing column selected".into(),
        })?;
    let mut bits = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let value = fields.get(selected_col).ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: "row too short".into(),
        })?;
        match *value {
            "0" => bits.push(false),
            "1" => bits.push(true),
            other => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("bad selected flag {other:?}"),
                })
            }
        }
    }
    Ok(SelectionMask::from_vec(bits))
}

pub fn write_z_csv(path: &Path, z_min: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "sample_id,z_min")?;
    for (i, z) in z_min.iter().enumerate() {
        writeln!(w, "{i},{z}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_per_epoch_csv(path: &Path, rows: &[EpochReport]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,selected,masked_loss,precision,recall,f1")?;
    for r in rows {
        match &r.report {
            Some(m) => writeln!(
                w,
                "{},{},{},{},{},{}",
                r.epoch, r.selected, r.masked_loss, m.precision, m.recall, m.f1
            )?,
            None => writeln!(
                w,
                "{},{},{},nan,nan,nan",
                r.epoch, r.selected, r.masked_loss
            )?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Key=value lines, one metric per line, machine-greppable.
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self { lines: Vec::new() }
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn push_opt(&mut self, key: &str, value: Option<impl std::fmt::Display>) {
        if let Some(v) = value {
            self.push(key, v);
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

impl Default for Report {
    fn default() -> Self {
        Self::new()
    }
}
