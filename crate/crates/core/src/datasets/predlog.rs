//! Binary per-epoch prediction logs.
//!
//! The log decouples selectors from trainers: any process that can write
//! this layout can feed the selection pipeline. Little-endian throughout:
//!
//! ```text
//! magic    4 bytes   "CTPL" (probabilities) or "CTLG" (logits)
//! version  u32       1
//! n        u64       samples
//! k        u32       classes
//! t        u32       epoch records that follow
//! labels   n x u32   annotated classes
//! records  t x { epoch_index: u32, values: n*k x f32 row-major }
//! ```
//!
//! One record per epoch makes the file append-friendly. This
//! implementation buffers in memory and writes the file once.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PROB_MAGIC: [u8; 4] = *b"CTPL";
pub const LOGIT_MAGIC: [u8; 4] = *b"CTLG";
pub const FORMAT_VERSION: u32 = 1;

/// What the per-epoch value matrices hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    Probabilities,
    Logits,
}

impl LogKind {
    fn magic(self) -> [u8; 4] {
        match self {
            LogKind::Probabilities => PROB_MAGIC,
            LogKind::Logits => LOGIT_MAGIC,
        }
    }
}

/// One epoch of per-sample values, row-major `[sample][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch_index: u32,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLog {
    kind: LogKind,
    n_classes: usize,
    labels: Vec<u32>,
    epochs: Vec<EpochRecord>,
}

impl PredictionLog {
    pub fn new(kind: LogKind, labels: Vec<u32>, n_classes: usize) -> Result<Self> {
        if labels.is_empty() || n_classes == 0 {
            return Err(Error::InvalidInput(
                "log needs at least one sample and one class".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            kind,
            n_classes,
            labels,
            epochs: Vec::new(),
        })
    }

    pub fn kind(&self) -> LogKind {
        self.kind
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_epochs(&self) -> usize {
        self.epochs.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn epochs(&self) -> &[EpochRecord] {
        &self.epochs
    }

    /// Append one epoch. Probability logs check every row against the
    /// simplex with 1e-3 slack (the payload is quantized to f32).
    pub fn push_epoch(&mut self, epoch_index: u32, values: Vec<f32>) -> Result<()> {
        let expected = self.n_samples() * self.n_classes;
        if values.len() != expected {
            return Err(Error::InvalidInput(format!(
                "epoch {epoch_index}: {} values, expected {expected}",
                values.len()
            )));
        }
        if self.kind == LogKind::Probabilities {
            for (i, row) in values.chunks(self.n_classes).enumerate() {
                let sum: f64 = row.iter().map(|&v| v as f64).sum();
                if (sum - 1.0).abs() > 1e-3 || row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "epoch {epoch_index}: probability row {i} sums to {sum}"
                    )));
                }
            }
        }
        self.epochs.push(EpochRecord {
            epoch_index,
            values,
        });
        Ok(())
    }
}

pub fn write_predlog(path: &Path, log: &PredictionLog) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&log.kind.magic())?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(log.n_samples() as u64).to_le_bytes())?;
    w.write_all(&(log.n_classes as u32).to_le_bytes())?;
    w.write_all(&(log.epochs.len() as u32).to_le_bytes())?;
    for &label in &log.labels {
        w.write_all(&label.to_le_bytes())?;
    }
    for record in &log.epochs {
        w.write_all(&record.epoch_index.to_le_bytes())?;
        for &v in &record.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Byte-counting reader so format errors can name the offending offset.
struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        let mut filled = 0;
        while filled < buf.len() {
            let n = self.inner.read(&mut buf[filled..]).map_err(Error::Io)?;
            if n == 0 {
                return Err(Error::Format {
                    offset: at + filled as u64,
                    message: format!("unexpected end of file while reading {what}"),
                });
            }
            filled += n;
            self.offset += n as u64;
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.take(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }
}

pub fn read_predlog(path: &Path) -> Result<PredictionLog> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut r = OffsetReader {
        inner: BufReader::new(file),
        offset: 0,
    };

    let mut magic = [0u8; 4];
    r.take(&mut magic, "magic")?;
    let kind = match magic {
        PROB_MAGIC => LogKind::Probabilities,
        LOGIT_MAGIC => LogKind::Logits,
        _ => {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:02x?}"),
            })
        }
    };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        });
    }
    let n = r.u64("sample count")? as usize;
    let k = r.u32("class count")? as usize;
    let t = r.u32("epoch count")? as usize;
    if n == 0 || k == 0 {
        return Err(Error::Format {
            offset: 8,
            message: format!("empty dimensions N = {n}, K = {k}"),
        });
    }
    // Cheap sanity check before allocating: the header promises this much.
    let promised = 24u64 + 4 * n as u64 + t as u64 * (4 + 4 * (n * k) as u64);
    if promised > file_len {
        return Err(Error::Format {
            offset: file_len,
            message: format!("file is {file_len} bytes but the header promises {promised}"),
        });
    }

    let mut labels = vec![0u32; n];
    for (i, slot) in labels.iter_mut().enumerate() {
        *slot = r.u32(&format!("label {i}"))?;
        if *slot as usize >= k {
            return Err(Error::Format {
                offset: r.offset - 4,
                message: format!("label {} out of range for {k} classes", *slot),
            });
        }
    }

    let mut log = PredictionLog {
        kind,
        n_classes: k,
        labels,
        epochs: Vec::with_capacity(t),
    };
    let mut raw = vec![0u8; n * k * 4];
    for rec in 0..t {
        let epoch_index = r.u32(&format!("epoch index of record {rec}"))?;
        r.take(&mut raw, &format!("values of record {rec}"))?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        log.epochs.push(EpochRecord {
            epoch_index,
            values,
        });
    }
    Ok(log)
}
