//! Dataset CSV schema.
//!
//! Columns: `id, split, clean_label (optional), noisy_label, clean
//! (optional), f0..f{D-1}`. The header row is required; `clean` is the
//! 0/1 clean-label mask written by the corruption command and, when
//! present, must agree with the label columns.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Dataset, Split};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn save_csv(path: &Path, ds: &Dataset, include_clean_mask: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let clean_mask = if include_clean_mask {
        let mask = ds.clean_mask().ok_or_else(|| {
            Error::InvalidInput("cannot write a clean-mask column without clean labels".into())
        })?;
        Some(mask)
    } else {
        None
    };

    write!(w, "id,split")?;
    if ds.clean_labels.is_some() {
        write!(w, ",clean_label")?;
    }
    write!(w, ",noisy_label")?;
    if clean_mask.is_some() {
        write!(w, ",clean")?;
    }
    for j in 0..ds.n_features {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;

    for i in 0..ds.n_samples() {
        write!(w, "{i},{}", ds.splits[i].as_str())?;
        if let Some(clean) = &ds.clean_labels {
            write!(w, ",{}", clean[i])?;
        }
        write!(w, ",{}", ds.noisy_labels[i])?;
        if let Some(mask) = &clean_mask {
            write!(w, ",{}", u8::from(mask[i]))?;
        }
        for &v in ds.feature_row(i) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(parse_err(1, "empty file, expected a header row")),
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();

    let find = |name: &str| columns.iter().position(|c| *c == name);
    let id_col = find("id").ok_or_else(|| parse_err(1, "missing column id"))?;
    let split_col = find("split").ok_or_else(|| parse_err(1, "missing column split"))?;
    let noisy_col =
        find("noisy_label").ok_or_else(|| parse_err(1, "missing column noisy_label"))?;
    let clean_col = find("clean_label");
    let mask_col = find("clean");

    // Feature columns must be f0..f{D-1}, in order, and account for
    // everything not matched above.
    let feature_cols: Vec<usize> = columns
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            *i != id_col
                && *i != split_col
                && *i != noisy_col
                && Some(*i) != clean_col
                && Some(*i) != mask_col
        })
        .map(|(i, _)| i)
        .collect();
    for (j, &col) in feature_cols.iter().enumerate() {
        let expected = format!("f{j}");
        if columns[col] != expected {
            return Err(parse_err(
                1,
                format!("expected column {expected}, found {:?}", columns[col]),
            ));
        }
    }
    let n_features = feature_cols.len();

    let mut features = Vec::new();
    let mut noisy_labels = Vec::new();
    let mut clean_labels: Vec<usize> = Vec::new();
    let mut splits = Vec::new();

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(parse_err(
                line_no,
                format!("{} fields, expected {}", fields.len(), columns.len()),
            ));
        }

        let row = noisy_labels.len();
        let id: usize = fields[id_col]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad id {:?}", fields[id_col])))?;
        if id != row {
            return Err(parse_err(
                line_no,
                format!("id {id} out of order, expected {row}"),
            ));
        }
        let split: Split = fields[split_col]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad split {:?}", fields[split_col])))?;
        let noisy: usize = fields[noisy_col]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad noisy_label {:?}", fields[noisy_col])))?;
        if let Some(col) = clean_col {
            let clean: usize = fields[col]
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad clean_label {:?}", fields[col])))?;
            clean_labels.push(clean);
            if let Some(mcol) = mask_col {
                let flag: u8 = fields[mcol].parse().map_err(|_| {
                    parse_err(line_no, format!("bad clean flag {:?}", fields[mcol]))
                })?;
                if (flag == 1) != (clean == noisy) {
                    return Err(parse_err(
                        line_no,
                        format!("clean flag {flag} contradicts labels {clean} vs {noisy}"),
                    ));
                }
            }
        }
        noisy_labels.push(noisy);
        splits.push(split);
        for &col in &feature_cols {
            let v: f64 = fields[col]
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad feature value {:?}", fields[col])))?;
            features.push(v);
        }
    }

    let clean_labels = if clean_col.is_some() {
        Some(clean_labels)
    } else {
        None
    };
    let n_classes = noisy_labels
        .iter()
        .copied()
        .chain(clean_labels.iter().flatten().copied())
        .max()
        .map_or(2, |m| m + 1)
        .max(2);

    let ds = Dataset {
        n_features,
        n_classes,
        features,
        noisy_labels,
        clean_labels,
        splits,
        hard: None,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_blobs, BlobsConfig};

    #[test]
    fn round_trip_preserves_everything_but_hard_tags() {
        let ds = gen_blobs(&BlobsConfig {
            per_class: 12,
            test_per_class: 3,
            ..BlobsConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_csv(&path, &ds, true).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.noisy_labels, ds.noisy_labels);
        assert_eq!(back.clean_labels, ds.clean_labels);
        assert_eq!(back.splits, ds.splits);
        assert_eq!(back.n_features, ds.n_features);
        for (a, b) in back.features.iter().zip(&ds.features) {
            assert!((a - b).abs() <= 1e-7 * b.abs().max(1.0));
        }
    }

    #[test]
    fn missing_label_column_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "id,split,f0,f1\n0,train,1.0,2.0\n").unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line: 1, message }) => {
                assert!(message.contains("noisy_label"), "{message}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "id,split,noisy_label,f0,f1\n0,train,1,1.0,2.0\n1,train,0,3.0\n",
        )
        .unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("expected a line-3 parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_data_section_is_a_valid_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "id,split,noisy_label,f0,f1\n").unwrap();
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.n_samples(), 0);
        assert_eq!(ds.n_features, 2);
    }

    #[test]
    fn contradictory_clean_flag_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "id,split,clean_label,noisy_label,clean,f0,f1\n0,train,1,1,0,1.0,2.0\n",
        )
        .unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 2, .. })));
    }
}
