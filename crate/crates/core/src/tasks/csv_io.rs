use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::SequenceDataset;
use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Reads rows of `seq_len·input_dim` features followed by an integer label.
/// Features are time-major: step t occupies columns t·d .. (t+1)·d.
pub fn load_csv_sequences(
    path: impl AsRef<Path>,
    seq_len: usize,
    input_dim: usize,
    has_header: bool,
) -> Result<SequenceDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_sequences(file, seq_len, input_dim, has_header)
}

pub fn read_csv_sequences(
    reader: impl Read,
    seq_len: usize,
    input_dim: usize,
    has_header: bool,
) -> Result<SequenceDataset> {
    if seq_len == 0 || input_dim == 0 {
        return Err(Error::invalid("seq_len and input_dim must be positive"));
    }
    let width = seq_len * input_dim;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_reader(reader);
    let first_row = if has_header { 2 } else { 1 };
    let mut sequences = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = first_row + i;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.len() != width + 1 {
            return Err(Error::Parse {
                row,
                column: rec.len(),
                message: format!("expected {} columns, found {}", width + 1, rec.len()),
            });
        }
        let mut feats = Vec::with_capacity(width);
        for (c, cell) in rec.iter().take(width).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c + 1,
                    message: "non-finite value".into(),
                });
            }
            feats.push(v);
        }
        let cell = &rec[width];
        let label: usize = cell.trim().parse().map_err(|_| Error::Parse {
            row,
            column: width + 1,
            message: format!("label is not a non-negative integer: {cell:?}"),
        })?;
        sequences.push(
            feats
                .chunks(input_dim)
                .map(|c| Vector::from_vec_unchecked(c.to_vec()))
                .collect::<Vec<_>>(),
        );
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            row: first_row,
            column: 0,
            message: "no data rows".into(),
        });
    }
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    SequenceDataset::new(sequences, labels, classes)
}

/// Writes the dataset in the layout [`read_csv_sequences`] accepts, with
/// shortest round-trip decimals.
pub fn write_csv_sequences(data: &SequenceDataset, writer: impl Write, header: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    if header {
        let mut names: Vec<String> = (0..data.seq_len)
            .flat_map(|t| (0..data.input_dim).map(move |j| format!("t{t}_x{j}")))
            .collect();
        names.push("label".into());
        w.write_record(&names).map_err(to_err)?;
    }
    for (seq, y) in data.sequences.iter().zip(&data.labels) {
        let mut rec: Vec<String> = seq
            .iter()
            .flat_map(|x| x.as_slice().iter().map(|v| format!("{v:?}")))
            .collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn save_csv_sequences(
    data: &SequenceDataset,
    path: impl AsRef<Path>,
    header: bool,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_sequences(data, std::io::BufWriter::new(file), header)
}
