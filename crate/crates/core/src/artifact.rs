//! Plain-text artifact writers shared by the pipeline stages.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Scientific notation with 17 significant digits; parses back to the same bits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a header row followed by numeric rows.
pub fn write_table<W: Write>(writer: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_table(
    path: impl AsRef<Path>,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_table(std::io::BufWriter::new(file), header, rows)
}

/// Sparse `i,j,value` triplets.
pub fn write_triplets<W: Write>(writer: W, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<()> {
    write_table(
        writer,
        &["i", "j", "value"],
        entries
            .into_iter()
            .map(|(i, j, v)| vec![i.to_string(), j.to_string(), format_f64(v)]),
    )
}

pub fn save_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}
