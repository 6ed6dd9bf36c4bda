//! `prunelab dataset gen`: synthetic datasets as CSV.

use std::path::Path;

use prunelab_core::data::{generate_dataset, Dataset, SyntheticKind};

use crate::error::{CliError, CliResult};

/// One row per sample: features `x0..`, `label`, and `split`.
pub fn write_csv(kind: SyntheticKind, seed: u64, out: &Path) -> CliResult<usize> {
    let splits = generate_dataset(kind, seed)?;
    let mut w = csv::Writer::from_path(out)?;
    let features = splits.train.features.row_len();
    let mut header: Vec<String> = (0..features).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    header.push("split".into());
    w.write_record(&header)?;
    let mut rows = 0;
    for (name, data) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        rows += write_split(&mut w, name, data)?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    Ok(rows)
}

fn write_split<W: std::io::Write>(w: &mut csv::Writer<W>, name: &str, data: &Dataset) -> CliResult<usize> {
    for (i, &label) in data.labels.iter().enumerate() {
        let mut record: Vec<String> = data.features.row(i).iter().map(|v| format!("{v:?}")).collect();
        record.push(label.to_string());
        record.push(name.to_string());
        w.write_record(&record)?;
    }
    Ok(data.len())
}
