use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{DatasetError, Sample, TargetKind};

pub const CSV_HEADER: [&str; 4] = ["ir_text", "shape_summary", "target_kind", "target_value"];

pub fn write_csv_to<W: Write>(samples: &[Sample], out: W) -> Result<(), DatasetError> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(out);
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => DatasetError::Io(io),
        other => DatasetError::Config(format!("csv writer: {other:?}")),
    };
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for s in samples {
        let value = s.target_value.to_string();
        w.write_record([
            s.ir_text.as_str(),
            s.shape_summary.as_str(),
            s.target_kind.name(),
            value.as_str(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(samples: &[Sample], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_csv_to(samples, File::create(path)?)
}

/// Reads samples from CSV and checks every row.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<Sample>, DatasetError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(|e| DatasetError::CsvFormat {
        row: 0,
        column: "header".into(),
        message: e.to_string(),
    })?;
    if header.iter().ne(CSV_HEADER) {
        return Err(DatasetError::CsvFormat {
            row: 0,
            column: "header".into(),
            message: format!("expected `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => DatasetError::Io(io),
            other => DatasetError::CsvFormat {
                row,
                column: "*".into(),
                message: format!("{other:?}"),
            },
        })?;
        let bad = |column: &str, message: String| DatasetError::CsvFormat {
            row,
            column: column.into(),
            message,
        };
        if rec.len() != 4 {
            return Err(bad("*", format!("expected 4 fields, found {}", rec.len())));
        }
        let target_kind: TargetKind = rec[2].parse().map_err(|e| bad("target_kind", e))?;
        let target_value: f64 = rec[3]
            .parse()
            .map_err(|_| bad("target_value", format!("not a number: `{}`", &rec[3])))?;
        let sample = Sample {
            ir_text: rec[0].to_string(),
            shape_summary: rec[1].to_string(),
            target_kind,
            target_value,
        };
        sample
            .check()
            .map_err(|message| DatasetError::Validation { row, message })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<Sample>, DatasetError> {
    read_csv(File::open(path)?)
}
