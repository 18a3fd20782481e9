//! Metrics tables. The header is [`MetricsRow::FIELDS`]; floats carry 17
//! significant digits, absent radii are empty cells, lines end in LF.

use std::path::Path;

use largo_core::train::MetricsRow;

use crate::error::{io_err, CliError, CliResult};

/// 17 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn record(row: &MetricsRow) -> [String; 12] {
    let opt = |v: Option<f64>| v.map_or(String::new(), format_float);
    [
        row.run_id.clone(),
        row.method.clone(),
        row.seed.to_string(),
        row.epoch.to_string(),
        row.split_name.clone(),
        format_float(row.loss),
        format_float(row.accuracy),
        format_float(row.delta_l1),
        opt(row.gamma_a),
        opt(row.gamma_b),
        row.trainable_params.to_string(),
        row.wall_ms.to_string(),
    ]
}

pub fn to_csv_bytes(rows: &[MetricsRow]) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let wrap = |e: csv::Error| CliError::Io(format!("csv encoding: {e}"));
    w.write_record(MetricsRow::FIELDS).map_err(wrap)?;
    for row in rows {
        w.write_record(record(row)).map_err(wrap)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Io(format!("csv encoding: {e}")))
}

pub fn emit_csv(rows: &[MetricsRow], path: &Path) -> CliResult<()> {
    let bytes = to_csv_bytes(rows)?;
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_csv(path: &Path) -> CliResult<Vec<MetricsRow>> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let origin = path.display().to_string();
    let header = r
        .headers()
        .map_err(|e| CliError::Io(format!("{origin}: {e}")))?
        .clone();
    for (k, want) in MetricsRow::FIELDS.iter().enumerate() {
        match header.get(k) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(CliError::Io(format!(
                    "{origin}: column {} is {got:?}, expected {want:?}",
                    k + 1
                )))
            }
            None => return Err(CliError::Io(format!("{origin}: missing column {want:?}"))),
        }
    }
    if header.len() > MetricsRow::FIELDS.len() {
        return Err(CliError::Io(format!(
            "{origin}: unexpected column {:?}",
            &header[MetricsRow::FIELDS.len()]
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::Io(format!("{origin}:{line}: {e}")))?;
        let cell = |k: usize| &rec[k];
        fn parse<T: std::str::FromStr>(origin: &str, line: usize, col: &str, v: &str) -> CliResult<T> {
            v.parse()
                .map_err(|_| CliError::Io(format!("{origin}:{line}: column {col:?}: cannot parse {v:?}")))
        }
        let f = MetricsRow::FIELDS;
        let opt = |k: usize| -> CliResult<Option<f64>> {
            if cell(k).is_empty() {
                Ok(None)
            } else {
                parse(&origin, line, f[k], cell(k)).map(Some)
            }
        };
        rows.push(MetricsRow {
            run_id: cell(0).to_string(),
            method: cell(1).to_string(),
            seed: parse(&origin, line, f[2], cell(2))?,
            epoch: parse(&origin, line, f[3], cell(3))?,
            split_name: cell(4).to_string(),
            loss: parse(&origin, line, f[5], cell(5))?,
            accuracy: parse(&origin, line, f[6], cell(6))?,
            delta_l1: parse(&origin, line, f[7], cell(7))?,
            gamma_a: opt(8)?,
            gamma_b: opt(9)?,
            trainable_params: parse(&origin, line, f[10], cell(10))?,
            wall_ms: parse(&origin, line, f[11], cell(11))?,
        });
    }
    Ok(rows)
}
