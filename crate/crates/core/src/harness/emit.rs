use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{OutputFormat, ResultTable};
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 11] = [
    "sweep_axis",
    "sweep_value",
    "estimator",
    "trials",
    "nmse_mean",
    "nmse_std",
    "uad_err_mean",
    "uad_err_std",
    "hyper_mse_mean",
    "iters_to_converge_mean",
    "seed",
];

/// Shortest representation that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Aggregated rows as CSV; missing metrics are empty fields.
pub fn write_csv<W: Write>(table: &ResultTable, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &table.rows {
        w.write_record([
            table.axis.name().to_string(),
            num(r.sweep_value),
            r.estimator.name().to_string(),
            r.trials.to_string(),
            num(r.nmse_mean),
            num(r.nmse_std),
            opt(r.uad_err_mean),
            opt(r.uad_err_std),
            opt(r.hyper_mse_mean),
            opt(r.iters_to_converge_mean),
            table.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The whole table, per-trial metrics included.
pub fn write_json<W: Write>(table: &ResultTable, out: W) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(out, table)
}

pub fn read_json(path: &Path) -> Result<ResultTable> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `table` to `path` in the given format.
pub fn emit(table: &ResultTable, format: OutputFormat, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = BufWriter::new(File::create(path).map_err(io_err)?);
    match format {
        OutputFormat::Csv => write_csv(table, &mut file).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?,
        OutputFormat::Json => write_json(table, &mut file).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?,
    }
    file.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{aggregate, Estimator, SweepAxis};
    use crate::metrics::TrialMetrics;

    fn trial(nmse: f64, uad: Option<f64>) -> TrialMetrics {
        TrialMetrics {
            nmse,
            uad_error_rate: uad,
            missed_rate: uad,
            false_alarm_rate: uad.map(|_| 0.0),
            hyper_mse: uad.map(|u| u * 0.5),
            iterations_to_converge: uad.map(|_| 7),
            nmse_trace: uad.map(|_| vec![0.5, 0.1, 0.1]).unwrap_or_default(),
        }
    }

    fn table() -> ResultTable {
        let mut t = ResultTable::empty("t", SweepAxis::SnrDb, 7);
        t.rows.push(aggregate(
            10.0,
            Estimator::Brmpem,
            2,
            vec![trial(0.1, Some(0.002)), trial(0.3, Some(0.0))],
        ));
        t.rows.push(aggregate(
            10.0,
            Estimator::Ls,
            2,
            vec![trial(1e-7, None), trial(2.5, None)],
        ));
        t
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&ResultTable::empty("e", SweepAxis::L, 1), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{}\n", CSV_HEADER.join(","))
        );
    }

    #[test]
    fn csv_rows_and_number_format() {
        let mut buf = Vec::new();
        write_csv(&table(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let std = |xs: &[f64]| num(crate::metrics::sample_std(xs));
        let expected = format!(
            "snr_db,10.0,brmpem,2,0.2,{},0.001,{},0.0005,7.0,7",
            std(&[0.1, 0.3]),
            std(&[0.002, 0.0])
        );
        assert_eq!(lines[1], expected);
        assert!(lines[2].starts_with(&format!("snr_db,10.0,ls,2,{},", num((1e-7 + 2.5) / 2.0))));
        assert!(lines[2].ends_with(",,,,,7"));
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let v: f64 = rec[4].parse().unwrap();
            assert_eq!(num(v), &rec[4]);
        }
    }

    #[test]
    fn json_round_trip() {
        let t = table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        emit(&t, OutputFormat::Json, &path).unwrap();
        assert_eq!(read_json(&path).unwrap(), t);
    }

    #[test]
    fn io_errors_carry_path() {
        let err = emit(
            &table(),
            OutputFormat::Csv,
            Path::new("/nonexistent/dir/x.csv"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.csv"));
    }
}
