//! File formats: datasets as CSV, measures / fits / dendrograms as JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::em::Responsibilities;
use crate::error::{Error, Result};
use crate::model::Dataset;

/// Shortest round-trip decimal representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Dataset as CSV with header `x_1,…,x_D,y[,z]`; an optional preamble becomes a `#` comment line.
pub fn dataset_to_csv(data: &Dataset, preamble: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(p) = preamble {
        let _ = writeln!(out, "# {p}");
    }
    let mut header: Vec<String> = (1..=data.dim()).map(|i| format!("x_{i}")).collect();
    header.push("y".into());
    if data.labels().is_some() {
        header.push("z".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for n in 0..data.len() {
        let mut cells: Vec<String> = data.x_row(n).iter().map(|&v| fmt_f64(v)).collect();
        cells.push(fmt_f64(data.y(n)));
        if let Some(l) = data.labels() {
            cells.push(l[n].to_string());
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn dataset_from_csv(text: &str, origin: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::input(origin, e.position().map(|p| p.line()), e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let dim = names.iter().take_while(|h| h.starts_with("x_")).count();
    for (i, name) in names.iter().take(dim).enumerate() {
        if *name != format!("x_{}", i + 1) {
            return Err(Error::input(
                origin,
                Some(1),
                format!("unexpected column `{name}`"),
            ));
        }
    }
    let has_labels = match &names[dim..] {
        ["y"] => false,
        ["y", "z"] => true,
        _ => {
            return Err(Error::input(
                origin,
                None,
                format!(
                    "header must be x_1,...,x_D,y[,z]; got `{}`",
                    names.join(",")
                ),
            ))
        }
    };
    if dim == 0 {
        return Err(Error::input(origin, None, "header has no x_ columns"));
    }

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut labels = has_labels.then(Vec::new);
    for record in reader.records() {
        let record = record
            .map_err(|e| Error::input(origin, e.position().map(|p| p.line()), e.to_string()))?;
        let line = record.position().map(|p| p.line());
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| Error::input(origin, line, format!("column {}: {e}", names[i])))
        };
        for i in 0..dim {
            x.push(num(i)?);
        }
        y.push(num(dim)?);
        if let Some(l) = labels.as_mut() {
            let z = record[dim + 1]
                .parse::<usize>()
                .map_err(|e| Error::input(origin, line, format!("column z: {e}")))?;
            l.push(z);
        }
    }
    Dataset::new(dim, x, y, labels).map_err(|e| Error::input(origin, None, e.to_string()))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_csv(&text, path)
}

pub fn responsibilities_to_csv(resp: &Responsibilities) -> String {
    let mut out = String::new();
    let header: Vec<String> = (1..=resp.n_components())
        .map(|k| format!("tau_{k}"))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for n in 0..resp.n_rows() {
        let row: Vec<String> = resp.row(n).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::input(path, Some(e.line() as u64), e.to_string()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_comment_layout() {
        let d = Dataset::new(
            2,
            vec![0.1, 0.2, 0.3, 0.4],
            vec![1.0, 2.0],
            Some(vec![0, 1]),
        )
        .unwrap();
        let text = dataset_to_csv(&d, Some("seed=1"));
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# seed=1"));
        assert_eq!(lines.next(), Some("x_1,x_2,y,z"));
        assert_eq!(lines.next(), Some("0.1,0.2,1.0,0"));
    }

    #[test]
    fn malformed_input_reports_line() {
        let text = "x_1,y\n0.5,1.0\n0.7,abc\n";
        let err = dataset_from_csv(text, Path::new("data.csv")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("data.csv:3"), "{msg}");

        let err = dataset_from_csv("a,b\n1,2\n", Path::new("d.csv")).unwrap_err();
        assert!(err.to_string().contains("header"));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            rows in prop::collection::vec((any::<f64>().prop_filter("finite", |v| v.is_finite()),
                                           -1e300f64..1e300, 0usize..5), 1..30)
        ) {
            let x: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let z: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let d = Dataset::new(1, x, y, Some(z)).unwrap();
            let back = dataset_from_csv(&dataset_to_csv(&d, None), Path::new("mem")).unwrap();
            prop_assert!(back.xs().iter().zip(d.xs()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert!(back.ys().iter().zip(d.ys()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.labels(), d.labels());
        }
    }
}
