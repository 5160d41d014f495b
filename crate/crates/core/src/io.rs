//! CSV formats.
//!
//! - Point records: `y_true,y_pred`.
//! - Sample records: `y_true,s1,...,sN`.
//! - Either may carry a `group_id` column for leave-one-group-out runs.
//! - Series: `t,y_true,y_pred`.
//! - Step results: `t,lo,hi,length,covered,rolling_coverage`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scores::{Prediction, PredictionRecord};
use crate::timeseries::{SeriesPoint, StepResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<PredictionRecord>,
    pub groups: Option<Vec<String>>,
}

impl Dataset {
    pub fn ungrouped(records: Vec<PredictionRecord>) -> Self {
        Self { records, groups: None }
    }
}

fn parse_f64(field: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: column {column}: not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::Format(format!("line {line}: column {column}: non-finite value")));
    }
    Ok(v)
}

pub fn read_records<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let y_col = find("y_true").ok_or_else(|| Error::Format("missing y_true column".into()))?;
    let group_col = find("group_id");
    let point_col = find("y_pred");
    let mut sample_cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix('s').and_then(|n| n.parse::<usize>().ok()).map(|n| (n, i)))
        .collect();
    sample_cols.sort_unstable();
    if point_col.is_some() && !sample_cols.is_empty() {
        return Err(Error::Format("both y_pred and sample columns present".into()));
    }
    if point_col.is_none() && sample_cols.is_empty() {
        return Err(Error::Format("need a y_pred column or s1..sN sample columns".into()));
    }

    let mut records = Vec::new();
    let mut groups = group_col.map(|_| Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row as u64 + 2;
        let get = |i: usize| rec.get(i).ok_or_else(|| Error::Format(format!("line {line}: short row")));
        let y = parse_f64(get(y_col)?, line, "y_true")?;
        let record = match point_col {
            Some(pc) => PredictionRecord::point(y, parse_f64(get(pc)?, line, "y_pred")?)?,
            None => {
                let samples = sample_cols
                    .iter()
                    .map(|&(_, i)| parse_f64(get(i)?, line, &headers[i]))
                    .collect::<Result<Vec<_>>>()?;
                PredictionRecord::samples(y, samples)?
            }
        };
        records.push(record);
        if let (Some(gs), Some(gc)) = (groups.as_mut(), group_col) {
            gs.push(get(gc)?.to_string());
        }
    }
    if records.is_empty() {
        return Err(Error::Empty("input file"));
    }
    Ok(Dataset { records, groups })
}

pub fn read_records_path(path: &Path) -> Result<Dataset> {
    read_records(std::fs::File::open(path)?)
}

pub fn write_records<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = data.records.first() else {
        return Err(Error::Empty("record list"));
    };
    let mut header = vec!["y_true".to_string()];
    match first.prediction() {
        Prediction::Point(_) => header.push("y_pred".into()),
        Prediction::Samples(s) => header.extend((1..=s.len()).map(|i| format!("s{i}"))),
    }
    if data.groups.is_some() {
        header.push("group_id".into());
    }
    w.write_record(&header)?;
    for (i, r) in data.records.iter().enumerate() {
        let mut row = vec![r.y_true().to_string()];
        match r.prediction() {
            Prediction::Point(p) => row.push(p.to_string()),
            Prediction::Samples(s) => {
                if s.len() + 1 != header.len() - data.groups.is_some() as usize {
                    return Err(Error::Format("sample counts differ between records".into()));
                }
                row.extend(s.iter().map(|x| x.to_string()))
            }
        }
        if let Some(g) = &data.groups {
            row.push(g[i].clone());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series<R: Read>(reader: R) -> Result<Vec<SeriesPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Format(format!("missing {name} column")))
    };
    let (tc, yc, pc) = (col("t")?, col("y_true")?, col("y_pred")?);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row as u64 + 2;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format(format!("line {line}: short row")));
        let t: u64 =
            field(tc)?.parse().map_err(|_| Error::Format(format!("line {line}: t must be a non-negative integer")))?;
        out.push(SeriesPoint {
            t,
            y_true: parse_f64(field(yc)?, line, "y_true")?,
            y_pred: parse_f64(field(pc)?, line, "y_pred")?,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty("input file"));
    }
    Ok(out)
}

pub fn write_series<W: Write>(writer: W, series: &[SeriesPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "y_true", "y_pred"])?;
    for p in series {
        w.write_record([p.t.to_string(), p.y_true.to_string(), p.y_pred.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_steps<W: Write>(writer: W, steps: &[StepResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "lo", "hi", "length", "covered", "rolling_coverage"])?;
    for s in steps {
        w.write_record([
            s.t.to_string(),
            s.interval.lo.to_string(),
            s.interval.hi.to_string(),
            s.length.to_string(),
            (s.covered as u8).to_string(),
            s.rolling_coverage.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
