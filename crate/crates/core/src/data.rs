//! Reading field data from `field,x,y,v1[,v2]` CSV files.

use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;

use crate::baselines::GroupedSample;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::rank_test::FieldDataset;

/// Coordinate tolerance when matching rows to lattice sites.
pub const SITE_TOL: f64 = 1e-9;

struct Row {
    field: String,
    x: f64,
    y: f64,
    values: Vec<f64>,
    line: u64,
}

/// Parsed rows grouped by field label, in order of first appearance.
struct Table {
    p: usize,
    fields: IndexMap<String, Vec<Row>>,
}

fn parse<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::InvalidData(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let p = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["field", "x", "y", "v1"] => 1,
        ["field", "x", "y", "v1", "v2"] => 2,
        _ => {
            return Err(Error::InvalidData(format!(
                "expected header field,x,y,v1[,v2], got {}",
                header.join(",")
            )))
        }
    };
    let mut fields: IndexMap<String, Vec<Row>> = IndexMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::InvalidData(format!("malformed CSV: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            let s = &rec[i];
            let v: f64 = s
                .parse()
                .map_err(|_| Error::InvalidData(format!("line {line}: column {} is not a number: {s:?}", header[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidData(format!("line {line}: column {} is not finite", header[i])))
            }
        };
        let row = Row {
            field: rec[0].to_string(),
            x: num(1)?,
            y: num(2)?,
            values: (0..p).map(|v| num(3 + v)).collect::<Result<_>>()?,
            line,
        };
        fields.entry(row.field.clone()).or_default().push(row);
    }
    if fields.len() < 2 {
        return Err(Error::InvalidData(format!("need at least two fields, found {}", fields.len())));
    }
    Ok(Table { p, fields })
}

/// Field labels and a dataset whose row `j` is lattice site `j`.
pub fn read_fields<R: Read>(reader: R, lattice: &Lattice) -> Result<(Vec<String>, FieldDataset)> {
    let table = parse(reader)?;
    let n = lattice.len();
    let p = table.p;
    let mut blocks = Vec::with_capacity(table.fields.len());
    for (label, rows) in &table.fields {
        let mut block = vec![f64::NAN; n * p];
        let mut seen = vec![false; n];
        for r in rows {
            let j = lattice.site_index(r.x, r.y, SITE_TOL).ok_or_else(|| {
                Error::InvalidData(format!(
                    "line {}: ({}, {}) is not a site of the {}×{} lattice",
                    r.line,
                    r.x,
                    r.y,
                    lattice.grid_size(),
                    lattice.grid_size()
                ))
            })?;
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidData(format!(
                    "line {}: field {label:?} has site ({}, {}) more than once",
                    r.line, r.x, r.y
                )));
            }
            block[j * p..(j + 1) * p].copy_from_slice(&r.values);
        }
        let missing = seen.iter().filter(|s| !**s).count();
        if missing > 0 {
            return Err(Error::InvalidData(format!("field {label:?} is missing {missing} of {n} sites")));
        }
        blocks.push(block);
    }
    let labels = table.fields.keys().cloned().collect();
    Ok((labels, FieldDataset::new(blocks, n, p)?))
}

/// Field labels and groups in row order, ignoring coordinates.
pub fn read_groups<R: Read>(reader: R) -> Result<(Vec<String>, GroupedSample)> {
    let table = parse(reader)?;
    let labels = table.fields.keys().cloned().collect();
    let groups = table
        .fields
        .values()
        .map(|rows| rows.iter().flat_map(|r| r.values.iter().copied()).collect())
        .collect();
    Ok((labels, GroupedSample::new(groups, table.p)?))
}

pub fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}
