//! Delimiter-separated tables with a header row.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::RawValue;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R, delimiter: u8) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Data(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(format!("row {}: {e}", i + 1)))?;
            if rec.len() != header.len() {
                return Err(Error::Data(format!(
                    "row {} has {} columns, header has {}",
                    i + 1,
                    rec.len(),
                    header.len()
                )));
            }
            rows.push(rec.iter().map(str::to_owned).collect());
        }
        Ok(RawTable { header, rows })
    }

    pub fn read(path: impl AsRef<Path>, delimiter: u8) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(f), delimiter)
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column `{name}` not found in header")))
    }

    pub(crate) fn raw_value(&self, cell: &str, missing_tokens: &[String]) -> RawValue {
        if missing_tokens.iter().any(|t| t == cell) {
            RawValue::Missing
        } else {
            RawValue::Text(cell.to_owned())
        }
    }
}

/// Writes rows as a delimiter-separated table.
pub fn write_table(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let to_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
