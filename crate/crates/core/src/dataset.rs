//! Annual-maximum series read from CSV: one value column, or year and value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GevError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Decide from the column count of the first data row.
    Auto,
    CsvSingleColumn,
    CsvYearValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub values: Vec<f64>,
    pub years: Option<Vec<i64>>,
    pub name: String,
    pub units: String,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Parse CSV text. A first row with a non-numeric field is a header.
    pub fn parse(text: &str, format: DataFormat, name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut values = Vec::new();
        let mut years = Vec::new();
        let mut format = format;
        let mut first = true;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| GevError::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let fields: Vec<&str> = rec.iter().filter(|f| !f.is_empty()).collect();
            if fields.is_empty() {
                continue;
            }
            if first {
                first = false;
                if fields.iter().any(|f| f.parse::<f64>().is_err()) {
                    continue;
                }
            }
            if format == DataFormat::Auto {
                format = if fields.len() >= 2 {
                    DataFormat::CsvYearValue
                } else {
                    DataFormat::CsvSingleColumn
                };
            }
            let num = |s: &str| -> Result<f64> {
                let v = s.parse::<f64>().map_err(|_| GevError::Parse {
                    line,
                    message: format!("'{s}' is not a number"),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(GevError::Parse { line, message: format!("'{s}' is not finite") })
                }
            };
            match format {
                DataFormat::CsvYearValue => {
                    if fields.len() != 2 {
                        return Err(GevError::Parse {
                            line,
                            message: format!("expected year,value; got {} fields", fields.len()),
                        });
                    }
                    let y = fields[0].parse::<i64>().map_err(|_| GevError::Parse {
                        line,
                        message: format!("'{}' is not a year", fields[0]),
                    })?;
                    years.push(y);
                    values.push(num(fields[1])?);
                }
                _ => {
                    if fields.len() != 1 {
                        return Err(GevError::Parse {
                            line,
                            message: format!("expected one value; got {} fields", fields.len()),
                        });
                    }
                    values.push(num(fields[0])?);
                }
            }
        }
        if values.is_empty() {
            return Err(GevError::InvalidArgument("dataset is empty".into()));
        }
        if values.len() < 20 {
            log::warn!("only {} observations; estimates will be unstable", values.len());
        }
        Ok(Dataset {
            values,
            years: (format == DataFormat::CsvYearValue).then_some(years),
            name: name.to_string(),
            units: String::new(),
        })
    }

    pub fn from_path(path: &Path, format: DataFormat) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned());
        Self::parse(&text, format, &name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_column() {
        let d = Dataset::parse("381.5\n240.2\n", DataFormat::Auto, "x").unwrap();
        assert_eq!(d.values, vec![381.5, 240.2]);
        assert!(d.years.is_none());
    }

    #[test]
    fn year_value_with_header() {
        let d = Dataset::parse("year,value\n1971,143.0\n", DataFormat::Auto, "x").unwrap();
        assert_eq!(d.years, Some(vec![1971]));
        assert_eq!(d.values, vec![143.0]);
        let h = Dataset::parse("rain\n1.5\n2.5\n", DataFormat::CsvSingleColumn, "x").unwrap();
        assert_eq!(h.values, vec![1.5, 2.5]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match Dataset::parse("1.0\n2.0\nabc\n", DataFormat::Auto, "x") {
            Err(GevError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match Dataset::parse("year,value\n1971,1.0\n1972\n", DataFormat::Auto, "x") {
            Err(GevError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(Dataset::parse("", DataFormat::Auto, "x").is_err());
        assert!(Dataset::parse("value\n", DataFormat::Auto, "x").is_err());
    }
}
