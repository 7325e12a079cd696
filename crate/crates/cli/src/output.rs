//! Result rows and their CSV / JSONL encodings.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const COLUMNS: [&str; 11] =
    ["experiment", "kernel", "d", "sigma", "theta", "n", "estimator", "estimate", "se", "n_samples", "seed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

/// One output line. Empty optional fields mean "not applicable".
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub kernel: String,
    pub d: Option<usize>,
    pub sigma: Option<f64>,
    pub theta: Option<f64>,
    pub n: Option<usize>,
    pub estimator: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub n_samples: Option<u64>,
    pub seed: u64,
}

/// 17 significant digits; non-finite values as `inf`, `-inf`, `NaN`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn parse_f64(field: &str, s: &str) -> Result<f64, CliError> {
    s.parse::<f64>().map_err(|_| CliError::Parse(format!("column {field}: `{s}` is not a number")))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_f(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl ResultRow {
    fn cells(&self) -> [String; 11] {
        [
            self.experiment.clone(),
            self.kernel.clone(),
            opt(self.d),
            opt_f(self.sigma),
            opt_f(self.theta),
            opt(self.n),
            self.estimator.clone(),
            fmt_f64(self.estimate),
            opt_f(self.se),
            opt(self.n_samples),
            self.seed.to_string(),
        ]
    }

    fn from_cells(c: &[String]) -> Result<Self, CliError> {
        if c.len() != COLUMNS.len() {
            return Err(CliError::Parse(format!("expected {} columns, got {}", COLUMNS.len(), c.len())));
        }
        let o_u = |i: usize| -> Result<Option<usize>, CliError> {
            if c[i].is_empty() {
                Ok(None)
            } else {
                c[i].parse().map(Some).map_err(|_| CliError::Parse(format!("column {}: `{}`", COLUMNS[i], c[i])))
            }
        };
        let o_f = |i: usize| -> Result<Option<f64>, CliError> {
            if c[i].is_empty() {
                Ok(None)
            } else {
                parse_f64(COLUMNS[i], &c[i]).map(Some)
            }
        };
        Ok(Self {
            experiment: c[0].clone(),
            kernel: c[1].clone(),
            d: o_u(2)?,
            sigma: o_f(3)?,
            theta: o_f(4)?,
            n: o_u(5)?,
            estimator: c[6].clone(),
            estimate: parse_f64("estimate", &c[7])?,
            se: o_f(8)?,
            n_samples: o_u(9)?.map(|v| v as u64),
            seed: c[10].parse().map_err(|_| CliError::Parse(format!("column seed: `{}`", c[10])))?,
        })
    }

    fn to_json_line(&self) -> String {
        let num = |v: f64| if v.is_finite() { fmt_f64(v) } else { format!("\"{v}\"") };
        let onum = |v: Option<f64>| v.map(num).unwrap_or_else(|| "null".into());
        let oint = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_else(|| "null".into());
        let s = |v: &str| serde_json::to_string(v).expect("strings always serialize");
        let mut out = String::new();
        write!(
            out,
            "{{\"experiment\":{},\"kernel\":{},\"d\":{},\"sigma\":{},\"theta\":{},\"n\":{},\"estimator\":{},\"estimate\":{},\"se\":{},\"n_samples\":{},\"seed\":{}}}",
            s(&self.experiment),
            s(&self.kernel),
            oint(self.d.map(|v| v as u64)),
            onum(self.sigma),
            onum(self.theta),
            oint(self.n.map(|v| v as u64)),
            s(&self.estimator),
            num(self.estimate),
            onum(self.se),
            oint(self.n_samples),
            self.seed,
        )
        .expect("writing to a String cannot fail");
        out
    }

    fn from_json(v: &serde_json::Value) -> Result<Self, CliError> {
        let get = |k: &str| v.get(k).ok_or_else(|| CliError::Parse(format!("missing field {k}")));
        let text = |k: &str| -> Result<String, CliError> {
            get(k)?.as_str().map(str::to_string).ok_or_else(|| CliError::Parse(format!("field {k} must be a string")))
        };
        let float = |k: &str| -> Result<Option<f64>, CliError> {
            match get(k)? {
                serde_json::Value::Null => Ok(None),
                serde_json::Value::Number(n) => Ok(n.as_f64()),
                serde_json::Value::String(s) => parse_f64(k, s).map(Some),
                _ => Err(CliError::Parse(format!("field {k} must be a number"))),
            }
        };
        let int = |k: &str| -> Result<Option<u64>, CliError> {
            match get(k)? {
                serde_json::Value::Null => Ok(None),
                x => x.as_u64().map(Some).ok_or_else(|| CliError::Parse(format!("field {k} must be an integer"))),
            }
        };
        Ok(Self {
            experiment: text("experiment")?,
            kernel: text("kernel")?,
            d: int("d")?.map(|v| v as usize),
            sigma: float("sigma")?,
            theta: float("theta")?,
            n: int("n")?.map(|v| v as usize),
            estimator: text("estimator")?,
            estimate: float("estimate")?.ok_or_else(|| CliError::Parse("estimate is null".into()))?,
            se: float("se")?,
            n_samples: int("n_samples")?,
            seed: int("seed")?.ok_or_else(|| CliError::Parse("seed is null".into()))?,
        })
    }
}

/// Writes rows to `w` in the given format. An empty CSV still gets its header.
pub fn write_rows(rows: &[ResultRow], format: Format, w: impl Write) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            let mut wr = csv::Writer::from_writer(w);
            wr.write_record(COLUMNS)?;
            for r in rows {
                wr.write_record(r.cells())?;
            }
            wr.flush()?;
        }
        Format::Jsonl => {
            let mut w = std::io::BufWriter::new(w);
            for r in rows {
                writeln!(w, "{}", r.to_json_line())?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn emit(rows: &[ResultRow], path: &Path, format: Format) -> Result<(), CliError> {
    write_rows(rows, format, std::fs::File::create(path)?)
}

pub fn read_rows(r: impl std::io::Read, format: Format) -> Result<Vec<ResultRow>, CliError> {
    match format {
        Format::Csv => {
            let mut rd = csv::Reader::from_reader(r);
            let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
            if header != COLUMNS {
                return Err(CliError::Parse(format!("unexpected header {header:?}")));
            }
            rd.records()
                .map(|rec| {
                    let rec = rec?;
                    ResultRow::from_cells(&rec.iter().map(str::to_string).collect::<Vec<_>>())
                })
                .collect()
        }
        Format::Jsonl => std::io::BufReader::new(r)
            .lines()
            .filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true))
            .map(|l| ResultRow::from_json(&serde_json::from_str(&l?)?))
            .collect(),
    }
}

pub fn parse(path: &Path, format: Format) -> Result<Vec<ResultRow>, CliError> {
    read_rows(std::fs::File::open(path)?, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> ResultRow {
        ResultRow {
            experiment: "scaling".into(),
            kernel: "ideal".into(),
            d: Some(16),
            sigma: Some(0.5),
            theta: Some(0.5),
            n: None,
            estimator: "lag-autocorrelation".into(),
            estimate: 0.1 + 0.2,
            se: Some(1e-3),
            n_samples: Some(100_000),
            seed: u64::MAX,
        }
    }

    #[test]
    fn float_format() {
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(0.1 + 0.2).parse::<f64>().unwrap(), 0.1 + 0.2);
    }

    #[test]
    fn non_finite_round_trip() {
        let mut r = row();
        r.estimate = f64::INFINITY;
        r.se = Some(f64::NEG_INFINITY);
        for f in [Format::Csv, Format::Jsonl] {
            let mut buf = Vec::new();
            write_rows(&[r.clone()], f, &mut buf).unwrap();
            assert_eq!(read_rows(&buf[..], f).unwrap(), vec![r.clone()]);
        }
    }

    #[test]
    fn header_is_checked() {
        assert!(read_rows("a,b\n".as_bytes(), Format::Csv).is_err());
    }
}
