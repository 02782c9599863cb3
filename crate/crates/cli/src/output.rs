use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Format};
use crate::error::CliError;

/// Env var naming the default output directory.
pub const OUT_DIR_ENV: &str = "MILSTEIN_OUT_DIR";
pub const REPORT_SCHEMA: &str = "milstein-report/1";

/// Rows of plot-ready data with a versioned schema. New columns are appended only.
#[derive(Clone, Debug, PartialEq)]
pub struct DataTable {
    pub schema: &'static str,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl DataTable {
    pub fn new(schema: &'static str, columns: &[&str]) -> Self {
        Self {
            schema,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn csv_bytes(&self, hash: &str) -> Result<Vec<u8>, csv::Error> {
        let mut buf = format!("# schema={} config_hash={hash}\n", self.schema).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.columns)?;
            for row in &self.rows {
                w.write_record(row.iter().map(cell))?;
            }
            w.flush()?;
        }
        Ok(buf)
    }

    fn json_bytes(&self, hash: &str) -> Vec<u8> {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Object(self.columns.iter().cloned().zip(r.iter().cloned()).collect()))
            .collect();
        let doc = json!({ "schema": self.schema, "config_hash": hash, "rows": rows });
        let mut out = serde_json::to_vec_pretty(&doc).expect("data serializes");
        out.push(b'\n');
        out
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Report document: schema, hash and config echo around the verb's result.
pub fn report_bytes(cfg: &ExperimentConfig, pass: bool, result: Value) -> Vec<u8> {
    let doc = json!({
        "schema": REPORT_SCHEMA,
        "verb": cfg.verb.as_str(),
        "config_hash": cfg.hash(),
        "config": cfg.hashed_view(),
        "pass": pass,
        "result": result,
    });
    let mut out = serde_json::to_vec_pretty(&doc).expect("report serializes");
    out.push(b'\n');
    out
}

pub fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` next to `dest` and renames it into place.
fn write_atomic(dest: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = dest.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dest.with_file_name(format!(".{name}.tmp"));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, dest)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(io_err(dest))
}

/// Paths of the artifacts written for one run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifacts {
    pub report: PathBuf,
    pub data: PathBuf,
    pub config: PathBuf,
}

/// Writes report and data; on failure nothing from this run is left behind.
pub fn write_artifacts(cfg: &ExperimentConfig, report: &[u8], data: &DataTable) -> Result<Artifacts, CliError> {
    let dir = out_dir(cfg);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let hash = cfg.hash();
    let stem = format!("{}-{}", cfg.verb.as_str(), &hash[..12]);
    let (data_bytes, ext) = match cfg.format {
        Format::Csv => (
            data.csv_bytes(&hash).map_err(|e| CliError::Io {
                path: stem.clone(),
                source: std::io::Error::other(e),
            })?,
            "csv",
        ),
        Format::Json => (data.json_bytes(&hash), "json"),
    };
    let artifacts = Artifacts {
        report: dir.join(format!("{stem}.report.json")),
        data: dir.join(format!("{stem}.{ext}")),
        config: dir.join(format!("{stem}.config.toml")),
    };
    let config_bytes = cfg.hashed_view().to_toml().into_bytes();
    let mut written: Vec<&Path> = Vec::new();
    for (path, bytes) in [
        (&artifacts.data, &data_bytes[..]),
        (&artifacts.config, &config_bytes[..]),
        (&artifacts.report, report),
    ] {
        if let Err(e) = write_atomic(path, bytes) {
            for p in written {
                let _ = fs::remove_file(p);
            }
            return Err(e);
        }
        written.push(path);
    }
    Ok(artifacts)
}

/// Aligned text table; numbers right-aligned, text left-aligned.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let numeric = |s: &str| s.parse::<f64>().is_ok();
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| {
                if numeric(c) {
                    format!("{c:>w$}")
                } else {
                    format!("{c:<w$}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Compact numeric formatting for tables.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 || (1e-3..1e5).contains(&v.abs()) {
        format!("{v:.6}")
    } else {
        format!("{v:.4e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_schema_line_and_header() {
        let mut t = DataTable::new("milstein-test/1", &["n", "label"]);
        t.push(vec![json!(16), json!("a,b")]);
        let s = String::from_utf8(t.csv_bytes("abc").unwrap()).unwrap();
        assert_eq!(s, "# schema=milstein-test/1 config_hash=abc\nn,label\n16,\"a,b\"\n");
    }

    #[test]
    fn table_aligns_columns() {
        let t = render_table(&["case", "value"], &[vec!["x".into(), "1.5".into()], vec!["long".into(), "10.25".into()]]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[2], "x       1.5");
        assert_eq!(lines[3], "long  10.25");
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"hi").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"hi");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        let bad = dir.path().join("missing").join("b.txt");
        assert!(write_atomic(&bad, b"x").is_err());
    }
}
