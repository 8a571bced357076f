//! Errors with exit codes, plain-text tables and confined file output.

use std::fmt;
use std::path::{Path, PathBuf};

use laminate_forge::Error;

pub const EXIT_PASS: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input files.
    Usage(String),
    Io(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Uncertified | Error::NonIntegrable(_)) => EXIT_FAIL,
            _ => EXIT_USAGE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(s) => write!(f, "usage error: {s}"),
            CliError::Io(s) => write!(f, "i/o error: {s}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

/// Column-aligned text table.
#[derive(Debug, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let cols = self.header.len();
        let mut width = vec![0; cols];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (i, c) in r.iter().enumerate().take(cols) {
                width[i] = width[i].max(c.chars().count());
            }
        }
        let line = |r: &[String]| {
            let cells: Vec<String> = (0..cols)
                .map(|i| {
                    let c = r.get(i).map(String::as_str).unwrap_or("");
                    format!("{c:<w$}", w = width[i])
                })
                .collect();
            cells.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn print(&self) {
        print!("{}", self.render());
    }
}

/// Two-column key/value table.
pub fn kv(pairs: &[(&str, String)]) -> Table {
    let mut t = Table::new(&["quantity", "value"]);
    for (k, v) in pairs {
        t.row(vec![k.to_string(), v.clone()]);
    }
    t
}

pub fn pass_word(ok: bool) -> String {
    if ok { "pass" } else { "FAIL" }.to_string()
}

pub fn sci(x: f64) -> String {
    if x == 0.0 || (1e-3..1e4).contains(&x.abs()) {
        format!("{x:.6}")
    } else {
        format!("{x:.4e}")
    }
}

/// Writes files only inside the `--out` directory, by bare file name.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: Option<PathBuf>,
}

impl OutDir {
    pub fn new(root: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(r) = &root {
            std::fs::create_dir_all(r).map_err(|e| CliError::Io(format!("cannot create {}: {e}", r.display())))?;
        }
        Ok(OutDir { root })
    }

    pub fn enabled(&self) -> bool {
        self.root.is_some()
    }

    /// Returns the path written, or `None` when no `--out` was given.
    pub fn write(&self, name: &str, contents: &str) -> Result<Option<PathBuf>, CliError> {
        let Some(root) = &self.root else { return Ok(None) };
        let bare = Path::new(name).file_name().is_some_and(|f| f == name);
        if !bare || name.starts_with('.') {
            return Err(CliError::Usage(format!("refusing to write {name:?} outside the output directory")));
        }
        let path = root.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        Ok(Some(path))
    }

    pub fn write_json(&self, name: &str, v: &serde_json::Value) -> Result<Option<PathBuf>, CliError> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    /// Single-line JSON, for large maps.
    pub fn write_json_compact(&self, name: &str, v: &serde_json::Value) -> Result<Option<PathBuf>, CliError> {
        let mut s = serde_json::to_string(v).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }
}
