//! CSV, plot-data and manifest writers.
//!
//! Floats use Rust's shortest round-trip formatting, so equal values always
//! produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::args::Options;
use crate::CliError;

/// Creates `dir` and records every file written into it.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.path(name);
        let csv_err = |e: csv::Error| CliError::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, body).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }
}

pub fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Tolerances fixed in code rather than exposed as flags.
pub struct FixedTolerances {
    pub entries: Vec<(&'static str, f64)>,
}

/// Manifest in config-file syntax: `fredstop <cmd> --config manifest.txt`
/// repeats the run.
pub fn manifest(command: &str, opts: &Options, fixed: &FixedTolerances) -> String {
    let mut s = format!("# fredstop {} {}\n", env!("CARGO_PKG_VERSION"), command);
    s.push_str(&format!("# rerun: fredstop {command} --config manifest.txt\n"));
    for (k, v) in opts.manifest_lines() {
        s.push_str(&format!("{k} = {v}\n"));
    }
    for (k, v) in &fixed.entries {
        s.push_str(&format!("# fixed {k} = {v}\n"));
    }
    s
}

/// gnuplot script for `plot.dat` (columns y, d, d_lower, d_upper, reference).
pub fn gnuplot_script(label: &str, b: f64) -> String {
    format!(
        "set datafile commentschars '#'\n\
         set xlabel 'y'\n\
         set ylabel 'd(y)'\n\
         set key bottom left\n\
         set title '{label}: stopping boundary d'\n\
         plot 'plot.dat' using 1:3 with lines dashtype 2 title 'lower', \\\n\
         \x20    'plot.dat' using 1:4 with lines dashtype 2 title 'upper', \\\n\
         \x20    'plot.dat' using 1:5 with lines dashtype 3 title '-B y^2, B = {b}', \\\n\
         \x20    'plot.dat' using 1:2 with linespoints pointtype 7 title 'd'\n\
         pause -1\n"
    )
}
