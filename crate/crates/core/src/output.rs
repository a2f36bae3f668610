//! CSV/JSON emission helpers.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing a cell
//! back yields the identical `f64`.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Shortest representation that round-trips (`{:?}` switches to exponent form for
/// very large or very small magnitudes).
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // normalizes -0.0
        return "0.0".to_string();
    }
    format!("{x:?}")
}

pub struct CsvWriter<W: Write> {
    out: W,
    columns: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new<S: AsRef<str>>(mut out: W, header: &[S]) -> io::Result<Self> {
        let line: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
        writeln!(out, "{}", line.join(","))?;
        Ok(Self { out, columns: header.len() })
    }

    pub fn row<S: AsRef<str>>(&mut self, cells: &[S]) -> io::Result<()> {
        if cells.len() != self.columns {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("row has {} cells, header has {}", cells.len(), self.columns),
            ));
        }
        let line: Vec<&str> = cells.iter().map(|s| s.as_ref()).collect();
        writeln!(self.out, "{}", line.join(","))
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Writes to `<path>.tmp` and renames onto `path` once the closure succeeds, so an
/// interrupted run never leaves a partial file under the final name.
pub fn write_atomic<F>(path: &Path, fill: F) -> io::Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let tmp = tmp_path(path);
    let result = (|| {
        let file = fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()
    })();
    match result {
        Ok(()) => fs::rename(&tmp, path),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0, -2.5e-300, 1e-30, 6.674_30e-11, 1.0 / 3.0, 1e22, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_f64(-0.0), "0.0");
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let mut buf = Vec::new();
        let mut w = CsvWriter::new(&mut buf, &["a", "b"]).unwrap();
        w.row(&["1", "2"]).unwrap();
        assert!(w.row(&["1"]).is_err());
    }

    #[test]
    fn failed_atomic_write_leaves_nothing() {
        let dir = std::env::temp_dir().join(format!("randers-atomic-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let target = dir.join("out.csv");
        let err = write_atomic(&target, |w| {
            w.write_all(b"partial")?;
            Err(io::Error::other("interrupted"))
        });
        assert!(err.is_err());
        assert!(!target.exists());
        assert!(!tmp_path(&target).exists());
        write_atomic(&target, |w| w.write_all(b"ok\n")).unwrap();
        assert_eq!(fs::read_to_string(&target).unwrap(), "ok\n");
        fs::remove_dir_all(&dir).unwrap();
    }
}
