//! CSV training logs and the run-directory lock.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::meta::StepMetrics;

pub const LOG_SCHEMA: &str = "# facesr train log v1";

pub const LOG_COLUMNS: [&str; 12] = [
    "step",
    "total",
    "l1",
    "perceptual",
    "adv",
    "reg",
    "inner",
    "loss_d",
    "mask_mean",
    "grad_norm_sr",
    "grad_norm_mask",
    "grad_norm_disc",
];

/// Writes one row per training step, flushing after each so a crashed run
/// keeps its history.
pub struct TrainLog {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{LOG_SCHEMA}").map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        writer.write_record(LOG_COLUMNS).map_err(|e| Error::Format(e.to_string()))?;
        Ok(TrainLog { path: path.to_path_buf(), writer })
    }

    pub fn append(&mut self, m: &StepMetrics) -> Result<()> {
        let p = &m.parts;
        let vals = [
            p.total, p.l1, p.perceptual, p.adv, p.reg, m.inner, m.loss_d, m.mask_mean,
            m.grad_norm_sr, m.grad_norm_mask, m.grad_norm_disc,
        ];
        let mut row = vec![m.step.to_string()];
        row.extend(vals.iter().map(|v| format!("{v:e}")));
        self.writer.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a CSV with `#` comment lines into its header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((header, rows))
}

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run.lock");
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Invalid(format!("{} is locked by another run", dir.display()))
            } else {
                Error::io(&path, e)
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(RunLock { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_rows_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut log = TrainLog::create(&path).unwrap();
        for step in 0..3 {
            let mut m = StepMetrics { step, ..StepMetrics::default() };
            m.parts.l1 = 0.1 * step as f64;
            log.append(&m).unwrap();
        }
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header, LOG_COLUMNS);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2][0], "2");
        assert_eq!(rows[2][2].parse::<f64>().unwrap(), 0.2);
        assert!(std::fs::read_to_string(&path).unwrap().starts_with(LOG_SCHEMA));
    }

    #[test]
    fn lock_is_exclusive_until_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(lock);
        RunLock::acquire(dir.path()).unwrap();
    }
}
