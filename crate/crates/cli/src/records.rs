//! Records JSONL: resumable append-only output.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use planrag::executor::RunRecord;

use crate::CliError;

/// Records already in `path`. A final line that does not parse (an
/// interrupted write) is cut off; any other bad line is an error.
pub fn load_existing(path: &Path) -> Result<(Vec<RunRecord>, Vec<String>), CliError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), Vec::new())),
        Err(e) => return Err(CliError::runtime(format!("cannot read {}: {e}", path.display()))),
    };
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut good_bytes = 0usize;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            good_bytes += line.len();
            continue;
        }
        match serde_json::from_str::<RunRecord>(line) {
            Ok(r) => {
                records.push(r);
                good_bytes += line.len();
                if !line.ends_with('\n') {
                    OpenOptions::new().append(true).open(path)?.write_all(b"\n")?;
                }
            }
            Err(_) if i + 1 == lines.len() => {
                warnings.push(format!(
                    "{}:{}: dropping incomplete last record",
                    path.display(),
                    i + 1
                ));
                let f = OpenOptions::new().write(true).open(path)?;
                f.set_len(good_bytes as u64)?;
            }
            Err(e) => {
                return Err(CliError::usage(format!("{}:{}: {e}", path.display(), i + 1)));
            }
        }
    }
    Ok((records, warnings))
}

pub struct RecordWriter {
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn create(path: &Path, append: bool) -> Result<Self, CliError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| CliError::usage(format!("cannot open {}: {e}", path.display())))?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    /// Writes one record and flushes so that a kill loses at most this line.
    pub fn write(&mut self, record: &RunRecord) -> Result<(), CliError> {
        self.out.write_all(record.to_json_line().as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}
