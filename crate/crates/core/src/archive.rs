//! Append-only newline-delimited JSON record of a session.
//!
//! The first line is a header describing the parameter space:
//!
//! ```text
//! {"version":1,"dim":2,"lower":[0.0,0.0],"upper":[1.0,1.0],"names":["a","b"]}
//! ```
//!
//! Every further line is one [`Observation`]. Lines are flushed as they are
//! written, so a crash can at worst leave a truncated final line, which is
//! discarded on resume.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::observation::{Dataset, Observation};
use crate::space::ParameterSpace;
use crate::{Error, Result};

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub version: u32,
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub names: Vec<String>,
}

impl ArchiveHeader {
    pub fn for_space(space: &ParameterSpace) -> Self {
        Self {
            version: ARCHIVE_VERSION,
            dim: space.dim(),
            lower: space.lower().to_vec(),
            upper: space.upper().to_vec(),
            names: space.names().map(<[String]>::to_vec).unwrap_or_default(),
        }
    }

    pub fn space(&self) -> Result<ParameterSpace> {
        let space = ParameterSpace::new(self.lower.clone(), self.upper.clone())?;
        space.check_dim(self.dim)?;
        if self.names.is_empty() {
            Ok(space)
        } else {
            space.with_names(self.names.clone())
        }
    }
}

/// An open archive file positioned for appending.
#[derive(Debug)]
pub struct RunArchive {
    path: PathBuf,
    writer: BufWriter<File>,
    records: usize,
}

impl RunArchive {
    /// Creates (or truncates) `path` and writes the header line.
    pub fn create(path: impl AsRef<Path>, space: &ParameterSpace) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path)?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer(&mut writer, &ArchiveHeader::for_space(space))?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(Self {
            path,
            writer,
            records: 0,
        })
    }

    /// Reopens an existing archive for appending and returns its contents.
    ///
    /// A truncated or unparsable final line is dropped and cut from the file;
    /// corruption anywhere else is an error.
    pub fn resume(path: impl AsRef<Path>) -> Result<(Self, Dataset)> {
        let path = path.as_ref().to_path_buf();
        let parsed = parse(&path, Mode::Resume)?;
        let file = OpenOptions::new().write(true).open(&path)?;
        file.set_len(parsed.valid_bytes)?;
        let mut writer = BufWriter::new(file);
        writer.seek(std::io::SeekFrom::End(0))?;
        let records = parsed.dataset.len();
        Ok((
            Self {
                path,
                writer,
                records,
            },
            parsed.dataset,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of observation records in the file.
    pub fn len(&self) -> usize {
        self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records == 0
    }

    /// Writes one observation line and flushes it to the OS.
    pub fn append(&mut self, obs: &Observation) -> Result<()> {
        serde_json::to_writer(&mut self.writer, obs)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        self.records += 1;
        Ok(())
    }
}

/// Reads a complete archive. A truncated final line is ignored.
pub fn read_archive(path: impl AsRef<Path>) -> Result<Dataset> {
    Ok(parse(path.as_ref(), Mode::Resume)?.dataset)
}

/// Reads an archive, skipping every unparsable observation line.
///
/// Returns the dataset and the number of skipped lines.
pub fn read_archive_lenient(path: impl AsRef<Path>) -> Result<(Dataset, usize)> {
    let parsed = parse(path.as_ref(), Mode::Lenient)?;
    Ok((parsed.dataset, parsed.skipped))
}

/// Writes `dataset` as a fresh archive at `path`.
pub fn write_archive(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut archive = RunArchive::create(path, dataset.space())?;
    for obs in dataset.observations() {
        archive.append(obs)?;
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Resume,
    Lenient,
}

struct Parsed {
    dataset: Dataset,
    valid_bytes: u64,
    skipped: usize,
}

fn parse(path: &Path, mode: Mode) -> Result<Parsed> {
    let err = |message: String| Error::Archive {
        path: path.to_path_buf(),
        message,
    };
    let mut contents = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut contents)?;

    let mut lines = Vec::new();
    let mut offset = 0usize;
    for line in contents.split_inclusive(|&b| b == b'\n') {
        offset += line.len();
        lines.push((line, offset));
    }

    let Some(&(header_line, header_end)) = lines.first() else {
        return Err(err("missing header line".into()));
    };
    let header: ArchiveHeader =
        serde_json::from_slice(trim_newline(header_line)).map_err(|e| err(format!("header: {e}")))?;
    if header.version != ARCHIVE_VERSION {
        return Err(err(format!("unsupported version {}", header.version)));
    }
    let mut dataset = Dataset::new(header.space()?);
    let mut valid_bytes = header_end as u64;
    let mut skipped = 0;

    let body = &lines[1..];
    for (i, &(line, end)) in body.iter().enumerate() {
        let is_last = i + 1 == body.len();
        let complete = line.ends_with(b"\n");
        let text = trim_newline(line);
        if text.iter().all(u8::is_ascii_whitespace) && complete {
            valid_bytes = end as u64;
            continue;
        }
        let parsed = serde_json::from_slice::<Observation>(text)
            .map_err(|e| e.to_string())
            .and_then(|obs| dataset.push(obs).map_err(|e| e.to_string()));
        match parsed {
            Ok(()) if complete => valid_bytes = end as u64,
            Ok(()) if mode == Mode::Resume => {
                // Parsable but unterminated: the write was cut short.
                dataset.pop_last();
                warn!("{}: discarding incomplete final line", path.display());
            }
            Ok(()) => {}
            Err(_) if is_last && mode == Mode::Resume => {
                warn!("{}: discarding incomplete final line", path.display());
            }
            Err(e) if mode == Mode::Lenient => {
                skipped += 1;
                warn!("{}: skipping line {}: {e}", path.display(), i + 2);
            }
            Err(e) => return Err(err(format!("line {}: {e}", i + 2))),
        }
    }
    Ok(Parsed {
        dataset,
        valid_bytes,
        skipped,
    })
}

fn trim_newline(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::Source;
    use proptest::prelude::*;

    fn space() -> ParameterSpace {
        ParameterSpace::new(vec![-40.0, 0.0], vec![0.0, 1.0])
            .unwrap()
            .with_names(vec!["trap".into(), "coil".into()])
            .unwrap()
    }

    fn obs(i: u64, params: Vec<f64>, raw_cost: f64) -> Observation {
        Observation {
            run_index: i,
            source: if i < 2 { Source::InitDe } else { Source::Net(1) },
            params,
            raw_cost,
            scaled_cost: 0.25,
            bad: false,
            wall_time: 1.5 * i as f64,
        }
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndjson");
        RunArchive::create(&path, &space()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "{\"version\":1,\"dim\":2,\"lower\":[-40.0,0.0],\"upper\":[0.0,1.0],\"names\":[\"trap\",\"coil\"]}\n"
        );
    }

    #[test]
    fn observation_line_layout() {
        let line = serde_json::to_string(&obs(3, vec![-1.0, 0.5], 0.75)).unwrap();
        assert_eq!(
            line,
            "{\"run_index\":3,\"source\":\"net_1\",\"params\":[-1.0,0.5],\"raw_cost\":0.75,\"scaled_cost\":0.25,\"bad\":false,\"wall_time\":4.5}"
        );
    }

    #[test]
    fn resume_discards_truncated_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndjson");
        let mut archive = RunArchive::create(&path, &space()).unwrap();
        archive.append(&obs(0, vec![-3.0, 0.1], 0.9)).unwrap();
        archive.append(&obs(1, vec![-2.0, 0.2], 0.8)).unwrap();
        drop(archive);
        let mut file = OpenOptions::new().append(true).open(&path).unwrap();
        file.write_all(b"{\"run_index\":2,\"source\":\"de\",\"par").unwrap();
        drop(file);

        let (mut archive, data) = RunArchive::resume(&path).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(archive.len(), 2);
        archive.append(&obs(2, vec![-1.0, 0.3], 0.7)).unwrap();
        drop(archive);

        let reread = read_archive(&path).unwrap();
        assert_eq!(reread.len(), 3);
        assert_eq!(reread.observations()[2].raw_cost, 0.7);
    }

    #[test]
    fn resume_drops_unterminated_but_parsable_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndjson");
        let mut archive = RunArchive::create(&path, &space()).unwrap();
        archive.append(&obs(0, vec![-3.0, 0.1], 0.9)).unwrap();
        drop(archive);
        let mut file = OpenOptions::new().append(true).open(&path).unwrap();
        serde_json::to_writer(&mut file, &obs(1, vec![-2.0, 0.2], 0.8)).unwrap();
        drop(file);
        let (_, data) = RunArchive::resume(&path).unwrap();
        assert_eq!(data.len(), 1);
    }

    #[test]
    fn corruption_in_the_middle_is_an_error_unless_lenient() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndjson");
        let mut archive = RunArchive::create(&path, &space()).unwrap();
        archive.append(&obs(0, vec![-3.0, 0.1], 0.9)).unwrap();
        drop(archive);
        let mut file = OpenOptions::new().append(true).open(&path).unwrap();
        file.write_all(b"garbage\n").unwrap();
        serde_json::to_writer(&mut file, &obs(1, vec![-2.0, 0.2], 0.8)).unwrap();
        file.write_all(b"\n").unwrap();
        drop(file);

        assert!(read_archive(&path).is_err());
        let (data, skipped) = read_archive_lenient(&path).unwrap();
        assert_eq!((data.len(), skipped), (2, 1));
    }

    #[test]
    fn missing_header_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ndjson");
        std::fs::write(&path, "").unwrap();
        assert!(read_archive(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(
            rows in proptest::collection::vec(
                (proptest::num::f64::NORMAL, proptest::num::f64::NORMAL, proptest::num::f64::ANY, any::<bool>()),
                0..20,
            )
        ) {
            let space = ParameterSpace::uniform(2, -1e308, 1e308).unwrap();
            let mut data = Dataset::new(space);
            for (i, (a, b, cost, bad)) in rows.into_iter().enumerate() {
                let cost = if cost.is_finite() { cost } else { 0.0 };
                data.push(Observation {
                    run_index: i as u64,
                    source: if bad { Source::De } else { Source::Net(i % 3) },
                    params: vec![a, b],
                    raw_cost: cost,
                    scaled_cost: if bad { 1.0 } else { 0.5 },
                    bad,
                    wall_time: i as f64 * 0.1,
                }).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.ndjson");
            write_archive(&path, &data).unwrap();
            let back = read_archive(&path).unwrap();
            prop_assert_eq!(back.len(), data.len());
            for (x, y) in back.observations().iter().zip(data.observations()) {
                prop_assert_eq!(x.params[0].to_bits(), y.params[0].to_bits());
                prop_assert_eq!(x.params[1].to_bits(), y.params[1].to_bits());
                prop_assert_eq!(x.raw_cost.to_bits(), y.raw_cost.to_bits());
            }
            prop_assert_eq!(back, data);
        }
    }
}
