//! Dataset files: a little-endian binary container and a CSV variant.
//!
//! ```text
//! magic "GGDS" | u32 version | u32 channels | f64 sample rate | u64 samples
//! | u32 boundary count | u64 boundaries (sample indices)
//! | channels*samples f32, time-major
//! ```
//!
//! The CSV form has a header row `channels,rate,samples[,boundaries]`, one
//! row of values (boundaries separated by `;`), then one row per time step.

use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use ndarray::Array2;

use super::atomic_write;
use super::binary::SliceReader;
use crate::error::{Error, Result};
use crate::features::RawStream;

pub const DATASET_MAGIC: &[u8; 4] = b"GGDS";
pub const DATASET_VERSION: u32 = 1;

/// A stream stored at 32-bit precision, with optional class starts.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    stream: RawStream,
    boundaries: Vec<u64>,
}

impl DatasetFile {
    /// Rounds samples to `f32` so the file round-trips exactly.
    pub fn new(stream: RawStream, boundaries: Vec<u64>) -> Result<Self> {
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("boundaries must be strictly increasing"));
        }
        if let Some(&last) = boundaries.last() {
            if last >= stream.len() as u64 {
                return Err(Error::invalid(format!(
                    "boundary {last} beyond stream of {} samples",
                    stream.len()
                )));
            }
        }
        let rounded = stream.samples().mapv(|v| v as f32 as f64);
        Ok(Self {
            stream: RawStream::new(stream.sample_rate_hz(), rounded)?,
            boundaries,
        })
    }

    pub fn stream(&self) -> &RawStream {
        &self.stream
    }

    /// Sample indices at which each class after the first starts.
    pub fn boundaries(&self) -> &[u64] {
        &self.boundaries
    }

    /// Boundaries as indices of the window containing each class start.
    pub fn window_boundaries(&self, d_l: usize) -> Vec<usize> {
        self.boundaries.iter().map(|&b| b as usize / d_l).collect()
    }
}

pub fn encode_dataset(data: &DatasetFile) -> Vec<u8> {
    let s = data.stream.samples();
    let mut out = Vec::with_capacity(40 + 8 * data.boundaries.len() + 4 * s.len());
    out.extend_from_slice(DATASET_MAGIC);
    let w = &mut out;
    w.write_u32::<LittleEndian>(DATASET_VERSION).unwrap();
    w.write_u32::<LittleEndian>(s.nrows() as u32).unwrap();
    w.write_f64::<LittleEndian>(data.stream.sample_rate_hz()).unwrap();
    w.write_u64::<LittleEndian>(s.ncols() as u64).unwrap();
    w.write_u32::<LittleEndian>(data.boundaries.len() as u32).unwrap();
    for &b in &data.boundaries {
        w.write_u64::<LittleEndian>(b).unwrap();
    }
    for t in 0..s.ncols() {
        for ch in 0..s.nrows() {
            w.write_f32::<LittleEndian>(s[[ch, t]] as f32).unwrap();
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<DatasetFile> {
    let mut r = SliceReader::new(bytes);
    r.expect_magic(DATASET_MAGIC)?;
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return r.fail(format!("unsupported dataset version {version}"));
    }
    let channels = r.u32("channel count")? as usize;
    if channels == 0 {
        return r.fail("channel count is zero");
    }
    let rate = r.f64("sample rate")?;
    if !(rate > 0.0 && rate.is_finite()) {
        return r.fail(format!("invalid sample rate {rate}"));
    }
    let len = r.u64("sample count")? as usize;
    let count = r.u32("boundary count")? as usize;
    let at = r.offset();
    let mut boundaries = Vec::with_capacity(count.min(r.remaining() / 8));
    for _ in 0..count {
        boundaries.push(r.u64("boundary")?);
    }
    let payload_at = r.offset();
    let n = channels
        .checked_mul(len)
        .ok_or_else(|| Error::Format { offset: payload_at, message: "payload size overflows".into() })?;
    let raw = r.f32_vec(n, "samples")?;
    if r.remaining() != 0 {
        return r.fail(format!("{} trailing bytes", r.remaining()));
    }
    let samples = Array2::from_shape_fn((channels, len), |(ch, t)| raw[t * channels + ch] as f64);
    let stream = RawStream::new(rate, samples)?;
    DatasetFile::new(stream, boundaries).map_err(|e| Error::Format {
        offset: at,
        message: e.to_string(),
    })
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

pub fn write_csv<W: Write>(data: &DatasetFile, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    let s = data.stream.samples();
    let mut header = vec!["channels", "rate", "samples"];
    let mut values = vec![
        s.nrows().to_string(),
        data.stream.sample_rate_hz().to_string(),
        s.ncols().to_string(),
    ];
    if !data.boundaries.is_empty() {
        header.push("boundaries");
        values.push(
            data.boundaries
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        );
    }
    out.write_record(&header)?;
    out.write_record(&values)?;
    for t in 0..s.ncols() {
        out.write_record(s.column(t).iter().map(|&v| (v as f32).to_string()))
            ?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_csv(bytes: &[u8]) -> Result<DatasetFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.records();
    let mut next = |what: &str| -> Result<csv::StringRecord> {
        match records.next() {
            Some(Ok(r)) => Ok(r),
            Some(Err(e)) => {
                let offset = e.position().map_or(0, |p| p.byte());
                Err(format_err(offset, e.to_string()))
            }
            None => Err(format_err(bytes.len() as u64, format!("missing {what}"))),
        }
    };
    let header = next("header row")?;
    let header_fields: Vec<&str> = header.iter().map(str::trim).collect();
    let expected = ["channels", "rate", "samples"];
    if header_fields.len() < 3
        || header_fields[..3] != expected
        || (header_fields.len() == 4 && header_fields[3] != "boundaries")
        || header_fields.len() > 4
    {
        return Err(format_err(0, "header must be channels,rate,samples[,boundaries]"));
    }
    let values = next("value row")?;
    let at = values.position().map_or(0, |p| p.byte());
    if values.len() != header_fields.len() {
        return Err(format_err(at, "value row does not match header"));
    }
    let channels: usize = values[0]
        .trim()
        .parse()
        .map_err(|_| format_err(at, "bad channel count"))?;
    let rate: f64 = values[1]
        .trim()
        .parse()
        .map_err(|_| format_err(at, "bad sample rate"))?;
    let len: usize = values[2]
        .trim()
        .parse()
        .map_err(|_| format_err(at, "bad sample count"))?;
    let boundaries = match values.get(3).map(str::trim) {
        Some(b) if !b.is_empty() => b
            .split(';')
            .map(|x| x.trim().parse::<u64>().map_err(|_| format_err(at, "bad boundary")))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    if channels == 0 {
        return Err(format_err(at, "channel count is zero"));
    }
    let mut samples = Array2::zeros((channels, len));
    for t in 0..len {
        let row = next("sample row")?;
        let row_at = row.position().map_or(0, |p| p.byte());
        if row.len() != channels {
            return Err(format_err(
                row_at,
                format!("row {t} has {} values, expected {channels}", row.len()),
            ));
        }
        for (ch, field) in row.iter().enumerate() {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| format_err(row_at, format!("bad sample {field:?}")))?;
            samples[[ch, t]] = v as f64;
        }
    }
    if let Some(Ok(extra)) = records.next() {
        return Err(format_err(
            extra.position().map_or(0, |p| p.byte()),
            "more sample rows than declared",
        ));
    }
    let stream = RawStream::new(rate, samples).map_err(|e| format_err(at, e.to_string()))?;
    DatasetFile::new(stream, boundaries).map_err(|e| format_err(at, e.to_string()))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes the CSV form for `.csv` paths and the binary form otherwise.
pub fn save_dataset(path: &Path, data: &DatasetFile) -> Result<()> {
    if is_csv(path) {
        let mut buf = Vec::new();
        write_csv(data, &mut buf)?;
        atomic_write(path, &buf)
    } else {
        atomic_write(path, &encode_dataset(data))
    }
}

pub fn load_dataset(path: &Path) -> Result<DatasetFile> {
    let bytes = std::fs::read(path)?;
    if is_csv(path) {
        parse_csv(&bytes)
    } else {
        decode_dataset(&bytes)
    }
}
