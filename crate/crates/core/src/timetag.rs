//! Time-tag streams and the PTAG binary interchange format.
//!
//! A [`TimeTagStream`] is an ordered list of detector clicks, each a 64-bit
//! tick count plus a 16-bit channel label. Ticks are the only time unit used
//! internally; conversion to seconds happens at reporting boundaries.
//!
//! PTAG v1 layout (all little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "PTAG"
//!      4     2  version (1)
//!      6     2  flags (0)
//!      8     8  resolution_ps
//!     16     8  record_count
//!     24     2  channel_count
//!     26     6  reserved, zero
//!     32  10*n  records { timestamp u64, channel u16 }
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PTAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 10;

#[derive(Debug, Error)]
pub enum TimeTagError {
    #[error("bad magic bytes {0:?}, expected \"PTAG\"")]
    BadMagic([u8; 4]),
    #[error("unsupported PTAG version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated file: header declares {expected} records but {found} bytes of record data remain")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("{0} trailing bytes after the declared records")]
    TrailingData(u64),
    #[error("timestamps decrease at record {index}")]
    NonMonotonicTimestamps { index: usize },
    #[error("record {index} has channel {channel} but the stream declares {channel_count} channels")]
    ChannelOutOfRange {
        index: usize,
        channel: u16,
        channel_count: u16,
    },
    #[error("resolution must be at least 1 ps")]
    InvalidResolution,
    #[error("timestamp and channel columns differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("channel {0} is not present in the stream")]
    UnknownChannel(u16),
    #[error("cannot merge streams with resolutions {0} ps and {1} ps")]
    ResolutionMismatch(u64, u64),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Record {
    pub timestamp: u64,
    pub channel: u16,
}

/// Validated, immutable click stream.
///
/// Timestamps and channels are kept in separate columns, which halves the
/// memory footprint compared with padded `(u64, u16)` tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagStream {
    resolution_ps: u64,
    channel_count: u16,
    timestamps: Vec<u64>,
    channels: Vec<u16>,
    same_channel_ties: usize,
}

impl TimeTagStream {
    /// Builds a stream from parallel columns, checking every invariant.
    pub fn new(
        resolution_ps: u64,
        channel_count: u16,
        timestamps: Vec<u64>,
        channels: Vec<u16>,
    ) -> Result<Self, TimeTagError> {
        if resolution_ps == 0 {
            return Err(TimeTagError::InvalidResolution);
        }
        if timestamps.len() != channels.len() {
            return Err(TimeTagError::LengthMismatch(timestamps.len(), channels.len()));
        }
        if let Some(index) = timestamps.windows(2).position(|w| w[1] < w[0]) {
            return Err(TimeTagError::NonMonotonicTimestamps { index: index + 1 });
        }
        if let Some(index) = channels.iter().position(|&c| c >= channel_count) {
            return Err(TimeTagError::ChannelOutOfRange {
                index,
                channel: channels[index],
                channel_count,
            });
        }
        let same_channel_ties = count_same_channel_ties(&timestamps, &channels);
        Ok(Self {
            resolution_ps,
            channel_count,
            timestamps,
            channels,
            same_channel_ties,
        })
    }

    pub fn from_records(
        resolution_ps: u64,
        channel_count: u16,
        records: impl IntoIterator<Item = Record>,
    ) -> Result<Self, TimeTagError> {
        let (timestamps, channels) = records
            .into_iter()
            .map(|r| (r.timestamp, r.channel))
            .unzip();
        Self::new(resolution_ps, channel_count, timestamps, channels)
    }

    pub fn empty(resolution_ps: u64, channel_count: u16) -> Result<Self, TimeTagError> {
        Self::new(resolution_ps, channel_count, Vec::new(), Vec::new())
    }

    pub fn resolution_ps(&self) -> u64 {
        self.resolution_ps
    }

    pub fn channel_count(&self) -> u16 {
        self.channel_count
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn channels(&self) -> &[u16] {
        &self.channels
    }

    pub fn record(&self, index: usize) -> Record {
        Record {
            timestamp: self.timestamps[index],
            channel: self.channels[index],
        }
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = Record> + '_ {
        self.timestamps
            .iter()
            .zip(&self.channels)
            .map(|(&timestamp, &channel)| Record { timestamp, channel })
    }

    /// Number of adjacent records sharing both timestamp and channel.
    /// Such pairs are legal but usually indicate a dead-time violation.
    pub fn same_channel_ties(&self) -> usize {
        self.same_channel_ties
    }

    /// Last minus first timestamp, in ticks. Zero for streams with < 2 records.
    pub fn duration_ticks(&self) -> u64 {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(first), Some(last)) => last - first,
            _ => 0,
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        ticks_to_seconds(self.duration_ticks(), self.resolution_ps)
    }

    /// Per-channel click counts, indexed by channel id.
    pub fn channel_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; usize::from(self.channel_count)];
        for &c in &self.channels {
            counts[usize::from(c)] += 1;
        }
        counts
    }

    /// Mean count rate of every channel over the stream span.
    pub fn rates(&self) -> Option<ChannelRates> {
        let duration = self.duration_seconds();
        if duration <= 0.0 {
            return None;
        }
        let counts = self.channel_counts();
        Some(ChannelRates::from_counts(
            counts
                .into_iter()
                .enumerate()
                .map(|(c, n)| (c as u16, n)),
            duration,
        ))
    }

    /// Timestamps of one channel, in order.
    pub fn channel_timestamps(&self, channel: u16) -> Vec<u64> {
        self.records()
            .filter(|r| r.channel == channel)
            .map(|r| r.timestamp)
            .collect()
    }

    pub fn into_columns(self) -> (Vec<u64>, Vec<u16>) {
        (self.timestamps, self.channels)
    }
}

fn count_same_channel_ties(timestamps: &[u64], channels: &[u16]) -> usize {
    // Ties on the same channel need not be adjacent when another channel
    // clicks at the same instant, so scan each run of equal timestamps.
    let mut ties = 0;
    let mut start = 0;
    while start < timestamps.len() {
        let mut end = start + 1;
        while end < timestamps.len() && timestamps[end] == timestamps[start] {
            end += 1;
        }
        if end - start > 1 {
            let mut run: Vec<u16> = channels[start..end].to_vec();
            run.sort_unstable();
            ties += run.windows(2).filter(|w| w[0] == w[1]).count();
        }
        start = end;
    }
    ties
}

pub fn ticks_to_seconds(ticks: u64, resolution_ps: u64) -> f64 {
    ticks as f64 * resolution_ps as f64 * 1e-12
}

/// Per-channel count rates over a common duration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelRates {
    /// `(channel, events per second)`, sorted by channel.
    pub rates: Vec<(u16, f64)>,
    pub counts: Vec<(u16, u64)>,
    pub duration_s: f64,
}

impl ChannelRates {
    pub fn from_counts(counts: impl IntoIterator<Item = (u16, u64)>, duration_s: f64) -> Self {
        assert!(duration_s > 0.0, "rate duration must be positive");
        let mut counts: Vec<(u16, u64)> = counts.into_iter().collect();
        counts.sort_by_key(|&(c, _)| c);
        let rates = counts
            .iter()
            .map(|&(c, n)| (c, n as f64 / duration_s))
            .collect();
        Self {
            rates,
            counts,
            duration_s,
        }
    }

    pub fn rate(&self, channel: u16) -> Option<f64> {
        self.rates
            .iter()
            .find(|&&(c, _)| c == channel)
            .map(|&(_, r)| r)
    }

    pub fn count(&self, channel: u16) -> Option<u64> {
        self.counts
            .iter()
            .find(|&&(c, _)| c == channel)
            .map(|&(_, n)| n)
    }
}

/// Splits a stream into one stream per requested channel, preserving order.
pub fn split_channels(
    stream: &TimeTagStream,
    channels: &[u16],
) -> Result<BTreeMap<u16, TimeTagStream>, TimeTagError> {
    if let Some(&bad) = channels.iter().find(|&&c| c >= stream.channel_count) {
        return Err(TimeTagError::UnknownChannel(bad));
    }
    let mut columns: BTreeMap<u16, (Vec<u64>, Vec<u16>)> = channels
        .iter()
        .map(|&c| (c, (Vec::new(), Vec::new())))
        .collect();
    for record in stream.records() {
        if let Some((ts, ch)) = columns.get_mut(&record.channel) {
            ts.push(record.timestamp);
            ch.push(record.channel);
        }
    }
    columns
        .into_iter()
        .map(|(c, (ts, ch))| {
            TimeTagStream::new(stream.resolution_ps, stream.channel_count, ts, ch).map(|s| (c, s))
        })
        .collect()
}

/// Merges streams of equal resolution. Ties keep the order of `streams`.
pub fn merge(streams: &[&TimeTagStream]) -> Result<TimeTagStream, TimeTagError> {
    let Some(first) = streams.first() else {
        return TimeTagStream::empty(1, 0);
    };
    let resolution = first.resolution_ps;
    if let Some(other) = streams.iter().find(|s| s.resolution_ps != resolution) {
        return Err(TimeTagError::ResolutionMismatch(resolution, other.resolution_ps));
    }
    let channel_count = streams.iter().map(|s| s.channel_count).max().unwrap_or(0);
    let total: usize = streams.iter().map(|s| s.len()).sum();
    let mut timestamps = Vec::with_capacity(total);
    let mut channels = Vec::with_capacity(total);
    let mut cursors = vec![0usize; streams.len()];
    loop {
        let mut best: Option<(usize, u64)> = None;
        for (i, s) in streams.iter().enumerate() {
            if let Some(&t) = s.timestamps.get(cursors[i]) {
                if best.is_none_or(|(_, bt)| t < bt) {
                    best = Some((i, t));
                }
            }
        }
        let Some((i, t)) = best else { break };
        timestamps.push(t);
        channels.push(streams[i].channels[cursors[i]]);
        cursors[i] += 1;
    }
    TimeTagStream::new(resolution, channel_count, timestamps, channels)
}

fn encode_header(stream: &TimeTagStream) -> [u8; HEADER_LEN] {
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&0u16.to_le_bytes());
    header[8..16].copy_from_slice(&stream.resolution_ps.to_le_bytes());
    header[16..24].copy_from_slice(&(stream.len() as u64).to_le_bytes());
    header[24..26].copy_from_slice(&stream.channel_count.to_le_bytes());
    header
}

/// Serializes a stream in PTAG v1 form.
pub fn write_to<W: Write>(stream: &TimeTagStream, mut writer: W) -> Result<(), TimeTagError> {
    writer.write_all(&encode_header(stream))?;
    let mut chunk = Vec::with_capacity(RECORD_LEN * 4096);
    for block in stream.timestamps.chunks(4096).zip(stream.channels.chunks(4096)) {
        chunk.clear();
        for (t, c) in block.0.iter().zip(block.1) {
            chunk.extend_from_slice(&t.to_le_bytes());
            chunk.extend_from_slice(&c.to_le_bytes());
        }
        writer.write_all(&chunk)?;
    }
    writer.flush()?;
    Ok(())
}

/// Parses and validates a PTAG v1 byte stream.
pub fn read_from<R: Read>(mut reader: R) -> Result<TimeTagStream, TimeTagError> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_up_to(&mut reader, &mut header)?;
    if got < 4 || header[0..4] != MAGIC {
        let mut magic = [0u8; 4];
        magic[..got.min(4)].copy_from_slice(&header[..got.min(4)]);
        return Err(TimeTagError::BadMagic(magic));
    }
    if got < HEADER_LEN {
        return Err(TimeTagError::TruncatedFile {
            expected: 0,
            found: 0,
        });
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(TimeTagError::UnsupportedVersion(version));
    }
    let resolution_ps = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let record_count = u64::from_le_bytes(header[16..24].try_into().unwrap());
    let channel_count = u16::from_le_bytes([header[24], header[25]]);

    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let needed = record_count
        .checked_mul(RECORD_LEN as u64)
        .ok_or(TimeTagError::TruncatedFile {
            expected: record_count,
            found: body.len() as u64,
        })?;
    if (body.len() as u64) < needed {
        return Err(TimeTagError::TruncatedFile {
            expected: record_count,
            found: body.len() as u64,
        });
    }
    if body.len() as u64 > needed {
        return Err(TimeTagError::TrailingData(body.len() as u64 - needed));
    }
    let n = record_count as usize;
    let mut timestamps = Vec::with_capacity(n);
    let mut channels = Vec::with_capacity(n);
    for rec in body.chunks_exact(RECORD_LEN) {
        timestamps.push(u64::from_le_bytes(rec[0..8].try_into().unwrap()));
        channels.push(u16::from_le_bytes([rec[8], rec[9]]));
    }
    TimeTagStream::new(resolution_ps, channel_count, timestamps, channels)
}

fn read_up_to<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<TimeTagStream, TimeTagError> {
    read_from(BufReader::new(File::open(path)?))
}

pub fn write_stream(stream: &TimeTagStream, path: impl AsRef<Path>) -> Result<(), TimeTagError> {
    write_to(stream, BufWriter::new(File::create(path)?))
}

/// Writes the `timestamp_ticks,channel` CSV debug form.
pub fn write_csv<W: Write>(stream: &TimeTagStream, writer: W) -> Result<(), TimeTagError> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "timestamp_ticks,channel")?;
    for r in stream.records() {
        writeln!(w, "{},{}", r.timestamp, r.channel)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the CSV debug form. The CSV carries no header metadata, so the
/// resolution is supplied by the caller; the channel count defaults to one
/// past the largest channel seen.
pub fn read_csv<R: Read>(
    reader: R,
    resolution_ps: u64,
    channel_count: Option<u16>,
) -> Result<TimeTagStream, TimeTagError> {
    let mut timestamps = Vec::new();
    let mut channels = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("timestamp")) {
            continue;
        }
        let csv_err = |message: String| TimeTagError::Csv {
            line: i + 1,
            message,
        };
        let (t, c) = line
            .split_once(',')
            .ok_or_else(|| csv_err("expected two columns".into()))?;
        timestamps.push(
            t.trim()
                .parse::<u64>()
                .map_err(|e| csv_err(format!("timestamp: {e}")))?,
        );
        channels.push(
            c.trim()
                .parse::<u16>()
                .map_err(|e| csv_err(format!("channel: {e}")))?,
        );
    }
    let channel_count = match channel_count {
        Some(n) => n,
        None => channels.iter().max().map_or(0, |&m| m + 1),
    };
    TimeTagStream::new(resolution_ps, channel_count, timestamps, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TimeTagStream {
        TimeTagStream::new(40, 2, vec![0, 25, 25, 1000], vec![0, 1, 0, 1]).unwrap()
    }

    fn encode(stream: &TimeTagStream) -> Vec<u8> {
        let mut buf = Vec::new();
        write_to(stream, &mut buf).unwrap();
        buf
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode(&sample());
        assert_eq!(bytes.len(), HEADER_LEN + 4 * RECORD_LEN);
        assert_eq!(&bytes[0..4], b"PTAG");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..8], &[0, 0]);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 40);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 4);
        assert_eq!(&bytes[24..26], &[2, 0]);
        assert_eq!(&bytes[26..32], &[0; 6]);
        // last record: 1000 on channel 1
        let last = &bytes[HEADER_LEN + 3 * RECORD_LEN..];
        assert_eq!(u64::from_le_bytes(last[0..8].try_into().unwrap()), 1000);
        assert_eq!(&last[8..10], &[1, 0]);
    }

    #[test]
    fn reads_four_record_file() {
        let s = read_from(encode(&sample()).as_slice()).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.duration_ticks(), 1000);
        assert_eq!(s.resolution_ps(), 40);
        assert_eq!(s.channels(), &[0, 1, 0, 1]);
    }

    #[test]
    fn empty_stream_round_trips() {
        let s = TimeTagStream::empty(40, 2).unwrap();
        let back = read_from(encode(&s).as_slice()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back, s);
        assert_eq!(back.duration_ticks(), 0);
    }

    #[test]
    fn decreasing_third_record_is_reported() {
        let mut bytes = encode(&TimeTagStream::new(1, 2, vec![10, 20, 30], vec![0, 1, 0]).unwrap());
        let third = HEADER_LEN + 2 * RECORD_LEN;
        bytes[third..third + 8].copy_from_slice(&15u64.to_le_bytes());
        match read_from(bytes.as_slice()) {
            Err(TimeTagError::NonMonotonicTimestamps { index }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(read_from(bytes.as_slice()), Err(TimeTagError::BadMagic(_))));

        let mut bytes = encode(&sample());
        bytes[4] = 2;
        assert!(matches!(
            read_from(bytes.as_slice()),
            Err(TimeTagError::UnsupportedVersion(2))
        ));

        let bytes = encode(&sample());
        assert!(matches!(
            read_from(&bytes[..bytes.len() - 3]),
            Err(TimeTagError::TruncatedFile { expected: 4, .. })
        ));
        assert!(matches!(read_from(&bytes[..2]), Err(TimeTagError::BadMagic(_))));
        assert!(matches!(
            read_from(&bytes[..20]),
            Err(TimeTagError::TruncatedFile { .. })
        ));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_from(long.as_slice()), Err(TimeTagError::TrailingData(1))));
    }

    #[test]
    fn channel_must_be_declared() {
        let err = TimeTagStream::new(1, 2, vec![1, 2], vec![0, 2]).unwrap_err();
        assert!(matches!(err, TimeTagError::ChannelOutOfRange { index: 1, .. }));
        assert!(matches!(
            TimeTagStream::new(0, 1, vec![], vec![]),
            Err(TimeTagError::InvalidResolution)
        ));
    }

    #[test]
    fn same_channel_ties_are_counted() {
        let s = TimeTagStream::new(1, 2, vec![5, 5, 5, 6], vec![0, 1, 0, 1]).unwrap();
        assert_eq!(s.same_channel_ties(), 1);
        assert_eq!(sample().same_channel_ties(), 0);
    }

    #[test]
    fn split_keeps_order_and_conserves_records() {
        let s = sample();
        let only0 = split_channels(&s, &[0]).unwrap();
        assert_eq!(only0[&0].timestamps(), &[0, 25]);
        let both = split_channels(&s, &[0, 1]).unwrap();
        assert_eq!(both.values().map(TimeTagStream::len).sum::<usize>(), s.len());
        assert!(matches!(
            split_channels(&s, &[7]),
            Err(TimeTagError::UnknownChannel(7))
        ));
    }

    #[test]
    fn merge_inverts_split() {
        let s = sample();
        let parts = split_channels(&s, &[0, 1]).unwrap();
        let merged = merge(&parts.values().collect::<Vec<_>>()).unwrap();
        // equal timestamps come back in channel order
        assert_eq!(merged.timestamps(), s.timestamps());
        assert_eq!(merged.channels(), &[0, 0, 1, 1]);
        let other = TimeTagStream::empty(1, 2).unwrap();
        assert!(matches!(
            merge(&[&s, &other]),
            Err(TimeTagError::ResolutionMismatch(40, 1))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let s = sample();
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp_ticks,channel\n0,0\n"));
        let back = read_csv(buf.as_slice(), 40, Some(2)).unwrap();
        assert_eq!(back, s);
        assert!(matches!(
            read_csv("timestamp_ticks,channel\n1;0\n".as_bytes(), 1, None),
            Err(TimeTagError::Csv { line: 2, .. })
        ));
    }

    #[test]
    fn rates_use_span() {
        let r = sample().rates().unwrap();
        let dur = 1000.0 * 40e-12;
        assert_eq!(r.count(0), Some(2));
        assert!((r.rate(1).unwrap() - 2.0 / dur).abs() < 1e-3);
    }
}
