//! Mono PCM decoding, the leading/trailing silence convention, and dataset
//! manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::emotion::Emotion;
use crate::error::{Error, Result};

/// Decoded mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    source_bit_depth: u16,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::with_bit_depth(samples, sample_rate, 64)
    }

    pub fn with_bit_depth(samples: Vec<f64>, sample_rate: u32, source_bit_depth: u16) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::Domain(format!("sample {i} = {s} outside [-1, 1]")));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
            source_bit_depth,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_bit_depth(&self) -> u16 {
        self.source_bit_depth
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Multiply every sample by `gain`; fails if the result leaves [-1, 1].
    pub fn scaled(&self, gain: f64) -> Result<AudioClip> {
        AudioClip::with_bit_depth(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
            self.source_bit_depth,
        )
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Sample encodings understood by the WAV reader and writer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Int16,
    Int24,
    Float32,
}

impl SampleFormat {
    fn bits(self) -> u16 {
        match self {
            SampleFormat::Int16 => 16,
            SampleFormat::Int24 => 24,
            SampleFormat::Float32 => 32,
        }
    }

    fn format_tag(self) -> u16 {
        match self {
            SampleFormat::Float32 => 3,
            _ => 1,
        }
    }
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

pub fn decode_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav_bytes(&bytes)
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

struct FmtChunk {
    format: SampleFormat,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::CorruptFile("fmt chunk shorter than 16 bytes".into()));
    }
    let mut tag = le_u16(&body[0..2]);
    let channels = le_u16(&body[2..4]);
    let sample_rate = le_u32(&body[4..8]);
    let block_align = le_u16(&body[12..14]);
    let bits = le_u16(&body[14..16]);
    if tag == WAVE_FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the sub-format GUID whose
        // first two bytes carry the real format tag.
        if body.len() < 26 {
            return Err(Error::CorruptFile("truncated WAVE_FORMAT_EXTENSIBLE header".into()));
        }
        tag = le_u16(&body[24..26]);
    }
    if channels != 1 {
        return Err(Error::ChannelCount { channels });
    }
    let format = match (tag, bits) {
        (WAVE_FORMAT_PCM, 16) => SampleFormat::Int16,
        (WAVE_FORMAT_PCM, 24) => SampleFormat::Int24,
        (WAVE_FORMAT_IEEE_FLOAT, 32) => SampleFormat::Float32,
        (t, b) => {
            return Err(Error::Format(format!(
                "format tag {t:#06x} with {b} bits per sample"
            )))
        }
    };
    if sample_rate == 0 {
        return Err(Error::CorruptFile("sample rate is zero".into()));
    }
    if block_align != format.bits() / 8 {
        return Err(Error::CorruptFile(format!(
            "block align {block_align} inconsistent with {} bits mono",
            format.bits()
        )));
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        block_align,
    })
}

/// Decode an in-memory RIFF/WAVE image.
pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE container".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<FmtChunk> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        match id {
            b"fmt " => {
                let end = body_start
                    .checked_add(size)
                    .filter(|&e| e <= bytes.len())
                    .ok_or_else(|| Error::CorruptFile("truncated fmt chunk".into()))?;
                fmt = Some(parse_fmt(&bytes[body_start..end])?);
            }
            b"data" => {
                let fmt = fmt.ok_or_else(|| Error::CorruptFile("data chunk before fmt chunk".into()))?;
                let available = bytes.len() - body_start;
                if size > available {
                    return Err(Error::CorruptFile(format!(
                        "data chunk declares {size} bytes, only {available} present"
                    )));
                }
                if !size.is_multiple_of(fmt.block_align as usize) {
                    return Err(Error::CorruptFile(format!(
                        "data size {size} is not a whole number of frames"
                    )));
                }
                debug_assert_eq!(fmt.channels, 1);
                let data = &bytes[body_start..body_start + size];
                let samples = decode_samples(data, fmt.format);
                return AudioClip::with_bit_depth(samples, fmt.sample_rate, fmt.format.bits());
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_start.saturating_add(size).saturating_add(size & 1);
    }
    Err(Error::CorruptFile(if fmt.is_some() {
        "missing data chunk".into()
    } else {
        "missing fmt chunk".into()
    }))
}

fn decode_samples(data: &[u8], format: SampleFormat) -> Vec<f64> {
    match format {
        SampleFormat::Int16 => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
            .collect(),
        SampleFormat::Int24 => data
            .chunks_exact(3)
            .map(|b| {
                // sign-extend through the top byte of an i32
                let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
                v as f64 / 8_388_608.0
            })
            .collect(),
        SampleFormat::Float32 => data
            .chunks_exact(4)
            .map(|b| (f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).clamp(-1.0, 1.0))
            .collect(),
    }
}

/// Encode a clip as a mono RIFF/WAVE image.
pub fn encode_wav(clip: &AudioClip, format: SampleFormat) -> Vec<u8> {
    let bytes_per_sample = (format.bits() / 8) as usize;
    let data_len = clip.len() * bytes_per_sample;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.format_tag().to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * bytes_per_sample as u32).to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(&format.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in clip.samples() {
        match format {
            SampleFormat::Int16 => {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            SampleFormat::Int24 => {
                let q = (s * 8_388_608.0).round().clamp(-8_388_608.0, 8_388_607.0) as i32;
                out.extend_from_slice(&q.to_le_bytes()[0..3]);
            }
            SampleFormat::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
        }
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, format: SampleFormat) -> Result<()> {
    write_atomic(path, &encode_wav(clip, format))
}

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a file path")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Threshold rule deciding which parts of a clip count as silence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilenceRule {
    /// Level in dBFS below which the moving RMS is silent.
    pub threshold_db: f64,
    /// Moving RMS window in seconds.
    pub window: f64,
}

impl Default for SilenceRule {
    fn default() -> Self {
        SilenceRule {
            threshold_db: -60.0,
            window: 0.010,
        }
    }
}

impl SilenceRule {
    pub fn threshold_amplitude(&self) -> f64 {
        10f64.powf(self.threshold_db / 20.0)
    }

    fn window_samples(&self, sample_rate: u32) -> usize {
        ((self.window * sample_rate as f64).round() as usize).max(1)
    }
}

/// Boundaries of the non-silent part on the zero-extended signal. The start
/// is the first forward-looking window at or above threshold and the end the
/// last backward-looking one; either may lie up to one window outside the
/// clip. The forward window at `start` equals the backward window ending at
/// `start + w - 1`, so the region always contains its own boundary windows and
/// re-detecting on a cropped, zero-padded copy finds the same boundaries.
fn extended_region(clip: &AudioClip, rule: &SilenceRule) -> Result<(isize, isize)> {
    // Squared samples in 2^-100 fixed point: window sums are exact, so the
    // same samples give the same decision wherever they sit in the clip.
    const SCALE: f64 = 1_267_650_600_228_229_401_496_703_205_376.0; // 2^100
    let s = clip.samples();
    let n = s.len() as isize;
    let w = rule.window_samples(clip.sample_rate()) as isize;
    let mut prefix: Vec<u128> = Vec::with_capacity(s.len() + 1);
    prefix.push(0);
    let mut acc: u128 = 0;
    for &x in s {
        acc += (x * x * SCALE) as u128;
        prefix.push(acc);
    }
    let at = |i: isize| prefix[i.clamp(0, n) as usize];
    let thr = (rule.threshold_amplitude().powi(2) * w as f64 * SCALE) as u128;
    let first = (1 - w..n).find(|&i| at(i + w) - at(i) >= thr);
    let last = (0..n + w - 1).rev().find(|&j| at(j + 1) - at(j + 1 - w) >= thr);
    match (first, last) {
        (Some(a), Some(b)) if a <= b => Ok((a, b)),
        _ => Err(Error::SilentClip),
    }
}

/// Inclusive sample range `[first, last]` of the non-silent part of a clip.
pub fn active_region(clip: &AudioClip, rule: &SilenceRule) -> Result<(usize, usize)> {
    let (a, b) = extended_region(clip, rule)?;
    let last = clip.len() as isize - 1;
    Ok((a.clamp(0, last) as usize, b.clamp(0, last) as usize))
}

/// Crop to the active region and pad both ends with exactly
/// `round(pad * sample_rate)` zeros.
pub fn normalize_silence(clip: &AudioClip, pad: f64, rule: &SilenceRule) -> Result<AudioClip> {
    if !(pad >= 0.0) {
        return Err(Error::Domain(format!("pad must be non-negative, got {pad}")));
    }
    let (a, b) = extended_region(clip, rule)?;
    let pad_len = (pad * clip.sample_rate() as f64).round() as usize;
    let n = clip.len() as isize;
    let mut samples = Vec::with_capacity(2 * pad_len + (b - a + 1) as usize);
    samples.resize(pad_len, 0.0);
    samples.resize(samples.len() + (-a).max(0) as usize, 0.0);
    samples.extend_from_slice(&clip.samples()[a.max(0) as usize..=b.min(n - 1) as usize]);
    samples.resize(samples.len() + (b - (n - 1)).max(0) as usize + pad_len, 0.0);
    AudioClip::with_bit_depth(samples, clip.sample_rate(), clip.source_bit_depth())
}

/// One row of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub path: PathBuf,
    pub performer: String,
    pub emotion: Emotion,
}

#[derive(Deserialize)]
struct ManifestRow {
    path: String,
    performer: String,
    emotion: String,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<RecordingMeta>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

/// Parse manifest CSV text (`path,performer,emotion`). Row numbers in errors
/// are 1-based over data rows.
pub fn parse_manifest(text: &str) -> Result<Vec<RecordingMeta>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let expected = ["path", "performer", "emotion"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| !h.eq_ignore_ascii_case(e)) {
        return Err(Error::Schema(format!(
            "manifest header must be `path,performer,emotion`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: Vec<RecordingMeta> = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let emotion: Emotion = row.emotion.parse().map_err(|_| Error::Label {
            row: row_no,
            label: row.emotion.clone(),
        })?;
        if out.iter().any(|m| m.performer == row.performer && m.emotion == emotion) {
            return Err(Error::Duplicate {
                row: row_no,
                performer: row.performer,
                emotion: emotion.to_string(),
            });
        }
        out.push(RecordingMeta {
            path: PathBuf::from(row.path),
            performer: row.performer,
            emotion,
        });
    }
    Ok(out)
}

pub fn manifest_to_string(records: &[RecordingMeta]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["path", "performer", "emotion"])?;
    for r in records {
        writer.write_record([&*r.path.to_string_lossy(), &r.performer, r.emotion.name()])?;
    }
    writer.flush().map_err(|e| Error::io("<manifest>", e))?;
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::io("<manifest>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[RecordingMeta]) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, manifest_to_string(records)?.as_bytes())
}
