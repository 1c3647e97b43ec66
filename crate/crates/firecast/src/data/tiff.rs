//! Minimal TIFF codec for multi-band float32 rasters.
//!
//! The writer emits uncompressed little-endian band-sequential files (one
//! strip per band, IEEE float samples) and is fully deterministic, so runs
//! that regenerate a dataset produce byte-identical files. The reader
//! accepts both band-sequential and pixel-interleaved uncompressed float32
//! TIFFs; anything fancier (compression, tiles, other sample types) is
//! rejected with a descriptive error. NaN samples are the nodata sentinel.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array3, ArrayView3};

use super::DataError;

const TAG_IMAGE_WIDTH: u16 = 256;
const TAG_IMAGE_LENGTH: u16 = 257;
const TAG_BITS_PER_SAMPLE: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_PHOTOMETRIC: u16 = 262;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES_PER_PIXEL: u16 = 277;
const TAG_ROWS_PER_STRIP: u16 = 278;
const TAG_STRIP_BYTE_COUNTS: u16 = 279;
const TAG_PLANAR_CONFIG: u16 = 284;
const TAG_SAMPLE_FORMAT: u16 = 339;

const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;

fn tiff_err(path: &Path, detail: impl Into<String>) -> DataError {
    DataError::Tiff { path: path.display().to_string(), detail: detail.into() }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Write `planes` (bands, rows, cols) as an uncompressed band-sequential
/// float32 TIFF.
pub fn write_tiff(path: &Path, planes: ArrayView3<f32>) -> Result<(), DataError> {
    let (c, h, w) = planes.dim();
    assert!(c > 0 && h > 0 && w > 0, "empty raster");
    let plane_bytes = (h * w * 4) as u32;

    let n_entries: usize = 11;
    let ifd_len = 2 + n_entries * 12 + 4;
    let aux_base = 8 + ifd_len;
    // arrays too wide for the 4-byte inline value field go to an aux area
    let bits_aux = if c > 2 { 2 * c } else { 0 };
    let sf_aux = if c > 2 { 2 * c } else { 0 };
    let counts_aux = if c > 1 { 4 * c } else { 0 };
    let offsets_aux = if c > 1 { 4 * c } else { 0 };
    let bits_off = aux_base;
    let sf_off = bits_off + bits_aux;
    let counts_off = sf_off + sf_aux;
    let offsets_off = counts_off + counts_aux;
    let data_start = (offsets_off + offsets_aux) as u32;

    let mut buf: Vec<u8> = Vec::with_capacity(data_start as usize + c * plane_bytes as usize);
    buf.extend_from_slice(b"II");
    buf.extend_from_slice(&42u16.to_le_bytes());
    buf.extend_from_slice(&8u32.to_le_bytes());

    buf.extend_from_slice(&(n_entries as u16).to_le_bytes());
    let entry = |buf: &mut Vec<u8>, tag: u16, typ: u16, count: u32, value: [u8; 4]| {
        buf.extend_from_slice(&tag.to_le_bytes());
        buf.extend_from_slice(&typ.to_le_bytes());
        buf.extend_from_slice(&count.to_le_bytes());
        buf.extend_from_slice(&value);
    };
    let long_val = |v: u32| v.to_le_bytes();
    let short_val = |v: u16| {
        let b = v.to_le_bytes();
        [b[0], b[1], 0, 0]
    };
    let short2_val = |a: u16, b: u16| {
        let x = a.to_le_bytes();
        let y = b.to_le_bytes();
        [x[0], x[1], y[0], y[1]]
    };

    entry(&mut buf, TAG_IMAGE_WIDTH, TYPE_LONG, 1, long_val(w as u32));
    entry(&mut buf, TAG_IMAGE_LENGTH, TYPE_LONG, 1, long_val(h as u32));
    match c {
        1 => entry(&mut buf, TAG_BITS_PER_SAMPLE, TYPE_SHORT, 1, short_val(32)),
        2 => entry(&mut buf, TAG_BITS_PER_SAMPLE, TYPE_SHORT, 2, short2_val(32, 32)),
        _ => entry(&mut buf, TAG_BITS_PER_SAMPLE, TYPE_SHORT, c as u32, long_val(bits_off as u32)),
    }
    entry(&mut buf, TAG_COMPRESSION, TYPE_SHORT, 1, short_val(1));
    entry(&mut buf, TAG_PHOTOMETRIC, TYPE_SHORT, 1, short_val(1));
    if c == 1 {
        entry(&mut buf, TAG_STRIP_OFFSETS, TYPE_LONG, 1, long_val(data_start));
    } else {
        entry(&mut buf, TAG_STRIP_OFFSETS, TYPE_LONG, c as u32, long_val(offsets_off as u32));
    }
    entry(&mut buf, TAG_SAMPLES_PER_PIXEL, TYPE_SHORT, 1, short_val(c as u16));
    entry(&mut buf, TAG_ROWS_PER_STRIP, TYPE_LONG, 1, long_val(h as u32));
    if c == 1 {
        entry(&mut buf, TAG_STRIP_BYTE_COUNTS, TYPE_LONG, 1, long_val(plane_bytes));
    } else {
        entry(&mut buf, TAG_STRIP_BYTE_COUNTS, TYPE_LONG, c as u32, long_val(counts_off as u32));
    }
    entry(&mut buf, TAG_PLANAR_CONFIG, TYPE_SHORT, 1, short_val(2));
    match c {
        1 => entry(&mut buf, TAG_SAMPLE_FORMAT, TYPE_SHORT, 1, short_val(3)),
        2 => entry(&mut buf, TAG_SAMPLE_FORMAT, TYPE_SHORT, 2, short2_val(3, 3)),
        _ => entry(&mut buf, TAG_SAMPLE_FORMAT, TYPE_SHORT, c as u32, long_val(sf_off as u32)),
    }
    buf.extend_from_slice(&0u32.to_le_bytes());

    if c > 2 {
        for _ in 0..c {
            buf.extend_from_slice(&32u16.to_le_bytes());
        }
        for _ in 0..c {
            buf.extend_from_slice(&3u16.to_le_bytes());
        }
    }
    if c > 1 {
        for _ in 0..c {
            buf.extend_from_slice(&plane_bytes.to_le_bytes());
        }
        for i in 0..c {
            buf.extend_from_slice(&(data_start + i as u32 * plane_bytes).to_le_bytes());
        }
    }
    debug_assert_eq!(buf.len(), data_start as usize);

    for v in planes.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&buf).map_err(io_err(path))?;
    Ok(())
}

fn u16_at(buf: &[u8], pos: usize) -> Option<u16> {
    buf.get(pos..pos + 2).map(|b| u16::from_le_bytes([b[0], b[1]]))
}

fn u32_at(buf: &[u8], pos: usize) -> Option<u32> {
    buf.get(pos..pos + 4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn parse_entry(path: &Path, buf: &[u8], pos: usize) -> Result<(u16, Vec<u32>), DataError> {
    let tag = u16_at(buf, pos).ok_or_else(|| tiff_err(path, "truncated IFD entry"))?;
    let typ = u16_at(buf, pos + 2).ok_or_else(|| tiff_err(path, "truncated IFD entry"))?;
    let count = u32_at(buf, pos + 4).ok_or_else(|| tiff_err(path, "truncated IFD entry"))? as usize;
    let elem = match typ {
        TYPE_SHORT => 2,
        TYPE_LONG => 4,
        // unknown value types are skipped by the caller
        _ => return Ok((tag, Vec::new())),
    };
    let total = elem * count;
    let src = if total <= 4 {
        pos + 8
    } else {
        u32_at(buf, pos + 8).ok_or_else(|| tiff_err(path, "truncated IFD entry"))? as usize
    };
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let v = match typ {
            TYPE_SHORT => u16_at(buf, src + 2 * i)
                .ok_or_else(|| tiff_err(path, format!("tag {tag} data out of bounds")))?
                as u32,
            _ => u32_at(buf, src + 4 * i)
                .ok_or_else(|| tiff_err(path, format!("tag {tag} data out of bounds")))?,
        };
        values.push(v);
    }
    Ok((tag, values))
}

/// Read an uncompressed float32 TIFF into (bands, rows, cols).
pub fn read_tiff(path: &Path) -> Result<Array3<f32>, DataError> {
    let buf = fs::read(path).map_err(io_err(path))?;
    if buf.len() < 8 || &buf[0..2] != b"II" {
        return Err(tiff_err(path, "not a little-endian TIFF"));
    }
    if u16_at(&buf, 2) != Some(42) {
        return Err(tiff_err(path, "bad TIFF magic"));
    }
    let ifd = u32_at(&buf, 4).ok_or_else(|| tiff_err(path, "truncated header"))? as usize;
    let n = u16_at(&buf, ifd).ok_or_else(|| tiff_err(path, "truncated IFD"))? as usize;

    let mut tags: std::collections::HashMap<u16, Vec<u32>> = std::collections::HashMap::new();
    for i in 0..n {
        let (tag, values) = parse_entry(path, &buf, ifd + 2 + 12 * i)?;
        if !values.is_empty() {
            tags.insert(tag, values);
        }
    }

    let scalar = |tag: u16, default: Option<u32>| -> Result<u32, DataError> {
        match tags.get(&tag) {
            Some(v) => Ok(v[0]),
            None => default.ok_or_else(|| tiff_err(path, format!("missing required tag {tag}"))),
        }
    };

    let w = scalar(TAG_IMAGE_WIDTH, None)? as usize;
    let h = scalar(TAG_IMAGE_LENGTH, None)? as usize;
    let c = scalar(TAG_SAMPLES_PER_PIXEL, Some(1))? as usize;
    if w == 0 || h == 0 || c == 0 {
        return Err(tiff_err(path, "degenerate image dimensions"));
    }
    if scalar(TAG_COMPRESSION, Some(1))? != 1 {
        return Err(tiff_err(path, "compressed TIFFs are not supported"));
    }
    if let Some(bits) = tags.get(&TAG_BITS_PER_SAMPLE) {
        if bits.iter().any(|&b| b != 32) {
            return Err(tiff_err(path, "only 32-bit samples are supported"));
        }
    } else {
        return Err(tiff_err(path, "missing BitsPerSample"));
    }
    match tags.get(&TAG_SAMPLE_FORMAT) {
        Some(f) if f.iter().all(|&f| f == 3) => {}
        _ => return Err(tiff_err(path, "only IEEE float samples are supported")),
    }
    let planar = scalar(TAG_PLANAR_CONFIG, Some(1))?;
    if planar != 1 && planar != 2 {
        return Err(tiff_err(path, format!("unsupported planar configuration {planar}")));
    }

    let offsets =
        tags.get(&TAG_STRIP_OFFSETS).ok_or_else(|| tiff_err(path, "missing StripOffsets"))?;
    let counts = tags
        .get(&TAG_STRIP_BYTE_COUNTS)
        .ok_or_else(|| tiff_err(path, "missing StripByteCounts"))?;
    if offsets.len() != counts.len() {
        return Err(tiff_err(path, "StripOffsets/StripByteCounts length mismatch"));
    }

    let expect = c * h * w * 4;
    let total: usize = counts.iter().map(|&x| x as usize).sum();
    if total != expect {
        return Err(tiff_err(
            path,
            format!("strip data holds {total} bytes, expected {expect} for {c}x{h}x{w} float32"),
        ));
    }
    let mut data = Vec::with_capacity(expect);
    for (&off, &cnt) in offsets.iter().zip(counts.iter()) {
        let (off, cnt) = (off as usize, cnt as usize);
        let strip =
            buf.get(off..off + cnt).ok_or_else(|| tiff_err(path, "strip out of bounds"))?;
        data.extend_from_slice(strip);
    }

    let float_at = |i: usize| {
        f32::from_le_bytes([data[4 * i], data[4 * i + 1], data[4 * i + 2], data[4 * i + 3]])
    };
    let mut out = Array3::zeros((c, h, w));
    if planar == 2 {
        for ci in 0..c {
            for row in 0..h {
                for col in 0..w {
                    out[[ci, row, col]] = float_at((ci * h + row) * w + col);
                }
            }
        }
    } else {
        for row in 0..h {
            for col in 0..w {
                for ci in 0..c {
                    out[[ci, row, col]] = float_at((row * w + col) * c + ci);
                }
            }
        }
    }
    Ok(out)
}
