//! Bit-exact interchange formats.
//!
//! * `FMP1`: `"FMP1"`, then `c`, `h`, `w` as little-endian `u32`, then `c·h·w`
//!   little-endian binary32 values in channel-major order.
//! * Binary PGM (`P5`, maxval 255) for masks and heatmaps.
//! * One text line per image for boxes: `id x0,y0,x1,y1;x0,y0,x1,y1`.

use std::io::{self, BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::types::{normalize_unit, BoundingBox, FeatureMap, ProjectionMap, SegMask};

pub const FMP1_MAGIC: &[u8; 4] = b"FMP1";
const FMP1_HEADER_LEN: u64 = 16;

/// Tracks how many bytes reached the sink so failures can report an offset.
struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn new(inner: W) -> Self {
        Self { inner, written: 0 }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        let mut rest = bytes;
        while !rest.is_empty() {
            match self.inner.write(rest) {
                Ok(0) => {
                    return Err(Error::io(
                        self.written,
                        io::Error::new(io::ErrorKind::WriteZero, "sink accepted no bytes"),
                    ))
                }
                Ok(n) => {
                    self.written += n as u64;
                    rest = &rest[n..];
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io(self.written, e)),
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        let at = self.written;
        self.inner.flush().map_err(|e| Error::io(at, e))
    }
}

pub fn save_fmap<W: Write>(map: &FeatureMap, sink: W) -> Result<()> {
    let mut out = CountingWriter::new(sink);
    out.put(FMP1_MAGIC)?;
    for dim in [map.channels(), map.height(), map.width()] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::Format(format!("dimension {dim} does not fit in u32")))?;
        out.put(&dim.to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(map.data().len() * 4);
    for &v in map.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.put(&payload)?;
    out.finish()
}

fn read_exact_or_length<R: Read>(source: &mut R, buf: &mut [u8], consumed: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Length {
                    expected: consumed + buf.len() as u64,
                    found: consumed + filled as u64,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::io(consumed + filled as u64, e)),
        }
    }
    Ok(())
}

pub fn load_fmap<R: Read>(mut source: R) -> Result<FeatureMap> {
    let mut header = [0u8; FMP1_HEADER_LEN as usize];
    read_exact_or_length(&mut source, &mut header[..4], 0)?;
    if &header[..4] != FMP1_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"FMP1\"",
            String::from_utf8_lossy(&header[..4])
        )));
    }
    read_exact_or_length(&mut source, &mut header[4..], 4)?;
    let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (c, h, w) = (dim(0), dim(1), dim(2));
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Format(format!("zero dimension in header {c}x{h}x{w}")));
    }
    let count = u64::from(c)
        .checked_mul(u64::from(h))
        .and_then(|v| v.checked_mul(u64::from(w)))
        .filter(|&v| v <= (usize::MAX / 8) as u64)
        .ok_or_else(|| Error::Format(format!("dimensions {c}x{h}x{w} overflow")))?;
    let expected = count * 4;

    let mut payload = Vec::new();
    source
        .by_ref()
        .take(expected + 1)
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(FMP1_HEADER_LEN + payload.len() as u64, e))?;
    if payload.len() as u64 != expected {
        return Err(Error::Length {
            expected: FMP1_HEADER_LEN + expected,
            found: FMP1_HEADER_LEN + payload.len() as u64,
        });
    }

    let mut data = Vec::with_capacity(count as usize);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        data.push(f64::from(v));
    }
    FeatureMap::new(c as usize, h as usize, w as usize, data)
}

fn write_pgm<W: Write>(width: usize, height: usize, bytes: &[u8], sink: W) -> Result<()> {
    let mut out = CountingWriter::new(sink);
    out.put(format!("P5\n{width} {height}\n255\n").as_bytes())?;
    out.put(bytes)?;
    out.finish()
}

pub fn save_mask<W: Write>(mask: &SegMask, sink: W) -> Result<()> {
    let bytes: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_pgm(mask.width(), mask.height(), &bytes, sink)
}

/// Min–max normalizes then quantizes each value as `round(v · 255)`.
pub fn save_heatmap<W: Write>(heatmap: &ProjectionMap, sink: W) -> Result<()> {
    let bytes: Vec<u8> = normalize_unit(heatmap.values())
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    write_pgm(heatmap.width(), heatmap.height(), &bytes, sink)
}

/// Raw 8-bit grayscale raster read from a binary PGM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn header_token<R: BufRead>(source: &mut R, consumed: &mut u64) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        match source.read(&mut byte) {
            Ok(0) => {
                return Err(Error::Format("PGM header ended unexpectedly".into()));
            }
            Ok(_) => {}
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(Error::io(*consumed, e)),
        }
        *consumed += 1;
        let b = byte[0];
        if b == b'#' && token.is_empty() {
            let mut skipped = Vec::new();
            let n = source
                .read_until(b'\n', &mut skipped)
                .map_err(|e| Error::io(*consumed, e))?;
            *consumed += n as u64;
            continue;
        }
        if b.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return Ok(token);
        }
        if token.len() >= 16 {
            return Err(Error::Format("PGM header token too long".into()));
        }
        token.push(b as char);
    }
}

pub fn load_pgm<R: Read>(source: R) -> Result<GrayImage> {
    let mut source = io::BufReader::new(source);
    let mut consumed = 0u64;
    let mut magic = [0u8; 2];
    read_exact_or_length(&mut source, &mut magic, 0)?;
    consumed += 2;
    if &magic != b"P5" {
        return Err(Error::Format(format!(
            "not a binary PGM (magic {:?})",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut number = |what: &str| -> Result<usize> {
        let tok = header_token(&mut source, &mut consumed)?;
        tok.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM {what} {tok:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("PGM has zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::Format(format!("PGM maxval {maxval}, expected 255")));
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PGM dimensions overflow".into()))?;
    let mut pixels = Vec::new();
    source
        .take(expected as u64 + 1)
        .read_to_end(&mut pixels)
        .map_err(|e| Error::io(consumed + pixels.len() as u64, e))?;
    if pixels.len() != expected {
        return Err(Error::Length {
            expected: consumed + expected as u64,
            found: consumed + pixels.len() as u64,
        });
    }
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

/// Bytes above 127 are foreground.
pub fn load_mask<R: Read>(source: R) -> Result<SegMask> {
    let img = load_pgm(source)?;
    SegMask::new(
        img.height,
        img.width,
        img.pixels.iter().map(|&b| b > 127).collect(),
    )
}

/// Loads a PGM as a heatmap with values `byte / 255`.
pub fn load_heatmap<R: Read>(source: R) -> Result<ProjectionMap> {
    let img = load_pgm(source)?;
    ProjectionMap::new(
        img.height,
        img.width,
        img.pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
}

pub fn format_boxes(image_id: &str, boxes: &[BoundingBox]) -> String {
    let mut line = image_id.to_string();
    if !boxes.is_empty() {
        line.push(' ');
        let parts: Vec<String> = boxes
            .iter()
            .map(|b| format!("{},{},{},{}", b.x_min, b.y_min, b.x_max, b.y_max))
            .collect();
        line.push_str(&parts.join(";"));
    }
    line
}

/// Writes one newline-terminated box line.
pub fn save_boxes<W: Write>(image_id: &str, boxes: &[BoundingBox], sink: W) -> Result<()> {
    if image_id.is_empty() || image_id.contains(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!(
            "image id {image_id:?} must be non-empty without whitespace"
        )));
    }
    let mut out = CountingWriter::new(sink);
    out.put(format_boxes(image_id, boxes).as_bytes())?;
    out.put(b"\n")?;
    out.finish()
}

pub fn parse_boxes_line(line: &str) -> Result<(String, Vec<BoundingBox>)> {
    let line = line.trim_end_matches(['\n', '\r']);
    let (id, rest) = match line.split_once(' ') {
        Some((id, rest)) => (id, Some(rest)),
        None => (line, None),
    };
    if id.is_empty() {
        return Err(Error::Format(format!("box line {line:?} has no image id")));
    }
    let mut boxes = Vec::new();
    if let Some(rest) = rest {
        for part in rest.split(';') {
            let nums: Vec<u32> = part
                .split(',')
                .map(|s| s.parse::<u32>())
                .collect::<Result<_, _>>()
                .map_err(|_| Error::Format(format!("bad box {part:?}")))?;
            let [x0, y0, x1, y1] = nums[..] else {
                return Err(Error::Format(format!("box {part:?} needs 4 integers")));
            };
            boxes.push(BoundingBox::new(x0, y0, x1, y1).map_err(|e| Error::Format(e.to_string()))?);
        }
    }
    Ok((id.to_string(), boxes))
}

pub fn load_boxes<R: Read>(source: R) -> Result<Vec<(String, Vec<BoundingBox>)>> {
    let reader = io::BufReader::new(source);
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(offset, e))?;
        offset += line.len() as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_boxes_line(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmap_bytes(map: &FeatureMap) -> Vec<u8> {
        let mut buf = Vec::new();
        save_fmap(map, &mut buf).unwrap();
        buf
    }

    #[test]
    fn smallest_fmap_is_20_bytes() {
        let map = FeatureMap::new(1, 1, 1, vec![0.0]).unwrap();
        let bytes = fmap_bytes(&map);
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"FMP1");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[16..], &[0, 0, 0, 0]);
        assert_eq!(load_fmap(&bytes[..]).unwrap(), map);
    }

    #[test]
    fn fmap_length_arithmetic() {
        let map = FeatureMap::zeros(2, 2, 3).unwrap();
        assert_eq!(fmap_bytes(&map).len(), 64);
    }

    #[test]
    fn fmap_rejects_bad_magic_and_truncation() {
        let map = FeatureMap::zeros(1, 1, 1).unwrap();
        let mut bytes = fmap_bytes(&map);
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(load_fmap(&bad[..]), Err(Error::Format(_))));
        bytes.pop();
        assert!(matches!(load_fmap(&bytes[..]), Err(Error::Length { .. })));
    }

    #[test]
    fn fmap_rejects_trailing_bytes_and_nan() {
        let map = FeatureMap::zeros(1, 2, 2).unwrap();
        let mut bytes = fmap_bytes(&map);
        bytes.push(0);
        assert!(matches!(load_fmap(&bytes[..]), Err(Error::Length { .. })));
        bytes.pop();
        bytes[16 + 8..16 + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(load_fmap(&bytes[..]), Err(Error::NonFinite { index: 2 })));
    }

    struct FailingSink {
        budget: usize,
    }

    impl Write for FailingSink {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            if self.budget == 0 {
                return Err(io::Error::other("disk full"));
            }
            let n = buf.len().min(self.budget);
            self.budget -= n;
            Ok(n)
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn write_failure_reports_offset() {
        let map = FeatureMap::zeros(2, 2, 2).unwrap();
        let err = save_fmap(&map, FailingSink { budget: 10 }).unwrap_err();
        assert!(matches!(err, Error::Io { offset: 10, .. }), "{err}");
    }

    #[test]
    fn mask_pgm_bytes() {
        let mask = SegMask::new(2, 2, vec![true; 4]).unwrap();
        let mut buf = Vec::new();
        save_mask(&mask, &mut buf).unwrap();
        assert_eq!(buf, b"P5\n2 2\n255\n\xff\xff\xff\xff");
        assert_eq!(load_mask(&buf[..]).unwrap(), mask);
    }

    #[test]
    fn heatmap_quantization() {
        let heat = ProjectionMap::new(2, 2, vec![0.0, 0.5, 0.5, 1.0]).unwrap();
        let mut buf = Vec::new();
        save_heatmap(&heat, &mut buf).unwrap();
        assert_eq!(&buf[buf.len() - 4..], &[0, 128, 128, 255]);

        let flat = ProjectionMap::new(2, 2, vec![0.3; 4]).unwrap();
        let mut buf = Vec::new();
        save_heatmap(&flat, &mut buf).unwrap();
        assert_eq!(&buf[buf.len() - 4..], &[0, 0, 0, 0]);
    }

    #[test]
    fn load_mask_threshold_boundary() {
        let bytes = b"P5\n2 1\n255\n\x80\x7f";
        let mask = load_mask(&bytes[..]).unwrap();
        assert_eq!(mask.bits(), &[true, false]);
    }

    #[test]
    fn load_mask_rejects_ascii_pgm_and_bad_maxval() {
        assert!(matches!(load_mask(&b"P2\n1 1\n255\n0\n"[..]), Err(Error::Format(_))));
        assert!(matches!(load_mask(&b"P5\n1 1\n65535\n\0\0"[..]), Err(Error::Format(_))));
        assert!(matches!(load_mask(&b"P5\n2 2\n255\n\0"[..]), Err(Error::Length { .. })));
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n1 1\n255\n\xff";
        assert_eq!(load_mask(&bytes[..]).unwrap().bits(), &[true]);
    }

    #[test]
    fn box_lines() {
        let b = |a, c, d, e| BoundingBox::new(a, c, d, e).unwrap();
        assert_eq!(format_boxes("img1", &[b(0, 0, 9, 9)]), "img1 0,0,9,9");
        assert_eq!(format_boxes("img2", &[]), "img2");
        assert_eq!(
            format_boxes("img3", &[b(0, 0, 9, 9), b(10, 10, 19, 19)]),
            "img3 0,0,9,9;10,10,19,19"
        );
        let mut buf = Vec::new();
        save_boxes("img3", &[b(0, 0, 9, 9), b(10, 10, 19, 19)], &mut buf).unwrap();
        save_boxes("img2", &[], &mut buf).unwrap();
        let parsed = load_boxes(&buf[..]).unwrap();
        assert_eq!(parsed[0], ("img3".into(), vec![b(0, 0, 9, 9), b(10, 10, 19, 19)]));
        assert_eq!(parsed[1], ("img2".into(), vec![]));
        assert!(parse_boxes_line("img 1,2,3").is_err());
    }
}
