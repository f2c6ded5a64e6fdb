//! Binary file formats: "SEGP" probability maps, binary PGM label maps and
//! binary PPM frames, plus atomic file writes.
//!
//! SEGP layout (all little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "SEGP"
//! 4       4           version (u32, = 1)
//! 8       4           height  (u32)
//! 12      4           width   (u32)
//! 16      4           classes (u32)
//! 20      4*H*W*C     f32 probabilities, channel-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::labelmap::LabelMap;
use crate::probmap::ProbMap;

pub const SEGP_MAGIC: &[u8; 4] = b"SEGP";
pub const SEGP_VERSION: u32 = 1;
pub const SEGP_HEADER_LEN: usize = 20;

pub fn write_prob_map<W: Write>(pm: &ProbMap, mut dst: W) -> Result<()> {
    pm.validate()?;
    let mut buf = Vec::with_capacity(SEGP_HEADER_LEN + 4 * pm.data().len());
    buf.extend_from_slice(SEGP_MAGIC);
    for v in [SEGP_VERSION, dim_u32(pm.height())?, dim_u32(pm.width())?, dim_u32(pm.num_classes())?] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in pm.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    dst.write_all(&buf)?;
    Ok(())
}

pub fn read_prob_map<R: Read>(mut src: R) -> Result<ProbMap> {
    let mut bytes = Vec::new();
    src.read_to_end(&mut bytes)?;
    if bytes.len() < SEGP_HEADER_LEN {
        return Err(Error::format(format!(
            "SEGP header truncated: {} of {SEGP_HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != SEGP_MAGIC {
        return Err(Error::format(format!("bad SEGP magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != SEGP_VERSION {
        return Err(Error::format(format!("unsupported SEGP version {version}")));
    }
    let (h, w, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::format("SEGP dimensions overflow"))?;
    let payload = &bytes[SEGP_HEADER_LEN..];
    if payload.len() != 4 * count {
        return Err(Error::format(format!(
            "SEGP payload is {} bytes, header declares {h}x{w}x{c} = {} bytes",
            payload.len(),
            4 * count
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let pm = ProbMap::from_raw(h, w, c, data).map_err(|e| Error::format(e.to_string()))?;
    pm.validate()?;
    Ok(pm)
}

pub fn write_label_map<W: Write>(lm: &LabelMap, mut dst: W) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", lm.width(), lm.height()).into_bytes();
    buf.extend_from_slice(lm.data());
    dst.write_all(&buf)?;
    Ok(())
}

pub fn read_label_map<R: Read>(mut src: R) -> Result<LabelMap> {
    let mut bytes = Vec::new();
    src.read_to_end(&mut bytes)?;
    let (header, payload) = parse_netpbm(&bytes, b"P5", 1)?;
    LabelMap::new(header.height, header.width, payload.to_vec())
        .map_err(|e| Error::format(e.to_string()))
}

/// Writes a frame as binary PPM ("P6", maxval 255).
pub fn write_image<W: Write>(img: &Image, mut dst: W) -> Result<()> {
    let mut buf = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    buf.extend_from_slice(&img.to_rgb8());
    dst.write_all(&buf)?;
    Ok(())
}

pub fn read_image<R: Read>(mut src: R) -> Result<Image> {
    let mut bytes = Vec::new();
    src.read_to_end(&mut bytes)?;
    let (header, payload) = parse_netpbm(&bytes, b"P6", 3)?;
    Image::from_rgb8(header.height, header.width, payload).map_err(|e| Error::format(e.to_string()))
}

struct NetpbmHeader {
    width: usize,
    height: usize,
}

/// Parses a binary netpbm header (magic, width, height, maxval; `#` comments
/// allowed) and returns the payload, which must be exactly
/// `width * height * samples` bytes.
fn parse_netpbm<'a>(
    bytes: &'a [u8],
    magic: &[u8; 2],
    samples: usize,
) -> Result<(NetpbmHeader, &'a [u8])> {
    let kind = String::from_utf8_lossy(magic);
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(format!("not a binary {kind} file")));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(format!("truncated {kind} header")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(format!("{kind} header field too large")))?;
    }
    // exactly one whitespace byte separates the header from the payload
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(format!("truncated {kind} header")));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(format!("{kind} maxval must be 255, got {maxval}")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(samples))
        .ok_or_else(|| Error::format(format!("{kind} dimensions overflow")))?;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(Error::format(format!(
            "{kind} payload is {} bytes, expected {expected} for {width}x{height}",
            payload.len()
        )));
    }
    Ok((NetpbmHeader { width, height }, payload))
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::validation(format!("dimension {v} exceeds u32")))
}

/// Writes `path` through a temporary file in the same directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut fs::File) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    fill(tmp.as_file_mut())?;
    tmp.as_file_mut().flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_prob_map(path: &Path, pm: &ProbMap) -> Result<()> {
    pm.validate()?;
    write_atomic(path, |f| write_prob_map(pm, std::io::BufWriter::new(f)))
}

pub fn load_prob_map(path: &Path) -> Result<ProbMap> {
    read_prob_map(std::io::BufReader::new(fs::File::open(path)?))
}

pub fn save_label_map(path: &Path, lm: &LabelMap) -> Result<()> {
    write_atomic(path, |f| write_label_map(lm, std::io::BufWriter::new(f)))
}

pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    read_label_map(std::io::BufReader::new(fs::File::open(path)?))
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, |f| write_image(img, std::io::BufWriter::new(f)))
}

pub fn load_image(path: &Path) -> Result<Image> {
    read_image(std::io::BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelmap::IGNORE;

    #[test]
    fn smallest_map_is_28_bytes() {
        let pm = ProbMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        write_prob_map(&pm, &mut buf).unwrap();
        assert_eq!(buf.len(), 28);
        assert_eq!(&buf[..4], b"SEGP");
        assert_eq!(f32::from_le_bytes(buf[20..24].try_into().unwrap()), 1.0);
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn uniform_map_round_trips() {
        let pm = ProbMap::uniform(2, 2, 3).unwrap();
        let mut buf = Vec::new();
        write_prob_map(&pm, &mut buf).unwrap();
        assert_eq!(buf.len(), 20 + 4 * 12);
        assert_eq!(read_prob_map(&buf[..]).unwrap(), pm);
    }

    #[test]
    fn write_refuses_unnormalised_map() {
        let pm = ProbMap::from_raw(1, 1, 2, vec![0.25, 0.25]).unwrap();
        let mut buf = Vec::new();
        assert!(matches!(write_prob_map(&pm, &mut buf), Err(Error::Validation(_))));
        assert!(buf.is_empty());
    }

    #[test]
    fn read_rejects_bad_magic_version_and_truncation() {
        let pm = ProbMap::uniform(2, 2, 2).unwrap();
        let mut good = Vec::new();
        write_prob_map(&pm, &mut good).unwrap();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_prob_map(&bad[..]), Err(Error::Format(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(read_prob_map(&bad[..]), Err(Error::Format(_))));

        let mut bad = good.clone();
        bad[8] = 3; // declares 3 rows, payload holds 2
        assert!(matches!(read_prob_map(&bad[..]), Err(Error::Format(_))));

        assert!(matches!(read_prob_map(&good[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn read_reports_normalisation_as_validation() {
        let mut buf = Vec::new();
        write_prob_map(&ProbMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap(), &mut buf).unwrap();
        buf[20..24].copy_from_slice(&0.5f32.to_le_bytes());
        assert!(matches!(read_prob_map(&buf[..]), Err(Error::Validation(_))));
    }

    #[test]
    fn pgm_layout_and_round_trip() {
        let lm = LabelMap::new(2, 2, vec![0, 1, 2, IGNORE]).unwrap();
        let mut buf = Vec::new();
        write_label_map(&lm, &mut buf).unwrap();
        assert_eq!(&buf[..11], b"P5\n2 2\n255\n");
        assert_eq!(&buf[11..], &[0, 1, 2, 255]);
        assert_eq!(read_label_map(&buf[..]).unwrap(), lm);
    }

    #[test]
    fn pgm_rejects_other_variants() {
        assert!(matches!(
            read_label_map(&b"P5\n1 1\n65535\n\0\0"[..]),
            Err(Error::Format(_))
        ));
        assert!(matches!(read_label_map(&b"P2\n1 1\n255\n0"[..]), Err(Error::Format(_))));
        assert!(matches!(read_label_map(&b"P5\n2 2\n255\n\0"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let lm = read_label_map(&b"P5\n# made by hand\n1 2\n255\n\x01\x02"[..]).unwrap();
        assert_eq!((lm.height(), lm.width()), (2, 1));
        assert_eq!(lm.data(), &[1, 2]);
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.pgm");
        save_label_map(&path, &LabelMap::filled(1, 1, 0).unwrap()).unwrap();
        let entries: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(entries.len(), 1);
        assert!(write_atomic(&dir.path().join("c.bin"), |_| Err(Error::format("boom"))).is_err());
        assert!(!dir.path().join("c.bin").exists());
    }
}
