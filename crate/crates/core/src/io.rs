//! File formats: 8-bit index-mask PNGs, vocabulary sidecars and float rasters.
//!
//! A vocabulary sidecar is a JSON object mapping decimal label ids to label
//! strings, e.g. `{"0": "others", "1": "brown dog"}`. Ids must be contiguous
//! from zero.
//!
//! A float raster is a little-endian `u32` width, `u32` height, then
//! `width·height` row-major little-endian `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, IndexMask, LabelId, LabelVocab};
use crate::refine::LogitMap;

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_index_png(path: impl AsRef<Path>) -> Result<IndexMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    IndexMask::new(
        w as usize,
        h as usize,
        gray.into_raw().into_iter().map(LabelId::from).collect(),
    )
}

pub fn write_index_png(path: impl AsRef<Path>, mask: &IndexMask) -> Result<()> {
    let path = path.as_ref();
    let bytes = mask
        .values()
        .iter()
        .map(|&v| {
            u8::try_from(v).map_err(|_| {
                Error::invalid(format!("label id {v} does not fit an 8-bit PNG"))
            })
        })
        .collect::<Result<Vec<u8>>>()?;
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save(path).map_err(|e| image_err(path, e))
}

/// Reads a mask PNG as a binary mask (non-zero is foreground). Also returns
/// the foreground byte value so a refined mask can be written back in the
/// same encoding.
pub fn read_binary_png(path: impl AsRef<Path>) -> Result<(BinaryMask, u8)> {
    let mask = read_index_png(path)?;
    let fg = mask.values().iter().copied().max().unwrap_or(0).max(1) as u8;
    Ok((BinaryMask::from_nonzero(&mask), fg))
}

pub fn write_binary_png(path: impl AsRef<Path>, mask: &BinaryMask, fg: u8) -> Result<()> {
    let path = path.as_ref();
    let bytes = mask.bits().iter().map(|&b| if b { fg } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_rgb8())
}

pub fn write_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn image_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let (w, h) = image::image_dimensions(path).map_err(|e| image_err(path, e))?;
    Ok((w as usize, h as usize))
}

pub fn vocab_from_json(json: &str) -> Result<LabelVocab> {
    let map: BTreeMap<String, String> = serde_json::from_str(json)
        .map_err(|e| Error::InvalidVocab(format!("expected an id → label object: {e}")))?;
    let mut by_id = BTreeMap::new();
    for (k, v) in map {
        let id: usize = k
            .parse()
            .map_err(|_| Error::InvalidVocab(format!("key {k:?} is not a label id")))?;
        if by_id.insert(id, v).is_some() {
            return Err(Error::InvalidVocab(format!("id {id} listed twice")));
        }
    }
    if let Some((i, _)) = by_id.keys().enumerate().find(|(i, id)| i != *id) {
        return Err(Error::InvalidVocab(format!("label ids are not contiguous at {i}")));
    }
    LabelVocab::new(by_id.into_values())
}

pub fn vocab_to_json(vocab: &LabelVocab) -> String {
    // keys in numeric order, which a string-keyed map would not give
    let mut out = String::from("{");
    for (i, label) in vocab.labels().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&format!("\"{i}\": {}", serde_json::to_string(label).unwrap()));
    }
    out.push('}');
    out
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<LabelVocab> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    vocab_from_json(&text)
}

pub fn write_vocab(path: impl AsRef<Path>, vocab: &LabelVocab) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, vocab_to_json(vocab)).map_err(|e| Error::io(path, e))
}

pub fn write_logits(path: impl AsRef<Path>, logits: &LogitMap) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(8 + 4 * logits.values().len());
    buf.extend_from_slice(&(logits.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(logits.height() as u32).to_le_bytes());
    for &v in logits.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_logits(path: impl AsRef<Path>) -> Result<LogitMap> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::invalid(format!("{}: {msg}", path.display()));
    if buf.len() < 8 {
        return Err(bad("truncated raster header"));
    }
    let w = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    if buf.len() != 8 + 4 * w * h {
        return Err(bad("raster size does not match header"));
    }
    let values = buf[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    LogitMap::new(w, h, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_json_round_trip() {
        let v = LabelVocab::from_labels(["sky", "brown dog", "sea \"x\""]).unwrap();
        let json = vocab_to_json(&v);
        assert_eq!(vocab_from_json(&json).unwrap(), v);
    }

    #[test]
    fn vocab_json_errors() {
        assert!(vocab_from_json(r#"{"0": "others", "2": "sky"}"#).is_err());
        assert!(vocab_from_json(r#"{"0": "others", "1": "a|b"}"#).is_err());
        assert!(vocab_from_json(r#"{"x": "others"}"#).is_err());
        assert!(vocab_from_json(r#"["others"]"#).is_err());
        assert!(vocab_from_json(r#"{"0": "sky"}"#).is_err());
        let v = vocab_from_json(r#"{"1": "sky", "0": "others", "10": "a", "2": "b", "3": "c", "4": "d", "5": "e", "6": "f", "7": "g", "8": "h", "9": "i"}"#).unwrap();
        assert_eq!(v.label(10), Some("a"));
    }

    #[test]
    fn png_and_raster_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = IndexMask::from_fn(5, 3, |x, y| (x + 2 * y) as LabelId).unwrap();
        let p = dir.path().join("m.png");
        write_index_png(&p, &m).unwrap();
        assert_eq!(read_index_png(&p).unwrap(), m);
        assert_eq!(image_dimensions(&p).unwrap(), (5, 3));

        let big = IndexMask::filled(2, 2, 300).unwrap();
        assert!(write_index_png(&p, &big).is_err());

        let b = BinaryMask::from_fn(4, 4, |x, _| x > 1).unwrap();
        write_binary_png(&p, &b, 255).unwrap();
        let (back, fg) = read_binary_png(&p).unwrap();
        assert_eq!((back, fg), (b, 255));

        let l = LogitMap::new(3, 2, vec![0.5, -1.25, 6.0, 0.0, 2.0, -7.5]).unwrap();
        let p = dir.path().join("l.f32");
        write_logits(&p, &l).unwrap();
        assert_eq!(read_logits(&p).unwrap(), l);
        std::fs::write(&p, [1, 0, 0, 0]).unwrap();
        assert!(read_logits(&p).is_err());
    }
}
