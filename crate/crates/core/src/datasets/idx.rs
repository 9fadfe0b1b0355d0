//! IDX reader (the MNIST/Fashion-MNIST file format), gzip optional.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use super::LabeledSample;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Images as rows of pixels scaled to `[0, 1]`, plus `(rows, cols)`.
pub fn read_idx_images(path: &Path) -> Result<(Vec<Vec<f32>>, usize, usize)> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(path, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let size = rows * cols;
    let payload = &bytes[16..];
    if payload.len() < n * size {
        return Err(Error::format(
            path,
            format!("truncated payload: {} bytes for {n} images of {size}", payload.len()),
        ));
    }
    let images = payload[..n * size]
        .chunks_exact(size.max(1))
        .take(n)
        .map(|img| img.iter().map(|&p| p as f32 / 255.0).collect())
        .collect();
    Ok((images, rows, cols))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(path, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::format(
            path,
            format!("truncated payload: {} labels for {n}", payload.len()),
        ));
    }
    Ok(payload[..n].to_vec())
}

/// Paired image/label files as source-domain samples.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<LabeledSample>> {
    let (images, _, _) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::format(
            images_path,
            format!("{} images but {} labels", images.len(), labels.len()),
        ));
    }
    Ok(images
        .into_iter()
        .zip(labels)
        .map(|(x, l)| LabeledSample::new(x, Some(l as usize), 0))
        .collect())
}

/// Encode images and labels as IDX, for fixtures and export.
pub fn write_idx(images: &[Vec<u8>], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    images.iter().for_each(|i| img.extend_from_slice(i));
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use flate2::write::GzEncoder;
    use flate2::Compression;

    use super::*;

    #[test]
    fn reads_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let images = vec![vec![0u8, 255, 128, 1], vec![255u8; 4], vec![0u8; 4]];
        let (img, lab) = write_idx(&images, 2, 2, &[3, 9, 0]);
        std::fs::write(dir.path().join("i"), &img).unwrap();
        std::fs::write(dir.path().join("l"), &lab).unwrap();
        let s = load_idx(&dir.path().join("i"), &dir.path().join("l")).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].x, vec![0.0, 1.0, 128.0 / 255.0, 1.0 / 255.0]);
        assert_eq!(s[1].label, Some(9));

        let mut gz = GzEncoder::new(Vec::new(), Compression::default());
        gz.write_all(&img).unwrap();
        std::fs::write(dir.path().join("i.gz"), gz.finish().unwrap()).unwrap();
        let z = load_idx(&dir.path().join("i.gz"), &dir.path().join("l")).unwrap();
        assert_eq!(z, s);
    }

    #[test]
    fn empty_file_is_empty_set() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx(&[], 28, 28, &[]);
        std::fs::write(dir.path().join("i"), &img).unwrap();
        std::fs::write(dir.path().join("l"), &lab).unwrap();
        assert!(load_idx(&dir.path().join("i"), &dir.path().join("l")).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_magic_truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx(&[vec![1u8; 4], vec![2u8; 4]], 2, 2, &[1, 2]);
        let p = |n: &str| dir.path().join(n);
        std::fs::write(p("i"), &img).unwrap();
        std::fs::write(p("l"), &lab).unwrap();
        // swapped files: each has the other's magic
        assert!(matches!(load_idx(&p("l"), &p("i")), Err(Error::Format { .. })));
        std::fs::write(p("short"), &img[..img.len() - 1]).unwrap();
        assert!(matches!(load_idx(&p("short"), &p("l")), Err(Error::Format { .. })));
        let (_, one) = write_idx(&[], 2, 2, &[1]);
        std::fs::write(p("one"), &one).unwrap();
        assert!(matches!(load_idx(&p("i"), &p("one")), Err(Error::Format { .. })));
        assert!(matches!(load_idx(&p("missing"), &p("l")), Err(Error::Io { .. })));
    }
}
