//! IDX image/label files (the MNIST distribution format), optionally gzipped.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: buf.len(),
        })
}

/// Header dims and payload of one IDX file.
fn parse(buf: &[u8], path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let found = be_u32(buf, 0, path)?;
    if found != magic {
        return Err(Error::MagicMismatch {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|i| be_u32(buf, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let need = start + dims.iter().product::<usize>();
    if buf.len() < need {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: need,
            found: buf.len(),
        });
    }
    Ok((dims, buf[start..need].to_vec()))
}

/// Reads an IDX image file and its label file. Pixels are scaled to `[0, 1]`,
/// the class count is `max(label) + 1` (at least 2).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (idims, pixels) = parse(&read_maybe_gz(images_path)?, images_path, IMAGES_MAGIC)?;
    let (ldims, labels) = parse(&read_maybe_gz(labels_path)?, labels_path, LABELS_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(Error::CountMismatch {
            images: idims[0],
            labels: ldims[0],
        });
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    LabeledDataset::new(
        vec![1, idims[1], idims[2]],
        pixels.into_iter().map(|p| p as f64 / 255.0).collect(),
        labels,
        classes,
    )
}

/// Writes `data` as an uncompressed IDX pair. Pixels are quantized to `u8`.
pub fn write_idx(data: &LabeledDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let shape = data.image_shape();
    let (h, w) = match shape {
        [h, w] | [1, h, w] => (*h, *w),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "IDX export needs single-channel images, got shape {shape:?}"
            )))
        }
    };
    let n = data.len() as u32;
    let mut img = Vec::with_capacity(16 + data.pixels().len());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [n, h as u32, w as u32] {
        img.extend_from_slice(&d.to_be_bytes());
    }
    img.extend(data.pixels().iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    for &l in data.labels() {
        lab.push(u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit a byte")))?);
    }
    std::fs::write(images_path, img)?;
    std::fs::write(labels_path, lab)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    fn pair(dir: &Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let (i, l) = (dir.join("img"), dir.join("lab"));
        std::fs::write(&i, images).unwrap();
        std::fs::write(&l, labels).unwrap();
        (i, l)
    }

    #[test]
    fn parses_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGES_MAGIC, &[2, 2, 2]);
        img.extend_from_slice(&[0, 255, 51, 102, 1, 2, 3, 4]);
        let mut lab = header(LABELS_MAGIC, &[2]);
        lab.extend_from_slice(&[3, 0]);
        let (i, l) = pair(dir.path(), &img, &lab);
        let d = load_idx(&i, &l).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.image_shape(), &[1, 2, 2]);
        assert_eq!(d.class_count(), 4);
        assert_eq!(&d.image(0)[..3], &[0.0, 1.0, 0.2]);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGES_MAGIC, &[2, 1, 1]);
        img.extend_from_slice(&[0, 1]);
        let mut lab = header(LABELS_MAGIC, &[3]);
        lab.extend_from_slice(&[0, 1, 1]);
        let (i, l) = pair(dir.path(), &img, &lab);
        assert!(matches!(load_idx(&i, &l), Err(Error::CountMismatch { images: 2, labels: 3 })));

        let (i, l) = pair(dir.path(), &img[..img.len() - 1], &lab);
        assert!(matches!(load_idx(&i, &l), Err(Error::Truncated { .. })));

        let (i, l) = pair(dir.path(), &lab, &lab);
        assert!(matches!(
            load_idx(&i, &l),
            Err(Error::MagicMismatch { expected: IMAGES_MAGIC, found: LABELS_MAGIC, .. })
        ));
        let err = load_idx(&dir.path().join("nope"), &l).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn gzip_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = LabeledDataset::new(vec![1, 1, 3], vec![0.0, 0.5, 1.0, 0.2, 0.4, 0.6], vec![1, 0], 2).unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&d, &i, &l).unwrap();
        let gz = dir.path().join("i.gz");
        let mut enc = flate2::write::GzEncoder::new(std::fs::File::create(&gz).unwrap(), flate2::Compression::fast());
        enc.write_all(&std::fs::read(&i).unwrap()).unwrap();
        enc.finish().unwrap();
        let back = load_idx(&gz, &l).unwrap();
        assert_eq!(back.labels(), d.labels());
        for (a, b) in back.pixels().iter().zip(d.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
