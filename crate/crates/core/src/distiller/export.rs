//! Binary PGM (grayscale) and PPM (RGB) export of synthetic samples.

use std::path::{Path, PathBuf};

use super::Synset;
use crate::error::{Error, Result};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One file per synthetic sample named `class<l>_cluster<c>.pgm` (`.ppm` for
/// three channels), where `c` counts clusters within class `l`. With more than
/// one image per cluster, `_<i>` is appended to the stem.
pub fn export_synset_images(synset: &Synset, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let (channels, h, w) = match synset.image_shape() {
        [c, h, w] if *c == 1 || *c == 3 => (*c, *h, *w),
        [h, w] => (1, *h, *w),
        [d] => (1, 1, *d),
        other => return Err(Error::InvalidArgument(format!("cannot export images of shape {other:?}"))),
    };
    let per = synset.image_len();
    let mut within = vec![0usize; synset.class_count()];
    let mut written = Vec::with_capacity(synset.len());
    for k in 0..synset.num_clusters() {
        let l = synset.class_of(k);
        let c = within[l];
        within[l] += 1;
        for (i, img) in synset.cluster_pixels(k).chunks(per).enumerate() {
            let ext = if channels == 3 { "ppm" } else { "pgm" };
            let stem = if synset.ipc() > 1 {
                format!("class{l}_cluster{c}_{i}")
            } else {
                format!("class{l}_cluster{c}")
            };
            let path = dir.join(format!("{stem}.{ext}"));
            let magic = if channels == 3 { "P6" } else { "P5" };
            let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            if channels == 3 {
                let plane = h * w;
                for p in 0..plane {
                    bytes.extend((0..3).map(|ch| quantize(img[ch * plane + p])));
                }
            } else {
                bytes.extend(img.iter().map(|&v| quantize(v)));
            }
            std::fs::write(&path, bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Reads a binary PGM/PPM back as `(channels, height, width, values in [0,1])`,
/// channel-major.
pub fn read_pnm(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::format(path, format!("unsupported magic {m}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, "bad header number"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    let n = channels * w * h;
    let raw = bytes.get(pos..pos + n).ok_or(Error::Truncated {
        path: path.to_path_buf(),
        expected: pos + n,
        found: bytes.len(),
    })?;
    let plane = w * h;
    let mut out = vec![0.0; n];
    for (j, &b) in raw.iter().enumerate() {
        let (p, ch) = (j / channels, j % channels);
        out[ch * plane + p] = b as f64 / max as f64;
    }
    Ok((channels, h, w, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_names_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<f64> = (0..4 * 6).map(|v| (v as f64 * 0.123).fract()).collect();
        let s = Synset::new(vec![1, 2, 3], 1, px.clone(), vec![0, 0, 1, 1], 2).unwrap();
        let files = export_synset_images(&s, dir.path()).unwrap();
        let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["class0_cluster0.pgm", "class0_cluster1.pgm", "class1_cluster0.pgm", "class1_cluster1.pgm"]);
        for (k, f) in files.iter().enumerate() {
            let (c, h, w, v) = read_pnm(f).unwrap();
            assert_eq!((c, h, w), (1, 2, 3));
            for (a, b) in v.iter().zip(s.cluster_pixels(k)) {
                assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn rgb_and_multi_image_names() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<f64> = (0..2 * 12).map(|v| v as f64 / 24.0).collect();
        let s = Synset::new(vec![3, 2, 2], 2, px, vec![1, 1], 2).unwrap();
        let files = export_synset_images(&s, dir.path()).unwrap();
        assert!(files[1].ends_with("class1_cluster0_1.ppm"));
        let (c, _, _, v) = read_pnm(&files[1]).unwrap();
        assert_eq!(c, 3);
        for (a, b) in v.iter().zip(&s.cluster_pixels(0)[12..]) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }
}
