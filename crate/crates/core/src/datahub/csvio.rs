//! Datasets as CSV rows `label,pixel0,pixel1,...` with pixel values in `0..=255`,
//! and cluster assignments as `index,class,cluster`.

use std::path::Path;

use super::cluster::ClusterHierarchy;
use super::dataset::LabeledDataset;
use crate::error::{Error, Result};

pub fn load_csv(path: &Path, image_shape: Vec<usize>, class_count: usize) -> Result<LabeledDataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let per: usize = image_shape.iter().product();
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).from_path(path)?;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != per + 1 {
            return Err(Error::format(path, format!("row {row}: {} fields, expected {}", rec.len(), per + 1)));
        }
        let bad = |what: &str| Error::format(path, format!("row {row}: bad {what}"));
        labels.push(rec[0].trim().parse::<usize>().map_err(|_| bad("label"))?);
        for f in rec.iter().skip(1) {
            let v: f64 = f.trim().parse().map_err(|_| bad("pixel"))?;
            if !(0.0..=255.0).contains(&v) {
                return Err(bad("pixel range"));
            }
            pixels.push(v / 255.0);
        }
    }
    LabeledDataset::new(image_shape, pixels, labels, class_count)
}

pub fn write_csv(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..data.len() {
        let mut row = vec![data.label(i).to_string()];
        row.extend(data.image(i).iter().map(|p| format!("{}", (p.clamp(0.0, 1.0) * 255.0).round())));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `index,class,cluster` rows (global cluster ids) after a `#` provenance line.
pub fn write_assignments(h: &ClusterHierarchy, header: &str, path: &Path) -> Result<()> {
    let mut rows: Vec<(usize, usize, usize)> = Vec::new();
    for (k, members) in h.clusters().iter().enumerate() {
        rows.extend(members.iter().map(|&i| (i, h.class_of(k), k)));
    }
    rows.sort_unstable();
    let mut out = format!("# {header}\nindex,class,cluster\n");
    for (i, l, k) in rows {
        out.push_str(&format!("{i},{l},{k}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_assignments(path: &Path, clusters_per_class: usize) -> Result<ClusterHierarchy> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut triples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |j: usize| -> Result<usize> {
            rec.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::format(path, "malformed assignment row"))
        };
        triples.push((f(0)?, f(1)?, f(2)?));
    }
    let k = triples.iter().map(|t| t.2 + 1).max().unwrap_or(0);
    let mut clusters = vec![Vec::new(); k];
    triples.sort_unstable();
    for (i, l, c) in triples {
        if c / clusters_per_class.max(1) != l {
            return Err(Error::format(path, format!("cluster {c} does not belong to class {l}")));
        }
        clusters[c].push(i);
    }
    ClusterHierarchy::from_clusters(clusters, clusters_per_class)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = LabeledDataset::new(vec![2], vec![0.0, 1.0, 0.2, 0.6], vec![1, 0], 2).unwrap();
        let p = dir.path().join("d.csv");
        write_csv(&d, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "1,0,255\n0,51,153\n");
        assert_eq!(load_csv(&p, vec![2], 2).unwrap(), d);
        assert!(matches!(load_csv(&dir.path().join("x"), vec![2], 2), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn assignments_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = ClusterHierarchy::from_clusters(vec![vec![0, 3], vec![1], vec![2, 4], vec![5]], 2).unwrap();
        let p = dir.path().join("a.csv");
        write_assignments(&h, "seed=1", &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# seed=1\nindex,class,cluster\n0,0,0\n1,0,1\n"));
        assert_eq!(read_assignments(&p, 2).unwrap(), h);
    }
}
