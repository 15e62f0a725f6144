use std::io::Write;
use std::path::Path;

use super::fit::AttributionModel;
use crate::error::Result;

/// Writes one row per cluster: `cluster_id,class,score_dist1,score_dist2,score_dist3`.
/// `scores` holds the three columns in that order; `header` goes on a leading `#` line.
pub fn write_scores_csv(path: &Path, header: &str, per_class: usize, scores: [&[f64]; 3]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# {header}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["cluster_id", "class", "score_dist1", "score_dist2", "score_dist3"])?;
    for k in 0..scores[0].len() {
        w.write_record([
            k.to_string(),
            (k / per_class.max(1)).to_string(),
            scores[0][k].to_string(),
            scores[1][k].to_string(),
            scores[2][k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `W` as `K` rows `cluster_<k>` and a final `bias` row.
pub fn write_weights_csv(path: &Path, header: &str, model: &AttributionModel) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# {header}")?;
    let mut w = csv::Writer::from_writer(f);
    let mut head = vec!["row".to_string()];
    head.extend((0..model.num_outputs()).map(|j| format!("out_{j}")));
    w.write_record(&head)?;
    for (k, row) in model.w.iter().enumerate() {
        let mut r = vec![format!("cluster_{k}")];
        r.extend(row.iter().map(f64::to_string));
        w.write_record(&r)?;
    }
    let mut r = vec!["bias".to_string()];
    r.extend(model.b.iter().map(f64::to_string));
    w.write_record(&r)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributor::fit::FitDistance;

    #[test]
    fn weights_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        let m = AttributionModel {
            w: vec![vec![0.1, -0.2], vec![1.0 / 3.0, 2.0]],
            b: vec![0.5, 0.25],
            fit_residual: 0.0,
            objective: FitDistance::L2,
        };
        write_weights_csv(&p, "config_hash=ab seed=0", &m).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# config_hash=ab seed=0\n"));
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&p).unwrap();
        let rows: Vec<Vec<f64>> = r
            .records()
            .map(|rec| rec.unwrap().iter().skip(1).map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows, vec![m.w[0].clone(), m.w[1].clone(), m.b.clone()]);
    }

    #[test]
    fn scores_csv_has_class_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = [0.0, 1.0, 2.0, 3.0];
        write_scores_csv(&p, "h", 2, [&s, &s, &s]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("3,1,3,3,3"));
    }
}
