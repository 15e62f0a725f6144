use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{EvalSummary, Stamp, Timing};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct ScoreRow {
    #[allow(dead_code)]
    cluster_id: usize,
    class: usize,
    score_dist1: f64,
    score_dist2: f64,
    score_dist3: f64,
}

#[derive(Deserialize)]
struct AvgRow {
    objective: String,
    ddm: f64,
    random: f64,
}

#[derive(Deserialize)]
struct SweepRow {
    percent: f64,
    deleted: usize,
    ddm_acc: f64,
    random_acc: f64,
}

fn rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn complete(dir: &Path) -> Result<Option<Stamp>> {
    Ok(Stamp::read(dir)?.filter(|s| s.complete))
}

/// Summarises whatever stage outputs exist under `out` into `out/report/`.
/// Needs at least a finished evaluation. Reads artifacts only, so reruns over
/// unchanged inputs are byte-identical.
pub fn report(out: &Path) -> Result<()> {
    let eval_dir = out.join("evaluate");
    let eval = complete(&eval_dir)?.ok_or_else(|| Error::MissingArtifact(eval_dir.join("stamp.json")))?;
    let oracle = complete(&out.join("oracle"))?;
    let diag = complete(&out.join("diagnose"))?;

    let mut header = format!("evaluate_hash={} seed={}", eval.config_hash, eval.seed);
    if let Some(s) = &oracle {
        let _ = write!(header, " oracle_hash={}", s.config_hash);
    }
    if let Some(s) = &diag {
        let _ = write!(header, " diagnose_hash={}", s.config_hash);
    }
    let dir = out.join("report");
    std::fs::create_dir_all(&dir)?;
    let mut text = format!("# {header}\n");

    let summary: EvalSummary = json(&eval_dir.join("summary.json"))?;
    let _ = writeln!(
        text,
        "clusters: {}\nqueries: {}\ntarget accuracy: {:.2}%\naccuracy after fine-tuning on the full synset: {:.2}%\nfine-tune runs: {}{}",
        summary.clusters,
        summary.queries,
        100.0 * summary.theta_tau_accuracy,
        100.0 * summary.full_synset_accuracy,
        summary.finetune_runs,
        if summary.hierarchical { " (hierarchical)" } else { "" }
    );

    let scores: Vec<ScoreRow> = rows(&eval_dir.join("attribution.csv"))?;
    let classes = scores.iter().map(|r| r.class + 1).max().unwrap_or(0);
    let mut by_class = vec![[0.0; 3]; classes];
    for r in &scores {
        by_class[r.class][0] += r.score_dist1;
        by_class[r.class][1] += r.score_dist2;
        by_class[r.class][2] += r.score_dist3;
    }
    let mut s = format!("# {header}\nclass,score_dist1,score_dist2,score_dist3\n");
    for (l, v) in by_class.iter().enumerate() {
        let _ = writeln!(s, "{l},{},{},{}", v[0], v[1], v[2]);
    }
    std::fs::write(dir.join("attribution_by_class.csv"), s)?;

    if oracle.is_some() {
        let avg: Vec<AvgRow> = rows(&out.join("oracle/avg_dist.csv"))?;
        let mut s = format!("# {header}\nobjective,ddm_x100,random_x100,ratio\n");
        let _ = writeln!(text, "\nAvg_dist (x100)\n{:<8}{:>10}{:>10}{:>8}", "", "ddm", "random", "ratio");
        for r in &avg {
            let ratio = r.ddm / r.random;
            let _ = writeln!(s, "{},{},{},{ratio}", r.objective, 100.0 * r.ddm, 100.0 * r.random);
            let _ = writeln!(
                text,
                "{:<8}{:>10.3}{:>10.3}{:>8.2}",
                r.objective,
                100.0 * r.ddm,
                100.0 * r.random,
                ratio
            );
        }
        std::fs::write(dir.join("avg_dist.csv"), s)?;

        let ft: Timing = json(&eval_dir.join("timing.json"))?;
        let ex: Timing = json(&out.join("oracle/timing.json"))?;
        let speedup = ex.seconds_per_deletion / ft.seconds_per_deletion;
        let s = format!(
            "# {header}\nmethod,seconds_per_deletion,runs\nsynset_finetune,{},{}\nexact_retrain,{},{}\nspeedup,{speedup},\n",
            ft.seconds_per_deletion, ft.runs, ex.seconds_per_deletion, ex.runs
        );
        std::fs::write(dir.join("timing.csv"), s)?;
        let _ = writeln!(
            text,
            "\nper-deletion wall time: fine-tune {:.4}s, exact retrain {:.4}s, speedup {speedup:.1}x",
            ft.seconds_per_deletion, ex.seconds_per_deletion
        );
    }

    if diag.is_some() {
        let sweep: Vec<SweepRow> = rows(&out.join("diagnose/quality.csv"))?;
        let mut s = format!("# {header}\npercent,deleted,ddm_acc,random_acc\n");
        let _ = writeln!(text, "\nretrained accuracy after removing low-quality clusters");
        let _ = writeln!(text, "{:>8}{:>9}{:>9}{:>9}", "percent", "deleted", "ddm", "random");
        for r in &sweep {
            let _ = writeln!(s, "{},{},{},{}", r.percent, r.deleted, r.ddm_acc, r.random_acc);
            let _ = writeln!(
                text,
                "{:>8}{:>9}{:>9.2}{:>9.2}",
                format!("{}%", r.percent),
                r.deleted,
                r.ddm_acc,
                r.random_acc
            );
        }
        std::fs::write(dir.join("sweep.csv"), s)?;
    }
    std::fs::write(dir.join("summary.txt"), text)?;
    Ok(())
}
