//! End-to-end orchestration: config loading, stage caching and artifact layout.
//!
//! Every stage owns one directory under the output root and finishes by writing
//! `stamp.json` with a hash over the config sections it depends on. A complete
//! stamp with a matching hash makes the stage a cache hit; a different hash is
//! refused unless `force` is set.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub use config::{
    AttributionConfig, ClusteringConfig, CorruptionConfig, DatasetConfig, DiagnosticsConfig, DistillSection,
    FeatureSource, ModelConfig, PipelineConfig, TrainSection, CONFIG_VERSION,
};
pub use report::report;

use crate::attributor::{
    avg_dist, influence_scores, locate_hierarchical, sample_masks, write_scores_csv, write_weights_csv, DistSample,
    Located, ObjectiveKind, Reference, Unlearner,
};
use crate::datahub::{
    cluster, embed, load_csv, load_idx, make_blobs, read_assignments, write_assignments, ClusterHierarchy, Extractor,
    LabeledDataset,
};
use crate::diagnostics::{
    deletion_sweep, flip_labels, inject_noise, quality_attribution, rank_quality, unlearn_fidelity, Corruption,
    SweepConfig,
};
use crate::diffcore::Tensor;
use crate::distiller::{distill, export_synset_images, init_synset, Mode, Synset};
use crate::error::{Error, Result};
use crate::nets::{argmax, read_checkpoint, write_checkpoint, Model, ParamVector};
use crate::pool::parallel_map;
use crate::rng;
use crate::trainer::{accuracy, retrain_without, train, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Cluster,
    Train,
    Distill,
    Evaluate,
    Oracle,
    Diagnose,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Cluster,
        Stage::Train,
        Stage::Distill,
        Stage::Evaluate,
        Stage::Oracle,
        Stage::Diagnose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Cluster => "cluster",
            Stage::Train => "train",
            Stage::Distill => "distill",
            Stage::Evaluate => "evaluate",
            Stage::Oracle => "oracle",
            Stage::Diagnose => "diagnose",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub force: bool,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
    pub complete: bool,
}

impl Stamp {
    pub fn read(dir: &Path) -> Result<Option<Stamp>> {
        let p = dir.join("stamp.json");
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&std::fs::read(p)?)?))
    }

    pub fn header(&self) -> String {
        format!("config_hash={} seed={}", self.config_hash, self.seed)
    }
}

/// Whether a stage did work or reused its artifacts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Computed,
    Cached,
}

/// Train, validation and evaluation splits after corruption.
pub struct Data {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub val: Option<LabeledDataset>,
    pub corruption: Option<Corruption>,
}

/// Exit code contract: 2 input error, 3 missing artifact, 4 numeric failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingArtifact(_) | Error::MissingOracle(_) => 3,
        Error::NumericFailure(_) | Error::Diverged { .. } | Error::DegenerateSegment(_) | Error::RankDeficient { .. } => 4,
        _ => 2,
    }
}

fn digest(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("json serializes")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn need(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

#[derive(Serialize, Deserialize)]
struct Timing {
    seconds_per_deletion: f64,
    runs: usize,
}

#[derive(Serialize, Deserialize)]
struct EvalSummary {
    clusters: usize,
    queries: usize,
    theta_tau_accuracy: f64,
    full_synset_accuracy: f64,
    finetune_runs: usize,
    hierarchical: bool,
}

/// One located-cluster row of `evaluate/located.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocatedRow {
    pub query: usize,
    pub label: usize,
    pub objective: String,
    pub ddm_cluster: usize,
    pub ddm_class: usize,
    pub random_cluster: usize,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub opts: RunOptions,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, opts: RunOptions) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, opts })
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.opts.out.join(stage.name())
    }

    /// Hash over what `stage` (transitively) depends on.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let c = &self.cfg;
        let v = match stage {
            Stage::Cluster => json!({
                "v": c.version, "seed": c.seed, "dataset": c.dataset, "corruption": c.corruption,
                "clustering": c.clustering,
                "model": (c.clustering.features == FeatureSource::InitModel).then_some(&c.model),
                "validation": c.diagnostics.validation,
            }),
            Stage::Train => json!({
                "v": c.version, "seed": c.seed, "dataset": c.dataset, "corruption": c.corruption,
                "model": c.model, "train": c.train, "validation": c.diagnostics.validation,
            }),
            Stage::Distill => json!({
                "cluster": self.stage_hash(Stage::Cluster), "train": self.stage_hash(Stage::Train),
                "distill": c.distill, "hierarchical": c.attribution.hierarchical,
            }),
            Stage::Evaluate => json!({
                "distill": self.stage_hash(Stage::Distill), "finetune": c.finetune_config(),
                "attribution": c.attribution,
            }),
            Stage::Oracle => json!({
                "evaluate": self.stage_hash(Stage::Evaluate),
                "fidelity_clusters": c.diagnostics.fidelity_clusters,
            }),
            Stage::Diagnose => json!({
                "distill": self.stage_hash(Stage::Distill), "finetune": c.finetune_config(),
                "masks": c.attribution.masks, "fit": c.attribution.fit, "diagnostics": c.diagnostics,
            }),
        };
        digest(&v)
    }

    fn stamp(&self, stage: Stage, complete: bool) -> Stamp {
        Stamp {
            config_hash: self.stage_hash(stage),
            seed: self.cfg.seed,
            complete,
        }
    }

    fn header(&self, stage: Stage) -> String {
        self.stamp(stage, true).header()
    }

    /// `None` on a cache hit, otherwise a ready (possibly partially filled) directory.
    fn begin(&self, stage: Stage) -> Result<Option<PathBuf>> {
        let dir = self.dir(stage);
        let want = self.stamp(stage, false);
        match Stamp::read(&dir)? {
            Some(s) if s.config_hash == want.config_hash && s.seed == want.seed => {
                if s.complete && !self.opts.force {
                    return Ok(None);
                }
                if self.opts.force {
                    std::fs::remove_dir_all(&dir)?;
                }
            }
            Some(s) => {
                if !self.opts.force {
                    return Err(Error::ConfigHashMismatch {
                        path: dir,
                        expected: want.config_hash,
                        found: s.config_hash,
                    });
                }
                std::fs::remove_dir_all(&dir)?;
            }
            None if dir.exists() && self.opts.force => std::fs::remove_dir_all(&dir)?,
            None => {}
        }
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("stamp.json"), serde_json::to_vec_pretty(&want)?)?;
        Ok(Some(dir))
    }

    fn finish(&self, stage: Stage) -> Result<Outcome> {
        let s = self.stamp(stage, true);
        std::fs::write(self.dir(stage).join("stamp.json"), serde_json::to_vec_pretty(&s)?)?;
        Ok(Outcome::Computed)
    }

    /// Checks that an upstream stage finished under the current config.
    fn upstream(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.dir(stage);
        let stamp = match Stamp::read(&dir)? {
            Some(s) if s.complete => s,
            _ => return Err(Error::MissingArtifact(dir.join("stamp.json"))),
        };
        let expected = self.stage_hash(stage);
        if stamp.config_hash != expected {
            return Err(Error::ConfigHashMismatch {
                path: dir,
                expected,
                found: stamp.config_hash,
            });
        }
        Ok(dir)
    }

    pub fn run(&self, stage: Stage) -> Result<Outcome> {
        match stage {
            Stage::Cluster => self.cluster(),
            Stage::Train => self.train(),
            Stage::Distill => self.distill(),
            Stage::Evaluate => self.evaluate(),
            Stage::Oracle => self.oracle(),
            Stage::Diagnose => self.diagnose(),
        }
    }

    /// Runs every stage in order, then the report.
    pub fn run_all(&self) -> Result<()> {
        for s in Stage::ALL {
            if s == Stage::Diagnose && self.cfg.diagnostics.validation == 0 {
                continue;
            }
            self.run(s)?;
        }
        report(&self.opts.out)
    }

    pub fn load_data(&self) -> Result<Data> {
        let seed = self.cfg.seed;
        let inputs: Vec<&PathBuf> = match &self.cfg.dataset {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => vec![train_images, train_labels, test_images, test_labels],
            DatasetConfig::Csv { train, test, .. } => vec![train, test],
            DatasetConfig::Blobs { .. } => vec![],
        };
        if let Some(p) = inputs.into_iter().find(|p| !p.exists()) {
            return Err(Error::InvalidArgument(format!("input file {} does not exist", p.display())));
        }
        let (train, test) = match &self.cfg.dataset {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (
                load_idx(train_images, train_labels)?,
                load_idx(test_images, test_labels)?,
            ),
            DatasetConfig::Csv {
                train,
                test,
                image_shape,
                class_count,
            } => (
                load_csv(train, image_shape.clone(), *class_count)?,
                load_csv(test, image_shape.clone(), *class_count)?,
            ),
            DatasetConfig::Blobs {
                classes,
                per_class,
                test_per_class,
                dim,
                separation,
            } => {
                make_blobs(*classes, per_class + test_per_class, *dim, *separation, seed)?.stratified_split(*per_class)?
            }
        };
        let (train, corruption) = match self.cfg.corruption {
            None => (train, None),
            Some(CorruptionConfig::LabelFlip { fraction }) => {
                let (d, c) = flip_labels(&train, fraction, seed)?;
                (d, Some(c))
            }
            Some(CorruptionConfig::PixelNoise { fraction, norm }) => {
                let (d, c) = inject_noise(&train, fraction, norm, seed)?;
                (d, Some(c))
            }
        };
        let nv = self.cfg.diagnostics.validation;
        let (test, val) = if nv == 0 {
            (test, None)
        } else if nv >= test.len() {
            return Err(Error::Config(format!(
                "diagnostics.validation = {nv} leaves no test samples out of {}",
                test.len()
            )));
        } else {
            let (t, v) = test.split_at(test.len() - nv)?;
            (t, Some(v))
        };
        Ok(Data {
            train,
            test,
            val,
            corruption,
        })
    }

    pub fn model(&self, data: &LabeledDataset) -> Result<Model> {
        Model::new(self.cfg.model_spec(data.image_shape().to_vec(), data.class_count()))
    }

    fn hierarchy(&self) -> Result<ClusterHierarchy> {
        let dir = self.upstream(Stage::Cluster)?;
        read_assignments(&need(dir.join("assignments.csv"))?, self.cfg.clustering.per_class)
    }

    fn trajectory(&self) -> Result<Trajectory> {
        let dir = self.upstream(Stage::Train)?;
        Trajectory::load(&need(dir.join("traj"))?)
    }

    fn synset(&self, name: &str) -> Result<Synset> {
        let dir = self.upstream(Stage::Distill)?;
        Synset::load(&need(dir.join(name))?)
    }

    pub fn cluster(&self) -> Result<Outcome> {
        let Some(dir) = self.begin(Stage::Cluster)? else {
            return Ok(Outcome::Cached);
        };
        let data = self.load_data()?;
        let features = match self.cfg.clustering.features {
            FeatureSource::RawPixels => embed(&data.train, Extractor::RawPixels)?,
            FeatureSource::InitModel => {
                let m = self.model(&data.train)?;
                let p = m.init();
                embed(&data.train, Extractor::ModelFeatures { model: &m, params: &p })?
            }
        };
        let h = cluster(&data.train, &features, self.cfg.clustering.per_class, self.cfg.seed, self.opts.workers)?;
        let header = self.header(Stage::Cluster);
        write_assignments(&h, &header, &dir.join("assignments.csv"))?;
        let mut s = format!("# {header}\ncluster,class,size\n");
        for k in 0..h.num_clusters() {
            let _ = writeln!(s, "{k},{},{}", h.class_of(k), h.cluster(k).len());
        }
        write_text(&dir.join("summary.csv"), &s)?;
        if let Some(c) = &data.corruption {
            let mut s = format!("# {header}\nindex,cluster\n");
            let owner = cluster_of_samples(&h, data.train.len());
            for (i, _) in c.mask.iter().enumerate().filter(|(_, &m)| m) {
                let _ = writeln!(s, "{i},{}", owner[i]);
            }
            write_text(&dir.join("corrupted.csv"), &s)?;
        }
        self.finish(Stage::Cluster)
    }

    pub fn train(&self) -> Result<Outcome> {
        let Some(dir) = self.begin(Stage::Train)? else {
            return Ok(Outcome::Cached);
        };
        let data = self.load_data()?;
        let m = self.model(&data.train)?;
        let traj = train(&m, &data.train, &self.cfg.train_config())?;
        traj.save(&dir.join("traj"))?;
        let acc = accuracy(&m, traj.last(), &data.test)?;
        let mut s = format!("# {}\nepoch,loss\n", self.header(Stage::Train));
        for (e, l) in traj.epoch_loss.iter().enumerate() {
            let _ = writeln!(s, "{},{l}", e + 1);
        }
        write_text(&dir.join("loss.csv"), &s)?;
        let summary = json!({
            "config_hash": self.stage_hash(Stage::Train), "seed": self.cfg.seed,
            "test_accuracy": acc, "epochs": traj.epochs(), "params": m.num_params(),
        });
        std::fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
        self.finish(Stage::Train)
    }

    pub fn distill(&self) -> Result<Outcome> {
        let h = self.hierarchy()?;
        let traj = self.trajectory()?;
        let Some(dir) = self.begin(Stage::Distill)? else {
            return Ok(Outcome::Cached);
        };
        let data = self.load_data()?;
        let m = self.model(&data.train)?;
        let dcfg = self.cfg.distill_config();
        let header = self.header(Stage::Distill);
        let mut runs = vec![("synset.bin", "log.csv", "images", h.clone())];
        if self.cfg.attribution.hierarchical {
            runs.push(("class_synset.bin", "class_log.csv", "class_images", h.class_level()));
        }
        for (file, log_file, images, hier) in runs {
            let init = init_synset(&data.train, &hier, dcfg.ipc, self.cfg.seed)?;
            let (syn, log) = distill(&m, &traj, &data.train, &hier, init, &dcfg, self.opts.workers)?;
            syn.save(&dir.join(file))?;
            export_synset_images(&syn, &dir.join(images))?;
            let mut s = format!("# {header}\niteration,start_epoch,loss,degenerate\n");
            for (i, r) in log.iter().enumerate() {
                let _ = writeln!(s, "{i},{},{},{}", r.t, r.loss, r.degenerate);
            }
            write_text(&dir.join(log_file), &s)?;
        }
        self.finish(Stage::Distill)
    }

    fn unlearner<'a>(&self, m: &'a Model, traj: &'a Trajectory) -> Unlearner<'a> {
        let ft = self.cfg.finetune_config();
        let u = match self.cfg.distill.mode {
            Mode::Reverse => Unlearner::reverse(m, traj.last(), ft),
            Mode::Forward => Unlearner::forward(m, traj.initial(), traj.last(), ft),
        };
        u.with_workers(self.opts.workers).with_fit(self.cfg.attribution.fit)
    }

    pub fn evaluate(&self) -> Result<Outcome> {
        let h = self.hierarchy()?;
        let traj = self.trajectory()?;
        let synset = self.synset("synset.bin")?;
        let class_synset = if self.cfg.attribution.hierarchical {
            Some(self.synset("class_synset.bin")?)
        } else {
            None
        };
        let Some(dir) = self.begin(Stage::Evaluate)? else {
            return Ok(Outcome::Cached);
        };
        let data = self.load_data()?;
        let m = self.model(&data.train)?;
        let u = self.unlearner(&m, &traj);
        let k = h.num_clusters();
        let nq = self.cfg.attribution.queries;
        if nq > data.test.len() {
            return Err(Error::Config(format!("{nq} queries requested, test split holds {}", data.test.len())));
        }
        let qidx: Vec<usize> = (0..nq).collect();
        let queries = data.test.batch(&qidx);
        let nmasks = self.cfg.attribution.masks.unwrap_or(k);
        let masks = sample_masks(k, nmasks, self.cfg.seed)?;
        let clusters: Vec<usize> = (0..k).collect();
        let am = u.attribution(&synset, &clusters, &masks, &queries.inputs)?;
        let original = m.predict(traj.last(), &queries.inputs)?;
        let l = m.num_classes();

        let mut picks: BTreeMap<ObjectiveKind, Vec<usize>> = BTreeMap::new();
        let mut mean_scores = vec![vec![0.0; k]; 3];
        for (j, kind) in ObjectiveKind::LOCATING.into_iter().enumerate() {
            let mut p = Vec::with_capacity(nq);
            for (q, row) in original.rows().enumerate() {
                let s = influence_scores(
                    &am.slice(q * l..(q + 1) * l),
                    kind,
                    Reference {
                        prediction: Some(row),
                        label: Some(queries.labels[q]),
                    },
                )?;
                for (acc, v) in mean_scores[j].iter_mut().zip(&s) {
                    *acc += v / nq as f64;
                }
                p.push(argmax(&s));
            }
            picks.insert(kind, p);
        }
        if let Some(cs) = &class_synset {
            let inputs: Vec<Vec<f64>> = qidx.iter().map(|&i| data.test.image(i).to_vec()).collect();
            for kind in ObjectiveKind::LOCATING {
                let located: Vec<Located> = locate_hierarchical(&u, cs, &synset, kind, &inputs, &queries.labels)?;
                picks.insert(kind, located.iter().map(|x| x.cluster).collect());
            }
        }
        let random: Vec<usize> = qidx
            .iter()
            .map(|&q| rng::substream(self.cfg.seed, "random-locate", q as u64).random_range(0..k))
            .collect();

        let header = self.header(Stage::Evaluate);
        write_scores_csv(
            &dir.join("attribution.csv"),
            &header,
            h.clusters_per_class(),
            [&mean_scores[0], &mean_scores[1], &mean_scores[2]],
        )?;
        write_weights_csv(&dir.join("weights.csv"), &header, &am)?;
        let mut s = format!("# {header}\nquery,label,objective,ddm_cluster,ddm_class,random_cluster\n");
        for kind in ObjectiveKind::LOCATING {
            for (q, &c) in picks[&kind].iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{q},{},{},{c},{},{}",
                    queries.labels[q],
                    kind.name(),
                    h.class_of(c),
                    random[q]
                );
            }
        }
        write_text(&dir.join("located.csv"), &s)?;

        let all = u.without(&synset, &clusters)?;
        let summary = EvalSummary {
            clusters: k,
            queries: nq,
            theta_tau_accuracy: accuracy(&m, traj.last(), &data.test)?,
            full_synset_accuracy: accuracy(&m, &all, &data.test)?,
            finetune_runs: u.finetune_count(),
            hierarchical: class_synset.is_some(),
        };
        let mut v = serde_json::to_value(&summary)?;
        v["config_hash"] = json!(self.stage_hash(Stage::Evaluate));
        v["seed"] = json!(self.cfg.seed);
        std::fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&v)?)?;

        let probe: Vec<usize> = (0..k.min(10)).collect();
        let start = Instant::now();
        for &c in &probe {
            u.without(&synset, &[c])?;
        }
        let timing = Timing {
            seconds_per_deletion: start.elapsed().as_secs_f64() / probe.len() as f64,
            runs: probe.len(),
        };
        std::fs::write(dir.join("timing.json"), serde_json::to_vec_pretty(&timing)?)?;
        self.finish(Stage::Evaluate)
    }

    fn located(&self) -> Result<Vec<LocatedRow>> {
        let dir = self.upstream(Stage::Evaluate)?;
        read_located(&need(dir.join("located.csv"))?)
    }

    /// Clusters the fidelity table covers: evenly spaced ids.
    fn fidelity_clusters(&self, k: usize) -> Vec<usize> {
        let n = self.cfg.diagnostics.fidelity_clusters.min(k);
        (0..n).map(|i| i * k / n).collect()
    }

    pub fn oracle(&self) -> Result<Outcome> {
        let h = self.hierarchy()?;
        let traj = self.trajectory()?;
        let synset = self.synset("synset.bin")?;
        let rows = self.located()?;
        let Some(dir) = self.begin(Stage::Oracle)? else {
            return Ok(Outcome::Cached);
        };
        let data = self.load_data()?;
        let m = self.model(&data.train)?;
        let spec_hash = m.spec().hash();
        let fid = self.fidelity_clusters(h.num_clusters());
        let mut needed: BTreeSet<usize> = fid.iter().copied().collect();
        for r in &rows {
            needed.insert(r.ddm_cluster);
            needed.insert(r.random_cluster);
        }
        let needed: Vec<usize> = needed.into_iter().collect();
        let tcfg = self.cfg.train_config();
        let results = parallel_map(self.opts.workers, &needed, |_, &c| -> Result<ParamVector> {
            let path = dir.join(format!("cluster_{c}.ckpt"));
            if path.exists() {
                let (hash, p) = read_checkpoint(&path)?;
                if hash == spec_hash {
                    return Ok(p);
                }
            }
            let start = Instant::now();
            let p = retrain_without(&m, &data.train, &h, &[c], &tcfg)?;
            let secs = start.elapsed().as_secs_f64();
            write_checkpoint(&path, &spec_hash, &p)?;
            std::fs::write(dir.join(format!("cluster_{c}.secs")), format!("{secs}\n"))?;
            Ok(p)
        });
        let mut oracles = BTreeMap::new();
        for (c, r) in needed.iter().zip(results) {
            oracles.insert(*c, r?);
        }

        let header = self.header(Stage::Oracle);
        let inputs = data.test.batch(&(0..self.cfg.attribution.queries).collect::<Vec<_>>());
        let base = m.predict(traj.last(), &inputs.inputs)?;
        let rows_of = |t: Tensor| -> Vec<Vec<f64>> { t.rows().map(<[f64]>::to_vec).collect() };
        let base = rows_of(base);
        let mut preds: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
        for (&c, p) in &oracles {
            preds.insert(c, rows_of(m.predict(p, &inputs.inputs)?));
        }
        let sample = |q: usize, c: usize| DistSample {
            original: base[q].clone(),
            unlearned: preds[&c][q].clone(),
            label: inputs.labels[q],
        };
        let mut s = format!("# {header}\nobjective,ddm,random\n");
        for kind in ObjectiveKind::LOCATING {
            let mine: Vec<&LocatedRow> = rows.iter().filter(|r| r.objective == kind.name()).collect();
            let ddm: Vec<DistSample> = mine.iter().map(|r| sample(r.query, r.ddm_cluster)).collect();
            let rnd: Vec<DistSample> = mine.iter().map(|r| sample(r.query, r.random_cluster)).collect();
            let _ = writeln!(s, "{},{},{}", kind.name(), avg_dist(kind, &ddm)?, avg_dist(kind, &rnd)?);
        }
        write_text(&dir.join("avg_dist.csv"), &s)?;

        let u = self.unlearner(&m, &traj);
        let fr = unlearn_fidelity(&u, &traj, &data.train, &h, &synset, &oracles, &fid, &data.test)?;
        let mut s = format!(
            "# {header}\ncluster,param_l2,base_param_l2,agreement,base_agreement,epsilon\n"
        );
        for r in &fr {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.cluster, r.param_l2, r.base_param_l2, r.agreement, r.base_agreement, r.epsilon
            );
        }
        write_text(&dir.join("fidelity.csv"), &s)?;

        let mut total = 0.0;
        for &c in &needed {
            let t = std::fs::read_to_string(dir.join(format!("cluster_{c}.secs")))?;
            total += t.trim().parse::<f64>().map_err(|_| Error::format(dir.join(format!("cluster_{c}.secs")), "bad seconds"))?;
        }
        let timing = Timing {
            seconds_per_deletion: total / needed.len().max(1) as f64,
            runs: needed.len(),
        };
        std::fs::write(dir.join("timing.json"), serde_json::to_vec_pretty(&timing)?)?;
        self.finish(Stage::Oracle)
    }

    pub fn diagnose(&self) -> Result<Outcome> {
        let h = self.hierarchy()?;
        let traj = self.trajectory()?;
        let synset = self.synset("synset.bin")?;
        if self.cfg.diagnostics.validation == 0 {
            return Err(Error::Config("diagnose needs diagnostics.validation > 0".into()));
        }
        let Some(dir) = self.begin(Stage::Diagnose)? else {
            return Ok(Outcome::Cached);
        };
        let data = self.load_data()?;
        let val = data.val.as_ref().expect("validation split exists");
        let m = self.model(&data.train)?;
        let u = self.unlearner(&m, &traj);
        let k = h.num_clusters();
        let masks = sample_masks(k, self.cfg.attribution.masks.unwrap_or(k), self.cfg.seed)?;
        let qm = quality_attribution(&u, &synset, &masks, val)?;
        let ranking = rank_quality(&qm)?;
        let sweep = SweepConfig {
            percentages: self.cfg.diagnostics.percentages.clone(),
            random_trials: self.cfg.diagnostics.random_trials,
            seed: self.cfg.seed,
        };
        let mut rep = deletion_sweep(
            &m,
            &data.train,
            &h,
            &data.test,
            &ranking,
            &sweep,
            &self.cfg.train_config(),
            self.opts.workers,
        )?;
        if let Some(c) = &data.corruption {
            let owner = cluster_of_samples(&h, data.train.len());
            let mut dirty = vec![0usize; k];
            for (i, _) in c.mask.iter().enumerate().filter(|(_, &m)| m) {
                dirty[owner[i]] += 1;
            }
            let share = |ids: &[usize]| -> f64 {
                let n: usize = ids.iter().map(|&c| h.cluster(c).len()).sum();
                ids.iter().map(|&c| dirty[c]).sum::<usize>() as f64 / n.max(1) as f64
            };
            let worst: Vec<usize> = ranking.iter().take(k.div_ceil(10)).map(|r| r.cluster).collect();
            let all: Vec<usize> = (0..k).collect();
            rep.notes.push(format!(
                "corrupted share: worst-ranked 10% of clusters {:.3}, all clusters {:.3}",
                share(&worst),
                share(&all)
            ));
        }
        let header = self.header(Stage::Diagnose);
        write_text(&dir.join("quality.csv"), &rep.to_csv(&header))?;
        write_text(&dir.join("ranking.csv"), &rep.ranking_csv(&header))?;
        let mut table = format!("# {header}\n{}", rep.table());
        for n in &rep.notes {
            let _ = writeln!(table, "{n}");
        }
        write_text(&dir.join("table.txt"), &table)?;
        self.finish(Stage::Diagnose)
    }
}

/// Cluster id of every training sample.
fn cluster_of_samples(h: &ClusterHierarchy, n: usize) -> Vec<usize> {
    let mut owner = vec![0; n];
    for (k, members) in h.clusters().iter().enumerate() {
        for &i in members {
            owner[i] = k;
        }
    }
    owner
}

pub fn read_located(path: &Path) -> Result<Vec<LocatedRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut out = Vec::new();
    for r in rdr.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(exit_code(&Error::MissingArtifact("x".into())), 3);
        assert_eq!(exit_code(&Error::MissingOracle(vec![1])), 3);
        assert_eq!(exit_code(&Error::NumericFailure("x".into())), 4);
        assert_eq!(exit_code(&Error::Diverged { epoch: 1, last_finite: 0 }), 4);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 2);
    }

    #[test]
    fn cluster_owner_inverts_hierarchy() {
        let h = ClusterHierarchy::from_clusters(vec![vec![0, 2], vec![1], vec![3]], 1).unwrap();
        assert_eq!(cluster_of_samples(&h, 4), vec![0, 1, 0, 2]);
    }
}
