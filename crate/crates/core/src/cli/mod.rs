//! The experiment commands behind the `coldfed` binary. Each command reads a
//! [`RunConfig`], writes its artifacts under `config.out` atomically and
//! finishes with a manifest recording the resolved config and a SHA-256 of
//! every file it wrote.

use std::path::{Path, PathBuf};

use log::info;
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfig, SweepParameter};
use crate::data::{
    generate_synthetic, load_dataset_dir, save_dataset_dir, split_items, IdMap, LoadedDataset, SplitDataset,
};
use crate::diffusion::{generate_cold_embeddings, DenoiserParams, InferenceMode};
use crate::error::{Error, Result};
use crate::eval::{distribution_diagnostics, evaluate_cold, evaluate_val, DistributionDiagnostics, MetricsReport};
use crate::fedsim::{train_baseline_mapper, RoundReport, Simulator, MAPPER_HIDDEN};
use crate::fsutil::{fmt_f64, write_atomic};
use crate::modality::{load_features, load_item_text, save_features, EncoderKind, FeatureTable};
use crate::numerics::rng::subsystem;
use crate::numerics::{Matrix, Mlp, Rng, SeedStream};
use crate::privacy::{compare_pipelines, PipelineComparison};

pub const DATA_DIR: &str = "data";
pub const MODEL_FILE: &str = "checkpoints/model.mdff";
pub const MAPPER_FILE: &str = "checkpoints/mapper.mdff";
pub const CLUSTERS_FILE: &str = "clusters.csv";
const VAL_K: usize = 20;

/// Everything loaded from the data source, split and featurized.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub loaded: LoadedDataset,
    pub features: FeatureTable,
    pub split: SplitDataset,
    /// Item categories and their count, when the source knows them.
    pub labels: Option<(Vec<usize>, usize)>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Workspace> {
    let (loaded, features, labels) = match &cfg.source {
        DataSource::Synthetic(spec) => {
            let data = generate_synthetic(spec)?;
            let loaded = LoadedDataset {
                users: IdMap::identity(data.dataset.n_users()),
                items: IdMap::identity(data.dataset.n_items()),
                dataset: data.dataset,
                duplicates_dropped: 0,
            };
            (loaded, data.features, Some((data.item_clusters, spec.n_clusters)))
        }
        DataSource::Directory(dir) => {
            let loaded = load_dataset_dir(dir)?;
            let path = cfg.modality_path().expect("directory source");
            let features = match cfg.encoder.kind {
                EncoderKind::Precomputed => load_features(&path, &loaded.items, cfg.encoder.normalization)?,
                EncoderKind::HashedTokens => {
                    load_item_text(&path, &loaded.items, cfg.encoder.dim, cfg.seed)?.normalized(cfg.encoder.normalization)
                }
            };
            let labels = load_clusters(&dir.join(CLUSTERS_FILE), &loaded.items)?;
            (loaded, features, labels)
        }
    };
    let split = split_items(loaded.dataset.clone(), cfg.split, cfg.seed)?;
    Ok(Workspace {
        loaded,
        features,
        split,
        labels,
    })
}

/// Optional `item_id,cluster` file; absent means no labels.
fn load_clusters(path: &Path, items: &IdMap) -> Result<Option<(Vec<usize>, usize)>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = crate::fsutil::read_to_string(path)?;
    let mut labels = vec![None; items.len()];
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (idx == 0 && line.starts_with("item_id")) {
            continue;
        }
        let (id, c) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path.display(), idx + 1, "expected `item_id,cluster`"))?;
        let c: usize = c
            .trim()
            .parse()
            .map_err(|_| Error::parse(path.display(), idx + 1, format!("bad cluster `{c}`")))?;
        if let Some(d) = items.dense(id.trim()) {
            labels[d] = Some(c);
        }
    }
    let labels: Option<Vec<usize>> = labels.into_iter().collect();
    let labels = labels.ok_or_else(|| Error::Config(format!("{} does not label every item", path.display())))?;
    let m = labels.iter().max().map_or(0, |&x| x + 1);
    Ok(Some((labels, m)))
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Accumulates written artifacts for one command.
pub struct Manifest {
    command: String,
    out: PathBuf,
    artifacts: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, out: &Path) -> Self {
        Manifest {
            command: command.to_string(),
            out: out.to_path_buf(),
            artifacts: Vec::new(),
        }
    }

    /// Writes `bytes` to `out/rel` and records its hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(rel);
        write_atomic(&path, bytes)?;
        self.artifacts.push((rel.to_string(), sha256_hex(bytes)));
        Ok(path)
    }

    pub fn checkpoint(&mut self, rel: &str, c: &Checkpoint) -> Result<PathBuf> {
        self.write(rel, &c.to_bytes()?)
    }

    /// `key,value` rows: the command, every resolved config key, then
    /// `artifact:<path>` → sha256. Written to `out/<command>.manifest.csv`.
    pub fn finish(self, cfg: &RunConfig) -> Result<PathBuf> {
        let mut s = String::from("key,value\n");
        s.push_str(&format!("command,{}\n", self.command));
        for line in cfg.to_text().lines() {
            // the output location never affects file contents
            if let Some((k, v)) = line.split_once(" = ").filter(|(k, _)| *k != "out") {
                s.push_str(&format!("{},{}\n", k, csv_field(v)));
            }
        }
        for (rel, hash) in &self.artifacts {
            s.push_str(&format!("artifact:{},{}\n", csv_field(rel), hash));
        }
        let path = self.out.join(format!("{}.manifest.csv", self.command));
        write_atomic(&path, s.as_bytes())?;
        Ok(path)
    }
}

/// `item_id,f0..` rows for `items`, keyed by original id.
pub fn embeddings_csv(items: &[usize], rows: &Matrix, ids: &IdMap) -> String {
    let mut s = String::from("item_id");
    for j in 0..rows.cols() {
        s.push_str(&format!(",f{j}"));
    }
    s.push('\n');
    for (r, &i) in items.iter().enumerate() {
        s.push_str(&csv_field(ids.original(i)));
        for &v in rows.row(r) {
            s.push(',');
            s.push_str(&fmt_f64(v));
        }
        s.push('\n');
    }
    s
}

pub fn matrix_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn rounds_csv(reports: &[RoundReport], record_timing: bool) -> String {
    let mut s = String::from("round,mean_client_loss,diffusion_loss,seconds\n");
    for r in reports {
        let dl = r.diffusion_loss.map_or(String::new(), fmt_f64);
        let secs = if record_timing { r.seconds } else { 0.0 };
        s.push_str(&format!("{},{},{},{}\n", r.round, fmt_f64(r.mean_client_loss), dl, fmt_f64(secs)));
    }
    s
}

/// The persisted outcome of training: `E`, user embeddings and denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub round: usize,
    pub embeddings: Matrix,
    pub users: Matrix,
    pub denoiser: DenoiserParams,
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push("round", Matrix::row_vector(&[self.round as f64]));
        c.push("item_embeddings", self.embeddings.clone());
        c.push("user_embeddings", self.users.clone());
        c.push_params("denoiser", &self.denoiser);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, cfg: &RunConfig) -> Result<Self> {
        let embeddings = c.get("item_embeddings")?.clone();
        let cond = c.get("denoiser.cond_proj.weight")?;
        let mut denoiser = DenoiserParams::new(
            &mut Rng::new(0, 0),
            embeddings.cols(),
            cond.rows(),
            cfg.diffusion.heads,
            cfg.guidance.uses_condition(),
        )?;
        c.load_params("denoiser", &mut denoiser)?;
        Ok(TrainedModel {
            round: c.get("round")?.get(0, 0) as usize,
            embeddings,
            users: c.get("user_embeddings")?.clone(),
            denoiser,
        })
    }

    pub fn load(path: &Path, cfg: &RunConfig) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, cfg)
    }

    /// Reverse-samples `items` from the conditions the config selects.
    pub fn generate(&self, cfg: &RunConfig, ws: &Workspace, items: &[usize], mode: InferenceMode) -> Result<Matrix> {
        let conditions = cfg.guidance.substitute(&ws.features, cfg.seed);
        let mut params = self.denoiser.clone();
        params.set_uses_condition(cfg.guidance.uses_condition());
        let schedule = cfg.diffusion.schedule()?;
        let stream = SeedStream::root(cfg.seed).child(subsystem::GENERATION);
        generate_cold_embeddings(items, &conditions, &params, &schedule, stream, mode)
    }

    /// `E` with `items` replaced by generated rows.
    pub fn table_with(&self, items: &[usize], generated: &Matrix) -> Matrix {
        let mut e = self.embeddings.clone();
        for (r, &i) in items.iter().enumerate() {
            e.row_mut(i).copy_from_slice(generated.row(r));
        }
        e
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub reports: Vec<RoundReport>,
    /// `(round, validation recall@20)` per round when selecting.
    pub selection: Vec<(usize, f64)>,
    /// Warm vs generated-cold distribution distances per round.
    pub alignment: Vec<(usize, DistributionDiagnostics)>,
}

/// Runs all rounds, keeping the round with the best validation recall@20
/// (ties go to the later round) when `select_best` is on.
pub fn train(cfg: &RunConfig, ws: &Workspace) -> Result<TrainOutcome> {
    let mode = cfg.diffusion.inference_mode;
    let mut sim = Simulator::new(
        ws.split.clone(),
        &ws.features,
        cfg.guidance,
        cfg.fed.clone(),
        cfg.diffusion.clone(),
        cfg.seed,
    )?;
    let val = ws.split.val_items.clone();
    let cold = ws.split.cold_items.clone();
    let snapshot = |sim: &Simulator| TrainedModel {
        round: sim.round(),
        embeddings: sim.global().embeddings.clone(),
        users: sim.user_embeddings(),
        denoiser: sim.diffusion().params.clone(),
    };
    let mut reports = Vec::new();
    let mut selection = Vec::new();
    let mut alignment = Vec::new();
    let mut best: Option<(f64, TrainedModel)> = None;
    while sim.round() < cfg.fed.rounds {
        let report = sim.run_round()?;
        let round = report.round;
        info!(
            "round {round}: client loss {:.4}, diffusion loss {:?}",
            report.mean_client_loss, report.diffusion_loss
        );
        reports.push(report);
        if cold.len() >= 2 {
            let generated = sim.generate(&cold, mode)?;
            alignment.push((round, distribution_diagnostics(&sim.warm_embeddings(), &generated)?));
        }
        if cfg.select_best && !val.is_empty() {
            let e = sim.table_with_generated(&val, mode)?;
            let r = evaluate_val(&ws.split, &sim.user_embeddings(), &e, &[VAL_K])?.recall_at(VAL_K);
            selection.push((round, r));
            if best.as_ref().is_none_or(|(b, _)| r >= *b) {
                best = Some((r, snapshot(&sim)));
            }
        }
    }
    let model = match best {
        Some((_, m)) => m,
        None => snapshot(&sim),
    };
    Ok(TrainOutcome {
        model,
        reports,
        selection,
        alignment,
    })
}

pub fn evaluate(cfg: &RunConfig, ws: &Workspace, model: &TrainedModel) -> Result<(MetricsReport, Matrix)> {
    let cold = &ws.split.cold_items;
    let generated = model.generate(cfg, ws, cold, cfg.diffusion.inference_mode)?;
    let e = model.table_with(cold, &generated);
    Ok((evaluate_cold(&ws.split, &model.users, &e, &cfg.ks)?, generated))
}

fn suffix(cfg: &RunConfig) -> String {
    if cfg.guidance == crate::modality::Guidance::Full {
        String::new()
    } else {
        format!("_{}", cfg.guidance)
    }
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let DataSource::Synthetic(spec) = &cfg.source else {
        return Err(Error::Config("gen-data needs synthetic = true".into()));
    };
    let ws = prepare(cfg)?;
    let dir = cfg.out.join(DATA_DIR);
    save_dataset_dir(&dir, &ws.loaded)?;
    save_features(&dir.join("features.csv"), &ws.features, &ws.loaded.items)?;
    let mut m = Manifest::new("gen_data", &cfg.out);
    for f in ["interactions.csv", "user_ids.csv", "item_ids.csv", "features.csv"] {
        let bytes = std::fs::read(dir.join(f)).map_err(|e| Error::io(dir.join(f), e))?;
        m.artifacts.push((format!("{DATA_DIR}/{f}"), sha256_hex(&bytes)));
    }
    let (labels, _) = ws.labels.as_ref().expect("synthetic data has labels");
    let mut s = String::from("item_id,cluster\n");
    for (i, c) in labels.iter().enumerate() {
        s.push_str(&format!("{i},{c}\n"));
    }
    m.write(&format!("{DATA_DIR}/{CLUSTERS_FILE}"), s.as_bytes())?;
    info!(
        "generated {} users, {} items, {} interactions (seed {})",
        spec.n_users,
        spec.n_items,
        ws.loaded.dataset.interactions().len(),
        spec.seed
    );
    m.finish(cfg)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let ws = prepare(cfg)?;
    let outcome = train(cfg, &ws)?;
    let sfx = suffix(cfg);
    let mut m = Manifest::new(&format!("train{sfx}"), &cfg.out);
    m.checkpoint(&model_file(cfg), &outcome.model.to_checkpoint())?;
    m.write(&format!("rounds{sfx}.csv"), rounds_csv(&outcome.reports, cfg.record_timing).as_bytes())?;
    let mut s = String::from("round,val_recall_at_20\n");
    for (r, v) in &outcome.selection {
        s.push_str(&format!("{r},{}\n", fmt_f64(*v)));
    }
    m.write(&format!("selection{sfx}.csv"), s.as_bytes())?;
    let mut s = String::from("round,centroid_distance,covariance_distance\n");
    for (r, d) in &outcome.alignment {
        s.push_str(&format!("{r},{},{}\n", fmt_f64(d.centroid_distance), fmt_f64(d.covariance_distance)));
    }
    m.write(&format!("alignment{sfx}.csv"), s.as_bytes())?;
    info!("kept round {} of {}", outcome.model.round, cfg.fed.rounds);
    m.finish(cfg)?;
    Ok(outcome)
}

/// Checkpoint path; guidance ablations train into their own file.
pub fn model_file(cfg: &RunConfig) -> String {
    let sfx = suffix(cfg);
    MODEL_FILE.replace(".mdff", &format!("{sfx}.mdff"))
}

fn load_model(cfg: &RunConfig) -> Result<TrainedModel> {
    let own = cfg.out.join(model_file(cfg));
    // evaluating an ablation on the full-guidance model is allowed
    let path = if own.is_file() { own } else { cfg.out.join(MODEL_FILE) };
    TrainedModel::load(&path, cfg)
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<PathBuf> {
    let ws = prepare(cfg)?;
    let model = load_model(cfg)?;
    let cold = &ws.split.cold_items;
    let generated = model.generate(cfg, &ws, cold, cfg.diffusion.inference_mode)?;
    let mut m = Manifest::new(&format!("infer{}", suffix(cfg)), &cfg.out);
    let path = m.write(
        &format!("cold_embeddings{}.csv", suffix(cfg)),
        embeddings_csv(cold, &generated, &ws.loaded.items).as_bytes(),
    )?;
    m.finish(cfg)?;
    Ok(path)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<MetricsReport> {
    let ws = prepare(cfg)?;
    let model = load_model(cfg)?;
    let (report, generated) = evaluate(cfg, &ws, &model)?;
    let sfx = suffix(cfg);
    let mut m = Manifest::new(&format!("eval{sfx}"), &cfg.out);
    m.write(&format!("metrics{sfx}.csv"), report.to_csv().as_bytes())?;
    let warm = model.embeddings.select_rows(&ws.split.warm_items);
    let mut s = String::from("centroid_distance,covariance_distance\n");
    if let Ok(d) = distribution_diagnostics(&warm, &generated) {
        s.push_str(&format!("{},{}\n", fmt_f64(d.centroid_distance), fmt_f64(d.covariance_distance)));
    }
    m.write(&format!("diagnostics{sfx}.csv"), s.as_bytes())?;
    // warm rows from E, cold rows as generated, tagged for plotting
    let mut s = String::from("item_id,split");
    for j in 0..warm.cols() {
        s.push_str(&format!(",f{j}"));
    }
    s.push('\n');
    for (tag, items, rows) in [("warm", &ws.split.warm_items, &warm), ("cold", &ws.split.cold_items, &generated)] {
        for (r, &i) in items.iter().enumerate() {
            s.push_str(&format!("{},{tag}", csv_field(ws.loaded.items.original(i))));
            for &v in rows.row(r) {
                s.push(',');
                s.push_str(&fmt_f64(v));
            }
            s.push('\n');
        }
    }
    m.write(&format!("embeddings{sfx}.csv"), s.as_bytes())?;
    m.finish(cfg)?;
    Ok(report)
}

pub fn cmd_attack(cfg: &RunConfig) -> Result<PipelineComparison> {
    let ws = prepare(cfg)?;
    let model = load_model(cfg)?;
    let mut m = Manifest::new("attack", &cfg.out);
    let warm = &ws.split.warm_items;
    let mapper_path = cfg.out.join(MAPPER_FILE);
    let mapper = if mapper_path.is_file() {
        let mut mlp = Mlp::new(&mut Rng::new(0, 0), ws.features.dim(), MAPPER_HIDDEN, model.embeddings.cols());
        Checkpoint::load(&mapper_path)?.load_params("mapper", &mut mlp)?;
        mlp
    } else {
        let mut rng = SeedStream::root(cfg.seed).child(subsystem::ATTACK).child(0).rng();
        let mlp = train_baseline_mapper(
            &ws.features.select(warm),
            &model.embeddings.select_rows(warm),
            cfg.mapper_epochs,
            cfg.mapper_lr,
            &mut rng,
        )?;
        let mut c = Checkpoint::new();
        c.push_params("mapper", &mlp);
        m.checkpoint(MAPPER_FILE, &c)?;
        // continue with the stored f32 weights so reruns see the same mapper
        let mut stored = mlp.clone();
        Checkpoint::from_bytes(&c.to_bytes()?)?.load_params("mapper", &mut stored)?;
        stored
    };
    let mut diffusion = crate::diffusion::DiffusionModel::from_params(
        cfg.diffusion.clone(),
        model.denoiser.clone(),
        Rng::new(0, 0),
    )?;
    diffusion.params.set_uses_condition(cfg.guidance.uses_condition());
    let conditions = cfg.guidance.substitute(&ws.features, cfg.seed);
    let labels = ws.labels.as_ref().map(|(l, k)| (l.as_slice(), *k));
    let cmp = compare_pipelines(
        &ws.split.cold_items,
        &ws.features,
        &diffusion,
        &conditions,
        &mapper,
        labels,
        &cfg.privacy,
        SeedStream::root(cfg.seed).child(subsystem::ATTACK).child(1),
    )?;
    m.write("attack.csv", cmp.to_csv().as_bytes())?;
    m.write("ssd_diffusion.csv", matrix_csv(&cmp.diffusion.ssd).as_bytes())?;
    m.write("ssd_mapper.csv", matrix_csv(&cmp.mapper.ssd).as_bytes())?;
    let s = format!(
        "method,entropy_nats\ndiffusion,{}\nmapper,{}\n",
        fmt_f64(cmp.diffusion.entropy_nats),
        fmt_f64(cmp.mapper.entropy_nats)
    );
    m.write("entropy.csv", s.as_bytes())?;
    m.finish(cfg)?;
    Ok(cmp)
}

/// Train + eval once per value of the sweep parameter, each in its own
/// subdirectory, then one summary row per value.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<PathBuf> {
    let param = cfg.sweep_parameter;
    let mut header = String::from("parameter,value,best_round");
    for k in &cfg.ks {
        header.push_str(&format!(",recall@{k},precision@{k},ndcg@{k}"));
    }
    let mut s = header + "\n";
    for &value in &cfg.sweep_values {
        let mut run = cfg.clone();
        match param {
            SweepParameter::Dim => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::Config(format!("dim sweep value {value} is not a positive integer")));
                }
                run.fed.dim = value as usize;
            }
            SweepParameter::Ldp => run.fed.ldp_scale = value,
        }
        run.out = cfg.out.join("sweep").join(format!("{param}_{value}"));
        run.validate()?;
        let outcome = cmd_train(&run)?;
        let report = cmd_eval(&run)?;
        s.push_str(&format!("{param},{value},{}", outcome.model.round));
        for m in &report.per_k {
            s.push_str(&format!(",{},{},{}", fmt_f64(m.recall), fmt_f64(m.precision), fmt_f64(m.ndcg)));
        }
        s.push('\n');
    }
    let mut m = Manifest::new(&format!("sweep_{param}"), &cfg.out);
    let path = m.write(&format!("sweep_{param}.csv"), s.as_bytes())?;
    m.finish(cfg)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(out: &Path) -> RunConfig {
        let text = format!(
            "synthetic = true\nsynthetic_users = 24\nsynthetic_items = 20\nsynthetic_clusters = 2\n\
             synthetic_p_in = 0.5\nsynthetic_p_out = 0.05\nsynthetic_feature_dim = 4\n\
             rounds = 3\ndim = 8\nheads = 2\ndiffusion_steps = 5\nks = 2,5\nseed = 5\n\
             mapper_epochs = 5\nattack_epochs = 5\nssd_items = 4\nmi_components = 1\nout = {}\n",
            out.display()
        );
        RunConfig::parse_str(&text, "tiny").unwrap()
    }

    #[test]
    fn train_writes_one_row_per_round() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.fed.rounds = 1;
        cmd_train(&cfg).unwrap();
        let rounds = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
        assert_eq!(rounds.lines().count(), 2);
        assert!(rounds.starts_with("round,mean_client_loss,diffusion_loss,seconds\n1,"));
    }

    #[test]
    fn light_mode_logs_every_other_round() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.fed.rounds = 10;
        cfg.fed.light_mode = true;
        let out = cmd_train(&cfg).unwrap();
        assert_eq!(out.reports.iter().filter(|r| r.diffusion_loss.is_some()).count(), 5);
        let rounds = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
        let trained = rounds.lines().skip(1).filter(|l| l.split(',').nth(2) != Some("")).count();
        assert_eq!(trained, 5);
    }

    #[test]
    fn model_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let out = cmd_train(&cfg).unwrap();
        let back = TrainedModel::load(&dir.path().join(MODEL_FILE), &cfg).unwrap();
        assert_eq!(back.to_checkpoint().to_bytes().unwrap(), out.model.to_checkpoint().to_bytes().unwrap());
        assert_eq!(back.round, out.model.round);
    }

    #[test]
    fn infer_row_count_and_modes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        cmd_train(&cfg).unwrap();
        let p = cmd_infer(&cfg).unwrap();
        let a = std::fs::read(&p).unwrap();
        let n_cold = prepare(&cfg).unwrap().split.cold_items.len();
        assert_eq!(String::from_utf8_lossy(&a).lines().count(), n_cold + 1);
        assert_eq!(std::fs::read(cmd_infer(&cfg).unwrap()).unwrap(), a);

        let mut s = cfg.clone();
        s.diffusion.inference_mode = InferenceMode::Stochastic;
        let x = std::fs::read(cmd_infer(&s).unwrap()).unwrap();
        s.seed = 6;
        s.sync_seed();
        // same checkpoint, different generation seed
        let y = std::fs::read(cmd_infer(&s).unwrap()).unwrap();
        assert_ne!(x, y);
    }

    #[test]
    fn eval_emits_one_row_per_k_and_ablation_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        cmd_train(&cfg).unwrap();
        let r = cmd_eval(&cfg).unwrap();
        assert_eq!(r.per_k.len(), 2);
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        for cond in ["zero", "random", "none"] {
            let mut c = cfg.clone();
            c.guidance = cond.parse().unwrap();
            cmd_eval(&c).unwrap();
            assert!(dir.path().join(format!("metrics_{cond}.csv")).is_file());
        }
        assert_eq!(cmd_eval(&cfg).unwrap(), r);
    }

    #[test]
    fn attack_has_two_rows_and_rejects_full_leak() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        cmd_train(&cfg).unwrap();
        let cmp = cmd_attack(&cfg).unwrap();
        let text = std::fs::read_to_string(dir.path().join("attack.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("\ndiffusion,") && text.contains("\nmapper,"));
        assert!(dir.path().join(MAPPER_FILE).is_file());
        // reuses the saved mapper on a rerun
        assert_eq!(cmd_attack(&cfg).unwrap(), cmp);
        let mut bad = cfg.clone();
        bad.privacy.leak_fraction = 1.0;
        assert!(cmd_attack(&bad).is_err());
    }

    #[test]
    fn gen_data_is_deterministic_and_reloadable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        cmd_gen_data(&tiny(a.path())).unwrap();
        cmd_gen_data(&tiny(b.path())).unwrap();
        for f in ["interactions.csv", "features.csv", "item_ids.csv", "clusters.csv"] {
            let x = std::fs::read(a.path().join(DATA_DIR).join(f)).unwrap();
            assert_eq!(x, std::fs::read(b.path().join(DATA_DIR).join(f)).unwrap(), "{f}");
        }
        let manifest = std::fs::read_to_string(a.path().join("gen_data.manifest.csv")).unwrap();
        assert!(manifest.contains("\nseed,5\n") && !manifest.contains("\nout,"));
        assert!(manifest.contains("artifact:data/features.csv,"));

        // the written directory reproduces the in-memory workspace
        let text = format!(
            "dataset_dir = {}\nencoder = precomputed\nseed = 5\nout = {}\n",
            a.path().join(DATA_DIR).display(),
            a.path().display()
        );
        let dir_cfg = RunConfig::parse_str(&text, "t").unwrap();
        let from_dir = prepare(&dir_cfg).unwrap();
        let mem = prepare(&tiny(a.path())).unwrap();
        assert_eq!(from_dir.loaded.dataset, mem.loaded.dataset);
        assert_eq!(from_dir.features, mem.features);
        assert_eq!(from_dir.split.cold_items, mem.split.cold_items);
        assert_eq!(from_dir.labels, mem.labels);
    }

    #[test]
    fn gen_data_needs_synthetic_source() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("items.txt"), "").unwrap();
        let cfg = RunConfig::parse_str(&format!("dataset_dir = {}\n", dir.path().display()), "t").unwrap();
        assert!(cmd_gen_data(&cfg).is_err());
    }

    #[test]
    fn sweep_writes_one_row_per_value() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.fed.rounds = 1;
        cfg.sweep_values = vec![4.0, 8.0];
        let p = cmd_sweep(&cfg).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("parameter,value,best_round,recall@2"));
        cfg.sweep_parameter = SweepParameter::Ldp;
        cfg.sweep_values = vec![0.0];
        let text = std::fs::read_to_string(cmd_sweep(&cfg).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 2);
        cfg.sweep_parameter = SweepParameter::Dim;
        cfg.sweep_values = vec![2.5];
        assert!(cmd_sweep(&cfg).is_err());
    }

    #[test]
    fn manifest_quotes_commas() {
        assert_eq!(csv_field("20,50"), "\"20,50\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
