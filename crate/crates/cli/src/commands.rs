use std::fs;
use std::path::{Path, PathBuf};

use vager_core::classify::{
    fuse, sample_without_replacement, train_base_classifiers, FusionConfig, FusionStrategy,
    LinearClassifier, TrainLRConfig,
};
use vager_core::data::{
    class_means, generate_synthetic, holdout_per_class, split_kshot, FeatureFormat, FeatureSet,
    Record, SynthConfig,
};
use vager_core::eval::report::report_files;
use vager_core::eval::{
    run_binary_experiment, run_multiway_experiment, sr_analysis, BinaryProtocol, EvalReport,
    ExperimentSettings, Method, MultiwayProtocol, NegativePools, TransferContext,
};
use vager_core::graph::build_graph;
use vager_core::persist::{decode_classifiers, decode_model, encode_classifiers, encode_model};
use vager_core::transfer::precompute_solver_ridge;
use vager_core::vager::{train_vager, BaseWeights, EmbeddingModel, VagerTrainConfig};
use vager_core::{seed, Error, Result};

use crate::args::*;

/// Error of a run, tagged with the pipeline stage it came from.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.error)
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

pub type CmdResult = std::result::Result<(), StageError>;

/// Writes files as `name.partial` and renames them once all are written.
pub struct Output {
    quiet: bool,
}

impl Output {
    pub fn new(quiet: bool) -> Self {
        Self { quiet }
    }

    pub fn commit(&self, files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
        let mut staged = Vec::with_capacity(files.len());
        for (path, bytes) in files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
            }
            let mut partial = path.clone().into_os_string();
            partial.push(".partial");
            let partial = PathBuf::from(partial);
            fs::write(&partial, bytes).map_err(|e| io(&partial, e))?;
            staged.push((partial, path));
        }
        for (partial, path) in staged {
            fs::rename(&partial, path).map_err(|e| io(path, e))?;
            self.note(format!("wrote {}", path.display()));
        }
        Ok(())
    }

    pub fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io(path, e))
}

fn load_features(path: &Path, normalize: bool) -> Result<FeatureSet> {
    let fs = FeatureSet::load(path, FeatureFormat::from_path(path))?;
    Ok(if normalize { fs.l2_normalized() } else { fs })
}

fn seed_of(s: Option<u64>) -> u64 {
    s.expect("clap enforces --seed")
}

pub fn synth_config(a: &SynthArgs, seed: u64) -> Result<SynthConfig> {
    let mut cfg = match &a.concentration {
        Some(c) => SynthConfig::concentration_sweep(a.n_base, a.d, a.n_novel, (c[0], c[1]), seed)?,
        None => SynthConfig::benchmark(a.n_base, a.d, a.n_novel, seed),
    };
    cfg.samples_per_base = a.samples_per_base;
    cfg.cluster_std = a.cluster_std;
    cfg.center_scale = a.center_scale;
    if let Some(r) = a.latent_dim {
        cfg.latent_dim = r;
    }
    for n in &mut cfg.novel {
        n.noise_std = a.noise_std;
        n.samples = a.samples_per_novel;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn truth_csv(truth: &[(u64, Vec<f64>)], base_ids: &[u64]) -> Vec<u8> {
    let mut out = String::from("novel_id,base_id,weight\n");
    for (id, w) in truth {
        for (b, x) in base_ids.iter().zip(w) {
            if *x != 0.0 {
                out.push_str(&format!("{id},{b},{x:?}\n"));
            }
        }
    }
    out.into_bytes()
}

fn feature_files(
    dir: &Path,
    stem: &str,
    fs: &FeatureSet,
    format: OutputFormat,
) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        out.push((dir.join(format!("{stem}.csv")), fs.to_csv()));
    }
    if matches!(format, OutputFormat::Binary | OutputFormat::Both) {
        out.push((dir.join(format!("{stem}.bin")), fs.to_binary()));
    }
    out
}

pub fn synth(cmd: &SynthCmd, out: &Output) -> CmdResult {
    let cfg = synth_config(&cmd.synth, seed_of(cmd.seed)).stage("synth")?;
    let data = generate_synthetic(&cfg).stage("synth")?;
    let mut files = feature_files(&cmd.out_dir, "base", &data.base, cmd.format);
    files.extend(feature_files(
        &cmd.out_dir,
        "novel",
        &data.novel,
        cmd.format,
    ));
    files.push((
        cmd.out_dir.join("truth.csv"),
        truth_csv(&data.truth, &data.base.class_ids()),
    ));
    out.commit(&files).stage("synth")
}

pub fn lr_config(a: &LrArgs, seed: u64) -> TrainLRConfig {
    TrainLRConfig {
        lambda_reg: a.lambda_reg,
        epochs: a.epochs,
        batch_size: a.batch_size,
        step_size: a.step_size,
        neg_per_pos: a.neg_per_pos,
        ..TrainLRConfig::with_seed(seed)
    }
}

pub fn vager_config(a: &VagerArgs, n: usize, p: usize, seed: u64) -> VagerTrainConfig {
    let mut cfg = VagerTrainConfig::for_classes(n, p, seed);
    if let Some(q) = a.q {
        cfg.q = q;
    }
    cfg.beta = a.beta;
    cfg.max_outer_iters = a.max_outer_iters;
    cfg.inner_steps_v = a.inner_steps_v;
    cfg.inner_steps_t = a.inner_steps_t;
    cfg.step_size = a.embed_step_size;
    cfg.rel_tol = a.rel_tol;
    cfg.init_scale = a.init_scale;
    cfg
}

pub fn train_base(cmd: &TrainBaseCmd, out: &Output) -> CmdResult {
    let base = load_features(&cmd.base, cmd.normalize).stage("train-base")?;
    let weights = train_base_classifiers(&base, &lr_config(&cmd.lr, seed_of(cmd.seed)))
        .stage("train-base")?;
    let bytes = encode_classifiers(&weights.to_classifiers().stage("train-base")?);
    out.commit(&[(cmd.out.clone(), bytes)]).stage("train-base")
}

fn embed_model(
    base: &FeatureSet,
    weights: &BaseWeights,
    args: &VagerArgs,
    seed: u64,
) -> Result<(EmbeddingModel, String)> {
    let means = class_means(base)?;
    if means.class_ids != weights.class_ids {
        return Err(Error::Shape(
            "base features and base classifiers list different classes".into(),
        ));
    }
    let graph = build_graph(&means)?;
    let cfg = vager_config(args, weights.n(), weights.p(), seed);
    let model = train_vager(weights, &graph, &cfg)?;
    Ok((model, graph.to_csv()))
}

pub fn embed(cmd: &EmbedCmd, out: &Output) -> CmdResult {
    let base = load_features(&cmd.base, cmd.normalize).stage("embed")?;
    let weights = read(&cmd.weights)
        .and_then(|b| decode_classifiers(&b))
        .and_then(|c| BaseWeights::from_classifiers(&c))
        .stage("embed")?;
    let (model, graph) =
        embed_model(&base, &weights, &cmd.vager, seed_of(cmd.seed)).stage("embed")?;
    out.note(format!(
        "embedding: loss {:.6e} after {} iterations",
        model.stats.final_loss, model.stats.outer_iterations
    ));
    let mut files = vec![(cmd.out.clone(), encode_model(&model))];
    if let Some(g) = &cmd.graph_csv {
        files.push((g.clone(), graph.into_bytes()));
    }
    out.commit(&files).stage("embed")
}

fn load_model(path: &Path) -> Result<EmbeddingModel> {
    decode_model(&read(path)?)
}

fn context(base: &FeatureSet, model: EmbeddingModel, ridge: f64) -> Result<TransferContext> {
    let means = class_means(base)?;
    let weights = BaseWeights {
        class_ids: model.class_ids.clone(),
        w: model.weights.clone(),
    };
    let model = if ridge > 0.0 {
        precompute_solver_ridge(model, ridge)?
    } else {
        model
    };
    TransferContext::with_model(means, weights, model)
}

/// The seeded k-shot training samples of every novel class, in class order.
fn novel_shots(novel: &FeatureSet, k: usize, seed: u64) -> Result<Vec<(u64, FeatureSet)>> {
    novel
        .class_ids()
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            Ok((
                id,
                split_kshot(novel, id, k, seed::child(seed, i as u64))?.0,
            ))
        })
        .collect()
}

fn transfer_all(
    ctx: &TransferContext,
    shots: &[(u64, FeatureSet)],
) -> Result<Vec<LinearClassifier>> {
    shots
        .iter()
        .map(|(id, train)| {
            let refs: Vec<&Record> = train.records().iter().collect();
            Ok(ctx.transfer(*id, &refs)?.classifier)
        })
        .collect()
}

pub fn transfer(cmd: &TransferCmd, out: &Output) -> CmdResult {
    let base = load_features(&cmd.base, cmd.normalize).stage("transfer")?;
    let novel = load_features(&cmd.novel, cmd.normalize).stage("transfer")?;
    let model = load_model(&cmd.model).stage("transfer")?;
    let ctx = context(&base, model, cmd.ridge).stage("transfer")?;
    let shots = novel_shots(&novel, cmd.k, seed_of(cmd.seed)).stage("transfer")?;
    let classifiers = transfer_all(&ctx, &shots).stage("transfer")?;
    out.commit(&[(cmd.out.clone(), encode_classifiers(&classifiers))])
        .stage("transfer")
}

fn strategy(s: Strategy) -> FusionStrategy {
    match s {
        Strategy::Initializing => FusionStrategy::Initializing,
        Strategy::Tuning => FusionStrategy::Tuning,
        Strategy::Voting => FusionStrategy::Voting,
    }
}

fn fuse_all(
    transferred: &[LinearClassifier],
    base: &FeatureSet,
    shots: &[(u64, FeatureSet)],
    cfg: &FusionConfig,
    seed: u64,
) -> Result<Vec<LinearClassifier>> {
    let pool: Vec<&[f64]> = base.records().iter().map(|r| r.x.as_slice()).collect();
    transferred
        .iter()
        .map(|t| {
            let i = shots
                .iter()
                .position(|(id, _)| *id == t.class_id)
                .ok_or_else(|| {
                    Error::Invalid(format!("class {} is not in the novel features", t.class_id))
                })?;
            let pos: Vec<&[f64]> = shots[i]
                .1
                .records()
                .iter()
                .map(|r| r.x.as_slice())
                .collect();
            let mut rng = seed::rng(seed::child(seed::child(seed, i as u64), 1));
            let neg =
                sample_without_replacement(&pool, cfg.lr_cfg.neg_per_pos * pos.len(), &mut rng);
            let lr_cfg = TrainLRConfig {
                seed: seed::child(seed, i as u64),
                ..cfg.lr_cfg.clone()
            };
            fuse(
                t,
                &pos,
                &neg,
                &FusionConfig {
                    lr_cfg,
                    ..cfg.clone()
                },
            )
        })
        .collect()
}

pub fn fuse_cmd(cmd: &FuseCmd, out: &Output) -> CmdResult {
    let seed = seed_of(cmd.seed);
    let base = load_features(&cmd.base, cmd.normalize).stage("fuse")?;
    let novel = load_features(&cmd.novel, cmd.normalize).stage("fuse")?;
    let transferred = read(&cmd.transferred)
        .and_then(|b| decode_classifiers(&b))
        .stage("fuse")?;
    let shots = novel_shots(&novel, cmd.k, seed).stage("fuse")?;
    let cfg = FusionConfig::new(strategy(cmd.strategy), cmd.lambda, lr_config(&cmd.lr, seed));
    let fused = fuse_all(&transferred, &base, &shots, &cfg, seed).stage("fuse")?;
    out.commit(&[(cmd.out.clone(), encode_classifiers(&fused))])
        .stage("fuse")
}

fn settings(p: &ProtocolArgs, lr: TrainLRConfig) -> ExperimentSettings {
    ExperimentSettings {
        lr,
        voting_lambda: p.voting_lambda,
        tuning_lambda: p.tuning_lambda,
        test_neg_per_class: p.test_neg_per_class,
        f1_threshold: p.f1_threshold,
        record_roc: p.roc,
        micro_top1: p.micro_top1,
    }
}

fn methods(p: &ProtocolArgs) -> Result<Vec<Method>> {
    match (&p.methods, p.protocol) {
        (Some(list), _) => Method::parse_list(list),
        (None, Protocol::Binary) => Ok(Method::BINARY_TABLE.to_vec()),
        (None, Protocol::Multiway) => {
            let mut m = Method::BINARY_TABLE.to_vec();
            m.push(Method::Softmax);
            Ok(m)
        }
    }
}

/// One report per requested k, named `{stem}_k{k}`.
fn run_protocol(
    p: &ProtocolArgs,
    lr: TrainLRConfig,
    pools: NegativePools<'_>,
    novel: &FeatureSet,
    ctx: &TransferContext,
    seed: u64,
    out: &Output,
) -> Result<Vec<(u64, EvalReport)>> {
    let methods = methods(p)?;
    let settings = settings(p, lr);
    let mut reports = Vec::new();
    for &k in &p.k {
        let report = match p.protocol {
            Protocol::Binary => {
                let protocol = BinaryProtocol {
                    k,
                    trials: p.trials.unwrap_or(50),
                    seed,
                };
                let mut report =
                    run_binary_experiment(pools, novel, ctx, &methods, protocol, &settings)?;
                if !p.no_sr
                    && methods.contains(&Method::VagerVoting)
                    && methods.contains(&Method::Lr)
                {
                    report.sr = Some(sr_analysis(
                        &report,
                        ctx,
                        novel,
                        p.sr_k,
                        Method::VagerVoting,
                        Method::Lr,
                    )?);
                }
                report
            }
            Protocol::Multiway => {
                let protocol = MultiwayProtocol {
                    m: p.m,
                    k,
                    trials: p.trials.unwrap_or(100),
                    test_per_class: p.test_per_class,
                    seed,
                };
                run_multiway_experiment(novel, ctx, &methods, protocol, &settings)?
            }
        };
        for a in &report.aggregates {
            out.note(format!(
                "k={k} {:<20} {:<4} {:.4} ± {:.4}",
                a.method.name(),
                a.metric.name(),
                a.mean,
                a.std
            ));
        }
        reports.push((k as u64, report));
    }
    Ok(reports)
}

fn report_outputs(
    dir: &Path,
    stem: &str,
    reports: &[(u64, EvalReport)],
) -> Vec<(PathBuf, Vec<u8>)> {
    reports
        .iter()
        .flat_map(|(k, r)| report_files(r, &format!("{stem}_k{k}")))
        .map(|(name, text)| (dir.join(name), text.into_bytes()))
        .collect()
}

pub fn eval(cmd: &EvalCmd, out: &Output) -> CmdResult {
    let seed = seed_of(cmd.seed);
    let base = load_features(&cmd.base, cmd.normalize).stage("eval")?;
    let base_test = cmd
        .base_test
        .as_deref()
        .map(|p| load_features(p, cmd.normalize))
        .transpose()
        .stage("eval")?;
    let novel = load_features(&cmd.novel, cmd.normalize).stage("eval")?;
    let ctx = load_model(&cmd.model)
        .and_then(|m| context(&base, m, 0.0))
        .stage("eval")?;
    let pools = NegativePools {
        train: &base,
        test: base_test.as_ref(),
    };
    let reports = run_protocol(
        &cmd.protocol,
        lr_config(&cmd.lr, seed),
        pools,
        &novel,
        &ctx,
        seed,
        out,
    )
    .stage("eval")?;
    out.commit(&report_outputs(&cmd.out_dir, &cmd.stem, &reports))
        .stage("eval")
}

/// Seed streams of the pipeline stages.
mod stream {
    pub const SYNTH: u64 = 0;
    pub const HOLDOUT: u64 = 1;
    pub const BASE: u64 = 2;
    pub const EMBED: u64 = 3;
    pub const SHOTS: u64 = 4;
    pub const EVAL: u64 = 5;
}

pub fn pipeline(cmd: &PipelineCmd, out: &Output) -> CmdResult {
    let master = seed_of(cmd.seed);
    let dir = &cmd.out_dir;
    let s = |stream| seed::child(master, stream);

    let (base, novel) = match (&cmd.base, &cmd.novel) {
        (Some(b), Some(n)) => (
            load_features(b, cmd.normalize).stage("load")?,
            load_features(n, cmd.normalize).stage("load")?,
        ),
        _ => {
            let cfg = synth_config(&cmd.synth, s(stream::SYNTH)).stage("synth")?;
            let data = generate_synthetic(&cfg).stage("synth")?;
            let mut files = feature_files(dir, "base", &data.base, OutputFormat::Csv);
            files.extend(feature_files(dir, "novel", &data.novel, OutputFormat::Csv));
            files.push((
                dir.join("truth.csv"),
                truth_csv(&data.truth, &data.base.class_ids()),
            ));
            out.commit(&files).stage("synth")?;
            let norm = |f: FeatureSet| if cmd.normalize { f.l2_normalized() } else { f };
            (norm(data.base), norm(data.novel))
        }
    };

    let (base_train, base_test) = if cmd.holdout_per_class > 0 {
        let (a, b) =
            holdout_per_class(&base, cmd.holdout_per_class, s(stream::HOLDOUT)).stage("holdout")?;
        (a, Some(b))
    } else {
        (base, None)
    };

    let base_path = dir.join("base_classifiers.vagc");
    let model_path = dir.join("model.vagm");
    let weights = if cmd.resume && base_path.exists() {
        out.note(format!("reusing {}", base_path.display()));
        read(&base_path)
            .and_then(|b| decode_classifiers(&b))
            .and_then(|c| BaseWeights::from_classifiers(&c))
            .stage("resume")?
    } else {
        let lr = lr_config(&cmd.lr, s(stream::BASE));
        let weights = train_base_classifiers(&base_train, &lr).stage("train-base")?;
        let bytes = encode_classifiers(&weights.to_classifiers().stage("train-base")?);
        out.commit(&[(base_path, bytes)]).stage("train-base")?;
        weights
    };

    let model = if cmd.resume && model_path.exists() {
        out.note(format!("reusing {}", model_path.display()));
        let model = load_model(&model_path).stage("resume")?;
        if model.class_ids != weights.class_ids || model.weights != weights.w {
            return Err(StageError {
                stage: "resume",
                error: Error::Integrity(
                    "stored model was trained on different base classifiers".into(),
                ),
            });
        }
        model
    } else {
        let (model, graph) =
            embed_model(&base_train, &weights, &cmd.vager, s(stream::EMBED)).stage("embed")?;
        out.note(format!(
            "embedding: loss {:.6e} after {} iterations",
            model.stats.final_loss, model.stats.outer_iterations
        ));
        out.commit(&[
            (model_path, encode_model(&model)),
            (dir.join("graph.csv"), graph.into_bytes()),
        ])
        .stage("embed")?;
        model
    };

    let ctx = context(&base_train, model, 0.0).stage("transfer")?;
    let k = cmd.protocol.k.first().copied().unwrap_or(1);
    let shots = novel_shots(&novel, k, s(stream::SHOTS)).stage("transfer")?;
    let transferred = transfer_all(&ctx, &shots).stage("transfer")?;
    out.commit(&[(
        dir.join("transferred.vagc"),
        encode_classifiers(&transferred),
    )])
    .stage("transfer")?;

    let lambda = match cmd.strategy {
        Strategy::Tuning => cmd.protocol.tuning_lambda,
        _ => cmd.protocol.voting_lambda,
    };
    let fusion = FusionConfig::new(
        strategy(cmd.strategy),
        lambda,
        lr_config(&cmd.lr, s(stream::SHOTS)),
    );
    let fused =
        fuse_all(&transferred, &base_train, &shots, &fusion, s(stream::SHOTS)).stage("fuse")?;
    out.commit(&[(dir.join("fused.vagc"), encode_classifiers(&fused))])
        .stage("fuse")?;

    let pools = NegativePools {
        train: &base_train,
        test: base_test.as_ref(),
    };
    let eval_seed = s(stream::EVAL);
    let reports = run_protocol(
        &cmd.protocol,
        lr_config(&cmd.lr, eval_seed),
        pools,
        &novel,
        &ctx,
        eval_seed,
        out,
    )
    .stage("eval")?;
    out.commit(&report_outputs(dir, "report", &reports))
        .stage("eval")
}
