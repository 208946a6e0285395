use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{resolve, RunConfig};
use super::{Cli, Command, EmbedArgs, EvalArgs, TrainArgs, TransferArgs};
use crate::corpus::clients::{serialize_generator, IdentityTranslator, Logged, RequestLog};
use crate::corpus::{
    assemble, collect_qa, default_registry, generate_questions, load_corpus, paraphrase_and_expand,
    parse_registry, questionize, read_exclusions, save_corpus, CorpusTag, LlmEndpoint, QaPair,
    ValueId, ENGLISH,
};
use crate::encoder::{load_encoder, Embedding};
use crate::error::{Error, Result};
use crate::evalharness::{
    control_eval, evaluate, question_group, split_by_group, ControlReport, EvalItem, EvalReport,
};
use crate::par::Execution;
use crate::store::{EmbeddingStore, StoreRecord};
use crate::trainer::{
    embed_pairs, gradient_check_with, info_nce_loss, mi_lower_bound, train_with, Checkpoint,
    GradCheckOptions, StepRecord, TrainObserver,
};
use crate::valuemap::{
    compute_centroids, project_2d, render_svg, transfer_trajectory, value_distance,
    CheckpointEmbeddings, MapPoint, MapSidecar, Pca, TrajectoryPoint,
};

struct Context {
    config: RunConfig,
    out: PathBuf,
    command: &'static str,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Context {
    fn path(&self, p: &Path) -> PathBuf {
        resolve(&self.out, p)
    }

    fn reports_dir(&self) -> Result<PathBuf> {
        let dir = self.path(&self.config.paths.reports);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn input(&mut self, p: PathBuf) -> Result<PathBuf> {
        if !p.exists() {
            return Err(Error::Config(format!(
                "input {} does not exist",
                p.display()
            )));
        }
        self.inputs.push(p.clone());
        Ok(p)
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    fn write_text(&mut self, p: &Path, text: &str) -> Result<()> {
        std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
        self.output(p);
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    parallel: bool,
    seed: u64,
    config_digest: String,
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn file_digest(p: &Path) -> Result<String> {
    let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        let mut all = vec![p.clone()];
        // Sidecars travel with their primary file.
        for suffix in [".json", ".meta.json"] {
            let mut s = p.as_os_str().to_owned();
            s.push(suffix);
            let side = PathBuf::from(s);
            if side.exists() {
                all.push(side);
            }
        }
        for f in all {
            out.insert(f.display().to_string(), file_digest(&f)?);
        }
    }
    Ok(out)
}

fn write_manifest(ctx: &Context) -> Result<()> {
    let m = Manifest {
        command: ctx.command,
        version: env!("CARGO_PKG_VERSION"),
        parallel: Execution::default().is_parallel(),
        seed: ctx.config.seed,
        config_digest: ctx.config.digest(),
        config: &ctx.config,
        inputs: digests(&ctx.inputs)?,
        outputs: digests(&ctx.outputs)?,
    };
    let p = ctx.out.join(format!("manifest-{}.json", ctx.command));
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

pub(super) fn run(cli: Cli) -> Result<()> {
    if let Command::Selfcheck = cli.command {
        return selfcheck();
    }
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.seed_components();
    let command = match &cli.command {
        Command::BuildCorpus => "build-corpus",
        Command::Train(a) => {
            apply_train_overrides(&mut config, a);
            "train"
        }
        Command::Embed(_) => "embed",
        Command::Eval(a) => {
            if let Some(k) = a.k {
                config.eval.k = k;
            }
            "eval"
        }
        Command::Map => "map",
        Command::Transfer(_) => "transfer",
        Command::Selfcheck => unreachable!("handled above"),
    };
    config.validate()?;
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    eprintln!(
        "univar {} {command}; configuration in effect:\n{}",
        env!("CARGO_PKG_VERSION"),
        config.to_toml()
    );

    let mut ctx = Context {
        config,
        out: cli.out,
        command,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    match &cli.command {
        Command::BuildCorpus => build_corpus(&mut ctx)?,
        Command::Train(_) => train(&mut ctx)?,
        Command::Embed(a) => embed(&mut ctx, a)?,
        Command::Eval(a) => eval(&mut ctx, a)?,
        Command::Map => map(&mut ctx)?,
        Command::Transfer(a) => transfer(&mut ctx, a)?,
        Command::Selfcheck => unreachable!("handled above"),
    }
    write_manifest(&ctx)
}

fn apply_train_overrides(config: &mut RunConfig, a: &TrainArgs) {
    if let Some(l) = a.lambda {
        config.sampler.lambda = l;
    }
    if let Some(t) = a.tau {
        config.train.temperature = t;
    }
    if let Some(b) = a.batch_size {
        config.sampler.batch_size = b;
    }
}

fn build_corpus(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.config.clone();
    let exec = Execution::default();
    let registry = match &cfg.paths.registry {
        Some(p) => {
            let p = ctx.input(ctx.path(p))?;
            parse_registry(&std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?
        }
        None => default_registry()?,
    };
    let values = if cfg.build.values.is_empty() {
        registry.clone()
    } else {
        cfg.build
            .values
            .iter()
            .map(|id| {
                registry
                    .iter()
                    .find(|v| &v.value_id == id)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("value {id} is not in the registry")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let roster = cfg.build.roster.resolve()?;
    let log = RequestLog::new();

    let qname = &cfg.build.question_generator;
    let qspec = cfg.clients.generators.get(qname).ok_or_else(|| {
        Error::Config(format!(
            "question generator {qname:?} is not under [clients.generators]"
        ))
    })?;
    let qgen = serialize_generator(Logged::wrap(qspec.build(qname, cfg.seed)?, &log));

    let n = cfg.build.questions_per_value;
    let mut scenarios = Vec::new();
    for group in exec.map(&values, |v| generate_questions(v, qgen.as_ref(), n)) {
        scenarios.extend(group?);
    }
    let questions = questionize(&scenarios, qgen.as_ref(), exec)?;
    let questions = paraphrase_and_expand(&questions, qgen.as_ref(), cfg.build.paraphrases, exec)?;

    let mut endpoints = BTreeMap::new();
    for llm in roster.0.keys() {
        let spec = cfg.clients.generators.get(llm).ok_or_else(|| {
            Error::Config(format!(
                "roster LLM {llm:?} has no entry under [clients.generators]"
            ))
        })?;
        endpoints.insert(
            llm.clone(),
            LlmEndpoint {
                client: Logged::wrap(spec.build(llm, cfg.seed)?, &log),
                chat_template: spec.chat_template().map(str::to_string),
            },
        );
    }
    let needs_translation = roster.0.values().flatten().any(|l| l != ENGLISH);
    let translator: std::sync::Arc<dyn crate::corpus::clients::Translator> =
        match &cfg.clients.translator {
            Some(t) => t.build()?,
            None if !needs_translation => std::sync::Arc::new(IdentityTranslator),
            None => {
                return Err(Error::Config(
                    "the roster has non-English languages but [clients.translator] is missing"
                        .into(),
                ))
            }
        };
    let report = collect_qa(
        &questions,
        &roster,
        &endpoints,
        translator,
        cfg.build.corpus_tag,
        exec,
    )?;
    let exclusions = match &cfg.paths.exclusions {
        Some(p) => read_exclusions(&ctx.input(ctx.path(p))?)?,
        None => BTreeSet::new(),
    };
    let n_questions = questions.len();
    let failures = report.failures;
    let corpus = assemble(registry, roster, questions, report.pairs, &exclusions)?;

    let corpus_path = ctx.path(&cfg.paths.corpus);
    if let Some(dir) = corpus_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_corpus(&corpus, &corpus_path)?;
    ctx.output(&corpus_path);
    let log_path = ctx.out.join("requests.jsonl");
    ctx.write_text(&log_path, &log.to_jsonl())?;
    let fail_text: String = failures
        .iter()
        .map(|f| {
            serde_json::json!({
                "question_id": f.question_id,
                "value_id": f.value_id.to_string(),
                "error": f.error,
            })
            .to_string()
                + "\n"
        })
        .collect();
    let fail_path = ctx.out.join("failures.jsonl");
    ctx.write_text(&fail_path, &fail_text)?;
    println!(
        "{n_questions} question records, {} QA pairs, {} failed requests -> {}",
        corpus.qa_pairs.len(),
        failures.len(),
        corpus_path.display()
    );
    Ok(())
}

struct LogObserver {
    log: BufWriter<File>,
    checkpoint_dir: PathBuf,
    written: Vec<PathBuf>,
}

impl TrainObserver for LogObserver {
    fn on_step(&mut self, r: &StepRecord) -> Result<()> {
        let line = serde_json::to_string(r).expect("step record serializes");
        writeln!(self.log, "{line}").map_err(|e| Error::io(&self.checkpoint_dir, e))?;
        if r.step.is_multiple_of(100) {
            eprintln!(
                "step {:>6}  lr {:.3e}  loss {:.6}  mi_bound {:.4}",
                r.step, r.lr, r.loss, r.mi_bound
            );
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, c: &Checkpoint, is_final: bool) -> Result<()> {
        if is_final {
            return Ok(());
        }
        std::fs::create_dir_all(&self.checkpoint_dir)
            .map_err(|e| Error::io(&self.checkpoint_dir, e))?;
        let p = self.checkpoint_dir.join(format!("step-{:06}.uvar", c.step));
        c.save(&p)?;
        self.written.push(p);
        Ok(())
    }
}

fn train(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.config.clone();
    let corpus_path = ctx.input(ctx.path(&cfg.paths.corpus))?;
    let corpus = load_corpus(&corpus_path)?;
    let train_part = corpus.filter(|p| p.corpus_tag == CorpusTag::Train);
    eprintln!(
        "training on {} of {} QA pairs (corpus_tag = train)",
        train_part.qa_pairs.len(),
        corpus.qa_pairs.len()
    );
    let log_path = ctx.out.join("train_log.jsonl");
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut obs = LogObserver {
        log: BufWriter::new(file),
        checkpoint_dir: ctx.out.join("checkpoints"),
        written: Vec::new(),
    };
    let ckpt = train_with(
        &train_part,
        &cfg.train,
        &cfg.sampler,
        &cfg.encoder,
        &mut obs,
    )?;
    obs.log.flush().map_err(|e| Error::io(&log_path, e))?;
    ctx.output(&log_path);
    for p in std::mem::take(&mut obs.written) {
        ctx.output(&p);
    }
    let out = ctx.path(&cfg.paths.checkpoint);
    ckpt.save(&out)?;
    ctx.output(&out);
    let last = ckpt.loss_history.last().copied().unwrap_or(f64::NAN);
    let val = ckpt
        .validation
        .last()
        .map_or_else(|| "n/a".to_string(), |v| format!("{:.6}", v.loss));
    println!(
        "trained {} steps: loss {last:.6}, validation loss {val}, parameters sha256 {} -> {}",
        ckpt.step,
        ckpt.encoder.checksum(),
        out.display()
    );
    Ok(())
}

fn embed(ctx: &mut Context, args: &EmbedArgs) -> Result<()> {
    let cfg = ctx.config.clone();
    let ckpt = ctx.input(ctx.path(&cfg.paths.checkpoint))?;
    let encoder = load_encoder(&ckpt)?;
    let sources: Vec<PathBuf> = if args.corpus.is_empty() {
        vec![ctx.path(&cfg.paths.corpus)]
    } else {
        args.corpus.iter().map(|p| ctx.path(p)).collect()
    };
    let mut pairs: Vec<QaPair> = Vec::new();
    let mut seen = BTreeSet::new();
    for src in sources {
        let src = ctx.input(src)?;
        for p in load_corpus(&src)?.qa_pairs {
            if !seen.insert(p.qa_id.clone()) {
                return Err(Error::Schema(format!(
                    "qa_id {} appears in more than one corpus",
                    p.qa_id
                )));
            }
            pairs.push(p);
        }
    }
    let embeddings = embed_pairs(&encoder, &pairs);
    let records = pairs
        .iter()
        .map(|p| StoreRecord {
            qa_id: p.qa_id.clone(),
            value_id: p.value_id.clone(),
            corpus_tag: p.corpus_tag,
        })
        .collect();
    let store = EmbeddingStore::from_embeddings(&embeddings, records)?;
    let out = ctx.path(&cfg.paths.store);
    store.save(&out)?;
    ctx.output(&out);
    println!(
        "{} embeddings of dimension {} -> {}",
        store.len(),
        store.dim(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    encoder_checksum: String,
    store_rows: usize,
    report: EvalReport,
    control: Option<ControlReport>,
}

fn eval(ctx: &mut Context, _args: &EvalArgs) -> Result<()> {
    let cfg = ctx.config.clone();
    let encoder = load_encoder(&ctx.input(ctx.path(&cfg.paths.checkpoint))?)?;
    let store = EmbeddingStore::load(&ctx.input(ctx.path(&cfg.paths.store))?)?;
    if store.dim() != encoder.config().embed_dim {
        return Err(Error::Dimension(format!(
            "store rows have dimension {} but the checkpoint embeds to {}",
            store.dim(),
            encoder.config().embed_dim
        )));
    }
    let exec = Execution::default();
    let eval_cfg = cfg.eval_config();
    let items = store.eval_items();
    let mut value_items = Vec::new();
    let mut value_groups = Vec::new();
    let mut nonvalue = Vec::new();
    for (it, r) in items.into_iter().zip(store.records()) {
        if it.corpus_tag == CorpusTag::Nonvalue {
            nonvalue.push(it);
        } else {
            value_items.push(it);
            value_groups.push(question_group(&r.qa_id));
        }
    }
    let report = evaluate(&value_items, &value_groups, &eval_cfg, exec)?;
    let control = if nonvalue.is_empty() {
        None
    } else {
        let (r, q) = split_by_group(&value_groups, eval_cfg.query_fraction, eval_cfg.seed);
        let reference: Vec<EvalItem> = r.iter().map(|&i| value_items[i].clone()).collect();
        let queries: Vec<EvalItem> = q.iter().map(|&i| value_items[i].clone()).collect();
        Some(control_eval(
            &nonvalue, &queries, &reference, eval_cfg.k, exec,
        )?)
    };

    println!("corpus        n_query   kNN acc   kNN F1    acc@1     acc@5     acc@10");
    for (tag, r) in &report.per_corpus {
        println!(
            "{tag:<13} {:>7}   {:>7.4}   {:>7.4}   {:>7.4}   {:>7.4}   {:>7.4}",
            r.query_items,
            r.knn.accuracy,
            r.knn.macro_f1,
            r.linear_probe.at1,
            r.linear_probe.at5,
            r.linear_probe.at10
        );
    }
    println!(
        "average                 {:>7.4}   {:>7.4}   {:>7.4}   {:>7.4}   {:>7.4}",
        report.knn_accuracy,
        report.knn_macro_f1,
        report.probe_acc_at.at1,
        report.probe_acc_at.at5,
        report.probe_acc_at.at10
    );
    println!(
        "balanced average accuracy {:.4}; random baseline {:.4} over {} labels",
        report.balanced_average, report.baselines.random, report.baselines.labels
    );
    if let Some(c) = &control {
        println!(
            "non-value control: value acc {:.4}, non-value acc {:.4}, gap {:.4}",
            c.value.accuracy, c.nonvalue.accuracy, c.gap
        );
    }
    let out = EvalOutput {
        encoder_checksum: encoder.checksum(),
        store_rows: store.len(),
        report,
        control,
    };
    let p = ctx.reports_dir()?.join("eval_report.json");
    let mut text = serde_json::to_string_pretty(&out).expect("report serializes");
    text.push('\n');
    ctx.write_text(&p, &text)
}

fn map(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.config.clone();
    let store = EmbeddingStore::load(&ctx.input(ctx.path(&cfg.paths.store))?)?;
    let points: Vec<MapPoint> = (0..store.len())
        .map(|i| MapPoint {
            qa_id: store.records()[i].qa_id.clone(),
            value_id: store.records()[i].value_id.clone(),
            embedding: store.embedding(i),
        })
        .collect();
    let projected = project_2d(&points, &Pca, cfg.seed)?;
    let sidecar = MapSidecar::new("pca", cfg.seed, store.dim(), &projected);
    let dir = ctx.reports_dir()?;
    let csv_path = dir.join("map.csv");
    let side = crate::valuemap::write_map(&csv_path, &projected, &sidecar)?;
    ctx.output(&csv_path);
    ctx.output(&side);
    let svg = dir.join("map.svg");
    ctx.write_text(&svg, &render_svg(&projected, &sidecar))?;

    let items: Vec<EvalItem> = store.eval_items();
    let table = compute_centroids(&items)?;
    let ids: Vec<&ValueId> = table.value_ids().collect();
    let mut dist = String::from("a,b,distance\n");
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            dist.push_str(&format!("{a},{b},{}\n", value_distance(&table, a, b)?));
        }
    }
    let dpath = dir.join("distances.csv");
    ctx.write_text(&dpath, &dist)?;
    println!(
        "{} points, {} value ids -> {}",
        projected.len(),
        table.len(),
        csv_path.display()
    );
    Ok(())
}

fn parse_id(s: &str) -> Result<ValueId> {
    s.parse()
}

fn transfer(ctx: &mut Context, args: &TransferArgs) -> Result<()> {
    let subject = parse_id(&args.subject)?;
    let source = parse_id(&args.source)?;
    let target = parse_id(&args.target)?;
    if !args.steps.is_empty() && args.steps.len() != args.stores.len() {
        return Err(Error::Config(format!(
            "{} step labels for {} stores",
            args.steps.len(),
            args.stores.len()
        )));
    }
    let reference = EmbeddingStore::load(&ctx.input(ctx.path(&args.reference))?)?;
    let table = compute_centroids(&reference.eval_items())?;
    let mut sets = Vec::new();
    for (i, p) in args.stores.iter().enumerate() {
        let s = EmbeddingStore::load(&ctx.input(ctx.path(p))?)?;
        sets.push(CheckpointEmbeddings {
            step: args.steps.get(i).copied().unwrap_or(i),
            items: s.eval_items(),
        });
    }
    let traj: Vec<TrajectoryPoint> =
        transfer_trajectory(&sets, &subject, &table, &source, &target)?;
    let mut csv = String::from("step,d_source,d_target\n");
    println!("step      d_source    d_target");
    for t in &traj {
        csv.push_str(&format!("{},{},{}\n", t.step, t.d_source, t.d_target));
        println!("{:<9} {:<11.6} {:.6}", t.step, t.d_source, t.d_target);
    }
    let p = ctx.reports_dir()?.join("trajectory.csv");
    ctx.write_text(&p, &csv)
}

fn check(name: &str, value: f64, expected: f64, tol: f64, ok: &mut bool) {
    let pass = (value - expected).abs() <= tol;
    *ok &= pass;
    println!(
        "{name}: {value:.6} (expected {expected:.6}) {}",
        if pass { "pass" } else { "FAIL" }
    );
}

fn selfcheck() -> Result<()> {
    let mut ok = true;
    let e = |v: &[f64]| Embedding::new(v.to_vec());
    let z1 = [e(&[1.0, 0.0]), e(&[0.0, 1.0])];
    check(
        "InfoNCE, B=2 orthogonal pairs, tau=1",
        info_nce_loss(&z1, &z1, 1.0)?,
        (1.0 + (-1.0f64).exp()).ln(),
        1e-7,
        &mut ok,
    );
    check(
        "InfoNCE, B=1",
        info_nce_loss(&z1[..1], &z1[..1], 0.05)?,
        0.0,
        0.0,
        &mut ok,
    );
    let same = vec![e(&[0.6, 0.8]); 4];
    check(
        "InfoNCE, B=4 identical views, tau=0.05",
        info_nce_loss(&same, &same, 0.05)?,
        4f64.ln(),
        1e-7,
        &mut ok,
    );
    check(
        "MI bound at the B=4 identical-view loss",
        mi_lower_bound(info_nce_loss(&same, &same, 0.05)?, 4),
        0.0,
        1e-7,
        &mut ok,
    );

    let synth = crate::synth::SyntheticCorpus::generate(&crate::synth::SynthConfig {
        value_ids: 4,
        pairs_per_id: 8,
        ..Default::default()
    });
    let enc = crate::encoder::Encoder::init(
        crate::encoder::EncoderConfig {
            feature_dim: 64,
            hidden_dim: 16,
            embed_dim: 8,
            ..Default::default()
        },
        11,
    )?;
    let sc = crate::views::SamplerConfig {
        batch_size: 4,
        lambda: 3,
        ..Default::default()
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    let batch = crate::views::make_training_batch(&synth.corpus, &sc, &mut rng)?;
    let g = gradient_check_with(&enc, &batch, &GradCheckOptions::default())?;
    let pass = g.max_rel_error <= 1e-4;
    ok &= pass;
    println!(
        "gradient check, B=4, d=8, eps=1e-5, {} coordinates: max relative error {:.3e} {}",
        g.checked,
        g.max_rel_error,
        if pass { "pass" } else { "FAIL" }
    );
    if ok {
        println!("selfcheck passed");
        Ok(())
    } else {
        Err(Error::Config("selfcheck failed".into()))
    }
}
