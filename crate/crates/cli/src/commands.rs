use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ahgnn::autodiff::Real;
use ahgnn::metapath::homophily_report;
use ahgnn::model::{read_checkpoint, write_checkpoint, Model, ModelError, ModelOutput};
use ahgnn::propagate::{self, read_cache_checked, write_cache, CacheExpectation};
use ahgnn::spectral::{verify_random_graphs, SuiteSpec, Verdict, MAX_NODES};
use ahgnn::synth::{
    generate_toy, rewire_to_homophily, RewireSpec, SynthError, ToySpec, HOMOPHILY_LEN,
};
use ahgnn::train::{
    self as fit, beta_csv, evaluate, gamma_csv, metrics_csv, split_rows, Metrics, Precision,
    StopReason, TrainConfig, TrainError,
};
use ahgnn::{load_dataset, save_dataset, HeteroGraph, MessageCache, Split};
use serde::Serialize;
use serde_json::json;

use crate::run::{
    default_cache_path, failed, invalid, require_dir, require_file, write_file, write_run_json,
    Classify, Failure, Outcome, RunContext,
};
use crate::{
    AnalyzeArgs, EvalArgs, GradCheckArgs, PrecisionArg, PrecomputeArgs, SpectralArgs, SynthArgs,
    TrainArgs, TrainOverrides,
};

const SPLITS: [(Split, &str); 3] = [
    (Split::Train, "train"),
    (Split::Val, "val"),
    (Split::Test, "test"),
];

fn load(data: &Path) -> Outcome<HeteroGraph> {
    require_dir(data, "dataset")?;
    load_dataset(data).invalid()
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Autodiff(_) => Failure::Failed(e.into()),
        TrainError::Model(ModelError::Io { .. }) => Failure::Failed(e.into()),
        _ => Failure::Invalid(e.into()),
    }
}

fn propagate_failure(e: propagate::PropagateError) -> Failure {
    match e {
        propagate::PropagateError::Io { .. } => Failure::Failed(e.into()),
        _ => Failure::Invalid(e.into()),
    }
}

/// Reads the cache at `explicit`, or the default location for this graph,
/// building and writing the latter when it is missing.
fn resolve_cache(
    ctx: &RunContext,
    graph: &HeteroGraph,
    explicit: Option<&Path>,
    l1: usize,
    l2: usize,
) -> Outcome<(MessageCache, PathBuf)> {
    let expect = CacheExpectation {
        fingerprint: graph.fingerprint(),
        l1,
        l2,
    };
    if let Some(path) = explicit {
        require_file(path, "cache")?;
        let cache = read_cache_checked(path, &expect).map_err(propagate_failure)?;
        return Ok((cache, path.to_path_buf()));
    }
    let path = default_cache_path(expect.fingerprint, l1, l2);
    if path.is_file() {
        if let Ok(cache) = read_cache_checked(&path, &expect) {
            ctx.note(format!("using cache {}", path.display()));
            return Ok((cache, path));
        }
    }
    ctx.note(format!("building cache {}", path.display()));
    let cache = propagate::precompute(graph, l1, l2).map_err(propagate_failure)?;
    write_cache(&cache, &path).map_err(propagate_failure)?;
    Ok((cache, path))
}

fn resolve_config(ctx: &RunContext, o: &TrainOverrides, base: TrainConfig) -> Outcome<TrainConfig> {
    let mut c = match &o.config {
        Some(path) => {
            require_file(path, "config")?;
            let text = fs::read_to_string(path)
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
        None => base,
    };
    macro_rules! apply {
        ($($field:ident <- $flag:ident),* $(,)?) => {
            $(if let Some(v) = o.$flag { c.$field = v; })*
        };
    }
    apply!(
        lr <- lr,
        weight_decay <- weight_decay,
        max_epochs <- epochs,
        hidden <- hidden,
        heads <- heads,
        l1 <- l1,
        l2 <- l2,
        alpha_init <- alpha,
        lambda1 <- lambda1,
        lambda2 <- lambda2,
        patience <- patience,
        batch_size <- batch_size,
    );
    if let Some(p) = o.precision {
        c.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if o.fixed_gamma {
        c.fixed_gamma = true;
    }
    c.seed = ctx.seed_or(c.seed);
    c.validate().map_err(train_failure)?;
    Ok(c)
}

fn split_metrics(graph: &HeteroGraph, predictions: &[usize]) -> Vec<(&'static str, Metrics)> {
    SPLITS
        .iter()
        .map(|&(s, name)| {
            (
                name,
                evaluate(predictions, graph.labels(), &split_rows(graph, s)),
            )
        })
        .collect()
}

fn split_name(s: Split) -> &'static str {
    SPLITS
        .iter()
        .find(|(t, _)| *t == s)
        .map_or("none", |(_, n)| n)
}

fn predictions_csv(graph: &HeteroGraph, predictions: &[usize]) -> String {
    let mut out = String::from("node,label,prediction,split\n");
    for (i, p) in predictions.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{p},{}",
            graph.labels()[i],
            split_name(graph.splits()[i])
        )
        .expect("write to string");
    }
    out
}

fn eval_csv(rows: &[(&str, Metrics)]) -> String {
    let mut out = String::from("split,macro_f1,micro_f1\n");
    for (name, m) in rows {
        writeln!(out, "{name},{:.6},{:.6}", m.macro_f1, m.micro_f1).expect("write to string");
    }
    out
}

fn infer<T: Real>(model: &Model<T>, cache: &MessageCache, batch: usize) -> Outcome<ModelOutput<T>> {
    model.forward(cache, batch).map_err(|e| match e {
        ModelError::Autodiff(_) => Failure::Failed(e.into()),
        _ => Failure::Invalid(e.into()),
    })
}

pub fn analyze(ctx: &RunContext, args: &AnalyzeArgs) -> Outcome {
    let graph = load(&args.data)?;
    let report = homophily_report(&graph, args.max_len).invalid()?;
    write_file(&args.out.join("homophily_report.csv"), report.to_csv())?;
    match report.graph_level {
        Some(h) => println!("{} meta-paths, graph homophily {h:.4}", report.paths.len()),
        None => println!(
            "{} meta-paths, graph homophily undefined",
            report.paths.len()
        ),
    }
    write_run_json(
        &args.out,
        "analyze",
        ctx,
        ctx.seed_or(0),
        json!({ "data": args.data, "max_len": args.max_len }),
        &["homophily_report.csv"],
    )
}

pub fn precompute(ctx: &RunContext, args: &PrecomputeArgs) -> Outcome {
    let graph = load(&args.data)?;
    if args.l1 == 0 || args.l2 == 0 {
        return Err(invalid("--l1 and --l2 must be at least 1"));
    }
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| default_cache_path(graph.fingerprint(), args.l1, args.l2));
    let cache = propagate::precompute(&graph, args.l1, args.l2).map_err(propagate_failure)?;
    write_cache(&cache, &path).map_err(propagate_failure)?;
    println!(
        "{} feature paths, {} label paths -> {}",
        cache.feature_entries.len(),
        cache.label_entries.len(),
        path.display()
    );
    let dir = path
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_run_json(
        &dir,
        "precompute",
        ctx,
        ctx.seed_or(0),
        json!({
            "data": args.data,
            "l1": args.l1,
            "l2": args.l2,
            "cache": path,
            "fingerprint": format!("{:016x}", graph.fingerprint()),
        }),
        &[name.as_str()],
    )
}

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: usize,
    epochs: usize,
    stop: StopReason,
    metrics: Vec<SplitMetrics>,
}

#[derive(Serialize)]
struct SplitMetrics {
    split: &'static str,
    macro_f1: f64,
    micro_f1: f64,
}

fn summarize(rows: &[(&'static str, Metrics)]) -> Vec<SplitMetrics> {
    rows.iter()
        .map(|(split, m)| SplitMetrics {
            split,
            macro_f1: m.macro_f1,
            micro_f1: m.micro_f1,
        })
        .collect()
}

pub fn train(ctx: &RunContext, args: &TrainArgs) -> Outcome {
    let graph = load(&args.data)?;
    let config = resolve_config(ctx, &args.settings, TrainConfig::default())?;
    let (cache, cache_path) =
        resolve_cache(ctx, &graph, args.cache.as_deref(), config.l1, config.l2)?;

    let outcome = fit::train(&graph, &cache, &config).map_err(train_failure)?;
    if ctx.verbosity > 1 {
        for r in &outcome.history {
            eprintln!(
                "epoch {:>4} loss {:.6} val macro {:.4} micro {:.4}",
                r.epoch, r.loss, r.val_macro, r.val_micro
            );
        }
    }

    let (beta, predictions) = match config.precision {
        Precision::F32 => {
            let m = outcome.model.cast::<f32>();
            let out = infer(&m, &cache, config.batch_size)?;
            (beta_csv(&m.layout, &out), out.predictions())
        }
        Precision::F64 => {
            let out = infer(&outcome.model, &cache, config.batch_size)?;
            (beta_csv(&outcome.model.layout, &out), out.predictions())
        }
    };
    let scores = split_metrics(&graph, &predictions);

    let out = &args.out;
    write_file(&out.join("metrics.csv"), metrics_csv(&outcome.history))?;
    write_file(&out.join("gamma.csv"), gamma_csv(&outcome.model))?;
    write_file(&out.join("beta.csv"), beta)?;
    let echo = json!({
        "config": config,
        "fingerprint": format!("{:016x}", graph.fingerprint()),
    });
    write_checkpoint(&outcome.model, &echo, out.join("model.ahgm")).failed()?;
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.len(),
        stop: outcome.stop,
        metrics: summarize(&scores),
    };
    let mut text = serde_json::to_string_pretty(&summary).failed()?;
    text.push('\n');
    write_file(&out.join("summary.json"), text)?;
    write_run_json(
        out,
        "train",
        ctx,
        config.seed,
        json!({ "data": args.data, "cache": cache_path, "train": config }),
        &[
            "metrics.csv",
            "gamma.csv",
            "beta.csv",
            "model.ahgm",
            "summary.json",
        ],
    )?;

    for (name, m) in &scores {
        println!(
            "{name:<5} macro-F1 {:.4} micro-F1 {:.4}",
            m.macro_f1, m.micro_f1
        );
    }
    println!(
        "best epoch {} of {}",
        outcome.best_epoch,
        outcome.history.len()
    );
    if let StopReason::Diverged { epoch } = outcome.stop {
        return Err(failed(format!(
            "loss became non-finite at epoch {epoch}; kept the model from epoch {}",
            outcome.best_epoch
        )));
    }
    Ok(())
}

pub fn eval(ctx: &RunContext, args: &EvalArgs) -> Outcome {
    let graph = load(&args.data)?;
    require_file(&args.checkpoint, "checkpoint")?;
    let ckpt = read_checkpoint(&args.checkpoint).invalid()?;
    let config: TrainConfig = ckpt
        .echo
        .get("config")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| invalid(format!("checkpoint settings: {e}")))?
        .unwrap_or_default();
    let trained_on = ckpt
        .echo
        .get("fingerprint")
        .and_then(|v| v.as_str())
        .unwrap_or_default();
    if trained_on != format!("{:016x}", graph.fingerprint()) {
        ctx.note("checkpoint was trained on a different dataset");
    }
    let (cache, cache_path) =
        resolve_cache(ctx, &graph, args.cache.as_deref(), config.l1, config.l2)?;
    let output = infer(&ckpt.model, &cache, args.batch_size)?;
    let predictions = output.predictions();
    let scores = split_metrics(&graph, &predictions);

    write_file(&args.out.join("eval.csv"), eval_csv(&scores))?;
    write_file(
        &args.out.join("predictions.csv"),
        predictions_csv(&graph, &predictions),
    )?;
    for (name, m) in &scores {
        println!(
            "{name:<5} macro-F1 {:.4} micro-F1 {:.4}",
            m.macro_f1, m.micro_f1
        );
    }
    write_run_json(
        &args.out,
        "eval",
        ctx,
        config.seed,
        json!({
            "data": args.data,
            "checkpoint": args.checkpoint,
            "cache": cache_path,
            "batch_size": args.batch_size,
        }),
        &["eval.csv", "predictions.csv"],
    )
}

fn synth_failure(e: SynthError) -> Failure {
    match e {
        SynthError::Graph(_) | SynthError::MetaPath(_) => Failure::Failed(e.into()),
        _ => Failure::Invalid(e.into()),
    }
}

#[derive(Serialize)]
struct SynthReport {
    target_h: f64,
    initial_h: Option<f64>,
    achieved_h: f64,
    converged: bool,
    iterations: Option<usize>,
    accepted: Option<usize>,
}

pub fn synth(ctx: &RunContext, args: &SynthArgs) -> Outcome {
    let seed = ctx.seed_or(0);
    if !(args.tolerance.is_finite() && args.tolerance >= 0.0) {
        return Err(invalid(format!(
            "--tolerance must be non-negative, got {}",
            args.tolerance
        )));
    }
    let (graph, report, config) = match &args.data {
        Some(data) => {
            let source = load(data)?;
            if fs::canonicalize(data).ok() == fs::canonicalize(&args.out).ok() {
                return Err(invalid("--out must differ from --data"));
            }
            let spec = RewireSpec {
                target_h: args.target_h,
                seed,
                max_iterations: args.max_iterations,
                tolerance: args.tolerance,
            };
            let out = rewire_to_homophily(&source, &spec).map_err(synth_failure)?;
            let report = SynthReport {
                target_h: args.target_h,
                initial_h: Some(out.initial_h),
                achieved_h: out.achieved_h,
                converged: out.converged,
                iterations: Some(out.iterations),
                accepted: Some(out.accepted),
            };
            (out.graph, report, json!({ "data": data, "rewire": spec }))
        }
        None => {
            let spec = ToySpec {
                num_target: args.nodes,
                num_classes: args.classes,
                homophily: args.target_h,
                node_types: args.types,
                num_links: args.links,
                link_size: args.link_size,
                feature_dim: args.feature_dim,
                signal: args.signal,
                noise: args.noise,
                seed,
                tolerance: args.tolerance,
                max_iterations: args.max_iterations,
                ..ToySpec::default()
            };
            let out = generate_toy(&spec).map_err(synth_failure)?;
            let report = SynthReport {
                target_h: args.target_h,
                initial_h: None,
                achieved_h: out.homophily,
                converged: out.converged,
                iterations: None,
                accepted: None,
            };
            (out.graph, report, json!({ "toy": spec }))
        }
    };

    save_dataset(&graph, &args.out).failed()?;
    let mut text = serde_json::to_string_pretty(&report).failed()?;
    text.push('\n');
    write_file(&args.out.join("synth.json"), text)?;
    write_run_json(
        &args.out,
        "synth",
        ctx,
        seed,
        config,
        &["manifest.json", "synth.json"],
    )?;
    println!(
        "homophily {:.4} (L={HOMOPHILY_LEN}, requested {:.4}) -> {}",
        report.achieved_h,
        args.target_h,
        args.out.display()
    );
    if !report.converged {
        return Err(failed(format!(
            "stopped {:.4} away from the requested homophily (tolerance {}); the dataset was still written",
            (report.achieved_h - args.target_h).abs(),
            args.tolerance
        )));
    }
    Ok(())
}

fn verdict_cell(v: &Verdict) -> String {
    match v {
        Verdict::Pass => "pass".into(),
        Verdict::Fail(m) => format!("FAIL: {m}"),
        Verdict::Precondition(m) => format!("PRECONDITION: {m}"),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

pub fn verify_spectral(ctx: &RunContext, args: &SpectralArgs) -> Outcome {
    ahgnn::model::init_gamma(args.alpha, args.hops).invalid()?;
    if args.hops == 0 {
        return Err(invalid("--hops must be at least 1"));
    }
    if !(2..=MAX_NODES).contains(&args.n) {
        return Err(invalid(format!(
            "--n must lie in 2..={MAX_NODES}, got {}",
            args.n
        )));
    }
    if args.trials == 0 {
        return Err(invalid("--trials must be at least 1"));
    }
    let spec = SuiteSpec {
        max_nodes: args.n,
        trials: args.trials,
        alpha: args.alpha,
        hops: args.hops,
        seed: ctx.seed_or(0),
    };
    let report = verify_random_graphs(&spec).failed()?;

    let mut csv =
        String::from("trial,nodes,edges,lambda1,worst_lambda,worst_margin,residual,verdict\n");
    println!(
        "{:>5} {:>5} {:>5} {:>10} {:>10} {:>10}  verdict",
        "trial", "nodes", "edges", "lambda1", "worst_lam", "margin"
    );
    for (i, t) in report.trials.iter().enumerate() {
        let r = &t.report;
        let cell = verdict_cell(&r.verdict);
        println!(
            "{i:>5} {:>5} {:>5} {:>10} {:>10} {:>10.6}  {cell}",
            t.nodes,
            t.edges,
            opt(r.lambda1),
            opt(r.worst_lambda),
            r.worst_margin
        );
        writeln!(
            csv,
            "{i},{},{},{},{},{:.6},{:.3e},\"{}\"",
            t.nodes,
            t.edges,
            opt(r.lambda1),
            opt(r.worst_lambda),
            r.worst_margin,
            t.max_residual,
            cell.replace('"', "'")
        )
        .expect("write to string");
    }
    let gamma: Vec<String> = report.gamma.iter().map(|g| format!("{g:.6}")).collect();
    println!("gamma [{}]", gamma.join(", "));
    println!(
        "worst margin {:.6}, largest lambda1 {:.6}",
        report.worst_margin(),
        report.worst_lambda1()
    );
    write_file(&args.out.join("spectral.csv"), csv)?;
    write_run_json(
        &args.out,
        "verify-spectral",
        ctx,
        spec.seed,
        &spec,
        &["spectral.csv"],
    )?;

    let failures = report.trials.iter().filter(|t| !t.report.passed()).count();
    if report.passed() {
        println!("all {} trials passed", report.trials.len());
        Ok(())
    } else {
        Err(failed(format!(
            "{failures} of {} trials failed",
            report.trials.len()
        )))
    }
}

pub fn grad_check(ctx: &RunContext, args: &GradCheckArgs) -> Outcome {
    let seed = ctx.seed_or(0);
    let graph = match &args.data {
        Some(data) => load(data)?,
        None => {
            generate_toy(&ToySpec {
                num_target: 24,
                node_types: 3,
                feature_dim: 6,
                seed,
                ..ToySpec::default()
            })
            .map_err(synth_failure)?
            .graph
        }
    };
    let base = TrainConfig {
        hidden: 8,
        heads: 2,
        l1: 2,
        l2: 2,
        lambda1: 0.05,
        lambda2: 0.05,
        precision: Precision::F64,
        ..TrainConfig::default()
    };
    let config = resolve_config(ctx, &args.settings, base)?;
    if args.samples == 0 || !(args.eps.is_finite() && args.eps > 0.0) {
        return Err(invalid("--samples and --eps must be positive"));
    }
    let cache = propagate::precompute(&graph, config.l1, config.l2).map_err(propagate_failure)?;
    let report = fit::loss_grad_check(&graph, &cache, &config, args.samples, args.eps)
        .map_err(train_failure)?;
    println!(
        "{} coordinates, max relative error {:.3e} (tolerance {:.1e})",
        report.coordinates, report.max_rel_error, args.tol
    );
    write_run_json(
        &args.out,
        "grad-check",
        ctx,
        config.seed,
        json!({
            "data": args.data,
            "train": config,
            "samples": args.samples,
            "eps": args.eps,
            "tol": args.tol,
            "max_rel_error": report.max_rel_error,
            "coordinates": report.coordinates,
        }),
        &[],
    )?;
    if report.max_rel_error <= args.tol {
        Ok(())
    } else {
        Err(failed("analytic and numeric gradients disagree"))
    }
}
