//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use treecon::dataset::{generate_dataset, load_dataset, sample_name, DatasetOptions};
use treecon::gradcheck::{self, GradcheckConfig};
use treecon::graph::SpatialGraph;
use treecon::lsystem::LSystemSpec;
use treecon::metrics::{evaluate_dataset, graph_files, MetricsConfig};
use treecon::mst::{project, EdgeProbabilities};
use treecon::raster::{rasterize, to_svg, RenderOptions};
use treecon::scorer::ScorerModel;
use treecon::sfs::{format_sci, SfsConfig};
use treecon::train::{infer, split_indices, train, Sample};
use treecon::{Error, Result};

use crate::config::{self, read_text, snapshot, write_bytes, FileConfig};
use crate::{
    Cli, Command, EvalArgs, GenArgs, GradcheckArgs, InferArgs, ProjectArgs, RenderArgs, TrainArgs,
};

const DEFAULT_COUNT: usize = 100;
const DEFAULT_VAL_FRACTION: f64 = 0.1;

struct Ctx<'a> {
    seed: u64,
    out: &'a Path,
    quiet: bool,
    file: FileConfig,
}

impl Ctx<'_> {
    fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let file = config::load(cli.global.config.as_deref())?;
    let ctx = Ctx {
        seed: cli.global.seed.or(file.seed).unwrap_or(0),
        out: &cli.global.out,
        quiet: cli.global.quiet,
        file,
    };
    match &cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Infer(a) => infer_cmd(&ctx, a),
        Command::Project(a) => project_cmd(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Gradcheck(a) => gradcheck_cmd(&ctx, a),
        Command::Render(a) => render(&ctx, a),
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialization is infallible") + "\n"
}

fn gen(ctx: &Ctx, a: &GenArgs) -> Result<ExitCode> {
    let spec = match &a.spec {
        Some(path) => {
            let text = read_text(path)?;
            LSystemSpec::from_json(&text).map_err(|e| match e {
                Error::Parse { field, message } => Error::Parse {
                    field: format!("{}: {field}", path.display()),
                    message,
                },
                other => other,
            })?
        }
        None => ctx.file.lsystem.clone().unwrap_or_default(),
    };
    spec.compile()?;
    let section = &ctx.file.gen;
    let count = a.count.or(section.count).unwrap_or(DEFAULT_COUNT);
    let render = a.render || section.render.unwrap_or(false);
    let opts = DatasetOptions {
        render: render.then(RenderOptions::default),
        resample_px: a.resample.or(section.resample_px),
        first_index: a.first.or(section.first).unwrap_or(0),
    };
    snapshot(
        ctx.out,
        "gen",
        &json!({
            "seed": ctx.seed,
            "count": count,
            "first": opts.first_index,
            "render": render,
            "resample_px": opts.resample_px,
            "lsystem": spec,
        }),
    )?;
    let manifest = generate_dataset(&spec, count, ctx.seed, ctx.out, &opts)?;
    ctx.info(format!(
        "generated {} samples in {} (spec {})",
        manifest.count,
        ctx.out.display(),
        &manifest.spec_hash[..12]
    ));
    Ok(ExitCode::SUCCESS)
}

/// Ground-truth graphs of a dataset with perturbed nodes; each sample's
/// noise comes from its own global index.
fn load_samples(dir: &Path, sigma: f64, seed: u64) -> Result<Vec<(String, Sample)>> {
    let (manifest, graphs) = load_dataset(dir)?;
    manifest
        .samples
        .par_iter()
        .zip(graphs)
        .map(|(entry, g)| {
            let sample = Sample::prepare(g, sigma, seed, entry.index as u64)?;
            Ok((sample_name(entry.index), sample))
        })
        .collect()
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<ExitCode> {
    let mut cfg = ctx.file.train.clone().unwrap_or_default();
    cfg.seed = ctx.seed;
    if let Some(m) = ctx.file.metrics {
        cfg.metrics = m;
    }
    cfg.mode = a.mode.unwrap_or(cfg.mode);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.learning_rate = a.learning_rate.unwrap_or(cfg.learning_rate);
    cfg.momentum = a.momentum.unwrap_or(cfg.momentum);
    cfg.lambda = a.lambda.unwrap_or(cfg.lambda);
    cfg.hidden = a.hidden.unwrap_or(cfg.hidden);
    cfg.pos_weight = a.pos_weight.or(cfg.pos_weight);
    cfg.noise_sigma = a.noise.unwrap_or(cfg.noise_sigma);
    let val_fraction = a
        .val_fraction
        .or(ctx.file.val_fraction)
        .unwrap_or(DEFAULT_VAL_FRACTION);
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Invalid(format!(
            "val_fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    cfg.validate()?;
    snapshot(
        ctx.out,
        "train",
        &json!({ "data": a.data, "val_fraction": val_fraction, "train": cfg }),
    )?;

    let samples: Vec<Sample> = load_samples(&a.data, cfg.noise_sigma, cfg.seed)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    if samples.is_empty() {
        return Err(Error::Invalid(format!(
            "dataset {} is empty",
            a.data.display()
        )));
    }
    let (train_idx, val_idx) = split_indices(samples.len(), val_fraction, cfg.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&k| samples[k].clone()).collect::<Vec<_>>();
    let (train_set, val_set) = (pick(&train_idx), pick(&val_idx));
    ctx.info(format!(
        "training {} on {} samples ({} for validation), {} epochs",
        cfg.mode,
        train_set.len(),
        val_set.len(),
        cfg.epochs
    ));
    let outcome = train(&train_set, &val_set, &cfg)?;

    let models = ctx.out.join("models");
    write_bytes(&models.join("model.json"), outcome.model.to_json())?;
    write_bytes(&models.join("last.json"), outcome.last.to_json())?;
    write_bytes(
        &ctx.out.join("logs").join("train.jsonl"),
        outcome.log_jsonl(),
    )?;
    let best = &outcome.log[outcome.best_epoch - 1];
    write_bytes(
        &ctx.out.join("reports").join("train.json"),
        pretty(&json!({
            "mode": cfg.mode,
            "epochs": cfg.epochs,
            "best_epoch": outcome.best_epoch,
            "train_samples": train_set.len(),
            "val_samples": val_set.len(),
            "best": best,
            "last": outcome.log.last(),
        })),
    )?;
    ctx.info(format!(
        "best epoch {}: val smd {:.3e}, topo f1 {:.3}, tree rate {:.2}",
        outcome.best_epoch, best.val_smd, best.val_f1, best.tree_rate
    ));
    Ok(ExitCode::SUCCESS)
}

fn infer_cmd(ctx: &Ctx, a: &InferArgs) -> Result<ExitCode> {
    let file_train = ctx.file.train.clone().unwrap_or_default();
    let mode = a.mode.unwrap_or(file_train.mode);
    let sigma = a.noise.unwrap_or(file_train.noise_sigma);
    let model = ScorerModel::load(&a.model)?;
    snapshot(
        ctx.out,
        "infer",
        &json!({ "seed": ctx.seed, "model": a.model, "data": a.data, "mode": mode, "noise_sigma": sigma }),
    )?;
    let samples = load_samples(&a.data, sigma, ctx.seed)?;
    let graphs = ctx.out.join("graphs");
    samples.par_iter().try_for_each(|(name, s)| {
        let pred = infer(&model, &s.nodes, mode.projects_at_inference())?;
        write_bytes(&graphs.join(format!("{name}.json")), pred.to_json())
    })?;
    ctx.info(format!(
        "wrote {} predictions ({mode}) to {}",
        samples.len(),
        graphs.display()
    ));
    Ok(ExitCode::SUCCESS)
}

fn project_cmd(ctx: &Ctx, a: &ProjectArgs) -> Result<ExitCode> {
    let p = EdgeProbabilities::load(&a.probs)?;
    let proj = project(&p);
    let pairs = |set: &treecon::EdgeSet| set.iter().map(|e| [e.i(), e.j()]).collect::<Vec<_>>();
    let doc = json!({
        "n": p.node_count(),
        "edges": pairs(&proj.edges),
        "added": pairs(&proj.delta.added),
        "removed": pairs(&proj.delta.removed),
        "degenerate": proj.degenerate,
    });
    snapshot(ctx.out, "project", &json!({ "probs": a.probs }))?;
    let text = pretty(&doc);
    write_bytes(&ctx.out.join("reports").join("projection.json"), &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<ExitCode> {
    let mut cfg = ctx
        .file
        .metrics
        .or(ctx.file.train.as_ref().map(|t| t.metrics))
        .unwrap_or_default();
    cfg.k_points = a.k_points.unwrap_or(cfg.k_points);
    cfg.topo_radius = a.radius.unwrap_or(cfg.topo_radius);
    validate_metrics(&cfg)?;
    snapshot(
        ctx.out,
        "eval",
        &json!({ "pred": a.pred, "gt": a.gt, "metrics": cfg }),
    )?;
    let report = evaluate_dataset(&a.pred, &a.gt, &cfg)?;
    let reports = ctx.out.join("reports");
    write_bytes(&reports.join("metrics.json"), pretty(&report.aggregate))?;
    write_bytes(&reports.join("samples.jsonl"), report.samples_jsonl())?;
    let g = report.aggregate;
    if !ctx.quiet {
        println!(
            "n {}  smd {:.6e}  topo p {:.4} r {:.4} f1 {:.4}  tree rate {:.4}",
            g.n, g.smd, g.topo_precision, g.topo_recall, g.topo_f1, g.tree_rate
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn validate_metrics(cfg: &MetricsConfig) -> Result<()> {
    if cfg.k_points == 0 {
        return Err(Error::Invalid("k_points must be at least 1".into()));
    }
    if !(cfg.topo_radius.is_finite() && cfg.topo_radius > 0.0) {
        return Err(Error::Invalid(format!(
            "radius must be positive, got {}",
            cfg.topo_radius
        )));
    }
    Ok(())
}

fn gradcheck_cmd(ctx: &Ctx, a: &GradcheckArgs) -> Result<ExitCode> {
    let lambda = a
        .lambda
        .or(ctx.file.train.as_ref().map(|t| t.lambda))
        .unwrap_or(treecon::sfs::DEFAULT_LAMBDA);
    let sfs = SfsConfig::new(lambda)?;
    let gc = GradcheckConfig {
        instances: a.instances.or(ctx.file.gradcheck_instances).unwrap_or(1000),
        seed: ctx.seed,
        ..Default::default()
    };
    if gc.instances == 0 {
        return Err(Error::Invalid("instances must be at least 1".into()));
    }
    snapshot(
        ctx.out,
        "gradcheck",
        &json!({ "seed": gc.seed, "lambda": lambda, "instances": gc.instances, "hidden": gc.hidden }),
    )?;
    let report = gradcheck::run(&gc, &sfs)?;
    write_bytes(
        &ctx.out.join("reports").join("gradcheck.json"),
        pretty(&report),
    )?;
    println!("{sfs}");
    let table: Vec<String> = [2.0f64, 5.0, 10.0, 100.0]
        .iter()
        .map(|&l| format!("{l} -> {}", format_sci((-l).exp(), 2)))
        .collect();
    println!("exp(-lambda): {}", table.join(", "));
    println!("{report}");
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn render(ctx: &Ctx, a: &RenderArgs) -> Result<ExitCode> {
    let opts = RenderOptions {
        stroke_px: a.stroke,
        node_radius_px: a.node_radius,
    };
    let inputs: Vec<(String, PathBuf)> = match (&a.graph, &a.data) {
        (Some(path), _) => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("graph");
            vec![(format!("{stem}.json"), path.clone())]
        }
        (None, Some(dir)) => graph_files(dir)?,
        (None, None) => unreachable!("clap requires one input"),
    };
    snapshot(
        ctx.out,
        "render",
        &json!({
            "graph": a.graph, "data": a.data, "width": a.width, "height": a.height,
            "stroke": a.stroke, "node_radius": a.node_radius, "svg": a.svg,
        }),
    )?;
    let images = ctx.out.join("images");
    inputs.par_iter().try_for_each(|(name, path)| {
        let g = SpatialGraph::load(path)?;
        let stem = name.trim_end_matches(".json");
        if a.svg {
            write_bytes(
                &images.join(format!("{stem}.svg")),
                to_svg(&g, a.width, a.height, opts)?,
            )
        } else {
            let png = rasterize(&g, a.width, a.height, opts)?.to_png()?;
            write_bytes(&images.join(format!("{stem}.png")), png)
        }
    })?;
    ctx.info(format!(
        "rendered {} graphs to {}",
        inputs.len(),
        images.display()
    ));
    Ok(ExitCode::SUCCESS)
}
