//! Subcommand implementations. Each returns whether its requested checks passed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use pamnet::chem_io::{attach_labels, read_dataset, read_labels, split_dataset, AtomFilter, Structure};
use pamnet::graph::{build_multiplex, GraphConfig, LocalMode};
use pamnet::harness::synthetic::{
    random_molecules, smoke_model_config, smoke_molecules, smoke_train_config, SMOKE_MAX_ATOMS, SMOKE_MOLECULES,
};
use pamnet::harness::{
    check_permutation, check_symmetry, evaluate, load_model, make_examples, predict_structures, report_attention,
    save_model, train, MetricsReport, Sidecar, SymmetryKind, SymmetryReport, TargetStats, TrainConfig,
};
use pamnet::model::{Head, ModelConfig, PamNet, Prepared};
use pamnet::nn::ParameterStore;
use pamnet::profiler::{profile_dataset, sweep_cutoff, uniform_box};

use crate::{Ablation, Cli, Command, SweepArgs, SymmetryArgs, TrainArgs};

/// Contents of the `--config` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
    filter: AtomFilter,
    /// Train / valid / test fractions used when no validation set is given.
    split: (f64, f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            filter: AtomFilter::default(),
            split: (0.8, 0.1, 0.1),
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: RunConfig,
    /// Whether `--config` was given.
    configured: bool,
}

impl Ctx<'_> {
    fn out(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.cli.out_dir)
            .with_context(|| format!("creating {}", self.cli.out_dir.display()))?;
        Ok(self.cli.out_dir.join(name))
    }

    fn structures(&self, path: &Path) -> Result<Vec<Structure>> {
        let raw = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
        if raw.is_empty() {
            bail!("{}: no structures found", path.display());
        }
        raw.iter()
            .map(|s| self.cfg.filter.apply(s).with_context(|| format!("filtering {}", s.id)))
            .collect()
    }

    fn labelled(&self, data: &Path, labels: &Path) -> Result<Vec<Structure>> {
        let mut structures = self.structures(data)?;
        let labels = read_labels(labels).with_context(|| format!("reading {}", labels.display()))?;
        let missing = attach_labels(&mut structures, &labels);
        if !missing.is_empty() {
            bail!("{} structures have no label, first: {}", missing.len(), missing[0]);
        }
        Ok(structures)
    }

    fn fresh_config(&self, base: ModelConfig) -> ModelConfig {
        apply_ablation(base, self.cli.ablation)
    }

    /// A checkpointed model, or a fresh one from the run configuration.
    fn model(&self, checkpoint: Option<&Path>) -> Result<(PamNet, ParameterStore, TargetStats)> {
        match checkpoint {
            Some(path) => {
                let a = self.cli.ablation;
                if a.no_attention_pool || a.no_local_mp || a.no_global_mp {
                    warn!("ablation flags are ignored for checkpointed models");
                }
                let (model, store, side) =
                    load_model(path).with_context(|| format!("loading {}", path.display()))?;
                let width = target_width(model.config());
                let stats = side.target_stats.unwrap_or_else(|| TargetStats::identity(width));
                Ok((model, store, stats))
            }
            None => {
                let cfg = self.fresh_config(self.cfg.model.clone());
                let width = target_width(&cfg);
                let (model, store) = PamNet::new(cfg, self.cli.seed)?;
                Ok((model, store, TargetStats::identity(width)))
            }
        }
    }
}

fn apply_ablation(mut cfg: ModelConfig, a: Ablation) -> ModelConfig {
    cfg.attention_pool &= !a.no_attention_pool;
    cfg.local_mp &= !a.no_local_mp;
    cfg.global_mp &= !a.no_global_mp;
    cfg
}

fn target_width(cfg: &ModelConfig) -> usize {
    match cfg.head {
        Head::Vector => 3,
        _ => cfg.prediction_width(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

pub fn run(cli: &Cli) -> Result<bool> {
    let (cfg, configured) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg: RunConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            (cfg, true)
        }
        None => (RunConfig::default(), false),
    };
    let ctx = Ctx { cli, cfg, configured };
    match &cli.command {
        Command::Featurize { data, dump_json } => featurize(&ctx, data, *dump_json),
        Command::Train(args) => train_cmd(&ctx, args),
        Command::Eval { checkpoint, data, labels } => eval_cmd(&ctx, checkpoint, data, labels),
        Command::Predict { checkpoint, data, output } => predict_cmd(&ctx, checkpoint, data, output.as_deref()),
        Command::Profile {
            data,
            bonds,
            d_global,
            d_local,
            expect_pamnet,
            expect_comparator,
            tolerance,
        } => {
            let mut graph = ctx.cfg.model.graph;
            if *bonds {
                graph.local_mode = LocalMode::Bonds;
            }
            if let Some(d) = d_global {
                graph.d_global = *d;
            }
            if let Some(d) = d_local {
                graph.d_local = *d;
            }
            profile_cmd(&ctx, data, &graph, *expect_pamnet, *expect_comparator, *tolerance)
        }
        Command::Sweep(args) => sweep_cmd(&ctx, args),
        Command::CheckSymmetry(args) => symmetry_cmd(&ctx, args),
        Command::ReportAttention { checkpoint, data, tolerance } => {
            attention_cmd(&ctx, checkpoint.as_deref(), data, *tolerance)
        }
    }
}

#[derive(Debug, Serialize)]
struct FeatureRow {
    id: String,
    n_atoms: usize,
    n_bonds: Option<usize>,
    global_edges: usize,
    local_edges: usize,
    onehop_angles: usize,
    twohop_angles: usize,
}

fn featurize(ctx: &Ctx, data: &Path, dump_json: bool) -> Result<bool> {
    let structures = ctx.structures(data)?;
    let graph_cfg = ctx.cfg.model.graph;
    let mut rows = Vec::with_capacity(structures.len());
    let stdout = std::io::stdout();
    let mut stdout = stdout.lock();
    for s in &structures {
        if dump_json {
            writeln!(stdout, "{}", s.to_json()?)?;
        }
        let g = build_multiplex(s, &graph_cfg).with_context(|| format!("building graph for {}", s.id))?;
        rows.push(FeatureRow {
            id: s.id.clone(),
            n_atoms: s.len(),
            n_bonds: s.bonds.as_ref().map(Vec::len),
            global_edges: g.global.len(),
            local_edges: g.local.len(),
            onehop_angles: g.onehop.len(),
            twohop_angles: g.twohop.len(),
        });
    }
    let path = ctx.out("featurize.json")?;
    write_json(&path, &serde_json::json!({ "graph": graph_cfg, "structures": rows }))?;
    info!("featurized {} structures into {}", rows.len(), path.display());
    Ok(true)
}

#[derive(Debug, Serialize)]
struct TrainReport {
    steps: usize,
    epochs: usize,
    best_epoch: usize,
    best_valid_mae: f64,
    stopped_early: bool,
    elapsed_secs: f64,
    train: MetricsReport,
    valid: MetricsReport,
    test: Option<MetricsReport>,
    expect_train_mae: Option<f64>,
    passed: bool,
}

fn train_cmd(ctx: &Ctx, args: &TrainArgs) -> Result<bool> {
    let start = std::time::Instant::now();
    let seed = ctx.cli.seed;
    let (model_cfg, mut train_cfg, train_set, valid_set, test_set) = if args.smoke {
        let (m, t) = if ctx.configured {
            (ctx.cfg.model.clone(), ctx.cfg.train.clone())
        } else {
            (smoke_model_config(), smoke_train_config(seed))
        };
        let mols = smoke_molecules(SMOKE_MOLECULES, SMOKE_MAX_ATOMS, m.graph.d_global, seed)?;
        (m, t, mols.clone(), mols, Vec::new())
    } else {
        let data = args.data.as_deref().context("--data is required")?;
        let labels = args.labels.as_deref().context("--labels is required")?;
        let all = ctx.labelled(data, labels)?;
        match (&args.valid_data, &args.valid_labels) {
            (Some(vd), Some(vl)) => {
                let valid = ctx.labelled(vd, vl)?;
                (ctx.cfg.model.clone(), ctx.cfg.train.clone(), all, valid, Vec::new())
            }
            _ => {
                let ids: Vec<String> = all.iter().map(|s| s.id.clone()).collect();
                let split = split_dataset(&ids, ctx.cfg.split, seed)?;
                let pick = |want: &[String]| -> Vec<Structure> {
                    let want: std::collections::HashSet<&String> = want.iter().collect();
                    all.iter().filter(|s| want.contains(&s.id)).cloned().collect()
                };
                let (tr, va, te) = (pick(&split.train), pick(&split.valid), pick(&split.test));
                if va.is_empty() {
                    bail!("validation split is empty; adjust `split` or pass --valid-data");
                }
                (ctx.cfg.model.clone(), ctx.cfg.train.clone(), tr, va, te)
            }
        }
    };
    train_cfg.seed = seed;
    if let Some(s) = args.max_steps {
        train_cfg.max_steps = Some(s);
    }
    if let Some(e) = args.max_epochs {
        train_cfg.max_epochs = e;
    }
    let model_cfg = ctx.fresh_config(model_cfg);
    let (model, store) = PamNet::new(model_cfg.clone(), seed)?;
    let train_ex = make_examples(&model, &train_set)?;
    let valid_ex = make_examples(&model, &valid_set)?;
    let test_ex = make_examples(&model, &test_set)?;
    info!(
        "training on {} molecules, validating on {}, {} parameters",
        train_ex.len(),
        valid_ex.len(),
        store.n_scalars()
    );
    let outcome = train(&model, store, &train_ex, &valid_ex, &train_cfg)?;

    let ckpt = ctx.out("model.ckpt")?;
    let sidecar = Sidecar { model: model_cfg, target_stats: Some(outcome.stats.clone()) };
    save_model(&ckpt, &sidecar, &outcome.best)?;
    outcome.write_history_csv(create(&ctx.out("history.csv")?)?)?;

    let best = &outcome.best;
    let train_metrics = evaluate(&model, best, &train_ex, &outcome.stats)?;
    let passed = args.expect_train_mae.is_none_or(|t| train_metrics.overall.mae < t);
    let report = TrainReport {
        steps: outcome.step_losses.len(),
        epochs: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_valid_mae: outcome.best_valid_mae,
        stopped_early: outcome.stopped_early,
        elapsed_secs: start.elapsed().as_secs_f64(),
        valid: evaluate(&model, best, &valid_ex, &outcome.stats)?,
        test: if test_ex.is_empty() { None } else { Some(evaluate(&model, best, &test_ex, &outcome.stats)?) },
        train: train_metrics,
        expect_train_mae: args.expect_train_mae,
        passed,
    };
    write_json(&ctx.out("train_report.json")?, &report)?;
    info!(
        "train MAE {:.6e}, valid MAE {:.6e}, {} steps in {:.1}s; checkpoint {}",
        report.train.overall.mae,
        report.valid.overall.mae,
        report.steps,
        report.elapsed_secs,
        ckpt.display()
    );
    Ok(passed)
}

fn eval_cmd(ctx: &Ctx, checkpoint: &Path, data: &Path, labels: &Path) -> Result<bool> {
    let (model, store, stats) = ctx.model(Some(checkpoint))?;
    let structures = ctx.labelled(data, labels)?;
    let examples = make_examples(&model, &structures)?;
    let report = evaluate(&model, &store, &examples, &stats)?;
    write_json(&ctx.out("eval.json")?, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(true)
}

fn predict_cmd(ctx: &Ctx, checkpoint: &Path, data: &Path, output: Option<&Path>) -> Result<bool> {
    let (model, store, stats) = ctx.model(Some(checkpoint))?;
    let structures = ctx.structures(data)?;
    let preds = predict_structures(&model, &store, &structures, &stats)?;
    let width = preds.first().map_or(1, |p| p.values.len());
    let vector = model.config().head != Head::Scalar;
    let mut text = String::from("id");
    if width == 1 {
        text.push_str(",prediction");
    } else {
        (0..width).for_each(|k| text.push_str(&format!(",prediction_{k}")));
    }
    if vector {
        text.push_str(",ux,uy,uz");
    }
    text.push('\n');
    for p in &preds {
        text.push_str(&p.id);
        p.values.iter().for_each(|v| text.push_str(&format!(",{v}")));
        if let Some(u) = p.vector {
            u.iter().for_each(|v| text.push_str(&format!(",{v}")));
        }
        text.push('\n');
    }
    match output {
        Some(p) if p == Path::new("-") => print!("{text}"),
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let path = ctx.out("predictions.csv")?;
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(true)
}

/// `|value / target − 1| ≤ tolerance`.
fn within(value: f64, target: f64, tolerance: f64) -> bool {
    (value / target - 1.0).abs() <= tolerance
}

fn profile_cmd(
    ctx: &Ctx,
    data: &Path,
    graph: &GraphConfig,
    expect_pamnet: Option<f64>,
    expect_comparator: Option<f64>,
    tolerance: f64,
) -> Result<bool> {
    let structures = ctx.structures(data)?;
    let report = profile_dataset(&structures, graph)?;
    report.write_csv(create(&ctx.out("profile.csv")?)?)?;
    let s = &report.summary;
    let pamnet_ok = expect_pamnet.is_none_or(|t| within(s.mean_pamnet_msgs, t, tolerance));
    let comparator_ok = expect_comparator.is_none_or(|t| within(s.mean_dimenet_style_msgs, t, tolerance));
    write_json(
        &ctx.out("profile.json")?,
        &serde_json::json!({
            "graph": graph,
            "summary": s,
            "skipped": report.skipped,
            "expect_pamnet": expect_pamnet,
            "expect_comparator": expect_comparator,
            "tolerance": tolerance,
            "passed": pamnet_ok && comparator_ok,
        }),
    )?;
    info!(
        "{} molecules: {:.1} PAMNet messages, {:.1} comparator messages per molecule",
        s.n_molecules, s.mean_pamnet_msgs, s.mean_dimenet_style_msgs
    );
    Ok(pamnet_ok && comparator_ok)
}

fn sweep_cmd(ctx: &Ctx, args: &SweepArgs) -> Result<bool> {
    let structures = match &args.data {
        Some(path) => ctx.structures(path)?,
        None => (0..args.boxes)
            .map(|k| {
                let seed = ctx.cli.seed.wrapping_mul(1000).wrapping_add(k as u64);
                uniform_box(&format!("box{k}"), seed, args.box_atoms, args.box_side, 0.1)
            })
            .collect::<pamnet::Result<_>>()?,
    };
    let base = GraphConfig {
        local_mode: LocalMode::Cutoff,
        d_local: args.d_local,
        ..ctx.cfg.model.graph
    };
    let report = sweep_cutoff(&structures, &base, &args.d)?;
    report.write_csv(create(&ctx.out("sweep.csv")?)?)?;
    let slopes = report.slopes();
    let ratio = slopes.map(|(g, c)| c / g);
    let passed = match args.expect_ratio {
        Some(t) => ratio.is_some_and(|r| (r - t).abs() <= args.ratio_tolerance),
        None => true,
    };
    write_json(
        &ctx.out("sweep.json")?,
        &serde_json::json!({
            "points": report.points,
            "global_slope": slopes.map(|s| s.0),
            "comparator_slope": slopes.map(|s| s.1),
            "ratio": ratio,
            "passed": passed,
        }),
    )?;
    match ratio {
        Some(r) => info!("comparator/global log-log slope ratio {r:.3}"),
        None => warn!("too few non-empty sweep points to fit slopes"),
    }
    Ok(passed)
}

#[derive(Debug, Serialize)]
struct PermutationReport {
    n_permutations: usize,
    max_deviation: f64,
    tolerance: f64,
    passed: bool,
}

fn symmetry_cmd(ctx: &Ctx, args: &SymmetryArgs) -> Result<bool> {
    let (model, store, _) = ctx.model(args.checkpoint.as_deref())?;
    let structures = match &args.data {
        Some(path) => ctx.structures(path)?,
        None => random_molecules(args.n_molecules, 3, 20, ctx.cli.seed)?,
    };
    let scalar = |s: &Structure| Ok(model.predict(&store, s)?.values);
    let invariance = check_symmetry(
        scalar,
        &structures,
        args.n_transforms,
        ctx.cli.seed,
        SymmetryKind::Invariant,
        args.tolerance,
    )?;
    let equivariance: Option<SymmetryReport> = match model.config().head {
        Head::Scalar => None,
        _ => Some(check_symmetry(
            |s: &Structure| Ok(model.predict(&store, s)?.vector.map(|v| v.to_vec()).unwrap_or_default()),
            &structures,
            args.n_transforms,
            ctx.cli.seed,
            SymmetryKind::Equivariant,
            args.tolerance,
        )?),
    };
    let dev = check_permutation(scalar, &structures, args.n_permutations, ctx.cli.seed)?;
    let permutation = PermutationReport {
        n_permutations: args.n_permutations,
        max_deviation: dev,
        tolerance: args.permutation_tolerance,
        passed: dev <= args.permutation_tolerance,
    };
    let passed = invariance.passed && equivariance.as_ref().is_none_or(|r| r.passed) && permutation.passed;
    write_json(
        &ctx.out("symmetry.json")?,
        &serde_json::json!({
            "invariance": invariance,
            "equivariance": equivariance,
            "permutation": permutation,
            "passed": passed,
        }),
    )?;
    info!(
        "invariance max deviation {:.3e}, permutation {:.3e}{}",
        invariance.max_deviation,
        dev,
        equivariance
            .as_ref()
            .map(|r| format!(", equivariance {:.3e}", r.max_deviation))
            .unwrap_or_default()
    );
    Ok(passed)
}

fn attention_cmd(ctx: &Ctx, checkpoint: Option<&Path>, data: &Path, tolerance: f64) -> Result<bool> {
    let (model, store, _) = ctx.model(checkpoint)?;
    let prepared: Vec<Prepared> =
        ctx.structures(data)?.iter().map(|s| model.prepare(s)).collect::<pamnet::Result<_>>()?;
    let summary = report_attention(&model, &store, &prepared)?;
    let passed = summary.max_normalization_error <= tolerance;
    write_json(
        &ctx.out("attention.json")?,
        &serde_json::json!({ "attention": summary, "tolerance": tolerance, "passed": passed }),
    )?;
    println!(
        "mean alpha_global {:.6}, mean alpha_local {:.6}",
        summary.mean_global, summary.mean_local
    );
    Ok(passed)
}
