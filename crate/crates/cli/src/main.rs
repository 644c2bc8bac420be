//! `synaptor` command-line tool: synthetic scene generation, two-stage
//! synapse detection, graph building, and connectome evaluation.
//!
//! Exit codes: 0 success, 2 usage error, 3 data/file error, 4 internal error.

mod manifest;

use clap::{Args, Parser, Subcommand};
use manifest::RunManifest;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use synaptor::baseline::{baseline_curve, proximity_baseline, BaselineConfig};
use synaptor::config::{load_config, PipelineConfig};
use synaptor::connectome::{build_graph, undirect_graph};
use synaptor::error::Error;
use synaptor::io;
use synaptor::metrics::{
    connections_added_missed, count_scatter, graph_pr_curve, tbar_pr_curve, MatchSpec,
    MetricMode, PrCurve,
};
use synaptor::psd::{predict_partners, psd_train, resolve_ground_truth};
use synaptor::synth::synth_scene;
use synaptor::tbar::{
    detect_tbars, make_voxel_labels, reference_scorer_train, shift_predictions, PatchMlpScorer,
};
use synaptor::volume::Point3;

#[derive(Parser)]
#[command(name = "synaptor", version, about = "Polyadic synapse detection and connectome evaluation")]
struct Cli {
    /// JSON file with all module configs; missing fields use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every stage seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Caps internal parallelism; results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory all outputs (and manifests) are written into.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled scene with planted synapses.
    Synth,
    /// Train the T-bar voxel classifier from ground-truth annotations.
    TbarTrain(TbarTrainArgs),
    /// Detect T-bar points in a grayscale volume.
    TbarPredict(TbarPredictArgs),
    /// Shift T-bar points to the brightest nearby voxel.
    TbarShift(TbarShiftArgs),
    /// Train the post-synaptic partner classifier.
    PsdTrain(PsdTrainArgs),
    /// Classify post-synaptic partner bodies for detected T-bars.
    PsdPredict(PsdPredictArgs),
    /// Accumulate a connectome graph from a synapse set.
    GraphBuild(GraphBuildArgs),
    /// Evaluate predictions: PR curves, added/missed edges, count scatter.
    EvalPr(EvalPrArgs),
    /// Body-proximity baseline graph or PR curve.
    Baseline(BaselineArgs),
}

#[derive(Args)]
struct TbarTrainArgs {
    #[arg(long)]
    gray: PathBuf,
    /// Synapse JSON whose T-bar positions are the training annotations.
    #[arg(long)]
    ground_truth: PathBuf,
    #[arg(long, default_value = "tbar_model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct TbarPredictArgs {
    #[arg(long)]
    gray: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "tbars.json")]
    out: PathBuf,
}

#[derive(Args)]
struct TbarShiftArgs {
    #[arg(long)]
    tbars: PathBuf,
    #[arg(long)]
    gray: PathBuf,
    #[arg(long, default_value = "tbars_shifted.json")]
    out: PathBuf,
}

#[derive(Args)]
struct PsdTrainArgs {
    #[arg(long)]
    gray: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    #[arg(long, default_value = "psd_model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct PsdPredictArgs {
    #[arg(long)]
    gray: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    tbars: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Drop input T-bars below this confidence before classification.
    #[arg(long, default_value_t = 0.0)]
    tbar_threshold: f64,
    #[arg(long, default_value = "synapses.json")]
    out: PathBuf,
}

#[derive(Args)]
struct GraphBuildArgs {
    #[arg(long)]
    synapses: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Partner confidence cutoff; defaults to the config decision threshold.
    #[arg(long)]
    psd_threshold: Option<f64>,
    #[arg(long)]
    undirected: bool,
    #[arg(long, default_value = "graph.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalPrArgs {
    /// tbar | weighted | unweighted | thresholded | asymmetric | added-missed | scatter
    #[arg(long)]
    mode: String,
    /// Symmetric graph threshold (mode thresholded).
    #[arg(long)]
    t: Option<u64>,
    /// Strong threshold (modes asymmetric, added-missed).
    #[arg(long)]
    t1: Option<u64>,
    /// Weak threshold (modes asymmetric, added-missed).
    #[arg(long)]
    t2: Option<u64>,
    /// Predicted T-bar file (mode tbar).
    #[arg(long)]
    tbars: Option<PathBuf>,
    /// Ground-truth synapse file (mode tbar).
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Segmentation; required with --same-segment.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Constrain T-bar matches to the same segment.
    #[arg(long)]
    same_segment: bool,
    /// Predicted synapse file: sweeps the PSD threshold into a curve.
    #[arg(long)]
    synapses: Option<PathBuf>,
    /// Predicted graph CSV: evaluates a single point.
    #[arg(long)]
    pred_graph: Option<PathBuf>,
    /// Ground-truth graph CSV (all graph modes).
    #[arg(long)]
    gt_graph: Option<PathBuf>,
    /// Comma-separated threshold sweep, strictly increasing.
    #[arg(long)]
    thresholds: Option<String>,
    /// Compare undirected views of both graphs.
    #[arg(long)]
    undirected: bool,
    #[arg(long, default_value = "pr.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    labels: PathBuf,
    /// With a ground-truth graph, emit a PR curve over sample counts
    /// instead of a single sampled graph.
    #[arg(long)]
    gt_graph: Option<PathBuf>,
    #[arg(long)]
    sample_counts: Option<String>,
    /// weighted | unweighted (curve metric; default unweighted)
    #[arg(long, default_value = "unweighted")]
    metric: String,
    #[arg(long, default_value = "baseline.csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            eprintln!("synaptor: failed to configure thread pool");
            return ExitCode::from(4);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("synaptor: {e}");
            let code = match e {
                Error::InvalidArgument(_) => 2,
                Error::Io { .. } | Error::Format { .. } => 3,
                Error::TrainingDiverged { .. } => 4,
            };
            ExitCode::from(code)
        }
    }
}

/// Effective config: file plus `--seed` override of every stage seed.
fn effective_config(cli: &Cli) -> Result<(PipelineConfig, u64), Error> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.tbar_train.spec.seed = seed;
        cfg.psd_train.seed = seed;
        cfg.baseline.seed = seed;
    }
    let seed = cli.seed.unwrap_or(0);
    Ok((cfg, seed))
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>, Error> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad threshold value {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    if vals.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("thresholds must be strictly increasing"));
    }
    Ok(vals)
}

fn parse_u64_list(text: &str) -> Result<Vec<u64>, Error> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::invalid(format!("bad sample count {s:?}")))
        })
        .collect()
}

fn default_sweep() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

fn run(cli: &Cli) -> Result<(), Error> {
    let (cfg, seed) = effective_config(cli)?;
    std::fs::create_dir_all(&cli.output_dir).map_err(|e| Error::Io {
        path: cli.output_dir.clone(),
        source: e,
    })?;
    let out_path = |p: &Path| cli.output_dir.join(p);

    match &cli.cmd {
        Cmd::Synth => {
            let scene = synth_scene(&cfg.synth, &cfg.partner, seed)?;
            let mut m = RunManifest::new("synth", &cfg, seed);
            let outputs = [
                out_path(Path::new("gray.json")),
                out_path(Path::new("labels.json")),
                out_path(Path::new("ground_truth.json")),
            ];
            io::save_gray_volume(&outputs[0], &scene.gray)?;
            io::save_label_volume(&outputs[1], &scene.labels)?;
            io::save_synapse_set(&outputs[2], &scene.ground_truth)?;
            m.add_input(&outputs[0])?; // digests of own emitted volumes
            m.add_input(&outputs[1])?;
            for o in &outputs {
                m.write_for(o)?;
            }
            Ok(())
        }
        Cmd::TbarTrain(a) => {
            let gray = io::load_gray_volume(&a.gray)?;
            let gt = io::load_synapse_set(&a.ground_truth)?;
            let annotations: Vec<Point3> =
                gt.synapses.iter().map(|e| e.tbar.pos).collect();
            let voxel_labels =
                make_voxel_labels(&annotations, gray.dims(), cfg.detector.positive_radius)?;
            let scorer = reference_scorer_train(
                &gray,
                &voxel_labels,
                cfg.tbar_train.patch_radius,
                &cfg.tbar_train.spec,
            )?;
            let out = out_path(&a.out);
            io::save_model(&out, &scorer.model)?;
            let mut m = RunManifest::new("tbar-train", &cfg, cfg.tbar_train.spec.seed);
            m.add_input(&a.gray)?;
            m.add_input(&a.ground_truth)?;
            m.write_for(&out)
        }
        Cmd::TbarPredict(a) => {
            let gray = io::load_gray_volume(&a.gray)?;
            let model = io::load_model(&a.model)?;
            let scorer = PatchMlpScorer {
                model,
                patch_radius: cfg.tbar_train.patch_radius,
            };
            scorer.validate()?;
            let tbars = detect_tbars(&gray, &scorer, &cfg.detector)?;
            let out = out_path(&a.out);
            io::save_tbars(&out, &tbars)?;
            let mut m = RunManifest::new("tbar-predict", &cfg, 0);
            m.add_input(&a.gray)?;
            m.add_input(&a.model)?;
            m.write_for(&out)
        }
        Cmd::TbarShift(a) => {
            let tbars = io::load_tbars(&a.tbars)?;
            let gray = io::load_gray_volume(&a.gray)?;
            let shifted = shift_predictions(&tbars, &gray, cfg.detector.shift_radius)?;
            let out = out_path(&a.out);
            io::save_tbars(&out, &shifted)?;
            let mut m = RunManifest::new("tbar-shift", &cfg, 0);
            m.add_input(&a.tbars)?;
            m.add_input(&a.gray)?;
            m.write_for(&out)
        }
        Cmd::PsdTrain(a) => {
            let gray = io::load_gray_volume(&a.gray)?;
            let labels = io::load_label_volume(&a.labels)?;
            let raw = io::load_raw_synapses(&a.ground_truth)?;
            let (gt, warnings) =
                resolve_ground_truth(&raw, &gray, &labels, cfg.detector.shift_radius)?;
            for w in &warnings {
                eprintln!("synaptor: warning: {w}");
            }
            let model = psd_train(&gray, &labels, &gt, &cfg.partner, &cfg.psd_train)?;
            let out = out_path(&a.out);
            io::save_model(&out, &model)?;
            let mut m = RunManifest::new("psd-train", &cfg, cfg.psd_train.seed);
            m.add_input(&a.gray)?;
            m.add_input(&a.labels)?;
            m.add_input(&a.ground_truth)?;
            m.write_for(&out)
        }
        Cmd::PsdPredict(a) => {
            let gray = io::load_gray_volume(&a.gray)?;
            let labels = io::load_label_volume(&a.labels)?;
            let model = io::load_model(&a.model)?;
            let tbars: Vec<_> = io::load_tbars(&a.tbars)?
                .into_iter()
                .filter(|t| t.confidence >= a.tbar_threshold)
                .collect();
            let synapses = predict_partners(&gray, &labels, &tbars, &model, &cfg.partner)?;
            let out = out_path(&a.out);
            io::save_synapse_set(&out, &synapses)?;
            let mut m = RunManifest::new("psd-predict", &cfg, 0);
            m.add_input(&a.gray)?;
            m.add_input(&a.labels)?;
            m.add_input(&a.tbars)?;
            m.add_input(&a.model)?;
            m.write_for(&out)
        }
        Cmd::GraphBuild(a) => {
            let synapses = io::load_synapse_set(&a.synapses)?;
            let labels = io::load_label_volume(&a.labels)?;
            let threshold = a.psd_threshold.unwrap_or(cfg.partner.decision_threshold);
            let built = build_graph(&synapses, &labels, threshold)?;
            for s in &built.skipped {
                eprintln!("synaptor: warning: skipped {s}");
            }
            let graph = if a.undirected {
                undirect_graph(&built.graph)
            } else {
                built.graph
            };
            let out = out_path(&a.out);
            io::save_graph_csv(&out, &graph, a.undirected)?;
            let mut m = RunManifest::new("graph-build", &cfg, 0);
            m.add_input(&a.synapses)?;
            m.add_input(&a.labels)?;
            m.write_for(&out)
        }
        Cmd::EvalPr(a) => run_eval(cli, &cfg, a),
        Cmd::Baseline(a) => {
            let labels = io::load_label_volume(&a.labels)?;
            let bl = BaselineConfig {
                seed: cli.seed.unwrap_or(cfg.baseline.seed),
                ..cfg.baseline
            };
            let out = out_path(&a.out);
            let mut m = RunManifest::new("baseline", &cfg, bl.seed);
            m.add_input(&a.labels)?;
            match &a.gt_graph {
                None => {
                    let graph = proximity_baseline(&labels, &bl)?;
                    io::save_graph_csv(&out, &graph, !bl.directed)?;
                }
                Some(gt_path) => {
                    let gt = io::load_graph_csv(gt_path)?;
                    let counts = match &a.sample_counts {
                        Some(text) => parse_u64_list(text)?,
                        None => vec![10, 100, 1000, 10000],
                    };
                    let metric = match a.metric.as_str() {
                        "weighted" => MetricMode::Weighted,
                        "unweighted" => MetricMode::Unweighted,
                        other => {
                            return Err(Error::invalid(format!(
                                "unknown baseline metric {other:?}"
                            )))
                        }
                    };
                    let curve = baseline_curve(&labels, &gt, &counts, metric, &bl)?;
                    io::save_pr_csv(&out, &curve)?;
                    m.add_input(gt_path)?;
                }
            }
            m.write_for(&out)
        }
    }
}

fn require<'a, T>(opt: &'a Option<T>, flag: &str, mode: &str) -> Result<&'a T, Error> {
    opt.as_ref()
        .ok_or_else(|| Error::invalid(format!("mode {mode} requires {flag}")))
}

fn run_eval(cli: &Cli, cfg: &PipelineConfig, a: &EvalPrArgs) -> Result<(), Error> {
    let out = cli.output_dir.join(&a.out);
    let mut m = RunManifest::new(&format!("eval-pr --mode {}", a.mode), cfg, 0);
    let sweep = match &a.thresholds {
        Some(text) => parse_f64_list(text)?,
        None => default_sweep(),
    };

    if a.mode == "tbar" {
        let tbars_path = require(&a.tbars, "--tbars", "tbar")?;
        let gt_path = require(&a.ground_truth, "--ground-truth", "tbar")?;
        let pred = io::load_tbars(tbars_path)?;
        let gt_set = io::load_synapse_set(gt_path)?;
        let gt: Vec<Point3> = gt_set.synapses.iter().map(|e| e.tbar.pos).collect();
        m.add_input(tbars_path)?;
        m.add_input(gt_path)?;
        let same_segment = a.same_segment || cfg.matching.require_same_segment;
        let labels = match (&a.labels, same_segment) {
            (Some(p), _) => {
                m.add_input(p)?;
                Some(io::load_label_volume(p)?)
            }
            (None, true) => {
                return Err(Error::invalid("--same-segment requires --labels"))
            }
            (None, false) => None,
        };
        let spec = MatchSpec {
            max_distance: cfg.matching.max_distance,
            require_same_segment: same_segment,
            segmentation: labels.as_ref(),
        };
        let curve = tbar_pr_curve(&pred, &gt, &spec, &sweep)?;
        io::save_pr_csv(&out, &curve)?;
        return m.write_for(&out);
    }

    // All remaining modes compare graphs.
    let gt_path = require(&a.gt_graph, "--gt-graph", &a.mode)?;
    let mut gt = io::load_graph_csv(gt_path)?;
    m.add_input(gt_path)?;
    if a.undirected {
        gt = undirect_graph(&gt);
    }
    let metric = match a.mode.as_str() {
        "weighted" => MetricMode::Weighted,
        "unweighted" => MetricMode::Unweighted,
        "thresholded" => MetricMode::Thresholded(*require(&a.t, "--t", "thresholded")?),
        "asymmetric" => MetricMode::Asymmetric(
            *require(&a.t1, "--t1", "asymmetric")?,
            *require(&a.t2, "--t2", "asymmetric")?,
        ),
        "added-missed" | "scatter" => MetricMode::Unweighted, // unused below
        other => return Err(Error::invalid(format!("unknown eval mode {other:?}"))),
    };

    match a.mode.as_str() {
        "added-missed" => {
            let pred_path = require(&a.pred_graph, "--pred-graph", &a.mode)?;
            let mut pred = io::load_graph_csv(pred_path)?;
            m.add_input(pred_path)?;
            if a.undirected {
                pred = undirect_graph(&pred);
            }
            let am = connections_added_missed(
                &pred,
                &gt,
                *require(&a.t1, "--t1", "added-missed")?,
                *require(&a.t2, "--t2", "added-missed")?,
            )?;
            io::save_added_missed_csv(&out, &am)?;
        }
        "scatter" => {
            let pred_path = require(&a.pred_graph, "--pred-graph", &a.mode)?;
            let mut pred = io::load_graph_csv(pred_path)?;
            m.add_input(pred_path)?;
            if a.undirected {
                pred = undirect_graph(&pred);
            }
            io::save_scatter_csv(&out, &count_scatter(&pred, &gt))?;
        }
        _ => {
            let curve = match (&a.synapses, &a.pred_graph) {
                (Some(syn_path), None) => {
                    let labels_path =
                        require(&a.labels, "--labels", "threshold sweep")?;
                    let synapses = io::load_synapse_set(syn_path)?;
                    let labels = io::load_label_volume(labels_path)?;
                    m.add_input(syn_path)?;
                    m.add_input(labels_path)?;
                    if a.undirected {
                        return Err(Error::invalid(
                            "--undirected is not supported with a --synapses sweep",
                        ));
                    }
                    graph_pr_curve(&synapses, &labels, &gt, metric, &sweep)?
                }
                (None, Some(pred_path)) => {
                    let mut pred = io::load_graph_csv(pred_path)?;
                    m.add_input(pred_path)?;
                    if a.undirected {
                        pred = undirect_graph(&pred);
                    }
                    PrCurve {
                        points: vec![metric.evaluate(&pred, &gt, 0.0)?],
                    }
                }
                _ => {
                    return Err(Error::invalid(
                        "provide exactly one of --synapses or --pred-graph",
                    ))
                }
            };
            io::save_pr_csv(&out, &curve)?;
        }
    }
    m.write_for(&out)
}
