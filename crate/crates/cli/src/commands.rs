//! Subcommand implementations.

use crate::manifest::RunManifest;
use anyhow::{bail, Context, Result};
use clap::Args;
use dasmon::dsp::{preprocess_matrix, WindowGrid};
use dasmon::engine::Graph;
use dasmon::eval::{
    evaluate_segments, metrics, run_ablation, transfer_eval, AblationProtocol,
};
use dasmon::features::{FeatureSequence, FeatureSet, FeatureStore};
use dasmon::layers::{AttentionWeights, ARCHITECTURES};
use dasmon::rng::substream_seed;
use dasmon::sim::{generate_scene, SiteConfig};
use dasmon::train::{kfold, train_model, SearchProtocol, TrainConfig};
use dasmon::DasError;
use std::path::{Path, PathBuf};

fn validation_error(msg: String) -> anyhow::Error {
    anyhow::Error::new(DasError::Config(msg))
}

fn parse_band(spec: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 2 {
        return Err(validation_error(format!(
            "band must be 'lo:hi' in Hz, got '{spec}'"
        )));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| validation_error(format!("bad band low '{}'", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| validation_error(format!("bad band high '{}'", parts[1])))?;
    Ok((lo, hi))
}

/// `A:1-3,B:3-5,C:5-7` (1-indexed inclusive SP ranges) into named
/// 0-based triples.
fn parse_groups(spec: &str) -> Result<Vec<(String, [usize; 3])>> {
    let mut out = Vec::new();
    for item in spec.split(',') {
        let (name, range) = item
            .split_once(':')
            .ok_or_else(|| validation_error(format!("bad group '{item}' (want NAME:a-b)")))?;
        let (a, b) = range
            .split_once('-')
            .ok_or_else(|| validation_error(format!("bad group range '{range}'")))?;
        let a: usize = a
            .parse()
            .map_err(|_| validation_error(format!("bad SP index '{a}'")))?;
        let b: usize = b
            .parse()
            .map_err(|_| validation_error(format!("bad SP index '{b}'")))?;
        if a == 0 || b != a + 2 {
            return Err(validation_error(format!(
                "group {name}: want a 1-indexed triple like 1-3, got {a}-{b}"
            )));
        }
        out.push((name.to_string(), [a - 1, a, a + 1]));
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---- simulate ---------------------------------------------------------------

#[derive(Args, serde::Serialize)]
pub struct SimulateArgs {
    /// Site preset: palacio | acera
    #[arg(long, default_value = "palacio")]
    pub site: String,
    /// Scene length in hours (fractions allowed)
    #[arg(long, default_value_t = 1.0)]
    pub hours: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Let events on different lanes overlap in time
    #[arg(long, default_value_t = false)]
    pub allow_overlap: bool,
    /// Mean gap between events, seconds
    #[arg(long)]
    pub mean_gap: Option<f64>,
    /// Background noise sigma
    #[arg(long)]
    pub background_sigma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut site = SiteConfig::by_name(&args.site)?;
    site.allow_overlap = args.allow_overlap;
    if let Some(gap) = args.mean_gap {
        site.mean_gap_s = gap;
    }
    if let Some(sigma) = args.background_sigma {
        site.background_sigma = sigma;
    }
    let duration_s = args.hours * 3600.0;
    let sim_seed = substream_seed(args.seed, "sim");
    let (scene, annotations) = generate_scene(&site, duration_s, sim_seed)?;

    std::fs::create_dir_all(&args.out)?;
    let scene_path = args.out.join("scene.dasb");
    let ann_path = args.out.join("annotations.jsonl");
    let site_path = args.out.join("site.json");
    dasmon::io::write_strain(&scene_path, &scene)?;
    dasmon::io::write_annotations(&ann_path, &annotations)?;
    write_text(&site_path, &(serde_json::to_string_pretty(&site)? + "\n"))?;

    let mut manifest = RunManifest::new("simulate", serde_json::to_value(&args)?);
    manifest.seed("sim", sim_seed);
    manifest.output(&scene_path)?;
    manifest.output(&ann_path)?;
    manifest.output(&site_path)?;
    manifest.write(&args.out)?;
    println!(
        "simulated {:.1} s at {}: {} SPs, {} events -> {}",
        duration_s,
        site.name,
        scene.num_sps(),
        annotations.len(),
        args.out.display()
    );
    Ok(())
}

// ---- preprocess -------------------------------------------------------------

#[derive(Args, serde::Serialize)]
pub struct PreprocessArgs {
    /// Input DASB1 scene
    #[arg(long)]
    pub scene: PathBuf,
    /// Band-pass edges, Hz
    #[arg(long, default_value = "0.1:30")]
    pub band: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn preprocess(args: PreprocessArgs) -> Result<()> {
    let (lo, hi) = parse_band(&args.band)?;
    let scene = dasmon::io::read_strain(&args.scene)?;
    let clean = preprocess_matrix(&scene, lo, hi)?;
    std::fs::create_dir_all(&args.out)?;
    let out_path = args.out.join("processed.dasb");
    dasmon::io::write_strain(&out_path, &clean)?;

    let mut manifest = RunManifest::new("preprocess", serde_json::to_value(&args)?);
    manifest.input(&args.scene)?;
    manifest.output(&out_path)?;
    manifest.write(&args.out)?;
    println!(
        "preprocessed {} SPs x {} samples ({lo}-{hi} Hz) -> {}",
        clean.num_sps(),
        clean.num_samples(),
        args.out.display()
    );
    Ok(())
}

// ---- featurize --------------------------------------------------------------

#[derive(Args, serde::Serialize)]
pub struct FeaturizeArgs {
    /// Preprocessed DASB1 scene
    #[arg(long)]
    pub scene: PathBuf,
    /// Ground-truth annotations (JSON Lines)
    #[arg(long)]
    pub annotations: PathBuf,
    /// Window length, seconds
    #[arg(long, default_value_t = 2.0)]
    pub win: f64,
    /// Window shift, seconds
    #[arg(long, default_value_t = 0.5)]
    pub shift: f64,
    /// Append first/second temporal derivatives (36 -> 108 per SP)
    #[arg(long, default_value_t = false)]
    pub deltas: bool,
    /// Concatenate the target SP with its two neighbors
    #[arg(long, default_value_t = false)]
    pub spatial: bool,
    /// Target SP (default: center of the array)
    #[arg(long)]
    pub sp: Option<usize>,
    /// Packing length, seconds
    #[arg(long, default_value_t = 90.0)]
    pub segment_s: f64,
    /// Site name recorded in the store
    #[arg(long, default_value = "site")]
    pub site: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn featurize(args: FeaturizeArgs) -> Result<()> {
    let scene = dasmon::io::read_strain(&args.scene)?;
    let annotations = dasmon::io::read_annotations(&args.annotations)?;
    let grid = WindowGrid::new(args.win, args.shift, scene.fs)?;
    let store = FeatureStore::build(&args.site, &scene, &annotations, &grid)?;
    let target = args.sp.unwrap_or_else(|| store.center_sp());
    if target >= store.num_sps() {
        bail!(validation_error(format!(
            "target SP {target} out of range ({} SPs)",
            store.num_sps()
        )));
    }

    std::fs::create_dir_all(&args.out)?;
    let store_dir = args.out.join("store");
    dasmon::io::write_store(&store_dir, &store)?;
    let csv_path = args.out.join("features.csv");
    write_text(&csv_path, &dasmon::io::features_csv(&store, target)?)?;

    // packed model inputs for the requested variant
    let seg_dir = args.out.join("segments");
    let segments: Vec<FeatureSequence> = if args.spatial {
        let set = if args.deltas {
            FeatureSet::WithDeltas
        } else {
            FeatureSet::Base
        };
        store.segments(target, set, args.segment_s)?
    } else {
        let stream = if args.deltas {
            dasmon::features::append_deltas(&store.sp_features[target])
        } else {
            store.sp_features[target].clone()
        };
        dasmon::features::pack_segments(&stream, &store.labels, &grid, args.segment_s, target)?
    };
    for seq in &segments {
        dasmon::io::write_fseq(&seg_dir.join(format!("seg{:03}.fseq", seq.segment_id)), seq)?;
    }

    let mut manifest = RunManifest::new("featurize", serde_json::to_value(&args)?);
    manifest.input(&args.scene)?;
    manifest.input(&args.annotations)?;
    manifest.output(&store_dir)?;
    manifest.output(&csv_path)?;
    manifest.output(&seg_dir)?;
    manifest.write(&args.out)?;
    println!(
        "featurized {} SPs x {} frames; wrote {} segments of width {} -> {}",
        store.num_sps(),
        store.num_frames(),
        segments.len(),
        segments.first().map(|s| s.dim()).unwrap_or(0),
        args.out.display()
    );
    Ok(())
}

// ---- train ------------------------------------------------------------------

#[derive(Args, serde::Serialize)]
pub struct TrainArgs {
    /// Featurize output directory (containing store/)
    #[arg(long)]
    pub features: PathBuf,
    /// Architecture string (e.g. bi, SA-bi-TA)
    #[arg(long, default_value = "bi")]
    pub arch: String,
    /// Full training config as JSON (overrides the hyperparameter flags)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the derivative-augmented variant (324 columns)
    #[arg(long, default_value_t = true)]
    pub deltas: bool,
    /// Target SP (default: center)
    #[arg(long)]
    pub sp: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub l2: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Cross-validation folds used to carve the holdout split
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Which fold is the holdout
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop once validation accuracy reaches this value (0-1)
    #[arg(long)]
    pub target_acc: Option<f64>,
    #[arg(long, default_value_t = 90.0)]
    pub segment_s: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| validation_error(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig {
            lr: args.lr,
            layers: args.layers,
            hidden: args.hidden,
            dropout: args.dropout,
            l2: args.l2,
            epochs_max: args.epochs,
            patience: args.patience,
            batch_segments: args.batch,
            seed: args.seed,
            stop_at_val_acc: args.target_acc,
        },
    };
    let store = dasmon::io::read_store(&args.features.join("store"))
        .with_context(|| format!("loading feature store under {}", args.features.display()))?;
    let target = args.sp.unwrap_or_else(|| store.center_sp());
    let set = if args.deltas {
        FeatureSet::WithDeltas
    } else {
        FeatureSet::Base
    };
    let segments = store.segments(target, set, args.segment_s)?;
    let ids: Vec<usize> = (0..segments.len()).collect();
    let plan = kfold(&ids, args.folds, substream_seed(config.seed, "folds"))?;
    if args.fold >= plan.folds.len() {
        bail!(validation_error(format!(
            "fold {} out of range ({} folds)",
            args.fold, args.folds
        )));
    }
    let split = &plan.folds[args.fold];
    let train_refs: Vec<&FeatureSequence> = split.train.iter().map(|&i| &segments[i]).collect();
    let val_refs: Vec<&FeatureSequence> = split.val.iter().map(|&i| &segments[i]).collect();

    let spec = config.to_spec(&args.arch, segments[0].dim());
    let (model, history) = train_model(&spec, &train_refs, &val_refs, &config)?;

    let val_owned: Vec<FeatureSequence> = val_refs.iter().map(|s| (*s).clone()).collect();
    let (cm, acc) = evaluate_segments(&model, &val_owned)?;
    let (_, f1) = metrics(&cm)?;

    std::fs::create_dir_all(&args.out)?;
    let model_path = args.out.join("model.mdl");
    dasmon::io::write_model(&model_path, &model)?;
    let mut hist_csv = String::from("epoch,train_loss,val_loss,val_acc\n");
    for e in &history.epochs {
        hist_csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            e.epoch, e.train_loss, e.val_loss, e.val_acc
        ));
    }
    let hist_path = args.out.join("history.csv");
    write_text(&hist_path, &hist_csv)?;
    let metrics_path = args.out.join("metrics.json");
    let summary = serde_json::json!({
        "arch": args.arch,
        "params": model.count_params(),
        "val_acc_pct": acc,
        "val_f1_pct": f1,
        "confusion": cm,
        "best_epoch": history.best_epoch,
        "epochs_run": history.epochs.len(),
        "stopped_early": history.stopped_early,
    });
    write_text(&metrics_path, &(serde_json::to_string_pretty(&summary)? + "\n"))?;

    let mut manifest = RunManifest::new(
        "train",
        serde_json::json!({ "args": &args, "resolved_config": &config }),
    );
    manifest.seed("folds", substream_seed(config.seed, "folds"));
    manifest.seed("init", substream_seed(config.seed, "init"));
    manifest.seed("shuffle", substream_seed(config.seed, "shuffle"));
    manifest.seed("dropout", substream_seed(config.seed, "dropout"));
    manifest.output(&model_path)?;
    manifest.output(&hist_path)?;
    manifest.output(&metrics_path)?;
    manifest.write(&args.out)?;
    println!(
        "trained {} ({} params): holdout acc {:.2}% f1 {:.2}% after {} epochs -> {}",
        args.arch,
        model.count_params(),
        acc,
        f1,
        history.epochs.len(),
        args.out.display()
    );
    Ok(())
}

// ---- ablate -----------------------------------------------------------------

#[derive(Args, serde::Serialize)]
pub struct AblateArgs {
    /// Featurize output directory (containing store/)
    #[arg(long)]
    pub features: PathBuf,
    /// Comma-separated architecture list, or `all`
    #[arg(long, default_value = "all")]
    pub archs: String,
    /// Feature sets to sweep: x | xd | both
    #[arg(long, default_value = "both")]
    pub sets: String,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 90.0)]
    pub segment_s: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let store = dasmon::io::read_store(&args.features.join("store"))?;
    let archs: Vec<String> = if args.archs == "all" {
        ARCHITECTURES.iter().map(|s| s.to_string()).collect()
    } else {
        args.archs.split(',').map(|s| s.trim().to_string()).collect()
    };
    for arch in &archs {
        if !ARCHITECTURES.contains(&arch.as_str()) {
            bail!(validation_error(format!("unknown architecture '{arch}'")));
        }
    }
    let feature_sets = match args.sets.as_str() {
        "x" => vec![FeatureSet::Base],
        "xd" => vec![FeatureSet::WithDeltas],
        "both" => vec![FeatureSet::Base, FeatureSet::WithDeltas],
        other => bail!(validation_error(format!(
            "sets must be x, xd or both, got '{other}'"
        ))),
    };
    let protocol = AblationProtocol {
        archs,
        feature_sets,
        search: SearchProtocol {
            trials: args.trials,
            folds: args.folds,
            epochs_max: args.epochs,
            patience: args.patience,
            batch_segments: args.batch,
            seed: args.seed,
        },
        space: Default::default(),
        segment_s: args.segment_s,
    };
    let report = run_ablation(&store, &protocol)?;

    std::fs::create_dir_all(&args.out)?;
    let report_path = args.out.join("report.csv");
    write_text(&report_path, &dasmon::io::ablation_csv(&report.rows))?;
    let trials_path = args.out.join("trials.csv");
    write_text(&trials_path, &dasmon::io::trials_csv(&report.trials))?;

    let mut manifest = RunManifest::new("ablate", serde_json::to_value(&args)?);
    manifest.seed("search", substream_seed(args.seed, "search"));
    manifest.output(&report_path)?;
    manifest.output(&trials_path)?;
    manifest.write(&args.out)?;
    println!(
        "ablation over {} rows ({} trials each) -> {}",
        report.rows.len(),
        args.trials,
        args.out.display()
    );
    Ok(())
}

// ---- transfer ---------------------------------------------------------------

#[derive(Args, serde::Serialize)]
pub struct TransferArgs {
    /// Trained model checkpoint
    #[arg(long)]
    pub model: PathBuf,
    /// Featurize output directory of the TARGET site
    #[arg(long)]
    pub features: PathBuf,
    /// Named 1-indexed SP triples, e.g. A:1-3,B:3-5,C:5-7
    #[arg(long, default_value = "A:1-3,B:3-5,C:5-7")]
    pub groups: String,
    /// Featurize output directory of the SOURCE site (for the in-site
    /// reference matrix)
    #[arg(long)]
    pub source_features: Option<PathBuf>,
    #[arg(long, default_value_t = 90.0)]
    pub segment_s: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn transfer(args: TransferArgs) -> Result<()> {
    let model = dasmon::io::read_model(&args.model)?;
    let target_store = dasmon::io::read_store(&args.features.join("store"))?;
    let groups = parse_groups(&args.groups)?;
    let set = FeatureSet::from_width(model.spec.input_dim)?;

    let source_segments = match &args.source_features {
        Some(dir) => {
            let store = dasmon::io::read_store(&dir.join("store"))?;
            Some(store.segments(store.center_sp(), set, args.segment_s)?)
        }
        None => None,
    };
    let report = transfer_eval(
        &model,
        &target_store,
        &groups,
        source_segments.as_deref(),
        args.segment_s,
    )?;

    std::fs::create_dir_all(&args.out)?;
    let mut outputs = Vec::new();
    for group in report.groups.iter().chain(report.source.iter()) {
        let path = args.out.join(format!("confusion_{}.csv", group.name));
        write_text(&path, &dasmon::io::confusion_csv(&group.cm))?;
        outputs.push(path);
    }
    let summary = serde_json::json!({
        "source": report.source,
        "groups": report.groups,
        "gaps_pct": report.source.as_ref().map(|s| {
            report
                .groups
                .iter()
                .map(|gr| serde_json::json!({"group": gr.name, "gap": s.acc - gr.acc}))
                .collect::<Vec<_>>()
        }),
    });
    let summary_path = args.out.join("summary.json");
    write_text(&summary_path, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    outputs.push(summary_path);

    let mut manifest = RunManifest::new("transfer", serde_json::to_value(&args)?);
    manifest.input(&args.model)?;
    for path in &outputs {
        manifest.output(path)?;
    }
    manifest.write(&args.out)?;
    for group in &report.groups {
        println!("group {}: acc {:.2}%", group.name, group.acc);
    }
    if let Some(src) = &report.source {
        println!("source site: acc {:.2}%", src.acc);
    }
    Ok(())
}

// ---- export-attention ---------------------------------------------------------

#[derive(Args, serde::Serialize)]
pub struct ExportAttentionArgs {
    /// Trained model checkpoint
    #[arg(long)]
    pub model: PathBuf,
    /// One packed segment (FSEQ1)
    #[arg(long)]
    pub segment: PathBuf,
    /// Also render PNG heatmaps
    #[arg(long, default_value_t = false)]
    pub png: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn export_attention(args: ExportAttentionArgs) -> Result<()> {
    let model = dasmon::io::read_model(&args.model)?;
    if !model.has_attention() {
        bail!(validation_error(
            "nothing to export: model has no attention stage".into()
        ));
    }
    let seq = dasmon::io::read_fseq(&args.segment)?;
    let mut g = Graph::new();
    let pass = model.forward(&mut g, &seq.features, true)?;
    let probs_var = g.softmax_rows(pass.logits)?;
    let probs = g.value(probs_var).clone();

    std::fs::create_dir_all(&args.out)?;
    let mut outputs = Vec::new();
    for trace in &pass.attention {
        match &trace.weights {
            AttentionWeights::Temporal(a) => {
                let mut csv = String::new();
                for row in a.rows() {
                    let cells: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
                    csv.push_str(&cells.join(","));
                    csv.push('\n');
                }
                let path = args.out.join(format!("ta_stage{}.csv", trace.stage));
                write_text(&path, &csv)?;
                #[cfg(feature = "png")]
                if args.png {
                    let png_path = args.out.join(format!("ta_stage{}.png", trace.stage));
                    crate::render::heatmap_png(a, &probs, &seq, &png_path)?;
                    outputs.push(png_path);
                }
                outputs.push(path);
            }
            AttentionWeights::Spatial(frames) => {
                // one row per frame: the 3x3 map flattened row-major
                let mut csv = String::new();
                for frame in frames {
                    let cells: Vec<String> =
                        frame.iter().map(|v| format!("{v:.9e}")).collect();
                    csv.push_str(&cells.join(","));
                    csv.push('\n');
                }
                let path = args.out.join(format!("sa_stage{}.csv", trace.stage));
                write_text(&path, &csv)?;
                #[cfg(feature = "png")]
                if args.png {
                    let png_path = args.out.join(format!("sa_stage{}.png", trace.stage));
                    crate::render::spatial_png(frames, &probs, &seq, &png_path)?;
                    outputs.push(png_path);
                }
                outputs.push(path);
            }
        }
    }
    #[cfg(not(feature = "png"))]
    if args.png {
        bail!(validation_error(
            "this build has no png feature; rebuild with --features png".into()
        ));
    }

    // aligned per-frame probabilities, prediction and truth
    let mut csv = String::from("p_noise,p_car,p_bus,predicted,true\n");
    for (row, label) in probs.rows().into_iter().zip(&seq.labels) {
        let pred = row
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0;
        csv.push_str(&format!(
            "{:.6},{:.6},{:.6},{},{}\n",
            row[0],
            row[1],
            row[2],
            dasmon::sim::EventClass::from_index(pred).unwrap().name(),
            label.name()
        ));
    }
    let probs_path = args.out.join("probs_labels.csv");
    write_text(&probs_path, &csv)?;
    outputs.push(probs_path);

    let mut manifest = RunManifest::new("export-attention", serde_json::to_value(&args)?);
    manifest.input(&args.model)?;
    manifest.input(&args.segment)?;
    for path in &outputs {
        manifest.output(path)?;
    }
    manifest.write(&args.out)?;
    println!(
        "exported {} attention stage(s) for a {}-frame segment -> {}",
        pass.attention.len(),
        seq.frames(),
        args.out.display()
    );
    Ok(())
}
