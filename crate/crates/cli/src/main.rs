use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use multifocal::authentication::{authenticate_batch, build_tp_profiles, AuthModel, ThetaCondition, TpVoteProfile};
use multifocal::classifiers::{evaluate, train_named, TrainConfig, TrainedModel, MODEL_FORMAT_VERSION};
use multifocal::features::{extract_all, FeatureCatalog, FeatureMatrix, CATALOG_VERSION};
use multifocal::focus::{select_optimal_plane_by_kind, FocusMeasureKind};
use multifocal::harness::dataset::{load_stack, manifest_features, Manifest, PipelineConfig};
use multifocal::harness::experiment::{emit_report, run_experiment, ExperimentConfig, REPORT_FORMAT_VERSION};
use multifocal::harness::synth::{write_corpus, SynthConfig};
use multifocal::image::{load_gray, save_mask_png, save_png, BoundingBox};
use multifocal::segmentation::segment_grains;
use multifocal::selection::{Selection, SelectionConfig};
use multifocal::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "multifocal", about = "Multi-focal microscope grain classification and authentication")]
#[command(disable_version_flag = true)]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    /// JSON file overriding built-in parameters; flags override the file.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Print version, feature catalog and file format versions.
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score every plane of a stack and report the sharpest.
    Focus {
        /// Stack directory holding plane_<k>.png files.
        #[arg(long)]
        stack: PathBuf,
        #[arg(long, default_value_t = FocusMeasureKind::AbsoluteGradient)]
        measure: FocusMeasureKind,
        /// Write the focus curve as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment grains from an image, or from the sharpest plane of a stack.
    Segment {
        /// Image file or stack directory.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for grain_<k>.png, mask_<k>.png and grains.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Focus, segment and extract features for every stack of a corpus.
    Extract {
        /// Corpus directory (manifest.json or <category>/<stack>/plane_<k>.png).
        #[arg(long)]
        data: Option<PathBuf>,
        /// A single grain image with its mask, instead of a corpus.
        #[arg(long, requires = "mask", conflicts_with = "data")]
        grain: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize, score and select features.
    Select {
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        selection: SelectionArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// wnd5, dt, rf or nn.
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        training: TrainingArgs,
    },
    /// Classify a feature CSV with a trained model.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Write per-sample predictions as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inlier/outlier decisions from a random forest, or (with
    /// --build-profiles) true-positive vote profiles from labelled data.
    Auth {
        /// Random forest model.
        #[arg(long)]
        model: PathBuf,
        /// Profile file to read, or to write with --build-profiles.
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = ThetaCondition::Theta21)]
        condition: ThetaCondition,
        #[arg(long)]
        build_profiles: bool,
        /// Decisions CSV (id, verdict, winner, Vp1, Vp2, threshold).
        #[arg(long, required_unless_present = "build_profiles")]
        out: Option<PathBuf>,
    },
    /// Repeated classification and authentication runs.
    Experiment {
        /// Corpus directory; features are extracted first.
        #[arg(long, required_unless_present = "features")]
        data: Option<PathBuf>,
        /// Labelled feature CSV instead of a corpus.
        #[arg(long, conflicts_with = "data")]
        features: Option<PathBuf>,
        /// Feature CSV of outlier categories (with --features).
        #[arg(long, requires = "features")]
        outliers: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Category counts, e.g. "2..15" or "2,3,5" (default 2..15, capped
        /// at the number of categories).
        #[arg(long)]
        p_range: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        train_fraction: Option<f64>,
        /// Comma-separated classifier names.
        #[arg(long)]
        classifiers: Option<String>,
        /// Comma-separated selection fractions for the feature sweep.
        #[arg(long)]
        sweep: Option<String>,
        #[command(flatten)]
        training: TrainingArgs,
    },
    /// Write a synthetic corpus.
    Synth {
        /// SynthConfig JSON; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        types: Option<usize>,
        #[arg(long)]
        outlier_types: Option<usize>,
        #[arg(long)]
        grains: Option<usize>,
        #[arg(long)]
        planes: Option<usize>,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct SelectionArgs {
    /// Keep this fraction of features (default 0.02).
    #[arg(long, conflicts_with = "count")]
    fraction: Option<f64>,
    /// Keep this many features.
    #[arg(long)]
    count: Option<usize>,
}

impl SelectionArgs {
    fn apply(&self, base: SelectionConfig) -> SelectionConfig {
        match (self.fraction, self.count) {
            (Some(f), _) => SelectionConfig::Fraction(f),
            (_, Some(n)) => SelectionConfig::Count(n),
            _ => base,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
struct TrainingArgs {
    #[command(flatten)]
    selection: SelectionArgs,
    /// Trees per random forest (default 500).
    #[arg(long)]
    trees: Option<usize>,
    /// Network training epochs (default 1000).
    #[arg(long)]
    epochs: Option<usize>,
    /// Maximum tree depth (default unlimited).
    #[arg(long)]
    max_depth: Option<usize>,
}

impl TrainingArgs {
    fn apply(&self, mut t: TrainConfig) -> TrainConfig {
        t.selection = self.selection.apply(t.selection);
        if let Some(n) = self.trees {
            t.forest.n_trees = n;
        }
        if let Some(e) = self.epochs {
            t.nn_epochs = e;
        }
        if let Some(d) = self.max_depth {
            t.tree.max_depth = Some(d);
            t.forest.max_depth = Some(d);
        }
        t
    }
}

/// Parameter file layout; every section is optional.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Params {
    pipeline: PipelineConfig,
    train: TrainConfig,
    experiment: Option<ExperimentConfig>,
    synth: SynthConfig,
}

impl Params {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn defaults_text() -> String {
    let defaults = Params {
        experiment: Some(ExperimentConfig::default()),
        ..Default::default()
    };
    format!(
        "Built-in parameters (override with --params FILE using this layout):\n{}",
        serde_json::to_string_pretty(&defaults).unwrap_or_default()
    )
}

fn version_text() -> String {
    format!(
        "multifocal {}\nfeature catalog {CATALOG_VERSION} ({} features)\nmodel format {MODEL_FORMAT_VERSION}\nreport format {REPORT_FORMAT_VERSION}",
        env!("CARGO_PKG_VERSION"),
        FeatureCatalog::standard().len()
    )
}

fn parse_p_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidParameter(format!("cannot parse category range {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("cannot parse {t:?}")))
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

#[derive(Serialize)]
struct GrainInfo {
    index: usize,
    bbox: BoundingBox,
    area: usize,
}

macro_rules! say {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout(), $($arg)*)?
    };
}

fn run(cli: Cli) -> Result<()> {
    let params = Params::load(cli.params.as_deref())?;
    let Some(command) = cli.command else {
        return Ok(());
    };
    match command {
        Command::Focus { stack, measure, out } => {
            let s = load_stack(&stack)?;
            let curve = select_optimal_plane_by_kind(&s, measure)?;
            say!("{}", curve.best_index);
            if let Some(out) = out {
                write_json(&out, &curve)?;
            }
        }
        Command::Segment { input, out } => {
            let img = if input.is_dir() {
                let s = load_stack(&input)?;
                let best = select_optimal_plane_by_kind(&s, params.pipeline.focus_measure)?.best_index;
                s.planes()[best].clone()
            } else {
                load_gray(&input)?
            };
            let source = input.to_string_lossy();
            let grains = segment_grains(&img, &source, &params.pipeline.coarse, &params.pipeline.snake)?;
            std::fs::create_dir_all(&out)?;
            let mut info = Vec::new();
            for (k, g) in grains.iter().enumerate() {
                save_png(&g.image, out.join(format!("grain_{k}.png")))?;
                save_mask_png(&g.mask, out.join(format!("mask_{k}.png")))?;
                info.push(GrainInfo {
                    index: k,
                    bbox: g.bbox,
                    area: g.mask.area(),
                });
            }
            write_json(&out.join("grains.json"), &info)?;
            say!("{} grain(s)", grains.len());
        }
        Command::Extract { data, grain, mask, out } => {
            let catalog = FeatureCatalog::standard();
            let m = match (data, grain, mask) {
                (Some(dir), _, _) => manifest_features(&Manifest::from_dir(&dir)?, &catalog, &params.pipeline)?,
                (None, Some(g), Some(mk)) => {
                    let img = load_gray(&g)?;
                    let mask = multifocal::image::load_mask(&mk)?;
                    let bbox = BoundingBox::new(0, 0, img.width(), img.height());
                    let rec = multifocal::segmentation::GrainRecord::new(g.to_string_lossy(), bbox, img, mask);
                    let mut m = FeatureMatrix::new(catalog.names());
                    m.push(g.to_string_lossy(), "", extract_all(&rec, &catalog)?.values)?;
                    m
                }
                _ => return Err(Error::InvalidParameter("give --data, or --grain with --mask".into())),
            };
            m.write_csv(&out)?;
            say!("{} row(s), {} feature(s)", m.len(), m.n_features());
        }
        Command::Select { features, selection, out } => {
            let m = FeatureMatrix::read_csv(&features)?;
            let s = Selection::fit(&m, selection.apply(params.train.selection))?;
            s.save(&out)?;
            for name in &s.selected_names {
                say!("{name}");
            }
        }
        Command::Train {
            features,
            model,
            out,
            training,
        } => {
            let m = FeatureMatrix::read_csv(&features)?;
            let cfg = training.apply(params.train);
            let trained = train_named(&model, &m, &cfg, cli.seed)?;
            trained.save(&out)?;
            let ev = evaluate(&trained, &m)?;
            say!("{model}: training accuracy {:.4}", ev.accuracy);
        }
        Command::Classify { model, features, out } => {
            let model = TrainedModel::load(&model)?;
            let m = FeatureMatrix::read_csv(&features)?;
            let aligned = model.align(&m)?;
            let mut rows = Vec::with_capacity(aligned.len());
            for (id, row) in aligned.ids.iter().zip(&aligned.rows) {
                let (c, _) = model.predict_row(row)?;
                rows.push((id.clone(), model.categories[c].clone()));
            }
            if aligned.labels.iter().all(|l| !l.is_empty()) {
                say!("accuracy {:.4}", evaluate(&model, &aligned)?.accuracy);
            }
            match out {
                Some(path) => {
                    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
                    w.write_record(["source_id", "predicted"]).map_err(Error::from)?;
                    for (id, p) in &rows {
                        w.write_record([id, p]).map_err(Error::from)?;
                    }
                    w.flush()?;
                }
                None => {
                    for (id, p) in &rows {
                        say!("{id},{p}");
                    }
                }
            }
        }
        Command::Auth {
            model,
            profiles,
            features,
            condition,
            build_profiles,
            out,
        } => {
            let model = TrainedModel::load(&model)?;
            let m = FeatureMatrix::read_csv(&features)?;
            if build_profiles {
                let p = build_tp_profiles(&model, &m)?;
                p.save(&profiles)?;
                for (c, prof) in p.categories.iter().zip(&p.profiles) {
                    say!("{c}: {} true positive(s)", prof.len());
                }
                return Ok(());
            }
            let auth = AuthModel::new(model, TpVoteProfile::load(&profiles)?, condition)?;
            let aligned = auth.model.align(&m)?;
            let decisions = authenticate_batch(&auth, &aligned)?;
            let out = out.expect("clap enforces --out");
            let mut w = csv::Writer::from_path(out).map_err(Error::from)?;
            w.write_record(["id", "verdict", "winner", "Vp1", "Vp2", "threshold"])
                .map_err(Error::from)?;
            for (id, d) in aligned.ids.iter().zip(&decisions) {
                let verdict = if d.verdict.is_inlier() { "inlier" } else { "outlier" };
                let threshold = d.vote_threshold.map_or(String::new(), |t| t.to_string());
                w.write_record([
                    id.as_str(),
                    verdict,
                    d.winner.as_str(),
                    &d.vp1.to_string(),
                    &d.vp2.to_string(),
                    &threshold,
                ])
                .map_err(Error::from)?;
            }
            w.flush()?;
            let inliers = decisions.iter().filter(|d| d.verdict.is_inlier()).count();
            say!("{inliers} inlier(s), {} outlier(s)", decisions.len() - inliers);
        }
        Command::Experiment {
            data,
            features,
            outliers: outliers_path,
            out,
            p_range,
            repeats,
            train_fraction,
            classifiers,
            sweep,
            training,
        } => {
            let (inliers, outliers) = match (&data, &features) {
                (Some(dir), _) => {
                    let manifest = Manifest::from_dir(dir)?;
                    let all = manifest_features(&manifest, &FeatureCatalog::standard(), &params.pipeline)?;
                    let outlier_cats = manifest.outlier_categories();
                    let (o, i): (Vec<usize>, Vec<usize>) =
                        (0..all.len()).partition(|&r| outlier_cats.contains(&all.labels[r]));
                    std::fs::create_dir_all(&out)?;
                    all.write_csv(out.join("features.csv"))?;
                    let o = all.select_rows(&o);
                    (all.select_rows(&i), (!o.is_empty()).then_some(o))
                }
                (None, Some(f)) => (
                    FeatureMatrix::read_csv(f)?,
                    outliers_path.as_ref().map(FeatureMatrix::read_csv).transpose()?,
                ),
                (None, None) => unreachable!("clap requires --data or --features"),
            };
            let mut cfg = params.experiment.clone().unwrap_or_default();
            cfg.seed = cli.seed;
            cfg.train = training.apply(params.experiment.as_ref().map_or(params.train, |e| e.train.clone()));
            let n_categories = inliers.categories().len();
            match &p_range {
                Some(s) => cfg.p_range = parse_p_range(s)?,
                None if params.experiment.is_none() => {
                    cfg.p_range.retain(|&p| p <= n_categories);
                    if cfg.p_range.is_empty() {
                        cfg.p_range = vec![n_categories];
                    }
                }
                None => {}
            }
            if let Some(r) = repeats {
                cfg.repeats = r;
            }
            if let Some(f) = train_fraction {
                cfg.train_fraction = f;
            }
            if let Some(c) = &classifiers {
                cfg.classifiers = parse_list(c)?;
            }
            if let Some(s) = &sweep {
                cfg.feature_fractions = parse_list(s)?;
            }
            let (mut report, timing) = run_experiment(&cfg, &inliers, outliers.as_ref())?;
            let mut echo = BTreeMap::new();
            echo.insert("seed".to_string(), cli.seed.to_string());
            let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default();
            echo.insert("data".into(), opt(&data));
            echo.insert("features".into(), opt(&features));
            echo.insert("outliers".into(), opt(&outliers_path));
            echo.insert("params".into(), opt(&cli.params));
            echo.insert("p_range".into(), p_range.unwrap_or_default());
            echo.insert("classifiers".into(), classifiers.unwrap_or_default());
            echo.insert("sweep".into(), sweep.unwrap_or_default());
            echo.insert("log_level".into(), cli.log_level.clone());
            let num = |v: Option<String>| v.unwrap_or_default();
            echo.insert("repeats".into(), num(repeats.map(|v| v.to_string())));
            echo.insert("train_fraction".into(), num(train_fraction.map(|v| v.to_string())));
            echo.insert("fraction".into(), num(training.selection.fraction.map(|v| v.to_string())));
            echo.insert("count".into(), num(training.selection.count.map(|v| v.to_string())));
            echo.insert("trees".into(), num(training.trees.map(|v| v.to_string())));
            echo.insert("epochs".into(), num(training.epochs.map(|v| v.to_string())));
            echo.insert("max_depth".into(), num(training.max_depth.map(|v| v.to_string())));
            report.echo = echo;
            emit_report(&report, Some(&timing), &out)?;
            let mut run_info = BTreeMap::new();
            run_info.insert("threads", rayon::current_num_threads().to_string());
            run_info.insert("out", out.to_string_lossy().into_owned());
            write_json(&out.join("run.json"), &run_info)?;
            for c in &cfg.classifiers {
                if let Some(a) = report.mean_accuracy(c) {
                    say!("{c}: mean accuracy {a:.4}");
                }
            }
            for c in &cfg.conditions {
                if let Some((i, o)) = report.mean_alphas(*c) {
                    say!("{c}: alpha_in {i:.4} alpha_out {o:.4}");
                }
            }
        }
        Command::Synth {
            config,
            out,
            types,
            outlier_types,
            grains,
            planes,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    if !p.exists() {
                        return Err(Error::FileNotFound(p));
                    }
                    serde_json::from_str(&std::fs::read_to_string(p)?)?
                }
                None => params.synth,
            };
            cfg.seed = cli.seed;
            if let Some(t) = types {
                cfg.n_types = t;
            }
            if let Some(t) = outlier_types {
                cfg.n_outlier_types = t;
            }
            if let Some(g) = grains {
                cfg.grains_per_type = g;
            }
            if let Some(p) = planes {
                cfg.planes = p;
            }
            let manifest = write_corpus(&cfg, &out)?;
            say!("{} stack(s) written to {}", manifest.entries.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let command = Cli::command().after_long_help(defaults_text());
    let matches = match command.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    if cli.version {
        println!("{}", version_text());
        return ExitCode::SUCCESS;
    }
    if cli.command.is_none() {
        let _ = Cli::command().print_help();
        return ExitCode::from(2);
    }
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error[invalid_parameter]: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use multifocal::classifiers::ClassifierRegistry;

    #[test]
    fn ranges() {
        assert_eq!(parse_p_range("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_p_range("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_p_range("2, 7").unwrap(), vec![2, 7]);
        assert!(parse_p_range("x").is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn registry_covers_cli_names() {
        for n in ["wnd5", "dt", "rf", "nn"] {
            assert!(ClassifierRegistry::standard().get(n).is_ok());
        }
    }
}
