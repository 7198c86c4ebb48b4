//! Repeated classification and authentication runs over random category
//! subsets, and their reports.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::authentication::{authenticate_batch, build_tp_profiles, AuthModel, ThetaCondition};
use crate::classifiers::{evaluate, train_named, ClassifierRegistry, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::selection::SelectionConfig;

use super::dataset::{build_subdataset, restrict, split_dataset};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Category counts to evaluate.
    pub p_range: Vec<usize>,
    pub repeats: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub classifiers: Vec<String>,
    /// Selection fractions swept for the classifiers that use selection.
    pub feature_fractions: Vec<f64>,
    pub train: TrainConfig,
    pub conditions: Vec<ThetaCondition>,
    /// Build authentication profiles on a third split carved from the
    /// training rows instead of on the testing split.
    pub profile_split: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            p_range: (2..=15).collect(),
            repeats: 10,
            train_fraction: 0.75,
            seed: 0,
            classifiers: ["wnd5", "dt", "rf", "nn"].map(String::from).to_vec(),
            feature_fractions: vec![0.005, 0.01, 0.02, 0.05, 0.1, 0.2],
            train: TrainConfig::default(),
            conditions: ThetaCondition::ALL.to_vec(),
            profile_split: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, available: usize) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidParameter("repeats must be >= 1".into()));
        }
        if self.p_range.is_empty() {
            return Err(Error::InvalidParameter("empty category-count range".into()));
        }
        if let Some(&p) = self.p_range.iter().find(|&&p| p < 2 || p > available) {
            return Err(Error::CountOutOfRange { count: p, max: available });
        }
        for c in &self.classifiers {
            ClassifierRegistry::standard().get(c)?;
        }
        if self.feature_fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::InvalidParameter("feature fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A seed derived from `master` along an independent stream.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.random()
}

fn name_stream(name: &str) -> u64 {
    // FNV-1a
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct CellSeeds {
    subset: u64,
    split: u64,
    cell: u64,
}

fn cell_seeds(master: u64, p: usize, repeat: usize) -> CellSeeds {
    let cell = derive_seed(master, ((p as u64) << 32) | repeat as u64);
    CellSeeds {
        subset: derive_seed(cell, 1),
        split: derive_seed(cell, 2),
        cell,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRow {
    pub p: usize,
    pub repeat: usize,
    pub classifier: String,
    pub n_features: usize,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Categories of this cell, joined with `;`.
    pub categories: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: usize,
    pub repeat: usize,
    pub classifier: String,
    pub fraction: f64,
    pub n_features: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuthRow {
    pub p: usize,
    pub repeat: usize,
    pub condition: ThetaCondition,
    /// Inliers accepted with the correct label, over all inliers.
    pub alpha_in: f64,
    /// Outliers rejected, over all outliers.
    pub alpha_out: f64,
    pub n_in: usize,
    pub n_out: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Cell key, e.g. classifier name or condition, plus any sweep value.
    pub key: String,
    pub p: usize,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    (m, (ss / (n - 1.0)).sqrt())
}

fn aggregate<'a>(items: impl Iterator<Item = (String, usize, f64)> + 'a) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for (k, p, v) in items {
        groups.entry((k, p)).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|((key, p), v)| {
            let (mean, sd) = mean_sd(&v);
            Aggregate {
                key,
                p,
                n: v.len(),
                mean,
                sd,
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub config: ExperimentConfig,
    /// Caller-supplied settings echoed verbatim (e.g. command-line flags).
    pub echo: BTreeMap<String, String>,
    pub classification: Vec<ClassificationRow>,
    pub sweep: Vec<SweepRow>,
    pub authentication: Vec<AuthRow>,
    pub classification_summary: Vec<Aggregate>,
    pub sweep_summary: Vec<Aggregate>,
    pub alpha_in_summary: Vec<Aggregate>,
    pub alpha_out_summary: Vec<Aggregate>,
}

impl Report {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            format_version: REPORT_FORMAT_VERSION,
            config,
            ..Default::default()
        }
    }

    /// Recomputes every summary from the rows.
    pub fn summarize(&mut self) {
        self.classification_summary = aggregate(
            self.classification
                .iter()
                .map(|r| (r.classifier.clone(), r.p, r.accuracy)),
        );
        self.sweep_summary = aggregate(
            self.sweep
                .iter()
                .map(|r| (format!("{}@{}", r.classifier, r.fraction), r.p, r.accuracy)),
        );
        self.alpha_in_summary = aggregate(
            self.authentication
                .iter()
                .map(|r| (r.condition.name().to_string(), r.p, r.alpha_in)),
        );
        self.alpha_out_summary = aggregate(
            self.authentication
                .iter()
                .map(|r| (r.condition.name().to_string(), r.p, r.alpha_out)),
        );
    }

    /// Mean accuracy of `classifier` over every row (all `p`).
    pub fn mean_accuracy(&self, classifier: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .classification
            .iter()
            .filter(|r| r.classifier == classifier)
            .map(|r| r.accuracy)
            .collect();
        (!v.is_empty()).then(|| mean_sd(&v).0)
    }

    /// Mean (alpha_in, alpha_out) of `condition` over every row.
    pub fn mean_alphas(&self, condition: ThetaCondition) -> Option<(f64, f64)> {
        let rows: Vec<&AuthRow> = self.authentication.iter().filter(|r| r.condition == condition).collect();
        if rows.is_empty() {
            return None;
        }
        let ins: Vec<f64> = rows.iter().map(|r| r.alpha_in).collect();
        let outs: Vec<f64> = rows.iter().map(|r| r.alpha_out).collect();
        Some((mean_sd(&ins).0, mean_sd(&outs).0))
    }
}

/// Wall-clock time, kept apart from the report so reports stay reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub classification_seconds: f64,
    pub authentication_seconds: f64,
}

fn labelled(m: &FeatureMatrix) -> FeatureMatrix {
    let rows: Vec<usize> = (0..m.len()).filter(|&r| !m.labels[r].is_empty()).collect();
    m.select_rows(&rows)
}

fn cells(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    cfg.p_range
        .iter()
        .flat_map(|&p| (0..cfg.repeats).map(move |r| (p, r)))
        .collect()
}

fn assert_disjoint(train: &FeatureMatrix, test: &FeatureMatrix) {
    assert!(
        train.ids.iter().all(|id| !test.ids.contains(id)),
        "train and test share samples"
    );
}

/// For every `(p, repeat)`: draw `p` categories, split, then train and
/// evaluate each classifier; classifiers using selection are also swept
/// over the configured feature fractions.
pub fn run_classification_experiment(cfg: &ExperimentConfig, data: &FeatureMatrix) -> Result<Report> {
    let data = labelled(data);
    let categories = data.categories();
    cfg.validate(categories.len())?;

    type Cell = (Vec<ClassificationRow>, Vec<SweepRow>);
    let results: Vec<Cell> = cells(cfg)
        .par_iter()
        .map(|&(p, repeat)| -> Result<Cell> {
            let seeds = cell_seeds(cfg.seed, p, repeat);
            let chosen = build_subdataset(&categories, p, seeds.subset)?;
            let (train, test) = split_dataset(&restrict(&data, &chosen), cfg.train_fraction, seeds.split)?;
            assert_disjoint(&train, &test);
            let mut rows = Vec::new();
            let mut sweep = Vec::new();
            for name in &cfg.classifiers {
                let seed = derive_seed(seeds.cell, name_stream(name));
                let model = train_named(name, &train, &cfg.train, seed)?;
                let ev = evaluate(&model, &test)?;
                rows.push(ClassificationRow {
                    p,
                    repeat,
                    classifier: name.clone(),
                    n_features: model.selection.as_ref().map_or(model.feature_names.len(), |s| s.indices.len()),
                    accuracy: ev.accuracy,
                    n_train: train.len(),
                    n_test: test.len(),
                    categories: chosen.join(";"),
                });
                if model.selection.is_none() {
                    continue;
                }
                for &fraction in &cfg.feature_fractions {
                    let tc = TrainConfig {
                        selection: SelectionConfig::Fraction(fraction),
                        ..cfg.train.clone()
                    };
                    let m = train_named(name, &train, &tc, seed)?;
                    sweep.push(SweepRow {
                        p,
                        repeat,
                        classifier: name.clone(),
                        fraction,
                        n_features: m.selection.as_ref().map_or(0, |s| s.indices.len()),
                        accuracy: evaluate(&m, &test)?.accuracy,
                    });
                }
            }
            Ok((rows, sweep))
        })
        .collect::<Result<_>>()?;

    let mut report = Report::new(cfg.clone());
    for (rows, sweep) in results {
        report.classification.extend(rows);
        report.sweep.extend(sweep);
    }
    report.summarize();
    Ok(report)
}

/// For every `(p, repeat)`: draw `p` categories from `inliers`, split, train
/// a forest, build true-positive profiles, then authenticate the testing
/// split (inliers) and every row of `outliers` under each condition.
pub fn run_authentication_experiment(
    cfg: &ExperimentConfig,
    inliers: &FeatureMatrix,
    outliers: &FeatureMatrix,
) -> Result<Vec<AuthRow>> {
    let inliers = labelled(inliers);
    let categories = inliers.categories();
    if let Some(c) = outliers.categories().into_iter().find(|c| categories.contains(c)) {
        return Err(Error::CategoryOverlap(c));
    }
    if outliers.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    cfg.validate(categories.len())?;
    let outliers = outliers.align_to(&inliers.names)?;

    let results: Vec<Vec<AuthRow>> = cells(cfg)
        .par_iter()
        .map(|&(p, repeat)| -> Result<Vec<AuthRow>> {
            let seeds = cell_seeds(cfg.seed, p, repeat);
            let chosen = build_subdataset(&categories, p, seeds.subset)?;
            let (train, test) = split_dataset(&restrict(&inliers, &chosen), cfg.train_fraction, seeds.split)?;
            assert_disjoint(&train, &test);
            let (train, profile_rows) = if cfg.profile_split {
                split_dataset(&train, cfg.train_fraction, derive_seed(seeds.cell, 3))?
            } else {
                (train, test.clone())
            };
            let model = train_named("rf", &train, &cfg.train, derive_seed(seeds.cell, name_stream("rf")))?;
            let profiles = build_tp_profiles(&model, &profile_rows)?;
            let mut rows = Vec::new();
            for &condition in &cfg.conditions {
                let auth = AuthModel::new(model.clone(), profiles.clone(), condition)?;
                let din = authenticate_batch(&auth, &test)?;
                let dout = authenticate_batch(&auth, &outliers)?;
                let accepted_right = din
                    .iter()
                    .zip(&test.labels)
                    .filter(|(d, l)| matches!(&d.verdict, crate::authentication::Verdict::Inlier(c) if c == *l))
                    .count();
                let rejected = dout.iter().filter(|d| !d.verdict.is_inlier()).count();
                rows.push(AuthRow {
                    p,
                    repeat,
                    condition,
                    alpha_in: accepted_right as f64 / din.len() as f64,
                    alpha_out: rejected as f64 / dout.len() as f64,
                    n_in: din.len(),
                    n_out: dout.len(),
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// Classification and, when outliers are given, authentication.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &FeatureMatrix,
    outliers: Option<&FeatureMatrix>,
) -> Result<(Report, Timing)> {
    let t0 = Instant::now();
    let mut report = run_classification_experiment(cfg, data)?;
    let classification_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    if let Some(out) = outliers {
        report.authentication = run_authentication_experiment(cfg, data, out)?;
        report.summarize();
    }
    Ok((
        report,
        Timing {
            classification_seconds,
            authentication_seconds: t1.elapsed().as_secs_f64(),
        },
    ))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    use std::io::Write;
    writeln!(file, "# multifocal report v{REPORT_FORMAT_VERSION}")?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    format_version: u32,
    config: &'a ExperimentConfig,
    echo: &'a BTreeMap<String, String>,
    classification: &'a [Aggregate],
    sweep: &'a [Aggregate],
    alpha_in: &'a [Aggregate],
    alpha_out: &'a [Aggregate],
}

#[derive(Serialize)]
struct AuthFigureRow<'a> {
    condition: &'a str,
    p: usize,
    n: usize,
    alpha_in_mean: f64,
    alpha_in_sd: f64,
    alpha_out_mean: f64,
    alpha_out_sd: f64,
}

/// Writes `report.json`, `summary.json`, `classification.csv`, `sweep.csv`,
/// `authentication.csv`, the per-figure files `alpha_vs_p.csv`,
/// `alpha_vs_features.csv` and `auth_vs_p.csv`, and `timing.json` when
/// timing is given. Everything except `timing.json` depends only on the
/// report.
pub fn emit_report(report: &Report, timing: Option<&Timing>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    let summary = Summary {
        format_version: report.format_version,
        config: &report.config,
        echo: &report.echo,
        classification: &report.classification_summary,
        sweep: &report.sweep_summary,
        alpha_in: &report.alpha_in_summary,
        alpha_out: &report.alpha_out_summary,
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    write_rows(&dir.join("classification.csv"), &report.classification)?;
    write_rows(&dir.join("sweep.csv"), &report.sweep)?;
    write_rows(&dir.join("authentication.csv"), &report.authentication)?;
    write_rows(&dir.join("alpha_vs_p.csv"), &report.classification_summary)?;
    write_rows(&dir.join("alpha_vs_features.csv"), &report.sweep_summary)?;
    let auth_fig: Vec<AuthFigureRow> = report
        .alpha_in_summary
        .iter()
        .zip(&report.alpha_out_summary)
        .map(|(i, o)| AuthFigureRow {
            condition: &i.key,
            p: i.p,
            n: i.n,
            alpha_in_mean: i.mean,
            alpha_in_sd: i.sd,
            alpha_out_mean: o.mean,
            alpha_out_sd: o.sd,
        })
        .collect();
    write_rows(&dir.join("auth_vs_p.csv"), &auth_fig)?;
    if let Some(t) = timing {
        std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(t)?)?;
    }
    Ok(())
}

pub fn load_report(dir: &Path) -> Result<Report> {
    let path = dir.join("report.json");
    if !path.exists() {
        return Err(Error::FileNotFound(path));
    }
    let r: Report = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if r.format_version != REPORT_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "report format {} (expected {REPORT_FORMAT_VERSION})",
            r.format_version
        )));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Three well separated categories on two informative features plus noise.
    fn corpus(per: usize, cats: usize, seed: u64) -> FeatureMatrix {
        let names: Vec<String> = (0..6).map(|i| format!("f{i}")).collect();
        let mut m = FeatureMatrix::new(names);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in 0..cats {
            for i in 0..per {
                let row: Vec<f64> = (0..6)
                    .map(|j| {
                        let centre = if j < 2 { 3.0 * c as f64 * (j as f64 + 1.0) } else { 0.0 };
                        centre + rng.random_range(-1.0..1.0)
                    })
                    .collect();
                m.push(format!("c{c}-{i}"), format!("cat{c}"), row).unwrap();
            }
        }
        m
    }

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            p_range: vec![2, 3],
            repeats: 2,
            feature_fractions: vec![0.34, 1.0],
            train: TrainConfig {
                selection: SelectionConfig::Count(2),
                forest: crate::classifiers::ForestParams {
                    n_trees: 25,
                    ..Default::default()
                },
                nn_epochs: 100,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn row_counts_and_summaries() {
        let cfg = small_cfg();
        let r = run_classification_experiment(&cfg, &corpus(12, 3, 1)).unwrap();
        assert_eq!(r.classification.len(), 2 * 2 * 4);
        // wnd5 and nn, two fractions each
        assert_eq!(r.sweep.len(), 2 * 2 * 2 * 2);
        for a in &r.classification_summary {
            let v: Vec<f64> = r
                .classification
                .iter()
                .filter(|x| x.classifier == a.key && x.p == a.p)
                .map(|x| x.accuracy)
                .collect();
            let (m, s) = mean_sd(&v);
            assert!((m - a.mean).abs() < 1e-12 && (s - a.sd).abs() < 1e-12);
        }
        assert!(r.mean_accuracy("rf").unwrap() > 0.9);
    }

    #[test]
    fn reports_are_reproducible_and_round_trip() {
        let cfg = small_cfg();
        let data = corpus(12, 3, 2);
        let outliers = {
            let mut o = corpus(5, 1, 9);
            o.labels = vec!["other".into(); o.len()];
            for r in &mut o.rows {
                r[0] += 1.5;
                r[1] += 4.0;
            }
            o
        };
        let (a, _) = run_experiment(&cfg, &data, Some(&outliers)).unwrap();
        let (b, _) = run_experiment(&cfg, &data, Some(&outliers)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.authentication.len(), 2 * 2 * 4);

        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        emit_report(&a, Some(&Timing::default()), d1.path()).unwrap();
        emit_report(&b, None, d2.path()).unwrap();
        for f in ["report.json", "summary.json", "classification.csv", "auth_vs_p.csv"] {
            assert_eq!(
                std::fs::read(d1.path().join(f)).unwrap(),
                std::fs::read(d2.path().join(f)).unwrap(),
                "{f}"
            );
        }
        assert_eq!(load_report(d1.path()).unwrap(), a);
        let csv = std::fs::read_to_string(d1.path().join("classification.csv")).unwrap();
        assert!(csv.starts_with("# multifocal report v1\np,repeat,classifier"));
    }

    #[test]
    fn overlap_and_range_errors() {
        let cfg = small_cfg();
        let data = corpus(8, 3, 3);
        let same = corpus(3, 1, 4);
        assert!(matches!(
            run_authentication_experiment(&cfg, &data, &same),
            Err(Error::CategoryOverlap(_))
        ));
        let wide = ExperimentConfig {
            p_range: vec![4],
            ..small_cfg()
        };
        assert!(matches!(
            run_classification_experiment(&wide, &data),
            Err(Error::CountOutOfRange { count: 4, max: 3 })
        ));
    }

    #[test]
    fn classifier_seeds_are_independent_of_the_set() {
        let data = corpus(10, 3, 5);
        let all = run_classification_experiment(&small_cfg(), &data).unwrap();
        let only_rf = run_classification_experiment(
            &ExperimentConfig {
                classifiers: vec!["rf".into()],
                ..small_cfg()
            },
            &data,
        )
        .unwrap();
        let rf: Vec<&ClassificationRow> = all.classification.iter().filter(|r| r.classifier == "rf").collect();
        assert_eq!(rf.len(), only_rf.classification.len());
        for (a, b) in rf.iter().zip(&only_rf.classification) {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn mean_sd_basics() {
        assert_eq!(mean_sd(&[1.0]), (1.0, 0.0));
        let (m, s) = mean_sd(&[300.0, 400.0, 500.0]);
        assert_eq!((m, s), (400.0, 100.0));
    }
}
