//! End-to-end training: merge, long-tail cut, vectorize, fit, calibrate.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::{self, Hyperparams, LabelCodec, Model, ModelKind};
use crate::dispatcher::{Classifier, Router};
use crate::ensemble::{
    self, check_threshold, default_grid, EnsembleConfig, MemberPredictions, DEFAULT_TARGET_ACCURACY,
};
use crate::error::{Error, Result};
use crate::ingestion::{Ticket, TicketCorpus};
use crate::preprocessing::{
    apply_merge, build_merge_map, load_merge_config, normalize_text, split_long_tail, LongTailSplit, MergeFamily,
    MergeMap,
};
use crate::vectorizer::{fit_vocabulary_with, SparseVector, VectorizerConfig, Vocabulary};

/// Merge families given inline or as a path to a merge file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MergeSource {
    Inline(Vec<MergeFamily>),
    File(PathBuf),
}

impl Default for MergeSource {
    fn default() -> Self {
        MergeSource::Inline(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessingConfig {
    pub min_retained: f64,
    pub max_group_fraction: f64,
    #[serde(rename = "merge_config", alias = "merge")]
    pub merge: MergeSource,
}

impl Default for PreprocessingConfig {
    fn default() -> Self {
        PreprocessingConfig { min_retained: 0.98, max_group_fraction: 0.2, merge: MergeSource::default() }
    }
}

fn default_members() -> [ModelKind; 2] {
    [ModelKind::Svm, ModelKind::Mlp]
}

fn default_target() -> f64 {
    DEFAULT_TARGET_ACCURACY
}

fn default_validation_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RouterConfig {
    /// Two-member ensemble. Without explicit thresholds they are selected on
    /// a stratified validation split of the training data.
    Pair {
        #[serde(default = "default_members")]
        members: [ModelKind; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thresholds: Option<[f64; 2]>,
        #[serde(default = "default_target")]
        target_accuracy: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<Vec<f64>>,
        #[serde(default = "default_validation_fraction")]
        validation_fraction: f64,
    },
    Single {
        model: ModelKind,
        #[serde(default)]
        threshold: f64,
    },
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig::Pair {
            members: default_members(),
            thresholds: None,
            target_accuracy: DEFAULT_TARGET_ACCURACY,
            grid: None,
            validation_fraction: default_validation_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub preprocessing: PreprocessingConfig,
    pub vectorizer: VectorizerConfig,
    pub classifiers: Hyperparams,
    #[serde(rename = "ensemble", alias = "router")]
    pub router: RouterConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data: None,
            preprocessing: PreprocessingConfig::default(),
            vectorizer: VectorizerConfig::default(),
            classifiers: Hyperparams::default(),
            router: RouterConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config. Relative paths inside it are resolved against the
    /// config file's directory, and a merge file reference is inlined.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = &cfg.data {
            if d.is_relative() {
                cfg.data = Some(base.join(d));
            }
        }
        if let MergeSource::File(f) = &cfg.preprocessing.merge {
            let f = if f.is_relative() { base.join(f) } else { f.clone() };
            cfg.preprocessing.merge = MergeSource::Inline(load_merge_config(f)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.router {
            RouterConfig::Pair { members, thresholds, target_accuracy, grid, validation_fraction } => {
                if members[0] == members[1] {
                    return Err(Error::InvalidConfig(format!("ensemble members must differ, both are {}", members[0])));
                }
                if let Some([a, b]) = thresholds {
                    check_threshold(*a)?;
                    check_threshold(*b)?;
                }
                if !(0.0..=1.0).contains(target_accuracy) {
                    return Err(Error::InvalidConfig(format!("target accuracy {target_accuracy} outside [0, 1]")));
                }
                if let Some(g) = grid {
                    if g.is_empty() {
                        return Err(Error::InvalidConfig("empty threshold grid".into()));
                    }
                    g.iter().try_for_each(|t| check_threshold(*t))?;
                }
                if thresholds.is_none() && !(*validation_fraction > 0.0 && *validation_fraction < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "validation fraction {validation_fraction} outside (0, 1)"
                    )));
                }
            }
            RouterConfig::Single { threshold, .. } => check_threshold(*threshold)?,
        }
        Ok(())
    }

    pub fn merge_families(&self) -> Result<Vec<MergeFamily>> {
        match &self.preprocessing.merge {
            MergeSource::Inline(f) => Ok(f.clone()),
            MergeSource::File(p) => load_merge_config(p),
        }
    }

    /// Stable digest of the settings that influence training.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.data = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Threshold search result kept with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold_a: f64,
    pub threshold_b: f64,
    pub validation_size: usize,
    pub validation_accuracy: Option<f64>,
    pub validation_coverage: f64,
    pub target_accuracy: f64,
    pub target_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub data_sha256: String,
    pub training_tickets: usize,
    /// Seconds since the epoch, taken from `SOURCE_DATE_EPOCH` (0 if unset).
    pub created: u64,
}

/// A trained router plus the preprocessing state needed to use and score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Engine {
    pub router: Router,
    pub merge: MergeMap,
    pub split: LongTailSplit,
    pub calibration: Option<Calibration>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub engine: Engine,
    /// Wall-clock fitting time per model kind.
    pub train_seconds: BTreeMap<ModelKind, f64>,
}

/// Digest of the ticket stream in order.
pub fn corpus_digest(tickets: &[Ticket]) -> String {
    let mut h = Sha256::new();
    for t in tickets {
        h.update(serde_json::to_vec(t).expect("tickets serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn source_date_epoch() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()).unwrap_or(0)
}

pub(crate) fn model_seed(seed: u64, kind: ModelKind) -> u64 {
    let salt = ModelKind::ALL.iter().position(|k| *k == kind).expect("known kind") as u64 + 1;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

/// Stratified split by gold label: within each label, `fraction` of tickets
/// (rounded down) go to the second part. Labels with one ticket stay in the
/// first part. Input order is preserved inside each part.
pub fn stratified_split(tickets: &[Ticket], fraction: f64, seed: u64) -> (Vec<Ticket>, Vec<Ticket>) {
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in tickets.iter().enumerate() {
        by_label.entry(t.gold_group.as_deref().unwrap_or("")).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = vec![false; tickets.len()];
    for idx in by_label.values_mut() {
        idx.shuffle(&mut rng);
        let n = (idx.len() as f64 * fraction).floor() as usize;
        for &i in &idx[..n] {
            held[i] = true;
        }
    }
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (t, h) in tickets.iter().zip(held) {
        if h {
            second.push(t.clone());
        } else {
            first.push(t.clone());
        }
    }
    (first, second)
}

/// Training matrix of labelled tickets.
pub struct Featurized {
    pub data: Vec<(SparseVector, usize)>,
    pub codec: LabelCodec,
}

pub fn featurize(tickets: &[Ticket], vocabulary: &Vocabulary, codec: &LabelCodec) -> Result<Vec<(SparseVector, usize)>> {
    tickets
        .iter()
        .map(|t| {
            let gold = t.gold_group.as_deref().ok_or_else(|| Error::MissingGold(t.id.clone()))?;
            let y = codec
                .encode(gold)
                .ok_or_else(|| Error::InvalidConfig(format!("ticket {} has unknown label {gold}", t.id)))?;
            Ok((vocabulary.transform(&normalize_text(&t.subject, &t.body)), y))
        })
        .collect()
}

/// Fits a vocabulary and label codec on `tickets` and vectorizes them.
pub fn fit_features(tickets: &[Ticket], config: &VectorizerConfig) -> Result<(Vocabulary, Featurized)> {
    let docs: Vec<Vec<String>> = tickets.iter().map(|t| normalize_text(&t.subject, &t.body)).collect();
    let vocabulary = fit_vocabulary_with(&docs, config)?;
    let codec = LabelCodec::new(tickets.iter().filter_map(|t| t.gold_group.clone()));
    let data = featurize(tickets, &vocabulary, &codec)?;
    Ok((vocabulary, Featurized { data, codec }))
}

fn timed_train(
    kind: ModelKind,
    f: &Featurized,
    n_features: usize,
    hyper: &Hyperparams,
    seed: u64,
    times: &mut BTreeMap<ModelKind, f64>,
) -> Result<Model> {
    let start = Instant::now();
    let m = classifiers::train(kind, &f.data, n_features, &f.codec, hyper, model_seed(seed, kind))?;
    times.insert(kind, start.elapsed().as_secs_f64());
    log::info!("trained {kind} in {:.2}s", times[&kind]);
    Ok(m)
}

pub fn train_pipeline(corpus: &TicketCorpus, config: &PipelineConfig) -> Result<TrainReport> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let merge = build_merge_map(&config.merge_families()?)?;
    let merged = apply_merge(corpus, &merge);
    let split = split_long_tail(&merged, config.preprocessing.min_retained, config.preprocessing.max_group_fraction)?;
    log::info!(
        "long-tail cut: {} head / {} tail groups, {:.2}% of tickets retained",
        split.head_labels.len(),
        split.tail_labels.len(),
        split.retained_fraction * 100.0
    );
    let head: Vec<Ticket> = merged
        .tickets()
        .iter()
        .filter(|t| t.gold_group.as_ref().is_some_and(|g| split.head_labels.contains(g)))
        .cloned()
        .collect();

    let seed = config.seed;
    let mut times = BTreeMap::new();
    let (classifier, vocabulary, calibration) = match &config.router {
        RouterConfig::Single { model, threshold } => {
            let (vocab, f) = fit_features(&head, &config.vectorizer)?;
            let m = timed_train(*model, &f, vocab.len(), &config.classifiers, seed, &mut times)?;
            (Classifier::Single { model: m, threshold: *threshold }, vocab, None)
        }
        RouterConfig::Pair { members, thresholds, target_accuracy, grid, validation_fraction } => {
            let (fit_part, validation) = match thresholds {
                Some(_) => (head.clone(), Vec::new()),
                None => stratified_split(&head, *validation_fraction, seed),
            };
            let (vocab, f) = fit_features(&fit_part, &config.vectorizer)?;
            let a = timed_train(members[0], &f, vocab.len(), &config.classifiers, seed, &mut times)?;
            let b = timed_train(members[1], &f, vocab.len(), &config.classifiers, seed, &mut times)?;
            let (cfg, calibration) = match thresholds {
                Some([ta, tb]) => (
                    EnsembleConfig {
                        member_a: members[0],
                        member_b: members[1],
                        threshold_a: *ta,
                        threshold_b: *tb,
                        target_accuracy: *target_accuracy,
                    },
                    None,
                ),
                None => {
                    let cached = member_predictions(&validation, &vocab, &a, &b)?;
                    let grid = grid.clone().unwrap_or_else(default_grid);
                    let sel = ensemble::select_thresholds(&cached, *target_accuracy, &grid, (members[0], members[1]))?;
                    if !sel.target_met {
                        log::warn!("no threshold pair reached accuracy {target_accuracy} on validation");
                    }
                    let cal = Calibration {
                        threshold_a: sel.config.threshold_a,
                        threshold_b: sel.config.threshold_b,
                        validation_size: cached.len(),
                        validation_accuracy: sel.accuracy(),
                        validation_coverage: sel.coverage(),
                        target_accuracy: *target_accuracy,
                        target_met: sel.target_met,
                    };
                    (sel.config, Some(cal))
                }
            };
            (Classifier::Pair { a, b, config: cfg }, vocab, calibration)
        }
    };
    let router = Router { vocabulary, classifier };
    router.classifier.validate()?;
    let provenance = Provenance {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_sha256: config.digest(),
        data_sha256: corpus_digest(corpus.tickets()),
        training_tickets: head.len(),
        created: source_date_epoch(),
    };
    Ok(TrainReport { engine: Engine { router, merge, split, calibration, provenance }, train_seconds: times })
}

/// Member predictions for labelled tickets, for threshold search and sweeps.
pub fn member_predictions(tickets: &[Ticket], vocabulary: &Vocabulary, a: &Model, b: &Model) -> Result<Vec<MemberPredictions>> {
    tickets
        .iter()
        .map(|t| {
            let x = vocabulary.transform(&normalize_text(&t.subject, &t.body));
            Ok(MemberPredictions {
                a: a.predict(&x)?,
                b: b.predict(&x)?,
                gold: t.gold_group.clone().ok_or_else(|| Error::MissingGold(t.id.clone()))?,
            })
        })
        .collect()
}

impl Engine {
    /// Labels the classifier can emit.
    pub fn head_labels(&self) -> BTreeSet<String> {
        self.router.classifier.labels().iter().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus() -> TicketCorpus {
        let mut v = Vec::new();
        for i in 0..40 {
            v.push(Ticket::new(format!("a{i}"), "password reset", "cannot login account locked").with_gold("ACCESS"));
            v.push(Ticket::new(format!("b{i}"), "printer jam", "paper stuck in tray printer").with_gold("PRINT"));
        }
        v.push(Ticket::new("c0", "sap posting", "ledger").with_gold("SAP"));
        TicketCorpus::new(v)
    }

    fn small_config() -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.classifiers.mlp.hidden = 8;
        c.classifiers.mlp.epochs = 5;
        c.classifiers.svm.epochs = 5;
        c.preprocessing.max_group_fraction = 1.0;
        c
    }

    #[test]
    fn stratified_split_keeps_singletons() {
        let corpus = tiny_corpus();
        let (a, b) = stratified_split(corpus.tickets(), 0.25, 3);
        assert_eq!(b.len(), 20);
        assert_eq!(a.len() + b.len(), corpus.len());
        assert!(a.iter().any(|t| t.id == "c0"));
        assert_eq!(b.iter().filter(|t| t.gold_group.as_deref() == Some("ACCESS")).count(), 10);
    }

    #[test]
    fn pair_training_calibrates() {
        let r = train_pipeline(&tiny_corpus(), &small_config()).unwrap();
        let e = &r.engine;
        assert_eq!(e.split.tail_labels, BTreeSet::from(["SAP".to_string()]));
        assert_eq!(e.head_labels(), BTreeSet::from(["ACCESS".to_string(), "PRINT".to_string()]));
        let cal = e.calibration.as_ref().unwrap();
        assert_eq!(cal.validation_size, 8);
        assert!(cal.target_met);
        assert_eq!(e.provenance.training_tickets, 80);
    }

    #[test]
    fn training_is_deterministic() {
        let a = train_pipeline(&tiny_corpus(), &small_config()).unwrap().engine;
        let b = train_pipeline(&tiny_corpus(), &small_config()).unwrap().engine;
        assert_eq!(a, b);
    }

    #[test]
    fn single_mode() {
        let mut c = small_config();
        c.router = RouterConfig::Single { model: ModelKind::Nb, threshold: 0.0 };
        let e = train_pipeline(&tiny_corpus(), &c).unwrap().engine;
        assert!(matches!(e.router.classifier, Classifier::Single { .. }));
        assert!(e.calibration.is_none());
    }

    #[test]
    fn config_validation() {
        let mut c = PipelineConfig::default();
        c.router = RouterConfig::Pair {
            members: [ModelKind::Svm, ModelKind::Svm],
            thresholds: None,
            target_accuracy: 0.85,
            grid: None,
            validation_fraction: 0.1,
        };
        assert!(c.validate().is_err());
        c.router = RouterConfig::Single { model: ModelKind::Lr, threshold: 1.5 };
        assert!(matches!(c.validate(), Err(Error::InvalidThreshold(_))));
    }

    #[test]
    fn config_json_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"seed": 7, "ensemble": {"mode": "pair", "thresholds": [0.5, 0.6]}}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.classifiers.mlp.hidden, 256);
        assert!(matches!(c.router, RouterConfig::Pair { thresholds: Some([a, b]), .. } if a == 0.5 && b == 0.6));
    }
}
