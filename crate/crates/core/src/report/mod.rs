//! Run orchestration: configuration, the staged pipeline, and report emission.

mod config;
mod emit;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{InputPaths, RunConfig};
pub use emit::{emit_report, render_csv_bundle, render_json, render_markdown, ReportFormat};

use crate::analytics::{
    all_trajectories, demographic_table, demographic_tables_by_model, dreamsim_series, metric_hqs_correlation,
    saturation, DemographicTable, MetricHqsCorrelation, Saturation, Trajectory,
};
use crate::corpus::{
    load_embeddings, validate_run, Country, CorpusError, EmbeddingSet, Finding, ImageRecord, LineRecord,
    Metric, Protocol, RunInputs, Severity, ValidationReport,
};
use crate::cultscore::{
    agreement_rate, agreement_table, human_picks, metric_selections, qa_audit, score_all, task_images, Agreement,
    CultureScore, QaAudit, SelectionKind, SelectionOutcome,
};
use crate::humaneval::{qc_scan, summarize_all, HqsSummary, QcFlag};
use crate::leaning::{analyze_model, LeaningError, ModelLeaning};
use crate::modes::{fit_all_models, model_data, ClusterModel};
use crate::proximity::{
    analyze_pair, nearest_neighbors, pairs_with_data, proximity_table, NeighborReport, ProximityError,
    ProximityResult, ProximityTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Corpus,
    Modes,
    Proximity,
    Leaning,
    Cultscore,
    Humaneval,
    Analytics,
    Emit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        f.write_str(s.as_str().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("[{stage}] missing input: {message}")]
    MissingInput { stage: Stage, message: String },
    #[error("[{stage}] invalid input: {message}")]
    Invalid { stage: Stage, message: String },
    #[error("[{stage}] internal error: {message}")]
    Internal { stage: Stage, message: String },
}

impl PipelineError {
    pub fn missing(stage: Stage, message: impl Into<String>) -> Self {
        PipelineError::MissingInput { stage, message: message.into() }
    }

    pub fn invalid(stage: Stage, message: impl Into<String>) -> Self {
        PipelineError::Invalid { stage, message: message.into() }
    }

    pub fn internal(stage: Stage, message: impl Into<String>) -> Self {
        PipelineError::Internal { stage, message: message.into() }
    }

    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::MissingInput { stage, .. }
            | PipelineError::Invalid { stage, .. }
            | PipelineError::Internal { stage, .. } => *stage,
        }
    }

    /// Process exit code: 1 invalid input, 2 missing input, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Invalid { .. } => 1,
            PipelineError::MissingInput { .. } => 2,
            PipelineError::Internal { .. } => 3,
        }
    }

    fn corpus(e: CorpusError) -> Self {
        if e.is_missing_input() {
            PipelineError::missing(Stage::Corpus, e.to_string())
        } else {
            PipelineError::invalid(Stage::Corpus, e.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub engine_version: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InputCounts {
    pub images: usize,
    pub embedding_files: usize,
    pub scores: usize,
    pub answers: usize,
    pub ratings: usize,
    pub gold_items: usize,
    pub gold_responses: usize,
    pub demographics: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModesSummary {
    pub model: String,
    pub n: usize,
    pub r: usize,
    pub k: usize,
    pub inertia: f64,
    pub cluster_sizes: Vec<usize>,
    pub silhouette: Vec<(usize, f64)>,
    pub seed: u64,
}

impl ModesSummary {
    pub fn of(cm: &ClusterModel) -> Self {
        let mut sizes = vec![0; cm.k];
        for c in cm.assignments.values() {
            sizes[*c] += 1;
        }
        ModesSummary {
            model: cm.model.clone(),
            n: cm.assignments.len(),
            r: cm.r,
            k: cm.k,
            inertia: cm.inertia,
            cluster_sizes: sizes,
            silhouette: cm.silhouette.clone(),
            seed: cm.seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ModesSection {
    pub models: Vec<ModesSummary>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProximitySection {
    pub table: ProximityTable,
    pub pairs: Vec<ProximityResult>,
    pub neighbors: NeighborReport,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LeaningSection {
    pub models: Vec<ModelLeaning>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRow {
    pub country: Country,
    pub model: String,
    pub agreement: Agreement,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CultscoreSection {
    pub scores: Vec<CultureScore>,
    pub audit: Option<QaAudit>,
    pub selections: Vec<SelectionOutcome>,
    pub best: Option<Agreement>,
    pub worst: Option<Agreement>,
    pub best_table: Vec<AgreementRow>,
    pub worst_table: Vec<AgreementRow>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HumanevalSection {
    pub summaries: Vec<HqsSummary>,
    pub flags: Vec<QcFlag>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationRow {
    /// `None` pools all models.
    pub model: Option<String>,
    pub protocol: Protocol,
    pub saturation: Saturation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnalyticsSection {
    pub trajectories: Vec<Trajectory>,
    pub correlations: Vec<MetricHqsCorrelation>,
    pub saturation: Vec<SaturationRow>,
    pub demographics: BTreeMap<String, Vec<DemographicTable>>,
    pub notes: Vec<String>,
}

/// Everything a run produces. Sections are `None` when their stage was not run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunArtifacts {
    pub provenance: Provenance,
    /// Tie and aggregation rules applied, stated once for readers of every format.
    pub conventions: Vec<&'static str>,
    pub inputs: InputCounts,
    pub validation: Vec<Finding>,
    pub modes: Option<ModesSection>,
    pub proximity: Option<ProximitySection>,
    pub leaning: Option<LeaningSection>,
    pub cultscore: Option<CultscoreSection>,
    pub humaneval: Option<HumanevalSection>,
    pub analytics: Option<AnalyticsSection>,
}

pub const CONVENTIONS: &[&str] = &[
    "proximity interval: percentile bootstrap over images within (model, country), widened to contain the point estimate",
    "leaning: a mean margin of exactly zero is labelled traditional",
    "leaning p-values: two-sided, labels permuted within category, p = (1 + hits) / (1 + permutations); exact enumeration when the distinct relabellings fit in the budget",
    "selection ties: best goes to the earlier step, worst to the later step",
    "agreement: rate over rater-task pairs; modal rate counts tied modes as disagreement",
    "HQS: pooled mean over all ratings, not a mean of rater means",
];

fn read_optional<T: LineRecord>(config: &RunConfig, path: &Option<std::path::PathBuf>) -> Result<Vec<T>, PipelineError> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => crate::corpus::read_lines(&config.resolve(p)).map_err(PipelineError::corpus),
    }
}

fn vocabulary_findings(config: &RunConfig, records: &[ImageRecord]) -> Vec<Finding> {
    let vocab = config.vocabulary();
    let mut out = Vec::new();
    for r in records {
        let (code, ok) = if !vocab.has_category(&r.category) {
            ("unknown_category", false)
        } else if r.protocol != Protocol::OccupationAudit && !vocab.accepts_subcategory(&r.category, &r.subcategory) {
            ("unknown_subcategory", false)
        } else {
            ("", true)
        };
        if !ok {
            out.push(Finding {
                severity: Severity::Fatal,
                code,
                subject: r.id.clone(),
                message: format!("{} / {} not in the run vocabulary", r.category, r.subcategory),
            });
        }
    }
    out
}

/// Loaded and validated inputs, ready for any stage.
pub struct Pipeline {
    pub config: RunConfig,
    pub inputs: RunInputs,
    pub validation: ValidationReport,
}

impl Pipeline {
    /// Reads every input and validates it. Fatal findings are kept in
    /// `validation` rather than returned as errors so callers can report them.
    pub fn load(config: RunConfig) -> Result<Pipeline, PipelineError> {
        let mut embeddings = EmbeddingSet::new();
        for (id, path) in &config.inputs.embeddings {
            embeddings.insert(load_embeddings(&config.resolve(path), Some(id)).map_err(PipelineError::corpus)?);
        }
        let records: Vec<ImageRecord> = crate::corpus::read_lines(&config.resolve(&config.inputs.manifest))
            .map_err(PipelineError::corpus)?;
        let inputs = RunInputs {
            records,
            embeddings,
            scores: read_optional(&config, &config.inputs.scores)?,
            answers: read_optional(&config, &config.inputs.answers)?,
            ratings: read_optional(&config, &config.inputs.ratings)?,
            gold_items: read_optional(&config, &config.inputs.gold_items)?,
            gold_responses: read_optional(&config, &config.inputs.gold_responses)?,
            demographics: read_optional(&config, &config.inputs.demographics)?,
        };
        Ok(Pipeline::from_inputs(config, inputs))
    }

    pub fn from_inputs(config: RunConfig, inputs: RunInputs) -> Pipeline {
        let mut validation = validate_run(&inputs);
        validation.findings.extend(vocabulary_findings(&config, &inputs.records));
        Pipeline { config, inputs, validation }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_sha256: self.config.digest(),
            seed: self.config.seed,
            engine_version: crate::ENGINE_VERSION.to_string(),
        }
    }

    pub fn require_valid(&self) -> Result<(), PipelineError> {
        if !self.validation.has_fatal() {
            return Ok(());
        }
        let first: Vec<String> =
            self.validation.fatal().take(5).map(|f| format!("{} {}: {}", f.code, f.subject, f.message)).collect();
        let n = self.validation.fatal().count();
        Err(PipelineError::invalid(Stage::Corpus, format!("{n} fatal finding(s): {}", first.join("; "))))
    }

    pub fn artifacts(&self) -> RunArtifacts {
        let i = &self.inputs;
        RunArtifacts {
            provenance: self.provenance(),
            conventions: CONVENTIONS.to_vec(),
            inputs: InputCounts {
                images: i.records.len(),
                embedding_files: i.embeddings.iter().count(),
                scores: i.scores.len(),
                answers: i.answers.len(),
                ratings: i.ratings.len(),
                gold_items: i.gold_items.len(),
                gold_responses: i.gold_responses.len(),
                demographics: i.demographics.len(),
            },
            validation: self.validation.findings.clone(),
            modes: None,
            proximity: None,
            leaning: None,
            cultscore: None,
            humaneval: None,
            analytics: None,
        }
    }

    /// Fits cluster models for every model with enough base images.
    pub fn modes(&self) -> Result<(BTreeMap<String, ClusterModel>, ModesSection), PipelineError> {
        let mut data = model_data(&self.inputs);
        let mut notes = Vec::new();
        data.retain(|m, d| {
            let keep = d.ids.len() >= 3;
            if !keep {
                notes.push(format!("model {m}: {} base image(s) with embeddings, need at least 3", d.ids.len()));
            }
            keep
        });
        let models = fit_all_models(&data, &self.config.modes, self.config.seed)
            .map_err(|e| PipelineError::invalid(Stage::Modes, e.to_string()))?;
        let summaries = models.values().map(ModesSummary::of).collect();
        Ok((models, ModesSection { models: summaries, notes }))
    }

    pub fn proximity(&self, models: &BTreeMap<String, ClusterModel>) -> Result<ProximitySection, PipelineError> {
        let records = &self.inputs.records;
        let table = proximity_table(models, records);
        let neighbors = nearest_neighbors(&table);
        let results: Vec<Result<ProximityResult, ProximityError>> = pairs_with_data(models, records)
            .par_iter()
            .map(|&(a, b)| analyze_pair(models, records, a, b, &self.config.proximity, self.config.seed))
            .collect();
        let mut pairs = Vec::new();
        let mut notes = Vec::new();
        for r in results {
            match r {
                Ok(p) => pairs.push(p),
                Err(e @ (ProximityError::InsufficientData { .. } | ProximityError::NoSharedModel)) => {
                    notes.push(e.to_string())
                }
                Err(e) => return Err(PipelineError::invalid(Stage::Proximity, e.to_string())),
            }
        }
        Ok(ProximitySection { table, pairs, neighbors, notes })
    }

    pub fn leaning(&self) -> Result<LeaningSection, PipelineError> {
        let i = &self.inputs;
        let models: BTreeSet<&str> =
            i.records.iter().filter(|r| r.protocol == Protocol::T2iBase).map(|r| r.model.as_str()).collect();
        let results: Vec<(String, Result<ModelLeaning, LeaningError>)> = models
            .into_par_iter()
            .map(|m| (m.to_string(), analyze_model(&i.records, &i.embeddings, m, &self.config.leaning, self.config.seed)))
            .collect();
        let mut section = LeaningSection::default();
        for (m, r) in results {
            match r {
                Ok(l) => section.models.push(l),
                Err(
                    e @ (LeaningError::NoCategories(_)
                    | LeaningError::InsufficientGroups
                    | LeaningError::TargetAbsent(_)),
                ) => section.notes.push(format!("model {m}: {e}")),
                Err(e) => return Err(PipelineError::invalid(Stage::Leaning, format!("model {m}: {e}"))),
            }
        }
        Ok(section)
    }

    pub fn cultscore(&self) -> CultscoreSection {
        let i = &self.inputs;
        let mut section = CultscoreSection::default();
        if i.answers.is_empty() {
            return section;
        }
        let scores = score_all(&i.answers);
        if i.answers.iter().any(|a| a.answered.as_yes_no().is_some()) {
            section.audit = Some(qa_audit(&i.answers));
        }
        let tasks = task_images(&i.ratings, &i.records);
        let (selections, skipped) = metric_selections(&tasks, &scores);
        section.notes.extend(skipped.iter().map(|e| e.to_string()));
        for kind in [SelectionKind::Best, SelectionKind::Worst] {
            let picks = human_picks(&i.ratings, &i.records, kind);
            let overall = agreement_rate(&selections, &picks, kind).ok();
            let table: Vec<AgreementRow> = agreement_table(&selections, &picks, &tasks, &i.records, kind)
                .into_iter()
                .map(|((country, model), agreement)| AgreementRow { country, model, agreement })
                .collect();
            match kind {
                SelectionKind::Best => (section.best, section.best_table) = (overall, table),
                SelectionKind::Worst => (section.worst, section.worst_table) = (overall, table),
            }
        }
        section.scores = scores.into_values().collect();
        section.selections = selections;
        section
    }

    pub fn humaneval(&self) -> HumanevalSection {
        let i = &self.inputs;
        let (summaries, missing) = summarize_all(&i.ratings, &i.records);
        HumanevalSection {
            summaries,
            flags: qc_scan(&i.ratings, &i.gold_items, &i.gold_responses, &self.config.qc),
            notes: missing.iter().map(|e| e.to_string()).collect(),
        }
    }

    pub fn analytics(&self) -> AnalyticsSection {
        let i = &self.inputs;
        let mut section = AnalyticsSection::default();
        for protocol in [Protocol::Multiloop, Protocol::AttributeAdd] {
            for metric in [Metric::Clip, Metric::Aesthetic, Metric::DreamsimDelta] {
                let (t, errs) = all_trajectories(&i.scores, &i.records, metric, protocol);
                section.trajectories.extend(t);
                section.notes.extend(errs.iter().map(|e| e.to_string()));
            }
            let mut models: Vec<Option<String>> = vec![None];
            let present: BTreeSet<&str> =
                i.records.iter().filter(|r| r.protocol == protocol).map(|r| r.model.as_str()).collect();
            models.extend(present.into_iter().map(|m| Some(m.to_string())));
            for model in models {
                let records: Vec<ImageRecord> = match &model {
                    None => i.records.clone(),
                    Some(m) => i.records.iter().filter(|r| &r.model == m).cloned().collect(),
                };
                if let Ok(s) = saturation(&dreamsim_series(&i.scores, &records, protocol)) {
                    section.saturation.push(SaturationRow { model, protocol, saturation: s });
                }
            }
        }
        for metric in [Metric::Clip, Metric::Aesthetic] {
            match metric_hqs_correlation(&i.scores, &i.ratings, metric) {
                Ok(c) => section.correlations.push(c),
                Err(e) if !i.ratings.is_empty() && i.scores.iter().any(|s| s.metric == metric) => {
                    section.notes.push(format!("{} vs HQS: {e}", metric.as_str()))
                }
                Err(_) => {}
            }
        }
        let expected: Vec<&str> = self.config.occupations.iter().map(String::as_str).collect();
        if !expected.is_empty() {
            if let Err(e) = demographic_table(&i.demographics, &expected) {
                section.notes.push(e.to_string());
            }
        }
        section.demographics = demographic_tables_by_model(&i.demographics, &i.records);
        section
    }
}

/// Runs every stage in dependency order.
pub fn run_pipeline(config: RunConfig) -> Result<RunArtifacts, PipelineError> {
    let pipeline = Pipeline::load(config)?;
    pipeline.require_valid()?;
    let mut artifacts = pipeline.artifacts();
    let (models, modes) = pipeline.modes()?;
    artifacts.modes = Some(modes);
    artifacts.proximity = Some(pipeline.proximity(&models)?);
    artifacts.leaning = Some(pipeline.leaning()?);
    artifacts.cultscore = Some(pipeline.cultscore());
    artifacts.humaneval = Some(pipeline.humaneval());
    artifacts.analytics = Some(pipeline.analytics());
    Ok(artifacts)
}

/// Writes one `<model>.ecm` file per cluster model into `dir`.
pub fn save_cluster_models(models: &BTreeMap<String, ClusterModel>, dir: &std::path::Path) -> Result<Vec<std::path::PathBuf>, PipelineError> {
    let io = |e: std::io::Error| PipelineError::internal(Stage::Emit, format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut written = Vec::new();
    for (name, m) in models {
        let path = dir.join(format!("{name}.ecm"));
        std::fs::write(&path, m.to_bytes()).map_err(io)?;
        written.push(path);
    }
    Ok(written)
}

/// Reads every `*.ecm` file in `dir`, keyed by the model name stored inside.
pub fn load_cluster_models(dir: &std::path::Path) -> Result<BTreeMap<String, ClusterModel>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::missing(Stage::Modes, format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<std::path::PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ecm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::missing(Stage::Modes, format!("no .ecm files in {}", dir.display())));
    }
    let mut out = BTreeMap::new();
    for p in paths {
        let bytes = std::fs::read(&p).map_err(|e| PipelineError::missing(Stage::Modes, format!("{}: {e}", p.display())))?;
        let m = ClusterModel::from_bytes(&bytes).map_err(|e| PipelineError::invalid(Stage::Modes, format!("{}: {e}", p.display())))?;
        out.insert(m.model.clone(), m);
    }
    Ok(out)
}
