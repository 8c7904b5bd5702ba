use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Provenance, RunArtifacts};
use crate::corpus::{Country, SurveyStep};
use crate::leaning::{table_fields, TABLE_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    CsvBundle,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" | "csv_bundle" => Ok(ReportFormat::CsvBundle),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format {other:?} (expected markdown, csv or json)")),
        }
    }
}

const NO_DATA: &str = "no data";
const NOT_RUN: &str = "not run";

fn f2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" { "0.00".into() } else { s }
}

fn f3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" { "0.000".into() } else { s }
}

fn pct1(v: f64) -> String {
    let s = format!("{v:+.1}");
    if s == "+0.0" || s == "-0.0" { "0.0".into() } else { s }
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

/// Writes the artifacts in `format` under `out_dir` and returns the written paths.
pub fn emit_report(artifacts: &RunArtifacts, format: ReportFormat, out_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let files: BTreeMap<String, String> = match format {
        ReportFormat::Markdown => [("report.md".to_string(), render_markdown(artifacts))].into(),
        ReportFormat::Json => [("report.json".to_string(), render_json(artifacts))].into(),
        ReportFormat::CsvBundle => render_csv_bundle(artifacts),
    };
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

pub fn render_json(a: &RunArtifacts) -> String {
    let mut s = serde_json::to_string_pretty(a).expect("artifacts serialize");
    s.push('\n');
    s
}

// ---------- markdown ----------

struct Md(String);

impl Md {
    fn line(&mut self, s: impl AsRef<str>) {
        self.0.push_str(s.as_ref());
        self.0.push('\n');
    }

    fn heading(&mut self, level: usize, title: &str) {
        self.line(format!("\n{} {title}\n", "#".repeat(level)));
    }

    fn table(&mut self, header: &[&str], rows: &[Vec<String>]) {
        if rows.is_empty() {
            self.line(format!("_{NO_DATA}_"));
            return;
        }
        self.line(format!("| {} |", header.join(" | ")));
        self.line(format!("|{}", "---|".repeat(header.len())));
        for r in rows {
            self.line(format!("| {} |", r.join(" | ")));
        }
    }

    fn notes(&mut self, notes: &[String]) {
        if !notes.is_empty() {
            self.line("");
            for n in notes {
                self.line(format!("- note: {n}"));
            }
        }
    }
}

fn md_provenance(p: &Provenance) -> String {
    format!(
        "<!-- config_sha256={} seed={} engine_version={} -->\n",
        p.config_sha256, p.seed, p.engine_version
    )
}

pub fn render_markdown(a: &RunArtifacts) -> String {
    let mut md = Md(md_provenance(&a.provenance));
    md.line("# Cultural bias evaluation report");
    md.line("");
    md.line(format!("- config sha256: `{}`", a.provenance.config_sha256));
    md.line(format!("- seed: {}", a.provenance.seed));
    md.line(format!("- engine version: {}", a.provenance.engine_version));

    md.heading(2, "Conventions");
    for c in &a.conventions {
        md.line(format!("- {c}"));
    }

    md.heading(2, "Inputs");
    let i = &a.inputs;
    md.table(
        &["images", "embedding files", "scores", "answers", "ratings", "gold items", "gold responses", "labels"],
        &[vec![
            i.images.to_string(),
            i.embedding_files.to_string(),
            i.scores.to_string(),
            i.answers.to_string(),
            i.ratings.to_string(),
            i.gold_items.to_string(),
            i.gold_responses.to_string(),
            i.demographics.to_string(),
        ]],
    );

    md.heading(2, "Validation");
    let rows: Vec<Vec<String>> = a
        .validation
        .iter()
        .map(|f| vec![format!("{:?}", f.severity).to_lowercase(), f.code.to_string(), f.subject.clone(), f.message.clone()])
        .collect();
    md.table(&["severity", "code", "subject", "message"], &rows);

    md_modes(&mut md, a);
    md_proximity(&mut md, a);
    md_leaning(&mut md, a);
    md_cultscore(&mut md, a);
    md_humaneval(&mut md, a);
    md_analytics(&mut md, a);
    md.0
}

fn md_modes(md: &mut Md, a: &RunArtifacts) {
    md.heading(2, "Latent modes");
    let Some(s) = &a.modes else { return md.line(format!("_{NOT_RUN}_")) };
    let rows: Vec<Vec<String>> = s
        .models
        .iter()
        .map(|m| {
            let sizes: Vec<String> = m.cluster_sizes.iter().map(|c| c.to_string()).collect();
            vec![m.model.clone(), m.n.to_string(), m.r.to_string(), m.k.to_string(), f3(m.inertia), sizes.join(" ")]
        })
        .collect();
    md.table(&["model", "images", "PCA dims", "K", "inertia", "cluster sizes"], &rows);
    md.notes(&s.notes);
}

fn md_proximity(md: &mut Md, a: &RunArtifacts) {
    md.heading(2, "Country proximity");
    let Some(s) = &a.proximity else { return md.line(format!("_{NOT_RUN}_")) };
    if s.table.per_model.is_empty() {
        md.line(format!("_{NO_DATA}_"));
    }
    for (model, pairs) in &s.table.per_model {
        md.heading(3, &format!("Proximity matrix: {model}"));
        let mut countries: Vec<Country> = pairs.keys().flat_map(|(a, b)| [*a, *b]).collect();
        countries.sort();
        countries.dedup();
        let header: Vec<String> = std::iter::once(String::new()).chain(countries.iter().map(|c| c.to_string())).collect();
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = countries
            .iter()
            .map(|&r| {
                std::iter::once(r.to_string())
                    .chain(countries.iter().map(|&c| {
                        if r == c { "1.000".into() } else { opt(s.table.get(model, r, c), f3) }
                    }))
                    .collect()
            })
            .collect();
        md.table(&header_refs, &rows);
    }
    md.heading(3, "Model-averaged proximity");
    let rows: Vec<Vec<String>> = s
        .pairs
        .iter()
        .map(|p| {
            vec![
                p.country_a.to_string(),
                p.country_b.to_string(),
                f3(p.mean_h),
                format!("[{}, {}]", f3(p.ci_low), f3(p.ci_high)),
                opt(p.tau_squared, |t| format!("{t:.2e}")),
                p.n_models.to_string(),
            ]
        })
        .collect();
    md.table(&["country A", "country B", "mean h", "95% CI", "tau^2", "models"], &rows);
    md.heading(3, "Nearest neighbors");
    let rows: Vec<Vec<String>> = s
        .neighbors
        .per_model
        .iter()
        .flat_map(|(m, nn)| {
            nn.iter().map(move |(c, n)| {
                vec![m.clone(), c.to_string(), n.partner.to_string(), f3(n.h), if n.tie { "yes".into() } else { String::new() }]
            })
        })
        .collect();
    md.table(&["model", "country", "nearest", "h", "tie"], &rows);
    let rows: Vec<Vec<String>> = s
        .neighbors
        .mutual_tally
        .iter()
        .map(|((a, b), n)| vec![a.to_string(), b.to_string(), n.to_string()])
        .collect();
    md.line("");
    md.table(&["country A", "country B", "models where mutual"], &rows);
    md.notes(&s.notes);
}

fn md_leaning(md: &mut Md, a: &RunArtifacts) {
    md.heading(2, "Traditional-modern leaning");
    let Some(s) = &a.leaning else { return md.line(format!("_{NOT_RUN}_")) };
    if s.models.is_empty() {
        md.line(format!("_{NO_DATA}_"));
    }
    for m in &s.models {
        md.heading(3, &m.model);
        let rows: Vec<Vec<String>> = m.results.iter().map(|r| table_fields(r)[1..].to_vec()).collect();
        md.table(&["country", "mean margin", "SE", "cos trad", "cos mod", "p", "q (BH)", "lean"], &rows);
        md.line("");
        md.line(format!("- dispersion of country means: p = {}", f3(m.dispersion_p)));
        md.line(format!("- scored images: {}", m.n_scored));
        if !m.excluded_categories.is_empty() {
            md.line(format!("- categories without both eras: {}", m.excluded_categories.join(", ")));
        }
        if !m.skipped_countries.is_empty() {
            let c: Vec<String> = m.skipped_countries.iter().map(|c| c.to_string()).collect();
            md.line(format!("- countries with fewer than 2 scored images: {}", c.join(", ")));
        }
    }
    md.notes(&s.notes);
}

fn md_cultscore(md: &mut Md, a: &RunArtifacts) {
    md.heading(2, "Culture-aware metric");
    let Some(s) = &a.cultscore else { return md.line(format!("_{NOT_RUN}_")) };
    if s.scores.is_empty() {
        md.line(format!("_{NO_DATA}_"));
        return md.notes(&s.notes);
    }
    md.line(format!("Scored images: {}. Metric selections: {}.", s.scores.len(), s.selections.len()));
    md.heading(3, "Answer audit");
    let rows: Vec<Vec<String>> = s
        .audit
        .iter()
        .flat_map(|q| [("image quality", q.image_quality), ("cultural representation", q.cultural_representation)])
        .map(|(axis, x)| {
            vec![axis.to_string(), f3(x.precision), f3(x.recall), f3(x.f1), if x.degenerate { "yes".into() } else { String::new() }]
        })
        .collect();
    md.table(&["axis", "precision", "recall", "F1", "degenerate"], &rows);
    for (label, overall, table) in [("Best", &s.best, &s.best_table), ("Worst", &s.worst, &s.worst_table)] {
        md.heading(3, &format!("Agreement with human {} picks", label.to_lowercase()));
        match overall {
            Some(o) => md.line(format!(
                "Overall: {}% over {} rater-task pairs; modal {}% over {} tasks ({} tied).",
                f2(o.rate * 100.0),
                o.count,
                f2(o.modal_rate * 100.0),
                o.tasks,
                o.modal_ties
            )),
            None => md.line(format!("_{NO_DATA}_")),
        }
        md.line("");
        let rows: Vec<Vec<String>> = table
            .iter()
            .map(|r| vec![r.country.to_string(), r.model.clone(), f2(r.agreement.rate * 100.0), r.agreement.count.to_string()])
            .collect();
        md.table(&["country", "model", "agree %", "count"], &rows);
    }
    md.notes(&s.notes);
}

fn md_humaneval(md: &mut Md, a: &RunArtifacts) {
    md.heading(2, "Human quality scores");
    let Some(s) = &a.humaneval else { return md.line(format!("_{NOT_RUN}_")) };
    let rows: Vec<Vec<String>> = s
        .summaries
        .iter()
        .map(|h| {
            let mut row = vec![h.model.clone(), h.country.to_string()];
            row.extend(SurveyStep::ALL.iter().map(|st| opt(h.step_means.get(st).copied(), f2)));
            row.push(pct1(h.change_pct));
            row.push(f2(h.final_));
            row
        })
        .collect();
    md.table(&["model", "country", "base", "step 1", "step 3", "step 5", "change %", "final"], &rows);
    md.heading(3, "Quality-control flags");
    let rows: Vec<Vec<String>> =
        s.flags.iter().map(|f| vec![f.rater_id.clone(), f.kind.as_str().into(), f.evidence.clone()]).collect();
    md.table(&["rater", "flag", "evidence"], &rows);
    md.notes(&s.notes);
}

fn md_analytics(md: &mut Md, a: &RunArtifacts) {
    md.heading(2, "Metric trajectories");
    let Some(s) = &a.analytics else { return md.line(format!("_{NOT_RUN}_")) };
    let rows: Vec<Vec<String>> = s
        .trajectories
        .iter()
        .map(|t| {
            vec![
                t.model.clone(),
                t.country.to_string(),
                t.metric.as_str().into(),
                format!("{:?}", t.protocol).to_lowercase(),
                pct1(t.change_pct),
                f2(t.final_),
            ]
        })
        .collect();
    md.table(&["model", "country", "metric", "protocol", "change %", "final"], &rows);
    md.heading(3, "Metric versus HQS");
    let rows: Vec<Vec<String>> =
        s.correlations.iter().map(|c| vec![c.metric.as_str().into(), f2(c.r), c.n.to_string()]).collect();
    md.table(&["metric", "r", "images"], &rows);
    md.heading(3, "Perceptual saturation");
    let rows: Vec<Vec<String>> = s
        .saturation
        .iter()
        .map(|r| {
            vec![
                r.model.clone().unwrap_or_else(|| "all".into()),
                format!("{:?}", r.protocol).to_lowercase(),
                f3(r.saturation.early_mean),
                f3(r.saturation.late_mean),
                pct1(r.saturation.reduction_pct),
            ]
        })
        .collect();
    md.table(&["model", "protocol", "early delta", "late delta", "reduction %"], &rows);
    md.heading(3, "Occupational demographics");
    let rows: Vec<Vec<String>> = s
        .demographics
        .iter()
        .flat_map(|(m, tables)| {
            tables.iter().flat_map(move |t| {
                t.percentages.iter().map(move |(class, pct)| {
                    vec![m.clone(), t.occupation.clone(), t.axis.as_str().into(), class.clone(), f2(*pct)]
                })
            })
        })
        .collect();
    md.table(&["model", "occupation", "axis", "class", "%"], &rows);
    md.notes(&s.notes);
}

// ---------- csv ----------

struct Csv {
    buf: String,
    rows: usize,
}

impl Csv {
    fn new(p: &Provenance, header: &[&str]) -> Csv {
        let mut buf = String::new();
        writeln!(buf, "# config_sha256={}", p.config_sha256).unwrap();
        writeln!(buf, "# seed={}", p.seed).unwrap();
        writeln!(buf, "# engine_version={}", p.engine_version).unwrap();
        let mut c = Csv { buf, rows: 0 };
        c.write(header.iter().map(|s| s.to_string()).collect());
        c.rows = 0;
        c
    }

    fn write(&mut self, fields: Vec<String>) {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&fields).expect("in-memory write");
        self.buf.push_str(std::str::from_utf8(&w.into_inner().expect("flush")).expect("utf-8 fields"));
        self.rows += 1;
    }

    fn finish(mut self, present: bool) -> String {
        if !present {
            self.buf.push_str(&format!("# {NOT_RUN}\n"));
        } else if self.rows == 0 {
            self.buf.push_str(&format!("# {NO_DATA}\n"));
        }
        self.buf
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn render_csv_bundle(a: &RunArtifacts) -> BTreeMap<String, String> {
    let p = &a.provenance;
    let mut out = BTreeMap::new();
    let mut notes = Csv::new(p, &["stage", "note"]);

    let mut v = Csv::new(p, &["severity", "code", "subject", "message"]);
    for f in &a.validation {
        v.write(vec![format!("{:?}", f.severity).to_lowercase(), f.code.into(), f.subject.clone(), f.message.clone()]);
    }
    out.insert("validation.csv".into(), v.finish(true));

    let mut c = Csv::new(p, &["model", "images", "pca_dims", "k", "inertia", "cluster_sizes", "seed"]);
    if let Some(s) = &a.modes {
        for m in &s.models {
            let sizes: Vec<String> = m.cluster_sizes.iter().map(|x| x.to_string()).collect();
            c.write(vec![
                m.model.clone(),
                m.n.to_string(),
                m.r.to_string(),
                m.k.to_string(),
                num(m.inertia),
                sizes.join(";"),
                m.seed.to_string(),
            ]);
        }
        s.notes.iter().for_each(|n| notes.write(vec!["modes".into(), n.clone()]));
    }
    out.insert("modes.csv".into(), c.finish(a.modes.is_some()));

    let prox = a.proximity.as_ref();
    let mut table = Csv::new(p, &["model", "country_a", "country_b", "h"]);
    let mut pairs = Csv::new(
        p,
        &["country_a", "country_b", "n_models", "mean_h", "ci_low", "ci_high", "percentile_low", "percentile_high", "tau_squared", "n_boot"],
    );
    let mut nn = Csv::new(p, &["model", "country", "nearest", "h", "tie"]);
    let mut mutual = Csv::new(p, &["country_a", "country_b", "models"]);
    if let Some(s) = prox {
        for (m, rows) in &s.table.per_model {
            for ((x, y), h) in rows {
                table.write(vec![m.clone(), x.to_string(), y.to_string(), num(*h)]);
            }
        }
        for r in &s.pairs {
            pairs.write(vec![
                r.country_a.to_string(),
                r.country_b.to_string(),
                r.n_models.to_string(),
                num(r.mean_h),
                num(r.ci_low),
                num(r.ci_high),
                num(r.percentile_low),
                num(r.percentile_high),
                opt(r.tau_squared, num),
                r.n_boot.to_string(),
            ]);
        }
        for (m, per) in &s.neighbors.per_model {
            for (country, n) in per {
                nn.write(vec![m.clone(), country.to_string(), n.partner.to_string(), num(n.h), n.tie.to_string()]);
            }
        }
        for ((x, y), n) in &s.neighbors.mutual_tally {
            mutual.write(vec![x.to_string(), y.to_string(), n.to_string()]);
        }
        s.notes.iter().for_each(|n| notes.write(vec!["proximity".into(), n.clone()]));
    }
    out.insert("proximity_models.csv".into(), table.finish(prox.is_some()));
    out.insert("proximity_pairs.csv".into(), pairs.finish(prox.is_some()));
    out.insert("neighbors.csv".into(), nn.finish(prox.is_some()));
    out.insert("mutual_neighbors.csv".into(), mutual.finish(prox.is_some()));

    let header: Vec<&str> = TABLE_HEADER.split(',').collect();
    let mut lean = Csv::new(p, &header);
    let mut disp = Csv::new(p, &["model", "dispersion_p", "scored_images", "excluded_categories"]);
    if let Some(s) = &a.leaning {
        for m in &s.models {
            for r in &m.results {
                lean.write(table_fields(r).to_vec());
            }
            disp.write(vec![m.model.clone(), num(m.dispersion_p), m.n_scored.to_string(), m.excluded_categories.join(";")]);
        }
        s.notes.iter().for_each(|n| notes.write(vec!["leaning".into(), n.clone()]));
    }
    out.insert("leaning.csv".into(), lean.finish(a.leaning.is_some()));
    out.insert("leaning_dispersion.csv".into(), disp.finish(a.leaning.is_some()));

    let cs = a.cultscore.as_ref();
    let mut scores = Csv::new(
        p,
        &["image_id", "iq_axis", "cr_axis", "iq_questions", "cr_questions", "abstain_rate", "negative_check_pass_rate"],
    );
    let mut audit = Csv::new(p, &["axis", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "degenerate"]);
    let mut sel = Csv::new(p, &["task_id", "best_step", "worst_step", "tie_broken", "rationale"]);
    let mut agree =
        Csv::new(p, &["kind", "country", "model", "agree_pct", "count", "modal_agree_pct", "tasks", "modal_ties"]);
    if let Some(s) = cs {
        for x in &s.scores {
            scores.write(vec![
                x.image_id.clone(),
                opt(x.iq_axis, num),
                opt(x.cr_axis, num),
                x.n_questions.image_quality.to_string(),
                x.n_questions.cultural_representation.to_string(),
                num(x.abstain_rate),
                opt(x.negative_check_pass_rate, num),
            ]);
        }
        if let Some(q) = &s.audit {
            for (axis, x) in [("image_quality", q.image_quality), ("cultural_representation", q.cultural_representation)] {
                audit.write(vec![
                    axis.into(),
                    x.tp.to_string(),
                    x.fp.to_string(),
                    x.fn_.to_string(),
                    x.tn.to_string(),
                    num(x.precision),
                    num(x.recall),
                    num(x.f1),
                    x.degenerate.to_string(),
                ]);
            }
        }
        for o in &s.selections {
            sel.write(vec![
                o.task_id.clone(),
                o.best_step.to_string(),
                o.worst_step.to_string(),
                o.tie_broken.to_string(),
                o.rationale.clone(),
            ]);
        }
        for (kind, overall, table) in [("best", &s.best, &s.best_table), ("worst", &s.worst, &s.worst_table)] {
            let row = |country: String, model: String, g: &crate::cultscore::Agreement| {
                vec![
                    kind.to_string(),
                    country,
                    model,
                    f2(g.rate * 100.0),
                    g.count.to_string(),
                    f2(g.modal_rate * 100.0),
                    g.tasks.to_string(),
                    g.modal_ties.to_string(),
                ]
            };
            if let Some(g) = overall {
                agree.write(row("all".into(), "all".into(), g));
            }
            for r in table {
                agree.write(row(r.country.to_string(), r.model.clone(), &r.agreement));
            }
        }
        s.notes.iter().for_each(|n| notes.write(vec!["cultscore".into(), n.clone()]));
    }
    out.insert("culture_scores.csv".into(), scores.finish(cs.is_some()));
    out.insert("qa_audit.csv".into(), audit.finish(cs.is_some()));
    out.insert("selections.csv".into(), sel.finish(cs.is_some()));
    out.insert("agreement.csv".into(), agree.finish(cs.is_some()));

    let he = a.humaneval.as_ref();
    let mut hqs = Csv::new(p, &["model", "country", "base", "step1", "step3", "step5", "change_pct", "final"]);
    let mut flags = Csv::new(p, &["rater_id", "kind", "evidence"]);
    if let Some(s) = he {
        for h in &s.summaries {
            let mut row = vec![h.model.clone(), h.country.to_string()];
            row.extend(SurveyStep::ALL.iter().map(|st| opt(h.step_means.get(st).copied(), f2)));
            row.push(pct1(h.change_pct));
            row.push(f2(h.final_));
            hqs.write(row);
        }
        for f in &s.flags {
            flags.write(vec![f.rater_id.clone(), f.kind.as_str().into(), f.evidence.clone()]);
        }
        s.notes.iter().for_each(|n| notes.write(vec!["humaneval".into(), n.clone()]));
    }
    out.insert("hqs.csv".into(), hqs.finish(he.is_some()));
    out.insert("qc_flags.csv".into(), flags.finish(he.is_some()));

    let an = a.analytics.as_ref();
    let mut traj = Csv::new(
        p,
        &["model", "country", "metric", "protocol", "change_pct", "final", "step0", "step1", "step2", "step3", "step4", "step5"],
    );
    let mut corr = Csv::new(p, &["metric", "r", "images"]);
    let mut sat = Csv::new(p, &["model", "protocol", "early_mean", "late_mean", "reduction_pct"]);
    let mut demo = Csv::new(p, &["model", "occupation", "axis", "class", "count", "pct"]);
    if let Some(s) = an {
        for t in &s.trajectories {
            let mut row = vec![
                t.model.clone(),
                t.country.to_string(),
                t.metric.as_str().into(),
                format!("{:?}", t.protocol).to_lowercase(),
                pct1(t.change_pct),
                f2(t.final_),
            ];
            row.extend((0..=5u8).map(|st| opt(t.step_means.get(&st).copied(), num)));
            traj.write(row);
        }
        for c in &s.correlations {
            corr.write(vec![c.metric.as_str().into(), num(c.r), c.n.to_string()]);
        }
        for r in &s.saturation {
            sat.write(vec![
                r.model.clone().unwrap_or_else(|| "all".into()),
                format!("{:?}", r.protocol).to_lowercase(),
                num(r.saturation.early_mean),
                num(r.saturation.late_mean),
                num(r.saturation.reduction_pct),
            ]);
        }
        for (m, tables) in &s.demographics {
            for t in tables {
                for (class, count) in &t.counts {
                    demo.write(vec![
                        m.clone(),
                        t.occupation.clone(),
                        t.axis.as_str().into(),
                        class.clone(),
                        count.to_string(),
                        num(t.percentages[class]),
                    ]);
                }
            }
        }
        s.notes.iter().for_each(|n| notes.write(vec!["analytics".into(), n.clone()]));
    }
    out.insert("trajectories.csv".into(), traj.finish(an.is_some()));
    out.insert("correlations.csv".into(), corr.finish(an.is_some()));
    out.insert("saturation.csv".into(), sat.finish(an.is_some()));
    out.insert("demographics.csv".into(), demo.finish(an.is_some()));
    out.insert("notes.csv".into(), notes.finish(true));
    out
}
