//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//!
//! Run with `cargo test -p ecb-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use ecb_core::corpus::{
    Answer, AnswerRecord, Axis, Country, EmbeddingRef, Era, ImageRecord, Metric, Protocol, RatingRecord, SurveyStep,
    YesNo,
};
use ecb_core::cultscore::{agreement_rate, qa_audit, score_image, HumanPick, SelectionKind, SelectionOutcome};
use ecb_core::fixture::write_desk_fixture;
use ecb_core::humaneval::{hqs, summarize_hqs};
use ecb_core::leaning::{
    aggregate_country, bh_fdr, exact_p, leaning_score, permutation_test_country, permutation_test_dispersion,
    signed2, CountryMeanDispersion, GroupedScores, TargetMean,
};
use ecb_core::modes::{fit_kmeans, KmeansParams};
use ecb_core::proximity::{jsd, proximity_h};
use ecb_core::report::{run_pipeline, RunConfig};
use ecb_survey::{router, ServiceConfig, SurveyService, TaskDefinition, TaskKind};
use http_body_util::BodyExt;
use itertools::Itertools;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;
type Criterion = Box<dyn Fn() -> Outcome>;
type Stat<'a> = &'a dyn Fn(&[(Country, f64)]) -> f64;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // occasional exact zeros exercise the 0 log 0 convention
    let raw: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random::<f64>() }).collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        return v;
    }
    raw.iter().map(|x| x / total).collect()
}

fn proximity_math() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let n = rng.random_range(2..=12);
        let p = simplex(&mut rng, n);
        let q = simplex(&mut rng, n);
        let d = jsd(&p, &q).map_err(|e| e.to_string())?;
        let h = proximity_h(&p, &q).map_err(|e| e.to_string())?;
        ensure((0.0..=1.0).contains(&d), || format!("case {case}: jsd {d}"))?;
        ensure((0.0..=1.0).contains(&h), || format!("case {case}: h {h}"))?;
        ensure(proximity_h(&p, &p).unwrap() == 1.0, || format!("case {case}: h(p,p) != 1"))?;
        ensure(jsd(&q, &p).unwrap() == d, || format!("case {case}: jsd asymmetric"))?;
        ensure(proximity_h(&q, &p).unwrap() == h, || format!("case {case}: h asymmetric"))?;
    }
    // Hand oracle: m = (3/4, 1/4); KL(p||m) = log2(4/3), KL(q||m) = 1 - log2(3)/2.
    let d_oracle = 0.5 * ((4.0f64 / 3.0).log2() + 1.0 - 3.0f64.log2() / 2.0);
    // cos((1,0),(.5,.5)) = 1/sqrt 2
    let c = std::f64::consts::FRAC_1_SQRT_2;
    let h_oracle = 2.0 * c * (1.0 - d_oracle) / (c + 1.0 - d_oracle);
    let d = jsd(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    let h = proximity_h(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    ensure((d - 0.31128).abs() <= 1e-4 && (d - d_oracle).abs() <= 1e-12, || format!("jsd {d}"))?;
    ensure((h - 0.6978).abs() <= 1e-3 && (h - h_oracle).abs() <= 1e-12, || format!("h {h}"))?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("1000 cases; jsd={d:.5} h={h:.4}; {:?}", start.elapsed()))
}

fn sse(points: &[f64]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let m = points.iter().sum::<f64>() / points.len() as f64;
    points.iter().map(|p| (p - m) * (p - m)).sum()
}

/// Optimal two-group inertia and every partition achieving it (point 0 always on side `false`).
fn best_partitions(points: &[f64]) -> (f64, Vec<Vec<bool>>) {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut winners = Vec::new();
    for mask in 1u32..(1 << (n - 1)) {
        let side: Vec<bool> = (0..n).map(|i| i > 0 && mask & (1 << (i - 1)) != 0).collect();
        let a: Vec<f64> = (0..n).filter(|&i| !side[i]).map(|i| points[i]).collect();
        let b: Vec<f64> = (0..n).filter(|&i| side[i]).map(|i| points[i]).collect();
        let cost = sse(&a) + sse(&b);
        if cost < best - 1e-9 {
            best = cost;
            winners = vec![side];
        } else if (cost - best).abs() <= 1e-9 {
            winners.push(side);
        }
    }
    (best, winners)
}

fn kmeans_oracle() -> Outcome {
    let start = Instant::now();
    let mut fixtures = 0;
    for combo in (0..=12).combinations_with_replacement(4) {
        let sorted: Vec<f64> = combo.iter().map(|&v| v as f64).collect();
        if sorted.iter().all(|p| *p == sorted[0]) {
            continue;
        }
        for order in [[0, 1, 2, 3], [3, 1, 0, 2], [2, 0, 3, 1]] {
            let points: Vec<f64> = order.iter().map(|&i| sorted[i]).collect();
            let y = DMatrix::from_column_slice(4, 1, &points);
            let fit = fit_kmeans(&y, 2, KmeansParams { seed: 0, max_iter: 300, n_init: 8 }).map_err(|e| e.to_string())?;
            let (best, winners) = best_partitions(&points);
            let side: Vec<bool> = fit.assignments.iter().map(|&a| a != fit.assignments[0]).collect();
            ensure((fit.inertia - best).abs() <= 1e-9, || format!("{points:?}: inertia {} vs {best}", fit.inertia))?;
            // with duplicates several partitions share the optimum; any of them is exact
            ensure(winners.contains(&side), || format!("{points:?}: {side:?} not optimal"))?;
            fixtures += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let n = rng.random_range(6..40);
        let d = rng.random_range(1..4);
        let k = rng.random_range(2..=4.min(n));
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y = DMatrix::from_row_slice(n, d, &data);
        let fit = fit_kmeans(&y, k, KmeansParams { seed: case, ..Default::default() }).map_err(|e| e.to_string())?;
        for w in fit.inertia_history.windows(2) {
            ensure(w[1] <= w[0] + 1e-9 * (1.0 + w[0]), || format!("case {case}: inertia rose {} -> {}", w[0], w[1]))?;
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{fixtures} 4-point fixtures optimal; 100 monotone histories; {:?}", start.elapsed()))
}

fn leaning_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let v = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..16).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (x, t, m) = (v(&mut rng), v(&mut rng), v(&mut rng));
        let s = leaning_score(&x, &t, &m).map_err(|e| e.to_string())?;
        for alpha in [0.1, 1.0, 10.0] {
            let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            worst = worst.max((leaning_score(&scaled, &t, &m).unwrap() - s).abs());
        }
        ensure(leaning_score(&x, &m, &t).unwrap() == -s, || "swap is not exactly antisymmetric".into())?;
    }
    ensure(worst <= 1e-9, || format!("scale drift {worst:e}"))?;
    let (mean, sd) = aggregate_country(&[-0.08, -0.04]).map_err(|e| e.to_string())?;
    let (m2, s2) = (signed2(mean), format!("{sd:.2}"));
    ensure(m2 == "-0.06" && s2 == "0.02", || format!("aggregate rendered {m2} {s2}"))?;
    Ok(format!("max scale drift {worst:.1e}; aggregate -> {m2} & {s2}"))
}

type Fixture = Vec<Vec<(Country, f64)>>;

fn grouped(f: &Fixture) -> GroupedScores {
    let mut g = GroupedScores::default();
    for (i, items) in f.iter().enumerate() {
        for (c, s) in items {
            g.push(&format!("c{i}"), *c, *s);
        }
    }
    g
}

fn mean_of(labelled: &[(Country, f64)], c: Country) -> Option<f64> {
    let v: Vec<f64> = labelled.iter().filter(|(d, _)| *d == c).map(|(_, s)| *s).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn target_stat(labelled: &[(Country, f64)], target: Country) -> f64 {
    mean_of(labelled, target).unwrap_or(0.0).abs()
}

fn dispersion_stat(labelled: &[(Country, f64)]) -> f64 {
    let means: Vec<f64> = Country::ALL.iter().filter_map(|c| mean_of(labelled, *c)).collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64
}

/// Share of all n! index permutations per category (combined across categories) with T >= T_obs.
fn brute_force(f: &Fixture, stat: Stat) -> f64 {
    let observed: Vec<(Country, f64)> = f.iter().flatten().copied().collect();
    let t_obs = stat(&observed);
    let per_category: Vec<Vec<Vec<Country>>> = f
        .iter()
        .map(|items| {
            let labels: Vec<Country> = items.iter().map(|(c, _)| *c).collect();
            (0..labels.len()).permutations(labels.len()).map(|p| p.iter().map(|&i| labels[i]).collect()).collect()
        })
        .collect();
    let (mut hits, mut total) = (0u64, 0u64);
    for combo in per_category.iter().map(|v| v.iter()).multi_cartesian_product() {
        let labelled: Vec<(Country, f64)> = combo
            .iter()
            .zip(f)
            .flat_map(|(labels, items)| labels.iter().copied().zip(items.iter().map(|(_, s)| *s)))
            .collect();
        total += 1;
        hits += (stat(&labelled) >= t_obs - 1e-12 * t_obs.abs().max(1.0)) as u64;
    }
    hits as f64 / total as f64
}

fn random_fixture(rng: &mut ChaCha8Rng) -> Fixture {
    let countries = [Country::China, Country::India, Country::Kenya];
    let n_categories = rng.random_range(1..=2);
    let mut left = 8usize;
    let mut f = Vec::new();
    for c in 0..n_categories {
        let size = if c + 1 == n_categories { left.min(rng.random_range(2..=5)) } else { rng.random_range(2..=4) };
        left -= size;
        // coarse scores make ties common
        f.push(
            (0..size)
                .map(|i| (countries[(i + c) % countries.len()], rng.random_range(-3..=3) as f64 / 4.0))
                .collect(),
        );
    }
    f
}

fn permutation_and_fdr() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // A budget of 8! always covers every distinct relabelling of eight items.
    let budget = 40_320;
    let mut checked = 0;
    for case in 0..150 {
        let f = random_fixture(&mut rng);
        let g = grouped(&f);
        let expect = brute_force(&f, &dispersion_stat);
        let exact = exact_p(&g, &CountryMeanDispersion).map_err(|e| e.to_string())?;
        let prod = permutation_test_dispersion(&g, budget, case).map_err(|e| e.to_string())?;
        ensure(exact == expect && prod == expect, || format!("{f:?}: dispersion {exact} / {prod} vs {expect}"))?;
        for target in g.countries() {
            let expect = brute_force(&f, &|l| target_stat(l, target));
            let exact = exact_p(&g, &TargetMean(target)).unwrap();
            let prod = permutation_test_country(&g, target, budget, case).unwrap();
            ensure(exact == expect && prod == expect, || format!("{f:?} {target}: {exact} / {prod} vs {expect}"))?;
        }
        checked += 1;
    }
    let q = bh_fdr(&[0.001, 0.02, 0.04, 0.8]).map_err(|e| e.to_string())?;
    let want = [0.004, 0.04, 0.16 / 3.0, 0.8];
    ensure(q.iter().zip(want).all(|(a, b)| (a - b).abs() <= 1e-4), || format!("bh {q:?}"))?;
    let mut constant = GroupedScores::default();
    for (i, c) in [Country::China, Country::India, Country::Kenya, Country::China, Country::India].iter().enumerate() {
        constant.push(if i < 3 { "a" } else { "b" }, *c, 0.25);
    }
    let pc = permutation_test_country(&constant, Country::China, 999, 0).map_err(|e| e.to_string())?;
    let pd = permutation_test_dispersion(&constant, 999, 0).map_err(|e| e.to_string())?;
    ensure(pc == 1.0 && pd == 1.0, || format!("constant scores gave {pc} / {pd}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "{checked} fixtures equal n! enumeration; BH ({:.3}, {:.2}, {:.4}, {:.1}); constant p = 1; {:?}",
        q[0],
        q[1],
        q[2],
        q[3],
        start.elapsed()
    ))
}

fn answer(axis: Axis, expected: YesNo, answered: Answer, i: usize) -> AnswerRecord {
    AnswerRecord {
        image_id: "img".into(),
        question_id: format!("q{i}"),
        question_text: String::new(),
        axis,
        expected,
        answered,
        is_negative_check: expected == YesNo::No,
    }
}

fn flip(a: Answer) -> Answer {
    match a {
        Answer::Yes => Answer::No,
        Answer::No => Answer::Yes,
        Answer::Abstain => Answer::Abstain,
    }
}

fn culture_scoring() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let axes = [Axis::ImageQuality, Axis::CulturalRepresentation];
    let mut flips = 0;
    while flips < 500 {
        let n = rng.random_range(1..10);
        let mut answers: Vec<AnswerRecord> = (0..n)
            .map(|i| {
                let expected = if rng.random_bool(0.5) { YesNo::Yes } else { YesNo::No };
                let answered = [Answer::Yes, Answer::No, Answer::Abstain][rng.random_range(0..3)];
                answer(axes[rng.random_range(0..2)], expected, answered, i)
            })
            .collect();
        let wrong: Vec<usize> = (0..n)
            .filter(|&i| answers[i].answered.as_yes_no().is_some_and(|v| v != answers[i].expected))
            .collect();
        let Some(&i) = wrong.get(rng.random_range(0..wrong.len().max(1))) else { continue };
        let before = score_image(&answers).map_err(|e| e.to_string())?;
        answers[i].answered = flip(answers[i].answered);
        let after = score_image(&answers).unwrap();
        let (b, a) = match answers[i].axis {
            Axis::ImageQuality => (before.iq_axis, after.iq_axis),
            Axis::CulturalRepresentation => (before.cr_axis, after.cr_axis),
        };
        ensure(a.unwrap() > b.unwrap(), || format!("flip lowered or kept the score: {b:?} -> {a:?}"))?;
        flips += 1;
    }

    let mut audits = 0;
    for (tp, fp, fn_, tn) in (0..=5).cartesian_product(0..=5).cartesian_product(0..=5).cartesian_product(0..=5)
        .map(|(((a, b), c), d)| (a, b, c, d))
    {
        let mut answers = Vec::new();
        for (count, expected, answered) in [
            (tp, YesNo::Yes, Answer::Yes),
            (fp, YesNo::No, Answer::Yes),
            (fn_, YesNo::Yes, Answer::No),
            (tn, YesNo::No, Answer::No),
        ] {
            for _ in 0..count {
                let i = answers.len();
                answers.push(answer(Axis::CulturalRepresentation, expected, answered, i));
            }
        }
        let got = qa_audit(&answers).cultural_representation;
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let (p, r) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        ensure(
            (got.tp, got.fp, got.fn_, got.tn) == (tp, fp, fn_, tn)
                && close(got.precision, p)
                && close(got.recall, r)
                && close(got.f1, f1),
            || format!("audit for {:?} gave {got:?}", (tp, fp, fn_, tn)),
        )?;
        audits += 1;
    }

    let metric: Vec<SelectionOutcome> = (0..4)
        .map(|t| SelectionOutcome {
            task_id: format!("t{t}"),
            best_step: SurveyStep::Step1,
            worst_step: SurveyStep::Step5,
            rationale: String::new(),
            tie_broken: false,
        })
        .collect();
    let human: Vec<HumanPick> = (0..4)
        .map(|t| HumanPick {
            rater_id: format!("r{t}"),
            task_id: format!("t{t}"),
            step: if t == 3 { SurveyStep::Base } else { SurveyStep::Step1 },
        })
        .collect();
    let rate = agreement_rate(&metric, &human, SelectionKind::Best).map_err(|e| e.to_string())?.rate;
    ensure(rate == 0.75, || format!("agreement {rate}"))?;
    Ok(format!("500 flips monotone; {audits} confusion matrices; agreement {:.0}%", rate * 100.0))
}

fn image(model: &str, country: Country, step: u8) -> ImageRecord {
    ImageRecord {
        id: format!("{model}-{country}-{step}"),
        model: model.into(),
        country,
        category: "Food".into(),
        subcategory: "Main dish".into(),
        era: Era::Agnostic,
        protocol: Protocol::Multiloop,
        step,
        prompt: String::new(),
        variant: 0,
        embedding_ref: EmbeddingRef { file_id: "e".into(), row: step as u64 },
    }
}

fn rating(img: &ImageRecord, rater: &str, iq: u8, cr: u8) -> RatingRecord {
    RatingRecord {
        rater_id: rater.into(),
        task_id: "t".into(),
        image_id: img.id.clone(),
        image_quality: iq,
        cultural_representation: cr,
        prompt_alignment: None,
        best_of_task: false,
        worst_of_task: false,
        rationale: None,
        elapsed_ms: 20_000,
    }
}

/// Released-corpus rows, checked only when a run config for that corpus is supplied.
fn released_rows(config: &Path) -> Outcome {
    let artifacts = run_pipeline(RunConfig::load(config).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let model = std::env::var("ECB_RELEASED_MODEL").unwrap_or_else(|_| "SD3.5".into());
    let clip = artifacts
        .analytics
        .as_ref()
        .and_then(|a| {
            a.trajectories.iter().find(|t| {
                t.model == model && t.country == Country::China && t.metric == Metric::Clip && t.protocol == Protocol::Multiloop
            })
        })
        .ok_or("no China CLIP trajectory")?;
    let h = artifacts
        .humaneval
        .as_ref()
        .and_then(|h| h.summaries.iter().find(|s| s.model == model && s.country == Country::China))
        .ok_or("no China HQS summary")?;
    let got = format!("{:+.1} {:.2} / {:+.1} {:.2}", clip.change_pct, clip.final_, h.change_pct, h.final_);
    ensure(got == "+0.4 1.97 / -2.4 3.40", || format!("released rows {got}"))?;
    Ok(got)
}

fn hqs_and_trajectories() -> Outcome {
    let h = hqs(3, 4).map_err(|e| e.to_string())?;
    ensure(h == 3.5, || format!("hqs(3,4) = {h}"))?;
    let records: Vec<ImageRecord> = [0, 1, 3, 5].iter().map(|s| image("m", Country::India, *s)).collect();
    let mut ratings = Vec::new();
    for img in &records {
        // base pooled mean 4.0, step 5 pooled mean 2.0, intermediate steps in between
        let pairs: &[(u8, u8)] = match img.step {
            0 => &[(4, 4), (5, 3)],
            5 => &[(2, 2), (1, 3)],
            _ => &[(3, 3), (3, 3)],
        };
        for (i, (iq, cr)) in pairs.iter().enumerate() {
            ratings.push(rating(img, &format!("r{i}"), *iq, *cr));
        }
    }
    let s = summarize_hqs(&ratings, &records, "m", Country::India).map_err(|e| e.to_string())?;
    ensure(s.change_pct == -50.0 && s.final_ == 2.0, || format!("summary {} {}", s.change_pct, s.final_))?;
    let fixture = format!("hqs(3,4)=3.5; fixture {:.1}% final {:.2}", s.change_pct, s.final_);
    match std::env::var_os("ECB_RELEASED_CONFIG") {
        Some(path) => released_rows(Path::new(&path)).map(|rows| format!("{fixture}; released rows {rows}")),
        None => Ok(format!(
            "{fixture}; released-corpus rows not checked (set ECB_RELEASED_CONFIG to the released corpus config)"
        )),
    }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            for (k, v) in tree(&path) {
                out.insert(format!("{}/{k}", path.file_name().unwrap().to_string_lossy()), v);
            }
        } else {
            out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = write_desk_fixture(&dir.path().join("in"), 7).map_err(|e| e.to_string())?;
    let mut files = 0;
    for format in ["markdown", "json", "csv"] {
        let mut trees = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{format}-{run}"));
            let o = Command::new(env!("CARGO_BIN_EXE_ecb"))
                .args(["report", "--format", format, "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&out)
                .arg("--jobs")
                .arg(if run == 0 { "1" } else { "4" })
                .env_remove("ECB_SEED")
                .output()
                .map_err(|e| e.to_string())?;
            ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
            trees.push(tree(&out));
        }
        ensure(trees[0] == trees[1], || format!("{format} trees differ"))?;
        files += trees[0].len();
    }
    Ok(format!("{files} files byte-identical across two runs (1 and 4 threads)"))
}

fn survey_tasks() -> Vec<TaskDefinition> {
    let mut v = Vec::new();
    for m in ["m1", "m2", "m3", "m4", "m5"] {
        for p in 0..2 {
            let id = format!("ml-{m}-{p}");
            v.push(TaskDefinition {
                candidates: SurveyStep::ALL.iter().map(|s| (*s, format!("{id}/{s}"))).collect(),
                task_id: id,
                country: Country::Kenya,
                kind: TaskKind::Multiloop,
                model: m.into(),
                prompt: "a market scene".into(),
                gold: None,
            });
        }
    }
    v.push(TaskDefinition {
        candidates: SurveyStep::ALL.iter().map(|s| (*s, format!("aa/{s}"))).collect(),
        task_id: "aa-0".into(),
        country: Country::Kenya,
        kind: TaskKind::AttributeAdd,
        model: "m1".into(),
        prompt: "add a hat".into(),
        gold: None,
    });
    v
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() })
}

async fn service_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("survey.jsonl");
    let config = || ServiceConfig { seed: 99, ..Default::default() };
    let svc = Arc::new(SurveyService::open(config(), survey_tasks(), Some(&log)).map_err(|e| e.to_string())?);
    let app = router(svc.clone());

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({"rater_id": "r", "country": "Kenya", "consent": false}))).await;
    ensure(status == StatusCode::FORBIDDEN && body["code"] == "consent_required", || format!("consent=false gave {status} {body}"))?;

    let (status, session) = call(&app, "POST", "/sessions", Some(json!({"rater_id": "r", "country": "Kenya", "consent": true}))).await;
    ensure(status == StatusCode::CREATED, || format!("start gave {status} {session}"))?;
    let id = session["session_id"].as_str().unwrap().to_string();
    let (_, next) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    let task = &next["task"];
    let c: Vec<&str> = task["candidates"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let ratings: Vec<Value> = c
        .iter()
        .map(|img| json!({"image_id": img, "image_quality": 4, "cultural_representation": 3, "rationale": format!("looks like {img}"), "elapsed_ms": 12000}))
        .collect();
    let submission = json!({"task_id": task["task_id"], "idempotency_key": "k1", "ratings": ratings, "best": c[0], "worst": c[3]});
    let uri = format!("/sessions/{id}/ratings");
    let (s1, a1) = call(&app, "POST", &uri, Some(submission.clone())).await;
    let (s2, a2) = call(&app, "POST", &uri, Some(submission)).await;
    ensure(s1 == StatusCode::OK && s2 == StatusCode::OK && a1 == a2, || format!("resubmission {s1} {a1} / {s2} {a2}"))?;
    let stored = svc.submission_count();
    let logged = std::fs::read_to_string(&log).unwrap().lines().filter(|l| l.contains("\"submission\"")).count();
    ensure(stored == 1 && logged == 1, || format!("{stored} stored, {logged} logged"))?;

    drop(app);
    drop(svc);
    let reopened = Arc::new(SurveyService::open(config(), survey_tasks(), Some(&log)).map_err(|e| e.to_string())?);
    let (_, resumed) = call(&router(reopened), "GET", &format!("/sessions/{id}/next"), None).await;
    ensure(
        resumed["task"]["task_id"] == session["assigned_tasks"][1]["task_id"]
            && resumed["task"]["presentation_order"] == session["assigned_tasks"][1]["presentation_order"],
        || format!("replay resumed at {resumed}"),
    )?;
    let fresh = Arc::new(SurveyService::open(config(), survey_tasks(), None).map_err(|e| e.to_string())?);
    let (_, again) = call(&router(fresh), "POST", "/sessions", Some(json!({"rater_id": "r", "country": "Kenya", "consent": true}))).await;
    ensure(again["assigned_tasks"] == session["assigned_tasks"], || "fresh derivation changed the task order".into())?;
    Ok("1 record after resubmission; consent=false -> 403; replayed order identical".into())
}

fn main() -> ExitCode {
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().expect("runtime");
    let criteria: Vec<(&str, Criterion)> = vec![
        ("proximity math", Box::new(proximity_math)),
        ("k-means oracle", Box::new(kmeans_oracle)),
        ("leaning", Box::new(leaning_properties)),
        ("permutation + FDR", Box::new(permutation_and_fdr)),
        ("culture-aware scoring", Box::new(culture_scoring)),
        ("HQS & trajectories", Box::new(hqs_and_trajectories)),
        ("determinism", Box::new(determinism)),
        ("service contract", Box::new(move || runtime.block_on(service_contract()))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
