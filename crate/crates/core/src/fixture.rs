//! Synthetic desk-scale corpus for demos and end-to-end tests.
//!
//! Two models and three countries, with base generations, edit chains,
//! answers, ratings, gold checks and occupation labels. Embeddings place each
//! country near its own direction and each era near a shared era direction,
//! so clustering and leaning produce non-trivial but predictable output.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::corpus::{
    to_lines, Answer, AnswerRecord, Axis, Country, DemographicLabel, EmbeddingMatrix, EmbeddingRef, Era, GoldItem,
    GoldResponse, ImageRecord, Metric, MetricScoreRow, Protocol, RatingRecord, YesNo,
};
use crate::seed::{derive_seed, rng};

pub const MODELS: [&str; 2] = ["alpha", "beta"];
pub const COUNTRIES: [Country; 3] = [Country::China, Country::India, Country::Kenya];
pub const DIM: usize = 8;

/// In-memory fixture contents.
#[derive(Debug, Clone, Default)]
pub struct DeskFixture {
    pub records: Vec<ImageRecord>,
    pub embedding: Vec<f32>,
    pub scores: Vec<MetricScoreRow>,
    pub answers: Vec<AnswerRecord>,
    pub ratings: Vec<RatingRecord>,
    pub gold_items: Vec<GoldItem>,
    pub gold_responses: Vec<GoldResponse>,
    pub demographics: Vec<DemographicLabel>,
}

impl DeskFixture {
    fn push_image(&mut self, mut r: ImageRecord, v: [f64; DIM]) -> String {
        r.embedding_ref = EmbeddingRef { file_id: "emb".into(), row: self.records.len() as u64 };
        self.embedding.extend(v.iter().map(|x| *x as f32));
        let id = r.id.clone();
        self.records.push(r);
        id
    }

    pub fn embeddings(&self) -> EmbeddingMatrix {
        EmbeddingMatrix::new("emb", self.records.len(), DIM, self.embedding.clone()).expect("consistent fixture")
    }
}

fn record(id: String, model: &str, country: Country, category: &str, sub: &str, era: Era, protocol: Protocol, step: u8, variant: u32) -> ImageRecord {
    ImageRecord {
        prompt: format!("{category} / {sub} in {country}"),
        id,
        model: model.into(),
        country,
        category: category.into(),
        subcategory: sub.into(),
        era,
        protocol,
        step,
        variant,
        embedding_ref: EmbeddingRef { file_id: "emb".into(), row: 0 },
    }
}

fn country_axis(c: Country) -> usize {
    COUNTRIES.iter().position(|x| *x == c).unwrap_or(3)
}

/// Builds the fixture deterministically from `seed`.
pub fn desk_fixture(seed: u64) -> DeskFixture {
    let mut fx = DeskFixture::default();
    let mut g = rng(derive_seed(seed, &["desk-fixture"]));
    let categories = [("Food", "Main dish"), ("Fashion", "Clothing")];

    for model in MODELS {
        for country in COUNTRIES {
            // 20 base generations per (model, country)
            for (ci, (cat, sub)) in categories.iter().enumerate() {
                for j in 0..10u32 {
                    let era = match j {
                        0..=2 => Era::Traditional,
                        3..=5 => Era::Modern,
                        _ => Era::Agnostic,
                    };
                    let mut v = [0.0; DIM];
                    v[country_axis(country)] = 1.0;
                    v[4 + ci] = 0.6;
                    // China leans traditional, Kenya modern, India in between.
                    let tilt = match country {
                        Country::China => 0.5,
                        Country::India => 0.0,
                        _ => -0.5,
                    };
                    let era_shift = match era {
                        Era::Traditional => 0.8,
                        Era::Modern => -0.8,
                        Era::Agnostic => tilt,
                    };
                    v[6] = 0.5 + era_shift;
                    v[7] = 0.5 - era_shift;
                    for x in v.iter_mut() {
                        *x += g.random_range(-0.05..0.05);
                    }
                    let id = format!("{model}-{country}-base-{ci}{j}");
                    fx.push_image(record(id, model, country, cat, sub, era, Protocol::T2iBase, 0, j), v);
                }
            }

            // two edit chains per (model, country), steps 0..=5
            for chain in 0..2u32 {
                let mut ids = Vec::new();
                for step in 0..=5u8 {
                    let mut v = [0.0; DIM];
                    v[country_axis(country)] = 1.0 - 0.1 * step as f64;
                    v[4] = 0.5;
                    for x in v.iter_mut() {
                        *x += g.random_range(-0.05..0.05);
                    }
                    let id = format!("{model}-{country}-edit{chain}-s{step}");
                    let rec = record(id, model, country, "Food", "Main dish", Era::Agnostic, Protocol::Multiloop, step, chain);
                    ids.push(fx.push_image(rec, v));
                    let decay = step as f64;
                    let clip = 2.0 - 0.01 * decay + g.random_range(-0.005..0.005);
                    let aesthetic = 6.0 - 0.12 * decay + g.random_range(-0.02..0.02);
                    let id = ids.last().unwrap().clone();
                    fx.scores.push(MetricScoreRow { image_id: id.clone(), metric: Metric::Clip, value: clip });
                    fx.scores.push(MetricScoreRow { image_id: id.clone(), metric: Metric::Aesthetic, value: aesthetic });
                    if step > 0 {
                        let delta = 0.18 / step as f64 + g.random_range(0.0..0.01);
                        fx.scores.push(MetricScoreRow { image_id: id, metric: Metric::DreamsimDelta, value: delta });
                    }
                }
                let task_id = format!("{model}-{country}-edit{chain}");
                for (k, step) in [0usize, 1, 3, 5].into_iter().enumerate() {
                    add_answers(&mut fx, &ids[step], k, &mut g);
                }
                add_ratings(&mut fx, &task_id, country, [&ids[0], &ids[1], &ids[3], &ids[5]], &mut g);
            }
        }

        // occupation audit: two occupations, five images each
        for (oi, occupation) in ["doctor", "farmer"].iter().enumerate() {
            for j in 0..5u32 {
                let mut v = [0.1; DIM];
                v[oi] = 1.0;
                v[7] += g.random_range(0.0..0.1);
                let id = format!("{model}-occ-{occupation}-{j}");
                let rec = record(id.clone(), model, Country::CountryAgnostic, "People", occupation, Era::Agnostic, Protocol::OccupationAudit, 0, j);
                fx.push_image(rec, v);
                let gender = if (j + oi as u32) % 5 < 3 { "male" } else { "female" };
                let skin = ["light", "medium", "dark"][(j as usize + oi) % 3];
                fx.demographics.push(DemographicLabel {
                    image_id: id,
                    occupation: occupation.to_string(),
                    gender: gender.into(),
                    skin_tone: skin.into(),
                });
            }
        }
    }
    fx
}

/// Four answers per image; later candidates lose cultural matches.
fn add_answers(fx: &mut DeskFixture, image: &str, rank: usize, g: &mut impl Rng) {
    let cr_hits = 4usize.saturating_sub(rank);
    for q in 0..4 {
        let (axis, expected, negative) = match q {
            0 => (Axis::ImageQuality, YesNo::Yes, false),
            1 => (Axis::ImageQuality, YesNo::No, true),
            _ => (Axis::CulturalRepresentation, YesNo::Yes, false),
        };
        let answered = match axis {
            Axis::ImageQuality => {
                if g.random_bool(0.9) { expected } else { flip(expected) }
            }
            Axis::CulturalRepresentation => {
                if (q - 2) * 2 < cr_hits { expected } else { flip(expected) }
            }
        };
        fx.answers.push(AnswerRecord {
            image_id: image.into(),
            question_id: format!("q{q}"),
            question_text: format!("question {q}"),
            axis,
            expected,
            answered: match answered {
                YesNo::Yes => Answer::Yes,
                YesNo::No => Answer::No,
            },
            is_negative_check: negative,
        });
    }
}

fn flip(v: YesNo) -> YesNo {
    match v {
        YesNo::Yes => YesNo::No,
        YesNo::No => YesNo::Yes,
    }
}

fn add_ratings(fx: &mut DeskFixture, task: &str, country: Country, ids: [&String; 4], g: &mut impl Rng) {
    for rater in 0..2 {
        let rater_id = format!("{}-rater{rater}", country.as_str().to_lowercase());
        // the first rater of Kenya rushes and picks the wrong best
        let careless = country == Country::Kenya && rater == 0;
        let base = [5u8, 4, 4, 3];
        for (k, id) in ids.iter().enumerate() {
            let jitter = g.random_range(0..=1u8);
            let iq = (base[k] - jitter).max(1);
            let cr = if careless && k == 3 { 1 } else { base[k].saturating_sub(k as u8 / 2).max(1) };
            let (best, worst) = if careless { (k == 3, k == 0) } else { (k == 0, k == 3) };
            fx.ratings.push(RatingRecord {
                rater_id: rater_id.clone(),
                task_id: task.into(),
                image_id: (*id).clone(),
                image_quality: if careless && k == 3 { 1 } else { iq },
                cultural_representation: cr,
                prompt_alignment: Some(4),
                best_of_task: best,
                worst_of_task: worst,
                rationale: Some(if careless { "ok".into() } else { format!("{task} candidate {k}") }),
                elapsed_ms: if careless { 1500 } else { 15_000 + g.random_range(0..5000) },
            });
        }
        if task.ends_with("edit0") {
            fx.gold_responses.push(GoldResponse {
                rater_id: rater_id.clone(),
                task_id: task.into(),
                answer: if careless { YesNo::No } else { YesNo::Yes },
            });
        }
    }
    if task.ends_with("edit0") {
        fx.gold_items.push(GoldItem { task_id: task.into(), question: "Is a dish visible?".into(), expected: YesNo::Yes });
    }
}

pub const DESK_CONFIG: &str = r#"seed = 20240611

[inputs]
manifest = "manifest.jsonl"
scores = "scores.jsonl"
answers = "answers.jsonl"
ratings = "ratings.jsonl"
gold_items = "gold_items.jsonl"
gold_responses = "gold_responses.jsonl"
demographics = "demographics.jsonl"

[inputs.embeddings]
emb = "embeddings.ecb"

[vocabulary.categories]
Food = ["Main dish"]
Fashion = ["Clothing"]
People = []

[modes.k_selection]
mode = "per_model"
k_min = 2
k_max = 6

[proximity]
n_boot = 500

[leaning]
n_perm = 999
"#;

/// Writes the fixture and its `config.toml` into `dir`; returns the config path.
pub fn write_desk_fixture(dir: &Path, seed: u64) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let fx = desk_fixture(seed);
    std::fs::write(dir.join("manifest.jsonl"), to_lines(&fx.records))?;
    std::fs::write(dir.join("embeddings.ecb"), fx.embeddings().to_bytes())?;
    std::fs::write(dir.join("scores.jsonl"), to_lines(&fx.scores))?;
    std::fs::write(dir.join("answers.jsonl"), to_lines(&fx.answers))?;
    std::fs::write(dir.join("ratings.jsonl"), to_lines(&fx.ratings))?;
    std::fs::write(dir.join("gold_items.jsonl"), to_lines(&fx.gold_items))?;
    std::fs::write(dir.join("gold_responses.jsonl"), to_lines(&fx.gold_responses))?;
    std::fs::write(dir.join("demographics.jsonl"), to_lines(&fx.demographics))?;
    let config = dir.join("config.toml");
    std::fs::write(&config, DESK_CONFIG)?;
    Ok(config)
}
