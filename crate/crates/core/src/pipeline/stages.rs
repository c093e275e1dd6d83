use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{
    cluster_statistics, regularity_scatter, retention_rate, transition_matrix, write_cluster_stats, write_scatter,
    RegularityScatter, TransitionMatrix,
};
use crate::classify::{
    classify_all, read_centroids, write_assignments, write_centroids, ClusterModel, TripCategory, NOISE_CLUSTER_ID,
};
use crate::clustering::{cluster_sample, write_plot, ClusteringError};
use crate::exec::Execution;
use crate::extreme::{classify_population, write_classes, ExtremeClass};
use crate::ingest::{
    build_profiles, parse_records, read_profiles, records_by_card, DiagnosticKind, IngestError, ParseOutcome,
    WeeklyProfile,
};
use crate::metrics::{regularity, RegularityScore};
use crate::pipeline::{Manifest, PipelineConfig, PipelineError};
use crate::synth::{generate, generate_followup, write_labels, write_stream};

fn data(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(e.to_string())
}

fn at(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    File::create(path).map(BufWriter::new).map_err(at(path))
}

fn open(path: &Path, producer: &str) -> Result<File, PipelineError> {
    File::open(path).map_err(|e| {
        PipelineError::Config(format!(
            "cannot open {} ({e}); it is produced by `{producer}`",
            path.display()
        ))
    })
}

fn read_rows<T: DeserializeOwned>(path: &Path, producer: &str) -> Result<Vec<T>, PipelineError> {
    let mut r = csv::Reader::from_reader(open(path, producer)?);
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    card_id: String,
    w: f64,
    d_sd: f64,
    dist_sd: f64,
    re: f64,
}

#[derive(Debug, Deserialize)]
struct ClassRow {
    card_id: String,
    extreme_class: ExtremeClass,
}

#[derive(Debug, Deserialize)]
struct AssignmentRow {
    card_id: String,
    cluster_id: u32,
}

#[derive(Debug, Serialize)]
struct DiagnosticRow<'a> {
    line: u64,
    kind: &'a str,
    detail: &'a str,
}

#[derive(Debug, Serialize)]
struct SampleRow<'a> {
    point_index: usize,
    card_id: &'a str,
    cluster_id: Option<u32>,
}

struct Matrices {
    shared_cards: usize,
    extreme: TransitionMatrix,
    clusters: TransitionMatrix,
    categories: TransitionMatrix,
    categories_non_extreme: TransitionMatrix,
}

impl Matrices {
    fn retention(&self) -> BTreeMap<String, Option<f64>> {
        ExtremeClass::ALL
            .iter()
            .map(|c| (c.to_string(), retention_rate(&self.extreme, c.as_str()).ok()))
            .collect()
    }

    /// Share of early extreme travellers who are non-extreme later.
    fn extreme_attrition(&self) -> Option<f64> {
        let ne = self.extreme.index(ExtremeClass::NE.as_str()).ok()?;
        let (mut moved, mut rows) = (0, 0);
        for (_, row) in self.extreme.counts.iter().enumerate().filter(|(a, _)| *a != ne) {
            moved += row[ne];
            rows += row.iter().sum::<u64>();
        }
        (rows > 0).then(|| moved as f64 / rows as f64)
    }
}

pub(crate) struct Context<'a> {
    cfg: &'a PipelineConfig,
    exec: Execution,
    out: PathBuf,
}

impl<'a> Context<'a> {
    pub(crate) fn new(cfg: &'a PipelineConfig) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(&cfg.out_dir).map_err(at(&cfg.out_dir))?;
        Ok(Self {
            cfg,
            exec: cfg.execution(),
            out: cfg.out_dir.clone(),
        })
    }

    fn dir(&self, stage: &str) -> Result<PathBuf, PipelineError> {
        let d = self.out.join(stage);
        std::fs::create_dir_all(&d).map_err(at(&d))?;
        Ok(d)
    }

    fn label(&self, i: usize) -> &str {
        &self.cfg.periods[i].label
    }

    fn periods(&self) -> std::ops::Range<usize> {
        0..self.cfg.periods.len()
    }

    fn require_two(&self, stage: &str) -> Result<(), PipelineError> {
        if self.cfg.periods.len() == 2 {
            Ok(())
        } else {
            Err(PipelineError::Config(format!("`{stage}` needs two periods")))
        }
    }

    fn profiles_path(&self, i: usize) -> PathBuf {
        self.out.join("ingest").join(format!("profiles_{}.csv", self.label(i)))
    }

    fn scores_path(&self, i: usize) -> PathBuf {
        self.out.join("regularity").join(format!("scores_{}.csv", self.label(i)))
    }

    fn classes_path(&self, i: usize) -> PathBuf {
        self.out.join("extreme").join(format!("classes_{}.csv", self.label(i)))
    }

    fn centroids_path(&self) -> PathBuf {
        self.out.join("cluster").join("centroids.csv")
    }

    fn assignments_path(&self, i: usize) -> PathBuf {
        self.out.join("classify").join(format!("assignments_{}.csv", self.label(i)))
    }

    fn finish(&self, stage: &str, m: Manifest) -> Result<Manifest, PipelineError> {
        m.write(&self.out.join(stage).join("manifest.json"))?;
        Ok(m)
    }

    fn parse(&self, i: usize) -> Result<(PathBuf, ParseOutcome), PipelineError> {
        let path = self.cfg.records_path(i);
        let period = self.cfg.observation_period(i)?;
        let file = open(&path, "synth")?;
        let outcome = parse_records(std::io::BufReader::new(file), &period).map_err(|e| match e {
            IngestError::NotMonday(_) => PipelineError::Config(e.to_string()),
            e => PipelineError::Data(format!("{}: {e}", path.display())),
        })?;
        Ok((path, outcome))
    }

    fn profiles(&self, i: usize) -> Result<BTreeMap<String, WeeklyProfile>, PipelineError> {
        let path = self.profiles_path(i);
        read_profiles(std::io::BufReader::new(open(&path, "ingest")?)).map_err(|e| data(format!("{}: {e}", path.display())))
    }

    fn classes(&self, i: usize) -> Result<BTreeMap<String, ExtremeClass>, PipelineError> {
        Ok(read_rows::<ClassRow>(&self.classes_path(i), "extreme")?
            .into_iter()
            .map(|r| (r.card_id, r.extreme_class))
            .collect())
    }

    fn assignments(&self, i: usize) -> Result<BTreeMap<String, u32>, PipelineError> {
        Ok(read_rows::<AssignmentRow>(&self.assignments_path(i), "classify")?
            .into_iter()
            .map(|r| (r.card_id, r.cluster_id))
            .collect())
    }

    fn scores(&self, i: usize) -> Result<BTreeMap<String, RegularityScore>, PipelineError> {
        Ok(read_rows::<ScoreRow>(&self.scores_path(i), "regularity")?
            .into_iter()
            .map(|r| {
                (
                    r.card_id,
                    RegularityScore {
                        w: r.w,
                        d_sd: r.d_sd,
                        dist_sd: r.dist_sd,
                        re: r.re,
                    },
                )
            })
            .collect())
    }

    fn model(&self) -> Result<ClusterModel, PipelineError> {
        let path = self.centroids_path();
        let learned = read_centroids(open(&path, "cluster")?).map_err(|e| data(format!("{}: {e}", path.display())))?;
        ClusterModel::new(learned).map_err(data)
    }

    pub(crate) fn synth(&self) -> Result<Manifest, PipelineError> {
        let dir = self.dir("synth")?;
        let cfg = self.cfg;
        let mut m = Manifest::new("synth", json!({ "seed": cfg.seed, "synth": cfg.synth }));
        let specs = cfg.archetype_specs();
        let early = generate(&specs, &cfg.observation_period(0)?);
        let mut populations = vec![(early, specs.iter().map(|s| s.seed).collect::<Vec<_>>())];
        if cfg.periods.len() == 2 {
            let late = generate_followup(
                &populations[0].0.labels,
                cfg.synth.jitter_hours,
                cfg.synth.churn,
                cfg.followup_seed(),
                &cfg.observation_period(1)?,
            );
            populations.push((late, vec![cfg.followup_seed()]));
        }
        for (i, (pop, seeds)) in populations.iter().enumerate() {
            let records = dir.join(format!("records_{}.csv", self.label(i)));
            let labels = dir.join(format!("labels_{}.csv", self.label(i)));
            let mut w = create(&records)?;
            write_stream(&mut w, pop, seeds).map_err(data)?;
            w.flush().map_err(at(&records))?;
            let mut w = create(&labels)?;
            write_labels(&mut w, &pop.labels).map_err(data)?;
            w.flush().map_err(at(&labels))?;
            m.output(&self.out, &records)?;
            m.output(&self.out, &labels)?;
        }
        m.note("cards", populations[0].0.labels.len());
        self.finish("synth", m)
    }

    pub(crate) fn ingest(&self) -> Result<Manifest, PipelineError> {
        let dir = self.dir("ingest")?;
        let mut m = Manifest::new("ingest", json!({ "periods": self.cfg.periods }));
        for i in self.periods() {
            let (input, outcome) = self.parse(i)?;
            m.input(&self.out, &input)?;
            let profiles = build_profiles(&outcome.records);
            let path = self.profiles_path(i);
            let mut w = create(&path)?;
            crate::ingest::write_profiles(&mut w, profiles.values()).map_err(data)?;
            w.flush().map_err(at(&path))?;

            let diag_path = dir.join(format!("diagnostics_{}.csv", self.label(i)));
            let mut w = csv::Writer::from_writer(create(&diag_path)?);
            let mut out_of_window = 0;
            for d in &outcome.diagnostics {
                let (kind, detail) = match &d.kind {
                    DiagnosticKind::Malformed(why) => ("malformed", why.as_str()),
                    DiagnosticKind::OutOfWindow => {
                        out_of_window += 1;
                        ("out_of_window", "")
                    }
                };
                w.serialize(DiagnosticRow { line: d.line, kind, detail }).map_err(data)?;
            }
            if outcome.diagnostics.is_empty() {
                w.write_record(["line", "kind", "detail"]).map_err(data)?;
            }
            w.flush().map_err(at(&diag_path))?;
            m.output(&self.out, &path)?;
            m.output(&self.out, &diag_path)?;
            m.note(
                self.label(i),
                json!({
                    "records": outcome.records.len(),
                    "cards": profiles.len(),
                    "duplicates": outcome.duplicates,
                    "malformed": outcome.malformed(),
                    "out_of_window": out_of_window,
                }),
            );
        }
        self.finish("ingest", m)
    }

    pub(crate) fn regularity(&self) -> Result<Manifest, PipelineError> {
        let dir = self.dir("regularity")?;
        let params = self.cfg.distance_params()?;
        let mut m = Manifest::new("regularity", json!({ "k": params.k() }));
        for i in self.periods() {
            m.input(&self.out, &self.profiles_path(i))?;
            let profiles: Vec<WeeklyProfile> = self.profiles(i)?.into_values().collect();
            let scores = self.exec.map(&profiles, |p| regularity(p, params).ok());
            let path = self.scores_path(i);
            let mut w = csv::Writer::from_writer(create(&path)?);
            let mut skipped = 0;
            for (p, s) in profiles.iter().zip(&scores) {
                match s {
                    Some(s) => w
                        .serialize(ScoreRow {
                            card_id: p.card_id.clone(),
                            w: s.w,
                            d_sd: s.d_sd,
                            dist_sd: s.dist_sd,
                            re: s.re,
                        })
                        .map_err(data)?,
                    None => skipped += 1,
                }
            }
            if profiles.len() == skipped {
                w.write_record(["card_id", "w", "d_sd", "dist_sd", "re"]).map_err(data)?;
            }
            w.flush().map_err(at(&path))?;
            m.output(&self.out, &path)?;
            m.note(self.label(i), json!({ "scored": profiles.len() - skipped, "empty": skipped }));
        }
        if self.cfg.periods.len() == 2 {
            match regularity_scatter(&self.scores(0)?, &self.scores(1)?) {
                Ok(scatter) => {
                    let path = dir.join("scatter.csv");
                    let mut w = create(&path)?;
                    write_scatter(&mut w, &scatter).map_err(data)?;
                    w.flush().map_err(at(&path))?;
                    m.output(&self.out, &path)?;
                    m.note("correlation_re_re", scatter.re_re);
                    m.note("correlation_re_sta", scatter.re_sta);
                }
                Err(e) => m.note("correlation", e.to_string()),
            }
        }
        self.finish("regularity", m)
    }

    pub(crate) fn extreme(&self) -> Result<Manifest, PipelineError> {
        self.dir("extreme")?;
        let mut m = Manifest::new("extreme", json!({ "rules": self.cfg.extreme }));
        for i in self.periods() {
            let (input, outcome) = self.parse(i)?;
            m.input(&self.out, &input)?;
            let profiles = build_profiles(&outcome.records);
            let by_card = records_by_card(&outcome.records);
            let classes = classify_population(&profiles, &by_card, &self.cfg.extreme, self.exec);
            let path = self.classes_path(i);
            let mut w = create(&path)?;
            write_classes(&mut w, self.label(i), &classes).map_err(data)?;
            w.flush().map_err(at(&path))?;
            m.output(&self.out, &path)?;
            let mut counts: BTreeMap<&str, usize> = ExtremeClass::ALL.iter().map(|c| (c.as_str(), 0)).collect();
            for c in classes.values() {
                *counts.get_mut(c.as_str()).expect("known class") += 1;
            }
            m.note(self.label(i), counts);
        }
        self.finish("extreme", m)
    }

    pub(crate) fn cluster(&self) -> Result<Manifest, PipelineError> {
        let dir = self.dir("cluster")?;
        let cfg = self.cfg;
        let params = cfg.clustering_params()?;
        let distance = cfg.distance_params()?;
        let mut m = Manifest::new(
            "cluster",
            json!({ "seed": cfg.seed, "clustering": cfg.clustering, "k": distance.k() }),
        );
        m.input(&self.out, &self.profiles_path(0))?;
        let profiles = self.profiles(0)?;
        let eligible: Vec<&WeeklyProfile> = if cfg.clustering.non_extreme_only {
            m.input(&self.out, &self.classes_path(0))?;
            let classes = self.classes(0)?;
            profiles
                .values()
                .filter(|p| classes.get(&p.card_id) == Some(&ExtremeClass::NE))
                .collect()
        } else {
            profiles.values().collect()
        };
        let sample_profiles: Vec<WeeklyProfile> = if eligible.len() > cfg.clustering.sample_size {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = sample(&mut rng, eligible.len(), cfg.clustering.sample_size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| eligible[i].clone()).collect()
        } else {
            eligible.into_iter().cloned().collect()
        };

        let result = cluster_sample(&sample_profiles, &params, distance, self.exec).map_err(|e| match e {
            ClusteringError::SampleTooSmall { .. } => data(e),
            e => PipelineError::Config(e.to_string()),
        })?;

        let plot_path = dir.join("reachability.csv");
        let mut w = create(&plot_path)?;
        write_plot(&mut w, &result.plot).map_err(data)?;
        w.flush().map_err(at(&plot_path))?;

        let mut member_of = vec![None; sample_profiles.len()];
        for (c, members) in result.centroids.iter().zip(&result.members) {
            for &p in members {
                member_of[p] = Some(c.id);
            }
        }
        let sample_path = dir.join("sample.csv");
        let mut w = csv::Writer::from_writer(create(&sample_path)?);
        for (i, p) in sample_profiles.iter().enumerate() {
            w.serialize(SampleRow {
                point_index: i,
                card_id: &p.card_id,
                cluster_id: member_of[i],
            })
            .map_err(data)?;
        }
        w.flush().map_err(at(&sample_path))?;

        let centroids_path = self.centroids_path();
        let mut w = create(&centroids_path)?;
        write_centroids(&mut w, &result.centroids).map_err(data)?;
        w.flush().map_err(at(&centroids_path))?;

        let model = ClusterModel::new(result.centroids.clone()).map_err(data)?;
        let categories = model.categories(&cfg.categories);
        let cat_path = dir.join("categories.csv");
        let mut w = csv::Writer::from_writer(create(&cat_path)?);
        w.write_record(["cluster_id", "category"]).map_err(data)?;
        for (id, c) in &categories {
            w.write_record([id.to_string(), c.to_string()]).map_err(data)?;
        }
        w.flush().map_err(at(&cat_path))?;

        for p in [&plot_path, &sample_path, &centroids_path, &cat_path] {
            m.output(&self.out, p)?;
        }
        m.note("sample_size", sample_profiles.len());
        m.note("clusters", result.centroids.len());
        m.note("valleys", result.extraction.clusters.len());
        m.note("tau", result.extraction.tau);
        m.note("noise_points", member_of.iter().filter(|c| c.is_none()).count());
        m.note(
            "cluster_sizes",
            result.members.iter().map(Vec::len).collect::<Vec<_>>(),
        );
        self.finish("cluster", m)
    }

    pub(crate) fn classify(&self) -> Result<Manifest, PipelineError> {
        let dir = self.dir("classify")?;
        let cfg = self.cfg;
        let mut m = Manifest::new(
            "classify",
            json!({ "update": cfg.classify.update, "categories": cfg.categories }),
        );
        m.input(&self.out, &self.centroids_path())?;
        let model = self.model()?;
        let categories = model.categories(&cfg.categories);
        for i in self.periods() {
            m.input(&self.out, &self.profiles_path(i))?;
            let profiles = self.profiles(i)?;
            let result = classify_all(&profiles, &model, cfg.classify.update, self.exec);
            let path = self.assignments_path(i);
            let mut w = create(&path)?;
            write_assignments(&mut w, self.label(i), &result.assignments, &categories).map_err(data)?;
            w.flush().map_err(at(&path))?;
            m.output(&self.out, &path)?;
            if let Some(updated) = &result.updated_model {
                let path = dir.join(format!("centroids_updated_{}.csv", self.label(i)));
                let mut w = create(&path)?;
                write_centroids(&mut w, updated.centroids()).map_err(data)?;
                w.flush().map_err(at(&path))?;
                m.output(&self.out, &path)?;
            }
            let mut counts: BTreeMap<&str, usize> = TripCategory::ALL.iter().map(|c| (c.as_str(), 0)).collect();
            for id in result.assignments.values() {
                *counts.get_mut(categories[id].as_str()).expect("known category") += 1;
            }
            m.note(self.label(i), counts);
        }
        self.finish("classify", m)
    }

    fn matrices(&self, m: &mut Manifest) -> Result<Matrices, PipelineError> {
        for i in 0..2 {
            m.input(&self.out, &self.classes_path(i))?;
            m.input(&self.out, &self.assignments_path(i))?;
        }
        m.input(&self.out, &self.centroids_path())?;
        let (c0, c1) = (self.classes(0)?, self.classes(1)?);
        let (a0, a1) = (self.assignments(0)?, self.assignments(1)?);
        let model = self.model()?;
        let categories = model.categories(&self.cfg.categories);

        let extreme = transition_matrix(&c0, &c1, &ExtremeClass::ALL).map_err(data)?;
        let clusters = transition_matrix(&a0, &a1, &model.ids()).map_err(data)?;
        let cat_labels: Vec<String> = TripCategory::ALL.iter().map(|c| c.to_string()).collect();
        let category_of = |id: &str| {
            let id: u32 = id.parse().unwrap_or(NOISE_CLUSTER_ID);
            categories.get(&id).copied().unwrap_or(TripCategory::Noise).to_string()
        };
        let cats = clusters.aggregate(&cat_labels, category_of).map_err(data)?;

        let non_extreme = |a: &BTreeMap<String, u32>| -> BTreeMap<String, TripCategory> {
            a.iter()
                .filter(|(card, _)| c0.get(*card) == Some(&ExtremeClass::NE) && c1.get(*card) == Some(&ExtremeClass::NE))
                .map(|(card, id)| (card.clone(), categories[id]))
                .collect()
        };
        let categories_non_extreme =
            transition_matrix(&non_extreme(&a0), &non_extreme(&a1), &TripCategory::ALL).map_err(data)?;
        let shared_cards = a0.keys().filter(|c| a1.contains_key(*c)).count();
        Ok(Matrices {
            shared_cards,
            extreme,
            clusters,
            categories: cats,
            categories_non_extreme,
        })
    }

    pub(crate) fn transitions(&self) -> Result<Manifest, PipelineError> {
        self.require_two("transitions")?;
        let dir = self.dir("transitions")?;
        let mut m = Manifest::new("transitions", json!({ "categories": self.cfg.categories }));
        let mx = self.matrices(&mut m)?;
        for (name, matrix) in [
            ("extreme", &mx.extreme),
            ("clusters", &mx.clusters),
            ("categories", &mx.categories),
            ("categories_non_extreme", &mx.categories_non_extreme),
        ] {
            let path = dir.join(format!("{name}.csv"));
            let mut w = create(&path)?;
            matrix.write_csv(&mut w).map_err(data)?;
            w.flush().map_err(at(&path))?;
            let long = dir.join(format!("{name}_long.csv"));
            let mut w = create(&long)?;
            matrix.write_long(&mut w).map_err(data)?;
            w.flush().map_err(at(&long))?;
            m.output(&self.out, &path)?;
            m.output(&self.out, &long)?;
            m.note(&format!("{name}_total"), matrix.total());
            m.note(&format!("{name}_excluded"), matrix.excluded);
        }
        m.note("shared_cards", mx.shared_cards);
        m.note("retention", mx.retention());
        m.note("extreme_attrition", mx.extreme_attrition());
        self.finish("transitions", m)
    }

    pub(crate) fn report(&self) -> Result<Manifest, PipelineError> {
        self.require_two("report")?;
        let dir = self.dir("report")?;
        let mut m = Manifest::new("report", json!({ "periods": self.cfg.periods }));
        let mx = self.matrices(&mut m)?;
        let model = self.model()?;

        let mut stats = Vec::new();
        for i in 0..2 {
            m.input(&self.out, &self.profiles_path(i))?;
            stats.push(cluster_statistics(
                self.label(i),
                &model.ids(),
                &self.assignments(i)?,
                &self.profiles(i)?,
            ));
        }
        let stats_path = dir.join("cluster_stats.csv");
        let mut w = create(&stats_path)?;
        write_cluster_stats(&mut w, &stats).map_err(data)?;
        w.flush().map_err(at(&stats_path))?;

        for i in 0..2 {
            m.input(&self.out, &self.scores_path(i))?;
        }
        let scatter: Option<RegularityScatter> = regularity_scatter(&self.scores(0)?, &self.scores(1)?).ok();
        let matrix_json = |t: &TransitionMatrix| {
            json!({ "labels": t.labels, "counts": t.counts, "total": t.total(), "excluded": t.excluded })
        };
        let summary = json!({
            "periods": self.cfg.periods.iter().map(|p| &p.label).collect::<Vec<_>>(),
            "shared_cards": mx.shared_cards,
            "extreme": matrix_json(&mx.extreme),
            "retention": mx.retention(),
            "extreme_attrition": mx.extreme_attrition(),
            "categories": matrix_json(&mx.categories),
            "categories_non_extreme": matrix_json(&mx.categories_non_extreme),
            "clusters": matrix_json(&mx.clusters),
            "correlation_re_re": scatter.as_ref().map(|s| s.re_re),
            "correlation_re_sta": scatter.as_ref().map(|s| s.re_sta),
            "cluster_stats": stats,
        });
        let summary_path = dir.join("summary.json");
        let mut text = serde_json::to_string_pretty(&summary).map_err(data)?;
        text.push('\n');
        std::fs::write(&summary_path, text).map_err(at(&summary_path))?;
        m.output(&self.out, &stats_path)?;
        m.output(&self.out, &summary_path)?;
        m.note("shared_cards", mx.shared_cards);
        m.note("extreme_attrition", mx.extreme_attrition());
        self.finish("report", m)
    }
}
