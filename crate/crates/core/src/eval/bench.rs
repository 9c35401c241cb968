use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{detect_presence, pattern_similarity, t_iou, t_l2, IntervalPair};
use crate::data::ConditionBuilder;
use crate::error::{Error, Result};
use crate::flow::{gaussian_grid, sample, CfgWeights, SamplerConfig};
use crate::model::{Conditions, FlowTransformer};
use crate::synth::{generate_seeded, SceneConfig, SynthScene};
use crate::tokens::TokenGrid;

pub const BENCH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub case_id: usize,
    /// Scene seed; the scene is regenerated with exactly `ref_count` entities.
    pub seed: u64,
    pub ref_count: usize,
    /// Ground-truth intervals in latent frames, one per reference.
    pub intervals: Vec<(f64, f64)>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchManifest {
    pub format_version: u32,
    pub scene: SceneConfig,
    pub cases: Vec<BenchCase>,
}

fn case_scene_config(base: &SceneConfig, ref_count: usize) -> SceneConfig {
    SceneConfig { min_entities: ref_count, max_entities: ref_count, ..base.clone() }
}

impl BenchManifest {
    /// `cases` cases alternating between one and two references, with
    /// scene seeds `first_seed, first_seed + 1, ...`.
    pub fn build(scene: &SceneConfig, cases: usize, first_seed: u64) -> Result<Self> {
        let mut out = Vec::with_capacity(cases);
        for case_id in 0..cases {
            let ref_count = 1 + case_id % 2;
            let seed = first_seed + case_id as u64;
            let s = generate_seeded(&case_scene_config(scene, ref_count), seed)?;
            out.push(BenchCase {
                case_id,
                seed,
                ref_count,
                intervals: s.entities.iter().map(|e| (e.first_frame as f64, e.last_frame as f64)).collect(),
                tags: s.entities.iter().map(|e| e.tag.clone()).collect(),
            });
        }
        Ok(Self { format_version: BENCH_FORMAT_VERSION, scene: scene.clone(), cases: out })
    }

    pub fn scene(&self, case: &BenchCase) -> Result<SynthScene> {
        let s = generate_seeded(&case_scene_config(&self.scene, case.ref_count), case.seed)?;
        let tags: Vec<&str> = s.entities.iter().map(|e| e.tag.as_str()).collect();
        if tags != case.tags.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Format(format!("case {} does not match its regenerated scene", case.case_id)));
        }
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.format_version != BENCH_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported benchmark format {}", m.format_version)));
        }
        Ok(m)
    }
}

/// Anything that turns a benchmark case into a video.
pub trait Generator {
    fn generate(&self, scene: &SynthScene, cond: &Conditions, seed: u64) -> Result<TokenGrid>;
}

/// Returns the ground-truth scene.
pub struct OracleGenerator;

impl Generator for OracleGenerator {
    fn generate(&self, scene: &SynthScene, _cond: &Conditions, _seed: u64) -> Result<TokenGrid> {
        Ok(scene.video.clone())
    }
}

/// Ignores the conditions and returns Gaussian noise.
pub struct NoiseGenerator;

impl Generator for NoiseGenerator {
    fn generate(&self, scene: &SynthScene, _cond: &Conditions, seed: u64) -> Result<TokenGrid> {
        Ok(gaussian_grid(scene.video.dims(), &mut ChaCha8Rng::seed_from_u64(seed)))
    }
}

/// Samples the trained model with multi-condition guidance.
pub struct ModelGenerator<'a> {
    pub model: &'a FlowTransformer,
    pub cfg: CfgWeights,
    pub sampler: SamplerConfig,
}

impl Generator for ModelGenerator<'_> {
    fn generate(&self, _scene: &SynthScene, cond: &Conditions, seed: u64) -> Result<TokenGrid> {
        // The case seed picks the starting noise; the sampler seed shifts it.
        let sc = SamplerConfig { seed: seed ^ self.sampler.seed.rotate_left(32), ..self.sampler };
        sample(self.model, cond, self.cfg, &sc, self.model.cfg.grid_dims())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Correlation a frame needs for the pattern to count as present.
    pub detect_threshold: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { detect_threshold: 0.8 }
    }
}

/// One row per reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub case_id: usize,
    pub ref_index: usize,
    pub ref_count: usize,
    pub t_iou: f64,
    pub t_l2: f64,
    pub pattern_sim: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rows: usize,
    pub failed_cases: usize,
    pub t_iou: f64,
    pub t_l2: f64,
    pub pattern_sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Keyed by reference count, plus `"all"`.
    pub aggregates: BTreeMap<String, Aggregate>,
    pub failed_cases: usize,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let mut groups: BTreeMap<String, Vec<&EvalRow>> = BTreeMap::new();
        for r in &rows {
            groups.entry(r.ref_count.to_string()).or_default().push(r);
            groups.entry("all".into()).or_default().push(r);
        }
        let count_failed = |rs: &[&EvalRow]| {
            let mut ids: Vec<usize> = rs.iter().filter(|r| r.failed).map(|r| r.case_id).collect();
            ids.dedup();
            ids.len()
        };
        let aggregates = groups
            .into_iter()
            .map(|(k, rs)| {
                let ok: Vec<&&EvalRow> = rs.iter().filter(|r| !r.failed).collect();
                let n = ok.len() as f64;
                let mean = |f: fn(&EvalRow) -> f64| if ok.is_empty() { f64::NAN } else { ok.iter().map(|r| f(r)).sum::<f64>() / n };
                let agg = Aggregate {
                    rows: ok.len(),
                    failed_cases: count_failed(&rs),
                    t_iou: mean(|r| r.t_iou),
                    t_l2: mean(|r| r.t_l2),
                    pattern_sim: mean(|r| r.pattern_sim),
                };
                (k, agg)
            })
            .collect();
        let failed_cases = count_failed(&rows.iter().collect::<Vec<_>>());
        Self { rows, aggregates, failed_cases }
    }

    pub fn all(&self) -> Option<&Aggregate> {
        self.aggregates.get("all")
    }

    pub fn by_ref_count(&self, n: usize) -> Option<&Aggregate> {
        self.aggregates.get(&n.to_string())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "case_id,ref_index,ref_count,t_iou,t_l2,pattern_sim,failed")?;
        for r in &self.rows {
            if r.failed {
                writeln!(out, "{},{},{},,,,true", r.case_id, r.ref_index, r.ref_count)?;
            } else {
                writeln!(
                    out,
                    "{},{},{},{},{},{},false",
                    r.case_id, r.ref_index, r.ref_count, r.t_iou, r.t_l2, r.pattern_sim
                )?;
            }
        }
        Ok(())
    }

    pub fn aggregates_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            failed_cases: usize,
            aggregates: &'a BTreeMap<String, Aggregate>,
        }
        Ok(serde_json::to_string_pretty(&Summary { failed_cases: self.failed_cases, aggregates: &self.aggregates })?)
    }
}

/// Scores one generated video against the case's scene.
pub fn score_case(case: &BenchCase, scene: &SynthScene, video: &TokenGrid, cfg: &BenchConfig) -> Result<Vec<EvalRow>> {
    let frames = video.frames();
    let mut rows = Vec::with_capacity(scene.entities.len());
    for (i, e) in scene.entities.iter().enumerate() {
        let (g0, g1) = case.intervals[i];
        let detected = detect_presence(video, &e.pattern, cfg.detect_threshold)?;
        let pair = IntervalPair::of(detected.map(|p| (p.t0 as f64, p.t1 as f64)), (g0, g1), frames);
        let sim = pattern_similarity(video, (g0 as usize, g1 as usize), &e.pattern)?
            .ok_or_else(|| Error::invalid("empty ground-truth interval"))?;
        rows.push(EvalRow {
            case_id: case.case_id,
            ref_index: i,
            ref_count: case.ref_count,
            t_iou: t_iou(&pair),
            t_l2: t_l2(&pair),
            pattern_sim: sim,
            failed: false,
        });
    }
    Ok(rows)
}

/// Generates every case and scores it. A case whose generation fails is
/// kept in the report as failed rows and left out of the aggregates.
pub fn run_benchmark<G: Generator>(
    generator: &G,
    manifest: &BenchManifest,
    builder: &ConditionBuilder,
    cfg: &BenchConfig,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for case in &manifest.cases {
        let scene = manifest.scene(case)?;
        let cond = builder.build(&scene, None, &mut ChaCha8Rng::seed_from_u64(case.seed))?;
        match generator.generate(&scene, &cond, case.seed) {
            Ok(video) => rows.extend(score_case(case, &scene, &video, cfg)?),
            Err(Error::Numeric { .. }) | Err(Error::Generation(_)) => {
                rows.extend((0..case.ref_count).map(|i| EvalRow {
                    case_id: case.case_id,
                    ref_index: i,
                    ref_count: case.ref_count,
                    t_iou: f64::NAN,
                    t_l2: f64::NAN,
                    pattern_sim: f64::NAN,
                    failed: true,
                }));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EvalReport::from_rows(rows))
}
