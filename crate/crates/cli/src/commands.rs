use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hmerw::io::{self, format_g12};
use hmerw::metrics::{self, GroundTruth};
use hmerw::pipeline::DetectionOutput;
use hmerw::rccc::{build_rccc_weights, symmetrize};
use hmerw::spectral::hmerw_stationary;
use hmerw::synthgen::{self, presets, lattice_weights, SceneSpec, Weighting};
use hmerw::{detect, GrayImage, PipelineParams, Raster};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::{DetectArgs, EvalArgs, RenderArgs, SweepArgs, SweepParam, SwissRollArgs};
use crate::config::{parse_by_extension, FileConfig, ResolvedParams, Runtime};
use crate::CliError;

/// Derived maps written next to detections; never picked up as inputs.
const MAP_SUFFIXES: [&str; 4] = [".fusion", ".filtered", ".hmerw", ".coefficient"];

const SWISS_LEVELS: [usize; 4] = [1, 2, 3, 50];

fn stage(name: &'static str) -> impl FnOnce(hmerw::Error) -> CliError {
    move |source| CliError::Stage { stage: name, source }
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    io::write_text(path, text).map_err(stage("write"))
}

fn write_run_json(dir: &Path, run: Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&run).expect("json values serialize");
    write(&dir.join("run.json"), &(text + "\n"))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn is_image(path: &Path) -> bool {
    let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
    let derived = MAP_SUFFIXES.iter().any(|s| stem(path).ends_with(s));
    matches!(ext.as_deref(), Some("pgm" | "png")) && !derived
}

/// Images in `dir`, sorted by file name.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", dir.display())))?;
    let mut images: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    images.sort();
    Ok(images)
}

fn resolve_inputs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_dir() {
        let images = list_images(input)?;
        if images.is_empty() {
            return Err(CliError::Runtime(format!("no images found in {}", input.display())));
        }
        Ok(images)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

fn params_json(p: &ResolvedParams) -> Value {
    serde_json::to_value(p).expect("params serialize")
}

// ---------- detect ----------

fn detections_json(image: &Path, out: &DetectionOutput, p: &ResolvedParams) -> String {
    let doc = json!({
        "image": image.file_name().map(|n| n.to_string_lossy().into_owned()),
        "threshold": out.detections.threshold,
        "params": {"R": p.radius, "K": p.k, "lambda": p.lambda},
        "detections": out.detections.detections,
    });
    serde_json::to_string_pretty(&doc).expect("json values serialize") + "\n"
}

fn detect_one(path: &Path, args: &DetectArgs, p: &ResolvedParams, params: &PipelineParams) -> Result<(), CliError> {
    let img = io::load_image(path).map_err(stage("load"))?;
    let out = detect(&img, params).map_err(stage("detect"))?;
    let dir = &args.common.out;
    let name = stem(path);
    write(&dir.join(format!("{name}.detections.json")), &detections_json(path, &out, p))?;
    let (rows, cols) = (img.rows(), img.cols());
    io::save_map(dir.join(format!("{name}.fusion.pgm")), rows, cols, out.fusion.values()).map_err(stage("write"))?;
    if args.emit_intermediates {
        io::save_map(dir.join(format!("{name}.filtered.pgm")), rows, cols, out.filtered.data()).map_err(stage("write"))?;
        io::save_map(dir.join(format!("{name}.hmerw.pgm")), rows, cols, out.hmerw.values()).map_err(stage("write"))?;
        io::save_map(dir.join(format!("{name}.coefficient.pgm")), rows, cols, out.coefficient.values())
            .map_err(stage("write"))?;
        io::write_eigenvalues_csv(dir.join(format!("{name}.eigenvalues.csv")), &out.eigenvalues).map_err(stage("write"))?;
    }
    if args.emit_weights {
        let w = match params.scheme {
            hmerw::pipeline::WeightScheme::Rccc => {
                symmetrize(&build_rccc_weights(&out.filtered, &params.patch()).map_err(stage("weights"))?)
            }
            hmerw::pipeline::WeightScheme::EuclideanLattice => lattice_weights(&out.filtered),
        };
        io::write_triplets(dir.join(format!("{name}.weights.txt")), &w).map_err(stage("write"))?;
    }
    Ok(())
}

pub fn detect_cmd(args: &DetectArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let p = ResolvedParams::resolve(&args.pipeline, &file)?;
    let rt = Runtime::resolve(&args.common, &file)?;
    rt.install();
    let inputs = resolve_inputs(&args.input)?;
    prepare_out(&args.common.out)?;
    let params = p.pipeline(rt.seed);
    inputs
        .par_iter()
        .map(|path| detect_one(path, args, &p, &params))
        .collect::<Result<Vec<()>, CliError>>()?;
    write_run_json(
        &args.common.out,
        json!({
            "command": "detect",
            "input": args.input,
            "params": params_json(&p),
            "runtime": rt,
            "emit_intermediates": args.emit_intermediates,
            "emit_weights": args.emit_weights,
        }),
    )
}

// ---------- eval / sweep ----------

struct Sample {
    name: String,
    image: GrayImage,
    truth: GroundTruth,
}

/// Loads every image of `dir` with its `<stem>.gt.json`.
fn load_corpus(dir: &Path) -> Result<Vec<Sample>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Runtime(format!("{} is not a directory", dir.display())));
    }
    let images = list_images(dir)?;
    if images.is_empty() {
        return Err(CliError::Runtime(format!("no images found in {}", dir.display())));
    }
    let mut stems: Vec<String> = images.iter().map(|p| stem(p)).collect();
    stems.sort();
    for w in stems.windows(2) {
        if w[0] == w[1] {
            return Err(CliError::Runtime(format!("two images share the stem {:?}", w[0])));
        }
    }
    let orphans: Vec<String> = fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".gt.json")).map(String::from))
        .filter(|s| stems.binary_search(s).is_err())
        .collect();
    if let Some(o) = orphans.iter().min() {
        return Err(CliError::Runtime(format!("ground truth {o}.gt.json has no matching image")));
    }
    images
        .par_iter()
        .map(|path| {
            let name = stem(path);
            let gt_path = dir.join(format!("{name}.gt.json"));
            if !gt_path.is_file() {
                return Err(CliError::Runtime(format!("image {} has no ground truth {}", path.display(), gt_path.display())));
            }
            let image = io::load_image(path).map_err(stage("load"))?;
            let truth = GroundTruth::load(&gt_path).map_err(stage("ground truth"))?;
            truth.validate(image.rows(), image.cols()).map_err(stage("ground truth"))?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or(name);
            Ok(Sample { name, image, truth })
        })
        .collect()
}

struct Scores {
    lcg: Vec<f64>,
    bsf: Vec<f64>,
    curve: metrics::PrCurve,
}

fn score(corpus: &[Sample], params: &PipelineParams) -> Result<Scores, CliError> {
    let per_image: Vec<(hmerw::FusionMap, f64, f64)> = corpus
        .par_iter()
        .map(|s| {
            let out = detect(&s.image, params).map_err(stage("detect"))?;
            let map = metrics::quantize(&out.fusion).map_err(stage("metrics"))?;
            let lcg = metrics::lcg(&s.image, &map, &s.truth, params.radius).map_err(stage("metrics"))?;
            let bsf = metrics::bsf(&s.image, &map).map_err(stage("metrics"))?;
            Ok((map, lcg, bsf))
        })
        .collect::<Result<_, CliError>>()?;
    let truths: Vec<GroundTruth> = corpus.iter().map(|s| s.truth.clone()).collect();
    let (maps, lcg, bsf) = per_image.into_iter().fold(
        (Vec::new(), Vec::new(), Vec::new()),
        |(mut m, mut l, mut b), (map, lv, bv)| {
            m.push(map);
            l.push(lv);
            b.push(bv);
            (m, l, b)
        },
    );
    let curve = metrics::pr_sweep(&maps, &truths).map_err(stage("metrics"))?;
    Ok(Scores { lcg, bsf, curve })
}

pub fn eval_cmd(args: &EvalArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let p = ResolvedParams::resolve(&args.pipeline, &file)?;
    let rt = Runtime::resolve(&args.common, &file)?;
    rt.install();
    let corpus = load_corpus(&args.input)?;
    let scores = score(&corpus, &p.pipeline(rt.seed))?;
    let dir = &args.common.out;
    prepare_out(dir)?;
    let mut summary = String::from("image,lcg,bsf\n");
    for (s, (l, b)) in corpus.iter().zip(scores.lcg.iter().zip(&scores.bsf)) {
        let _ = writeln!(summary, "{},{},{}", s.name, format_g12(*l), format_g12(*b));
    }
    write(&dir.join("pr_curve.csv"), &scores.curve.to_csv())?;
    write(&dir.join("summary.csv"), &summary)?;
    write(&dir.join("aupr.txt"), &format!("{}\n", format_g12(scores.curve.aupr)))?;
    write_run_json(
        dir,
        json!({
            "command": "eval",
            "input": args.input,
            "images": corpus.len(),
            "params": params_json(&p),
            "runtime": rt,
        }),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// The grid `from, from + step, …` up to `to` inclusive.
fn sweep_values(args: &SweepArgs) -> Result<Vec<f64>, CliError> {
    let (from, to, step) = (args.from, args.to, args.step);
    if !(from.is_finite() && to.is_finite() && step.is_finite() && step > 0.0 && from <= to) {
        return Err(CliError::Usage(format!("bad sweep range {from}..{to} step {step}")));
    }
    let integral = args.param != SweepParam::Lambda;
    if integral && [from, to, step].iter().any(|v| v.fract() != 0.0) {
        return Err(CliError::Usage("R and K sweeps need whole-number bounds and step".into()));
    }
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    if count > 10_000 {
        return Err(CliError::Usage(format!("sweep of {count} values is too long")));
    }
    Ok((0..count).map(|i| from + i as f64 * step).collect())
}

pub fn sweep_cmd(args: &SweepArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let base = ResolvedParams::resolve(&args.pipeline, &file)?;
    let rt = Runtime::resolve(&args.common, &file)?;
    let values = sweep_values(args)?;
    let grid: Vec<ResolvedParams> = values
        .iter()
        .map(|&v| {
            let mut p = base;
            match args.param {
                SweepParam::Radius => p.radius = v as usize,
                SweepParam::Levels => p.k = v as usize,
                SweepParam::Lambda => p.lambda = v,
            }
            p.check().map(|_| p)
        })
        .collect::<Result<_, _>>()?;
    rt.install();
    let corpus = load_corpus(&args.input)?;
    let (label, integral) = match args.param {
        SweepParam::Radius => ("R", true),
        SweepParam::Levels => ("K", true),
        SweepParam::Lambda => ("lambda", false),
    };
    let mut csv = String::from("param,value,mean_lcg,mean_bsf,aupr\n");
    for (v, p) in values.iter().zip(&grid) {
        let s = score(&corpus, &p.pipeline(rt.seed))?;
        let value = if integral { format!("{}", *v as usize) } else { format_g12(*v) };
        let _ = writeln!(
            csv,
            "{label},{value},{},{},{}",
            format_g12(mean(&s.lcg)),
            format_g12(mean(&s.bsf)),
            format_g12(s.curve.aupr)
        );
    }
    let dir = &args.common.out;
    prepare_out(dir)?;
    write(&dir.join("sweep.csv"), &csv)?;
    write_run_json(
        dir,
        json!({
            "command": "sweep",
            "input": args.input,
            "images": corpus.len(),
            "params": params_json(&base),
            "sweep": {"param": args.param, "from": args.from, "to": args.to, "step": args.step},
            "runtime": rt,
        }),
    )
}

// ---------- swiss roll ----------

pub fn swissroll_cmd(args: &SwissRollArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let rt = Runtime::resolve(&args.common, &file)?;
    let gaps: [f64; 3] = args
        .gaps
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage("--gaps takes exactly three values".into()))?;
    if args.neighbors == 0 {
        return Err(CliError::Usage("--neighbors must be at least 1".into()));
    }
    rt.install();
    let cloud = synthgen::swiss_roll(args.nodes, gaps, rt.seed).map_err(stage("swiss roll"))?;
    let w = synthgen::knn_graph(&cloud, args.neighbors, Weighting::Euclidean).map_err(stage("knn graph"))?;
    let deepest = SWISS_LEVELS.iter().copied().max().unwrap_or(1).min(cloud.len());
    let solver = hmerw::EigenSolver {
        seed: rt.seed,
        ..hmerw::EigenSolver::default()
    };
    let basis = solver.solve(&w, deepest).map_err(stage("eigensolver"))?;

    let dir = &args.common.out;
    prepare_out(dir)?;
    write(&dir.join("cloud.csv"), &cloud.to_csv())?;
    let labels = ["A", "B", "C"];
    let mut report = String::from("K,anomaly,node,percentile_rank\n");
    let mut ranks_at = Vec::new();
    for &k in SWISS_LEVELS.iter().filter(|&&k| k <= deepest) {
        let pi = hmerw_stationary(&basis, k).map_err(stage("hmerw"))?.into_values();
        let mut csv = String::from("node,pi,is_anomaly\n");
        for (i, v) in pi.iter().enumerate() {
            let _ = writeln!(csv, "{i},{},{}", format_g12(*v), u8::from(cloud.is_anomaly(i)));
        }
        write(&dir.join(format!("pi_K{k}.csv")), &csv)?;
        let ranks = synthgen::anomaly_ranks(&pi, &cloud.anomaly_indices);
        for ((label, node), r) in labels.iter().zip(&cloud.anomaly_indices).zip(&ranks) {
            let _ = writeln!(report, "{k},{label},{node},{r:.6}");
        }
        let a_max = pi.iter().all(|&v| v <= pi[cloud.anomaly_indices[0]]);
        ranks_at.push((k, ranks, a_max));
    }
    report.push('\n');
    for (k, ranks, a_max) in &ranks_at {
        let separated: Vec<&str> = labels.iter().zip(ranks).filter(|(_, &r)| r > 0.995).map(|(l, _)| *l).collect();
        let _ = writeln!(report, "K={k}: separated above the 99.5th percentile: {}", if separated.is_empty() { "none".to_string() } else { separated.join(" ") });
        if *k == 1 {
            let pass = *a_max && ranks[1] < 0.95 && ranks[2] < 0.95;
            let _ = writeln!(report, "K=1 check (A maximal, B and C below the 95th percentile): {}", verdict(pass));
        }
        if *k == 3 {
            let pass = ranks.iter().all(|&r| r > 0.995);
            let _ = writeln!(report, "K=3 check (A, B and C above the 99.5th percentile): {}", verdict(pass));
        }
    }
    write(&dir.join("report.txt"), &report)?;
    write_run_json(
        dir,
        json!({
            "command": "simulate-swissroll",
            "nodes": args.nodes,
            "neighbors": args.neighbors,
            "gaps": gaps,
            "weighting": "euclidean",
            "levels": SWISS_LEVELS,
            "runtime": rt,
        }),
    )
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

// ---------- render ----------

pub fn render_cmd(args: &RenderArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let rt = Runtime::resolve(&args.common, &file)?;
    let seed_override = args.common.seed.or(file.seed);
    let (mut spec, default_name): (SceneSpec, String) = match (&args.spec, &args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let spec = parse_by_extension(path, &text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            (spec, stem(path))
        }
        (None, Some(name)) => {
            let spec = presets::by_name(name, rt.seed)
                .ok_or_else(|| CliError::Usage(format!("unknown preset {name:?} (expected multi-target or interference)")))?;
            (spec, name.clone())
        }
        (None, None) => return Err(CliError::Usage("one of --spec or --preset is required".into())),
    };
    if let Some(seed) = seed_override {
        spec.seed = seed;
    }
    let name = args.name.clone().unwrap_or(default_name);
    let (img, truth) = synthgen::render_scene(&spec).map_err(stage("render"))?;
    let dir = &args.common.out;
    prepare_out(dir)?;
    io::save_image(dir.join(format!("{name}.pgm")), &img).map_err(stage("write"))?;
    write(&dir.join(format!("{name}.gt.json")), &(truth.to_json() + "\n"))?;
    write_run_json(
        dir,
        json!({
            "command": "render-scene",
            "name": name,
            "source": args.spec.as_ref().map_or_else(|| json!({"preset": args.preset}), |p| json!({"spec": p})),
            "scene": spec,
            "runtime": rt,
        }),
    )
}
