use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dssrep::division::AffinityVariant;
use dssrep::flatten::{pca_flatten, tsne_flatten, FlattenMethod};
use dssrep::gc2d::{fit_gc2d, straighten_2d};
use dssrep::gof::{Criterion, GofReport};
use dssrep::lp::LpDssRep;
use dssrep::mesh::{load_mesh, save_mesh};
use dssrep::pipeline::{fit_prepared, prepare, score_grid, select_best_fit, FitConfig, FittedModel};
use dssrep::stats::{classify_cv, cohort_features, features_csv, gop_census, test_cohorts, ClassifierKind, PartialMethod, TestOptions};
use dssrep::sweep::PlaneMode;
use dssrep::synth::{simulate_groups, Effect, SynthSpec};
use dssrep::{TriangleMesh, Vec2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

const THREADS_VAR: &str = "DSSREP_THREADS";
const CONFIG_NAME: &str = "run_config.json";

/// Every setting of a run. Written next to the outputs of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub delta: f64,
    pub affinity: AffinityVariant,
    /// Degree grid bound for model selection.
    pub grid: usize,
    /// Fixed (sheet, spine) degrees; selection over the grid when absent.
    pub degrees: Option<[usize; 2]>,
    pub stations: usize,
    pub vein_samples: usize,
    pub mode: PlaneMode,
    pub pitch: Option<f64>,
    pub allow_irregular: bool,
    pub criterion: Criterion,
    pub seed: u64,
    pub alpha: f64,
    pub fdr: f64,
    pub permutations: usize,
    pub partial: PartialMethod,
    pub classifier: ClassifierKind,
    pub folds: usize,
    pub flatten: FlattenMethod,
    pub perplexity: f64,
    pub iterations: usize,
    pub max_points: usize,
    /// Centre-curve degree and station count for straightening.
    pub gc_degree: usize,
    pub gc_stations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        let test = TestOptions::default();
        RunConfig {
            command: String::new(),
            inputs: Vec::new(),
            output: PathBuf::from("out"),
            delta: fit.delta,
            affinity: fit.affinity,
            grid: 4,
            degrees: None,
            stations: fit.stations,
            vein_samples: fit.vein_samples,
            mode: fit.mode,
            pitch: fit.pitch,
            allow_irregular: fit.allow_irregular,
            criterion: Criterion::default(),
            seed: 0,
            alpha: test.alpha,
            fdr: test.fdr,
            permutations: test.permutations,
            partial: test.method,
            classifier: ClassifierKind::default(),
            folds: 10,
            flatten: FlattenMethod::Pca,
            perplexity: 30.0,
            iterations: 1000,
            max_points: 1000,
            gc_degree: 3,
            gc_stations: 30,
        }
    }
}

impl RunConfig {
    fn fit_config(&self) -> FitConfig {
        FitConfig {
            delta: self.delta,
            affinity: self.affinity,
            stations: self.stations,
            vein_samples: self.vein_samples,
            mode: self.mode,
            pitch: self.pitch,
            allow_irregular: self.allow_irregular,
        }
    }

    fn test_options(&self) -> TestOptions {
        TestOptions { permutations: self.permutations, seed: self.seed, alpha: self.alpha, fdr: self.fdr, method: self.partial }
    }

    fn validate(&self) -> Result<()> {
        self.fit_config().validate()?;
        if !(1..=7).contains(&self.grid) {
            bail!("config: grid must lie in 1..=7, got {}", self.grid);
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.fdr > 0.0 && self.fdr < 1.0) {
            bail!("config: alpha and fdr must lie in (0, 1)");
        }
        if self.folds < 2 {
            bail!("config: folds must be at least 2");
        }
        Ok(())
    }
}

#[derive(Parser)]
#[command(name = "dssrep", version, about = "Fit, score and compare swept skeletal representations of slab-like meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one mesh: tuple JSON, scores and PLY dumps.
    Fit(Inputs),
    /// Score every degree pair of the grid as CSV.
    Score(Inputs),
    /// Global and per-property tests between two cohort directories.
    Test(Inputs),
    /// Cross-validated classification of two cohort directories.
    Classify(Inputs),
    /// Generate a mesh or a two-group cohort from a JSON spec.
    Synth(Inputs),
    /// Planar embedding of a mesh's medial point set as CSV.
    Flatten(Inputs),
    /// Straighten a 2D polygon given as x,y CSV into an SVG.
    Straighten2d(Inputs),
}

#[derive(Args, Default)]
struct Inputs {
    inputs: Vec<PathBuf>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    affinity: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["SHEET", "SPINE"])]
    degrees: Option<Vec<usize>>,
    #[arg(long)]
    stations: Option<usize>,
    #[arg(long)]
    vein_samples: Option<usize>,
    #[arg(long)]
    mode: Option<PlaneMode>,
    #[arg(long)]
    pitch: Option<f64>,
    #[arg(long)]
    allow_irregular: bool,
    #[arg(long)]
    criterion: Option<Criterion>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    fdr: Option<f64>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    partial: Option<PartialMethod>,
    #[arg(long)]
    classifier: Option<ClassifierKind>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    flatten: Option<String>,
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    max_points: Option<usize>,
    #[arg(long)]
    gc_degree: Option<usize>,
    #[arg(long)]
    gc_stations: Option<usize>,
}

impl Inputs {
    fn resolve(self, command: &str) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        c.command = command.into();
        if !self.inputs.is_empty() {
            c.inputs = self.inputs;
        }
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        take!(output, delta, grid, stations, vein_samples, mode, criterion, seed, alpha, fdr, permutations, partial, classifier, folds, perplexity, iterations, max_points, gc_degree, gc_stations);
        if let Some(p) = self.pitch {
            c.pitch = Some(p);
        }
        if let Some(d) = self.degrees {
            c.degrees = Some([d[0], d[1]]);
        }
        if self.allow_irregular {
            c.allow_irregular = true;
        }
        if let Some(a) = self.affinity {
            c.affinity = serde_json::from_value(serde_json::Value::String(a.clone())).with_context(|| format!("unknown affinity {a:?}"))?;
        }
        if let Some(f) = self.flatten {
            c.flatten = serde_json::from_value(serde_json::Value::String(f.clone())).with_context(|| format!("unknown flatten method {f:?} (pca, tsne)"))?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn write(path: &Path, content: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)?)
}

fn inputs<const N: usize>(c: &RunConfig) -> Result<[&Path; N]> {
    if c.inputs.len() != N {
        bail!("{} expects {N} input path(s), got {}", c.command, c.inputs.len());
    }
    Ok(std::array::from_fn(|i| c.inputs[i].as_path()))
}

fn fit_one(mesh: &TriangleMesh, c: &RunConfig) -> Result<FittedModel> {
    let cfg = c.fit_config();
    let prep = prepare(mesh, &cfg)?;
    Ok(match c.degrees {
        Some(d) => fit_prepared(&prep, d, &cfg)?,
        None => select_best_fit(&prep, c.grid, c.criterion, &cfg)?,
    })
}

#[derive(Serialize)]
struct FitSummary<'a> {
    gof: &'a GofReport,
    rcc_satisfied: bool,
    rcc_violations: usize,
    rcc_min_margin: f64,
}

fn cmd_fit(c: &RunConfig) -> Result<()> {
    let [path] = inputs::<1>(c)?;
    let mesh = load_mesh(path, None)?;
    let model = fit_one(&mesh, c)?;
    let out = &c.output;
    write(&out.join("lp_dssrep.json"), model.rep.to_json()?)?;
    let rcc = &model.sheet.rcc;
    write_json(
        &out.join("gof.json"),
        &FitSummary { gof: &model.gof, rcc_satisfied: rcc.satisfied(), rcc_violations: rcc.violations(), rcc_min_margin: rcc.min_margin() },
    )?;
    write(&out.join("spokes.ply"), model.spokes_ply())?;
    write(&out.join("skeleton.ply"), model.skeleton_ply())?;
    print!("{}", dssrep::gof::reports_table(std::slice::from_ref(&model.gof)));
    if !model.rcc_ok() {
        bail!("sweep fit: {} slicing-plane pairs meet inside the object", rcc.violations());
    }
    Ok(())
}

fn cmd_score(c: &RunConfig) -> Result<()> {
    let [path] = inputs::<1>(c)?;
    let mesh = load_mesh(path, None)?;
    let cfg = c.fit_config();
    let prep = prepare(&mesh, &cfg)?;
    let results = score_grid(&prep, c.grid, &cfg)?;
    let mut csv = String::from("sheet_degree,spine_degree,volume_coverage,skeletal_symmetry,avg_tidiness,strict_tidiness,score1,score2,rcc_satisfied,error\n");
    let mut reports = Vec::new();
    for (d, r) in &results {
        match r {
            Ok(m) => {
                let g = &m.gof;
                csv += &format!(
                    "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},\n",
                    d[0], d[1], g.volume_coverage, g.skeletal_symmetry, g.avg_tidiness, g.strict_tidiness, g.score1, g.score2, m.rcc_ok()
                );
                reports.push(g.clone());
            }
            Err(e) => csv += &format!("{},{},,,,,,,false,\"{}\"\n", d[0], d[1], e.to_string().replace('"', "'")),
        }
    }
    write(&c.output.join("scores.csv"), csv)?;
    print!("{}", dssrep::gof::reports_table(&reports));
    if reports.is_empty() {
        bail!("gof: no degree pair produced a fit");
    }
    Ok(())
}

/// Reps of a cohort directory: its tuple JSON files, or fits of its meshes
/// when it holds none. Sorted by file name.
fn load_cohort(dir: &Path, c: &RunConfig, save_to: &Path) -> Result<Vec<LpDssRep>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let ext = |p: &Path| p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).unwrap_or_default();
    let mut reps = Vec::new();
    for p in entries.iter().filter(|p| ext(p) == "json") {
        match fs::read_to_string(p).map_err(anyhow::Error::from).and_then(|t| Ok(LpDssRep::from_json(&t)?)) {
            Ok(r) => reps.push(r),
            Err(e) => log::warn!("skipping {}: {e:#}", p.display()),
        }
    }
    if !reps.is_empty() {
        return Ok(reps);
    }
    let meshes: Vec<&PathBuf> = entries.iter().filter(|p| matches!(ext(p).as_str(), "obj" | "ply")).collect();
    if meshes.is_empty() {
        bail!("{} holds neither tuple JSON files nor meshes", dir.display());
    }
    fs::create_dir_all(save_to)?;
    meshes
        .par_iter()
        .map(|p| {
            let model = fit_one(&load_mesh(p, None)?, c).with_context(|| format!("fitting {}", p.display()))?;
            let stem = p.file_stem().unwrap_or_default().to_string_lossy();
            write(&save_to.join(format!("{stem}.json")), model.rep.to_json()?)?;
            Ok(model.rep)
        })
        .collect()
}

fn load_cohorts(c: &RunConfig) -> Result<(Vec<LpDssRep>, Vec<LpDssRep>)> {
    let [a, b] = inputs::<2>(c)?;
    let reps = c.output.join("reps");
    Ok((load_cohort(a, c, &reps.join("a"))?, load_cohort(b, c, &reps.join("b"))?))
}

fn cmd_test(c: &RunConfig) -> Result<()> {
    let (a, b) = load_cohorts(c)?;
    let report = test_cohorts(&a, &b, &c.test_options())?;
    write_json(&c.output.join("test_report.json"), &report)?;
    write(&c.output.join("partial.csv"), report.partial_csv())?;
    let flagged = report.partial.iter().filter(|e| e.significant).count();
    println!(
        "global: statistic {:.4}, z {:.3}, p {:.4} ({} permutations); {flagged} of {} properties significant at FDR {}",
        report.global.statistic,
        report.global.z_score,
        report.global.p_value,
        report.global.permutations,
        report.partial.len(),
        report.fdr
    );
    Ok(())
}

fn cmd_classify(c: &RunConfig) -> Result<()> {
    let (a, b) = load_cohorts(c)?;
    let (fa, fb) = cohort_features(&a, &b)?;
    let va: Vec<Vec<f64>> = fa.iter().map(|f| f.to_vector()).collect();
    let vb: Vec<Vec<f64>> = fb.iter().map(|f| f.to_vector()).collect();
    let m = classify_cv(&va, &vb, c.classifier, c.folds, c.seed)?;
    write_json(&c.output.join("metrics.json"), &m)?;
    let rows: Vec<_> = fa.into_iter().chain(fb).collect();
    write(&c.output.join("features.csv"), features_csv(&gop_census(&a[0]), &rows))?;
    println!("accuracy {:.3}, kappa {:.3}, sensitivity {:.3}, specificity {:.3}", m.accuracy, m.kappa, m.sensitivity, m.specificity);
    Ok(())
}

fn default_resolution() -> u32 {
    4
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CohortSpec {
    n_per_group: usize,
    effect: Effect,
    #[serde(default = "default_resolution")]
    resolution: u32,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SynthInput {
    Cohort(CohortSpec),
    Object(SynthSpec),
}

fn cmd_synth(c: &RunConfig) -> Result<()> {
    let [path] = inputs::<1>(c)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: SynthInput = serde_json::from_str(&text).with_context(|| format!("{} is neither an object nor a cohort spec", path.display()))?;
    match spec {
        SynthInput::Object(s) => {
            save_mesh(&s.build()?, c.output.join("object.obj"))?;
            write_json(&c.output.join("manifest.json"), &s)?;
        }
        SynthInput::Cohort(s) => {
            let cohorts = simulate_groups(s.n_per_group, s.effect, s.resolution, s.seed.unwrap_or(c.seed))?;
            for (name, meshes) in [("a", &cohorts.a), ("b", &cohorts.b)] {
                let dir = c.output.join(name);
                fs::create_dir_all(&dir)?;
                for (i, m) in meshes.iter().enumerate() {
                    save_mesh(m, dir.join(format!("{i:03}.obj")))?;
                }
            }
            write_json(&c.output.join("manifest.json"), &cohorts.manifest)?;
        }
    }
    Ok(())
}

fn cmd_flatten(c: &RunConfig) -> Result<()> {
    let [path] = inputs::<1>(c)?;
    let prep = prepare(&load_mesh(path, None)?, &c.fit_config())?;
    let pts = &prep.cms.points;
    let stride = pts.len().div_ceil(c.max_points.max(1)).max(1);
    let sample: Vec<_> = pts.iter().step_by(stride).copied().collect();
    let map = match c.flatten {
        FlattenMethod::Pca => pca_flatten(&sample)?,
        FlattenMethod::Tsne => tsne_flatten(&sample, c.perplexity, c.iterations, c.seed)?,
    };
    write(&c.output.join("embedding.csv"), map.to_csv())?;
    println!("{} points, flatable {}", sample.len(), map.flatable);
    Ok(())
}

fn read_polygon(path: &Path) -> Result<Vec<Vec2>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if line.trim().is_empty() || (i == 0 && f[0].parse::<f64>().is_err()) {
            continue;
        }
        if f.len() < 2 {
            bail!("{}:{}: expected x,y", path.display(), i + 1);
        }
        let parse = |s: &str| s.parse::<f64>().with_context(|| format!("{}:{}: bad number {s:?}", path.display(), i + 1));
        out.push(Vec2::new(parse(f[0])?, parse(f[1])?));
    }
    Ok(out)
}

fn cmd_straighten(c: &RunConfig) -> Result<()> {
    let [path] = inputs::<1>(c)?;
    let model = fit_gc2d(&read_polygon(path)?, c.gc_degree, c.gc_stations, c.pitch)?;
    write(&c.output.join("gc2d.svg"), model.to_svg())?;
    write(&c.output.join("gc2d.json"), model.to_json()?)?;
    write(&c.output.join("straightened.svg"), straighten_2d(&model).to_svg())?;
    if !model.rcc_violations.is_empty() {
        log::warn!("{} stations reach the radius of curvature", model.rcc_violations.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (name, inputs) = match cli.command {
        Command::Fit(i) => ("fit", i),
        Command::Score(i) => ("score", i),
        Command::Test(i) => ("test", i),
        Command::Classify(i) => ("classify", i),
        Command::Synth(i) => ("synth", i),
        Command::Flatten(i) => ("flatten", i),
        Command::Straighten2d(i) => ("straighten2d", i),
    };
    let c = inputs.resolve(name)?;
    fs::create_dir_all(&c.output).with_context(|| format!("creating {}", c.output.display()))?;
    write_json(&c.output.join(CONFIG_NAME), &c)?;
    match name {
        "fit" => cmd_fit(&c),
        "score" => cmd_score(&c),
        "test" => cmd_test(&c),
        "classify" => cmd_classify(&c),
        "synth" => cmd_synth(&c),
        "flatten" => cmd_flatten(&c),
        _ => cmd_straighten(&c),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: {THREADS_VAR} must be a positive integer, got {v:?}");
                std::process::exit(2);
            }
        }
    }
    if let Err(e) = run(Cli::parse()) {
        // Core errors already embed their source; print each cause once.
        let mut msg = String::new();
        for cause in e.chain().map(|c| c.to_string()) {
            if !msg.contains(&cause) {
                msg += if msg.is_empty() { "" } else { ": " };
                msg += &cause;
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
