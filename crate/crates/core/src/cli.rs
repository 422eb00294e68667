//! Command-line front end. Every flag can also be given as a key of the JSON file
//! passed with `--config`; flags win over the file.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::coeff_families::CoefficientGrid;
use crate::error::{invalid, Error, Result};
use crate::experiments::{
    emit_report, render_report, Cell, Experiment, ModelSpec, ReportFormat, ReportMeta, ScanConfig,
    Tabular, Theory,
};
use crate::io::{save_grid, save_slab};
use crate::lattice_sim::{FieldSimulator, InnovationSpec, McOptions, DEFAULT_MEMORY_BUDGET};
use crate::limit_calc::EdgeSigmas;
use crate::region_atlas::{
    atlas_grid, classify_exponents, critical_gamma, exponents, limit_descriptor, normalization_law,
    phase_diagram, AtlasRow, LimitDescriptor, ModelExponents, NormalizationLaw, RegionId,
    RegionTag, DEFAULT_TOL,
};

pub const OUT_ENV: &str = "LATTICESCALE_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "latticescale",
    version,
    about = "Anisotropic scaling of negatively dependent linear random fields on Z^2"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// JSON file with any of the flags below as keys
    #[arg(long, global = true, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Base seed of the innovation streams
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory; the LATTICESCALE_OUT environment variable takes precedence
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Report format: json or csv
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Memory budget of one simulation window, in bytes
    #[arg(long, global = true)]
    pub memory_budget: Option<usize>,
    /// Distance to a region boundary below which parameters count as on it
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

const GLOBAL_KEYS: [&str; 6] = ["seed", "threads", "out", "format", "memory_budget", "tol"];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Globals {
    #[serde(default)]
    seed: u64,
    threads: Option<usize>,
    out: Option<PathBuf>,
    format: Option<ReportFormat>,
    memory_budget: Option<usize>,
    tol: Option<f64>,
}

impl Globals {
    fn mc(&self) -> McOptions {
        let threads = self.threads.unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
        McOptions {
            threads: threads.max(1),
            memory_budget: self.memory_budget.unwrap_or(DEFAULT_MEMORY_BUDGET),
        }
    }

    fn format(&self, default: ReportFormat) -> ReportFormat {
        self.format.unwrap_or(default)
    }

    fn tol(&self) -> f64 {
        self.tol.unwrap_or(DEFAULT_TOL)
    }
}

/// Coefficient model flags shared by most commands.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// isotropic, heat, separable, pair-difference or synthetic
    #[arg(long)]
    pub family: Option<String>,
    /// Memory parameter (isotropic, heat)
    #[arg(long, allow_hyphen_values = true)]
    pub d: Option<f64>,
    /// Lazy-walk parameter in (0, 1) (heat)
    #[arg(long)]
    pub theta: Option<f64>,
    /// Memory parameters (separable)
    #[arg(long, allow_hyphen_values = true)]
    pub d1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub d2: Option<f64>,
    /// Decay exponents (classify, synthetic)
    #[arg(long)]
    pub q1: Option<f64>,
    #[arg(long)]
    pub q2: Option<f64>,
    /// Truncation radius (isotropic, heat)
    #[arg(long)]
    pub radius: Option<usize>,
    /// Truncation radii (separable, synthetic)
    #[arg(long)]
    pub r1: Option<usize>,
    #[arg(long)]
    pub r2: Option<usize>,
    /// Angular function as JSON, e.g. '{"constant":1.0}' or '{"table":[...]}'
    #[arg(long, value_parser = parse_json_arg)]
    pub angular: Option<Value>,
    /// Isotropic construction options as JSON, e.g. '{"zero_sum":true}'
    #[arg(long, value_parser = parse_json_arg)]
    pub options: Option<Value>,
}

fn parse_json_arg(s: &str) -> std::result::Result<Value, String> {
    serde_json::from_str(s).map_err(|e| format!("not valid JSON: {e}"))
}

impl ModelArgs {
    fn spec(&self) -> Result<ModelSpec> {
        let v = strip_nulls(serde_json::to_value(self)?);
        let mut obj = v.as_object().cloned().unwrap_or_default();
        if !obj.contains_key("family") {
            return Err(invalid("--family is required"));
        }
        for k in ["angular", "options"] {
            if let Some(Value::String(s)) = obj.get(k) {
                let parsed = parse_json_arg(s).map_err(|e| invalid(format!("--{k}: {e}")))?;
                obj.insert(k.into(), parsed);
            }
        }
        serde_json::from_value(Value::Object(obj)).map_err(|e| invalid(format!("model: {e}")))
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Region, exponents, critical gamma and limit fields of a model
    Classify(ClassifyArgs),
    /// Region labels on a grid of (1/q1, 1/q2)
    Atlas(AtlasArgs),
    /// Build a coefficient grid and write it as LSCG with a JSON sidecar
    Coeffs(CoeffsArgs),
    /// Simulate one field window and write it as LSSB with a JSON sidecar
    Simulate(SimulateArgs),
    /// Fit H(gamma) from the growth of Var S over lambda
    ScanVariance(ScanVarianceArgs),
    /// Fit H(gamma) over a gamma grid and locate the kink
    ScanTransition(ScanTransitionArgs),
    /// Edge variances of a coefficient grid
    EdgeSigma(EdgeSigmaArgs),
    /// Compare replicate covariances with the limit field
    CovCheck(CovCheckArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ClassifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct AtlasArgs {
    /// Cells per axis
    #[arg(long)]
    pub n: Option<usize>,
    /// Lower end of both inverse-exponent axes
    #[arg(long)]
    pub lo: Option<f64>,
    /// Upper end of both inverse-exponent axes
    #[arg(long)]
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct CoeffsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Window extent along the first axis
    #[arg(long = "T1", id = "T1")]
    #[serde(rename = "T1")]
    pub t1: Option<usize>,
    /// Window extent along the second axis
    #[arg(long = "T2", id = "T2")]
    #[serde(rename = "T2")]
    pub t2: Option<usize>,
    /// Replicate index of the innovation stream
    #[arg(long)]
    pub replicate: Option<u64>,
    /// gaussian, rademacher or centered_uniform
    #[arg(long)]
    pub innovation: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ScanArgs {
    /// Scales, comma separated
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Rectangle corner (x, y) before scaling
    #[arg(long)]
    pub x: Option<f64>,
    #[arg(long)]
    pub y: Option<f64>,
    /// Replicates for Monte Carlo variances and covariances
    #[arg(long)]
    pub reps: Option<usize>,
    /// Exact variances (default); `--exact false` switches to Monte Carlo (scans only)
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub exact: Option<bool>,
    /// gaussian, rademacher or centered_uniform
    #[arg(long)]
    pub innovation: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ScanVarianceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub scan: ScanArgs,
    /// Aspect exponent
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ScanTransitionArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub scan: ScanArgs,
    /// Aspect exponents, comma separated
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct EdgeSigmaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct CovCheckArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub scan: ScanArgs,
    /// Aspect exponent
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Point pair as x1,y1,x2,y2; repeat for more pairs
    #[arg(long = "pair", id = "pair", value_parser = parse_pair)]
    #[serde(rename = "pair")]
    pub pairs: Option<Vec<PointPair>>,
}

pub type PointPair = ((f64, f64), (f64, f64));

fn parse_pair(s: &str) -> std::result::Result<PointPair, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [a, b, c, d] => Ok(((a, b), (c, d))),
        _ => Err(format!("expected x1,y1,x2,y2, got {} numbers", v.len())),
    }
}

fn strip_nulls(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.into_iter()
                .filter(|(_, x)| !x.is_null())
                .map(|(k, x)| (k, strip_nulls(x)))
                .collect(),
        ),
        x => x,
    }
}

/// Config file keys overridden by flags; unknown keys are rejected.
fn merge_config<T: Serialize + DeserializeOwned>(
    file: Map<String, Value>,
    flags: &T,
    allowed: &[String],
) -> Result<T> {
    if let Some(k) = file.keys().find(|k| !allowed.contains(k)) {
        return Err(invalid(format!(
            "unknown config key {k:?} for this command"
        )));
    }
    let mut merged = file;
    if let Value::Object(m) = strip_nulls(serde_json::to_value(flags)?) {
        merged.extend(m);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| invalid(format!("config: {e}")))
}

fn innovation(name: &Option<String>, seed: u64) -> Result<InnovationSpec> {
    let mut spec = InnovationSpec::gaussian(seed);
    if let Some(n) = name {
        spec.family = serde_json::from_value(Value::String(n.replace('-', "_")))
            .map_err(|_| invalid(format!("unknown innovation family {n:?}")))?;
    }
    Ok(spec)
}

fn scan_config(
    model: &ModelArgs,
    scan: &ScanArgs,
    gammas: Vec<f64>,
    seed: u64,
) -> Result<ScanConfig> {
    let cfg = ScanConfig {
        model: model.spec()?,
        innovation: innovation(&scan.innovation, seed)?,
        gamma_grid: gammas,
        lambda_grid: scan
            .lambdas
            .clone()
            .unwrap_or_else(|| vec![64.0, 128.0, 256.0, 512.0]),
        point: (scan.x.unwrap_or(1.0), scan.y.unwrap_or(1.0)),
        reps: scan.reps.unwrap_or(200),
        use_exact_variance: scan.exact.unwrap_or(true),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn require<T: Copy>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| invalid(format!("--{flag} is required")))
}

/// Write the report under the output directory, or print it.
fn deliver<T: Serialize + Tabular>(meta: &ReportMeta, body: &T, g: &Globals) -> Result<String> {
    match &g.out {
        Some(dir) => Ok(format!(
            "{}\n",
            emit_report(meta, body, g.format(ReportFormat::Json), dir)?.display()
        )),
        None => render_report(meta, body, g.format(ReportFormat::Json)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitRow {
    pub gamma: f64,
    #[serde(rename = "H")]
    pub h: std::result::Result<f64, String>,
    pub limit: std::result::Result<LimitDescriptor, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub q1: f64,
    pub q2: f64,
    pub region: RegionId,
    pub exponents: Option<ModelExponents>,
    pub gamma0: f64,
    pub law: std::result::Result<NormalizationLaw, String>,
    pub limits: Vec<LimitRow>,
}

impl Tabular for Classification {
    fn columns(&self) -> Vec<&'static str> {
        vec![
            "region", "q1", "q2", "gamma0", "gamma", "H", "H_x", "H_y", "scale", "branch", "note",
        ]
    }

    fn rows(&self) -> Vec<Vec<Cell>> {
        self.limits
            .iter()
            .map(|r| {
                let (hx, hy, scale, branch) = match &r.limit {
                    Ok(d) => (
                        d.hurst_pair.map(|p| p.hx),
                        d.hurst_pair.map(|p| p.hy),
                        Cell::Text(
                            serde_json::to_value(d.scale_symbol)
                                .ok()
                                .and_then(|v| v.as_str().map(String::from))
                                .unwrap_or_default(),
                        ),
                        Cell::Text(format!("{:?}", d.branch).to_lowercase()),
                    ),
                    Err(_) => (None, None, Cell::Missing, Cell::Missing),
                };
                let note = match (&r.h, &r.limit) {
                    (Err(e), _) | (_, Err(e)) => Cell::Text(format!("\"{}\"", e.replace('"', "'"))),
                    _ => Cell::Missing,
                };
                vec![
                    self.region.tag.name().into(),
                    self.q1.into(),
                    self.q2.into(),
                    self.gamma0.into(),
                    r.gamma.into(),
                    r.h.clone().ok().into(),
                    hx.into(),
                    hy.into(),
                    scale,
                    branch,
                    note,
                ]
            })
            .collect()
    }
}

fn classify_model(m: &ModelArgs, tol: f64) -> Result<Classification> {
    let explicit = m.family.is_none() || m.family.as_deref() == Some("synthetic");
    let (q1, q2) = if explicit {
        (require(m.q1, "q1")?, require(m.q2, "q2")?)
    } else {
        let spec = m.spec()?;
        match spec.decay_exponents() {
            Ok(q) => q,
            Err(_) if spec == ModelSpec::PairDifference => return classify_grid(&spec.build()?),
            Err(e) => return Err(e),
        }
    };
    let e = exponents(q1, q2)?;
    let region = classify_exponents(&e, tol)?;
    if region.tag == RegionTag::Boundary {
        return Err(Error::Boundary(format!(
            "(q1, q2) = ({q1}, {q2}): {}",
            region.boundary_detail.as_deref().unwrap_or("")
        )));
    }
    let g0 = critical_gamma(&e, &region)?;
    let law = normalization_law(&e, &region);
    let limits = [0.5 * g0, g0, 2.0 * g0]
        .iter()
        .map(|&gamma| LimitRow {
            gamma,
            h: law
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|l| l.h(gamma).map_err(|e| e.to_string())),
            limit: limit_descriptor(&e, &region, gamma).map_err(|e| e.to_string()),
        })
        .collect();
    Ok(Classification {
        q1,
        q2,
        region,
        exponents: Some(e),
        gamma0: g0,
        law: law.map_err(|e| e.to_string()),
        limits,
    })
}

fn classify_grid(grid: &CoefficientGrid) -> Result<Classification> {
    let th = Theory::of(grid);
    let region = th
        .region
        .clone()
        .ok_or_else(|| Error::Unsupported(th.note.clone().unwrap_or_default()))?;
    let law = th.law.ok_or_else(|| th.note.clone().unwrap_or_default());
    let g0 = law.as_ref().map(|l| l.gamma0).unwrap_or(1.0);
    let limits = [0.5 * g0, g0, 2.0 * g0]
        .iter()
        .map(|&gamma| LimitRow {
            gamma,
            h: th.h(gamma).map_err(|e| e.to_string()),
            limit: th.descriptor(gamma).map_err(|e| e.to_string()),
        })
        .collect();
    Ok(Classification {
        q1: grid.q1,
        q2: grid.q2,
        region,
        exponents: th.exponents,
        gamma0: g0,
        law,
        limits,
    })
}

fn classify_text(c: &Classification) -> String {
    let mut s = format!(
        "region   {}\nq1, q2   {}, {}\ngamma0   {}\n",
        c.region.tag, c.q1, c.q2, c.gamma0
    );
    if let Some(e) = &c.exponents {
        s += &format!(
            "Q {}  Q_edge1 {}  Q_edge2 {}  Q_tilde1 {}  Q_tilde2 {}\nH1 {}  H2 {}  H1_tilde {}  H2_tilde {}\n",
            e.q, e.q_edge1, e.q_edge2, e.q_tilde1, e.q_tilde2, e.h1, e.h2, e.h1_tilde, e.h2_tilde
        );
    }
    for r in &c.limits {
        let h = match &r.h {
            Ok(h) => format!("{h}"),
            Err(e) => format!("refused ({e})"),
        };
        let lim = match &r.limit {
            Ok(d) => match d.hurst_pair {
                Some(p) => format!("B({}, {}) scaled by {:?}", p.hx, p.hy, d.scale_symbol),
                None => format!("{:?}", d.scale_symbol),
            },
            Err(e) => format!("refused ({e})"),
        };
        s += &format!("gamma {:<8} H {h}\n               limit {lim}\n", r.gamma);
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct AtlasReport {
    pub rows: Vec<AtlasRow>,
}

impl Tabular for AtlasReport {
    fn columns(&self) -> Vec<&'static str> {
        vec![
            "inv_q1", "inv_q2", "region", "Q", "Q_edge1", "Q_edge2", "Q_tilde1", "Q_tilde2",
        ]
    }

    fn rows(&self) -> Vec<Vec<Cell>> {
        self.rows
            .iter()
            .map(|r| {
                let e = r.exponents.as_ref();
                vec![
                    r.inv_q1.into(),
                    r.inv_q2.into(),
                    r.region.tag.name().into(),
                    e.map(|e| e.q).into(),
                    e.map(|e| e.q_edge1).into(),
                    e.map(|e| e.q_edge2).into(),
                    e.map(|e| e.q_tilde1).into(),
                    e.map(|e| e.q_tilde2).into(),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeReport(pub EdgeSigmas);

impl Tabular for EdgeReport {
    fn columns(&self) -> Vec<&'static str> {
        vec![
            "sigma2_edge1",
            "sigma2_edge2",
            "truncation_bound",
            "edge1_converged",
            "edge2_converged",
        ]
    }

    fn rows(&self) -> Vec<Vec<Cell>> {
        let e = &self.0;
        vec![vec![
            e.sigma2_edge1.into(),
            e.sigma2_edge2.into(),
            e.truncation_bound.into(),
            e.edge1_converged.into(),
            e.edge2_converged.into(),
        ]]
    }
}

fn allowed_keys(sub: &str) -> Vec<String> {
    let cmd = Cli::command();
    let mut keys: Vec<String> = GLOBAL_KEYS.iter().map(|s| s.to_string()).collect();
    if let Some(sc) = cmd.find_subcommand(sub) {
        keys.extend(sc.get_arguments().map(|a| a.get_id().to_string()));
    }
    keys.retain(|k| k != "config" && k != "help" && k != "version");
    keys
}

/// Seeded configuration hashed into report headers.
#[derive(Serialize)]
struct Stamp<'a, T: Serialize> {
    command: &'a str,
    params: &'a T,
}

fn meta<T: Serialize>(kind: &str, params: &T, seed: u64) -> Result<ReportMeta> {
    ReportMeta::new(
        kind,
        &Stamp {
            command: kind,
            params,
        },
        seed,
    )
}

/// Run a parsed command line; returns the text to print.
pub fn run(cli: Cli) -> Result<String> {
    let mut file: Map<String, Value> = match &cli.global.config {
        Some(p) => match serde_json::from_slice(&std::fs::read(p)?)? {
            Value::Object(m) => m,
            _ => return Err(invalid("the config file must hold a JSON object")),
        },
        None => Map::new(),
    };
    let mut gfile = Map::new();
    for k in GLOBAL_KEYS {
        if let Some(v) = file.remove(k) {
            gfile.insert(k.into(), v);
        }
    }
    if let Value::Object(m) = strip_nulls(serde_json::to_value(&cli.global)?) {
        gfile.extend(m);
    }
    if let Some(dir) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        gfile.insert(
            "out".into(),
            Value::String(dir.to_string_lossy().into_owned()),
        );
    }
    let g: Globals = serde_json::from_value(Value::Object(gfile))
        .map_err(|e| invalid(format!("config: {e}")))?;
    let name = cli.command.name();
    let allowed = allowed_keys(name);
    match &cli.command {
        Command::Classify(a) => {
            let a = merge_config(file, a, &allowed)?;
            let c = classify_model(&a.model, g.tol())?;
            if g.out.is_none() && g.format.is_none() {
                return Ok(format!(
                    "{}{}\n",
                    classify_text(&c),
                    serde_json::to_string_pretty(&c)?
                ));
            }
            deliver(&meta("classify", &a, g.seed)?, &c, &g)
        }
        Command::Atlas(a) => {
            let a = merge_config(file, a, &allowed)?;
            let (n, lo, hi) = (a.n.unwrap_or(200), a.lo.unwrap_or(0.0), a.hi.unwrap_or(1.0));
            if n == 0 || !(lo < hi) {
                return Err(invalid("atlas needs n > 0 and lo < hi"));
            }
            let rows = phase_diagram(&atlas_grid(n, lo, hi), g.tol());
            let g = Globals {
                format: Some(g.format(ReportFormat::Csv)),
                ..g
            };
            deliver(&meta("atlas", &a, g.seed)?, &AtlasReport { rows }, &g)
        }
        Command::Coeffs(a) => {
            let a = merge_config(file, a, &allowed)?;
            let grid = a.model.spec()?.build()?;
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            let (p, s) = save_grid(&dir.join("coeffs.lscg"), &grid)?;
            Ok(format!("{}\n{}\n", p.display(), s.display()))
        }
        Command::Simulate(a) => {
            let a = merge_config(file, a, &allowed)?;
            let grid = a.model.spec()?.build()?;
            let sim = FieldSimulator::new(
                &grid,
                require(a.t1, "T1")?,
                require(a.t2, "T2")?,
                g.mc().memory_budget,
            )?;
            let slab = sim.simulate(
                &innovation(&a.innovation, g.seed)?,
                a.replicate.unwrap_or(0),
            );
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            let (p, s) = save_slab(&dir.join("slab.lssb"), &slab)?;
            Ok(format!("{}\n{}\n", p.display(), s.display()))
        }
        Command::ScanVariance(a) => {
            let a = merge_config(file, a, &allowed)?;
            let gamma = require(a.gamma, "gamma")?;
            let cfg = scan_config(&a.model, &a.scan, vec![gamma], g.seed)?;
            let ex = Experiment::prepare(cfg.clone())?;
            let fit = ex.variance_scan(gamma, &g.mc())?;
            deliver(&meta("scan_variance", &cfg, g.seed)?, &fit, &g)
        }
        Command::ScanTransition(a) => {
            let a = merge_config(file, a, &allowed)?;
            let gammas = a
                .gammas
                .clone()
                .ok_or_else(|| invalid("--gammas is required"))?;
            let cfg = scan_config(&a.model, &a.scan, gammas, g.seed)?;
            let ex = Experiment::prepare(cfg.clone())?;
            let rep = ex.transition_scan(&g.mc())?;
            deliver(&meta("scan_transition", &cfg, g.seed)?, &rep, &g)
        }
        Command::EdgeSigma(a) => {
            let a = merge_config(file, a, &allowed)?;
            let grid = a.model.spec()?.build()?;
            let e = crate::limit_calc::edge_sigmas(&grid);
            deliver(&meta("edge_sigma", &a, g.seed)?, &EdgeReport(e), &g)
        }
        Command::CovCheck(a) => {
            let a = merge_config(file, a, &allowed)?;
            let gamma = require(a.gamma, "gamma")?;
            let pairs = a
                .pairs
                .clone()
                .ok_or_else(|| invalid("--pair is required"))?;
            let mut scan = a.scan.clone();
            scan.exact = Some(false);
            let cfg = scan_config(&a.model, &scan, vec![gamma], g.seed)?;
            let ex = Experiment::prepare(cfg.clone())?;
            let rep = ex.covariance_check(gamma, &pairs, &g.mc())?;
            deliver(&meta("cov_check", &(&cfg, &pairs), g.seed)?, &rep, &g)
        }
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Classify(_) => "classify",
            Command::Atlas(_) => "atlas",
            Command::Coeffs(_) => "coeffs",
            Command::Simulate(_) => "simulate",
            Command::ScanVariance(_) => "scan-variance",
            Command::ScanTransition(_) => "scan-transition",
            Command::EdgeSigma(_) => "edge-sigma",
            Command::CovCheck(_) => "cov-check",
        }
    }
}

/// Parse, run and report; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
