//! Shared flags, the `key=value` config file and everything they resolve to.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use rankone::diagnostics::{Reference, DEFAULT_TAIL_WINDOW};
use rankone::format::{read_point_file, read_tensor_file, TensorFile};
use rankone::generators::{
    gen_b_lambda, gen_initial_tau, gen_mohlenkamp, gen_ordering_example, gen_orthogonal_cp, gen_synthetic_order4,
};
use rankone::oracles::random_start;
use rankone::tensor::{cp_to_dense, tucker_to_dense};
use rankone::{CpTensor, DenseTensor, RankOneRep, SolverConfig};

use crate::error::{usage, CliError, CliResult};

pub const GENERATORS: [&str; 5] = ["mohlenkamp", "b-lambda", "orthogonal-cp", "ordering", "order4"];

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Tensor file (dense, cp or tucker format)
    #[arg(long, value_name = "PATH", conflicts_with = "generate")]
    pub tensor: Option<PathBuf>,
    /// Built-in tensor: mohlenkamp, b-lambda, orthogonal-cp, ordering, order4
    #[arg(long, value_name = "NAME")]
    pub generate: Option<String>,
    /// Generator parameter, repeatable (e.g. lambda=0.2, dims=3,3,3)
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Initial guess: `random`, `tau T` or `file PATH`
    #[arg(long, num_args = 1..=2, value_names = ["KIND", "ARG"])]
    pub init: Option<Vec<String>>,
    /// Same as `--init tau T`
    #[arg(long, value_name = "T", conflicts_with = "init")]
    pub init_tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated 1-based mode permutation
    #[arg(long, value_name = "PERM")]
    pub order: Option<String>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    /// Gradient tolerance, or `off`
    #[arg(long, value_name = "X")]
    pub tol_grad: Option<String>,
    /// Relative per-sweep decrease of f below which the run stops, or `off`
    #[arg(long = "tol-df", value_name = "X")]
    pub tol_df: Option<String>,
    /// Reference tensor file for angle tracking
    #[arg(long, value_name = "PATH", conflicts_with = "reference_term")]
    pub reference: Option<PathBuf>,
    /// 1-based term of a structured target used as reference
    #[arg(long, value_name = "J")]
    pub reference_term: Option<usize>,
    /// Equalise factor norms after every sweep
    #[arg(long)]
    pub rebalance: bool,
    #[arg(long, value_name = "PATH")]
    pub trace_out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub report_out: Option<PathBuf>,
    /// gnuplot script; defaults to the trace path with a `.gp` extension
    #[arg(long, value_name = "PATH")]
    pub plot_out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Number of trailing ratios used by the rate estimate
    #[arg(long, value_name = "N")]
    pub tail_window: Option<usize>,
    /// Tangents at or below this value end the ratio series
    #[arg(long, value_name = "X")]
    pub tan_floor: Option<f64>,
    /// key=value file with the same keys as the long flags; flags win
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

fn config_err(path: &Path, line: usize, msg: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_at<T: std::str::FromStr>(path: &Path, line: usize, key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| config_err(path, line, format!("cannot parse `{v}` for `{key}`")))
}

fn parse_bool(path: &Path, line: usize, v: &str) -> CliResult<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_err(path, line, format!("expected true or false, got `{v}`"))),
    }
}

impl Common {
    /// Fills unset fields from the `--config` file, if any.
    pub fn merged(mut self) -> CliResult<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        let mut file_params = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(config_err(&path, line, format!("expected key=value, got `{content}`")));
            };
            let (key, v) = (key.trim(), value.trim());
            let p = path.as_path();
            match key {
                "tensor" => set(&mut self.tensor, PathBuf::from(v)),
                "generate" => set(&mut self.generate, v.to_string()),
                "param" => file_params.push(v.to_string()),
                "init" => set(&mut self.init, v.split_whitespace().map(str::to_string).collect()),
                "init-tau" => set(&mut self.init_tau, parse_at(p, line, key, v)?),
                "seed" => set(&mut self.seed, parse_at(p, line, key, v)?),
                "order" => set(&mut self.order, v.to_string()),
                "max-sweeps" => set(&mut self.max_sweeps, parse_at(p, line, key, v)?),
                "tol-grad" => set(&mut self.tol_grad, v.to_string()),
                "tol-df" => set(&mut self.tol_df, v.to_string()),
                "reference" => set(&mut self.reference, PathBuf::from(v)),
                "reference-term" => set(&mut self.reference_term, parse_at(p, line, key, v)?),
                "rebalance" => self.rebalance |= parse_bool(p, line, v)?,
                "trace-out" => set(&mut self.trace_out, PathBuf::from(v)),
                "report-out" => set(&mut self.report_out, PathBuf::from(v)),
                "plot-out" => set(&mut self.plot_out, PathBuf::from(v)),
                "jobs" => set(&mut self.jobs, parse_at(p, line, key, v)?),
                "tail-window" => set(&mut self.tail_window, parse_at(p, line, key, v)?),
                "tan-floor" => set(&mut self.tan_floor, parse_at(p, line, key, v)?),
                other => return Err(config_err(&path, line, format!("unknown key `{other}`"))),
            }
        }
        // later entries win, so flags go last
        file_params.append(&mut self.params);
        self.params = file_params;
        if self.tensor.is_some() && self.generate.is_some() {
            return Err(usage("give either a tensor file or a generator, not both"));
        }
        if self.reference.is_some() && self.reference_term.is_some() {
            return Err(usage("give either --reference or --reference-term, not both"));
        }
        if self.init.is_some() && self.init_tau.is_some() {
            return Err(usage("give either --init or --init-tau, not both"));
        }
        Ok(self)
    }

    pub fn param_map(&self) -> CliResult<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for p in &self.params {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| usage(format!("parameter `{p}` is not KEY=VALUE")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(map)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn solver_config(&self) -> CliResult<SolverConfig> {
        let mut cfg = SolverConfig::default();
        if let Some(n) = self.max_sweeps {
            cfg.max_sweeps = n;
        }
        if let Some(t) = &self.tol_grad {
            cfg.tol_grad = parse_tol(t)?;
        }
        if let Some(t) = &self.tol_df {
            cfg.tol_delta_f = parse_tol(t)?;
        }
        if let Some(o) = &self.order {
            cfg.mode_order = Some(parse_order(o)?);
        }
        cfg.rebalance = self.rebalance;
        Ok(cfg)
    }

    pub fn init_source(&self) -> CliResult<Option<InitSource>> {
        if let Some(t) = self.init_tau {
            return Ok(Some(InitSource::Tau(t)));
        }
        let Some(words) = &self.init else {
            return Ok(None);
        };
        let words: Vec<&str> = words.iter().map(String::as_str).collect();
        match words.as_slice() {
            ["random"] => Ok(Some(InitSource::Random)),
            ["tau", t] => t
                .parse()
                .map(|t| Some(InitSource::Tau(t)))
                .map_err(|_| usage(format!("cannot parse τ `{t}`"))),
            ["file", p] => Ok(Some(InitSource::File(PathBuf::from(p)))),
            _ => Err(usage(format!(
                "--init expects `random`, `tau T` or `file PATH`, got `{}`",
                words.join(" ")
            ))),
        }
    }

    pub fn tail_window(&self) -> usize {
        self.tail_window.unwrap_or(DEFAULT_TAIL_WINDOW).max(1)
    }

    pub fn tan_floor(&self) -> f64 {
        self.tan_floor.unwrap_or(f64::MIN_POSITIVE)
    }

    pub fn plot_path(&self) -> Option<PathBuf> {
        self.plot_out
            .clone()
            .or_else(|| self.trace_out.as_ref().map(|t| t.with_extension("gp")))
    }
}

fn set<T>(slot: &mut Option<T>, v: T) {
    if slot.is_none() {
        *slot = Some(v);
    }
}

pub fn parse_tol(s: &str) -> CliResult<Option<f64>> {
    match s {
        "off" | "none" => Ok(None),
        _ => {
            let x: f64 = s.parse().map_err(|_| usage(format!("cannot parse tolerance `{s}`")))?;
            if !(x >= 0.0) {
                return Err(usage(format!("tolerance must be non-negative, got {s}")));
            }
            Ok(Some(x))
        }
    }
}

/// `1,3,2` → `[0, 2, 1]`; validity is checked by the solver config.
pub fn parse_order(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|t| {
            let m: usize = t
                .trim()
                .parse()
                .map_err(|_| usage(format!("cannot parse mode `{t}` in --order")))?;
            if m == 0 {
                return Err(usage("--order is 1-based"));
            }
            Ok(m - 1)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSource {
    Random,
    Tau(f64),
    File(PathBuf),
}

/// A target tensor plus whatever structure it came with.
#[derive(Debug, Clone)]
pub struct Target {
    pub dense: DenseTensor,
    pub file: Option<TensorFile>,
    /// Rank-one terms usable with `--reference-term`.
    pub terms: Vec<RankOneRep>,
    /// Initial guess that belongs to the generator, if any.
    pub default_init: Option<RankOneRep>,
}

impl Target {
    fn from_cp(cp: CpTensor) -> Self {
        let terms = (0..cp.rank()).map(|j| cp.term(j)).collect();
        Target {
            dense: cp_to_dense(&cp),
            file: Some(TensorFile::Cp(cp)),
            terms,
            default_init: None,
        }
    }
}

struct Params {
    map: BTreeMap<String, String>,
    name: String,
}

impl Params {
    fn take<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| usage(format!("{}: cannot parse `{v}` for `{key}`", self.name))),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<Option<Vec<T>>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| usage(format!("{}: cannot parse `{t}` in `{key}`", self.name)))
                })
                .collect::<CliResult<Vec<T>>>()
                .map(Some),
        }
    }

    fn done(self) -> CliResult<()> {
        match self.map.keys().next() {
            None => Ok(()),
            Some(k) => Err(usage(format!("{}: unknown parameter `{k}`", self.name))),
        }
    }
}

pub fn generate(name: &str, params: BTreeMap<String, String>, seed: u64) -> CliResult<Target> {
    let mut p = Params {
        map: params,
        name: name.to_string(),
    };
    let gen_seed = p.take("seed")?.unwrap_or(seed);
    let target = match name {
        "mohlenkamp" => Target::from_cp(gen_mohlenkamp()),
        "b-lambda" => {
            let lambda = p
                .take("lambda")?
                .ok_or_else(|| usage("b-lambda needs --param lambda=X"))?;
            let d = p.take("d")?.unwrap_or(3);
            let n = p.take("n")?.unwrap_or(4);
            let bl = gen_b_lambda(lambda, d, n, gen_seed)?;
            Target {
                terms: vec![bl.p_power()],
                file: Some(TensorFile::Dense(bl.tensor.clone())),
                dense: bl.tensor,
                default_init: None,
            }
        }
        "orthogonal-cp" => {
            let weights = p.list("weights")?.unwrap_or_else(|| vec![2.0, 1.0]);
            let dims = p.list("dims")?.unwrap_or_else(|| vec![3, 3, 3]);
            Target::from_cp(gen_orthogonal_cp(&weights, &dims, gen_seed)?)
        }
        "ordering" => {
            let lambda = p.take("lambda")?.unwrap_or(0.9);
            let a2 = p.take("alpha2")?.unwrap_or(2.0);
            let a3 = p.take("alpha3")?.unwrap_or(0.72);
            let (cp, init) = gen_ordering_example(lambda, a2, a3)?;
            let mut t = Target::from_cp(cp);
            t.default_init = Some(init);
            t
        }
        "order4" => {
            let dims = p.list("dims")?.unwrap_or_else(|| vec![4, 4, 4, 4]);
            let ranks = p.list("ranks")?.unwrap_or_else(|| vec![2, 2, 2, 2]);
            let t = gen_synthetic_order4(gen_seed, &dims, &ranks)?;
            Target {
                dense: tucker_to_dense(&t),
                file: Some(TensorFile::Tucker(t)),
                terms: Vec::new(),
                default_init: None,
            }
        }
        other => {
            return Err(usage(format!(
                "unknown generator `{other}`; available: {}",
                GENERATORS.join(", ")
            )))
        }
    };
    p.done()?;
    Ok(target)
}

pub fn load_target(c: &Common) -> CliResult<Target> {
    match (&c.tensor, &c.generate) {
        (Some(path), None) => {
            if !c.params.is_empty() {
                return Err(usage("--param only applies to --generate"));
            }
            let file = read_tensor_file(path)?;
            let terms = match &file {
                TensorFile::Cp(cp) => (0..cp.rank()).map(|j| cp.term(j)).collect(),
                _ => Vec::new(),
            };
            Ok(Target {
                dense: file.to_dense(),
                file: Some(file),
                terms,
                default_init: None,
            })
        }
        (None, Some(name)) => generate(name, c.param_map()?, c.seed()),
        (None, None) => Err(usage("need a tensor source: --tensor PATH or --generate NAME")),
        (Some(_), Some(_)) => Err(usage("give either a tensor file or a generator, not both")),
    }
}

pub fn build_init(source: Option<&InitSource>, target: &Target, seed: u64) -> CliResult<RankOneRep> {
    let dims = target.dense.dims();
    let init = match source {
        None => match &target.default_init {
            Some(p) => p.clone(),
            None => random_start(dims, &mut Xoshiro256PlusPlus::seed_from_u64(seed))?,
        },
        Some(InitSource::Random) => random_start(dims, &mut Xoshiro256PlusPlus::seed_from_u64(seed))?,
        Some(InitSource::Tau(t)) => {
            if dims.iter().any(|&n| n != 2) {
                return Err(usage(format!(
                    "the τ start needs every mode of size 2, target has {dims:?}"
                )));
            }
            gen_initial_tau(*t, dims.len())?
        }
        Some(InitSource::File(path)) => read_point_file(path)?,
    };
    if init.dims() != dims {
        return Err(usage(format!(
            "initial guess has mode sizes {:?}, target has {dims:?}",
            init.dims()
        )));
    }
    Ok(init)
}

pub fn build_reference(c: &Common, target: &Target) -> CliResult<Option<Reference>> {
    if let Some(j) = c.reference_term {
        if j == 0 || j > target.terms.len() {
            return Err(usage(format!(
                "--reference-term {j} is out of range: the target has {} usable terms",
                target.terms.len()
            )));
        }
        return Ok(Some(Reference::from_rank_one(&target.terms[j - 1])));
    }
    if let Some(path) = &c.reference {
        let t = read_tensor_file(path)?.to_dense();
        if t.dims() != target.dense.dims() {
            return Err(usage(format!(
                "reference has mode sizes {:?}, target has {:?}",
                t.dims(),
                target.dense.dims()
            )));
        }
        return Ok(Some(Reference::from_tensor(t)?));
    }
    Ok(None)
}

/// Fails early when an output file could not be created.
pub fn check_output(path: &Path) -> CliResult<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let meta = std::fs::metadata(parent).map_err(|source| CliError::Io {
        path: parent.to_path_buf(),
        source,
    })?;
    if !meta.is_dir() || meta.permissions().readonly() {
        return Err(usage(format!("output directory {} is not writable", parent.display())));
    }
    Ok(())
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
