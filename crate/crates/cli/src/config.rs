//! Run configuration (TOML). Unknown keys are rejected; relative paths are
//! taken relative to the configuration file.
//!
//! ```toml
//! version = 1
//!
//! [model]
//! n_s = 1
//! n_inputs = 1
//! n_outputs = 1
//! plant_form = "full"        # or "canonical"
//! bd = [[0.0]]               # default 0
//! cd = [[1.0]]               # default I
//! c_fixed = [[1.0]]          # optional
//! re_pattern = "full"        # full | diag | blockdiag(..) | blocktridiag(b,k) | [[i,j],..]
//!
//! [[constraints]]
//! region = "intersect [half_plane(0.3), disk(0.998)]"   # or { m0 = .., m1 = .. }
//! target = "filter"          # open_loop | filter | plant_block
//! epsilon = 0.03
//!
//! [objective]
//! rho = 0.0
//! epsilon = 1e-6
//! phi_bar = "init"           # or a model file
//!
//! [solver]
//! max_outer = 50
//!
//! [io]
//! data = "data.csv"
//! init = "auto"              # or a model file
//! out = "fit"
//! seed = 0
//! ```

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use lmisysid::ident::Target;
use lmisysid::model::PlantForm;
use lmisysid::{EigConstraintSpec, IndexSet, LadmSpec, LmiRegion, Matrix, ProblemSpec, SolveOptions, ThetaPoint};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::modelfile::{matrix_from_rows, read_model};
use crate::region_syntax::parse_region;
use crate::{CONFIG_DIR_ENV, DEFAULT_CONFIG};

pub const CONFIG_VERSION: u32 = 1;

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub model: ModelBlock,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<ConstraintBlock>,
    #[serde(default)]
    pub objective: ObjectiveBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub io: IoBlock,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantFormName {
    #[default]
    Full,
    Canonical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub n_s: usize,
    pub n_inputs: usize,
    pub n_outputs: usize,
    #[serde(default)]
    pub plant_form: PlantFormName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bd: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cd: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_fixed: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re_pattern: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionSpec {
    Text(String),
    Raw {
        m0: Rows,
        m1: Rows,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl RegionSpec {
    pub fn build(&self) -> CliResult<LmiRegion> {
        match self {
            RegionSpec::Text(t) => parse_region(t),
            RegionSpec::Raw { m0, m1, label } => Ok(LmiRegion::from_generators(
                matrix_from_rows(m0, "m0")?,
                matrix_from_rows(m1, "m1")?,
                label.clone().unwrap_or_else(|| "raw".into()),
            )?),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetName {
    OpenLoop,
    Filter,
    PlantBlock,
}

impl TargetName {
    pub fn target(self) -> Target<f64> {
        match self {
            TargetName::OpenLoop => Target::OpenLoop,
            TargetName::Filter => Target::Filter,
            TargetName::PlantBlock => Target::PlantBlock,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintBlock {
    pub region: RegionSpec,
    pub target: TargetName,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Rows>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveBlock {
    pub rho: f64,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_re: Option<f64>,
    /// `"init"` or a model file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_bar: Option<String>,
}

impl Default for ObjectiveBlock {
    fn default() -> Self {
        Self { rho: 0.0, epsilon: 1e-6, delta_re: None, phi_bar: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_eq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_in: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_stat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_outer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_inner: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_growth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_violation: Option<f64>,
    /// Extra perturbed starts; the seed is `io.seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multistart: Option<usize>,
}

impl SolverBlock {
    pub fn options(&self, verbose: bool) -> SolveOptions {
        let d = SolveOptions::default();
        SolveOptions {
            tol_eq: self.tol_eq.unwrap_or(d.tol_eq),
            tol_in: self.tol_in.unwrap_or(d.tol_in),
            tol_stat: self.tol_stat.unwrap_or(d.tol_stat),
            max_outer: self.max_outer.unwrap_or(d.max_outer),
            max_inner: self.max_inner.unwrap_or(d.max_inner),
            initial_penalty: self.initial_penalty.or(d.initial_penalty),
            penalty_growth: self.penalty_growth.unwrap_or(d.penalty_growth),
            max_penalty: self.max_penalty.unwrap_or(d.max_penalty),
            max_violation: self.max_violation.unwrap_or(d.max_violation),
            verbose,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    /// `"auto"` or a model file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Initial point of a fit.
#[derive(Clone, Debug, PartialEq)]
pub enum InitSource {
    Auto,
    Model(PathBuf),
}

/// Configuration together with the directory its relative paths refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::input(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::input(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn emit(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::input(e.to_string()))
    }

    pub fn ladm(&self) -> CliResult<LadmSpec> {
        let m = &self.model;
        let opt = |rows: &Option<Rows>, name: &str| rows.as_ref().map(|r| matrix_from_rows(r, name)).transpose();
        let cd = opt(&m.cd, "model.cd")?.unwrap_or_else(|| Matrix::identity(m.n_outputs, m.n_outputs));
        if cd.nrows() != m.n_outputs {
            return Err(CliError::input(format!("model.cd has {} rows, n_outputs is {}", cd.nrows(), m.n_outputs)));
        }
        let bd = opt(&m.bd, "model.bd")?.unwrap_or_else(|| Matrix::zeros(m.n_s, cd.ncols()));
        let form = match m.plant_form {
            PlantFormName::Full => PlantForm::Full,
            PlantFormName::Canonical => PlantForm::ObservabilityCanonical,
        };
        Ok(LadmSpec::new(m.n_s, m.n_inputs, bd, cd, form, opt(&m.c_fixed, "model.c_fixed")?)?)
    }

    /// Problem specification; `init` supplies the prior when `phi_bar = "init"`.
    pub fn problem_spec(&self, base_dir: &Path, init: Option<&ThetaPoint>) -> CliResult<ProblemSpec> {
        let ladm = self.ladm()?;
        let mut spec = ProblemSpec::new(ladm.clone())?;
        if let Some(p) = &self.model.re_pattern {
            spec.re_pattern = IndexSet::parse(p, self.model.n_outputs).map_err(|e| CliError::input(format!("model.re_pattern: {e}")))?;
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let ctx = |e: CliError| e.context(format!("constraints[{}]", i + 1));
            let region = c.region.build().map_err(ctx)?;
            let mut ec = EigConstraintSpec::new(region, c.target.target(), c.epsilon).map_err(|e| ctx(e.into()))?;
            if let Some(w) = &c.weight {
                ec = ec.with_weight(matrix_from_rows(w, "weight").map_err(ctx)?);
            }
            if let Some(s) = &c.shift {
                ec = ec.with_shift(matrix_from_rows(s, "shift").map_err(ctx)?);
            }
            spec = spec.with_constraint(ec);
        }
        let o = &self.objective;
        spec.rho = o.rho;
        spec.epsilon = o.epsilon;
        spec.delta_re = o.delta_re;
        spec.phi_bar = match o.phi_bar.as_deref() {
            None | Some("init") => init.cloned(),
            Some(path) => {
                let model = read_model(&base_dir.join(path))?;
                Some(ThetaPoint { beta: ladm.pack(&model)?, sigma: model.re.clone() })
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn init_source(&self, base_dir: &Path) -> InitSource {
        match self.io.init.as_deref() {
            None | Some("auto") => InitSource::Auto,
            Some(path) => InitSource::Model(base_dir.join(path)),
        }
    }
}

impl LoadedConfig {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let config = RunConfig::parse(&text).map_err(|e| e.context(path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    /// Path from the config, relative to its directory.
    pub fn path(&self, p: &Option<String>) -> Option<PathBuf> {
        p.as_ref().map(|s| self.base_dir.join(s))
    }
}

/// Locates the configuration file: `flag` as given, then relative to
/// `$LMISYSID_CONFIG_DIR`; without a flag, `lmisysid.toml` in that directory,
/// then in the working directory.
pub fn resolve_config_path(flag: Option<&Path>) -> CliResult<PathBuf> {
    let env_dir = env::var_os(CONFIG_DIR_ENV).map(PathBuf::from);
    let mut tried = Vec::new();
    let candidates: Vec<PathBuf> = match flag {
        Some(p) => {
            let mut v = vec![p.to_path_buf()];
            if p.is_relative() {
                if let Some(d) = &env_dir {
                    v.push(d.join(p));
                }
            }
            v
        }
        None => {
            let mut v = Vec::new();
            if let Some(d) = &env_dir {
                v.push(d.join(DEFAULT_CONFIG));
            }
            v.push(PathBuf::from(DEFAULT_CONFIG));
            v
        }
    };
    for c in candidates {
        if c.is_file() {
            return Ok(c);
        }
        tried.push(c.display().to_string());
    }
    Err(CliError::input(format!(
        "configuration not found (tried {}); pass --config or set {CONFIG_DIR_ENV}",
        tried.join(", ")
    )))
}
