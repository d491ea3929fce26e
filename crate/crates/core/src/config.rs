//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "d": [2, 4],
//!   "eps": [1e-1, 1e-2],
//!   "data": { "kind": "generators", "terms": [{ "factors": ["bubble"] }] }
//! }
//! ```
//!
//! Everything else has defaults. Every error carries the dotted path of the
//! offending field.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::growth::GrowthClass;
use crate::model::{dirichlet_laplacian_factor, SeparableOperator};
use crate::oracle::{ExactSolution, FactorFn};
use crate::spectral::SchemeParameters;
use crate::tensor::{GridFunction, NodalTensor, RankOneTerm, TensorSum};

pub const DEFAULT_DATA_NODES: usize = 2047;
pub const DEFAULT_MODES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub operator: OperatorSpec,
    pub data: DataSpec,
    pub eps: Vec<f64>,
    pub d: Vec<usize>,
    #[serde(default)]
    pub params: SchemeParameters,
    #[serde(default)]
    pub growth: GrowthClass,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    crate::suites::DEFAULT_SEED
}

/// Uniform Dirichlet Laplacian `-a ∂²` on `(0, L)^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Laplacian {
        #[serde(default = "one")]
        length: f64,
        #[serde(default = "one")]
        coefficient: f64,
        /// Eigenmodes per factor kept by the oracles.
        #[serde(default = "default_modes")]
        modes: usize,
    },
}

impl Default for OperatorSpec {
    fn default() -> Self {
        OperatorSpec::Laplacian {
            length: 1.0,
            coefficient: 1.0,
            modes: DEFAULT_MODES,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_modes() -> usize {
    DEFAULT_MODES
}

fn default_nodes() -> usize {
    DEFAULT_DATA_NODES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Rank-one terms built from named factor generators, sampled at `nodes`
    /// interior nodes. A single generator is used on every axis.
    Generators {
        terms: Vec<GeneratorTerm>,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
    /// Nodal values at the interior nodes of a uniform mesh.
    Inline { terms: Vec<InlineTerm> },
    /// A JSON file holding `{ "terms": [...] }` in the inline form.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorTerm {
    pub factors: Vec<String>,
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineTerm {
    pub factors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineFile {
    terms: Vec<InlineTerm>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

/// One-dimensional data factor.
///
/// `const:c`, `bubble` (`x(1-x)`), `sine:k` (`sin kπx/L`), `poly:c0,c1,…`
/// (`Σ cᵢ xⁱ`) and `gauss:m,s` (`exp(-(x-m)²/2s²)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Const(f64),
    Bubble,
    Sine(u32),
    Poly(Vec<f64>),
    Gauss { mean: f64, sd: f64 },
}

impl Generator {
    pub fn parse(spec: &str) -> std::result::Result<Self, String> {
        let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
        let numbers = || -> std::result::Result<Vec<f64>, String> {
            args.split(',')
                .map(|a| a.trim().parse::<f64>().map_err(|_| format!("`{a}` is not a number")))
                .collect()
        };
        let g = match name.trim() {
            "bubble" if args.is_empty() => Generator::Bubble,
            "const" => match numbers()?.as_slice() {
                [c] => Generator::Const(*c),
                _ => return Err("const takes one value".into()),
            },
            "sine" => {
                let k = args.trim().parse::<u32>().map_err(|_| "sine takes a positive integer")?;
                if k == 0 {
                    return Err("sine takes a positive integer".into());
                }
                Generator::Sine(k)
            }
            "poly" => Generator::Poly(numbers()?),
            "gauss" => match numbers()?.as_slice() {
                [m, s] if *s > 0.0 => Generator::Gauss { mean: *m, sd: *s },
                _ => return Err("gauss takes a mean and a positive width".into()),
            },
            _ => return Err(format!("unknown generator `{spec}`")),
        };
        let finite = match &g {
            Generator::Const(c) => c.is_finite(),
            Generator::Poly(c) => c.iter().all(|v| v.is_finite()),
            Generator::Gauss { mean, sd } => mean.is_finite() && sd.is_finite(),
            _ => true,
        };
        if !finite {
            return Err(format!("`{spec}` has a non-finite parameter"));
        }
        Ok(g)
    }

    pub fn function(&self, length: f64) -> FactorFn {
        match self.clone() {
            Generator::Const(c) => Arc::new(move |_| c),
            Generator::Bubble => Arc::new(|x| x * (1.0 - x)),
            Generator::Sine(k) => {
                Arc::new(move |x| (k as f64 * std::f64::consts::PI * x / length).sin())
            }
            Generator::Poly(c) => Arc::new(move |x| c.iter().rev().fold(0.0, |acc, a| acc * x + a)),
            Generator::Gauss { mean, sd } => {
                Arc::new(move |x| (-(x - mean).powi(2) / (2.0 * sd * sd)).exp())
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates. Relative data paths resolve against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.to_string();
            Error::config(field_of(&path, &message), message)
        })?;
        if let (DataSpec::File { path }, Some(base)) = (&mut cfg.data, base) {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(Error::config("eps", "list is empty"));
        }
        for (i, &e) in self.eps.iter().enumerate() {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::config(format!("eps[{i}]"), format!("{e} is outside (0, 1)")));
            }
        }
        if self.d.is_empty() {
            return Err(Error::config("d", "list is empty"));
        }
        for (i, &d) in self.d.iter().enumerate() {
            if d == 0 {
                return Err(Error::config(format!("d[{i}]"), "dimension must be at least 1"));
            }
        }
        let OperatorSpec::Laplacian { length, coefficient, modes } = &self.operator;
        if !(*length > 0.0 && length.is_finite()) {
            return Err(Error::config("operator.length", "must be positive"));
        }
        if !(*coefficient > 0.0 && coefficient.is_finite()) {
            return Err(Error::config("operator.coefficient", "must be positive"));
        }
        if *modes == 0 {
            return Err(Error::config("operator.modes", "must be at least 1"));
        }
        self.params.validate().map_err(|e| nest("params", e))?;
        self.growth.validate().map_err(|e| nest("growth", e))?;
        self.validate_data()
    }

    fn validate_data(&self) -> Result<()> {
        let max_d = self.d.iter().copied().max().unwrap_or(1);
        let axes = |field: String, n: usize| -> Result<()> {
            if n == 1 || self.d.iter().all(|&d| d == n) {
                Ok(())
            } else {
                Err(Error::config(
                    field,
                    format!("{n} factors fit neither one shared factor nor every d up to {max_d}"),
                ))
            }
        };
        match &self.data {
            DataSpec::Generators { terms, nodes } => {
                if terms.is_empty() {
                    return Err(Error::config("data.terms", "list is empty"));
                }
                if *nodes < 2 {
                    return Err(Error::config("data.nodes", "needs at least 2 nodes"));
                }
                for (i, t) in terms.iter().enumerate() {
                    axes(format!("data.terms[{i}].factors"), t.factors.len())?;
                    for (j, g) in t.factors.iter().enumerate() {
                        Generator::parse(g)
                            .map_err(|m| Error::config(format!("data.terms[{i}].factors[{j}]"), m))?;
                    }
                    if !t.scale.is_finite() {
                        return Err(Error::config(format!("data.terms[{i}].scale"), "must be finite"));
                    }
                }
                Ok(())
            }
            DataSpec::Inline { terms } => check_inline(terms, "data.terms", &axes),
            DataSpec::File { path } => {
                let terms = read_inline(path)?;
                check_inline(&terms, "data.path", &axes)
            }
        }
    }

    pub fn operator(&self, d: usize) -> Result<SeparableOperator> {
        let OperatorSpec::Laplacian { length, coefficient, modes } = &self.operator;
        let mut factor = dirichlet_laplacian_factor(*modes, *length)?;
        if *coefficient != 1.0 {
            factor = factor.scaled(*coefficient);
        }
        SeparableOperator::uniform(d, factor)
    }

    pub fn length(&self) -> f64 {
        let OperatorSpec::Laplacian { length, .. } = &self.operator;
        *length
    }

    /// Data factors per term as functions on `(0, L)`. Nodal data are read as
    /// their piecewise-linear interpolants.
    pub fn data_functions(&self, d: usize) -> Result<Vec<Vec<FactorFn>>> {
        let length = self.length();
        let spread = |fs: Vec<FactorFn>| -> Vec<FactorFn> {
            if fs.len() == 1 {
                vec![fs[0].clone(); d]
            } else {
                fs
            }
        };
        Ok(match &self.data {
            DataSpec::Generators { terms, .. } => terms
                .iter()
                .map(|t| {
                    let mut fs: Vec<FactorFn> = t
                        .factors
                        .iter()
                        .map(|g| Generator::parse(g).map(|g| g.function(length)))
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|m| Error::config("data.terms", m))?;
                    let scale = t.scale;
                    if scale != 1.0 {
                        let first = fs[0].clone();
                        fs[0] = Arc::new(move |x| scale * first(x));
                    }
                    Ok(spread(fs))
                })
                .collect::<Result<_>>()?,
            DataSpec::Inline { .. } | DataSpec::File { .. } => self
                .inline_grids(d)?
                .into_iter()
                .map(|t| {
                    t.into_iter()
                        .map(|g| Arc::new(move |x| g.eval(x)) as FactorFn)
                        .collect()
                })
                .collect(),
        })
    }

    fn inline_grids(&self, d: usize) -> Result<Vec<Vec<GridFunction>>> {
        let terms = match &self.data {
            DataSpec::Inline { terms } => terms.clone(),
            DataSpec::File { path } => read_inline(path)?,
            DataSpec::Generators { .. } => unreachable!("generators have no grids"),
        };
        let length = self.length();
        Ok(terms
            .into_iter()
            .map(|t| {
                let gs: Vec<GridFunction> = t
                    .factors
                    .into_iter()
                    .map(|values| {
                        let mut g = GridFunction::zeros(values.len(), length);
                        g.values = values;
                        g
                    })
                    .collect();
                if gs.len() == 1 {
                    vec![gs[0].clone(); d]
                } else {
                    gs
                }
            })
            .collect())
    }

    /// Nodal data tensor for dimension `d`.
    pub fn nodal_data(&self, d: usize) -> Result<NodalTensor> {
        let terms = match &self.data {
            DataSpec::Generators { nodes, .. } => {
                let length = self.length();
                self.data_functions(d)?
                    .into_iter()
                    .map(|fs| {
                        RankOneTerm::new(
                            fs.iter().map(|f| GridFunction::sample(*nodes, length, |x| f(x))).collect(),
                        )
                    })
                    .collect()
            }
            _ => self.inline_grids(d)?.into_iter().map(RankOneTerm::new).collect(),
        };
        TensorSum::new(d, terms)
    }

    /// Eigen-exact solution for the data, projected onto the operator modes.
    pub fn exact_solution(&self, op: &SeparableOperator) -> Result<ExactSolution> {
        let OperatorSpec::Laplacian { modes, .. } = &self.operator;
        ExactSolution::from_functions(op.factors.clone(), self.data_functions(op.d())?, *modes)
    }
}

fn check_inline(
    terms: &[InlineTerm],
    field: &str,
    axes: &impl Fn(String, usize) -> Result<()>,
) -> Result<()> {
    if terms.is_empty() {
        return Err(Error::config(field, "no terms"));
    }
    for (i, t) in terms.iter().enumerate() {
        let here = format!("{field}[{i}].factors");
        if t.factors.is_empty() {
            return Err(Error::config(here, "no factors"));
        }
        axes(here.clone(), t.factors.len())?;
        for (j, v) in t.factors.iter().enumerate() {
            if v.len() < 2 {
                return Err(Error::config(format!("{here}[{j}]"), "needs at least 2 nodal values"));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(format!("{here}[{j}]"), "non-finite value"));
            }
        }
    }
    Ok(())
}

fn read_inline(path: &Path) -> Result<Vec<InlineTerm>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("data.path", format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let file: InlineFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().to_string();
        Error::config(format!("data.path:{}", field_of(&path, &message)), message)
    })?;
    Ok(file.terms)
}

/// Field path of a deserialisation error; missing fields name the field itself.
fn field_of(path: &str, message: &str) -> String {
    let parent = if path == "." { "" } else { path };
    match message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next())
    {
        Some(name) if parent.is_empty() => name.to_string(),
        Some(name) => format!("{parent}.{name}"),
        None if parent.is_empty() => "<root>".to_string(),
        None => parent.to_string(),
    }
}

fn nest(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::config(format!("{prefix}.{field}"), message),
        other => Error::config(prefix, other.to_string()),
    }
}
