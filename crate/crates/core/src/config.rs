//! Run configuration: a TOML file with optional `SPS_<SECTION>_<KEY>`
//! environment overrides, parsed strictly (unknown keys are errors).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::casimir::{EosKind, EquationOfState};
use crate::error::{Error, Result};
use crate::evolution::{EvolutionOptions, PerturbKind};
use crate::grid::GridSpec;
use crate::steady_state::{Method, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { length: 8.0, n: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EosSection {
    pub kind: String,
    pub beta: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub eps: f64,
    pub s0: f64,
    pub q: f64,
    pub quad_tol: f64,
}

impl Default for EosSection {
    fn default() -> Self {
        Self {
            kind: "boltzmann".into(),
            beta: 1.0,
            c: 1.0,
            eps: 1.0,
            s0: 2.0,
            q: 1.0,
            quad_tol: crate::casimir::DEFAULT_QUAD_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    #[serde(rename = "Lambda")]
    pub total_charge: f64,
    /// Truncation; `min(N, 48)` when absent.
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(rename = "tol_V")]
    pub tol_v: f64,
    pub tol_lambda: f64,
    pub method: String,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            total_charge: 1.0,
            k: None,
            tol_v: 1e-8,
            tol_lambda: 1e-10,
            method: "scf".into(),
            max_iter: 500,
            damping: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionSection {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub sample_every: usize,
    pub midpoint_sweeps: usize,
    /// Zero-occupation eigenfields tracked beyond the steady modes.
    pub buffer: usize,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        Self { dt: 1e-3, t_final: 10.0, sample_every: 10, midpoint_sweeps: 2, buffer: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSection {
    pub kind: String,
    pub eps: f64,
    pub seed: u64,
}

impl Default for PerturbSection {
    fn default() -> Self {
        Self { kind: "none".into(), eps: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub tol: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self { tol: crate::stability::DEFAULT_AUDIT_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub eos: EosSection,
    pub solver: SolverSection,
    pub evolution: EvolutionSection,
    pub perturb: PerturbSection,
    pub stability: StabilitySection,
    pub output: OutputSection,
}

const ENV_PREFIX: &str = "SPS_";

fn known_keys() -> BTreeMap<String, Vec<String>> {
    let defaults = toml::Value::try_from(RunConfig::default()).expect("default config serializes");
    let mut keys = BTreeMap::new();
    if let toml::Value::Table(sections) = defaults {
        for (name, body) in sections {
            let mut fields: Vec<String> = match body {
                toml::Value::Table(t) => t.keys().cloned().collect(),
                _ => Vec::new(),
            };
            if name == "solver" {
                fields.push("K".into());
            }
            keys.insert(name, fields);
        }
    }
    keys
}

fn env_value(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(x) = raw.parse::<f64>() {
        return toml::Value::Float(x);
    }
    match raw {
        "true" => toml::Value::Boolean(true),
        "false" => toml::Value::Boolean(false),
        _ => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Parses TOML text, applies the `SPS_*` pairs in `env`, then validates.
    pub fn from_toml_with_env<I, K, V>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        let table = value.as_table_mut().ok_or_else(|| Error::Config("config root must be a table".into()))?;
        let known = known_keys();
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| {
                let k = k.as_ref();
                let tail = k.get(..ENV_PREFIX.len()).filter(|p| p.eq_ignore_ascii_case(ENV_PREFIX)).map(|_| &k[ENV_PREFIX.len()..])?;
                Some((tail.to_string(), v.as_ref().to_string()))
            })
            .collect();
        overrides.sort();
        for (name, raw) in overrides {
            let (section, key) = name
                .split_once('_')
                .ok_or_else(|| Error::Config(format!("environment override {ENV_PREFIX}{name} lacks a key")))?;
            let (section, fields) = known
                .iter()
                .find(|(s, _)| s.eq_ignore_ascii_case(section))
                .ok_or_else(|| Error::Config(format!("unknown config section in {ENV_PREFIX}{name}")))?;
            let key = fields
                .iter()
                .find(|f| f.eq_ignore_ascii_case(key))
                .ok_or_else(|| Error::Config(format!("unknown config key in {ENV_PREFIX}{name}")))?;
            let body = table
                .entry(section.clone())
                .or_insert_with(|| toml::Value::Table(Default::default()));
            let body = body
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("config entry '{section}' must be a table")))?;
            body.insert(key.clone(), env_value(&raw));
        }
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_spec()?;
        self.eos()?;
        self.method()?;
        self.perturb_kind()?;
        let s = &self.solver;
        if !(s.total_charge.is_finite() && s.total_charge > 0.0) {
            return Err(Error::Domain(format!("solver.Lambda must be positive, got {}", s.total_charge)));
        }
        if let Some(k) = s.k {
            if k == 0 || k > self.grid.n {
                return Err(Error::Domain(format!("solver.K must lie in 1..={}, got {k}", self.grid.n)));
            }
        }
        if !(s.tol_v > 0.0 && s.tol_lambda > 0.0) {
            return Err(Error::Domain("solver tolerances must be positive".into()));
        }
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return Err(Error::Domain(format!("solver.damping must lie in (0, 1], got {}", s.damping)));
        }
        if s.max_iter == 0 {
            return Err(Error::Domain("solver.max_iter must be positive".into()));
        }
        let e = &self.evolution;
        if !(e.dt.is_finite() && e.dt > 0.0) {
            return Err(Error::Domain(format!("evolution.dt must be positive, got {}", e.dt)));
        }
        if !(e.t_final.is_finite() && e.t_final >= 0.0) {
            return Err(Error::Domain(format!("evolution.T must be nonnegative, got {}", e.t_final)));
        }
        if e.sample_every == 0 {
            return Err(Error::Domain("evolution.sample_every must be positive".into()));
        }
        if !(self.perturb.eps.is_finite() && self.perturb.eps >= 0.0) {
            return Err(Error::Domain(format!("perturb.eps must be nonnegative, got {}", self.perturb.eps)));
        }
        if !(self.stability.tol.is_finite() && self.stability.tol >= 0.0) {
            return Err(Error::Domain("stability.tol must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.length, self.grid.n)
    }

    pub fn eos(&self) -> Result<EquationOfState> {
        let e = &self.eos;
        let kind = match e.kind.as_str() {
            "boltzmann" => EosKind::Boltzmann { beta: e.beta },
            "fermi-dirac" => EosKind::FermiDirac { c: e.c, eps: e.eps },
            "power-cutoff" => EosKind::PowerCutoff { s0: e.s0, q: e.q },
            other => {
                return Err(Error::Config(format!(
                    "unknown eos.kind '{other}' (boltzmann | fermi-dirac | power-cutoff)"
                )))
            }
        };
        EquationOfState::new(kind, e.quad_tol)
    }

    pub fn method(&self) -> Result<Method> {
        self.solver.method.parse()
    }

    pub fn perturb_kind(&self) -> Result<PerturbKind> {
        self.perturb.kind.parse()
    }

    pub fn solver_options(&self) -> Result<SolverOptions> {
        let grid = self.grid_spec()?;
        let mut o = SolverOptions::for_grid(&grid);
        if let Some(k) = self.solver.k {
            o.k = k;
        }
        o.tol_v = self.solver.tol_v;
        o.tol_lambda = self.solver.tol_lambda;
        o.max_iter = self.solver.max_iter;
        o.damping = self.solver.damping;
        o.method = self.method()?;
        Ok(o)
    }

    pub fn evolution_options(&self) -> EvolutionOptions {
        EvolutionOptions {
            dt: self.evolution.dt,
            t_final: self.evolution.t_final,
            sample_every: self.evolution.sample_every,
            midpoint_sweeps: self.evolution.midpoint_sweeps,
        }
    }

    /// SHA-256 of the resolved configuration as canonical JSON.
    /// Digest of everything that affects results. The output directory is
    /// left out so relocated runs stay byte-identical.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = Default::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
