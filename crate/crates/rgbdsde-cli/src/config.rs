//! Experiment configuration: JSON schema, validation, catalog resolution and
//! the canonical digest.
//!
//! Unknown keys are rejected everywhere. Defaults are filled during parsing
//! and echoed back into the manifest, and the digest is taken over the
//! canonical serialization of the resolved document, so key order in the
//! input file cannot change it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use rgbdsde::coeffs::catalog;
use rgbdsde::{
    CoefficientSet, DiffusionSpec, Domain, Error, FieldProbe, Obstacle, Result, SolverConfig,
    TimeGrid,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// "abstract" (no forward state) or "field" (reflected diffusion).
    pub problem: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub coefficients: Option<FamilyConfig>,
    #[serde(default)]
    pub obstacle: Option<FamilyConfig>,
    #[serde(default)]
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub diffusion: Option<DiffusionConfig>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub probes: Vec<ProbeConfig>,
    #[serde(default)]
    pub oracle: Option<OracleSection>,
    #[serde(default)]
    pub properties: Option<PropertiesSection>,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub family: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl FamilyConfig {
    fn named(family: &str) -> Self {
        Self {
            family: family.into(),
            params: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub kind: String,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    /// "constant" (b = value) or "linear" (b = value * x).
    pub drift_family: String,
    #[serde(default)]
    pub drift_value: f64,
    pub sigma: f64,
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub lipschitz: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub horizon: f64,
    pub steps: usize,
    pub m_inner: usize,
    pub m_outer: usize,
    pub basis_degree: usize,
    pub penalty_n: Option<u32>,
    pub use_picard: bool,
    pub picard_max: usize,
    pub picard_tol: f64,
    pub validation_budget: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 64,
            m_inner: 4096,
            m_outer: 1,
            basis_degree: 2,
            penalty_n: None,
            use_picard: false,
            picard_max: 20,
            picard_tol: 1e-8,
            validation_budget: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub space_steps: usize,
    pub time_steps: usize,
    pub compare: bool,
    /// Pass bound on the maximum error relative to the oracle range.
    pub tolerance: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            space_steps: 200,
            time_steps: 256,
            compare: true,
            tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropertiesSection {
    /// Any of "comparison", "monotonicity", "convergence", "energy".
    pub checks: Vec<String>,
    pub penalty_levels: Vec<u32>,
    pub mu: f64,
    pub comparison_shift: f64,
    pub slope_threshold: f64,
}

impl Default for PropertiesSection {
    fn default() -> Self {
        Self {
            checks: vec![
                "comparison".into(),
                "monotonicity".into(),
                "convergence".into(),
                "energy".into(),
            ],
            penalty_levels: vec![1, 10, 100],
            mu: 1.0,
            comparison_shift: 0.1,
            slope_threshold: -0.8,
        }
    }
}

/// A fully resolved experiment: closures bound, defaults applied.
pub struct Experiment {
    pub field_problem: bool,
    pub seed: u64,
    pub coefficients: CoefficientSet,
    pub obstacle: Obstacle,
    pub diffusion: Option<DiffusionSpec>,
    pub domain: Option<Domain>,
    pub solver: SolverConfig,
    pub use_picard: bool,
    pub penalty_n: Option<u32>,
    pub probes: Vec<FieldProbe>,
    pub oracle: OracleSection,
    pub properties: PropertiesSection,
    pub output: String,
    /// The input with every default filled, for echoing and digesting.
    pub echo: ConfigFile,
    pub digest: String,
}

fn params<T: serde::de::DeserializeOwned>(family: &FamilyConfig) -> Result<T> {
    let value = if family.params.is_null() {
        serde_json::Value::Object(serde_json::Map::new())
    } else {
        family.params.clone()
    };
    serde_json::from_value(value).map_err(|e| {
        Error::Config(format!(
            "bad parameters for family '{}': {e}",
            family.family
        ))
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ZeroParams {
    terminal: f64,
}

impl Default for ZeroParams {
    fn default() -> Self {
        Self { terminal: 0.0 }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LinearFamilyParams {
    f_const: f64,
    f_y: f64,
    f_z: f64,
    phi_y: f64,
    g_const: f64,
    g_y: f64,
    terminal: f64,
}

impl Default for LinearFamilyParams {
    fn default() -> Self {
        Self {
            f_const: 0.0,
            f_y: 0.0,
            f_z: 0.0,
            phi_y: -1.0,
            g_const: 0.0,
            g_y: 0.0,
            terminal: 0.0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SaturatingParams {
    f_scale: f64,
    g_scale: f64,
    terminal: f64,
}

impl Default for SaturatingParams {
    fn default() -> Self {
        Self {
            f_scale: 0.5,
            g_scale: 0.2,
            terminal: 1.0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ContractionParams {
    g_slope: f64,
}

impl Default for ContractionParams {
    fn default() -> Self {
        Self { g_slope: 0.3 }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ShiftParams {
    offset: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelParams {
    level: f64,
}

/// Coefficient families, possibly bundling obstacle / diffusion / domain.
struct ResolvedFamily {
    coefficients: CoefficientSet,
    obstacle: Option<Obstacle>,
    diffusion: Option<DiffusionSpec>,
    domain: Option<Domain>,
}

fn resolve_coefficients(family: &FamilyConfig) -> Result<ResolvedFamily> {
    let plain = |coefficients| ResolvedFamily {
        coefficients,
        obstacle: None,
        diffusion: None,
        domain: None,
    };
    Ok(match family.family.as_str() {
        "zero" => {
            let p: ZeroParams = params(family)?;
            plain(catalog::zero_coefficients(p.terminal))
        }
        "linear" => {
            let p: LinearFamilyParams = params(family)?;
            plain(catalog::linear_coefficients(catalog::LinearParams {
                f_const: p.f_const,
                f_y: p.f_y,
                f_z: p.f_z,
                phi_y: p.phi_y,
                g_const: p.g_const,
                g_y: p.g_y,
                terminal: p.terminal,
            }))
        }
        "saturating" => {
            let p: SaturatingParams = params(family)?;
            plain(catalog::saturating_coefficients(
                p.f_scale, p.g_scale, p.terminal,
            ))
        }
        "contraction" => {
            let p: ContractionParams = params(family)?;
            plain(catalog::contraction_coefficients(p.g_slope))
        }
        "reflected_heat" => {
            let (coefficients, obstacle, diffusion, domain) = catalog::reflected_heat_problem();
            ResolvedFamily {
                coefficients,
                obstacle: Some(obstacle),
                diffusion: Some(diffusion),
                domain: Some(domain),
            }
        }
        "standard_stochastic" => {
            let (coefficients, obstacle, diffusion, domain) =
                catalog::standard_stochastic_problem();
            ResolvedFamily {
                coefficients,
                obstacle: Some(obstacle),
                diffusion: Some(diffusion),
                domain: Some(domain),
            }
        }
        "pinned_boundary" => {
            let (coefficients, diffusion, domain) = catalog::pinned_boundary_problem();
            ResolvedFamily {
                coefficients,
                obstacle: None,
                diffusion: Some(diffusion),
                domain: Some(domain),
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown coefficient family '{other}'"
            )))
        }
    })
}

fn resolve_obstacle(family: &FamilyConfig) -> Result<Obstacle> {
    Ok(match family.family.as_str() {
        "none" => Obstacle::None,
        "ramp" => catalog::ramp_obstacle(),
        "shifted_ramp" => {
            let p: ShiftParams = params(family)?;
            catalog::shifted_ramp_obstacle(p.offset)
        }
        "constant" => {
            let p: LevelParams = params(family)?;
            catalog::constant_obstacle(p.level)
        }
        other => return Err(Error::Config(format!("unknown obstacle family '{other}'"))),
    })
}

fn resolve_domain(config: &DomainConfig) -> Result<Domain> {
    match config.kind.as_str() {
        "interval" => Domain::interval(
            config
                .lo
                .ok_or_else(|| Error::Config("interval domain needs 'lo'".into()))?,
            config
                .hi
                .ok_or_else(|| Error::Config("interval domain needs 'hi'".into()))?,
        ),
        "ball" => Domain::ball(
            config
                .center
                .clone()
                .ok_or_else(|| Error::Config("ball domain needs 'center'".into()))?,
            config
                .radius
                .ok_or_else(|| Error::Config("ball domain needs 'radius'".into()))?,
        ),
        other => Err(Error::Config(format!("unknown domain kind '{other}'"))),
    }
}

fn resolve_diffusion(config: &DiffusionConfig, domain: &Domain) -> Result<DiffusionSpec> {
    use std::sync::Arc;
    let dim = domain.dim();
    let value = config.drift_value;
    let drift: rgbdsde::reflected::DriftFn = match config.drift_family.as_str() {
        "constant" => Arc::new(move |x: &[f64]| vec![value; x.len()]),
        "linear" => Arc::new(move |x: &[f64]| x.iter().map(|v| value * v).collect()),
        other => return Err(Error::Config(format!("unknown drift family '{other}'"))),
    };
    let sigma = config.sigma;
    let diffusion: rgbdsde::reflected::DiffusionFn = Arc::new(move |x: &[f64]| {
        let d = x.len();
        let mut m = vec![0.0; d * d];
        for r in 0..d {
            m[r * d + r] = sigma;
        }
        m
    });
    let start = match &config.start {
        Some(s) => {
            if s.len() != dim {
                return Err(Error::Config(format!(
                    "diffusion start has dimension {}, domain has {dim}",
                    s.len()
                )));
            }
            s.clone()
        }
        None => {
            let (lo, hi) = domain.bounding_box();
            lo.iter()
                .zip(hi.iter())
                .map(|(a, b)| 0.5 * (a + b))
                .collect()
        }
    };
    Ok(DiffusionSpec {
        drift,
        diffusion,
        start,
        lipschitz: config.lipschitz.max(value.abs()),
    })
}

/// Parses and resolves a configuration document.
pub fn load_config(raw: &str, seed_override: Option<u64>) -> Result<Experiment> {
    let parsed: ConfigFile =
        serde_json::from_str(raw).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
    resolve_config(parsed, seed_override)
}

/// Reads, parses and resolves a configuration file.
pub fn load_config_file(path: &Path, seed_override: Option<u64>) -> Result<Experiment> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    load_config(&raw, seed_override)
}

fn resolve_config(mut parsed: ConfigFile, seed_override: Option<u64>) -> Result<Experiment> {
    let field_problem = match parsed.problem.as_str() {
        "field" => true,
        "abstract" => false,
        other => {
            return Err(Error::Config(format!(
                "problem must be 'abstract' or 'field', got '{other}'"
            )))
        }
    };

    // Seed priority: command line, then environment, then the document.
    let seed = match seed_override {
        Some(s) => s,
        None => match std::env::var(rgbdsde::grid::SEED_ENV_VAR)
            .ok()
            .and_then(|v| v.parse::<u64>().ok())
        {
            Some(s) => s,
            None => parsed
                .seed
                .ok_or_else(|| Error::Config("missing seed (set 'seed' or RGBDSDE_SEED)".into()))?,
        },
    };
    parsed.seed = Some(seed);

    let coeff_family = parsed
        .coefficients
        .clone()
        .unwrap_or_else(|| FamilyConfig::named("zero"));
    let resolved = resolve_coefficients(&coeff_family)?;

    let obstacle = match &parsed.obstacle {
        Some(family) => resolve_obstacle(family)?,
        None => resolved.obstacle.unwrap_or(Obstacle::None),
    };

    let domain = match &parsed.domain {
        Some(d) => Some(resolve_domain(d)?),
        None => resolved.domain,
    };
    let diffusion = match (&parsed.diffusion, domain.as_ref()) {
        (Some(d), Some(dom)) => Some(resolve_diffusion(d, dom)?),
        (Some(_), None) => return Err(Error::Config("diffusion given without a domain".into())),
        (None, _) => resolved.diffusion,
    };

    if field_problem && (domain.is_none() || diffusion.is_none()) {
        return Err(Error::Config(
            "field problems need a domain and a diffusion (or a bundled family)".into(),
        ));
    }

    let grid = TimeGrid::new(parsed.solver.horizon, parsed.solver.steps)?;
    let mut solver = SolverConfig::new(grid, seed);
    solver.m_inner = parsed.solver.m_inner;
    solver.m_outer = parsed.solver.m_outer;
    solver.basis_degree = parsed.solver.basis_degree;
    solver.penalty_n = parsed.solver.penalty_n;
    solver.picard_max = parsed.solver.picard_max;
    solver.picard_tol = parsed.solver.picard_tol;
    solver.validation_budget = parsed.solver.validation_budget;

    let probes: Vec<FieldProbe> = parsed
        .probes
        .iter()
        .map(|p| FieldProbe {
            t: p.t,
            x: p.x.clone(),
        })
        .collect();

    let oracle = parsed.oracle.clone().unwrap_or_default();
    let properties = parsed.properties.clone().unwrap_or_default();
    let output = parsed.output.clone().unwrap_or_else(|| "out".into());

    // Echo the document with every default made explicit.
    parsed.coefficients = Some(coeff_family);
    if parsed.obstacle.is_none() {
        parsed.obstacle = Some(FamilyConfig::named(if obstacle.enabled() {
            "bundled"
        } else {
            "none"
        }));
    }
    parsed.oracle = Some(oracle.clone());
    parsed.properties = Some(properties.clone());
    parsed.output = Some(output.clone());

    let digest = digest_config(&parsed)?;
    Ok(Experiment {
        field_problem,
        seed,
        coefficients: resolved.coefficients,
        obstacle,
        diffusion,
        domain,
        solver,
        use_picard: parsed.solver.use_picard,
        penalty_n: parsed.solver.penalty_n,
        probes,
        oracle,
        properties,
        output,
        echo: parsed,
        digest,
    })
}

/// Hex digest of the canonical serialization (sorted keys) of the document.
pub fn digest_config(config: &ConfigFile) -> Result<String> {
    let value = serde_json::to_value(config)
        .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
    let canonical = serde_json::to_string(&value)
        .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
    let hash = Sha256::digest(canonical.as_bytes());
    Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
}
