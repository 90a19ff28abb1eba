//! Run configuration: a single TOML document, optionally layered over a
//! named preset.
//!
//! ```toml
//! preset = "spinodal"
//! experiment = "equilibrium"
//! seed = 7
//!
//! [params]
//! K = 1.0
//! L = "infinity"
//! m = [0.0, 0.8]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::EquilibriumSpec;
use crate::fem::{assemble, BulkSurfaceField};
use crate::forms::LinearBackend;
use crate::mesh::{build_disk_mesh, BulkSurfaceMesh, MAX_LEVEL};
use crate::model::Model;
use crate::params::{Coupling, DomainGeometry, MassTarget, SystemParams};
use crate::potential::{ModelPotential, SplitPotential, YosidaPotential};
use crate::stationary::NewtonConfig;
use crate::stepper::{SchemeConfig, SimState};
use crate::velocity::{Envelope, StreamProfile, SurfaceProfile, VelocityPair};

pub const PRESETS: [&str; 4] = ["default", "spinodal", "pullback", "rotating"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Stationary,
    Pullback,
    Equilibrium,
    Certify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySpec {
    pub radius: f64,
    pub level: u32,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self { radius: 1.0, level: 4 }
    }
}

/// A mass given as one mean (`L < ∞`) or a bulk/surface pair (`L = ∞`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MassSpec {
    Coupled(f64),
    Split([f64; 2]),
}

impl From<MassSpec> for MassTarget {
    fn from(m: MassSpec) -> Self {
        match m {
            MassSpec::Coupled(v) => MassTarget::Coupled(v),
            MassSpec::Split([a, b]) => MassTarget::Split(a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSpec {
    #[serde(rename = "K")]
    pub k: Coupling,
    #[serde(rename = "L")]
    pub l: Coupling,
    pub alpha: f64,
    pub beta: f64,
    pub m: MassSpec,
}

impl Default for ParamsSpec {
    fn default() -> Self {
        Self { k: Coupling::Finite(1.0), l: Coupling::Finite(1.0), alpha: 1.0, beta: 1.0, m: MassSpec::Coupled(0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// Flory–Huggins with parameters `theta`, `theta_c`.
    Log,
    /// `theta s²/2 - theta_c s²/2`, without a singular part.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialMode {
    DirectLog,
    Yosida,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub theta: f64,
    pub theta_c: f64,
    pub mode: PotentialMode,
    /// Regularization level in `yosida` mode.
    pub lambda: f64,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self { kind: PotentialKind::Log, theta: 1.0, theta_c: 2.0, mode: PotentialMode::DirectLog, lambda: 1e-2 }
    }
}

impl PotentialSpec {
    pub fn build(&self) -> Result<ModelPotential> {
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(Error::InvalidParameter { name: "potential.theta", reason: format!("must be positive, got {}", self.theta) });
        }
        if !(self.theta_c >= 0.0) || !self.theta_c.is_finite() {
            return Err(Error::InvalidParameter { name: "potential.theta_c", reason: format!("must be non-negative, got {}", self.theta_c) });
        }
        let base = match self.kind {
            PotentialKind::Log => SplitPotential::log(self.theta, self.theta_c),
            PotentialKind::Quadratic => SplitPotential::quadratic(self.theta, -self.theta_c),
        };
        Ok(match self.mode {
            PotentialMode::DirectLog => ModelPotential::Direct(base),
            PotentialMode::Yosida => ModelPotential::Yosida(YosidaPotential::new(base, self.lambda)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamKind {
    None,
    Rotation,
    Cellular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    Rotation,
    BulkTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeKind {
    Zero,
    Constant,
    /// `min(1, e^{-2a(t - t_dec)})`.
    Decaying,
    /// `e^{-2a(t - t_dec)}`.
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocitySpec {
    pub stream: StreamKind,
    pub amplitude: f64,
    /// Ignored when `K = 0`, where the surface field is the bulk trace.
    pub surface: SurfaceKind,
    pub surface_amplitude: f64,
    pub envelope: EnvelopeKind,
    pub a: f64,
    pub t_dec: f64,
}

impl Default for VelocitySpec {
    fn default() -> Self {
        Self {
            stream: StreamKind::None,
            amplitude: 0.0,
            surface: SurfaceKind::Rotation,
            surface_amplitude: 0.0,
            envelope: EnvelopeKind::Zero,
            a: 1.0,
            t_dec: 0.0,
        }
    }
}

impl VelocitySpec {
    pub fn envelope(&self) -> Envelope {
        match self.envelope {
            EnvelopeKind::Zero => Envelope::Zero,
            EnvelopeKind::Constant => Envelope::Constant,
            EnvelopeKind::Decaying => Envelope::WindowExponential { rate: 2.0 * self.a, onset: self.t_dec },
            EnvelopeKind::Exponential => Envelope::Exponential { rate: 2.0 * self.a, onset: self.t_dec },
        }
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [("velocity.amplitude", self.amplitude), ("velocity.surface_amplitude", self.surface_amplitude), ("velocity.t_dec", self.t_dec)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter { name, reason: format!("{v} is not finite") });
            }
        }
        if matches!(self.envelope, EnvelopeKind::Decaying | EnvelopeKind::Exponential) && !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::Admissibility { rule: "D5", reason: format!("a decaying envelope needs a > 0, got a = {}", self.a) });
        }
        Ok(())
    }

    /// Whether the envelope satisfies the integrability condition with
    /// exponent `a` (strictly faster decay, or no velocity at all).
    pub fn satisfies_d5(&self) -> bool {
        match self.envelope {
            EnvelopeKind::Zero => true,
            EnvelopeKind::Constant => self.amplitude == 0.0 && self.surface_amplitude == 0.0,
            EnvelopeKind::Decaying | EnvelopeKind::Exponential => self.a > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    /// Mass-projected noise, clamped to `|value| ≤ bound`.
    Random,
    /// The constant admissible state with the configured mass.
    Constant,
    /// A state written by a previous run.
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    pub kind: InitialKind,
    pub amplitude: f64,
    pub bound: f64,
    pub path: Option<String>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self { kind: InitialKind::Random, amplitude: 0.2, bound: 0.9, path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub tau: f64,
    pub t_end: f64,
    pub record_every: usize,
    /// Write a checkpoint every this many recorded samples; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self { tau: 0.0, t_end: 1.0, record_every: 10, checkpoint_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PullbackSpec {
    pub t_fixed: f64,
    pub offsets: Vec<f64>,
    pub members: usize,
    /// Noise amplitudes of the members are spread evenly up to this value.
    pub max_amplitude: f64,
}

impl Default for PullbackSpec {
    fn default() -> Self {
        Self { t_fixed: 40.0, offsets: vec![4.0, 8.0, 16.0, 32.0], members: 5, max_amplitude: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumSettings {
    /// The exponent fit starts at this fraction of the horizon.
    pub fit_start: f64,
    pub newton: NewtonConfig,
}

impl Default for EquilibriumSettings {
    fn default() -> Self {
        Self { fit_start: 0.3, newton: NewtonConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Name of the preset the document was layered over.
    pub preset: Option<String>,
    pub experiment: Experiment,
    pub seed: u64,
    pub geometry: GeometrySpec,
    pub params: ParamsSpec,
    pub potential: PotentialSpec,
    pub velocity: VelocitySpec,
    pub scheme: SchemeConfig,
    pub backend: LinearBackend,
    pub initial: InitialSpec,
    pub run: RunSpec,
    pub pullback: PullbackSpec,
    pub equilibrium: EquilibriumSettings,
    pub stationary: NewtonConfig,
    pub output: OutputSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            experiment: Experiment::Simulate,
            seed: 0,
            geometry: GeometrySpec::default(),
            params: ParamsSpec::default(),
            potential: PotentialSpec::default(),
            velocity: VelocitySpec::default(),
            scheme: SchemeConfig::default(),
            backend: LinearBackend::Direct,
            initial: InitialSpec::default(),
            run: RunSpec::default(),
            pullback: PullbackSpec::default(),
            equilibrium: EquilibriumSettings::default(),
            stationary: NewtonConfig::default(),
            output: OutputSpec::default(),
        }
    }
}

/// One schema or admissibility problem, located by its key path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigIssue {
    pub path: String,
    pub rule: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: ", if e.path.is_empty() { "<root>" } else { &e.path })?;
            if let Some(r) = &e.rule {
                write!(f, "[{r}] ")?;
            }
            f.write_str(&e.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn issue(path: &str, err: Error) -> ConfigIssue {
    let rule = match &err {
        Error::Admissibility { rule, .. } => Some(rule.to_string()),
        _ => None,
    };
    ConfigIssue { path: path.into(), rule, message: err.to_string() }
}

/// Named starting points for the experiments.
pub fn preset(name: &str) -> Option<RunConfig> {
    let mut c = RunConfig { preset: Some(name.into()), ..RunConfig::default() };
    match name {
        "default" => {}
        // Deep quench of a critical bulk mixture whose boundary is wetted by
        // the + phase. The surface mass is fixed separately (L = ∞), which
        // pins the pattern against the boundary; see the README.
        "spinodal" => {
            c.experiment = Experiment::Equilibrium;
            c.seed = 1;
            c.geometry = GeometrySpec { radius: 3.0, level: 3 };
            c.params = ParamsSpec { k: Coupling::Finite(1.0), l: Coupling::Infinite, alpha: 1.0, beta: 1.0, m: MassSpec::Split([0.0, 0.8]) };
            c.velocity = VelocitySpec {
                stream: StreamKind::Cellular,
                amplitude: 0.5,
                surface: SurfaceKind::Rotation,
                surface_amplitude: 0.5,
                envelope: EnvelopeKind::Decaying,
                a: 1.0,
                t_dec: 1.0,
            };
            c.scheme.dt = 0.05;
            c.run = RunSpec { tau: 0.0, t_end: 300.0, record_every: 10, checkpoint_every: 0 };
        }
        // Small disk: the constant state is linearly stable, but the wetted
        // boundary and the stirring keep the attractor non-trivial.
        "pullback" => {
            c.experiment = Experiment::Pullback;
            c.seed = 2;
            c.geometry = GeometrySpec { radius: 0.95, level: 3 };
            c.params = ParamsSpec { k: Coupling::Finite(1.0), l: Coupling::Infinite, alpha: 1.0, beta: 1.0, m: MassSpec::Split([0.0, 0.5]) };
            c.velocity = VelocitySpec {
                stream: StreamKind::Cellular,
                amplitude: 2.0,
                surface: SurfaceKind::Rotation,
                surface_amplitude: 0.5,
                envelope: EnvelopeKind::Constant,
                a: 1.0,
                t_dec: 0.0,
            };
            c.scheme.dt = 0.02;
            c.pullback = PullbackSpec { t_fixed: 40.0, offsets: vec![4.0, 8.0, 16.0, 32.0], members: 5, max_amplitude: 0.9 };
        }
        "rotating" => {
            c.velocity = VelocitySpec {
                stream: StreamKind::Rotation,
                amplitude: 1.0,
                surface: SurfaceKind::Rotation,
                surface_amplitude: 1.0,
                envelope: EnvelopeKind::Constant,
                a: 1.0,
                t_dec: 0.0,
            };
            c.run.t_end = 1.0;
        }
        _ => return None,
    }
    Some(c)
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Parses a TOML document, layering it over `preset` (from the argument or
/// the document's own `preset` key), and validates the result.
pub fn parse_config(text: &str, preset_name: Option<&str>) -> std::result::Result<RunConfig, ConfigErrors> {
    let one = |path: &str, message: String| ConfigErrors(vec![ConfigIssue { path: path.into(), rule: None, message }]);
    let doc: toml::Table = toml::from_str(text).map_err(|e| one("", e.message().to_string()))?;
    let name = match (preset_name, doc.get("preset")) {
        (Some(n), _) => Some(n.to_string()),
        (None, Some(toml::Value::String(n))) => Some(n.clone()),
        (None, Some(_)) => return Err(one("preset", "must be a string".into())),
        (None, None) => None,
    };
    let mut value = match &name {
        Some(n) => {
            let p = preset(n).ok_or_else(|| one("preset", format!("unknown preset {n:?}; known: {}", PRESETS.join(", "))))?;
            toml::Value::try_from(p).map_err(|e| one("preset", e.to_string()))?
        }
        None => toml::Value::Table(toml::Table::new()),
    };
    merge(&mut value, toml::Value::Table(doc));
    let text = toml::to_string(&value).map_err(|e| one("", e.to_string()))?;
    let de = toml::de::Deserializer::parse(&text).map_err(|e| one("", e.message().to_string()))?;
    let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| one(&e.path().to_string(), e.inner().message().to_string()))?;
    if let Some(n) = name {
        cfg.preset = Some(n);
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Every check that does not need the mesh.
    pub fn validate(&self) -> std::result::Result<(), ConfigErrors> {
        let mut out = Vec::new();
        let g = &self.geometry;
        if !(g.radius > 0.0) || !g.radius.is_finite() {
            out.push(issue("geometry.radius", Error::InvalidParameter { name: "radius", reason: format!("must be positive, got {}", g.radius) }));
        }
        if g.level > MAX_LEVEL {
            out.push(issue("geometry.level", Error::Resource { level: g.level, max: MAX_LEVEL }));
        }
        if g.radius > 0.0 && g.radius.is_finite() {
            let pi = std::f64::consts::PI;
            let geom = DomainGeometry { bulk_measure: pi * g.radius * g.radius, surface_measure: 2.0 * pi * g.radius };
            if let Err(e) = self.system_params(&geom) {
                out.push(issue("params", e));
            }
        }
        if let Err(e) = self.potential.build() {
            out.push(issue("potential", e));
        }
        if let Err(e) = self.velocity.check() {
            out.push(issue("velocity", e));
        }
        if let Err(e) = self.scheme.validate() {
            out.push(issue("scheme", e));
        }
        let i = &self.initial;
        if !(i.amplitude >= 0.0) || !(i.bound > 0.0 && i.bound < 1.0) {
            out.push(issue("initial", Error::InvalidParameter { name: "initial", reason: "need amplitude ≥ 0 and bound in (0, 1)".into() }));
        }
        if i.kind == InitialKind::Checkpoint && i.path.is_none() {
            out.push(issue("initial.path", Error::InvalidParameter { name: "path", reason: "a checkpoint start needs a path".into() }));
        }
        let r = &self.run;
        if !(r.t_end >= r.tau) || !r.t_end.is_finite() || !r.tau.is_finite() || r.record_every == 0 {
            out.push(issue("run", Error::InvalidParameter { name: "run", reason: "need finite tau ≤ t_end and record_every ≥ 1".into() }));
        }
        let p = &self.pullback;
        if p.members == 0 || p.offsets.is_empty() || p.offsets.iter().any(|s| !(*s > 0.0)) || !(p.max_amplitude >= 0.0) {
            out.push(issue("pullback", Error::InvalidParameter { name: "pullback", reason: "need members ≥ 1 and positive offsets".into() }));
        }
        if !(self.equilibrium.fit_start >= 0.0 && self.equilibrium.fit_start < 1.0) {
            out.push(issue("equilibrium.fit_start", Error::InvalidParameter { name: "fit_start", reason: "must lie in [0, 1)".into() }));
        }
        if self.experiment == Experiment::Equilibrium && !self.velocity.satisfies_d5() {
            out.push(issue(
                "velocity.envelope",
                Error::Admissibility { rule: "D5", reason: "the equilibrium experiment needs a decaying velocity".into() },
            ));
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(out))
        }
    }

    pub fn system_params(&self, geom: &DomainGeometry) -> Result<SystemParams> {
        let p = &self.params;
        SystemParams::new(p.k, p.l, p.alpha, p.beta, p.m.into(), geom)
    }

    pub fn equilibrium_spec(&self) -> EquilibriumSpec {
        EquilibriumSpec {
            tau: self.run.tau,
            t_end: self.run.t_end,
            record_every: self.run.record_every,
            decay_rate: self.velocity.a,
            fit_start: self.equilibrium.fit_start,
            newton: self.equilibrium.newton,
        }
    }

    /// Mesh, model and velocity described by the configuration.
    pub fn build(&self) -> Result<Scenario> {
        let mesh = build_disk_mesh(self.geometry.radius, self.geometry.level)?;
        let ops = assemble(&mesh)?;
        let params = self.system_params(&ops.geometry())?;
        let potential = self.potential.build()?;
        let model = Model::new(ops, params, potential, potential, self.backend)?;
        let v = &self.velocity;
        let stream = match v.stream {
            StreamKind::None => StreamProfile::None,
            StreamKind::Rotation => StreamProfile::Rotation { amplitude: v.amplitude },
            StreamKind::Cellular => StreamProfile::Cellular { amplitude: v.amplitude },
        };
        let surface = if self.params.k.is_zero() || v.surface == SurfaceKind::BulkTrace {
            SurfaceProfile::BulkTrace
        } else {
            SurfaceProfile::Rotation { amplitude: v.surface_amplitude }
        };
        let velocity = VelocityPair::new(&mesh, &model.ops, stream, surface, v.envelope());
        Ok(Scenario { mesh, model, velocity })
    }
}

pub struct Scenario {
    pub mesh: BulkSurfaceMesh,
    pub model: Model,
    pub velocity: VelocityPair,
}

impl Scenario {
    /// The configured initial state; random data depend only on `seed`.
    pub fn initial(&self, spec: &InitialSpec, seed: u64) -> Result<BulkSurfaceField> {
        let m = &self.model;
        let field = match spec.kind {
            InitialKind::Random => m.random_initial(spec.amplitude, spec.bound, seed)?,
            InitialKind::Constant => m.project_mass(&m.zeros())?,
            InitialKind::Checkpoint => {
                let path = spec.path.as_deref().ok_or_else(|| Error::Precondition("checkpoint path missing".into()))?;
                let text = std::fs::read_to_string(path).map_err(|e| Error::Checkpoint(format!("{path}: {e}")))?;
                SimState::from_checkpoint(&text)?.phi
            }
        };
        m.check_admissible(&field, 1e-8)?;
        Ok(field)
    }

    /// `members` random states with amplitudes spread evenly in
    /// `(0, max_amplitude]`, seeded `seed, seed + 1, ...`.
    pub fn bounded_set(&self, members: usize, max_amplitude: f64, bound: f64, seed: u64) -> Result<Vec<BulkSurfaceField>> {
        (0..members)
            .map(|i| {
                let amp = max_amplitude * (i + 1) as f64 / members as f64;
                self.model.random_initial(amp, bound, seed.wrapping_add(i as u64))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config("", None).unwrap();
        assert_eq!(c, RunConfig::default());
        let c = parse_config("experiment = \"stationary\"\n[geometry]\nlevel = 2\n", None).unwrap();
        assert_eq!(c.experiment, Experiment::Stationary);
        assert_eq!(c.geometry.level, 2);
        assert_eq!(c.geometry.radius, 1.0);
    }

    #[test]
    fn infinity_sentinel() {
        let c = parse_config("[params]\nK = \"infinity\"\nL = \"infinity\"\nm = [0.1, -0.2]\n", None).unwrap();
        assert_eq!(c.params.k, Coupling::Infinite);
        assert_eq!(c.params.m, MassSpec::Split([0.1, -0.2]));
        let back = toml::to_string(&c).unwrap();
        assert_eq!(parse_config(&back, None).unwrap(), c);
    }

    #[test]
    fn rule_violations_are_named() {
        let e = parse_config("[params]\nbeta = 2.0\nm = 0.6\n", None).unwrap_err();
        assert_eq!(e.0[0].rule.as_deref(), Some("D1"));
        assert!(e.to_string().contains("D1"));
        let e = parse_config("[params]\nalpha = 3.0\n", None).unwrap_err();
        assert_eq!(e.0[0].rule.as_deref(), Some("A2"));
        let e = parse_config("experiment = \"equilibrium\"\n[velocity]\nenvelope = \"constant\"\namplitude = 1.0\n", None).unwrap_err();
        assert_eq!(e.0[0].rule.as_deref(), Some("D5"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let e = parse_config("[scheme]\ndt = 0.1\nstep = 3\n", None).unwrap_err();
        assert!(e.0[0].path.contains("scheme"), "{e}");
        assert!(parse_config("colour = 1\n", None).is_err());
        assert!(parse_config("[params]\nK = \"lots\"\n", None).is_err());
        assert!(parse_config("[params]\nK = -1.0\n", None).is_err());
    }

    #[test]
    fn presets_validate_and_merge() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            c.validate().unwrap();
        }
        let c = parse_config("preset = \"spinodal\"\nseed = 9\n[geometry]\nlevel = 2\n", None).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.geometry, GeometrySpec { radius: 3.0, level: 2 });
        assert_eq!(c.params.l, Coupling::Infinite);
        assert!(parse_config("", Some("nope")).is_err());
    }

    #[test]
    fn same_seed_same_initial_data() {
        let c = parse_config("[geometry]\nlevel = 2\n", None).unwrap();
        let s = c.build().unwrap();
        let a = s.initial(&c.initial, 5).unwrap();
        let b = s.initial(&c.initial, 5).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        assert_ne!(a.to_flat(), s.initial(&c.initial, 6).unwrap().to_flat());
    }
}
