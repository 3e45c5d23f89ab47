//! JSON run configuration: parsing, defaults and semantic validation.
//!
//! A config either names a bundled scenario (with optional overrides) or describes
//! a custom experiment on an explicit model, state and region.

use std::path::PathBuf;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::histories::DEFAULT_TOLERANCE;
use crate::linalg::{CVector, Spectrum};
use crate::model::{
    antisymmetric_gaussian, box_eigenstate, gaussian_state, make_grid_model, make_two_level, region_projector,
    ModelSystem, Potential, Projector, Region, StateVector,
};
use crate::scenarios::{
    environment_ground_state, environment_model, BoxSpec, DtGrid, PacketSpec, RecurrenceModel, ScenarioId,
    ScenarioSpec,
};

pub const DEFAULT_GRID_POINTS: usize = 256;

/// Malformed or inconsistent configuration, with the dotted path of the offending key.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Verdict,
    Survival,
    DtScan,
    Converge,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Verdict => "verdict",
            ExperimentKind::Survival => "survival",
            ExperimentKind::DtScan => "dt_scan",
            ExperimentKind::Converge => "converge",
        }
    }
}

fn default_n() -> usize {
    DEFAULT_GRID_POINTS
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "one")]
    pub length: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default)]
    pub potential: Option<Potential>,
}

impl GridSpec {
    fn build(&self) -> crate::Result<ModelSystem> {
        make_grid_model(self.n, self.length, self.mass, self.potential.clone().unwrap_or(Potential::Zero))
    }

    fn as_box(&self, path: &str) -> Result<BoxSpec, ConfigError> {
        if !matches!(self.potential, None | Some(Potential::Zero)) {
            return Err(ConfigError::at(
                format!("{path}.potential"),
                "bundled scenarios run in the empty box",
            ));
        }
        Ok(BoxSpec {
            n: self.n,
            length: self.length,
            mass: self.mass,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLevelSpec {
    #[serde(default = "one")]
    pub omega: f64,
}

/// Composite of a grid system and a two-level environment, coupled through
/// `strength * sign(x - L/2) (x) sigma_z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeSpec {
    pub system: GridSpec,
    #[serde(default = "default_env")]
    pub environment: TwoLevelSpec,
    #[serde(default)]
    pub strength: f64,
}

fn default_env() -> TwoLevelSpec {
    TwoLevelSpec { omega: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelSpec {
    Grid(GridSpec),
    TwoLevel(TwoLevelSpec),
    Composite(CompositeSpec),
}

impl ModelSpec {
    fn build(&self) -> crate::Result<ModelSystem> {
        match self {
            ModelSpec::Grid(g) => g.build(),
            ModelSpec::TwoLevel(t) => Ok(make_two_level(t.omega)),
            ModelSpec::Composite(c) => environment_model(&c.system.build()?, c.environment.omega, c.strength),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketState {
    pub x0: f64,
    #[serde(default)]
    pub p0: f64,
    pub sigma: f64,
}

impl From<&PacketState> for PacketSpec {
    fn from(p: &PacketState) -> Self {
        PacketSpec {
            x0: p.x0,
            p0: p.p0,
            sigma: p.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelState {
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexState {
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeState {
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductState {
    pub system: Box<StateSpec>,
    pub environment: Box<StateSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StateSpec {
    Gaussian(PacketState),
    AntisymmetricGaussian(PacketState),
    /// Box eigenstate, levels counted from 1.
    Eigenstate(LevelState),
    /// Lowest eigenvector of the model Hamiltonian.
    Ground,
    Basis(IndexState),
    Amplitudes(AmplitudeState),
    Product(ProductState),
}

impl StateSpec {
    fn build(&self, model: &ModelSystem, path: &str) -> Result<StateVector, ConfigError> {
        let wrap = |e: crate::ZenoError| ConfigError::at(path, e.to_string());
        match self {
            StateSpec::Gaussian(p) => gaussian_state(model, p.x0, p.p0, p.sigma).map_err(wrap),
            StateSpec::AntisymmetricGaussian(p) => antisymmetric_gaussian(model, p.x0, p.p0, p.sigma).map_err(wrap),
            StateSpec::Eigenstate(l) => box_eigenstate(model, l.level).map_err(wrap),
            StateSpec::Ground => {
                let ground = Spectrum::of_hermitian(model.h()).map_err(wrap)?.ground_state();
                StateVector::new(ground.ok_or_else(|| ConfigError::at(path, "empty model"))?).map_err(wrap)
            }
            StateSpec::Basis(i) => StateVector::basis(model.dim(), i.index).map_err(wrap),
            StateSpec::Amplitudes(a) => {
                let im = a.im.clone().unwrap_or_else(|| vec![0.0; a.re.len()]);
                if im.len() != a.re.len() {
                    return Err(ConfigError::at(format!("{path}.im"), "must match the length of `re`"));
                }
                if a.re.len() != model.dim() {
                    return Err(ConfigError::at(
                        format!("{path}.re"),
                        format!("model dimension is {}, got {} amplitudes", model.dim(), a.re.len()),
                    ));
                }
                let v = CVector::from_iterator(a.re.len(), a.re.iter().zip(&im).map(|(&r, &i)| Complex64::new(r, i)));
                StateVector::new(v).map_err(wrap)
            }
            StateSpec::Product(_) => Err(ConfigError::at(path, "product states need a composite model")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSpec {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexList {
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RegionSpec {
    LeftHalf,
    Interval(IntervalSpec),
    Indices(IndexList),
    Whole,
}

impl RegionSpec {
    fn to_region(&self) -> Region {
        match self {
            RegionSpec::LeftHalf => Region::LeftHalf,
            RegionSpec::Interval(i) => Region::Interval { a: i.a, b: i.b },
            RegionSpec::Indices(l) => Region::Indices(l.indices.clone()),
            RegionSpec::Whole => Region::Whole,
        }
    }
}

// Tagged enums are decoded by hand: serde's buffered internally-tagged path drops
// the location of errors inside the variant. Inner paths travel in the message
// behind NESTED and are stitched back together by `parse_config`.
const NESTED: char = '\u{1}';

fn from_value_at<T: DeserializeOwned, E: serde::de::Error>(v: Value) -> Result<T, E> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        E::custom(format!("{NESTED}{path}{NESTED}{}", e.into_inner()))
    })
}

fn split_kind<E: serde::de::Error>(mut v: Value, expected: &[&str]) -> Result<(String, Value), E> {
    let Some(map) = v.as_object_mut() else {
        return Err(E::custom("expected an object with a `kind` key"));
    };
    match map.remove("kind") {
        Some(Value::String(kind)) if expected.contains(&kind.as_str()) => Ok((kind, v)),
        Some(Value::String(kind)) => Err(E::custom(format!(
            "unknown kind `{kind}`, expected one of {}",
            expected.join(", ")
        ))),
        Some(_) => Err(E::custom("`kind` must be a string")),
        None => Err(E::missing_field("kind")),
    }
}

fn no_fields<E: serde::de::Error>(kind: &str, v: &Value) -> Result<(), E> {
    match v.as_object().and_then(|m| m.keys().next()) {
        Some(key) => Err(E::custom(format!("unknown field `{key}` for kind `{kind}`"))),
        None => Ok(()),
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (kind, v) = split_kind(Value::deserialize(d)?, &["grid", "two_level", "composite"])?;
        Ok(match kind.as_str() {
            "grid" => ModelSpec::Grid(from_value_at(v)?),
            "two_level" => ModelSpec::TwoLevel(from_value_at(v)?),
            _ => ModelSpec::Composite(from_value_at(v)?),
        })
    }
}

impl<'de> Deserialize<'de> for StateSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let kinds = [
            "gaussian",
            "antisymmetric_gaussian",
            "eigenstate",
            "ground",
            "basis",
            "amplitudes",
            "product",
        ];
        let (kind, v) = split_kind(Value::deserialize(d)?, &kinds)?;
        Ok(match kind.as_str() {
            "gaussian" => StateSpec::Gaussian(from_value_at(v)?),
            "antisymmetric_gaussian" => StateSpec::AntisymmetricGaussian(from_value_at(v)?),
            "eigenstate" => StateSpec::Eigenstate(from_value_at(v)?),
            "ground" => {
                no_fields(&kind, &v)?;
                StateSpec::Ground
            }
            "basis" => StateSpec::Basis(from_value_at(v)?),
            "amplitudes" => StateSpec::Amplitudes(from_value_at(v)?),
            _ => StateSpec::Product(from_value_at(v)?),
        })
    }
}

impl<'de> Deserialize<'de> for RegionSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (kind, v) = split_kind(Value::deserialize(d)?, &["left_half", "interval", "indices", "whole"])?;
        Ok(match kind.as_str() {
            "interval" => RegionSpec::Interval(from_value_at(v)?),
            "indices" => RegionSpec::Indices(from_value_at(v)?),
            other => {
                no_fields(other, &v)?;
                if other == "whole" {
                    RegionSpec::Whole
                } else {
                    RegionSpec::LeftHalf
                }
            }
        })
    }
}

fn join_path(outer: &str, inner: &str) -> String {
    match (outer, inner) {
        (_, ".") | (_, "") => outer.to_string(),
        (".", _) | ("", _) => inner.to_string(),
        _ => format!("{outer}.{inner}"),
    }
}

/// Unwraps paths that nested tagged decoders embedded in the message.
fn stitch(mut path: String, mut message: String) -> (String, String) {
    while let Some(rest) = message.strip_prefix(NESTED) {
        let Some((inner, msg)) = rest.split_once(NESTED) else {
            break;
        };
        path = join_path(&path, inner);
        message = msg.to_string();
    }
    (path, message)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub n: Option<u64>,
    #[serde(default)]
    pub n_list: Option<Vec<u64>>,
    #[serde(default)]
    pub dt_grid: Option<DtGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Option<ScenarioId>,
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub state: Option<StateSpec>,
    #[serde(default)]
    pub region: Option<RegionSpec>,
    #[serde(default)]
    pub time: TimeSpec,
    /// Decoherence tolerance; scenarios fall back to their own defaults when absent.
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Case (c) bound on mass leaking past the boundary under the full evolution.
    #[serde(default)]
    pub max_leakage: Option<f64>,
    /// Coupling strengths for the environment scenario.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// A fully built custom experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub kind: ExperimentKind,
    pub model: ModelSystem,
    pub projector: Projector,
    pub state: Option<StateVector>,
    pub dt: Option<f64>,
    pub n: Option<u64>,
    pub n_list: Vec<u64>,
    pub dt_grid: Option<DtGrid>,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub enum Job {
    Scenario(ScenarioSpec),
    Experiment(ExperimentSetup),
}

/// Parses and validates `text`. Structural errors carry the path of the offending key.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let (path, message) = stitch(e.path().to_string(), e.into_inner().to_string());
        ConfigError::at(if path == "." || path.is_empty() { "$".to_string() } else { path }, message)
    })?;
    config.resolve()?;
    Ok(config)
}

fn positive(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::at(path, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::at(path, format!("must be finite and non-negative, got {v}")))
    }
}

impl RunConfig {
    /// Effective decoherence tolerance of a custom experiment.
    pub fn tolerance_or_default(&self) -> f64 {
        self.tolerance.unwrap_or(DEFAULT_TOLERANCE)
    }

    /// Builds everything the run needs without evolving anything.
    pub fn resolve(&self) -> Result<Job, ConfigError> {
        if let Some(t) = self.tolerance {
            positive("tolerance", t)?;
        }
        if let Some(t) = self.max_leakage {
            positive("max_leakage", t)?;
        }
        if let Some(dt) = self.time.dt {
            non_negative("time.dt", dt)?;
        }
        if let Some(g) = &self.time.dt_grid {
            g.values().map_err(|e| ConfigError::at("time.dt_grid", e.to_string()))?;
        }
        if let Some(ns) = &self.time.n_list {
            if ns.is_empty() || ns.contains(&0) || ns.windows(2).any(|w| w[1] <= w[0]) {
                return Err(ConfigError::at(
                    "time.n_list",
                    "needs positive slice counts in strictly ascending order",
                ));
            }
        }
        if self.time.n == Some(0) {
            return Err(ConfigError::at("time.n", "slice count must be positive"));
        }
        match (self.scenario, self.experiment) {
            (Some(_), Some(_)) => Err(ConfigError::at("experiment", "give either `scenario` or `experiment`, not both")),
            (None, None) => Err(ConfigError::at("$", "config needs a `scenario` id or an `experiment` kind")),
            (Some(id), None) => self.resolve_scenario(id).map(Job::Scenario),
            (None, Some(kind)) => self.resolve_experiment(kind).map(Job::Experiment),
        }
    }

    fn scenario_box(&self, default: BoxSpec) -> Result<BoxSpec, ConfigError> {
        match &self.model {
            None => Ok(default),
            Some(ModelSpec::Grid(g)) => g.as_box("model"),
            Some(_) => Err(ConfigError::at("model", "this scenario runs on a grid model")),
        }
    }

    fn scenario_packet(&self, default: PacketSpec, allow_antisymmetric: bool) -> Result<PacketSpec, ConfigError> {
        match &self.state {
            None => Ok(default),
            Some(StateSpec::Gaussian(p)) => Ok(p.into()),
            Some(StateSpec::AntisymmetricGaussian(p)) if allow_antisymmetric => Ok(p.into()),
            Some(_) => Err(ConfigError::at("state", "this scenario takes a gaussian packet")),
        }
    }

    fn reject_unused(&self, region: bool, n: bool) -> Result<(), ConfigError> {
        if region && self.region.is_some() {
            return Err(ConfigError::at("region", "scenarios fix their own region (left half of the box)"));
        }
        if n && (self.time.n.is_some() || self.time.n_list.is_some()) {
            return Err(ConfigError::at("time", "slice counts are not used by scenarios"));
        }
        Ok(())
    }

    fn resolve_scenario(&self, id: ScenarioId) -> Result<ScenarioSpec, ConfigError> {
        self.reject_unused(true, true)?;
        if self.lambdas.is_some() && id != ScenarioId::Environment {
            return Err(ConfigError::at("lambdas", "only the environment scenario scans couplings"));
        }
        if self.max_leakage.is_some() && id != ScenarioId::CaseC {
            return Err(ConfigError::at("max_leakage", "only used by case_c"));
        }
        if self.time.dt_grid.is_some() && id != ScenarioId::CaseD {
            return Err(ConfigError::at("time.dt_grid", "only case_d scans dt"));
        }
        let mut spec = match id {
            ScenarioId::CaseD => match &self.model {
                Some(ModelSpec::Grid(_)) => ScenarioSpec::box_recurrence(),
                _ => ScenarioSpec::default_for(id),
            },
            _ => ScenarioSpec::default_for(id),
        };
        let tol = self.tolerance;
        let dt = self.time.dt;
        match &mut spec {
            ScenarioSpec::CaseA {
                grid,
                level,
                dt: d,
                tolerance,
            } => {
                *grid = self.scenario_box(*grid)?;
                match &self.state {
                    None => {}
                    Some(StateSpec::Eigenstate(l)) => *level = l.level,
                    Some(_) => return Err(ConfigError::at("state", "case_a takes an eigenstate level")),
                }
                *d = dt.unwrap_or(*d);
                *tolerance = tol.unwrap_or(*tolerance);
            }
            ScenarioSpec::CaseB {
                grid,
                packet,
                dt: d,
                tolerance,
            }
            | ScenarioSpec::Crossing {
                grid,
                packet,
                dt: d,
                tolerance,
            } => {
                *grid = self.scenario_box(*grid)?;
                *packet = self.scenario_packet(*packet, id == ScenarioId::CaseB)?;
                *d = dt.unwrap_or(*d);
                *tolerance = tol.unwrap_or(*tolerance);
            }
            ScenarioSpec::CaseC {
                grid,
                packet,
                dt: d,
                tolerance,
                max_leakage,
            } => {
                *grid = self.scenario_box(*grid)?;
                *packet = self.scenario_packet(*packet, false)?;
                *d = dt.unwrap_or(*d);
                *tolerance = tol.unwrap_or(*tolerance);
                *max_leakage = self.max_leakage.unwrap_or(*max_leakage);
            }
            ScenarioSpec::CaseD {
                model,
                dt_grid,
                tolerance,
            } => {
                if dt.is_some() {
                    return Err(ConfigError::at("time.dt", "case_d scans dt; give `time.dt_grid`"));
                }
                match (&self.model, model) {
                    (None, _) => {}
                    (Some(ModelSpec::TwoLevel(t)), RecurrenceModel::TwoLevel { omega }) => {
                        *omega = positive("model.omega", t.omega)?;
                    }
                    (Some(ModelSpec::Grid(g)), RecurrenceModel::Box { grid, packet }) => {
                        *grid = g.as_box("model")?;
                        *packet = self.scenario_packet(*packet, false)?;
                    }
                    _ => return Err(ConfigError::at("model", "case_d runs on a two_level or grid model")),
                }
                if self.state.is_some() && !matches!(self.model, Some(ModelSpec::Grid(_))) {
                    return Err(ConfigError::at("state", "the two-level recurrence starts in basis state 0"));
                }
                *dt_grid = self.time.dt_grid.unwrap_or(*dt_grid);
                *tolerance = tol.unwrap_or(*tolerance);
            }
            ScenarioSpec::Environment {
                grid,
                packet,
                environment_omega,
                lambdas,
                dt: d,
                tolerance,
            } => {
                match &self.model {
                    None => {}
                    Some(ModelSpec::Grid(g)) => *grid = g.as_box("model")?,
                    Some(ModelSpec::Composite(c)) => {
                        *grid = c.system.as_box("model.system")?;
                        *environment_omega = c.environment.omega;
                        if self.lambdas.is_none() {
                            *lambdas = vec![c.strength];
                        }
                    }
                    Some(_) => return Err(ConfigError::at("model", "environment runs on a grid or composite model")),
                }
                *packet = self.scenario_packet(*packet, false)?;
                if let Some(ls) = &self.lambdas {
                    *lambdas = ls.clone();
                }
                *d = dt.unwrap_or(*d);
                *tolerance = tol.unwrap_or(*tolerance);
            }
        }
        check_scenario(&spec)?;
        Ok(spec)
    }

    fn resolve_experiment(&self, kind: ExperimentKind) -> Result<ExperimentSetup, ConfigError> {
        if self.lambdas.is_some() {
            return Err(ConfigError::at("lambdas", "only the environment scenario scans couplings"));
        }
        if self.max_leakage.is_some() {
            return Err(ConfigError::at("max_leakage", "only used by case_c"));
        }
        let spec = self
            .model
            .clone()
            .ok_or_else(|| ConfigError::at("model", "custom experiments need a model"))?;
        let model = spec.build().map_err(|e| ConfigError::at("model", e.to_string()))?;

        let region = match (&self.region, &spec) {
            (Some(r), _) => r.to_region(),
            (None, ModelSpec::TwoLevel(_)) => Region::Indices(vec![0]),
            (None, _) => Region::LeftHalf,
        };
        let projector = region_projector(&model, &region).map_err(|e| ConfigError::at("region", e.to_string()))?;

        let state = if kind == ExperimentKind::Converge {
            if self.state.is_some() {
                return Err(ConfigError::at("state", "converge compares operators and takes no state"));
            }
            None
        } else {
            let st = match (&self.state, &spec) {
                (Some(s), ModelSpec::Composite(c)) => build_composite_state(s, &c.system, c.environment.omega)?,
                (Some(s), _) => s.build(&model, "state")?,
                (None, ModelSpec::TwoLevel(_)) => StateVector::basis(2, 0).expect("dimension 2"),
                (None, _) => return Err(ConfigError::at("state", "this model needs an explicit state")),
            };
            Some(st)
        };

        let need_dt = || {
            self.time
                .dt
                .ok_or_else(|| ConfigError::at("time.dt", format!("{} needs a time step", kind.as_str())))
        };
        let mut dt = self.time.dt;
        let mut n_list = Vec::new();
        match kind {
            ExperimentKind::Verdict => {
                need_dt()?;
                if self.time.n_list.is_some() || self.time.dt_grid.is_some() {
                    return Err(ConfigError::at("time", "verdict takes `dt` and optionally `n`"));
                }
            }
            ExperimentKind::Survival => {
                need_dt()?;
                n_list = match (&self.time.n_list, self.time.n) {
                    (Some(ns), None) => ns.clone(),
                    (None, Some(n)) => vec![n],
                    _ => return Err(ConfigError::at("time.n_list", "survival needs either `n` or `n_list`")),
                };
                let inside = projector.expectation(state.as_ref().expect("state resolved"));
                if inside <= 1.0 - crate::histories::SUBSPACE_SLACK {
                    return Err(ConfigError::at(
                        "state",
                        format!("state has weight {inside} in the region; survival needs a state inside it"),
                    ));
                }
            }
            ExperimentKind::DtScan => {
                if self.time.dt_grid.is_none() {
                    return Err(ConfigError::at("time.dt_grid", "dt_scan needs a dt grid"));
                }
                if self.time.dt.is_some() || self.time.n.is_some() || self.time.n_list.is_some() {
                    return Err(ConfigError::at("time", "dt_scan takes only `dt_grid`"));
                }
                dt = None;
            }
            ExperimentKind::Converge => {
                need_dt()?;
                n_list = self
                    .time
                    .n_list
                    .clone()
                    .unwrap_or_else(|| (4..=12).map(|k| 1u64 << k).collect());
            }
        }
        Ok(ExperimentSetup {
            kind,
            model,
            projector,
            state,
            dt,
            n: if kind == ExperimentKind::Verdict { self.time.n } else { None },
            n_list,
            dt_grid: self.time.dt_grid,
            tolerance: self.tolerance_or_default(),
        })
    }
}

fn build_composite_state(spec: &StateSpec, system: &GridSpec, environment_omega: f64) -> Result<StateVector, ConfigError> {
    let StateSpec::Product(p) = spec else {
        return Err(ConfigError::at("state", "composite models take a `product` state"));
    };
    let sys_model = system.build().map_err(|e| ConfigError::at("model.system", e.to_string()))?;
    let phi = p.system.build(&sys_model, "state.system")?;
    let chi = match p.environment.as_ref() {
        StateSpec::Ground => environment_ground_state(environment_omega)
            .map_err(|e| ConfigError::at("state.environment", e.to_string()))?,
        other => other.build(&make_two_level(environment_omega), "state.environment")?,
    };
    Ok(StateVector::product(&phi, &chi))
}

/// Config key a scenario parameter comes from.
fn scenario_key(name: &str) -> &'static str {
    match name {
        "n" | "length" | "mass" | "omega" => "model",
        "level" | "x0" | "p0" | "sigma" => "state",
        "dt" => "time.dt",
        "dt_grid" => "time.dt_grid",
        "lambdas" => "lambdas",
        "tolerance" => "tolerance",
        "max_leakage" => "max_leakage",
        _ => "$",
    }
}

fn check_scenario(spec: &ScenarioSpec) -> Result<(), ConfigError> {
    spec.check().map_err(|e| {
        let path = match &e {
            crate::ZenoError::InvalidParameter { name, .. } => scenario_key(name),
            crate::ZenoError::PacketLeak { .. } => "state",
            _ => "$",
        };
        ConfigError::at(path, e.to_string())
    })
}
