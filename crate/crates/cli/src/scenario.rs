//! Scenario files: TOML with one table per concern. Unknown keys are errors
//! and every validation failure is reported with the line it refers to.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trafficfluid_core::compare::{BumpProfile, CompareConfig};
use trafficfluid_core::energy::ClfParams;
use trafficfluid_core::fleet::{in_state_space, FleetState, PairMatrix, RoadSpec, VehicleSpec};
use trafficfluid_core::longitudinal::{LongitudinalFamily, LongitudinalModel};
use trafficfluid_core::macro_model::{map_micro_to_macro, Boundary, Grid, MacroConfig, MacroParams, SpeedResponse};
use trafficfluid_core::microsim::{generate_initial, GeneratorConfig, IntegratorConfig};
use trafficfluid_core::potential::{validate_suite, Kernel, PairPotential, PotentialSuite, Shape};
use trafficfluid_core::presets;
use trafficfluid_core::{Controller, Model};

use crate::CliError;

/// Grid points per range used when checking the potential axioms.
const SUITE_RESOLUTION: usize = 400;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub road: Option<RoadSection>,
    pub fleet: Option<FleetSection>,
    pub potentials: Option<PotentialSuite>,
    pub controller: Option<ControllerSection>,
    pub initial: Option<InitialSection>,
    pub integrator: Option<IntegratorConfig>,
    pub line: Option<LineSection>,
    #[serde(rename = "macro")]
    pub macro_run: Option<MacroSection>,
    pub compare: Option<CompareConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSection {
    pub half_width: f64,
    pub v_max: f64,
    /// Defaults to the reference desired speed.
    pub v_star: Option<f64>,
    pub phi: f64,
}

/// A value shared by all vehicles or pairs, or one value per entry.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PerVehicle {
    Uniform(f64),
    Each(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PerPair {
    Uniform(f64),
    Table(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSection {
    pub n: usize,
    pub sigma: PerVehicle,
    pub lateral_weight: PerPair,
    pub min_separation: PerPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ncc,
    Prcc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Viscous,
    Inviscid,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub family: Family,
    pub variant: Variant,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    #[serde(rename = "A", default = "one")]
    pub a_penalty: f64,
    #[serde(default = "one")]
    pub b: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub generator: Option<GeneratorConfig>,
    pub x: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSection {
    pub mass: f64,
    pub min_gap: f64,
    pub lambda: f64,
    pub phi: PairPotential,
    pub kernel: Kernel,
    pub v_max: f64,
    pub v_star: Option<f64>,
    pub family: Family,
    pub variant: Variant,
    /// PRCC friction.
    pub f: Option<Shape>,
    /// NCC friction gain.
    pub gamma: Option<f64>,
    /// NCC penalty.
    pub r: Option<Shape>,
    /// Viscous speed response, the identity by default.
    pub g: Option<Shape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseChoice {
    /// The `g` of the `[line]` table.
    #[default]
    Line,
    /// `g = Q`, the transformed-speed form.
    Transform,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroSection {
    #[serde(default)]
    pub z: f64,
    #[serde(default)]
    pub response: ResponseChoice,
    /// Defaults to `v*`.
    pub frame_speed: Option<f64>,
    pub grid: Grid,
    pub boundary: Boundary,
    pub initial: BumpProfile,
    pub t_end: f64,
    pub dt: Option<f64>,
    pub snapshots: usize,
}

/// Initial state of a micro run and how it was obtained.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InitialSource {
    Generator { config: GeneratorConfig, seed: u64 },
    Explicit,
}

/// Everything a micro run needs, fully resolved.
#[derive(Debug, Clone, Serialize)]
pub struct MicroPlan {
    pub name: String,
    pub seed: u64,
    pub variant: Variant,
    pub model: Model,
    pub integrator: IntegratorConfig,
    pub initial_source: InitialSource,
    pub initial: InitialState,
}

#[derive(Debug, Clone, Serialize)]
pub struct InitialState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
}

impl InitialState {
    fn from_fleet(s: &FleetState) -> Self {
        Self { x: s.x().to_vec(), y: s.y().to_vec(), theta: s.theta().to_vec(), v: s.v().to_vec() }
    }
}

/// Everything a macro run needs, fully resolved.
#[derive(Debug, Clone, Serialize)]
pub struct MacroPlan {
    pub name: String,
    pub seed: u64,
    pub line: LongitudinalModel,
    pub params: MacroParams,
    pub grid: Grid,
    pub boundary: Boundary,
    pub frame_speed: f64,
    pub initial: BumpProfile,
    pub run: MacroConfig,
}

/// Everything a comparison needs, fully resolved.
#[derive(Debug, Clone, Serialize)]
pub struct ComparePlan {
    pub name: String,
    pub seed: u64,
    pub line: LongitudinalModel,
    pub params: MacroParams,
    pub config: CompareConfig,
}

/// A parsed scenario with its source text for line lookups.
pub struct Loaded {
    pub path: PathBuf,
    pub source: String,
    pub scenario: Scenario,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("{}: cannot read scenario: {e}", path.display())))?;
        Self::parse(path, source)
    }

    pub fn parse(path: &Path, source: String) -> Result<Self, CliError> {
        let scenario = toml::from_str::<Scenario>(&source).map_err(|e| {
            let line = e.span().map(|s| line_of(&source, s.start)).unwrap_or(1);
            CliError::Invalid(format!("{}:{line}: {}", path.display(), e.message().trim_end()))
        })?;
        Ok(Self { path: path.to_path_buf(), source, scenario })
    }

    /// Error anchored at the line defining `key`, a dotted `table.field`.
    fn error(&self, key: &str, message: impl std::fmt::Display) -> CliError {
        CliError::Invalid(format!("{}:{}: {key}: {message}", self.path.display(), locate(&self.source, key)))
    }

    fn collect(&self, failures: Vec<(String, String)>) -> Result<(), CliError> {
        if failures.is_empty() {
            return Ok(());
        }
        let lines: Vec<String> = failures
            .iter()
            .map(|(k, m)| format!("{}:{}: {k}: {m}", self.path.display(), locate(&self.source, k)))
            .collect();
        Err(CliError::Invalid(lines.join("\n")))
    }

    fn section<'a, T>(&self, s: &'a Option<T>, table: &str, command: &str) -> Result<&'a T, CliError> {
        s.as_ref().ok_or_else(|| {
            CliError::Invalid(format!("{}: {command} needs a [{table}] table", self.path.display()))
        })
    }

    fn name(&self) -> String {
        self.scenario.name.clone().unwrap_or_else(|| {
            self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        })
    }

    pub fn micro_plan(&self, seed: Option<u64>) -> Result<MicroPlan, CliError> {
        let sc = &self.scenario;
        let cmd = "run-micro";
        let road = self.section(&sc.road, "road", cmd)?;
        let fleet = self.section(&sc.fleet, "fleet", cmd)?;
        let suite = self.section(&sc.potentials, "potentials", cmd)?.clone();
        let ctl = self.section(&sc.controller, "controller", cmd)?;
        let integrator = *self.section(&sc.integrator, "integrator", cmd)?;
        let seed = seed.unwrap_or(sc.seed);
        let n = fleet.n;

        let road = RoadSpec {
            half_width: road.half_width,
            v_max: road.v_max,
            v_star: road.v_star.unwrap_or(presets::V_STAR),
            phi: road.phi,
        };
        let sigma = match &fleet.sigma {
            PerVehicle::Uniform(s) => vec![*s; n],
            PerVehicle::Each(s) if s.len() == n => s.clone(),
            PerVehicle::Each(s) => return Err(self.error("fleet.sigma", format!("expected {n} values, got {}", s.len()))),
        };
        let p = self.pair_table(&fleet.lateral_weight, n, "fleet.lateral_weight")?;
        let l = self.pair_table(&fleet.min_separation, n, "fleet.min_separation")?;
        let pairs = PairMatrix::from_tables(n, p, l).map_err(|e| self.error("fleet.min_separation", e))?;

        let controller = match (ctl.family, ctl.mu1, ctl.mu2) {
            (Family::Ncc, Some(mu1), Some(mu2)) => Controller::Ncc { mu1, mu2 },
            (Family::Ncc, _, _) => return Err(self.error("controller.family", "ncc needs mu1 and mu2")),
            (Family::Prcc, None, None) => Controller::Prcc,
            (Family::Prcc, _, _) => {
                return Err(self.error("controller.mu1", "prcc takes its frictions from potentials.f1 and potentials.f2"))
            }
        };
        let model = Model {
            road,
            vehicles: sigma.into_iter().map(|sigma| VehicleSpec { sigma }).collect(),
            pairs,
            suite,
            clf: ClfParams { a_penalty: ctl.a_penalty, b: ctl.b },
            controller,
        };

        let mut failures: Vec<(String, String)> =
            model.validate().into_iter().map(|f| (f.key.to_string(), f.message)).collect();
        if failures.is_empty() {
            let report = validate_suite(&model.suite, &model.road, &model.pairs, SUITE_RESOLUTION);
            failures.extend(report.failures().map(|c| (suite_key(c.name).to_string(), format!("{}: {}", c.name, c.detail))));
        }
        if model.suite.is_inviscid() != (ctl.variant == Variant::Inviscid) {
            failures.push((
                "controller.variant".into(),
                format!("variant {:?} does not match the kernel", ctl.variant).to_lowercase(),
            ));
        }
        if let Err(e) = integrator.validate() {
            failures.push(("integrator.dt".into(), e.to_string()));
        }
        self.collect(failures)?;

        let (initial_source, state) = self.initial_state(&model, seed)?;
        let adm = in_state_space(&state, &model.road, &model.pairs);
        if !adm.is_admissible() {
            return Err(self.error("initial.x", format!("initial state is not admissible: {:?}", adm.violations)));
        }
        Ok(MicroPlan {
            name: self.name(),
            seed,
            variant: ctl.variant,
            model,
            integrator,
            initial_source,
            initial: InitialState::from_fleet(&state),
        })
    }

    fn pair_table(&self, spec: &PerPair, n: usize, key: &str) -> Result<Vec<f64>, CliError> {
        match spec {
            PerPair::Uniform(c) => Ok(vec![*c; n * n]),
            PerPair::Table(rows) if rows.len() == n && rows.iter().all(|r| r.len() == n) => {
                Ok(rows.iter().flatten().copied().collect())
            }
            PerPair::Table(_) => Err(self.error(key, format!("expected a {n} x {n} table"))),
        }
    }

    fn initial_state(&self, model: &Model, seed: u64) -> Result<(InitialSource, FleetState), CliError> {
        let init = self.scenario.initial.clone().unwrap_or(InitialSection {
            generator: Some(GeneratorConfig::default()),
            x: None,
            y: None,
            theta: None,
            v: None,
        });
        match (init.generator, init.x, init.y, init.theta, init.v) {
            (Some(config), None, None, None, None) => {
                let state = generate_initial(model, seed, &config).map_err(|e| self.error("initial.generator", e))?;
                Ok((InitialSource::Generator { config, seed }, state))
            }
            (None, Some(x), Some(y), Some(theta), Some(v)) => {
                let n = model.n();
                if [x.len(), y.len(), theta.len(), v.len()].iter().any(|&k| k != n) {
                    return Err(self.error("initial.x", format!("x, y, theta and v need {n} entries each")));
                }
                let state = FleetState::from_components(&x, &y, &theta, &v).map_err(|e| self.error("initial.x", e))?;
                Ok((InitialSource::Explicit, state))
            }
            _ => Err(self.error("initial.generator", "give either a generator or all of x, y, theta and v")),
        }
    }

    fn line_model(&self, line: &LineSection) -> Result<LongitudinalModel, CliError> {
        let g = line.g.clone().unwrap_or(Shape::IDENTITY);
        let family = match (line.family, &line.f, line.gamma, &line.r) {
            (Family::Prcc, Some(f), None, None) => LongitudinalFamily::Prcc { f: f.clone(), g },
            (Family::Ncc, None, Some(gamma), Some(r)) => LongitudinalFamily::Ncc { gamma, r: r.clone(), g },
            (Family::Prcc, ..) => return Err(self.error("line.family", "prcc needs f and no gamma or r")),
            (Family::Ncc, ..) => return Err(self.error("line.family", "ncc needs gamma and r and no f")),
        };
        let model = LongitudinalModel {
            n: 2,
            mass: line.mass,
            min_gap: line.min_gap,
            lambda: line.lambda,
            phi: line.phi.clone(),
            kernel: line.kernel.clone(),
            v_max: line.v_max,
            v_star: line.v_star.unwrap_or(presets::V_STAR),
            family,
        };
        if model.kernel.is_zero() != (line.variant == Variant::Inviscid) {
            return Err(self.error("line.variant", format!("variant {:?} does not match the kernel", line.variant).to_lowercase()));
        }
        model.validate().map_err(|e| self.error("line.lambda", e))?;
        Ok(model)
    }

    fn macro_params(&self, line: &LongitudinalModel, z: f64, key: &str) -> Result<MacroParams, CliError> {
        map_micro_to_macro(line, z).map_err(|e| self.error(key, e))
    }

    pub fn macro_plan(&self, seed: Option<u64>) -> Result<MacroPlan, CliError> {
        let sc = &self.scenario;
        let cmd = "run-macro";
        let line = self.line_model(self.section(&sc.line, "line", cmd)?)?;
        let m = self.section(&sc.macro_run, "macro", cmd)?;
        let mut params = self.macro_params(&line, m.z, "line.kernel")?;
        if m.response == ResponseChoice::Transform {
            if !matches!(line.family, LongitudinalFamily::Prcc { .. }) {
                return Err(self.error("macro.response", "the transformed form applies to prcc only"));
            }
            params.g = SpeedResponse::Transform;
        }
        let grid = Grid::new(m.grid.x_min, m.grid.x_max, m.grid.cells).map_err(|e| self.error("macro.grid", e))?;
        let run = MacroConfig { t_end: m.t_end, dt: m.dt, snapshots: m.snapshots };
        if !(run.t_end > 0.0) || run.snapshots == 0 {
            return Err(self.error("macro.t_end", "need t_end > 0 and at least one snapshot"));
        }
        if let Some(dt) = run.dt {
            if !(dt > 0.0) {
                return Err(self.error("macro.dt", "dt must be positive"));
            }
        }
        Ok(MacroPlan {
            name: self.name(),
            seed: seed.unwrap_or(sc.seed),
            frame_speed: m.frame_speed.unwrap_or(line.v_star),
            line,
            params,
            grid,
            boundary: m.boundary,
            initial: m.initial,
            run,
        })
    }

    pub fn compare_plan(&self, seed: Option<u64>) -> Result<ComparePlan, CliError> {
        let sc = &self.scenario;
        let cmd = "compare";
        let line = self.line_model(self.section(&sc.line, "line", cmd)?)?;
        let config = self.section(&sc.compare, "compare", cmd)?.clone();
        let params = self.macro_params(&line, config.z, "compare.z")?;
        if config.n_list.is_empty() || config.n_list.iter().any(|&n| n < 2) {
            return Err(self.error("compare.n_list", "need vehicle counts of at least 2"));
        }
        if config.times.is_empty() || config.times[0] <= 0.0 || config.times.windows(2).any(|t| t[1] <= t[0]) {
            return Err(self.error("compare.times", "times must be positive and increasing"));
        }
        Ok(ComparePlan { name: self.name(), seed: seed.unwrap_or(sc.seed), line, params, config })
    }
}

/// The scenario key a failed suite axiom refers to.
fn suite_key(check: &str) -> &'static str {
    const KEYS: [(&str, &str); 8] = [
        ("interaction radius", "potentials.lambda"),
        ("pair potential", "potentials.pair"),
        ("boundary potential", "potentials.boundary"),
        ("kernel", "potentials.kernel"),
        ("penalty", "potentials.penalty"),
        ("friction f1", "potentials.f1"),
        ("friction f2", "potentials.f2"),
        ("response g1", "potentials.g1"),
    ];
    KEYS.iter()
        .find(|(prefix, _)| check.starts_with(prefix))
        .map(|(_, key)| *key)
        .unwrap_or("potentials.g2")
}

/// One-based line holding byte `offset`.
fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// One-based line defining the dotted `key`: the field's own line when
/// present, otherwise the table header, otherwise the first line.
pub fn locate(source: &str, key: &str) -> usize {
    let (table, field) = key.rsplit_once('.').unwrap_or(("", key));
    let mut current = String::new();
    let mut header = None;
    for (k, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
            if current == table && header.is_none() {
                header = Some(k + 1);
            }
            continue;
        }
        if current != table {
            continue;
        }
        if let Some(rest) = line.strip_prefix(field) {
            if rest.trim_start().starts_with('=') {
                return k + 1;
            }
        }
    }
    header.unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = "name = \"x\"\n\n[road]\nhalf_width = 7.2\nv_max = 35\n\n[potentials]\nlambda_extra = 1\nlambda = 5\n";

    #[test]
    fn locate_finds_field_lines() {
        assert_eq!(locate(SRC, "road.v_max"), 5);
        assert_eq!(locate(SRC, "potentials.lambda"), 9);
    }

    #[test]
    fn locate_falls_back_to_the_header() {
        assert_eq!(locate(SRC, "road.phi"), 3);
        assert_eq!(locate(SRC, "fleet.n"), 1);
    }

    #[test]
    fn suite_checks_map_to_keys() {
        assert_eq!(suite_key("kernel is nonnegative"), "potentials.kernel");
        assert_eq!(suite_key("friction f2 is sign definite"), "potentials.f2");
        assert_eq!(suite_key("response g2 is increasing"), "potentials.g2");
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let src = "[road]\nhalf_width = 7.2\nv_maxx = 35\n".to_string();
        let err = Loaded::parse(Path::new("s.toml"), src).err().unwrap();
        let CliError::Invalid(msg) = err else { panic!("expected a validation error") };
        assert!(msg.starts_with("s.toml:3:"), "{msg}");
    }
}
