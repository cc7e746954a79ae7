//! Secondary-layer controllers and the closed-loop driver.
//!
//! Every controller implements [`Controller`] and is registered by name, so
//! a scenario file or the command line selects it at run time:
//!
//! * `primary_droop`: no restoration, the droop laws alone share the load.
//! * `nmpc_centralized`: one offset broadcast to all droop sources, chosen by
//!   NMPC on voltage tracking and input rate.
//! * `enmpc_localized`: one offset per droop source, with the economic
//!   current-cost term added to the objective.

use std::collections::VecDeque;

use log::warn;

use crate::error::{Error, Result};
use crate::ocp::{
    forecast_registry, gradient_registry, ForecastPolicy, GradientMethod, InputSequence, OcpConfig,
    ShootingProblem,
};
use crate::plant::{
    equilibrium, ControlInput, Disturbance, Dynamics, InputMode, PlantParams, PlantState,
};
use crate::registry::Registry;
use crate::scenario::{CaseConfig, LoadProfile};
use crate::simulator::{StepDiagnostics, Trajectory};
use crate::solver::{solve, SolveResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    PrimaryDroop,
    NmpcCentralized,
    EnmpcLocalized,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] =
        [ControllerKind::PrimaryDroop, ControllerKind::NmpcCentralized, ControllerKind::EnmpcLocalized];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::PrimaryDroop => "primary_droop",
            ControllerKind::NmpcCentralized => "nmpc_centralized",
            ControllerKind::EnmpcLocalized => "enmpc_localized",
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What a controller applied at one sample.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub input: ControlInput,
    pub solve: Option<SolveResult>,
}

pub trait Controller: Send {
    fn name(&self) -> &str;

    fn mode(&self) -> InputMode;

    /// Compute the input to hold over the next sample from the measured state
    /// and load at time `t`.
    fn control_step(&mut self, x_meas: &PlantState, d_meas: &Disturbance, t: f64) -> Result<StepOutput>;
}

/// Droop control only: the restoration signal is always zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct PrimaryDroop;

impl Controller for PrimaryDroop {
    fn name(&self) -> &str {
        ControllerKind::PrimaryDroop.name()
    }

    fn mode(&self) -> InputMode {
        InputMode::Centralized
    }

    fn control_step(&mut self, _: &PlantState, _: &Disturbance, _: f64) -> Result<StepOutput> {
        Ok(StepOutput { input: ControlInput::Centralized(0.0), solve: None })
    }
}

/// Holds a constant restoration input. Used for open-loop equilibrium checks.
#[derive(Debug, Clone, Copy)]
pub struct FixedOffset(pub ControlInput);

impl Controller for FixedOffset {
    fn name(&self) -> &str {
        "fixed_offset"
    }

    fn mode(&self) -> InputMode {
        self.0.mode()
    }

    fn control_step(&mut self, _: &PlantState, _: &Disturbance, _: f64) -> Result<StepOutput> {
        Ok(StepOutput { input: self.0, solve: None })
    }
}

const DIAGNOSTICS_RING: usize = 16;

#[derive(Debug, Clone)]
pub struct ControllerState {
    pub u_prev: ControlInput,
    /// Last optimal sequence; shifted before it seeds the next solve.
    pub useq_warm: InputSequence,
    pub diagnostics: VecDeque<SolveResult>,
}

impl ControllerState {
    pub fn new(mode: InputMode, n_p: usize) -> Self {
        let zero = ControlInput::zero(mode);
        Self { u_prev: zero, useq_warm: InputSequence::constant(&zero, n_p), diagnostics: VecDeque::new() }
    }

    /// State of a controller that has been holding `u` for a while.
    pub fn holding(u: ControlInput, n_p: usize) -> Self {
        Self { u_prev: u, useq_warm: InputSequence::constant(&u, n_p), diagnostics: VecDeque::new() }
    }
}

/// Receding-horizon NMPC with single shooting.
pub struct Nmpc {
    name: String,
    cfg: OcpConfig,
    params: PlantParams,
    sample_time_s: f64,
    profile: LoadProfile,
    forecast: Box<dyn ForecastPolicy>,
    gradient: Box<dyn GradientMethod>,
    state: ControllerState,
}

impl Nmpc {
    /// `cfg` is used as given, including its economic weights.
    pub fn new(
        name: impl Into<String>,
        mode: InputMode,
        cfg: OcpConfig,
        params: PlantParams,
        sample_time_s: f64,
        profile: LoadProfile,
    ) -> Result<Self> {
        cfg.validate()?;
        let forecast = (forecast_registry().get(&cfg.forecast)?)();
        let gradient = (gradient_registry().get(&cfg.gradient)?)();
        let state = ControllerState::new(mode, cfg.horizon_steps);
        Ok(Self { name: name.into(), cfg, params, sample_time_s, profile, forecast, gradient, state })
    }

    /// Centralized offset, tracking and rate terms only.
    pub fn centralized(case: &CaseConfig) -> Result<Self> {
        Self::new(
            ControllerKind::NmpcCentralized.name(),
            InputMode::Centralized,
            case.ocp.without_economics(),
            case.plant.clone(),
            case.sample_time_s,
            case.profile.clone(),
        )
    }

    /// Per-source offsets with the economic term.
    pub fn economic_localized(case: &CaseConfig) -> Result<Self> {
        Self::new(
            ControllerKind::EnmpcLocalized.name(),
            InputMode::Localized,
            case.ocp.clone(),
            case.plant.clone(),
            case.sample_time_s,
            case.profile.clone(),
        )
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn set_state(&mut self, state: ControllerState) {
        self.state = state;
    }

    pub fn config(&self) -> &OcpConfig {
        &self.cfg
    }
}

impl Controller for Nmpc {
    fn name(&self) -> &str {
        &self.name
    }

    fn mode(&self) -> InputMode {
        self.state.u_prev.mode()
    }

    fn control_step(&mut self, x_meas: &PlantState, d_meas: &Disturbance, t: f64) -> Result<StepOutput> {
        let n_p = self.cfg.horizon_steps;
        let d_pred = self.forecast.forecast(d_meas, t, self.sample_time_s, n_p, &self.profile);
        let problem = ShootingProblem::new(
            x_meas,
            &self.state.u_prev,
            &d_pred,
            &self.cfg,
            &self.params,
            self.sample_time_s,
        )?;
        let init = self.state.useq_warm.shifted();
        let result = match solve(&problem, &init, &self.cfg.solver, self.gradient.as_ref()) {
            Ok(r) => r,
            Err(e) if e.is_divergence() => {
                warn!("t = {t:.3} s: prediction collapsed at the warm start ({e}); holding the shifted plan");
                let input = init.entry(0);
                self.state.u_prev = input;
                self.state.useq_warm = init;
                return Ok(StepOutput { input, solve: None });
            }
            Err(e) => return Err(e),
        };
        if !result.converged() {
            warn!(
                "t = {t:.3} s: solver stopped with {:?} after {} iterations (kkt {:.3e}); applying best iterate",
                result.status, result.iterations, result.kkt_residual
            );
        }
        let input = result.useq_opt.entry(0);
        self.state.u_prev = input;
        self.state.useq_warm = result.useq_opt.clone();
        if self.state.diagnostics.len() == DIAGNOSTICS_RING {
            self.state.diagnostics.pop_front();
        }
        self.state.diagnostics.push_back(result.clone());
        Ok(StepOutput { input, solve: Some(result) })
    }
}

pub type ControllerFactory = fn(&CaseConfig) -> Result<Box<dyn Controller>>;

pub fn controller_registry() -> Registry<ControllerFactory> {
    let mut r: Registry<ControllerFactory> = Registry::new("controller");
    r.register(ControllerKind::PrimaryDroop.name(), |_| Ok(Box::new(PrimaryDroop)));
    r.register(ControllerKind::NmpcCentralized.name(), |c| Ok(Box::new(Nmpc::centralized(c)?)));
    r.register(ControllerKind::EnmpcLocalized.name(), |c| Ok(Box::new(Nmpc::economic_localized(c)?)));
    r
}

pub fn build_controller(case: &CaseConfig) -> Result<Box<dyn Controller>> {
    (controller_registry().get(&case.controller)?)(case)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Also record the plant state at every integration substep.
    pub record_substeps: bool,
}

/// Run the scenario with the controller it names.
pub fn closed_loop(case: &CaseConfig) -> Result<Trajectory> {
    case.validate()?;
    let mut controller = build_controller(case)?;
    run_closed_loop(case, controller.as_mut(), RunOptions::default())
}

/// Initial plant state: the configured override, or the zero-offset
/// equilibrium under the load at `t = 0`.
pub fn initial_state(case: &CaseConfig) -> Result<PlantState> {
    match case.initial_state {
        Some(x) => Ok(x),
        None => equilibrium(&ControlInput::Centralized(0.0), &case.profile.load_during(0.0), &case.plant),
    }
}

/// Sample, decide, then integrate the plant over one sample with the input
/// held, until `t_final`. Only the first entry of each optimal sequence is
/// ever applied.
pub fn run_closed_loop(
    case: &CaseConfig,
    controller: &mut dyn Controller,
    opts: RunOptions,
) -> Result<Trajectory> {
    let n = case.n_steps();
    let ts = case.sample_time_s;
    let h = case.plant_step();
    let dynamics = Dynamics::new(&case.plant);
    let mut x = initial_state(case)?.to_array();
    let mut traj = Trajectory::new(controller.name(), case, opts.record_substeps);
    let mut last = ControlInput::zero(controller.mode());

    for k in 0..n {
        let t = k as f64 * ts;
        let state = PlantState::from_array(&x);
        let d = case.profile.load_during(t);
        let out = controller.control_step(&state, &d, t)?;
        traj.push(t, state, out.input, d, out.solve.as_ref().map(StepDiagnostics::from));
        let dv = out.input.per_unit();
        for s in 0..case.plant_substeps {
            let t_sub = t + s as f64 * h;
            let p = case.profile.load_during(t_sub).total();
            x = dynamics.rk4(&x, &dv, p, h).map_err(|e| match e {
                Error::VoltageCollapse { v_o, .. } => Error::PlantDiverged { t: t_sub, v_o },
                other => other,
            })?;
            if opts.record_substeps {
                traj.push_substep(t_sub + h, PlantState::from_array(&x));
            }
        }
        last = out.input;
    }
    let t_end = n as f64 * ts;
    traj.push(t_end, PlantState::from_array(&x), last, case.profile.load_during(t_end), None);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::restoring_offset;
    use crate::scenario::default_scenario;

    fn constant_case(p: f64, t_final: f64, controller: ControllerKind) -> CaseConfig {
        CaseConfig { t_final_s: t_final, ..default_scenario() }
            .with_profile(LoadProfile::constant(p))
            .with_controller(controller.name())
    }

    #[test]
    fn droop_returns_zero() {
        let mut c = PrimaryDroop;
        let x = PlantState { v_o: 5000.0, i_sga: 3.0, ..Default::default() };
        let out = c.control_step(&x, &Disturbance::new(1e6, 1e6), 1.0).unwrap();
        assert_eq!(out.input, ControlInput::Centralized(0.0));
        assert!(out.solve.is_none());
    }

    #[test]
    fn registry_has_builtins() {
        let r = controller_registry();
        for k in ControllerKind::ALL {
            assert!(r.contains(k.name()));
        }
        let bad = default_scenario().with_controller("pid");
        assert!(matches!(build_controller(&bad), Err(Error::UnknownStrategy { .. })));
    }

    #[test]
    fn zero_load_droop_holds_reference() {
        let case = constant_case(0.0, 2.0, ControllerKind::PrimaryDroop);
        let traj = closed_loop(&case).unwrap();
        assert_eq!(traj.len(), 41);
        assert!(traj.states().iter().all(|x| (x.v_o - 6000.0).abs() < 1e-9));
    }

    #[test]
    fn nmpc_holds_restored_equilibrium() {
        let case = constant_case(6e6, 1.0, ControllerKind::NmpcCentralized);
        let d = Disturbance::new(6e6, 0.0);
        let dv = restoring_offset(6000.0, &d, &case.plant);
        let x = equilibrium(&ControlInput::Centralized(dv), &d, &case.plant).unwrap();
        let mut c = Nmpc::centralized(&case).unwrap();
        c.set_state(ControllerState::holding(ControlInput::Centralized(dv), 10));
        let out = c.control_step(&x, &d, 0.0).unwrap();
        match out.input {
            ControlInput::Centralized(v) => assert!((v - dv).abs() < 0.1, "{v} vs {dv}"),
            _ => panic!("wrong mode"),
        }
        assert_eq!(c.state().u_prev, out.input);
        assert_eq!(out.solve.unwrap().useq_opt.entry(0), out.input);
    }

    #[test]
    fn collapse_reports_time() {
        let mut case = constant_case(0.0, 1.0, ControllerKind::PrimaryDroop);
        case.initial_state = Some(PlantState { v_o: 6000.0, ..Default::default() });
        case.profile = LoadProfile::constant(1e9);
        let err = run_closed_loop(&case, &mut PrimaryDroop, RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::PlantDiverged { t, .. } if (0.0..1.0).contains(&t)), "{err:?}");
    }
}
