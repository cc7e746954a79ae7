//! Single-shooting prediction model and NMPC objective.
//!
//! The decision vector holds the restoration offsets for the `n_p` control
//! intervals of the horizon (one value per interval in centralized mode, four
//! in localized mode). The state trajectory is eliminated by integrating the
//! plant model forward with the inputs held over each interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{
    ControlInput, Disturbance, Dynamics, InputMode, PlantParams, PlantState, StateVector,
    IDX_DROOP, IDX_V_O, N_DROOP, N_SOURCES, N_STATES,
};
use crate::registry::Registry;
use crate::scenario::LoadProfile;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpConfig {
    pub horizon_steps: usize,
    /// Weight on the squared bus-voltage tracking error.
    pub q_voltage: f64,
    /// Weight on each squared input increment.
    pub r_rate: f64,
    /// Economic weights on squared source currents (SGa, SGb, Ba, Bb, SCa, SCb).
    /// Only the economic controller applies them.
    pub psi: [f64; N_SOURCES],
    pub v_sp_v: f64,
    pub u_bound_v: f64,
    /// Soft bound on `|du|` per interval; disabled when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub du_bound_v: Option<f64>,
    /// Half-width of the soft voltage band as a fraction of `v_sp_v`.
    pub v_band_fraction: f64,
    pub rho_state: f64,
    pub current_limits_a: [f64; N_SOURCES],
    /// RK4 substeps per control interval inside the prediction.
    pub prediction_substeps: usize,
    /// Registered forecast policy name.
    pub forecast: String,
    /// Registered gradient evaluator name.
    pub gradient: String,
    pub solver: SolverConfig,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 10,
            q_voltage: 1.0,
            r_rate: 0.001,
            psi: [0.002, 0.002, 0.005, 0.005, 0.005, 0.005],
            v_sp_v: 6000.0,
            u_bound_v: 150.0,
            du_bound_v: None,
            v_band_fraction: 0.04,
            rho_state: 1e3,
            current_limits_a: [1500.0, 1500.0, 800.0, 800.0, 2000.0, 2000.0],
            prediction_substeps: 25,
            forecast: HOLD.to_string(),
            gradient: CENTRAL_DIFFERENCE.to_string(),
            solver: SolverConfig::default(),
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps == 0 {
            return Err(Error::invalid("ocp.horizon_steps", "must be >= 1"));
        }
        if self.prediction_substeps == 0 {
            return Err(Error::invalid("ocp.prediction_substeps", "must be >= 1"));
        }
        for (field, v) in [
            ("ocp.q_voltage", self.q_voltage),
            ("ocp.r_rate", self.r_rate),
            ("ocp.rho_state", self.rho_state),
            ("ocp.v_band_fraction", self.v_band_fraction),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, format!("must be >= 0, got {v}")));
            }
        }
        if self.psi.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid("ocp.psi", "weights must be >= 0"));
        }
        crate::plant::positive("ocp.u_bound_v", self.u_bound_v)?;
        crate::plant::positive("ocp.v_sp_v", self.v_sp_v)?;
        if let Some(b) = self.du_bound_v {
            crate::plant::positive("ocp.du_bound_v", b)?;
        }
        for (k, lim) in self.current_limits_a.iter().enumerate() {
            crate::plant::positive(&format!("ocp.current_limits_a[{k}]"), *lim)?;
        }
        forecast_registry().get(&self.forecast)?;
        gradient_registry().get(&self.gradient)?;
        self.solver.validate()
    }

    pub fn without_economics(&self) -> Self {
        Self { psi: [0.0; N_SOURCES], ..self.clone() }
    }
}

/// Restoration offsets over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence {
    mode: InputMode,
    values: Vec<f64>,
}

impl InputSequence {
    pub fn new(mode: InputMode, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(mode.dofs()) {
            return Err(Error::invalid(
                "input_sequence",
                format!("{} values do not fill whole intervals", values.len()),
            ));
        }
        Ok(Self { mode, values })
    }

    pub fn constant(u: &ControlInput, n_p: usize) -> Self {
        let values = match u {
            ControlInput::Centralized(v) => vec![*v; n_p],
            ControlInput::Localized(v) => v.iter().copied().cycle().take(n_p * N_DROOP).collect(),
        };
        Self { mode: u.mode(), values }
    }

    pub fn mode(&self) -> InputMode {
        self.mode
    }

    /// Number of control intervals.
    pub fn len(&self) -> usize {
        self.values.len() / self.mode.dofs()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn entry(&self, j: usize) -> ControlInput {
        entry(self.mode, &self.values, j)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Receding-horizon shift: drop the first interval, repeat the last.
    pub fn shifted(&self) -> Self {
        let k = self.mode.dofs();
        let mut values = self.values[k..].to_vec();
        values.extend_from_slice(&self.values[self.values.len() - k..]);
        Self { mode: self.mode, values }
    }
}

pub fn warm_start_shift(prev: &InputSequence) -> InputSequence {
    prev.shifted()
}

fn entry(mode: InputMode, values: &[f64], j: usize) -> ControlInput {
    match mode {
        InputMode::Centralized => ControlInput::Centralized(values[j]),
        InputMode::Localized => {
            let mut v = [0.0; N_DROOP];
            v.copy_from_slice(&values[j * N_DROOP..(j + 1) * N_DROOP]);
            ControlInput::Localized(v)
        }
    }
}

/// Cost of one prediction interval, split by objective term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageCost {
    pub tracking: f64,
    pub rate: f64,
    pub economic: f64,
    pub penalty: f64,
}

impl StageCost {
    pub fn total(&self) -> f64 {
        self.tracking + self.rate + self.economic + self.penalty
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Predicted states `x(k+1) .. x(k+n_p)`.
    pub states: Vec<PlantState>,
    pub stages: Vec<StageCost>,
    pub total: f64,
}

/// One instance of the finite-horizon problem, fixed at the current sample.
#[derive(Debug, Clone)]
pub struct ShootingProblem {
    dynamics: Dynamics,
    x0: StateVector,
    u_prev: Vec<f64>,
    loads: Vec<f64>,
    mode: InputMode,
    n_p: usize,
    n_sub: usize,
    h: f64,
    q: f64,
    r: f64,
    psi: [f64; N_SOURCES],
    v_sp: f64,
    v_lo: f64,
    v_hi: f64,
    rho: f64,
    current_limits: [f64; N_SOURCES],
    du_bound: Option<f64>,
    u_bound: f64,
}

impl ShootingProblem {
    /// `d_pred` supplies one disturbance per interval; `sample_time_s` is the
    /// interval length.
    pub fn new(
        x0: &PlantState,
        u_prev: &ControlInput,
        d_pred: &[Disturbance],
        cfg: &OcpConfig,
        params: &PlantParams,
        sample_time_s: f64,
    ) -> Result<Self> {
        let n_p = cfg.horizon_steps;
        if d_pred.len() != n_p {
            return Err(Error::HorizonMismatch { expected: n_p, actual: d_pred.len() });
        }
        let mode = u_prev.mode();
        let u_prev = match u_prev {
            ControlInput::Centralized(v) => vec![*v],
            ControlInput::Localized(v) => v.to_vec(),
        };
        Ok(Self {
            dynamics: Dynamics::new(params),
            x0: x0.to_array(),
            u_prev,
            loads: d_pred.iter().map(Disturbance::total).collect(),
            mode,
            n_p,
            n_sub: cfg.prediction_substeps,
            h: sample_time_s / cfg.prediction_substeps as f64,
            q: cfg.q_voltage,
            r: cfg.r_rate,
            psi: cfg.psi,
            v_sp: cfg.v_sp_v,
            v_lo: cfg.v_sp_v * (1.0 - cfg.v_band_fraction),
            v_hi: cfg.v_sp_v * (1.0 + cfg.v_band_fraction),
            rho: cfg.rho_state,
            current_limits: cfg.current_limits_a,
            du_bound: cfg.du_bound_v,
            u_bound: cfg.u_bound_v,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_p * self.mode.dofs()
    }

    pub fn mode(&self) -> InputMode {
        self.mode
    }

    pub fn horizon(&self) -> usize {
        self.n_p
    }

    pub fn u_bound(&self) -> f64 {
        self.u_bound
    }

    fn offsets(&self, u: &[f64], j: usize) -> [f64; N_DROOP] {
        match self.mode {
            InputMode::Centralized => [u[j]; N_DROOP],
            InputMode::Localized => {
                let mut v = [0.0; N_DROOP];
                v.copy_from_slice(&u[j * N_DROOP..(j + 1) * N_DROOP]);
                v
            }
        }
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::HorizonMismatch { expected: self.dim(), actual: u.len() });
        }
        Ok(())
    }

    /// State part of the stage cost and, optionally, its gradient.
    fn state_cost(&self, x: &StateVector, grad: Option<&mut StateVector>) -> StageCost {
        let v = x[IDX_V_O];
        let ev = v - self.v_sp;
        let viol_v = (v - self.v_hi).max(0.0) - (self.v_lo - v).max(0.0);
        let mut economic = 0.0;
        let mut pen = viol_v * viol_v;
        let mut g = [0.0; N_STATES];
        g[IDX_V_O] = 2.0 * self.q * ev + 2.0 * self.rho * viol_v;
        for s in 0..N_SOURCES {
            let i = x[IDX_DROOP + s];
            economic += self.psi[s] * i * i;
            let over = (i.abs() - self.current_limits[s]).max(0.0);
            pen += over * over;
            g[IDX_DROOP + s] = 2.0 * self.psi[s] * i + 2.0 * self.rho * over * i.signum();
        }
        if let Some(grad) = grad {
            *grad = g;
        }
        StageCost { tracking: self.q * ev * ev, rate: 0.0, economic, penalty: self.rho * pen }
    }

    /// Rate cost of interval `j` (and its soft-bound penalty).
    fn rate_cost(&self, u: &[f64], j: usize) -> (f64, f64) {
        let k = self.mode.dofs();
        let mut rate = 0.0;
        let mut pen = 0.0;
        for c in 0..k {
            let prev = if j == 0 { self.u_prev[c] } else { u[(j - 1) * k + c] };
            let du = u[j * k + c] - prev;
            rate += du * du;
            if let Some(b) = self.du_bound {
                let over = (du.abs() - b).max(0.0);
                pen += over * over;
            }
        }
        (self.r * rate, self.rho * pen)
    }

    fn rate_gradient(&self, u: &[f64], grad: &mut [f64]) {
        let k = self.mode.dofs();
        for j in 0..self.n_p {
            for c in 0..k {
                let prev = if j == 0 { self.u_prev[c] } else { u[(j - 1) * k + c] };
                let du = u[j * k + c] - prev;
                let mut g = 2.0 * self.r * du;
                if let Some(b) = self.du_bound {
                    g += 2.0 * self.rho * (du.abs() - b).max(0.0) * du.signum();
                }
                grad[j * k + c] += g;
                if j > 0 {
                    grad[(j - 1) * k + c] -= g;
                }
            }
        }
    }

    pub fn rollout(&self, u: &[f64]) -> Result<Rollout> {
        self.check_len(u)?;
        let mut x = self.x0;
        let mut states = Vec::with_capacity(self.n_p);
        let mut stages = Vec::with_capacity(self.n_p);
        for j in 0..self.n_p {
            let dv = self.offsets(u, j);
            for _ in 0..self.n_sub {
                x = self.dynamics.rk4(&x, &dv, self.loads[j], self.h)?;
            }
            let mut stage = self.state_cost(&x, None);
            let (rate, pen) = self.rate_cost(u, j);
            stage.rate = rate;
            stage.penalty += pen;
            stages.push(stage);
            states.push(PlantState::from_array(&x));
        }
        let total = stages.iter().map(StageCost::total).sum();
        Ok(Rollout { states, stages, total })
    }

    pub fn cost(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        let mut x = self.x0;
        let mut total = 0.0;
        for j in 0..self.n_p {
            let dv = self.offsets(u, j);
            for _ in 0..self.n_sub {
                x = self.dynamics.rk4(&x, &dv, self.loads[j], self.h)?;
            }
            let (rate, pen) = self.rate_cost(u, j);
            total += self.state_cost(&x, None).total() + rate + pen;
        }
        Ok(total)
    }

    /// Cost and exact gradient of the discretized problem, by propagating
    /// state sensitivities through every RK4 stage alongside the rollout.
    pub fn cost_and_sensitivity_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_len(u)?;
        let m = self.dim();
        let k = self.mode.dofs();
        let dy = &self.dynamics;
        let h = self.h;
        let mut x = self.x0;
        let mut sens = vec![[0.0; N_STATES]; m];
        let mut grad = vec![0.0; m];
        let mut total = 0.0;
        for j in 0..self.n_p {
            let dv = self.offsets(u, j);
            let p = self.loads[j];
            let active = (j + 1) * k;
            let fresh = j * k;
            for _ in 0..self.n_sub {
                let k1 = dy.rhs(&x, &dv, p)?;
                let x2 = crate::plant::axpy(&x, 0.5 * h, &k1);
                let k2 = dy.rhs(&x2, &dv, p)?;
                let x3 = crate::plant::axpy(&x, 0.5 * h, &k2);
                let k3 = dy.rhs(&x3, &dv, p)?;
                let x4 = crate::plant::axpy(&x, h, &k3);
                let k4 = dy.rhs(&x4, &dv, p)?;
                for (col, s) in sens[..active].iter_mut().enumerate() {
                    // df/du for this column: 1/L_i on the driven droop currents
                    let mut b = [0.0; N_STATES];
                    if col >= fresh {
                        match self.mode {
                            InputMode::Centralized => {
                                b[IDX_DROOP..IDX_DROOP + N_DROOP].copy_from_slice(&dy.inv_l_droop);
                            }
                            InputMode::Localized => {
                                let i = col - fresh;
                                b[IDX_DROOP + i] = dy.inv_l_droop[i];
                            }
                        }
                    }
                    let stage = |v: f64, sv: &StateVector| {
                        let mut d = dy.jvp(v, p, sv);
                        for n in 0..N_STATES {
                            d[n] += b[n];
                        }
                        d
                    };
                    let d1 = stage(x[IDX_V_O], s);
                    let d2 = stage(x2[IDX_V_O], &crate::plant::axpy(s, 0.5 * h, &d1));
                    let d3 = stage(x3[IDX_V_O], &crate::plant::axpy(s, 0.5 * h, &d2));
                    let d4 = stage(x4[IDX_V_O], &crate::plant::axpy(s, h, &d3));
                    for n in 0..N_STATES {
                        s[n] += h / 6.0 * (d1[n] + 2.0 * d2[n] + 2.0 * d3[n] + d4[n]);
                    }
                }
                for n in 0..N_STATES {
                    x[n] += h / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]);
                }
            }
            let mut dl = [0.0; N_STATES];
            let sc = self.state_cost(&x, Some(&mut dl));
            let (rate, pen) = self.rate_cost(u, j);
            total += sc.total() + rate + pen;
            for (g, s) in grad[..active].iter_mut().zip(&sens[..active]) {
                *g += dl.iter().zip(s.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        self.rate_gradient(u, &mut grad);
        Ok((total, grad))
    }
}

/// Predict the horizon and evaluate the objective for `useq`.
pub fn rollout(
    x0: &PlantState,
    u_prev: &ControlInput,
    useq: &InputSequence,
    d_pred: &[Disturbance],
    cfg: &OcpConfig,
    params: &PlantParams,
    sample_time_s: f64,
) -> Result<Rollout> {
    let problem = ShootingProblem::new(x0, u_prev, d_pred, cfg, params, sample_time_s)?;
    problem.rollout(useq.values())
}

// ---------------------------------------------------------------------------
// Gradient evaluators

pub const CENTRAL_DIFFERENCE: &str = "central_difference";
pub const FORWARD_SENSITIVITY: &str = "forward_sensitivity";

pub trait GradientMethod: Send + Sync {
    fn name(&self) -> &'static str;

    /// Cost at `u` and its gradient with respect to every decision variable.
    fn cost_and_gradient(&self, problem: &ShootingProblem, u: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Central differences with per-variable step `rel_step * (1 + |u_i|)`.
#[derive(Debug, Clone, Copy)]
pub struct CentralDifference {
    pub rel_step: f64,
}

impl Default for CentralDifference {
    fn default() -> Self {
        Self { rel_step: 1e-4 }
    }
}

impl GradientMethod for CentralDifference {
    fn name(&self) -> &'static str {
        CENTRAL_DIFFERENCE
    }

    fn cost_and_gradient(&self, problem: &ShootingProblem, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let f0 = problem.cost(u)?;
        let mut work = u.to_vec();
        let mut grad = vec![0.0; u.len()];
        for i in 0..u.len() {
            let h = self.rel_step * (1.0 + u[i].abs());
            work[i] = u[i] + h;
            let fp = problem.cost(&work)?;
            work[i] = u[i] - h;
            let fm = problem.cost(&work)?;
            work[i] = u[i];
            grad[i] = (fp - fm) / (2.0 * h);
        }
        Ok((f0, grad))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardSensitivity;

impl GradientMethod for ForwardSensitivity {
    fn name(&self) -> &'static str {
        FORWARD_SENSITIVITY
    }

    fn cost_and_gradient(&self, problem: &ShootingProblem, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        problem.cost_and_sensitivity_gradient(u)
    }
}

pub type GradientFactory = fn() -> Box<dyn GradientMethod>;

pub fn gradient_registry() -> Registry<GradientFactory> {
    let mut r: Registry<GradientFactory> = Registry::new("gradient method");
    r.register(CENTRAL_DIFFERENCE, || Box::new(CentralDifference::default()));
    r.register(FORWARD_SENSITIVITY, || Box::new(ForwardSensitivity));
    r
}

// ---------------------------------------------------------------------------
// Disturbance forecasts

pub const HOLD: &str = "hold";
pub const PREVIEW: &str = "preview";

pub trait ForecastPolicy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Disturbance for each of the `n_p` intervals starting at `t_now`.
    fn forecast(
        &self,
        d_meas: &Disturbance,
        t_now: f64,
        sample_time_s: f64,
        n_p: usize,
        profile: &LoadProfile,
    ) -> Vec<Disturbance>;
}

/// Zero-order hold of the last measured load.
#[derive(Debug, Clone, Copy, Default)]
pub struct HoldForecast;

impl ForecastPolicy for HoldForecast {
    fn name(&self) -> &'static str {
        HOLD
    }

    fn forecast(&self, d_meas: &Disturbance, _: f64, _: f64, n_p: usize, _: &LoadProfile) -> Vec<Disturbance> {
        vec![*d_meas; n_p]
    }
}

/// Exact knowledge of the future load schedule.
#[derive(Debug, Clone, Copy, Default)]
pub struct PreviewForecast;

impl ForecastPolicy for PreviewForecast {
    fn name(&self) -> &'static str {
        PREVIEW
    }

    fn forecast(
        &self,
        d_meas: &Disturbance,
        t_now: f64,
        sample_time_s: f64,
        n_p: usize,
        profile: &LoadProfile,
    ) -> Vec<Disturbance> {
        (0..n_p)
            .map(|j| if j == 0 { *d_meas } else { profile.load_during(t_now + j as f64 * sample_time_s) })
            .collect()
    }
}

pub type ForecastFactory = fn() -> Box<dyn ForecastPolicy>;

pub fn forecast_registry() -> Registry<ForecastFactory> {
    let mut r: Registry<ForecastFactory> = Registry::new("forecast policy");
    r.register(HOLD, || Box::new(HoldForecast));
    r.register(PREVIEW, || Box::new(PreviewForecast));
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{equilibrium, restoring_offset};

    fn params() -> PlantParams {
        PlantParams::default()
    }

    fn quiet(cfg: OcpConfig) -> OcpConfig {
        OcpConfig { psi: [0.0; N_SOURCES], ..cfg }
    }

    #[test]
    fn equilibrium_rollout_costs_nothing() {
        let d = Disturbance::new(6e6, 0.0);
        let dv = restoring_offset(6000.0, &d, &params());
        let u = ControlInput::Centralized(dv);
        let x0 = equilibrium(&u, &d, &params()).unwrap();
        let cfg = quiet(OcpConfig::default());
        let useq = InputSequence::constant(&u, cfg.horizon_steps);
        let r = rollout(&x0, &u, &useq, &[d; 10], &cfg, &params(), 0.05).unwrap();
        assert!(r.total < 1e-6, "{}", r.total);
        assert_eq!(r.states.len(), 10);
    }

    #[test]
    fn pure_rate_cost() {
        let cfg = OcpConfig { horizon_steps: 1, q_voltage: 0.0, r_rate: 1.0, ..quiet(OcpConfig::default()) };
        let x0 = PlantState { v_o: 6000.0, ..Default::default() };
        let useq = InputSequence::new(InputMode::Centralized, vec![10.0]).unwrap();
        let r = rollout(
            &x0,
            &ControlInput::Centralized(0.0),
            &useq,
            &[Disturbance::default()],
            &cfg,
            &params(),
            0.05,
        )
        .unwrap();
        assert!((r.total - 100.0).abs() < 1e-12);
        let p = ShootingProblem::new(
            &x0,
            &ControlInput::Centralized(0.0),
            &[Disturbance::default()],
            &cfg,
            &params(),
            0.05,
        )
        .unwrap();
        for g in [&CentralDifference::default() as &dyn GradientMethod, &ForwardSensitivity] {
            let (_, grad) = g.cost_and_gradient(&p, &[10.0]).unwrap();
            assert!((grad[0] - 20.0).abs() < 1e-6, "{}: {}", g.name(), grad[0]);
        }
    }

    #[test]
    fn economic_term_adds_cost() {
        let d = Disturbance::new(6e6, 0.0);
        let u = ControlInput::Centralized(0.0);
        let x0 = equilibrium(&u, &d, &params()).unwrap();
        let useq = InputSequence::constant(&ControlInput::Centralized(5.0), 10);
        let with = rollout(&x0, &u, &useq, &[d; 10], &OcpConfig::default(), &params(), 0.05).unwrap();
        let without =
            rollout(&x0, &u, &useq, &[d; 10], &quiet(OcpConfig::default()), &params(), 0.05).unwrap();
        assert!(with.total > without.total);
    }

    #[test]
    fn cost_splits_by_term() {
        let d = Disturbance::new(6e6, 1e6);
        let u = ControlInput::Localized([3.0, -4.0, 10.0, 20.0]);
        let x0 = equilibrium(&ControlInput::Centralized(0.0), &Disturbance::new(6e6, 0.0), &params()).unwrap();
        let useq = InputSequence::new(
            InputMode::Localized,
            (0..40).map(|i| (i as f64 * 1.7).sin() * 40.0).collect(),
        )
        .unwrap();
        let base = OcpConfig { rho_state: 0.0, ..OcpConfig::default() };
        let eval = |q, r, psi| {
            let cfg = OcpConfig { q_voltage: q, r_rate: r, psi, ..base.clone() };
            rollout(&x0, &u, &useq, &[d; 10], &cfg, &params(), 0.05).unwrap().total
        };
        let full = eval(1.0, 0.001, base.psi);
        let parts = eval(1.0, 0.0, [0.0; 6]) + eval(0.0, 0.001, [0.0; 6]) + eval(0.0, 0.0, base.psi);
        assert!((full - parts).abs() <= 1e-10 * full, "{full} vs {parts}");
    }

    #[test]
    fn band_penalty_only_outside_band() {
        let cfg = OcpConfig { q_voltage: 0.0, r_rate: 0.0, ..quiet(OcpConfig::default()) };
        let p = ShootingProblem::new(
            &PlantState { v_o: 6000.0, ..Default::default() },
            &ControlInput::Centralized(0.0),
            &[Disturbance::default()],
            &OcpConfig { horizon_steps: 1, ..cfg },
            &params(),
            0.05,
        )
        .unwrap();
        let inside = PlantState { v_o: 6239.0, ..Default::default() }.to_array();
        let below = PlantState { v_o: 5759.0, ..Default::default() }.to_array();
        assert_eq!(p.state_cost(&inside, None).penalty, 0.0);
        assert!((p.state_cost(&below, None).penalty - 1e3).abs() < 1e-9);
    }

    #[test]
    fn shift_drops_first_and_repeats_last() {
        let s = InputSequence::new(InputMode::Centralized, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(warm_start_shift(&s).values(), &[2.0, 3.0, 3.0]);
        let c = InputSequence::constant(&ControlInput::Localized([1.0, 2.0, 3.0, 4.0]), 3);
        assert_eq!(warm_start_shift(&c), c);
        assert_eq!(c.entry(2), ControlInput::Localized([1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn preview_sees_future_and_hold_does_not() {
        let profile = crate::scenario::default_profile();
        let d = profile.load_at(2.8);
        let hold = HoldForecast.forecast(&d, 2.8, 0.05, 10, &profile);
        assert!(hold.iter().all(|x| *x == d));
        let prev = PreviewForecast.forecast(&d, 2.8, 0.05, 10, &profile);
        assert_eq!(prev[3].p_ppl_w, 0.0);
        assert_eq!(prev[4].p_ppl_w, 2e6);
    }

    #[test]
    fn unknown_gradient_rejected() {
        let cfg = OcpConfig { gradient: "adjoint".into(), ..OcpConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::UnknownStrategy { .. })));
    }
}
