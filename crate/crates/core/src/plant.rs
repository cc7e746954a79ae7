//! Reduced-order MVDC bus model.
//!
//! Four droop-controlled sources (two generators, two batteries) and two
//! supercapacitors with capacitive droop feed one equivalent bus capacitor.
//! Cable impedances are neglected, so every source sits in parallel on the bus:
//!
//! ```text
//! C_eq dV_o/dt  = sum(I_k) - (P_cpl + P_ppl) / V_o
//! L_i  dI_i/dt  = V_ref - R_i I_i - V_o + dV_i          (SGa, SGb, Ba, Bb)
//! L_j  dI_j/dt  = V_ref - R_j I_j - V_Cj - V_o          (SCa, SCb)
//! C_j  dV_Cj/dt = I_j
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_STATES: usize = 9;
pub const N_DROOP: usize = 4;
pub const N_SC: usize = 2;
pub const N_SOURCES: usize = N_DROOP + N_SC;

pub const DROOP_NAMES: [&str; N_DROOP] = ["SGa", "SGb", "Ba", "Bb"];
pub const SOURCE_NAMES: [&str; N_SOURCES] = ["SGa", "SGb", "Ba", "Bb", "SCa", "SCb"];

/// Index of the bus voltage in a [`StateVector`].
pub const IDX_V_O: usize = 0;
/// First droop-source current; droop currents occupy `1..5`.
pub const IDX_DROOP: usize = 1;
/// First SC current; SC currents occupy `5..7`.
pub const IDX_SC: usize = 5;
/// First SC virtual-capacitor voltage; `7..9`.
pub const IDX_VC: usize = 7;

/// Flat state layout used by the integrators and sensitivities.
pub type StateVector = [f64; N_STATES];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroopUnit {
    pub r_ohm: f64,
    pub l_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScUnit {
    pub r_ohm: f64,
    pub l_h: f64,
    /// Virtual capacitance of the capacitive droop law.
    pub c_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    pub c_eq_f: f64,
    pub v_ref_v: f64,
    /// Guard on the `1/V_o` load term.
    #[serde(default = "default_v_floor")]
    pub v_floor_v: f64,
    pub sga: DroopUnit,
    pub sgb: DroopUnit,
    pub ba: DroopUnit,
    pub bb: DroopUnit,
    pub sca: ScUnit,
    pub scb: ScUnit,
}

fn default_v_floor() -> f64 {
    1.0
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            c_eq_f: 0.01,
            v_ref_v: 6000.0,
            v_floor_v: default_v_floor(),
            sga: DroopUnit { r_ohm: 0.05, l_h: 0.001 },
            sgb: DroopUnit { r_ohm: 0.1, l_h: 0.001 },
            ba: DroopUnit { r_ohm: 0.225, l_h: 0.0008 },
            bb: DroopUnit { r_ohm: 0.45, l_h: 0.0008 },
            sca: ScUnit { r_ohm: 0.05, l_h: 0.0004, c_f: 5.0 },
            scb: ScUnit { r_ohm: 0.05, l_h: 0.0004, c_f: 10.0 },
        }
    }
}

impl PlantParams {
    pub fn droop_units(&self) -> [&DroopUnit; N_DROOP] {
        [&self.sga, &self.sgb, &self.ba, &self.bb]
    }

    pub fn sc_units(&self) -> [&ScUnit; N_SC] {
        [&self.sca, &self.scb]
    }

    /// Sum of droop conductances `1/R_i` over the four droop sources.
    pub fn droop_conductance(&self) -> f64 {
        self.droop_units().iter().map(|u| 1.0 / u.r_ohm).sum()
    }

    pub fn validate(&self) -> Result<()> {
        positive("plant.c_eq_f", self.c_eq_f)?;
        positive("plant.v_ref_v", self.v_ref_v)?;
        positive("plant.v_floor_v", self.v_floor_v)?;
        for (name, unit) in ["sga", "sgb", "ba", "bb"].iter().zip(self.droop_units()) {
            positive(&format!("plant.{name}.r_ohm"), unit.r_ohm)?;
            positive(&format!("plant.{name}.l_h"), unit.l_h)?;
        }
        for (name, unit) in ["sca", "scb"].iter().zip(self.sc_units()) {
            positive(&format!("plant.{name}.r_ohm"), unit.r_ohm)?;
            positive(&format!("plant.{name}.l_h"), unit.l_h)?;
            positive(&format!("plant.{name}.c_f"), unit.c_f)?;
        }
        Ok(())
    }
}

pub(crate) fn positive(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be finite and > 0, got {value}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantState {
    pub v_o: f64,
    pub i_sga: f64,
    pub i_sgb: f64,
    pub i_ba: f64,
    pub i_bb: f64,
    pub i_sca: f64,
    pub i_scb: f64,
    pub v_ca: f64,
    pub v_cb: f64,
}

impl PlantState {
    pub fn to_array(&self) -> StateVector {
        [
            self.v_o, self.i_sga, self.i_sgb, self.i_ba, self.i_bb, self.i_sca, self.i_scb,
            self.v_ca, self.v_cb,
        ]
    }

    pub fn from_array(x: &StateVector) -> Self {
        Self {
            v_o: x[0],
            i_sga: x[1],
            i_sgb: x[2],
            i_ba: x[3],
            i_bb: x[4],
            i_sca: x[5],
            i_scb: x[6],
            v_ca: x[7],
            v_cb: x[8],
        }
    }

    /// Source currents in [`SOURCE_NAMES`] order.
    pub fn source_currents(&self) -> [f64; N_SOURCES] {
        [self.i_sga, self.i_sgb, self.i_ba, self.i_bb, self.i_sca, self.i_scb]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Voltage restoration signal for the droop sources. SCs never receive one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlInput {
    /// One offset broadcast to all four droop sources.
    Centralized(f64),
    /// One offset per droop source, in [`DROOP_NAMES`] order.
    Localized([f64; N_DROOP]),
}

impl ControlInput {
    pub fn zero(mode: InputMode) -> Self {
        match mode {
            InputMode::Centralized => ControlInput::Centralized(0.0),
            InputMode::Localized => ControlInput::Localized([0.0; N_DROOP]),
        }
    }

    pub fn mode(&self) -> InputMode {
        match self {
            ControlInput::Centralized(_) => InputMode::Centralized,
            ControlInput::Localized(_) => InputMode::Localized,
        }
    }

    pub fn per_unit(&self) -> [f64; N_DROOP] {
        match *self {
            ControlInput::Centralized(v) => [v; N_DROOP],
            ControlInput::Localized(v) => v,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.per_unit().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Centralized,
    Localized,
}

impl InputMode {
    /// Decision variables per control interval.
    pub fn dofs(self) -> usize {
        match self {
            InputMode::Centralized => 1,
            InputMode::Localized => N_DROOP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Disturbance {
    pub p_cpl_w: f64,
    pub p_ppl_w: f64,
}

impl Disturbance {
    pub fn new(p_cpl_w: f64, p_ppl_w: f64) -> Self {
        Self { p_cpl_w, p_ppl_w }
    }

    pub fn total(&self) -> f64 {
        self.p_cpl_w + self.p_ppl_w
    }
}

/// Parameters unpacked into reciprocal form for the inner loops.
#[derive(Debug, Clone, Copy)]
pub struct Dynamics {
    pub v_ref: f64,
    pub v_floor: f64,
    pub inv_c_eq: f64,
    pub r_droop: [f64; N_DROOP],
    pub inv_l_droop: [f64; N_DROOP],
    pub r_sc: [f64; N_SC],
    pub inv_l_sc: [f64; N_SC],
    pub inv_c_sc: [f64; N_SC],
}

impl Dynamics {
    pub fn new(p: &PlantParams) -> Self {
        let d = p.droop_units();
        let s = p.sc_units();
        Self {
            v_ref: p.v_ref_v,
            v_floor: p.v_floor_v,
            inv_c_eq: 1.0 / p.c_eq_f,
            r_droop: d.map(|u| u.r_ohm),
            inv_l_droop: d.map(|u| 1.0 / u.l_h),
            r_sc: s.map(|u| u.r_ohm),
            inv_l_sc: s.map(|u| 1.0 / u.l_h),
            inv_c_sc: s.map(|u| 1.0 / u.c_f),
        }
    }

    #[inline]
    pub fn check_voltage(&self, v_o: f64) -> Result<()> {
        // `!(v > floor)` also rejects NaN
        if !(v_o > self.v_floor) {
            return Err(Error::VoltageCollapse { v_o, v_floor: self.v_floor });
        }
        Ok(())
    }

    #[inline]
    pub fn rhs(&self, x: &StateVector, dv: &[f64; N_DROOP], p_load: f64) -> Result<StateVector> {
        let v_o = x[IDX_V_O];
        self.check_voltage(v_o)?;
        let mut dx = [0.0; N_STATES];
        let mut i_sum = 0.0;
        for i in 0..N_DROOP {
            let cur = x[IDX_DROOP + i];
            i_sum += cur;
            dx[IDX_DROOP + i] =
                (self.v_ref - self.r_droop[i] * cur - v_o + dv[i]) * self.inv_l_droop[i];
        }
        for j in 0..N_SC {
            let cur = x[IDX_SC + j];
            i_sum += cur;
            dx[IDX_SC + j] =
                (self.v_ref - self.r_sc[j] * cur - x[IDX_VC + j] - v_o) * self.inv_l_sc[j];
            dx[IDX_VC + j] = cur * self.inv_c_sc[j];
        }
        dx[IDX_V_O] = (i_sum - p_load / v_o) * self.inv_c_eq;
        Ok(dx)
    }

    /// Jacobian-vector product `(df/dx) s` evaluated at bus voltage `v_o`.
    ///
    /// The only state-dependent entry is the load term `P / V_o^2`.
    #[inline]
    pub fn jvp(&self, v_o: f64, p_load: f64, s: &StateVector) -> StateVector {
        let mut out = [0.0; N_STATES];
        let mut i_sum = 0.0;
        for i in 0..N_DROOP {
            i_sum += s[IDX_DROOP + i];
            out[IDX_DROOP + i] =
                (-s[IDX_V_O] - self.r_droop[i] * s[IDX_DROOP + i]) * self.inv_l_droop[i];
        }
        for j in 0..N_SC {
            i_sum += s[IDX_SC + j];
            out[IDX_SC + j] = (-s[IDX_V_O] - self.r_sc[j] * s[IDX_SC + j] - s[IDX_VC + j])
                * self.inv_l_sc[j];
            out[IDX_VC + j] = s[IDX_SC + j] * self.inv_c_sc[j];
        }
        out[IDX_V_O] = (i_sum + p_load / (v_o * v_o) * s[IDX_V_O]) * self.inv_c_eq;
        out
    }

    /// One classical RK4 step with input and load held over the step.
    #[inline]
    pub fn rk4(
        &self,
        x: &StateVector,
        dv: &[f64; N_DROOP],
        p_load: f64,
        h: f64,
    ) -> Result<StateVector> {
        let k1 = self.rhs(x, dv, p_load)?;
        let k2 = self.rhs(&axpy(x, 0.5 * h, &k1), dv, p_load)?;
        let k3 = self.rhs(&axpy(x, 0.5 * h, &k2), dv, p_load)?;
        let k4 = self.rhs(&axpy(x, h, &k3), dv, p_load)?;
        let mut out = *x;
        for n in 0..N_STATES {
            out[n] += h / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]);
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn axpy(x: &StateVector, a: f64, y: &StateVector) -> StateVector {
    let mut out = *x;
    for n in 0..N_STATES {
        out[n] += a * y[n];
    }
    out
}

/// Time derivative of the state. Fails with [`Error::VoltageCollapse`] when
/// `v_o` is at or below the voltage floor.
pub fn rhs(
    state: &PlantState,
    u: &ControlInput,
    d: &Disturbance,
    params: &PlantParams,
) -> Result<StateVector> {
    Dynamics::new(params).rhs(&state.to_array(), &u.per_unit(), d.total())
}

pub fn step_rk4(
    state: &PlantState,
    u: &ControlInput,
    d: &Disturbance,
    params: &PlantParams,
    h: f64,
) -> Result<PlantState> {
    let x = Dynamics::new(params).rk4(&state.to_array(), &u.per_unit(), d.total(), h)?;
    Ok(PlantState::from_array(&x))
}

/// Advance `n_sub` RK4 steps of size `h` with constant input and load.
pub fn integrate(
    state: &PlantState,
    u: &ControlInput,
    d: &Disturbance,
    params: &PlantParams,
    h: f64,
    n_sub: usize,
) -> Result<PlantState> {
    let dyn_ = Dynamics::new(params);
    let dv = u.per_unit();
    let p = d.total();
    let mut x = state.to_array();
    for _ in 0..n_sub {
        x = dyn_.rk4(&x, &dv, p, h)?;
    }
    Ok(PlantState::from_array(&x))
}

/// Analytic steady state for a constant input and load.
///
/// SC currents vanish, each virtual capacitor holds `V_ref - V_o`, and the
/// droop currents satisfy `G V_o^2 - A V_o + P = 0` with
/// `G = sum(1/R_i)` and `A = sum((V_ref + dV_i)/R_i)`. The root closest to
/// `V_ref` is returned.
pub fn equilibrium(u: &ControlInput, d: &Disturbance, params: &PlantParams) -> Result<PlantState> {
    let dv = u.per_unit();
    let units = params.droop_units();
    let g: f64 = units.iter().map(|u| 1.0 / u.r_ohm).sum();
    let a: f64 = units
        .iter()
        .zip(dv.iter())
        .map(|(unit, dv)| (params.v_ref_v + dv) / unit.r_ohm)
        .sum();
    let p = d.total();
    let disc = a * a - 4.0 * g * p;
    if disc < 0.0 {
        return Err(Error::NoEquilibrium { load_w: p });
    }
    let sq = disc.sqrt();
    // numerically stable pair of roots
    let hi = (a + sq) / (2.0 * g);
    let lo = if hi != 0.0 { p / (g * hi) } else { 0.0 };
    let v_o = if (hi - params.v_ref_v).abs() <= (lo - params.v_ref_v).abs() { hi } else { lo };
    if !(v_o > params.v_floor_v) {
        return Err(Error::NoEquilibrium { load_w: p });
    }
    let cur = |i: usize| (params.v_ref_v - v_o + dv[i]) / units[i].r_ohm;
    Ok(PlantState {
        v_o,
        i_sga: cur(0),
        i_sgb: cur(1),
        i_ba: cur(2),
        i_bb: cur(3),
        i_sca: 0.0,
        i_scb: 0.0,
        v_ca: params.v_ref_v - v_o,
        v_cb: params.v_ref_v - v_o,
    })
}

/// Common restoration offset that places the equilibrium bus voltage at `v_target`.
pub fn restoring_offset(v_target: f64, d: &Disturbance, params: &PlantParams) -> f64 {
    // sum_i (V_ref - V + dV)/R_i = P/V  =>  dV = P/(V G) - (V_ref - V)
    d.total() / (v_target * params.droop_conductance()) - (params.v_ref_v - v_target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> PlantParams {
        PlantParams::default()
    }

    #[test]
    fn equilibrium_at_reference_has_zero_derivative() {
        let x = PlantState { v_o: 6000.0, ..Default::default() };
        let dx = rhs(&x, &ControlInput::Centralized(0.0), &Disturbance::default(), &table()).unwrap();
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_current_substitution() {
        let x = PlantState { v_o: 6000.0, i_sga: 100.0, ..Default::default() };
        let dx = rhs(&x, &ControlInput::Centralized(0.0), &Disturbance::default(), &table()).unwrap();
        assert!((dx[IDX_V_O] - 10_000.0).abs() < 1e-9);
        assert!((dx[IDX_DROOP] + 5000.0).abs() < 1e-9);
        assert!(dx[IDX_DROOP + 1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn collapse_below_floor() {
        let x = PlantState { v_o: 0.5, ..Default::default() };
        let err = rhs(&x, &ControlInput::Centralized(0.0), &Disturbance::default(), &table());
        assert!(matches!(err, Err(Error::VoltageCollapse { .. })));
        let nan = PlantState { v_o: f64::NAN, ..Default::default() };
        assert!(rhs(&nan, &ControlInput::Centralized(0.0), &Disturbance::default(), &table()).is_err());
    }

    #[test]
    fn equilibrium_no_load() {
        let eq = equilibrium(&ControlInput::Centralized(0.0), &Disturbance::default(), &table()).unwrap();
        assert_eq!(eq.v_o, 6000.0);
        assert!(eq.source_currents().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn equilibrium_six_megawatt_droop() {
        let eq = equilibrium(&ControlInput::Centralized(0.0), &Disturbance::new(6e6, 0.0), &table())
            .unwrap();
        assert!((eq.v_o - 5972.6).abs() < 0.05, "{}", eq.v_o);
        assert!((eq.i_sga - 548.0).abs() < 0.5);
        assert!((eq.i_sgb - 274.0).abs() < 0.5);
        assert!((eq.i_ba - 121.8).abs() < 0.1);
        assert!((eq.i_bb - 60.9).abs() < 0.1);
    }

    #[test]
    fn restoring_offset_hits_reference() {
        let d = Disturbance::new(6e6, 0.0);
        let dv = restoring_offset(6000.0, &d, &table());
        assert!((dv - 27.2727).abs() < 1e-3);
        let eq = equilibrium(&ControlInput::Centralized(dv), &d, &table()).unwrap();
        assert!((eq.v_o - 6000.0).abs() < 1e-9);
        let total: f64 = eq.source_currents().iter().sum();
        assert!((total - 1000.0).abs() < 1e-6);
        assert!((eq.i_sga - 545.45).abs() < 0.01);
        assert!((eq.i_sgb - 272.73).abs() < 0.01);
        assert!((eq.i_ba - 121.21).abs() < 0.01);
        assert!((eq.i_bb - 60.61).abs() < 0.01);
    }

    #[test]
    fn overload_has_no_equilibrium() {
        let err = equilibrium(&ControlInput::Centralized(0.0), &Disturbance::new(1e9, 0.0), &table());
        assert!(matches!(err, Err(Error::NoEquilibrium { .. })));
    }

    #[test]
    fn invalid_params_name_the_field() {
        let mut p = table();
        p.bb.r_ohm = -0.45;
        match p.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "plant.bb.r_ohm"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jvp_matches_finite_difference() {
        let dynm = Dynamics::new(&table());
        let x = [5980.0, 500.0, 260.0, 120.0, 70.0, 30.0, -20.0, 15.0, 12.0];
        let s = [0.3, -1.0, 0.5, 2.0, -0.7, 0.1, 0.9, -0.2, 0.4];
        let dv = [5.0, 5.0, 5.0, 5.0];
        let p = 6.5e6;
        let eps = 1e-4;
        let fp = dynm.rhs(&axpy(&x, eps, &s), &dv, p).unwrap();
        let fm = dynm.rhs(&axpy(&x, -eps, &s), &dv, p).unwrap();
        let j = dynm.jvp(x[0], p, &s);
        for n in 0..N_STATES {
            let fd = (fp[n] - fm[n]) / (2.0 * eps);
            assert!((fd - j[n]).abs() <= 1e-6 * (1.0 + fd.abs()), "row {n}: {fd} vs {}", j[n]);
        }
    }
}
