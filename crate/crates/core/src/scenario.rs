//! Load profiles and complete case configurations.
//!
//! A scenario file is TOML mirroring [`CaseConfig`] field for field; every
//! physical quantity carries its unit in the key name.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::ControllerKind;
use crate::error::{Error, Result};
use crate::ocp::OcpConfig;
use crate::plant::{positive, Disturbance, PlantParams, PlantState};

const INTERVAL_NUDGE_S: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CplSegment {
    pub t_start_s: f64,
    pub power_w: f64,
}

/// Rectangular pulsed load, active on `[t_start_s, t_start_s + duration_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub t_start_s: f64,
    pub duration_s: f64,
    pub magnitude_w: f64,
}

impl Pulse {
    pub fn t_end_s(&self) -> f64 {
        self.t_start_s + self.duration_s
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start_s && t < self.t_end_s()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadProfile {
    pub cpl: Vec<CplSegment>,
    #[serde(default)]
    pub ppl: Vec<Pulse>,
}

impl LoadProfile {
    pub fn constant(power_w: f64) -> Self {
        Self { cpl: vec![CplSegment { t_start_s: 0.0, power_w }], ppl: Vec::new() }
    }

    /// Load at time `t`. Times before the first segment take the first
    /// segment's power.
    pub fn load_at(&self, t: f64) -> Disturbance {
        let p_cpl = self
            .cpl
            .iter()
            .take_while(|s| s.t_start_s <= t)
            .last()
            .or(self.cpl.first())
            .map_or(0.0, |s| s.power_w);
        let p_ppl = self.ppl.iter().filter(|p| p.contains(t)).map(|p| p.magnitude_w).sum();
        Disturbance::new(p_cpl, p_ppl)
    }

    /// Load held over an interval starting at `t_start`. Grid times such as
    /// `k * t_s` carry rounding error, so the sample is taken a nanosecond in.
    pub fn load_during(&self, t_start: f64) -> Disturbance {
        self.load_at(t_start + INTERVAL_NUDGE_S)
    }

    /// Sorted, de-duplicated times at which the load changes, excluding `t = 0`.
    pub fn event_times(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .cpl
            .iter()
            .map(|s| s.t_start_s)
            .chain(self.ppl.iter().flat_map(|p| [p.t_start_s, p.t_end_s()]))
            .filter(|t| *t > 0.0)
            .collect();
        ev.sort_by(f64::total_cmp);
        ev.dedup();
        ev
    }

    /// Exact integral of total demand over `[0, t_final]`.
    pub fn energy_j(&self, t_final: f64) -> f64 {
        let mut e = 0.0;
        for (k, seg) in self.cpl.iter().enumerate() {
            let a = seg.t_start_s.max(0.0).min(t_final);
            let b = self.cpl.get(k + 1).map_or(t_final, |n| n.t_start_s).min(t_final);
            e += seg.power_w * (b - a).max(0.0);
        }
        for p in &self.ppl {
            let a = p.t_start_s.clamp(0.0, t_final);
            let b = p.t_end_s().clamp(0.0, t_final);
            e += p.magnitude_w * (b - a);
        }
        e
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .cpl
            .first()
            .ok_or_else(|| Error::invalid("profile.cpl", "at least one segment is required"))?;
        if first.t_start_s != 0.0 {
            return Err(Error::invalid("profile.cpl[0].t_start_s", "first segment must start at 0"));
        }
        for (k, seg) in self.cpl.iter().enumerate() {
            if !(seg.power_w >= 0.0 && seg.power_w.is_finite()) {
                return Err(Error::invalid(format!("profile.cpl[{k}].power_w"), "must be >= 0"));
            }
            if k > 0 && !(seg.t_start_s > self.cpl[k - 1].t_start_s) {
                return Err(Error::invalid(
                    format!("profile.cpl[{k}].t_start_s"),
                    "segments must be strictly increasing in time",
                ));
            }
        }
        for (k, p) in self.ppl.iter().enumerate() {
            positive(&format!("profile.ppl[{k}].duration_s"), p.duration_s)?;
            if !(p.magnitude_w >= 0.0 && p.magnitude_w.is_finite()) {
                return Err(Error::invalid(format!("profile.ppl[{k}].magnitude_w"), "must be >= 0"));
            }
            if !(p.t_start_s >= 0.0 && p.t_start_s.is_finite()) {
                return Err(Error::invalid(format!("profile.ppl[{k}].t_start_s"), "must be >= 0"));
            }
        }
        check_overlap(&self.ppl)
    }
}

fn check_overlap(pulses: &[Pulse]) -> Result<()> {
    let mut sorted: Vec<&Pulse> = pulses.iter().collect();
    sorted.sort_by(|a, b| a.t_start_s.total_cmp(&b.t_start_s));
    for w in sorted.windows(2) {
        if w[1].t_start_s < w[0].t_end_s() {
            return Err(Error::RejectOverlap {
                first_start_s: w[0].t_start_s,
                second_start_s: w[1].t_start_s,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    /// Registered controller name, see [`crate::controller::ControllerRegistry`].
    pub controller: String,
    pub t_final_s: f64,
    pub sample_time_s: f64,
    /// RK4 substeps per sample for the plant integration.
    #[serde(default = "default_plant_substeps")]
    pub plant_substeps: usize,
    /// Overrides the default start at the zero-offset equilibrium.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<PlantState>,
    pub plant: PlantParams,
    pub profile: LoadProfile,
    #[serde(default)]
    pub ocp: OcpConfig,
}

fn default_plant_substeps() -> usize {
    50
}

impl CaseConfig {
    pub fn n_steps(&self) -> usize {
        (self.t_final_s / self.sample_time_s).round() as usize
    }

    pub fn plant_step(&self) -> f64 {
        self.sample_time_s / self.plant_substeps as f64
    }

    pub fn with_controller(mut self, name: impl Into<String>) -> Self {
        self.controller = name.into();
        self
    }

    pub fn with_profile(mut self, profile: LoadProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn validate(&self) -> Result<()> {
        positive("sample_time_s", self.sample_time_s)?;
        positive("t_final_s", self.t_final_s)?;
        let ratio = self.t_final_s / self.sample_time_s;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::invalid("t_final_s", "must be a whole multiple of sample_time_s"));
        }
        if self.plant_substeps == 0 {
            return Err(Error::invalid("plant_substeps", "must be >= 1"));
        }
        if let Some(x) = &self.initial_state {
            if !x.is_finite() || !(x.v_o > self.plant.v_floor_v) {
                return Err(Error::invalid("initial_state", "must be finite with v_o above the floor"));
            }
        }
        self.plant.validate()?;
        self.profile.validate()?;
        self.ocp.validate()
    }

    /// Digest of everything that defines the physical experiment: plant,
    /// profile, timing and initial state, but not the controller or its tuning.
    pub fn scenario_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            t_final_s: f64,
            sample_time_s: f64,
            plant_substeps: usize,
            initial_state: &'a Option<PlantState>,
            plant: &'a PlantParams,
            profile: &'a LoadProfile,
        }
        let key = Key {
            t_final_s: self.t_final_s,
            sample_time_s: self.sample_time_s,
            plant_substeps: self.plant_substeps,
            initial_state: &self.initial_state,
            plant: &self.plant,
            profile: &self.profile,
        };
        let text = toml::to_string(&key).expect("scenario key serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: CaseConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

/// Stand-in for the case-study load profile: a CPL step from 4 MW to 6 MW at
/// 8 s and four rectangular pulses.
pub fn default_profile() -> LoadProfile {
    LoadProfile {
        cpl: vec![
            CplSegment { t_start_s: 0.0, power_w: 4e6 },
            CplSegment { t_start_s: 8.0, power_w: 6e6 },
        ],
        ppl: vec![
            Pulse { t_start_s: 3.0, duration_s: 1.0, magnitude_w: 2e6 },
            Pulse { t_start_s: 5.0, duration_s: 0.5, magnitude_w: 2e6 },
            Pulse { t_start_s: 12.0, duration_s: 1.0, magnitude_w: 2e6 },
            Pulse { t_start_s: 15.0, duration_s: 1.0, magnitude_w: 1e6 },
        ],
    }
}

pub fn default_scenario() -> CaseConfig {
    CaseConfig {
        controller: ControllerKind::NmpcCentralized.name().to_string(),
        t_final_s: 20.0,
        sample_time_s: 0.05,
        plant_substeps: default_plant_substeps(),
        initial_state: None,
        plant: PlantParams::default(),
        profile: default_profile(),
        ocp: OcpConfig::default(),
    }
}

/// One grid point of a pulse sweep.
#[derive(Debug, Clone)]
pub struct SweepVariant {
    pub magnitude_w: f64,
    pub duration_s: f64,
    pub config: Result<CaseConfig>,
}

/// Cartesian product of pulse magnitudes and durations. Every pulse of the
/// base profile takes the given magnitude and duration and keeps its start.
/// Variants whose pulses would overlap carry [`Error::RejectOverlap`].
pub fn sweep_grid(base: &CaseConfig, magnitudes: &[f64], durations: &[f64]) -> Result<Vec<SweepVariant>> {
    if magnitudes.is_empty() || durations.is_empty() {
        return Err(Error::invalid("sweep", "magnitude and duration lists must be non-empty"));
    }
    let mut out = Vec::with_capacity(magnitudes.len() * durations.len());
    for &m in magnitudes {
        for &dur in durations {
            let mut cfg = base.clone();
            for p in &mut cfg.profile.ppl {
                p.magnitude_w = m;
                p.duration_s = dur;
            }
            let config = cfg.profile.validate().map(|_| cfg);
            out.push(SweepVariant { magnitude_w: m, duration_s: dur, config });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_segment_no_pulses() {
        let p = LoadProfile::constant(4e6);
        assert_eq!(p.load_at(7.0), Disturbance::new(4e6, 0.0));
    }

    #[test]
    fn pulse_interval_is_half_open() {
        let p = LoadProfile {
            cpl: vec![CplSegment { t_start_s: 0.0, power_w: 0.0 }],
            ppl: vec![Pulse { t_start_s: 3.0, duration_s: 1.0, magnitude_w: 2e6 }],
        };
        assert_eq!(p.load_at(3.0).p_ppl_w, 2e6);
        assert_eq!(p.load_at(4.0).p_ppl_w, 0.0);
        assert_eq!(p.load_at(2.999).p_ppl_w, 0.0);
    }

    #[test]
    fn default_profile_lookups() {
        let p = default_profile();
        assert_eq!(p.load_at(12.5), Disturbance::new(6e6, 2e6));
        assert_eq!(p.load_at(3.2).total(), 6e6);
        assert_eq!(p.load_at(10.0).total(), 6e6);
        assert_eq!(p.load_at(-1.0).total(), 4e6);
        assert_eq!(p.load_at(25.0).total(), 6e6);
        default_scenario().validate().unwrap();
    }

    #[test]
    fn event_times_of_default() {
        let ev = default_profile().event_times();
        assert_eq!(ev, vec![3.0, 4.0, 5.0, 5.5, 8.0, 12.0, 13.0, 15.0, 16.0]);
    }

    #[test]
    fn sweep_cardinality_and_overlap() {
        let base = default_scenario();
        let one = sweep_grid(&base, &[1e6], &[0.5]).unwrap();
        assert_eq!(one.len(), 1);
        let cfg = one[0].config.as_ref().unwrap();
        assert!(cfg.profile.ppl.iter().all(|p| p.magnitude_w == 1e6 && p.duration_s == 0.5));
        let starts: Vec<f64> = cfg.profile.ppl.iter().map(|p| p.t_start_s).collect();
        assert_eq!(starts, vec![3.0, 5.0, 12.0, 15.0]);

        let grid = sweep_grid(&base, &[1e6, 2e6, 4e6], &[0.25, 0.5, 1.0, 2.0]).unwrap();
        assert_eq!(grid.len(), 12);
        assert!(grid.iter().all(|v| v.config.is_ok()));

        let long = sweep_grid(&base, &[1e6], &[20.0]).unwrap();
        assert!(matches!(
            long[0].config,
            Err(Error::RejectOverlap { first_start_s, second_start_s })
                if first_start_s == 3.0 && second_start_s == 5.0
        ));
        assert!(sweep_grid(&base, &[], &[1.0]).is_err());
    }

    #[test]
    fn invalid_profiles() {
        let mut p = default_profile();
        p.cpl[0].t_start_s = 1.0;
        assert!(p.validate().is_err());
        let mut p = default_profile();
        p.ppl[1].t_start_s = 3.5;
        assert!(matches!(p.validate(), Err(Error::RejectOverlap { .. })));
        let mut p = default_profile();
        p.ppl[0].duration_s = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn integral_matches_midpoint_quadrature() {
        let cfg = default_scenario();
        let p = &cfg.profile;
        let h = cfg.sample_time_s / 10.0;
        let n = (cfg.t_final_s / h).round() as usize;
        // sample just inside each cell so the right-continuous jumps land on cell edges
        let mut quad = 0.0;
        for k in 0..n {
            let a = k as f64 * h;
            let mid = a + 0.5 * h;
            quad += p.load_at(mid).total() * h;
        }
        let exact = p.energy_j(cfg.t_final_s);
        assert!((quad - exact).abs() <= 1e-9 * exact, "{quad} vs {exact}");
        let by_hand = 4e6 * 8.0 + 6e6 * 12.0 + 2e6 * (1.0 + 0.5 + 1.0) + 1e6;
        assert!((exact - by_hand).abs() <= 1e-9 * by_hand);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = default_scenario();
        let text = cfg.to_toml().unwrap();
        assert!(text.contains("t_start_s"));
        let back = CaseConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.scenario_hash(), cfg.scenario_hash());
    }

    #[test]
    fn hash_ignores_controller() {
        let a = default_scenario();
        let b = a.clone().with_controller("primary_droop");
        assert_eq!(a.scenario_hash(), b.scenario_hash());
        let c = a.clone().with_profile(LoadProfile::constant(1.0));
        assert_ne!(a.scenario_hash(), c.scenario_hash());
    }
}
