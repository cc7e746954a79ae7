//! Run evaluation: voltage MAPE, settling times, sharing ratios and the
//! generation cost the economic controller optimizes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::N_SOURCES;
use crate::scenario::CaseConfig;
use crate::simulator::{source_powers, steady_state_window, Trajectory, MIN_WINDOW_SAMPLES};

/// Mean absolute percentage error of `actual` against the desired `reference`.
pub fn mape(actual: &[f64], reference: &[f64]) -> Result<f64> {
    if actual.len() != reference.len() {
        return Err(Error::LengthMismatch { left: actual.len(), right: reference.len() });
    }
    if actual.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (index, (a, r)) in actual.iter().zip(reference).enumerate() {
        if *r == 0.0 {
            return Err(Error::ZeroReference { index });
        }
        acc += ((r - a) / r).abs();
    }
    Ok(100.0 * acc / actual.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Settling {
    Settled(f64),
    NeverSettles,
}

impl Settling {
    pub fn seconds(self) -> Option<f64> {
        match self {
            Settling::Settled(s) => Some(s),
            Settling::NeverSettles => None,
        }
    }
}

fn interval_indices(times: &[f64], event_t: f64, end_t: f64) -> (usize, usize) {
    let eps = 1e-9;
    let first = times.partition_point(|t| *t < event_t - eps);
    let last = times.partition_point(|t| *t < end_t - eps);
    // the final sample of a run closes its own interval
    let last = if end_t >= times.last().copied().unwrap_or(0.0) - eps { times.len() } else { last };
    (first, last.max(first))
}

/// Time after `event_t` from which `series` stays within `band` of
/// `final_value` up to `end_t`.
pub fn settling_time_band(
    times: &[f64],
    series: &[f64],
    event_t: f64,
    end_t: f64,
    final_value: f64,
    band: f64,
) -> Settling {
    let (a, b) = interval_indices(times, event_t, end_t);
    if a >= b {
        return Settling::Settled(0.0);
    }
    match (a..b).rev().find(|&k| (series[k] - final_value).abs() > band) {
        None => Settling::Settled(0.0),
        Some(k) if k + 1 >= b => Settling::NeverSettles,
        Some(k) => Settling::Settled(times[k + 1] - event_t),
    }
}

/// Settling time into `±band_fraction` of the value the series holds at the
/// end of `[event_t, end_t)`, taken as the mean over the last tenth of the
/// interval (at least one sample).
pub fn settling_time(times: &[f64], series: &[f64], event_t: f64, end_t: f64, band_fraction: f64) -> Settling {
    let (a, b) = interval_indices(times, event_t, end_t);
    if a >= b {
        return Settling::Settled(0.0);
    }
    let tail = ((b - a) / 10).max(1);
    let final_value = series[b - tail..b].iter().sum::<f64>() / tail as f64;
    settling_time_band(times, series, event_t, end_t, final_value, band_fraction * final_value.abs())
}

/// Savings of `a` relative to `b`, percent: `100 (cost_b - cost_a) / cost_b`.
pub fn compare_cost(a: &RunReport, b: &RunReport) -> Result<f64> {
    if a.scenario_hash != b.scenario_hash {
        return Err(Error::ScenarioMismatch { a: a.scenario_hash.clone(), b: b.scenario_hash.clone() });
    }
    if b.generation_cost == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * (b.generation_cost - a.generation_cost) / b.generation_cost)
}

/// Tunables of the evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportSettings {
    /// Time after a load change before a segment counts as steady.
    pub settle_delay_s: f64,
    pub band_fraction: f64,
    /// SC power counts as quiet below this fraction of its pulse peak.
    pub sc_quiet_fraction: f64,
    /// Window after a pulse end included in its voltage-deviation figure.
    pub pulse_tail_s: f64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self { settle_delay_s: 2.0, band_fraction: 0.02, sc_quiet_fraction: 0.01, pulse_tail_s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseReport {
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub magnitude_w: f64,
    /// Largest `|P_SCa| + |P_SCb|` from pulse start to the next load change after its end.
    pub sc_peak_power_w: f64,
    /// Largest `|V_o - V_sp|` from pulse start to the end of the pulse tail.
    pub max_voltage_deviation_v: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub droop_settle_rise_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub droop_settle_fall_s: Option<f64>,
    /// SC power settling into 2% of its peak after the pulse ends.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sc_settle_s: Option<f64>,
    /// Time after the pulse end until SC power stays below 1% of its peak.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sc_quiet_after_end_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub controller: String,
    pub scenario_hash: String,
    pub samples: usize,
    pub voltage_mape_pct: f64,
    pub max_voltage_deviation_v: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steady_window_s: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharing_sg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharing_b: Option<f64>,
    /// Mean `|P_SCa| + |P_SCb|` over all steady windows.
    pub sc_steady_power_w: f64,
    /// Worst relative gap between generated power and load on steady windows.
    pub generation_mismatch_pct: f64,
    /// `sum_k sum_i psi_i I_i(k)^2 t_s` over the run.
    pub generation_cost: f64,
    pub input_violations: usize,
    pub band_violations: usize,
    pub solves: usize,
    pub solver_nonconverged: usize,
    pub solver_iterations_mean: f64,
    pub solver_max_kkt: f64,
    pub pulses: Vec<PulseReport>,
}

/// Steady windows `[change + delay, next change]` that hold at least the
/// minimum number of samples.
pub fn steady_windows(case: &CaseConfig, delay_s: f64) -> Vec<(f64, f64)> {
    let mut edges = vec![0.0];
    edges.extend(case.profile.event_times().into_iter().filter(|t| *t < case.t_final_s));
    edges.push(case.t_final_s);
    edges
        .windows(2)
        .map(|w| (w[0] + delay_s, w[1]))
        .filter(|(a, b)| b - a >= MIN_WINDOW_SAMPLES as f64 * case.sample_time_s - 1e-9)
        .collect()
}

pub fn evaluate(traj: &Trajectory, case: &CaseConfig) -> Result<RunReport> {
    evaluate_with(traj, case, &ReportSettings::default())
}

pub fn evaluate_with(traj: &Trajectory, case: &CaseConfig, settings: &ReportSettings) -> Result<RunReport> {
    let ocp = &case.ocp;
    let times = traj.times();
    let volts = traj.voltages();
    let reference = vec![ocp.v_sp_v; volts.len()];
    let voltage_mape_pct = mape(&volts, &reference)?;
    let deviation = |a: usize, b: usize| volts[a..b].iter().fold(0.0_f64, |m, v| m.max((v - ocp.v_sp_v).abs()));
    let max_voltage_deviation_v = deviation(0, volts.len());

    let powers = source_powers(traj);
    let droop = powers.droop_total();
    let sc = powers.sc_magnitude();

    let windows = steady_windows(case, settings.settle_delay_s);
    let mut sc_acc = 0.0;
    let mut sc_n = 0usize;
    let mut mismatch: f64 = 0.0;
    for &(a, b) in &windows {
        let (i, j) = interval_indices(times, a, b);
        sc_acc += sc[i..j].iter().sum::<f64>();
        sc_n += j - i;
        let gen = powers.total[i..j].iter().sum::<f64>() / (j - i) as f64;
        let load = traj.loads()[i..j].iter().map(|d| d.total()).sum::<f64>() / (j - i) as f64;
        if load > 0.0 {
            mismatch = mismatch.max(100.0 * (gen - load).abs() / load);
        }
    }
    let steady = windows
        .iter()
        .copied()
        .fold(None::<(f64, f64)>, |best, w| match best {
            Some(b) if b.1 - b.0 > w.1 - w.0 + 1e-9 => Some(b),
            _ => Some(w),
        });
    let (sharing_sg, sharing_b) = match steady {
        Some((a, b)) => {
            let avg = steady_state_window(traj, a, b)?;
            let ratio = |num: f64, den: f64| (den.abs() > 1e-9).then(|| num / den);
            (ratio(avg.i_sga, avg.i_sgb), ratio(avg.i_ba, avg.i_bb))
        }
        None => (None, None),
    };

    let n_intervals = traj.len().saturating_sub(1);
    let generation_cost: f64 = traj.states()[..n_intervals]
        .iter()
        .map(|x| {
            let cur = x.source_currents();
            (0..N_SOURCES).map(|s| ocp.psi[s] * cur[s] * cur[s]).sum::<f64>() * case.sample_time_s
        })
        .sum();

    let v_lo = ocp.v_sp_v * (1.0 - ocp.v_band_fraction);
    let v_hi = ocp.v_sp_v * (1.0 + ocp.v_band_fraction);
    let band_violations = volts.iter().filter(|v| **v < v_lo || **v > v_hi).count();
    let tol = 1e-9 * ocp.u_bound_v;
    let input_violations = traj.inputs().iter().filter(|u| u.max_abs() > ocp.u_bound_v + tol).count()
        + traj
            .diagnostics()
            .iter()
            .flatten()
            .filter(|d| d.max_abs_sequence > ocp.u_bound_v + tol)
            .count();

    let diags: Vec<_> = traj.diagnostics().iter().flatten().collect();
    let solves = diags.len();
    let solver_nonconverged = diags.iter().filter(|d| d.status != crate::solver::SolveStatus::Converged).count();
    let solver_iterations_mean =
        if solves > 0 { diags.iter().map(|d| d.iterations as f64).sum::<f64>() / solves as f64 } else { 0.0 };
    let solver_max_kkt = diags.iter().map(|d| d.kkt_residual).fold(0.0, f64::max);

    let events = case.profile.event_times();
    let next_event_after = |t: f64| events.iter().copied().find(|e| *e > t + 1e-9).unwrap_or(case.t_final_s);
    let mut pulses = Vec::new();
    let mut sorted = case.profile.ppl.clone();
    sorted.sort_by(|a, b| a.t_start_s.total_cmp(&b.t_start_s));
    for p in sorted.iter().filter(|p| p.t_start_s < case.t_final_s) {
        let end = p.t_end_s().min(case.t_final_s);
        let after = next_event_after(end);
        let (a, b) = interval_indices(times, p.t_start_s, after);
        let sc_peak = sc[a..b].iter().copied().fold(0.0, f64::max);
        let (_, tail_end) = interval_indices(times, p.t_start_s, (end + settings.pulse_tail_s).min(after));
        let sc_band = |fraction: f64| {
            if sc_peak > 0.0 {
                settling_time_band(times, &sc, end, after, 0.0, fraction * sc_peak).seconds()
            } else {
                Some(0.0)
            }
        };
        pulses.push(PulseReport {
            t_start_s: p.t_start_s,
            t_end_s: end,
            magnitude_w: p.magnitude_w,
            sc_peak_power_w: sc_peak,
            max_voltage_deviation_v: deviation(a, tail_end.max(a + 1).min(volts.len())),
            droop_settle_rise_s: settling_time(times, &droop, p.t_start_s, end, settings.band_fraction).seconds(),
            droop_settle_fall_s: settling_time(times, &droop, end, after, settings.band_fraction).seconds(),
            sc_settle_s: sc_band(settings.band_fraction),
            sc_quiet_after_end_s: sc_band(settings.sc_quiet_fraction),
        });
    }

    Ok(RunReport {
        controller: traj.controller.clone(),
        scenario_hash: traj.scenario_hash.clone(),
        samples: traj.len(),
        voltage_mape_pct,
        max_voltage_deviation_v,
        steady_window_s: steady.map(|(a, b)| [a, b]),
        sharing_sg,
        sharing_b,
        sc_steady_power_w: if sc_n > 0 { sc_acc / sc_n as f64 } else { 0.0 },
        generation_mismatch_pct: mismatch,
        generation_cost,
        input_violations,
        band_violations,
        solves,
        solver_nonconverged,
        solver_iterations_mean,
        solver_max_kkt,
        pulses,
    })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "never".to_string(), |x| format!("{x:.prec$}"))
}

impl RunReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "controller            {}", self.controller);
        let _ = writeln!(s, "scenario              {}", self.scenario_hash);
        let _ = writeln!(s, "samples               {}", self.samples);
        let _ = writeln!(s, "voltage MAPE          {:.4} %", self.voltage_mape_pct);
        let _ = writeln!(s, "max |V_o - V_sp|      {:.3} V", self.max_voltage_deviation_v);
        if let Some([a, b]) = self.steady_window_s {
            let _ = writeln!(s, "steady window         [{a:.2}, {b:.2}] s");
        }
        let _ = writeln!(s, "sharing SGa:SGb       {}", opt(self.sharing_sg, 4));
        let _ = writeln!(s, "sharing Ba:Bb         {}", opt(self.sharing_b, 4));
        let _ = writeln!(s, "SC steady power       {:.1} W", self.sc_steady_power_w);
        let _ = writeln!(s, "generation mismatch   {:.4} %", self.generation_mismatch_pct);
        let _ = writeln!(s, "generation cost       {:.3}", self.generation_cost);
        let _ = writeln!(s, "input violations      {}", self.input_violations);
        let _ = writeln!(s, "band violations       {}", self.band_violations);
        if self.solves > 0 {
            let _ = writeln!(
                s,
                "solves                {} ({} not converged, mean {:.1} iterations, max kkt {:.2e})",
                self.solves, self.solver_nonconverged, self.solver_iterations_mean, self.solver_max_kkt
            );
        }
        if !self.pulses.is_empty() {
            let _ = writeln!(
                s,
                "\n{:>8} {:>8} {:>10} {:>10} {:>9} {:>9} {:>9} {:>9} {:>9}",
                "start_s", "end_s", "mag_MW", "sc_pk_MW", "dV_max", "rise_s", "fall_s", "sc_set_s", "sc_1%_s"
            );
            for p in &self.pulses {
                let _ = writeln!(
                    s,
                    "{:>8.2} {:>8.2} {:>10.3} {:>10.4} {:>9.3} {:>9} {:>9} {:>9} {:>9}",
                    p.t_start_s,
                    p.t_end_s,
                    p.magnitude_w / 1e6,
                    p.sc_peak_power_w / 1e6,
                    p.max_voltage_deviation_v,
                    opt(p.droop_settle_rise_s, 2),
                    opt(p.droop_settle_fall_s, 2),
                    opt(p.sc_settle_s, 2),
                    opt(p.sc_quiet_after_end_s, 2),
                );
            }
        }
        s
    }
}

/// Side-by-side table of several runs on one scenario. Savings are relative
/// to the first report.
pub fn comparison_table(reports: &[RunReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<18} {:>10} {:>10} {:>9} {:>9} {:>12} {:>9} {:>11} {:>11}",
        "controller", "MAPE_%", "dV_max_V", "SGa:SGb", "Ba:Bb", "gen_cost", "saving_%", "rise_mean_s", "sc_set_mean"
    );
    let mean = |v: Vec<Option<f64>>| {
        let got: Vec<f64> = v.into_iter().flatten().collect();
        (!got.is_empty()).then(|| got.iter().sum::<f64>() / got.len() as f64)
    };
    for r in reports {
        let saving = reports.first().and_then(|base| compare_cost(r, base).ok());
        let _ = writeln!(
            s,
            "{:<18} {:>10.4} {:>10.3} {:>9} {:>9} {:>12.2} {:>9} {:>11} {:>11}",
            r.controller,
            r.voltage_mape_pct,
            r.max_voltage_deviation_v,
            opt(r.sharing_sg, 3),
            opt(r.sharing_b, 3),
            r.generation_cost,
            opt(saving, 2),
            opt(mean(r.pulses.iter().map(|p| p.droop_settle_rise_s).collect()), 3),
            opt(mean(r.pulses.iter().map(|p| p.sc_settle_s).collect()), 3),
        );
    }
    s
}
