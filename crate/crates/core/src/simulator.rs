//! Closed-loop trajectory storage and the trajectory CSV format.
//!
//! CSV columns, in order (units in the suffix):
//!
//! ```text
//! t_s, v_o_v, i_sga_a, i_sgb_a, i_ba_a, i_bb_a, i_sca_a, i_scb_a, v_ca_v, v_cb_v,
//! dv_sga_v, dv_sgb_v, dv_ba_v, dv_bb_v, p_cpl_w, p_ppl_w,
//! solver_iters, solver_kkt, solve_time_s
//! ```
//!
//! Rows without a solve (droop control, the final sample) carry zeros in the
//! three solver columns.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::plant::{ControlInput, Disturbance, PlantState, N_DROOP, N_SOURCES};
use crate::scenario::CaseConfig;
use crate::solver::{SolveResult, SolveStatus};

pub const CSV_HEADER: [&str; 19] = [
    "t_s", "v_o_v", "i_sga_a", "i_sgb_a", "i_ba_a", "i_bb_a", "i_sca_a", "i_scb_a", "v_ca_v", "v_cb_v",
    "dv_sga_v", "dv_sgb_v", "dv_ba_v", "dv_bb_v", "p_cpl_w", "p_ppl_w", "solver_iters", "solver_kkt",
    "solve_time_s",
];

/// Per-sample summary of one NMPC solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub solve_time_s: f64,
    pub j_init: f64,
    pub j_opt: f64,
    pub status: SolveStatus,
    /// Largest `|u|` anywhere in the returned sequence.
    pub max_abs_sequence: f64,
    /// Entry 0 of the returned sequence.
    pub first_entry: ControlInput,
}

impl From<&SolveResult> for StepDiagnostics {
    fn from(r: &SolveResult) -> Self {
        Self {
            iterations: r.iterations,
            kkt_residual: r.kkt_residual,
            solve_time_s: r.solve_time_s,
            j_init: r.j_init,
            j_opt: r.j_opt,
            status: r.status,
            max_abs_sequence: r.useq_opt.max_abs(),
            first_entry: r.useq_opt.entry(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub controller: String,
    pub scenario_hash: String,
    pub sample_time_s: f64,
    times: Vec<f64>,
    states: Vec<PlantState>,
    inputs: Vec<ControlInput>,
    loads: Vec<Disturbance>,
    diagnostics: Vec<Option<StepDiagnostics>>,
    substeps: Option<Vec<(f64, PlantState)>>,
}

impl Trajectory {
    pub fn new(controller: &str, case: &CaseConfig, record_substeps: bool) -> Self {
        let cap = case.n_steps() + 1;
        Self {
            controller: controller.to_string(),
            scenario_hash: case.scenario_hash(),
            sample_time_s: case.sample_time_s,
            times: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap),
            inputs: Vec::with_capacity(cap),
            loads: Vec::with_capacity(cap),
            diagnostics: Vec::with_capacity(cap),
            substeps: record_substeps.then(Vec::new),
        }
    }

    pub fn push(
        &mut self,
        t: f64,
        x: PlantState,
        u: ControlInput,
        d: Disturbance,
        diag: Option<StepDiagnostics>,
    ) {
        self.times.push(t);
        self.states.push(x);
        self.inputs.push(u);
        self.loads.push(d);
        self.diagnostics.push(diag);
    }

    pub(crate) fn push_substep(&mut self, t: f64, x: PlantState) {
        if let Some(s) = self.substeps.as_mut() {
            s.push((t, x));
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[PlantState] {
        &self.states
    }

    pub fn inputs(&self) -> &[ControlInput] {
        &self.inputs
    }

    pub fn loads(&self) -> &[Disturbance] {
        &self.loads
    }

    pub fn diagnostics(&self) -> &[Option<StepDiagnostics>] {
        &self.diagnostics
    }

    pub fn substeps(&self) -> Option<&[(f64, PlantState)]> {
        self.substeps.as_deref()
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.v_o).collect()
    }

    /// Same samples, ignoring wall-clock solve times.
    pub fn same_samples(&self, other: &Trajectory) -> bool {
        let strip = |t: &Trajectory| -> Vec<Option<StepDiagnostics>> {
            t.diagnostics.iter().map(|d| d.map(|d| StepDiagnostics { solve_time_s: 0.0, ..d })).collect()
        };
        self.times == other.times
            && self.states == other.states
            && self.inputs == other.inputs
            && self.loads == other.loads
            && strip(self) == strip(other)
    }

    /// Write the trajectory CSV. Solve times are written only when
    /// `include_timing` is set, so that untimed output is reproducible
    /// byte for byte.
    pub fn write_csv<W: Write>(&self, w: W, include_timing: bool) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for k in 0..self.len() {
            let x = &self.states[k];
            let dv = self.inputs[k].per_unit();
            let d = &self.loads[k];
            let (iters, kkt, time) = match &self.diagnostics[k] {
                Some(dg) => (dg.iterations, dg.kkt_residual, if include_timing { dg.solve_time_s } else { 0.0 }),
                None => (0, 0.0, 0.0),
            };
            let mut row: Vec<String> = Vec::with_capacity(CSV_HEADER.len());
            row.push(self.times[k].to_string());
            row.extend(x.to_array().iter().map(f64::to_string));
            row.extend(dv.iter().map(f64::to_string));
            row.push(d.p_cpl_w.to_string());
            row.push(d.p_ppl_w.to_string());
            row.push(iters.to_string());
            row.push(kkt.to_string());
            row.push(time.to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Read a trajectory CSV back. Solver columns come back as partial
    /// diagnostics (iterations, residual, time); costs are not stored.
    pub fn read_csv<R: Read>(r: R, controller: &str, scenario_hash: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Parse(format!("unexpected trajectory header: {header:?}")));
        }
        let mut traj = Trajectory {
            controller: controller.to_string(),
            scenario_hash: scenario_hash.to_string(),
            sample_time_s: 0.0,
            times: Vec::new(),
            states: Vec::new(),
            inputs: Vec::new(),
            loads: Vec::new(),
            diagnostics: Vec::new(),
            substeps: None,
        };
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {}: {e}", line + 2, CSV_HEADER[i])))
            };
            let mut xs = [0.0; 9];
            for (n, v) in xs.iter_mut().enumerate() {
                *v = num(1 + n)?;
            }
            let mut dv = [0.0; N_DROOP];
            for (n, v) in dv.iter_mut().enumerate() {
                *v = num(10 + n)?;
            }
            let input = if dv.iter().all(|v| *v == dv[0]) {
                ControlInput::Centralized(dv[0])
            } else {
                ControlInput::Localized(dv)
            };
            let iters = num(16)? as usize;
            let diag = (iters > 0).then(|| -> Result<StepDiagnostics> {
                Ok(StepDiagnostics {
                    iterations: iters,
                    kkt_residual: num(17)?,
                    solve_time_s: num(18)?,
                    j_init: f64::NAN,
                    j_opt: f64::NAN,
                    status: SolveStatus::Converged,
                    max_abs_sequence: f64::NAN,
                    first_entry: input,
                })
            });
            traj.push(
                num(0)?,
                PlantState::from_array(&xs),
                input,
                Disturbance::new(num(14)?, num(15)?),
                diag.transpose()?,
            );
        }
        if traj.len() >= 2 {
            traj.sample_time_s = traj.times[1] - traj.times[0];
        }
        Ok(traj)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePowers {
    /// `V_o * I_i` per source, in SGa, SGb, Ba, Bb, SCa, SCb order.
    pub per_source: Vec<[f64; N_SOURCES]>,
    pub total: Vec<f64>,
}

impl SourcePowers {
    pub fn series(&self, source: usize) -> Vec<f64> {
        self.per_source.iter().map(|p| p[source]).collect()
    }

    /// Combined output of the four droop sources.
    pub fn droop_total(&self) -> Vec<f64> {
        self.per_source.iter().map(|p| p[..N_DROOP].iter().sum()).collect()
    }

    /// `|P_SCa| + |P_SCb|`.
    pub fn sc_magnitude(&self) -> Vec<f64> {
        self.per_source.iter().map(|p| p[N_DROOP..].iter().map(|v| v.abs()).sum()).collect()
    }
}

pub fn source_powers(traj: &Trajectory) -> SourcePowers {
    let per_source: Vec<[f64; N_SOURCES]> =
        traj.states().iter().map(|x| x.source_currents().map(|i| x.v_o * i)).collect();
    let total = per_source.iter().map(|p| p.iter().sum()).collect();
    SourcePowers { per_source, total }
}

/// Minimum averaging window, in samples.
pub const MIN_WINDOW_SAMPLES: usize = 10;

/// Componentwise mean of the samples in `[t_a, t_b]`.
pub fn steady_state_window(traj: &Trajectory, t_a: f64, t_b: f64) -> Result<PlantState> {
    let eps = 1e-9 * traj.sample_time_s.max(1e-12);
    let picked: Vec<&PlantState> = traj
        .times()
        .iter()
        .zip(traj.states())
        .filter(|(t, _)| **t >= t_a - eps && **t <= t_b + eps)
        .map(|(_, x)| x)
        .collect();
    let long_enough = t_b - t_a >= MIN_WINDOW_SAMPLES as f64 * traj.sample_time_s - eps;
    if !long_enough || picked.len() < MIN_WINDOW_SAMPLES {
        return Err(Error::WindowTooShort { t_a, t_b, samples: picked.len(), required: MIN_WINDOW_SAMPLES });
    }
    let mut acc = [0.0; 9];
    for x in &picked {
        for (a, v) in acc.iter_mut().zip(x.to_array()) {
            *a += v;
        }
    }
    let n = picked.len() as f64;
    Ok(PlantState::from_array(&acc.map(|a| a / n)))
}
