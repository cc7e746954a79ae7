//! Plain-text data files for gnuplot and a script that renders them.

use std::fmt::Write as _;

use mvdc_nmpc::plant::SOURCE_NAMES;
use mvdc_nmpc::{source_powers, Trajectory};

use crate::artifacts::Artifacts;

const SCRIPT: &str = r#"# gnuplot -c plots.gp   (run inside this directory)
set terminal pngcairo size 1000,600
set grid
set xlabel "time (s)"

set output "voltage.png"
set ylabel "bus voltage (V)"
plot "voltage.dat" using 1:2 with lines title "V_o", "" using 1:3 with lines dt 2 title "setpoint"

set output "power.png"
set ylabel "power (MW)"
plot "power.dat" using 1:($2/1e6) with lines title "generation", "" using 1:($3/1e6) with lines dt 2 title "load"

set output "sources.png"
plot for [i=2:7] "sources.dat" using 1:(column(i)/1e6) with lines title columnheader(i)

set output "inputs.png"
set ylabel "restoration offset (V)"
plot for [i=2:5] "inputs.dat" using 1:i with lines title columnheader(i)
"#;

pub fn add_plot_files(out: &mut Artifacts, traj: &Trajectory, v_sp: f64) {
    let powers = source_powers(traj);

    let mut voltage = String::from("# t_s v_o_v v_sp_v\n");
    let mut power = String::from("# t_s generation_w load_w\n");
    let mut sources = format!("t_s {}\n", SOURCE_NAMES.join(" "));
    let mut inputs = String::from("t_s dv_sga dv_sgb dv_ba dv_bb\n");
    for (k, &t) in traj.times().iter().enumerate() {
        let _ = writeln!(voltage, "{t} {} {v_sp}", traj.states()[k].v_o);
        let _ = writeln!(power, "{t} {} {}", powers.total[k], traj.loads()[k].total());
        let p = powers.per_source[k].map(|v| v.to_string());
        let _ = writeln!(sources, "{t} {}", p.join(" "));
        let u = traj.inputs()[k].per_unit().map(|v| v.to_string());
        let _ = writeln!(inputs, "{t} {}", u.join(" "));
    }
    out.add("voltage.dat", voltage);
    out.add("power.dat", power);
    out.add("sources.dat", sources);
    out.add("inputs.dat", inputs);
    out.add("plots.gp", SCRIPT);
}
