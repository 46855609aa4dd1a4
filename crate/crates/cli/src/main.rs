mod config;
mod svg;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use indi_hinf::linsys::{freq_response, logspace};
use indi_hinf::margins::{nominal_margins, worst_case_sampled, PointMargins};
use indi_hinf::plant::BreakPoint;
use indi_hinf::sim::{monte_carlo, run_csv, run_doublet};
use indi_hinf::synthesis::{synthesize_schedule, GainSchedule};
use indi_hinf::Error;

use config::ProjectConfig;
use svg::{Chart, Series};

#[derive(Parser)]
#[command(name = "indi-hinf", version, about = "Gain-scheduled robust attitude control design for INDI quadrotors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Project configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Tune the gain schedule and write `schedule.json` plus a report.
    Synthesize,
    /// Nominal and sampled worst-case margins at every break point.
    Analyze {
        /// Analyze only the controller interpolated at this time constant.
        #[arg(long)]
        tau: Option<f64>,
        /// Random realizations added to the vertex search.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Nonlinear roll doublet with the scheduled controller.
    Simulate {
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Monte Carlo campaign over the schedule.
    Montecarlo {
        /// Random grid-5 realizations.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Write the schedule as CSV and verify that it reads back unchanged.
    ScheduleExport,
    /// Certified nominal margins of the schedule as a table.
    MarginsTable,
}

/// Failure with its exit status.
#[derive(Debug)]
enum Failure {
    Config(String),
    Infeasible(String),
    Divergence(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Divergence(_) => 4,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Infeasible(m) | Failure::Divergence(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Schedule(_) | Error::Format(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => ProjectConfig::load(p).map_err(Failure::Config)?,
        None => ProjectConfig::default(),
    };
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    match cli.command {
        Command::Synthesize => synthesize(&cfg),
        Command::Analyze { tau, samples } => analyze(&cfg, tau, samples),
        Command::Simulate { tau } => simulate(&cfg, tau),
        Command::Montecarlo { samples } => {
            if let Some(n) = samples {
                if n == 0 {
                    return Err(Failure::Config("--samples must be at least 1".into()));
                }
                cfg.montecarlo.n_random = n;
            }
            montecarlo(&cfg)
        }
        Command::ScheduleExport => schedule_export(&cfg),
        Command::MarginsTable => margins_table(&cfg),
    }
}

fn schedule_path(cfg: &ProjectConfig) -> PathBuf {
    cfg.out_dir.join("schedule.json")
}

fn load_schedule(cfg: &ProjectConfig) -> Outcome<GainSchedule> {
    let path = schedule_path(cfg);
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Failure::Config(format!("no schedule at {}; run `indi-hinf synthesize` first", path.display())))?;
    Ok(GainSchedule::from_json(&text)?)
}

fn write(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn csv_text<F>(fill: F) -> Outcome<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<(), csv::Error>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    fill(&mut w)?;
    let bytes = w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Failure::Runtime(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct InfeasibleDump<'a> {
    tau: Option<f64>,
    stage: &'a str,
    best_params: &'a [f64],
    violation: f64,
}

fn synthesize(cfg: &ProjectConfig) -> Outcome {
    let syn = cfg.synthesis();
    let schedule = match synthesize_schedule(&syn, cfg.seed) {
        Ok(s) => s,
        Err(Error::Infeasible(r)) => {
            let dump = InfeasibleDump { tau: r.tau, stage: &r.stage, best_params: &r.best_params, violation: r.violation };
            let path = cfg.out_dir.join("infeasible.json");
            write(&path, &serde_json::to_string_pretty(&dump).map_err(|e| Failure::Runtime(e.to_string()))?)?;
            return Err(Failure::Infeasible(format!(
                "synthesis infeasible at tau {:?} ({}), violation {:.6}; best attempt in {}",
                r.tau,
                r.stage,
                r.violation,
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    write(&schedule_path(cfg), &schedule.to_json()?)?;

    let report = csv_text(|w| {
        w.write_record([
            "tau", "k_eta", "k_omega", "a_ff", "b_ff", "omega_ref", "zeta_ref", "b_ref", "soeta_constraint", "disk_constraint",
            "model_following_constraint", "overshoot", "rise_time", "settle_time", "soeta_bandwidth", "multiloop_dgm_db",
            "multiloop_dpm_deg",
        ])?;
        for p in &schedule.points {
            let c = &p.certified;
            let ml = &c.multiloop_mc_omega_dot;
            w.write_record([
                p.tau.to_string(),
                p.controller.k_eta.to_string(),
                p.controller.k_omega.to_string(),
                p.controller.a_ff.to_string(),
                p.controller.b_ff.to_string(),
                p.refmodel.omega_ref.to_string(),
                p.refmodel.zeta_ref.to_string(),
                p.refmodel.b_ref.to_string(),
                c.soeta_constraint.to_string(),
                c.disk_constraint.to_string(),
                c.model_following_constraint.to_string(),
                c.overshoot.to_string(),
                opt(c.rise_time),
                opt(c.settle_time),
                c.soeta_bandwidth.to_string(),
                opt(ml.disk_gm_db),
                ml.disk_pm_deg.to_string(),
            ])?;
        }
        Ok(())
    })?;
    write(&cfg.out_dir.join("synthesis_report.csv"), &report)?;

    let taus_ms: Vec<f64> = schedule.taus().iter().map(|t| t * 1e3).collect();
    let ke: Vec<f64> = schedule.points.iter().map(|p| p.controller.k_eta.log10()).collect();
    let ko: Vec<f64> = schedule.points.iter().map(|p| p.controller.k_omega.log10()).collect();
    let chart = Chart {
        title: "Scheduled gains".into(),
        x_label: "actuator time constant [ms]".into(),
        y_label: "log10 gain".into(),
        log_x: false,
        series: vec![
            Series { name: "K_eta".into(), x: &taus_ms, y: &ke, dashed: false },
            Series { name: "K_omega".into(), x: &taus_ms, y: &ko, dashed: false },
        ],
    };
    write(&cfg.out_dir.join("gains.svg"), &chart.render())?;
    println!("{} design points, all certified", schedule.points.len());
    Ok(())
}

fn margin_cells(m: &PointMargins) -> [String; 4] {
    [opt(Some(m.disk.gm_db()).filter(|g| g.is_finite())), m.disk.pm_deg().to_string(), opt(m.classical.gm_db), opt(m.classical.pm_deg)]
}

fn analyze(cfg: &ProjectConfig, tau: Option<f64>, samples: Option<usize>) -> Outcome {
    let schedule = load_schedule(cfg)?;
    let syn = cfg.synthesis();
    let sigma = cfg.weights.sigma;
    let n_samples = samples.unwrap_or(cfg.analysis.worst_case_samples).max(1);
    let taus = match tau {
        Some(t) => vec![t],
        None => schedule.taus(),
    };
    let mut rows = Vec::new();
    let grid: Vec<f64> = logspace(-1.0, 4.0, 400);
    let mut curves: Vec<(f64, Vec<f64>)> = Vec::new();
    for (k, &t) in taus.iter().enumerate() {
        let ctrl = schedule.interpolate(t)?.controller;
        let plant = syn.uncertain_plant(t, cfg.uncertainty)?;
        let cl = plant.close(&ctrl)?;
        let nominal = nominal_margins(&cl, sigma)?;
        for nm in &nominal {
            let seed = cfg.seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let wc = worst_case_sampled(&plant, &ctrl, nm.point, n_samples, seed, sigma)?;
            let worst = PointMargins { point: nm.point, disk: wc.disk, classical: wc.classical.clone() };
            let mut row = vec![t.to_string(), nm.point.name().to_string(), nm.disk.alpha_max.to_string()];
            row.extend(margin_cells(nm));
            row.push(wc.disk.alpha_max.to_string());
            row.extend(margin_cells(&worst));
            row.push(wc.n_evaluated.to_string());
            row.push(wc.n_unstable.to_string());
            rows.push(row);
        }
        let nom_plant = syn.nominal_plant(t)?;
        let s = nom_plant.close(&ctrl)?.sensitivity(BreakPoint::Eta)?.minimal();
        let fr = freq_response(&s, &grid)?;
        curves.push((t, fr.magnitudes().iter().map(|m| 20.0 * m.log10()).collect()));
    }
    let text = csv_text(|w| {
        w.write_record([
            "tau", "point", "nominal_disk_alpha", "nominal_dgm_db", "nominal_dpm_deg", "nominal_gm_db", "nominal_pm_deg",
            "worst_disk_alpha", "worst_dgm_db", "worst_dpm_deg", "worst_gm_db", "worst_pm_deg", "evaluated", "unstable",
        ])?;
        for r in &rows {
            w.write_record(r)?;
        }
        Ok(())
    })?;
    write(&cfg.out_dir.join("margins.csv"), &text)?;

    let freq = csv_text(|w| {
        let mut header = vec!["omega".to_string()];
        header.extend(curves.iter().map(|(t, _)| format!("soeta_db_tau_{t}")));
        w.write_record(&header)?;
        for (i, om) in grid.iter().enumerate() {
            let mut row = vec![om.to_string()];
            row.extend(curves.iter().map(|(_, c)| c[i].to_string()));
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    write(&cfg.out_dir.join("sensitivity_eta.csv"), &freq)?;
    let stride = curves.len().div_ceil(6).max(1);
    let picked: Vec<&(f64, Vec<f64>)> = curves.iter().step_by(stride).collect();
    let chart = Chart {
        title: "Output sensitivity at the attitude".into(),
        x_label: "frequency [rad/s]".into(),
        y_label: "magnitude [dB]".into(),
        log_x: true,
        series: picked.iter().map(|(t, c)| Series { name: format!("tau {:.1} ms", t * 1e3), x: &grid, y: c, dashed: false }).collect(),
    };
    write(&cfg.out_dir.join("sensitivity_eta.svg"), &chart.render())?;
    Ok(())
}

fn simulate(cfg: &ProjectConfig, tau: Option<f64>) -> Outcome {
    let schedule = load_schedule(cfg)?;
    let tau = tau.unwrap_or(cfg.sim.tau);
    let sc = cfg.sim_config(tau);
    let r = run_doublet(&sc, &schedule)?;
    let stem = format!("sim_tau_{:.4}", tau);
    write(&cfg.out_dir.join(format!("{stem}.csv")), &run_csv(&r))?;
    let deg = |v: &[f64]| v.iter().map(|x| x.to_degrees()).collect::<Vec<_>>();
    let roll = deg(&r.eta.iter().map(|e| e[0]).collect::<Vec<_>>());
    let pitch = deg(&r.eta.iter().map(|e| e[1]).collect::<Vec<_>>());
    let yaw = deg(&r.eta.iter().map(|e| e[2]).collect::<Vec<_>>());
    let reference = deg(&r.reference);
    let chart = Chart {
        title: format!("Roll doublet, tau = {:.1} ms", tau * 1e3),
        x_label: "time [s]".into(),
        y_label: "angle [deg]".into(),
        log_x: false,
        series: vec![
            Series { name: "reference".into(), x: &r.time, y: &reference, dashed: true },
            Series { name: "roll".into(), x: &r.time, y: &roll, dashed: false },
            Series { name: "pitch".into(), x: &r.time, y: &pitch, dashed: false },
            Series { name: "yaw".into(), x: &r.time, y: &yaw, dashed: false },
        ],
    };
    write(&cfg.out_dir.join(format!("{stem}.svg")), &chart.render())?;
    let m = r.metrics;
    println!(
        "overshoot {:.2} %, coupling {:.3} deg, m_c in [{:.3}, {:.3}], {} saturated commands",
        100.0 * m.overshoot,
        m.coupling_deg,
        m.m_c_min,
        m.m_c_max,
        r.saturations
    );
    if !r.stable {
        return Err(Failure::Divergence(format!("simulation diverged at t = {:.3} s", r.time.last().copied().unwrap_or(0.0))));
    }
    Ok(())
}

fn montecarlo(cfg: &ProjectConfig) -> Outcome {
    let schedule = load_schedule(cfg)?;
    let base = cfg.sim_config(cfg.sim.tau);
    let c = monte_carlo(&schedule, &cfg.synthesis(), &base, &cfg.campaign())?;
    write(&cfg.out_dir.join("montecarlo_runs.csv"), &c.records_csv())?;
    write(&cfg.out_dir.join("montecarlo_groups.csv"), &c.groups_csv())?;
    write(&cfg.out_dir.join("montecarlo_envelope.csv"), &c.envelope_csv())?;
    let deg = |v: &[f64]| v.iter().map(|x| x.to_degrees()).collect::<Vec<_>>();
    let data: Vec<(String, Vec<f64>, Vec<f64>, Vec<f64>, &[f64])> = c
        .envelopes
        .iter()
        .map(|e| {
            let lo = e.taus.first().copied().unwrap_or(0.0) * 1e3;
            let hi = e.taus.last().copied().unwrap_or(0.0) * 1e3;
            (format!("{lo:.1}-{hi:.1} ms"), deg(&e.roll_min), deg(&e.roll_max), deg(&e.roll_nominal), e.time.as_slice())
        })
        .collect();
    let mut series = Vec::new();
    for (name, lo, hi, _, t) in &data {
        series.push(Series { name: format!("{name} max"), x: t, y: hi, dashed: false });
        series.push(Series { name: format!("{name} min"), x: t, y: lo, dashed: true });
    }
    let chart = Chart {
        title: "Roll envelopes under uncertainty".into(),
        x_label: "time [s]".into(),
        y_label: "roll [deg]".into(),
        log_x: false,
        series,
    };
    write(&cfg.out_dir.join("montecarlo_envelope.svg"), &chart.render())?;
    for (g, (name, lo, hi, nom, t)) in data.iter().enumerate() {
        let chart = Chart {
            title: format!("Group {g}: {name}"),
            x_label: "time [s]".into(),
            y_label: "roll [deg]".into(),
            log_x: false,
            series: vec![
                Series { name: "nominal".into(), x: t, y: nom, dashed: false },
                Series { name: "max".into(), x: t, y: hi, dashed: true },
                Series { name: "min".into(), x: t, y: lo, dashed: true },
            ],
        };
        write(&cfg.out_dir.join(format!("montecarlo_envelope_group{g}.svg")), &chart.render())?;
    }
    println!(
        "{} runs, {} stable, worst overshoot {:.2} %, worst coupling {:.3} deg",
        c.n_runs(),
        c.n_stable(),
        100.0 * c.max_overshoot(),
        c.max_coupling_deg()
    );
    if c.n_stable() != c.n_runs() {
        return Err(Failure::Divergence(format!("{} of {} runs diverged", c.n_runs() - c.n_stable(), c.n_runs())));
    }
    Ok(())
}

fn schedule_export(cfg: &ProjectConfig) -> Outcome {
    let schedule = load_schedule(cfg)?;
    let text = schedule.to_csv()?;
    let back = GainSchedule::from_csv(&text)?;
    if back != schedule {
        return Err(Failure::Runtime("schedule CSV does not read back to the same schedule".into()));
    }
    write(&cfg.out_dir.join("schedule.csv"), &text)
}

fn margins_table(cfg: &ProjectConfig) -> Outcome {
    let schedule = load_schedule(cfg)?;
    let text = csv_text(|w| {
        w.write_record(["tau", "point", "disk_alpha", "dgm_db", "dpm_deg", "gm_db", "pm_deg"])?;
        for p in &schedule.points {
            for m in &p.certified.margins {
                w.write_record([
                    p.tau.to_string(),
                    m.point.name().to_string(),
                    m.disk_alpha.to_string(),
                    opt(m.disk_gm_db),
                    m.disk_pm_deg.to_string(),
                    opt(m.gm_db),
                    opt(m.pm_deg),
                ])?;
            }
            let ml = &p.certified.multiloop_mc_omega_dot;
            w.write_record([
                p.tau.to_string(),
                "mc+omega_dot".to_string(),
                ml.disk_alpha.to_string(),
                opt(ml.disk_gm_db),
                ml.disk_pm_deg.to_string(),
                String::new(),
                String::new(),
            ])?;
        }
        Ok(())
    })?;
    write(&cfg.out_dir.join("margins_table.csv"), &text)?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:8.2}")).unwrap_or_else(|| "     inf".into());
    let mut table = format!("{:>8} {:>12} {:>8} {:>8} {:>8} {:>8}\n", "tau[ms]", "point", "DGM", "DPM", "GM", "PM");
    for p in &schedule.points {
        for m in &p.certified.margins {
            let _ = writeln!(
                table,
                "{:8.2} {:>12} {} {:8.2} {} {}",
                p.tau * 1e3,
                m.point.name(),
                cell(m.disk_gm_db),
                m.disk_pm_deg,
                cell(m.gm_db),
                m.pm_deg.map(|x| format!("{x:8.2}")).unwrap_or_else(|| "       -".into())
            );
        }
    }
    // A closed pipe (e.g. `| head`) is not an error.
    let _ = std::io::stdout().write_all(table.as_bytes());
    Ok(())
}
