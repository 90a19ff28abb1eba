mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use bsch_core::certify::{Certifier, CRITERIA};
use bsch_core::config::{preset, ConfigErrors, ConfigIssue, PRESETS};
use bsch_core::experiments::{equilibrium_experiment, pullback_experiment};
use bsch_core::stationary::{multiplier_cross_check, newton_solve};
use bsch_core::{parse_config, Experiment, RunConfig, SimState, Stepper};

use output::{num, sha256_hex, Artifacts, ManifestHeader, CERTIFY_COLUMNS, PULLBACK_COLUMNS};

#[derive(Parser)]
#[command(name = "bsch", version, about = "Bulk-surface convective Cahn-Hilliard experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// TOML run configuration; omitted keys take preset or default values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset to layer the configuration over.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random initial data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel experiments.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone)]
enum Verb {
    /// Time-step one trajectory.
    Simulate,
    /// Newton solve for a stationary state near the initial data.
    Stationary,
    /// Pullback absorption over a bounded set of initial data.
    Pullback,
    /// Long run under a decaying velocity and Newton refinement.
    Equilibrium,
    /// Run the acceptance criteria.
    Certify {
        /// Comma-separated criterion numbers; all by default.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
    /// Write the mesh as legacy VTK text.
    MeshExport,
}

impl Verb {
    fn name(&self) -> &'static str {
        match self {
            Verb::Simulate => "simulate",
            Verb::Stationary => "stationary",
            Verb::Pullback => "pullback",
            Verb::Equilibrium => "equilibrium",
            Verb::Certify { .. } => "certify",
            Verb::MeshExport => "mesh-export",
        }
    }

    fn experiment(&self) -> Option<Experiment> {
        Some(match self {
            Verb::Simulate => Experiment::Simulate,
            Verb::Stationary => Experiment::Stationary,
            Verb::Pullback => Experiment::Pullback,
            Verb::Equilibrium => Experiment::Equilibrium,
            Verb::Certify { .. } => Experiment::Certify,
            Verb::MeshExport => return None,
        })
    }
}

/// Failure kinds reported in `error.json`.
enum Failure {
    Config(ConfigErrors),
    Certification(Vec<usize>),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<bsch_core::Error> for Failure {
    fn from(e: bsch_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    status: &'static str,
    verb: &'a str,
    kind: &'static str,
    message: String,
    issues: Vec<ConfigIssue>,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| anyhow!("reading {}: {e}", path.display()))?,
        None => String::new(),
    };
    if let Some(p) = &cli.preset {
        if preset(p).is_none() {
            return Err(Failure::Config(ConfigErrors(vec![ConfigIssue {
                path: "preset".into(),
                rule: None,
                message: format!("unknown preset `{p}`; expected one of {PRESETS:?}"),
            }])));
        }
    }
    let mut c = parse_config(&text, cli.preset.as_deref()).map_err(Failure::Config)?;
    if let Some(e) = cli.verb.experiment() {
        c.experiment = e;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    c.validate().map_err(Failure::Config)?;
    Ok(c)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    // `--out` only moves the artifacts, so it stays out of the hashed config
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let mut out = Artifacts::new(&dir)?;
    let resolved = toml::to_string(&cfg).map_err(|e| anyhow!("serializing config: {e}"))?;
    out.write("config.toml", resolved.as_bytes())?;
    let scenario = cfg.build()?;
    let vtk = scenario.mesh.to_vtk();
    let mut failed = Vec::new();

    match &cli.verb {
        Verb::MeshExport => out.write("mesh.vtk", vtk.as_bytes())?,
        Verb::Simulate => simulate(&cfg, &scenario, &mut out)?,
        Verb::Stationary => {
            let guess = scenario.initial(&cfg.initial, cfg.seed)?;
            let sol = newton_solve(&scenario.model, &guess, cfg.stationary)?;
            let check = multiplier_cross_check(&scenario.model, &sol)?;
            out.json("stationary.json", &serde_json::json!({ "solution": sol, "cross_check": check }))?;
            let m = &scenario.model;
            let mu = bsch_core::BulkSurfaceField::constant(m.bulk_len(), m.surface_len(), sol.mu_inf, sol.theta_inf);
            out.write("stationary.ckpt", SimState { t: 0.0, phi: sol.phi.clone(), mu, step: 0 }.to_checkpoint().as_bytes())?;
        }
        Verb::Pullback => {
            let p = &cfg.pullback;
            let set = scenario.bounded_set(p.members, p.max_amplitude, cfg.initial.bound, cfg.seed)?;
            let report = pullback_experiment(&scenario.model, cfg.scheme, &scenario.velocity, &set, p.t_fixed, &p.offsets)?;
            let rows = report.rows.iter().flat_map(|r| {
                r.h1_sq.iter().enumerate().map(|(i, v)| vec![num(r.offset), num(r.tau), i.to_string(), num(*v)])
            });
            out.csv("pullback.csv", PULLBACK_COLUMNS, rows)?;
            out.json("pullback.json", &report)?;
        }
        Verb::Equilibrium => {
            let phi = scenario.initial(&cfg.initial, cfg.seed)?;
            let report = equilibrium_experiment(&scenario.model, cfg.scheme, &scenario.velocity, &phi, cfg.equilibrium_spec())?;
            out.samples("samples.csv", &report.record.samples)?;
            out.json("equilibrium.json", &report)?;
            out.write("final.ckpt", report.record.final_state.to_checkpoint().as_bytes())?;
        }
        Verb::Certify { only } => {
            let ids: Vec<usize> = if only.is_empty() { (1..=CRITERIA.len()).collect() } else { only.clone() };
            let certifier = Certifier::new();
            let outcomes: Vec<_> = ids
                .iter()
                .map(|&id| {
                    let o = certifier.run(id);
                    println!("{}", o.line());
                    o
                })
                .collect();
            let rows = outcomes.iter().flat_map(|o| {
                o.measures.iter().map(move |m| {
                    vec![o.id.to_string(), o.name.to_string(), o.passed.to_string(), m.name.clone(), num(m.value), m.rule.clone(), m.ok.to_string()]
                })
            });
            out.csv("certify.csv", CERTIFY_COLUMNS, rows)?;
            out.json("certify.json", &outcomes)?;
            failed = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
        }
    }

    out.finish(ManifestHeader {
        verb: cli.verb.name().into(),
        preset: cfg.preset.clone(),
        seed: cfg.seed,
        config_sha256: sha256_hex(resolved.as_bytes()),
        mesh_sha256: sha256_hex(vtk.as_bytes()),
    })?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Certification(failed))
    }
}

fn simulate(cfg: &RunConfig, scenario: &bsch_core::Scenario, out: &mut Artifacts) -> Result<()> {
    let model = &scenario.model;
    let phi = scenario.initial(&cfg.initial, cfg.seed)?;
    let mut st = Stepper::new(model, cfg.scheme, scenario.velocity.clone())?;
    st.keep_states = false;
    let (tau, t_end, dt) = (cfg.run.tau, cfg.run.t_end, cfg.scheme.dt);
    let chunk = cfg.run.checkpoint_every as f64 * dt;
    let mut state = st.initial_state(&phi, tau)?;
    let (mut samples, mut steps) = (Vec::new(), Vec::new());
    let (mut violation, mut upwind, mut breaches, mut cfl) = (0.0f64, false, 0, None);
    let mut k = 0u64;
    loop {
        k += 1;
        let target = if chunk > 0.0 { (tau + k as f64 * chunk).min(t_end) } else { t_end };
        let rec = st.run_from(state, target, cfg.run.record_every)?;
        let skip = usize::from(!samples.is_empty());
        samples.extend(rec.samples.iter().skip(skip).cloned());
        violation = violation.max(rec.max_violation());
        upwind |= rec.upwind_active;
        breaches += rec.interior_breaches;
        cfl = cfl.or(rec.cfl_warning.clone());
        steps.extend(rec.steps);
        state = rec.final_state;
        if target >= t_end {
            break;
        }
        out.write(&format!("checkpoints/step_{:08}.ckpt", state.step), state.to_checkpoint().as_bytes())?;
    }
    out.samples("samples.csv", &samples)?;
    out.steps("steps.csv", &steps)?;
    out.write("final.ckpt", state.to_checkpoint().as_bytes())?;
    let m0 = samples[0].mass.components();
    let drift = samples
        .iter()
        .flat_map(|s| s.mass.components().into_iter().zip(m0.clone()).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    out.json(
        "summary.json",
        &serde_json::json!({
            "steps": steps.len(),
            "t_final": state.t,
            "energy_initial": samples[0].energy.total,
            "energy_final": samples.last().map(|s| s.energy.total),
            "relative_mass_drift": drift / model.mass_scale(),
            "min_margin": steps.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min),
            "max_energy_violation_per_chunk": violation,
            "upwind_active": upwind,
            "interior_breaches": breaches,
            "cfl_warning": cfl,
        }),
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Err(failure) = run(&cli) else { return ExitCode::SUCCESS };
    let (kind, message, issues, code) = match failure {
        Failure::Config(e) => ("config", "invalid configuration".to_string(), e.0, 2),
        Failure::Certification(ids) => ("certification", format!("criteria {ids:?} failed"), Vec::new(), 1),
        Failure::Runtime(e) => ("runtime", format!("{e:#}"), Vec::new(), 1),
    };
    let record = ErrorRecord { status: "error", verb: cli.verb.name(), kind, message, issues };
    let text = serde_json::to_string_pretty(&record).unwrap_or_default();
    eprintln!("{text}");
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    if std::fs::create_dir_all(&dir).is_ok() {
        let _ = std::fs::write(dir.join("error.json"), text + "\n");
    }
    ExitCode::from(code)
}
