//! Command-line front end: scenario runner, individual estimators on CSV
//! inputs, closed-form physics calculators, and the reproduction report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use levitrap::analysis;
use levitrap::constants::H2_MOLECULE_MASS;
use levitrap::detection;
use levitrap::error::Error;
use levitrap::io;
use levitrap::physics::{self, Environment, ParticleShape, ParticleSpec, Uncertain};
use levitrap::report;
use levitrap::scenario::{self, Scenario};
use levitrap::spectral;

#[derive(Parser)]
#[command(
    name = "levitrap",
    about = "Levitated-nanoparticle oscillator simulator and estimation toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct EnvArgs {
    /// Secular frequency f_z (Hz).
    #[arg(long, default_value_t = 1280.0)]
    f_z_hz: f64,
    /// Gas temperature (K).
    #[arg(long, default_value_t = 300.0)]
    gas_temp_k: f64,
    /// Gas molecule mass (kg); defaults to molecular hydrogen.
    #[arg(long, default_value_t = H2_MOLECULE_MASS)]
    gas_mass_kg: f64,
    /// Background pressure (mbar).
    #[arg(long, default_value_t = 7e-11)]
    pressure_mbar: f64,
    /// Particle-to-electrode distance (m).
    #[arg(long, default_value_t = 0.92e-3)]
    electrode_distance_m: f64,
    /// Electrode resistivity (Ω·m).
    #[arg(long, default_value_t = 6.9e-7)]
    electrode_resistivity_ohm_m: f64,
}

impl EnvArgs {
    fn build(&self) -> Environment {
        Environment {
            pressure_mbar: self.pressure_mbar,
            gas_temperature: self.gas_temp_k,
            gas_molecule_mass: self.gas_mass_kg,
            secular_frequency: self.f_z_hz,
            electrode_distance: self.electrode_distance_m,
            electrode_resistivity: self.electrode_resistivity_ohm_m,
        }
    }
}

#[derive(Args)]
struct ParticleArgs {
    /// Particle mass (kg).
    #[arg(long, default_value_t = 4.3e-17)]
    mass_kg: f64,
    /// Model radius (m): sphere radius or dumbbell cylinder radius.
    #[arg(long, default_value_t = 1.8898815748423097e-7)]
    radius_m: f64,
    /// Charge in elementary charges.
    #[arg(long, default_value_t = 300)]
    charge_e: i64,
    #[arg(long, value_enum, default_value_t = ShapeArg::Sphere)]
    shape: ShapeArg,
    /// Momentum accommodation factor.
    #[arg(long, default_value_t = 0.9)]
    accommodation: f64,
    /// Particle surface temperature (K).
    #[arg(long, default_value_t = 300.0)]
    surface_temp_k: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ShapeArg {
    Sphere,
    Dumbbell,
}

impl ParticleArgs {
    fn build(&self) -> ParticleSpec {
        ParticleSpec {
            mass: self.mass_kg,
            nominal_radius: self.radius_m,
            charge_e: self.charge_e,
            shape: match self.shape {
                ShapeArg::Sphere => ParticleShape::Sphere,
                ShapeArg::Dumbbell => ParticleShape::Dumbbell,
            },
            accommodation: self.accommodation,
            surface_temperature: self.surface_temp_k,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config (simulate → detect → estimate) and write its
    /// artifact bundle.
    Simulate {
        /// Path to a scenario TOML file.
        #[arg(long, conflicts_with = "scenario")]
        config: Option<PathBuf>,
        /// Name of a bundled scenario.
        #[arg(long)]
        scenario: Option<String>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// List bundled scenarios and exit.
        #[arg(long)]
        list: bool,
    },
    /// Weighted log-space ring-down fit on a squared-amplitude CSV
    /// (t_s,a2_m2).
    RingdownFit {
        #[arg(long)]
        input: PathBuf,
        /// Amplitude measurement uncertainty Δa (m).
        #[arg(long, default_value_t = 0.0)]
        delta_a_m: f64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Single-parameter ring-up fit on an energy CSV (t_s,e_kbt0).
    RingupFit {
        #[arg(long)]
        input: PathBuf,
        /// Time at which feedback cooling switches off (s).
        #[arg(long)]
        t_fb_s: f64,
        /// Mode temperature under feedback (K).
        #[arg(long)]
        t_fb_k: f64,
        /// Bath temperature (K).
        #[arg(long, default_value_t = 300.0)]
        t0_k: f64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Linearized heating fit on an energy CSV (t_s,e_kbt0).
    HeatingFit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        t_fb_s: f64,
        #[arg(long)]
        t_fb_k: f64,
        #[arg(long, default_value_t = 300.0)]
        t0_k: f64,
        /// Secular frequency (Hz) for the phonon conversion.
        #[arg(long, default_value_t = 1280.0)]
        f_z_hz: f64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Total-least-squares γ–P fit on a CSV with header
    /// gamma_rad_s,gamma_sigma,p_mbar,p_sigma.
    TlsFit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Allan deviation of a frequency CSV (t_s,f_hz).
    Allan {
        #[arg(long)]
        input: PathBuf,
        /// Nominal oscillator frequency (Hz).
        #[arg(long, default_value_t = 1280.0)]
        f_z_hz: f64,
        /// Averaging times (s); octave-spaced defaults when omitted.
        #[arg(long, value_delimiter = ',')]
        taus_s: Vec<f64>,
        #[arg(long, default_value = "allan.csv")]
        output: PathBuf,
    },
    /// PLL frequency extraction from a position/voltage trace CSV.
    Pll {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1280.0)]
        f_z_hz: f64,
        #[arg(long, default_value_t = 5.0)]
        cutoff_hz: f64,
        #[arg(long, default_value = "frequency.csv")]
        output: PathBuf,
    },
    /// Six-parameter profile-model fit of an intensity profile
    /// (position_m,intensity CSV or raw binary).
    ProfileFit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Noise-budget conversions from a measured phonon heating rate.
    NoiseBudget {
        /// Phonon heating rate (1/s).
        #[arg(long)]
        phonon_rate: f64,
        #[command(flatten)]
        particle: ParticleArgs,
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Free-molecular-flow damping coefficient and derived quantities.
    DampingTheory {
        #[command(flatten)]
        particle: ParticleArgs,
        #[command(flatten)]
        env: EnvArgs,
        /// 1σ of the particle mass (kg) for error propagation.
        #[arg(long, default_value_t = 0.4e-17)]
        mass_sigma_kg: f64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Recompute every published reference value and tabulate agreement.
    ReproducePaper {
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Parse and validate a trace or profile file, printing a summary.
    Import {
        #[arg(long)]
        input: PathBuf,
        /// Optional header-mapping TOML for foreign CSV columns.
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Convert between trace/profile formats (.csv ↔ .bin by extension).
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn emit_fit(
    fit: &levitrap::fit::FitResult,
    name: &str,
    format: Format,
    out_dir: &Option<PathBuf>,
) -> levitrap::Result<()> {
    match format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(fit).map_err(|e| Error::invalid(e.to_string()))?
        ),
        Format::Csv => {
            println!("parameter,value,sigma");
            for p in &fit.params {
                println!("{},{},{}", p.name, p.value, p.sigma);
            }
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        io::export_fit_json(fit, &dir.join(format!("fit_{name}.json")))?;
    }
    if fit.degenerate {
        eprintln!("warning: fit is degenerate (parameter unconstrained by the data)");
    }
    if fit.excess_noise {
        eprintln!("warning: residual MSE exceeds the measurement variance by >10x");
    }
    Ok(())
}

fn run(cli: Cli) -> levitrap::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            scenario: bundled,
            seed,
            out_dir,
            list,
        } => {
            if list {
                for (name, _) in scenario::bundled_scenarios() {
                    println!("{name}");
                }
                return Ok(());
            }
            let scenario = match (&config, &bundled) {
                (Some(path), None) => Scenario::from_file(path)?,
                (None, Some(name)) => scenario::bundled_scenario(name)?,
                _ => {
                    return Err(Error::invalid(
                        "provide exactly one of --config <path> or --scenario <name>",
                    ))
                }
            };
            let outcome = scenario::run_scenario(&scenario, Some(&out_dir), seed)?;
            print!("{}", outcome.report);
            if !outcome.failures.is_empty() {
                return Err(Error::FitFailure {
                    reason: format!(
                        "{} estimator step(s) failed; see report",
                        outcome.failures.len()
                    ),
                    iterations: 0,
                    last_params: vec![],
                });
            }
            Ok(())
        }
        Command::RingdownFit {
            input,
            delta_a_m,
            format,
            out_dir,
        } => {
            let trace = io::import_trace_csv(&input)?;
            let times = trace.times();
            let fit = analysis::ringdown_fit(&times, &trace.values, delta_a_m)?;
            emit_fit(&fit, "ringdown", format, &out_dir)
        }
        Command::RingupFit {
            input,
            t_fb_s,
            t_fb_k,
            t0_k,
            format,
            out_dir,
        } => {
            let trace = io::import_trace_csv(&input)?;
            let fit = analysis::ringup_fit(&trace, t_fb_s, t_fb_k, t0_k)?;
            emit_fit(&fit, "ringup", format, &out_dir)
        }
        Command::HeatingFit {
            input,
            t_fb_s,
            t_fb_k,
            t0_k,
            f_z_hz,
            format,
            out_dir,
        } => {
            let trace = io::import_trace_csv(&input)?;
            let omega = 2.0 * std::f64::consts::PI * f_z_hz;
            let fit = analysis::heating_fit(&trace, t_fb_s, t_fb_k, t0_k, omega)?;
            emit_fit(&fit, "heating", format, &out_dir)
        }
        Command::TlsFit {
            input,
            format,
            out_dir,
        } => {
            let (gammas, pressures) = read_tls_points(&input)?;
            let fit = analysis::tls_pressure_fit(&gammas, &pressures)?;
            emit_fit(&fit, "tls", format, &out_dir)
        }
        Command::Allan {
            input,
            f_z_hz,
            taus_s,
            output,
        } => {
            let trace = io::import_trace_csv(&input)?;
            if trace.unit != levitrap::trace::Unit::Hertz {
                return Err(Error::invalid("allan expects a frequency trace (f_hz)"));
            }
            let taus = if taus_s.is_empty() {
                spectral::default_taus(trace.dt, trace.duration())
            } else {
                taus_s
            };
            let pts =
                spectral::allan_deviation_from_samples(&trace.values, trace.dt, f_z_hz, &taus)?;
            io::export_allan_csv(&pts, &output)?;
            for p in &pts {
                match p.sigma {
                    Some(s) => println!("tau = {:>10.3} s  sigma = {:.4e}", p.tau_actual, s),
                    None => println!("tau = {:>10.3} s  skipped (only {} interval)", p.tau, p.intervals),
                }
            }
            Ok(())
        }
        Command::Pll {
            input,
            f_z_hz,
            cutoff_hz,
            output,
        } => {
            let trace = io::import_trace_csv(&input)?;
            let series = spectral::pll_extract(&trace, f_z_hz, cutoff_hz)?;
            io::export_frequency_csv(&series, &output)?;
            println!(
                "extracted {} frequency samples ({} flagged) -> {}",
                series.len(),
                series.valid.iter().filter(|v| !**v).count(),
                output.display()
            );
            Ok(())
        }
        Command::ProfileFit {
            input,
            format,
            out_dir,
        } => {
            let profile = import_profile_any(&input)?;
            let fit = detection::fit_profile(&profile)?;
            match fit.amplitude_uncertainty {
                Some(da) => eprintln!(
                    "amplitude uncertainty |d_model - d_PF| = {:.3} px = {:.3e} m",
                    da,
                    da * profile.meter_per_pixel
                ),
                None => eprintln!("amplitude uncertainty unavailable (fewer than two data peaks)"),
            }
            emit_fit(&fit.fit, "profile", format, &out_dir)
        }
        Command::NoiseBudget {
            phonon_rate,
            particle,
            env,
            format,
        } => {
            let budget = physics::noise_budget(phonon_rate, &particle.build(), &env.build())?;
            match format {
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&budget)
                        .map_err(|e| Error::invalid(e.to_string()))?
                ),
                Format::Csv => {
                    println!("quantity,value,unit");
                    println!("phonon_rate,{},1/s", budget.phonon_rate);
                    println!("force_noise,{},N^2/Hz", budget.force_noise);
                    match budget.efield_noise {
                        Some(v) => println!("efield_noise,{v},(V/m)^2/Hz"),
                        None => println!("efield_noise,undefined,(V/m)^2/Hz"),
                    }
                    match budget.voltage_noise {
                        Some(v) => println!("voltage_noise,{v},V/sqrt(Hz)"),
                        None => println!("voltage_noise,undefined,V/sqrt(Hz)"),
                    }
                    println!("displacement_noise,{},m^2/Hz", budget.displacement_noise);
                }
            }
            Ok(())
        }
        Command::DampingTheory {
            particle,
            env,
            mass_sigma_kg,
            format,
        } => {
            let p = particle.build();
            let e = env.build();
            let a = physics::gas_damping_coefficient_with_sigma(&p, &e, mass_sigma_kg)?;
            let gamma = 2.0 * std::f64::consts::PI * a.value * e.pressure_mbar;
            let (q, qf) = physics::quality_factor(
                Uncertain::new(gamma, gamma * a.relative_sigma()),
                &e,
            )?;
            let heating = physics::gas_heating_rate(gamma, &e)?;
            let collisions = physics::collision_rate(&p, &e)?;
            match format {
                Format::Json => {
                    let value = serde_json::json!({
                        "a_th_hz_per_mbar": { "value": a.value, "sigma": a.sigma },
                        "gamma_rad_s": gamma,
                        "quality_factor": { "value": q.value, "sigma": q.sigma },
                        "qf_product_hz": { "value": qf.value, "sigma": qf.sigma },
                        "gas_heating_phonons_per_s": heating,
                        "collision_rate_per_s": collisions,
                    });
                    println!("{}", serde_json::to_string_pretty(&value).unwrap());
                }
                Format::Csv => {
                    println!("quantity,value,sigma");
                    println!("a_th_hz_per_mbar,{},{}", a.value, a.sigma);
                    println!("gamma_rad_s,{gamma},");
                    println!("quality_factor,{},{}", q.value, q.sigma);
                    println!("qf_product_hz,{},{}", qf.value, qf.sigma);
                    println!("gas_heating_phonons_per_s,{heating},");
                    println!("collision_rate_per_s,{collisions},");
                }
            }
            Ok(())
        }
        Command::ReproducePaper { format, out_dir } => {
            let report = report::reproduce()?;
            match format {
                Format::Csv => print!("{}", report.to_text()),
                Format::Json => println!("{}", report.to_json()),
            }
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("reproduction.txt"), report.to_text())?;
                std::fs::write(dir.join("reproduction.json"), report.to_json())?;
            }
            Ok(())
        }
        Command::Import { input, map } => {
            let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
            if ext == "bin" {
                let profile = io::import_profile_binary(&input)?;
                println!(
                    "profile: {} pixels, pitch {:.3e} m/px",
                    profile.positions.len(),
                    profile.meter_per_pixel
                );
                return Ok(());
            }
            let header_map = match &map {
                Some(p) => Some(io::HeaderMap::from_toml_file(p)?),
                None => None,
            };
            match io::import_trace_csv_mapped(&input, header_map.as_ref()) {
                Ok(trace) => {
                    println!(
                        "trace: {} samples, dt = {} s, unit column = {}, lit = {}/{}",
                        trace.len(),
                        trace.dt,
                        trace.unit.column_label(),
                        trace.lit_count(),
                        trace.len()
                    );
                    Ok(())
                }
                Err(trace_err) => match io::import_profile_csv(&input) {
                    Ok(profile) => {
                        println!(
                            "profile: {} pixels, pitch {:.3e} m/px",
                            profile.positions.len(),
                            profile.meter_per_pixel
                        );
                        Ok(())
                    }
                    Err(_) => Err(trace_err),
                },
            }
        }
        Command::Export { input, output } => {
            let in_ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
            let out_ext = output.extension().and_then(|e| e.to_str()).unwrap_or("");
            match (in_ext, out_ext) {
                ("csv", "bin") => {
                    let profile = io::import_profile_csv(&input)?;
                    io::export_profile_binary(&profile, &output)?;
                }
                ("bin", "csv") => {
                    let profile = io::import_profile_binary(&input)?;
                    io::export_profile_csv(&profile, &output)?;
                }
                ("csv", "csv") => {
                    let trace = io::import_trace_csv(&input)?;
                    io::export_trace_csv(&trace, &output)?;
                }
                _ => {
                    return Err(Error::invalid(
                        "supported conversions: csv->bin, bin->csv (profiles), csv->csv (traces)",
                    ))
                }
            }
            println!("wrote {}", output.display());
            Ok(())
        }
    }
}

fn import_profile_any(path: &PathBuf) -> levitrap::Result<detection::IntensityProfile> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => io::import_profile_binary(path),
        _ => io::import_profile_csv(path),
    }
}

fn read_tls_points(path: &PathBuf) -> levitrap::Result<(Vec<Uncertain>, Vec<Uncertain>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: "empty file".into(),
    })?;
    if header.trim() != "gamma_rad_s,gamma_sigma,p_mbar,p_sigma" {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!(
                "expected header 'gamma_rad_s,gamma_sigma,p_mbar,p_sigma', got '{header}'"
            ),
        });
    }
    let mut gammas = Vec::new();
    let mut pressures = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> levitrap::Result<f64> {
            s.parse().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("bad number '{s}': {e}"),
            })
        };
        gammas.push(Uncertain::new(parse(fields[0])?, parse(fields[1])?));
        pressures.push(Uncertain::new(parse(fields[2])?, parse(fields[3])?));
    }
    Ok((gammas, pressures))
}
