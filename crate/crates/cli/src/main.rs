use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use tiersplat::arp::{plan, plan_even, Plan, Scenario};
use tiersplat::costmodel::{CostCurve, CurveKind, ProfileSamples};
use tiersplat::pipeline::{
    fit_devices, frame_for, fuse_hierarchy, run_end_to_end, score, Fusion, ModelSet, RunOptions,
};
use tiersplat::scenario::{Diagnostic, ScenarioFile, Severity, SplatSettings};
use tiersplat::sim::{compare_strategies, simulate, CloudMode};
use tiersplat::splat2d::{evaluate_model, ImageBuffer, SplatModel};

mod table;

#[derive(Parser)]
#[command(
    name = "tiersplat",
    version,
    about = "Plan, simulate and fuse cloud-edge-device splat reconstruction"
)]
struct Cli {
    /// Print a machine-readable JSON result on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and list every problem found.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Partition cameras across edges and devices.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Plain Voronoi regions with an even split per edge.
        #[arg(long)]
        even: bool,
        /// Export region boundary polylines, e.g. `res=64`.
        #[arg(long, value_parser = parse_resolution)]
        boundaries: Option<usize>,
    },
    /// Run a plan through the latency simulator.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        fusion: Option<Fusion>,
    },
    /// Even split against planned regions, end to end.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        fusion: Option<Fusion>,
    },
    /// Profile curve utilities.
    #[command(subcommand)]
    Profile(ProfileCommand),
    /// Image fitting and fusion.
    #[command(subcommand)]
    Splat(SplatCommand),
    /// Plan, simulate, fit, aggregate and fuse in one go.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum ProfileCommand {
    /// Fit a curve to `image_count,value` samples and print its breakpoints.
    Fit {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "train_time")]
        kind: CurveKind,
    },
}

#[derive(Subcommand)]
enum SplatCommand {
    /// Fit one model per device on the crops a plan assigns it.
    Fit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Take fitting settings and seed from this scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate device models per edge, then fuse the edges.
    Fuse {
        #[arg(long)]
        mode: Fusion,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = tiersplat::arp::DEFAULT_RETRAIN_EPOCHS)]
        epochs: usize,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// PSNR and SSIM of a model against an image.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 8)]
        strip_px: usize,
        /// Plan whose region boundaries define the strip.
        #[arg(long)]
        regions: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    even: bool,
    #[arg(long, default_value = "aggregate")]
    fusion: Fusion,
    #[arg(long, default_value_t = tiersplat::arp::DEFAULT_RETRAIN_EPOCHS)]
    epochs: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_resolution(s: &str) -> Result<usize, String> {
    let n = s.strip_prefix("res=").unwrap_or(s);
    match n.parse::<usize>() {
        Ok(v) if v >= 2 => Ok(v),
        _ => Err(format!("expected res=N with N >= 2, got {s:?}")),
    }
}

/// A scenario that failed validation; exits with status 1.
#[derive(Debug)]
struct Invalid(Vec<Diagnostic>);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let errors = self
            .0
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .count();
        write!(f, "scenario invalid ({errors} error(s))")
    }
}

impl std::error::Error for Invalid {}

/// What a command reports: a human line and its JSON form.
struct Outcome {
    text: String,
    json: Value,
}

impl Outcome {
    fn new(text: impl Into<String>, json: Value) -> Self {
        Self {
            text: text.into(),
            json,
        }
    }
}

fn load_scenario(path: &Path) -> Result<(ScenarioFile, Scenario)> {
    let file = ScenarioFile::load(path)
        .with_context(|| format!("reading {}", path.display()))?
        .map_err(|d| Invalid(vec![d]))?;
    let diags = file.validate();
    for d in diags.iter().filter(|d| d.severity == Severity::Warning) {
        log::warn!("{d}");
    }
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(Invalid(diags).into());
    }
    let scenario = file.to_scenario()?;
    Ok((file, scenario))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn load_image(path: &Path) -> Result<ImageBuffer> {
    ImageBuffer::load_pgm(path).with_context(|| format!("reading image {}", path.display()))
}

fn cloud_mode(fusion: Option<Fusion>, scenario: &Scenario) -> CloudMode {
    match fusion {
        Some(Fusion::Merge) => CloudMode::Merge,
        _ => {
            if fusion.is_some() && scenario.cloud_aggregate_curve.is_none() {
                log::warn!(
                    "scenario has no cloud_aggregate_curve; cloud aggregation timed as zero"
                );
            }
            CloudMode::for_scenario(scenario)
        }
    }
}

fn fmt_db(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.2} dB"))
}

fn fmt_ssim(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn validate(path: &Path) -> Result<Outcome> {
    let file = ScenarioFile::load(path).with_context(|| format!("reading {}", path.display()))?;
    let diags = match file {
        Ok(f) => f.validate(),
        Err(d) => vec![d],
    };
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(Invalid(diags).into());
    }
    let text = diags
        .iter()
        .map(|d| format!("{d}\n"))
        .chain(std::iter::once("ok".to_string()))
        .collect::<String>();
    Ok(Outcome::new(
        text,
        json!({ "ok": true, "diagnostics": diags }),
    ))
}

fn plan_cmd(scenario: &Path, out: &Path, even: bool, boundaries: Option<usize>) -> Result<Outcome> {
    let (_, scenario) = load_scenario(scenario)?;
    let mut p = if even {
        plan_even(&scenario)?
    } else {
        plan(&scenario)?
    };
    if let Some(res) = boundaries {
        p.attach_boundaries(res)?;
    }
    write_json(out, &p)?;
    let residual = p.residual_ratio_history.last().copied();
    Ok(Outcome::new(
        format!(
            "{} plan: {} edges, {} iterations, max edge total {:.3} s, residual ratio {}",
            if even { "even" } else { "adaptive" },
            p.per_edge.len(),
            p.iterations_used,
            p.max_edge_total(),
            residual.map_or_else(|| "n/a".into(), |r| format!("{r:.4}")),
        ),
        json!({
            "out": out,
            "strategy": p.strategy,
            "iterations_used": p.iterations_used,
            "max_edge_total": p.max_edge_total(),
            "residual_ratio": residual,
        }),
    ))
}

fn simulate_cmd(
    scenario: &Path,
    plan_path: &Path,
    out: &Path,
    csv: Option<&Path>,
    fusion: Option<Fusion>,
) -> Result<Outcome> {
    let (_, scenario) = load_scenario(scenario)?;
    let p: Plan = read_json(plan_path)?;
    let report = simulate(&scenario, &p, &cloud_mode(fusion, &scenario))?;
    write_json(out, &report)?;
    if let Some(csv) = csv {
        let f = File::create(csv).with_context(|| format!("writing {}", csv.display()))?;
        report.write_csv(BufWriter::new(f))?;
    }
    Ok(Outcome::new(
        format!("end to end {:.3} s", report.end_to_end),
        json!({ "out": out, "end_to_end": report.end_to_end, "per_edge": report.per_edge }),
    ))
}

fn compare_cmd(scenario: &Path, fusion: Option<Fusion>) -> Result<Outcome> {
    let (_, scenario) = load_scenario(scenario)?;
    let cmp = compare_strategies(&scenario, &cloud_mode(fusion, &scenario))?;
    Ok(Outcome::new(
        table::comparison(&cmp),
        serde_json::to_value(&cmp)?,
    ))
}

fn profile_fit(csv: &Path, kind: CurveKind) -> Result<Outcome> {
    let f = File::open(csv).with_context(|| format!("reading {}", csv.display()))?;
    let curve = CostCurve::fit(ProfileSamples::from_csv(kind, f)?)?;
    let points: Vec<[f64; 2]> = curve.breakpoints().iter().map(|p| [p.x, p.y]).collect();
    let value = json!({
        "kind": kind,
        "breakpoints": points,
        "extrapolation_slope": curve.extrapolation_slope(),
    });
    Ok(Outcome::new(serde_json::to_string_pretty(&value)?, value))
}

fn splat_settings(scenario: Option<&Path>) -> Result<(SplatSettings, u64)> {
    match scenario {
        Some(path) => {
            let (file, scenario) = load_scenario(path)?;
            Ok((file.splat, scenario.seed))
        }
        None => Ok((SplatSettings::default(), 0)),
    }
}

fn splat_fit(
    image: &Path,
    regions: &Path,
    out: &Path,
    scenario: Option<&Path>,
    seed: Option<u64>,
) -> Result<Outcome> {
    let (settings, scenario_seed) = splat_settings(scenario)?;
    let image = load_image(image)?;
    let p: Plan = read_json(regions)?;
    let frame = frame_for(&p.partition, &image);
    let devices = fit_devices(&p, &image, &frame, &settings, seed.unwrap_or(scenario_seed))?;
    let gaussians: usize = devices.iter().map(|d| d.model.len()).sum();
    let count = devices.len();
    ModelSet {
        frame,
        partition: p.partition,
        devices,
    }
    .save(out)?;
    Ok(Outcome::new(
        format!(
            "fitted {count} device models ({gaussians} Gaussians) into {}",
            out.display()
        ),
        json!({ "out": out, "devices": count, "gaussians": gaussians }),
    ))
}

fn splat_fuse(
    mode: Fusion,
    models: &Path,
    out: &Path,
    epochs: usize,
    scenario: Option<&Path>,
    seed: Option<u64>,
) -> Result<Outcome> {
    let (settings, scenario_seed) = splat_settings(scenario)?;
    let set = ModelSet::load(models)?;
    let params = settings.aggregate_params(epochs, seed.unwrap_or(scenario_seed));
    let fused = fuse_hierarchy(&set.devices, &set.partition, &set.frame, mode, &params)?;
    fused.save(out)?;
    Ok(Outcome::new(
        format!(
            "{mode}: {} Gaussians written to {}",
            fused.len(),
            out.display()
        ),
        json!({ "out": out, "mode": mode, "gaussians": fused.len() }),
    ))
}

fn splat_eval(
    model: &Path,
    image: &Path,
    strip_px: usize,
    regions: Option<&Path>,
) -> Result<Outcome> {
    let model = SplatModel::load(model).with_context(|| format!("reading {}", model.display()))?;
    let image = load_image(image)?;
    let quality = match regions {
        Some(path) => {
            let p: Plan = read_json(path)?;
            score(
                &model,
                &image,
                &p.partition,
                &frame_for(&p.partition, &image),
                strip_px,
            )?
        }
        None => evaluate_model(&model, &image, |_, _| 0, strip_px)?,
    };
    Ok(Outcome::new(
        format!(
            "PSNR {}  SSIM {}  strip PSNR {}  strip SSIM {}",
            fmt_db(Some(quality.psnr)),
            fmt_ssim(Some(quality.ssim)),
            fmt_db(quality.strip_psnr),
            fmt_ssim(quality.strip_ssim),
        ),
        serde_json::to_value(quality)?,
    ))
}

fn run_cmd(args: &RunArgs) -> Result<Outcome> {
    let (file, _) = load_scenario(&args.scenario)?;
    let image = load_image(&args.image)?;
    let opts = RunOptions {
        even: args.even,
        fusion: args.fusion,
        epochs: args.epochs,
        seed: args.seed,
    };
    let output = run_end_to_end(&file, &image, &opts)?;
    output.write(&args.out)?;
    let m = &output.metrics;
    Ok(Outcome::new(
        format!(
            "end to end {:.3} s; {} fusion, {} Gaussians: PSNR {}, SSIM {}, strip PSNR {}, strip SSIM {}",
            m.end_to_end,
            m.fusion,
            m.gaussians,
            fmt_db(Some(m.psnr)),
            fmt_ssim(Some(m.ssim)),
            fmt_db(m.strip_psnr),
            fmt_ssim(m.strip_ssim),
        ),
        json!({ "out": args.out, "metrics": m }),
    ))
}

fn dispatch(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Validate { scenario } => validate(scenario),
        Command::Plan {
            scenario,
            out,
            even,
            boundaries,
        } => plan_cmd(scenario, out, *even, *boundaries),
        Command::Simulate {
            scenario,
            plan,
            out,
            csv,
            fusion,
        } => simulate_cmd(scenario, plan, out, csv.as_deref(), *fusion),
        Command::Compare { scenario, fusion } => compare_cmd(scenario, *fusion),
        Command::Profile(ProfileCommand::Fit { csv, kind }) => profile_fit(csv, *kind),
        Command::Splat(SplatCommand::Fit {
            image,
            regions,
            out,
            scenario,
            seed,
        }) => splat_fit(image, regions, out, scenario.as_deref(), *seed),
        Command::Splat(SplatCommand::Fuse {
            mode,
            models,
            out,
            epochs,
            scenario,
            seed,
        }) => splat_fuse(*mode, models, out, *epochs, scenario.as_deref(), *seed),
        Command::Splat(SplatCommand::Eval {
            model,
            image,
            strip_px,
            regions,
        }) => splat_eval(model, image, *strip_px, regions.as_deref()),
        Command::Run(args) => run_cmd(args),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("RADIANT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("RADIANT_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| dispatch(&cli.command));
    match result {
        Ok(outcome) => {
            if cli.json {
                println!("{}", outcome.json);
            } else {
                println!("{}", outcome.text);
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            let invalid = err.downcast_ref::<Invalid>();
            if cli.json {
                let diagnostics = invalid.map_or(&[][..], |i| &i.0[..]);
                println!(
                    "{}",
                    json!({ "ok": false, "error": format!("{err:#}"), "diagnostics": diagnostics })
                );
            } else if let Some(Invalid(diags)) = invalid {
                for d in diags {
                    eprintln!("{d}");
                }
                eprintln!("error: {err}");
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(if invalid.is_some() { 1 } else { 2 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_resolution_flag() {
        assert_eq!(parse_resolution("res=64"), Ok(64));
        assert_eq!(parse_resolution("16"), Ok(16));
        assert!(parse_resolution("res=1").is_err());
        assert!(parse_resolution("res=x").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
