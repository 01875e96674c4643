use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aquasentinel::augmentation::augment_from;
use aquasentinel::harness::{
    demand_patterns, evaluate, forecast_series, plan_cases, run_batch, ExperimentConfig,
};
use aquasentinel::hydraulics::{simulate, simulate_detailed, LeakScenario, StateFrame};
use aquasentinel::io;
use aquasentinel::localization::{co_anomalous, localize};
use aquasentinel::network::Network;
use aquasentinel::placement::{score_nodes, select_sensors};
use aquasentinel::reporting::{render_report_with, Passthrough, TextGenerator, DEFAULT_TEMPLATE};
use aquasentinel::rtca::{AnomalyEvent, Detector};

#[derive(Parser)]
#[command(name = "aquasentinel", version, about = "Sewer leak detection toolkit")]
struct Cli {
    /// TOML experiment config
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Network JSON (overrides the config; bundled network by default)
    #[arg(long, global = true)]
    network: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a series, optionally with a leak scenario
    Simulate {
        #[arg(long)]
        steps: Option<usize>,
        /// Scenario JSON
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Use the evaluation-week demand stream and step numbering
        #[arg(long)]
        evaluation_week: bool,
    },
    /// Score nodes and pick sensor locations
    PlaceSensors {
        /// Baseline series CSV; simulated when absent
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Reconstruct full frames from sparse readings
    Augment {
        #[arg(long)]
        readings: PathBuf,
    },
    /// One-step-ahead forecasts for an observation series
    Forecast {
        /// Leak-free training series CSV
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        observations: PathBuf,
    },
    /// Run the detector over predictions and observations
    Detect {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        observations: PathBuf,
    },
    /// Find the upstream-most anomalous nodes and implicated conduits
    Localize {
        #[arg(long)]
        events: PathBuf,
    },
    /// Render a maintenance report
    Report {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        localization: PathBuf,
        #[arg(long)]
        template: Option<PathBuf>,
        /// Route sections through the configured text endpoint
        #[arg(long)]
        remote: bool,
    },
    /// Run the full scenario batch
    Evaluate,
}

enum Failure {
    Input(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    log::info!("writing {}", path.display());
    Ok(BufWriter::new(f))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Outcome {
    serde_json::to_writer_pretty(create(dir, name)?, value).map_err(runtime)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(input)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(net) = cli.network {
        cfg.network = Some(net);
    }
    cfg.validate().map_err(input)?;
    let net = cfg.network().map_err(input)?;
    let out = cli.out.as_path();

    match cli.command {
        Command::Simulate {
            steps,
            scenario,
            evaluation_week,
        } => {
            let steps = steps.unwrap_or(cfg.steps);
            let scenario: Option<LeakScenario> = scenario.as_deref().map(read_json).transpose()?;
            let (stream, offset) = if evaluation_week { (1, cfg.steps) } else { (0, 0) };
            let patterns = demand_patterns(&net, &cfg.demand, cfg.seed, stream);
            let run = simulate_detailed(&net, &patterns, offset, steps, scenario.as_ref()).map_err(input)?;
            let mut series = run.to_timeseries(net.node_count());
            // Steps in the file are local to the simulated window.
            for (i, f) in series.frames.iter_mut().enumerate() {
                f.t = i;
            }
            io::write_timeseries_csv(create(out, "timeseries.csv")?, &net, &series).map_err(runtime)
        }
        Command::PlaceSensors { baseline } => {
            let baseline = match baseline {
                Some(p) => io::read_timeseries_csv(open(&p)?, &net).map_err(input)?,
                None => simulate(&net, &demand_patterns(&net, &cfg.demand, cfg.seed, 0), cfg.steps, None)
                    .map_err(runtime)?,
            };
            let scores = score_nodes(&net, &baseline, &cfg.placement).map_err(input)?;
            let selection = select_sensors(&scores, &net, &cfg.placement);
            if selection.shortfall > 0 {
                log::warn!("{} sensors could not be placed under the spacing constraint", selection.shortfall);
            }
            #[derive(serde::Serialize)]
            struct Placement {
                selected: Vec<String>,
                scores: Vec<aquasentinel::placement::NodeScore>,
            }
            write_json(
                out,
                "placement.json",
                &Placement {
                    selected: selection.selected,
                    scores,
                },
            )
        }
        Command::Augment { readings } => augment_cmd(&cfg, &net, &readings, out),
        Command::Forecast { train, observations } => {
            let train = io::read_timeseries_csv(open(&train)?, &net).map_err(input)?;
            let obs = io::read_timeseries_csv(open(&observations)?, &net).map_err(input)?;
            let predicted = forecast_series(&cfg, &net, &train, &obs).map_err(runtime)?;
            io::write_predictions_csv(create(out, "predictions.csv")?, &net, &predicted, &obs.frames).map_err(runtime)
        }
        Command::Detect {
            predictions,
            observations,
        } => detect_cmd(&cfg, &net, &predictions, &observations, out),
        Command::Localize { events } => {
            let events: Vec<AnomalyEvent> = read_json(&events)?;
            let set: Vec<String> = co_anomalous(&events, cfg.rtca.persist).into_iter().collect();
            let result = localize(&net, &set).map_err(input)?;
            write_json(out, "localization.json", &result)
        }
        Command::Report {
            events,
            localization,
            template,
            remote,
        } => {
            let events: Vec<AnomalyEvent> = read_json(&events)?;
            let localization = read_json(&localization)?;
            let template = match template.or(cfg.report.template.clone()) {
                Some(p) => read_text(&p)?,
                None => DEFAULT_TEMPLATE.to_string(),
            };
            let generator = text_generator(&cfg, remote)?;
            let report = render_report_with(&events, &localization, &net, &template, generator.as_ref()).map_err(input)?;
            let mut w = create(out, "report.txt")?;
            std::io::Write::write_all(&mut w, report.text.as_bytes()).map_err(runtime)?;
            write_json(out, "report.json", &report)
        }
        Command::Evaluate => {
            let cases = run_batch(&cfg, &net, &plan_cases(&cfg, &net));
            let report = evaluate(&cases).map_err(runtime)?;
            io::write_cases_csv(create(out, "cases.csv")?, &cases).map_err(runtime)?;
            write_json(out, "summary.json", &report)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
            if report.failed_cases > 0 {
                return Err(Failure::Runtime(format!("{} case(s) failed", report.failed_cases)));
            }
            Ok(())
        }
    }
}

fn augment_cmd(cfg: &ExperimentConfig, net: &Network, readings: &Path, out: &Path) -> Outcome {
    let readings = io::read_readings_csv(open(readings)?, net).map_err(input)?;
    let patterns = demand_patterns(net, &cfg.demand, cfg.seed, 0);
    let baseline = simulate(net, &patterns, cfg.steps.min(cfg.demand.period), None).map_err(runtime)?;
    let aug = cfg.augmentation.clone().with_scales_from(&baseline);
    let mut frames = Vec::with_capacity(readings.len());
    let mut previous: Option<StateFrame> = None;
    for (t, nodes) in readings {
        let demands: Vec<f64> = patterns.iter().map(|p| p.expected(t)).collect();
        let mut a = augment_from(net, &nodes, &demands, &aug, previous.as_ref()).map_err(runtime)?;
        if !a.converged {
            log::debug!("step {t}: stopped after {} iterations", a.iterations);
        }
        a.frame.t = t;
        previous = Some(a.frame.clone());
        frames.push(a);
    }
    io::write_augmented_csv(create(out, "augmented.csv")?, net, &frames).map_err(runtime)
}

fn detect_cmd(cfg: &ExperimentConfig, net: &Network, predictions: &Path, observations: &Path, out: &Path) -> Outcome {
    let predicted = io::read_predictions_csv(open(predictions)?, net, cfg.rtca.channel).map_err(input)?;
    let observed = io::read_timeseries_csv(open(observations)?, net).map_err(input)?;
    let by_step: BTreeMap<usize, &StateFrame> = predicted.iter().map(|f| (f.t, f)).collect();
    let ids = net.nodes().iter().map(|n| n.id.clone()).collect();
    let mut detector = Detector::new(ids, cfg.rtca.clone()).map_err(input)?;
    let mut events = Vec::new();
    let mut status = Vec::with_capacity(observed.len());
    for frame in &observed.frames {
        let Some(p) = by_step.get(&frame.t) else {
            return Err(Failure::Input(format!("no prediction for step {}", frame.t)));
        };
        let outputs = detector.step_frame(frame, p).map_err(input)?;
        events.extend(outputs.iter().filter_map(|o| o.event.clone()));
        status.push((frame.t, outputs));
    }
    io::write_status_csv(create(out, "status.csv")?, net, &status).map_err(runtime)?;
    write_json(out, "events.json", &events)
}

fn text_generator(cfg: &ExperimentConfig, remote: bool) -> Result<Box<dyn TextGenerator>, Failure> {
    if !remote {
        return Ok(Box::new(Passthrough));
    }
    let Some(url) = cfg.report.endpoint.clone() else {
        return Err(Failure::Input("--remote needs report.endpoint in the config".into()));
    };
    remote_generator(url, cfg.report.model.clone())
}

#[cfg(feature = "remote-text")]
fn remote_generator(url: String, model: String) -> Result<Box<dyn TextGenerator>, Failure> {
    Ok(Box::new(aquasentinel::reporting::HttpTextGenerator { url, model }))
}

#[cfg(not(feature = "remote-text"))]
fn remote_generator(_url: String, _model: String) -> Result<Box<dyn TextGenerator>, Failure> {
    Err(Failure::Input("built without the remote-text feature".into()))
}
