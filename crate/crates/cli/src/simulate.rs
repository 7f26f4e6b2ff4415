use std::fs::File;
use std::io::BufWriter;

use eery_core::config::RoomsFile;
use eery_core::simulator::{replay_trace, run, RunOptions, Scenario, ScenarioError, Trace};

use crate::logsink::LogSink;
use crate::{CliError, ReplayArgs, SimulateArgs};

fn scenario_error(e: ScenarioError) -> CliError {
    CliError::Scenario(e.to_string())
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let profile = args.profile.profile()?;
    if let Some(s) = args.speed {
        if !(s.is_finite() && s > 0.0) {
            return Err(CliError::Config(format!("--speed must be positive, got {s}")));
        }
    }
    let scenario = Scenario::load(&args.scenario).map_err(scenario_error)?;
    let opts = RunOptions {
        transport: args.transport,
        seed: args.seed,
        profile,
        speed: args.speed,
    };
    let outcome = run(&scenario, &opts).map_err(scenario_error)?;

    LogSink::open(args.log.as_deref())?.write(&outcome.log)?;
    if let Some(path) = &args.trace {
        outcome.trace.write(BufWriter::new(File::create(path)?))?;
    }
    scenario
        .check(&outcome.log, &outcome.names)
        .map_err(|e| CliError::Mismatch(format!("{}: {e}", scenario.name)))?;
    eprintln!(
        "{}: {} events over {}, expectations met",
        scenario.name,
        outcome.log.len(),
        opts.transport
    );
    Ok(())
}

pub fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let profile = args.profile.profile()?;
    let rooms = RoomsFile::load(&args.rooms).map_err(|e| CliError::Config(e.to_string()))?;
    let text = std::fs::read_to_string(&args.trace)?;
    let trace = Trace::parse(&text).map_err(|e| CliError::Scenario(e.to_string()))?;
    let opts = RunOptions {
        transport: args.transport,
        seed: args.seed,
        profile,
        speed: None,
    };
    let outcome = replay_trace(&rooms, &trace, &opts).map_err(scenario_error)?;
    LogSink::open(args.log.as_deref())?.write(&outcome.log)?;
    eprintln!("replayed {} samples: {} events", trace.records.len(), outcome.log.len());
    Ok(())
}
