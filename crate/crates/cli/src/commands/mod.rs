pub mod bench;
pub mod eval;
pub mod localize;
pub mod serve;
pub mod simulate;
pub mod synth;
pub mod train;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::resolve;

#[derive(Parser, Debug)]
#[command(name = "conekp", version, about = "Cone keypoint perception toolkit")]
pub struct Cli {
    /// TOML config for the subcommand; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic crop dataset and optional stereo scenes.
    Synth(synth::SynthFlags),
    /// Train a keypoint model.
    Train(train::TrainFlags),
    /// Score checkpoints or a predictions file.
    Eval(eval::EvalFlags),
    /// Localize one cone from a stereo pair.
    Localize(localize::LocalizeFlags),
    /// Run the stereo pipeline over simulated scenes.
    Simulate(simulate::SimulateFlags),
    /// Time keypoint inference.
    Bench(bench::BenchFlags),
    /// Start the annotation HTTP service.
    Serve(serve::ServeFlags),
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::Synth(f) => synth::run(&resolve(file, &f)?).map(drop),
        Command::Train(f) => train::run(&resolve(file, &f)?).map(drop),
        Command::Eval(f) => eval::run(&resolve(file, &f)?).map(drop),
        Command::Localize(f) => localize::run(&resolve(file, &f)?).map(drop),
        Command::Simulate(f) => simulate::run(&resolve(file, &f)?).map(drop),
        Command::Bench(f) => bench::run(&resolve(file, &f)?).map(drop),
        Command::Serve(f) => serve::run(&resolve(file, &f)?),
    }
}
