//! `wren dump-filterbank`: the warped filterbank geometry as a table,
//! one row per filter, suitable for plotting the mapping curve.

use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use wren_core::archive::load_model_from;
use wren_core::frontend::dump_filterbank;
use wren_core::Result;

use crate::util::{self, Arch};

#[derive(Args)]
pub struct DumpArgs {
    /// Read the learned geometry from a trained model archive
    #[arg(long, conflicts_with_all = ["arch", "breakpoint", "width"])]
    model: Option<PathBuf>,
    /// Architecture preset supplying the static geometry: toy|full
    #[arg(long, default_value = "full", value_parser = Arch::from_str)]
    arch: Arch,
    /// Breakpoint frequency in Hz (defaults to the preset's)
    #[arg(long)]
    breakpoint: Option<f64>,
    /// Transition width (defaults to the preset's)
    #[arg(long)]
    width: Option<f64>,
}

pub fn run(args: &DumpArgs) -> Result<()> {
    let text = match &args.model {
        Some(path) => {
            let model = load_model_from::<f32>(path)?;
            dump_filterbank(&model.filterbank_params())?
        }
        None => {
            let config = util::model_config(
                args.arch,
                vec!["placeholder".into()],
                wren_core::frontend::FrontendKind::SemiLearnable,
            );
            let params = config.filterbank_params::<f64>(
                args.breakpoint.unwrap_or(config.init_breakpoint),
                args.width.unwrap_or(config.init_width),
            );
            dump_filterbank(&params)?
        }
    };
    print!("{text}");
    Ok(())
}
