//! Prints the parameter breakdown of the default (full-size) model and
//! the tiny test configuration.

use tstnn::config::ModelConfig;
use tstnn::model::Tstnn;

fn main() -> tstnn::Result<()> {
    for (name, cfg) in [("default", ModelConfig::default()), ("tiny", ModelConfig::tiny())] {
        let model = Tstnn::<f32>::new(cfg, 0)?;
        println!("== {name}\n{}\n", model.param_count());
    }
    Ok(())
}
