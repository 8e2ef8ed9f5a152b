//! Saves a model, reloads it and checks the parameters survive bit for bit.

use tstnn::config::ModelConfig;
use tstnn::model::{load_checkpoint, save_checkpoint, Tstnn};

fn main() -> tstnn::Result<()> {
    let model = Tstnn::<f32>::new(ModelConfig::tiny(), 3)?;
    let path = std::env::temp_dir().join("tstnn_example.ckpt");
    save_checkpoint(&model, &path)?;
    let back = load_checkpoint(&path)?;
    let same = model.store.ids().all(|id| {
        let (a, b) = (model.store.value(id).data(), back.store.value(id).data());
        a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    println!("{}: {} tensors, {} bytes, identical = {same}", path.display(), model.store.len(), std::fs::metadata(&path)?.len());
    std::fs::remove_file(path)?;
    Ok(())
}
