//! Segments a clip into overlapping frames and reassembles it.

use tstnn::framing::{overlap_add, segment, AudioBuffer, FramingSpec};

fn main() -> tstnn::Result<()> {
    let audio = AudioBuffer::new((0..600).map(|i| (i as f32 * 0.03).sin()).collect(), 16_000)?;
    let spec = FramingSpec::new(512, 256)?;
    let (frames, len) = segment(&audio, &spec)?;
    println!("L = {len}, frames {:?}", frames.tensor().shape());

    let back = overlap_add(&frames, &spec, len)?;
    let err = audio.samples.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    println!("reassembled {} samples, max |err| = {err:e}", back.len());
    Ok(())
}
