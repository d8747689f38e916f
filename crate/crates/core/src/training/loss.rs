//! The separation training objective: mean absolute error on the real
//! spectrogram part, the imaginary part, and the re-synthesized waveform,
//! summed.

use crate::error::Result;
use crate::model::SeparatedChannel;
use crate::signal::Spectrogram;
use crate::tensor::{Graph, Tensor, Var};

/// Builds the scalar loss comparing an in-graph estimate against a clean
/// target given as plain data. `target_wav` fixes the output length of the
/// in-graph resynthesis.
pub fn separation_loss(
    g: &mut Graph,
    sep: &SeparatedChannel,
    target: &Spectrogram,
    channel: usize,
    target_wav: &[f64],
    window: usize,
    hop: usize,
) -> Result<Var> {
    let bins = target.bins();
    let frames = target.frames();
    let tre = g.constant(Tensor::from_vec(
        vec![bins, frames],
        target.channel_re(channel).to_vec(),
    )?);
    let tim = g.constant(Tensor::from_vec(
        vec![bins, frames],
        target.channel_im(channel).to_vec(),
    )?);
    let dre = g.sub(sep.re, tre)?;
    let dim = g.sub(sep.im, tim)?;
    let l_re = g.l1_mean(dre)?;
    let l_im = g.l1_mean(dim)?;

    let est_wav = g.istft(sep.re, sep.im, window, hop, target_wav.len())?;
    let twav = g.constant(Tensor::from_vec(vec![target_wav.len()], target_wav.to_vec())?);
    let dwav = g.sub(est_wav, twav)?;
    let l_wav = g.l1_mean(dwav)?;

    let spec_sum = g.add(l_re, l_im)?;
    g.add(spec_sum, l_wav)
}
