use std::path::Path;

use adaptseg::nn::checkpoint::{load_models, Checkpoint};
use adaptseg::tensor::io::write_atomic;
use adaptseg::tensor::{tensor_read, tensor_write};
use adaptseg::train::predict_labels;
use adaptseg::{Models32, NetTag, Tensor32};

use crate::error::{CliError, CliResult};

/// Background, head, upper body, lower body.
pub const PALETTE: [[u8; 3]; 4] = [[0, 0, 0], [230, 60, 60], [60, 180, 75], [60, 100, 230]];

/// Binary PPM of a label map in [`PALETTE`] colors; unknown ids are white.
pub fn render_ppm(labels: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for &c in labels {
        out.extend_from_slice(PALETTE.get(c as usize).unwrap_or(&[255, 255, 255]));
    }
    out
}

pub fn infer(checkpoint: &Path, image: &Path, out: &Path, vis: Option<&Path>, assert_purity: bool) -> CliResult<()> {
    let models: Models32 = load_models(&Checkpoint::load(checkpoint)?)?;
    let img: Tensor32 = tensor_read(image)?;
    let (h, w) = models.profile.input_hw;
    if img.dims() != [3, h, w] {
        return Err(CliError::Usage(format!(
            "{}: image dims {:?}, the checkpoint expects [3, {h}, {w}]",
            image.display(),
            img.dims()
        )));
    }
    let (labels, trace) = predict_labels(&models, &img.reshape(&[1, 3, h, w])?)?;
    if assert_purity {
        let intruders: Vec<&str> = [NetTag::Compensator, NetTag::FeatureAdversary, NetTag::LabelAdversary]
            .into_iter()
            .filter(|&t| trace.contains_tag(t))
            .map(NetTag::short)
            .collect();
        if !intruders.is_empty() {
            return Err(CliError::Numerical(format!(
                "purity check failed: the inference trace contains operations of {}",
                intruders.join(", ")
            )));
        }
        let tags: Vec<&str> = trace.tags().into_iter().map(NetTag::short).collect();
        eprintln!("purity check passed: {} operations, networks {}", trace.len(), tags.join(", "));
    }
    let labels = labels.reshape(&[h, w])?;
    tensor_write(&labels, out)?;
    if let Some(vis) = vis {
        write_atomic(vis, &render_ppm(labels.data(), h, w))?;
    }
    Ok(())
}
