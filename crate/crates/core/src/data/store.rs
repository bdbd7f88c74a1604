use std::fs;
use std::path::Path;

use super::{Dataset, Domain, DomainSample};
use crate::error::{Error, Result};
use crate::tensor::io::write_atomic;
use crate::tensor::{tensor_read, tensor_write, Tensor};

pub const MANIFEST: &str = "manifest.tsv";

/// Write `images/<id>.tsr`, `labels/<id>.tsr` (labeled samples only) and a
/// `manifest.tsv` listing `<id>\t<image>\t<label>\t<domain>` per sample; the
/// label column is empty for unlabeled samples.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["images", "labels"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = String::new();
    for s in &dataset.samples {
        if s.id.is_empty() || s.id.contains(['\t', '\n', '/', '\\']) {
            return Err(Error::Dataset(format!("sample id {:?} is not a plain file stem", s.id)));
        }
        let image = format!("images/{}.tsr", s.id);
        tensor_write(&s.image, dir.join(&image))?;
        let label = match &s.label {
            Some(l) => {
                let name = format!("labels/{}.tsr", s.id);
                tensor_write(l, dir.join(&name))?;
                name
            }
            None => String::new(),
        };
        manifest.push_str(&format!("{}\t{image}\t{label}\t{}\n", s.id, s.domain));
    }
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Read a dataset in manifest order, checking that every image is `3 × H × W`
/// with one common `H × W` and every label map matches it.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut samples = Vec::new();
    let mut hw: Option<(usize, usize)> = None;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, image, label, domain] = cols[..] else {
            return Err(Error::Dataset(format!("{}:{}: expected 4 tab-separated columns", path.display(), n + 1)));
        };
        let domain: Domain = domain.parse()?;
        let read = |rel: &str, what: &str| -> Result<Vec<u8>> {
            let p = dir.join(rel);
            fs::read(&p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => {
                    Error::Dataset(format!("missing sample `{id}`: {what} file {} not found", p.display()))
                }
                _ => Error::io(&p, e),
            })
        };
        read(image, "image")?;
        let image_t: Tensor<f32> =
            tensor_read(dir.join(image)).map_err(|e| Error::Dataset(format!("sample `{id}` image: {e}")))?;
        let (h, w) = match image_t.dims() {
            [3, h, w] => (*h, *w),
            d => return Err(Error::Dataset(format!("sample `{id}`: image dims {d:?}, expected 3×H×W"))),
        };
        if let Some(first) = hw {
            if first != (h, w) {
                return Err(Error::Dataset(format!(
                    "sample `{id}`: image is {h}×{w}, earlier samples are {}×{}",
                    first.0, first.1
                )));
            }
        }
        hw = Some((h, w));
        let label_t = if label.is_empty() {
            None
        } else {
            read(label, "label")?;
            let t: Tensor<u8> =
                tensor_read(dir.join(label)).map_err(|e| Error::Dataset(format!("sample `{id}` label: {e}")))?;
            if t.dims() != [h, w] {
                return Err(Error::Dataset(format!(
                    "sample `{id}`: label dims {:?} do not match image {h}×{w}",
                    t.dims()
                )));
            }
            Some(t)
        };
        samples.push(DomainSample { id: id.to_string(), image: image_t, label: label_t, domain });
    }
    Ok(Dataset::new(samples))
}
