//! `CKPT` container: a list of named `TNSR` records.
//!
//! Layout: magic `CKPT`, version byte `0x01`, three zero bytes, little-endian
//! `u64` record count, then per record a little-endian `u32` name length, the
//! UTF-8 name, and one `TNSR` tensor.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Models, Network, ScaleProfile};
use crate::scalar::Scalar;
use crate::tensor::io::{self, AnyTensor, TypedAny};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u8 = 0x01;
pub const PROFILE_RECORD: &str = "meta/profile";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    records: Vec<(String, AnyTensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[(String, AnyTensor)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push<E: TypedAny>(&mut self, name: impl Into<String>, t: Tensor<E>) {
        self.records.push((name.into(), E::into_any(t)));
    }

    pub fn get_any(&self, name: &str) -> Result<&AnyTensor> {
        self.records
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn get<E: TypedAny>(&self, name: &str) -> Result<Tensor<E>> {
        self.get_any(name)?.clone().into_typed()
    }

    pub fn put_text(&mut self, name: impl Into<String>, text: &str) {
        let bytes = text.as_bytes().to_vec();
        let t = Tensor::new(vec![bytes.len()], bytes).expect("rank 1");
        self.push(name, t);
    }

    pub fn get_text(&self, name: &str) -> Result<String> {
        let t: Tensor<u8> = self.get(name)?;
        String::from_utf8(t.into_data()).map_err(|_| Error::InvalidArgument(format!("record `{name}` is not UTF-8")))
    }

    pub fn put_u64(&mut self, name: impl Into<String>, v: u64) {
        self.push(name, Tensor::new(vec![8], v.to_le_bytes().to_vec()).expect("rank 1"));
    }

    pub fn get_u64(&self, name: &str) -> Result<u64> {
        let t: Tensor<u8> = self.get(name)?;
        let bytes: [u8; 8] = t
            .data()
            .try_into()
            .map_err(|_| Error::InvalidArgument(format!("record `{name}` is not an 8-byte integer")))?;
        Ok(u64::from_le_bytes(bytes))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (name, t) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            t.encode(&mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let take = |at: usize, n: usize, what: &str| {
            bytes.get(at..at + n).ok_or_else(|| Error::Truncated(format!("checkpoint {what} at offset {at}")))
        };
        let magic = take(0, 4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { expected: "CKPT", found: String::from_utf8_lossy(magic).into_owned() });
        }
        let version = take(4, 1, "version")?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion { format: "CKPT", version });
        }
        let count = u64::from_le_bytes(take(8, 8, "record count")?.try_into().expect("8 bytes")) as usize;
        let mut at = 16;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u32::from_le_bytes(take(at, 4, "name length")?.try_into().expect("4 bytes")) as usize;
            at += 4;
            let name = std::str::from_utf8(take(at, len, "name")?)
                .map_err(|_| Error::InvalidArgument("checkpoint record name is not UTF-8".into()))?
                .to_string();
            at += len;
            let (t, used) = io::decode_prefix(&bytes[at..]).map_err(|e| match e {
                Error::Truncated(msg) => Error::Truncated(format!("record `{name}`: {msg}")),
                other => other,
            })?;
            at += used;
            records.push((name, t));
        }
        if at != bytes.len() {
            return Err(Error::InvalidArgument(format!("{} trailing bytes after checkpoint", bytes.len() - at)));
        }
        Ok(Checkpoint { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_atomic(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

pub(crate) fn restore<T: Scalar + TypedAny>(ckpt: &Checkpoint, name: &str, into: &mut Tensor<T>) -> Result<()> {
    let t: Tensor<T> = ckpt.get(name)?;
    if t.dims() != into.dims() {
        return Err(Error::shape(
            "checkpoint",
            format!("record `{name}` has dims {:?}, network expects {:?}", t.dims(), into.dims()),
        ));
    }
    *into = t;
    Ok(())
}

/// Append a network's parameters and running statistics under `<tag>/`.
pub fn save_network<T: Scalar + TypedAny>(ckpt: &mut Checkpoint, net: &Network<T>) {
    let tag = net.tag();
    for p in net.params() {
        ckpt.push(format!("{tag}/{}", p.name), p.value.clone());
    }
    for n in net.norms() {
        ckpt.push(format!("{tag}/{}.running_mean", n.name), n.running_mean.clone());
        ckpt.push(format!("{tag}/{}.running_var", n.name), n.running_var.clone());
    }
}

pub fn load_network<T: Scalar + TypedAny>(ckpt: &Checkpoint, net: &mut Network<T>) -> Result<()> {
    let tag = net.tag();
    for p in net.params_mut() {
        restore(ckpt, &format!("{tag}/{}", p.name), &mut p.value)?;
    }
    for n in net.norms_mut() {
        restore(ckpt, &format!("{tag}/{}.running_mean", n.name), &mut n.running_mean)?;
        restore(ckpt, &format!("{tag}/{}.running_var", n.name), &mut n.running_var)?;
    }
    Ok(())
}

/// Profile record plus all five networks.
pub fn save_models<T: Scalar + TypedAny>(ckpt: &mut Checkpoint, models: &Models<T>) {
    ckpt.put_text(PROFILE_RECORD, &models.profile.to_text());
    for net in models.networks() {
        save_network(ckpt, net);
    }
}

pub fn load_models<T: Scalar + TypedAny>(ckpt: &Checkpoint) -> Result<Models<T>> {
    let profile = ScaleProfile::from_text(&ckpt.get_text(PROFILE_RECORD)?)?;
    let mut models = Models::build(&profile, 0)?;
    for net in models.networks_mut() {
        load_network(ckpt, net)?;
    }
    Ok(models)
}
