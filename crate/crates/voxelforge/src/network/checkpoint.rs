//! Checkpoint serialization: magic, version, config block, then every
//! parameter tensor in declaration order with a shape header.

use super::net::{CompletionNet, FusionScheme, NetworkConfig};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"ENCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("network build from stored config failed: {0}")]
    Build(#[from] super::NetworkError),
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn fusion_code(f: FusionScheme) -> u8 {
    match f {
        FusionScheme::Early => 0,
        FusionScheme::Middle => 1,
        FusionScheme::Late => 2,
    }
}

fn fusion_from_code(c: u8) -> Result<FusionScheme, CheckpointError> {
    match c {
        0 => Ok(FusionScheme::Early),
        1 => Ok(FusionScheme::Middle),
        2 => Ok(FusionScheme::Late),
        _ => Err(CheckpointError::Corrupt(format!("fusion code {c}"))),
    }
}

pub fn save(net: &CompletionNet<f32>, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    let cfg = net.config();
    w.write_all(&[fusion_code(cfg.fusion)])?;
    write_u32(&mut w, cfg.base_channels as u32)?;
    write_u32(&mut w, cfg.class_count as u32)?;
    for d in cfg.input_dims {
        write_u32(&mut w, d as u32)?;
    }
    write_u32(&mut w, cfg.encoder_dilations.len() as u32)?;
    for &d in &cfg.encoder_dilations {
        write_u32(&mut w, d as u32)?;
    }
    for slice in net.param_slices() {
        // Flat tensors; one dim is enough to cross-check lengths on load.
        write_u32(&mut w, 1)?;
        write_u32(&mut w, slice.len() as u32)?;
        for v in slice {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<CompletionNet<f32>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut fusion = [0u8; 1];
    r.read_exact(&mut fusion)?;
    let fusion = fusion_from_code(fusion[0])?;
    let base_channels = read_u32(&mut r)? as usize;
    let class_count = read_u32(&mut r)? as usize;
    let mut input_dims = [0usize; 3];
    for d in input_dims.iter_mut() {
        *d = read_u32(&mut r)? as usize;
    }
    let n_dil = read_u32(&mut r)? as usize;
    if n_dil > 64 {
        return Err(CheckpointError::Corrupt(format!("{n_dil} dilations")));
    }
    let mut encoder_dilations = Vec::with_capacity(n_dil);
    for _ in 0..n_dil {
        encoder_dilations.push(read_u32(&mut r)? as usize);
    }
    let cfg = NetworkConfig { base_channels, class_count, fusion, input_dims, encoder_dilations };
    let mut net = CompletionNet::<f32>::new(cfg, 0)?;
    for (ti, slice) in net.param_slices_mut().into_iter().enumerate() {
        let ndim = read_u32(&mut r)?;
        if ndim != 1 {
            return Err(CheckpointError::Corrupt(format!("tensor {ti}: ndim {ndim}")));
        }
        let len = read_u32(&mut r)? as usize;
        if len != slice.len() {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {ti}: stored {len} values, expected {}",
                slice.len()
            )));
        }
        let mut buf = vec![0u8; len * 4];
        r.read_exact(&mut buf)?;
        for (v, chunk) in slice.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::net::CLASS_COUNT;
    use crate::network::tensor::Tensor5;

    fn cfg() -> NetworkConfig {
        NetworkConfig {
            base_channels: 2,
            class_count: CLASS_COUNT,
            fusion: FusionScheme::Late,
            input_dims: [8, 4, 8],
            encoder_dilations: vec![1, 2],
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.enck");
        let net = CompletionNet::<f32>::new(cfg(), 99).unwrap();
        save(&net, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(net, loaded);
        let x = Tensor5::zeros([1, 2, 8, 4, 8]);
        let (a, _) = net.forward(&x).unwrap();
        let (b, _) = loaded.forward(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.enck");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::BadMagic)));

        let good = dir.path().join("net.enck");
        let net = CompletionNet::<f32>::new(cfg(), 1).unwrap();
        save(&net, &good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load(&path).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        std::fs::write(&path, &longer).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn rejects_future_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.enck");
        let net = CompletionNet::<f32>::new(cfg(), 1).unwrap();
        save(&net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::BadVersion(9))));
    }
}
