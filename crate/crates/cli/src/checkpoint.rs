//! Binary tensor container for editor and generator checkpoints.
//!
//! Layout: 4 magic bytes, format version as little-endian u16, then a run of
//! named tensors until end of file. Each tensor is: name length (u16), name
//! bytes, rank (u8), one u32 per dimension, then the f32 data little-endian.
//! Editor+scorer bundles use magic `TPED`, generator weights use `TPGN`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use tarpro_core::editor::{EditorParams, NsfwScorerParams, ToyEditor};
use tarpro_core::generator::{GeneratorConfig, GeneratorParams};
use tarpro_core::tensor::Tensor;

pub const EDITOR_MAGIC: [u8; 4] = *b"TPED";
pub const GENERATOR_MAGIC: [u8; 4] = *b"TPGN";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("malformed tensor record: {0}")]
    Malformed(String),
    #[error("missing tensor {0}")]
    MissingTensor(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

pub fn write_container<W: Write>(
    mut w: W,
    magic: [u8; 4],
    tensors: &[(String, &Tensor<f32>)],
) -> Result<()> {
    w.write_all(&magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        let dims = tensor.dims();
        w.write_all(&[dims.len() as u8])?;
        for &d in dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_container<R: Read>(mut r: R, magic: [u8; 4]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)?;
    if found != magic {
        return Err(CheckpointError::BadMagic {
            expected: magic,
            found,
        });
    }
    let mut vbuf = [0u8; 2];
    r.read_exact(&mut vbuf)?;
    let version = u16::from_le_bytes(vbuf);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }

    let mut tensors = Vec::new();
    loop {
        let mut lenbuf = [0u8; 2];
        match r.read_exact(&mut lenbuf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u16::from_le_bytes(lenbuf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Malformed("non-utf8 tensor name".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut dbuf = [0u8; 4];
            r.read_exact(&mut dbuf)?;
            dims.push(u32::from_le_bytes(dbuf) as usize);
        }
        let numel: usize = dims.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut fbuf = [0u8; 4];
        for _ in 0..numel {
            r.read_exact(&mut fbuf)?;
            data.push(f32::from_le_bytes(fbuf));
        }
        let tensor = Tensor::from_vec(&dims, data)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        tensors.push((name, tensor));
    }
    Ok(tensors)
}

fn meta_tensor(values: &[f64]) -> Tensor<f32> {
    Tensor::from_vec(&[values.len()], values.iter().map(|&v| v as f32).collect())
        .expect("sized meta")
}

/// Editor and scorer weights in one file.
pub fn save_editor(path: &Path, editor: &ToyEditor<f32>) -> Result<()> {
    let meta = meta_tensor(&[
        editor.params.latent_channels as f64,
        editor.params.latent_downsample as f64,
        editor.params.sampler_steps_default as f64,
        editor.params.prompt_dim as f64,
        editor.world_version as f64,
        editor.scorer.threshold,
    ]);
    let mut tensors: Vec<(String, &Tensor<f32>)> = vec![("meta".into(), &meta)];
    let named = editor.params.named_tensors();
    tensors.extend(named.iter().map(|(n, t)| (n.clone(), *t)));
    let scorer_named = editor.scorer.named_tensors();
    tensors.extend(scorer_named.iter().map(|(n, t)| (n.clone(), *t)));
    write_container(BufWriter::new(File::create(path)?), EDITOR_MAGIC, &tensors)
}

pub fn load_editor(path: &Path) -> Result<ToyEditor<f32>> {
    let tensors = read_container(BufReader::new(File::open(path)?), EDITOR_MAGIC)?;
    let map: BTreeMap<String, Tensor<f32>> = tensors.into_iter().collect();
    let take = |name: &str| -> Result<Tensor<f32>> {
        map.get(name)
            .cloned()
            .ok_or_else(|| CheckpointError::MissingTensor(name.into()))
    };
    let meta = take("meta")?;
    if meta.numel() != 6 {
        return Err(CheckpointError::Malformed("meta must have 6 entries".into()));
    }
    let m = meta.data();
    Ok(ToyEditor {
        params: EditorParams {
            latent_channels: m[0] as usize,
            latent_downsample: m[1] as usize,
            sampler_steps_default: m[2] as u32,
            prompt_dim: m[3] as usize,
            enc_weight: take("enc.weight")?,
            enc_bias: take("enc.bias")?,
            enc_range: take("enc.range")?,
            dec_weight: take("dec.weight")?,
            dec_bias: take("dec.bias")?,
            dec_squash: take("dec.squash")?,
            cond_gain: take("smp.gain")?,
            cond_bias: take("smp.bias")?,
            mal_readout: take("smp.mal")?,
            inject: take("smp.inject")?,
            gate: take("smp.gate")?,
        },
        scorer: NsfwScorerParams {
            kernel: take("scorer.kernel")?,
            logit: take("scorer.logit")?,
            threshold: m[5] as f64,
        },
        world_version: m[4] as u32,
    })
}

pub fn save_generator(path: &Path, params: &GeneratorParams<f32>) -> Result<()> {
    let meta = meta_tensor(&[
        params.config.patch_size as f64,
        params.config.hidden_dim as f64,
        params.config.num_heads as f64,
        params.config.num_blocks as f64,
        params.config.mlp_ratio as f64,
        params.channels as f64,
        params.height as f64,
        params.width as f64,
    ]);
    let mut tensors: Vec<(String, &Tensor<f32>)> = vec![("meta".into(), &meta)];
    let names = params.tensor_names();
    let values = params.tensors();
    tensors.extend(names.into_iter().zip(values));
    write_container(
        BufWriter::new(File::create(path)?),
        GENERATOR_MAGIC,
        &tensors,
    )
}

pub fn load_generator(path: &Path) -> Result<GeneratorParams<f32>> {
    let tensors = read_container(BufReader::new(File::open(path)?), GENERATOR_MAGIC)?;
    let map: BTreeMap<String, Tensor<f32>> = tensors.into_iter().collect();
    let meta = map
        .get("meta")
        .ok_or_else(|| CheckpointError::MissingTensor("meta".into()))?;
    if meta.numel() != 8 {
        return Err(CheckpointError::Malformed("meta must have 8 entries".into()));
    }
    let m = meta.data();
    let config = GeneratorConfig {
        patch_size: m[0] as usize,
        hidden_dim: m[1] as usize,
        num_heads: m[2] as usize,
        num_blocks: m[3] as usize,
        mlp_ratio: m[4] as usize,
    };
    let mut params = GeneratorParams::<f32>::init(
        config,
        m[5] as usize,
        m[6] as usize,
        m[7] as usize,
        tarpro_core::Seed(0),
    )
    .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let names = params.tensor_names();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let loaded = map
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
        if loaded.dims() != slot.dims() {
            return Err(CheckpointError::Malformed(format!(
                "tensor {name} has unexpected shape"
            )));
        }
        *slot = loaded.clone();
    }
    Ok(params)
}
