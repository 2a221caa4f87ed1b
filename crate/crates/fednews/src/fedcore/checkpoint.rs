//! Checkpoint file: `FNCK` magic, version, round counter, model dims,
//! pooling tag, then the flat user model, flat encoder, and the four moment
//! vectors, all as little-endian f64 arrays with u64 length prefixes.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::Corpus;
use crate::error::ExperimentError;
use crate::model::{ModelDims, NewsEncoderParams, Pooling, UserModelParams};

use super::{refresh_news_table, AdamState, ServerState};

const MAGIC: &[u8; 4] = b"FNCK";
const VERSION: u16 = 1;

fn put_array(buf: &mut Vec<u8>, xs: &[f64]) {
    buf.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_exact_n(r: &mut impl Read, n: usize) -> std::io::Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    Ok(u64::from_le_bytes(read_exact_n(r, 8)?.try_into().unwrap()))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    Ok(u32::from_le_bytes(read_exact_n(r, 4)?.try_into().unwrap()))
}

fn read_array(r: &mut impl Read) -> std::io::Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    let bytes = read_exact_n(r, n * 8)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_checkpoint(path: &Path, server: &ServerState) -> Result<(), ExperimentError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match server.encoder.pooling {
        Pooling::Mean => 0,
        Pooling::Attention => 1,
    });
    buf.push(0); // reserved
    buf.extend_from_slice(&server.round.to_le_bytes());
    for dim in [
        server.dims.vocab_size,
        server.dims.token_dim,
        server.dims.repr_dim,
        server.dims.heads,
        server.dims.attn_hidden,
    ] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    put_array(&mut buf, &server.user_model.flatten());
    put_array(&mut buf, &server.encoder.flatten());
    put_array(&mut buf, &server.user_moments.delta);
    put_array(&mut buf, &server.user_moments.v);
    put_array(&mut buf, &server.news_moments.delta);
    put_array(&mut buf, &server.news_moments.v);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Load a checkpoint and re-infer the representation table from `corpus`.
pub fn load_checkpoint(path: &Path, corpus: &Corpus) -> Result<ServerState, ExperimentError> {
    let mut f = std::fs::File::open(path)?;
    let magic = read_exact_n(&mut f, 4)?;
    if magic != MAGIC {
        return Err(ExperimentError::Round {
            round: 0,
            msg: format!("{}: not a checkpoint file", path.display()),
        });
    }
    let version = u16::from_le_bytes(read_exact_n(&mut f, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(ExperimentError::Round {
            round: 0,
            msg: format!("unsupported checkpoint version {version}"),
        });
    }
    let pooling = match read_exact_n(&mut f, 1)?[0] {
        0 => Pooling::Mean,
        _ => Pooling::Attention,
    };
    let _reserved = read_exact_n(&mut f, 1)?;
    let round = read_u64(&mut f)?;
    let dims = ModelDims {
        vocab_size: read_u32(&mut f)? as usize,
        token_dim: read_u32(&mut f)? as usize,
        repr_dim: read_u32(&mut f)? as usize,
        heads: read_u32(&mut f)? as usize,
        attn_hidden: read_u32(&mut f)? as usize,
    };
    let user_flat = read_array(&mut f)?;
    let enc_flat = read_array(&mut f)?;
    let user_model = UserModelParams::from_flat(&dims, &user_flat)?;
    let encoder = NewsEncoderParams::from_flat(&dims, pooling, &enc_flat)?;
    let user_moments = AdamState {
        delta: read_array(&mut f)?,
        v: read_array(&mut f)?,
    };
    let news_moments = AdamState {
        delta: read_array(&mut f)?,
        v: read_array(&mut f)?,
    };
    let news_table = refresh_news_table(&encoder, corpus)?;
    Ok(ServerState {
        dims,
        encoder,
        user_model,
        news_table,
        user_moments,
        news_moments,
        round,
    })
}
