//! Checkpoint file: magic `BSCK`, `u32` LE header length, JSON header, then
//! `θ` and the running statistics as `f64` LE.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::model::{ModelParams, ModelSpec};
use super::LearnerError;

const MAGIC: [u8; 4] = *b"BSCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: ModelSpec,
    pub seed: u64,
    pub theta_len: usize,
    pub running_len: usize,
}

pub fn encode_checkpoint(spec: &ModelSpec, params: &ModelParams) -> Result<Vec<u8>, LearnerError> {
    params.check(&spec.layout())?;
    let header = serde_json::to_vec(&CheckpointHeader {
        spec: spec.clone(),
        seed: params.seed,
        theta_len: params.theta.len(),
        running_len: params.running.len(),
    })?;
    let len = u32::try_from(header.len()).map_err(|_| LearnerError::Checkpoint("header too large".into()))?;
    let mut out = Vec::with_capacity(8 + header.len() + 8 * (params.theta.len() + params.running.len()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&header);
    for x in params.theta.iter().chain(&params.running) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelSpec, ModelParams), LearnerError> {
    if bytes.len() < 8 || bytes[..4] != MAGIC {
        return Err(LearnerError::Checkpoint("missing BSCK header".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(8..8 + len).ok_or_else(|| LearnerError::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    header.spec.validate()?;
    let payload = &bytes[8 + len..];
    if payload.len() != 8 * (header.theta_len + header.running_len) {
        return Err(LearnerError::Checkpoint(format!(
            "payload is {} bytes, header implies {}",
            payload.len(),
            8 * (header.theta_len + header.running_len)
        )));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let theta: Vec<f64> = values.by_ref().take(header.theta_len).collect();
    let running: Vec<f64> = values.collect();
    let params = ModelParams { theta, running, seed: header.seed };
    params.check(&header.spec.layout())?;
    Ok((header.spec, params))
}

pub fn write_checkpoint<W: Write>(mut w: W, spec: &ModelSpec, params: &ModelParams) -> Result<(), LearnerError> {
    w.write_all(&encode_checkpoint(spec, params)?)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelSpec, ModelParams), LearnerError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::super::model::InputShape;
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let spec = ModelSpec::new(InputShape { channels: 12, height: 10, width: 20 }, 5, 0.1).unwrap();
        let p = ModelParams::init(&spec, 7);
        let bytes = encode_checkpoint(&spec, &p).unwrap();
        let (s2, p2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!((s2, p2), (spec.clone(), p.clone()));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        assert!(decode_checkpoint(b"XXXX0000").is_err());
        let mut file = Vec::new();
        write_checkpoint(&mut file, &spec, &p).unwrap();
        assert_eq!(file, bytes);
        assert_eq!(read_checkpoint(file.as_slice()).unwrap().1, p);
    }
}
