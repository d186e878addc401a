//! Chain files: a magic line, one JSON header line, the little-endian f64
//! payload of every chain (draws then boundaries), the payload length as a
//! little-endian u64 and an end marker.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, DataError};
use crate::inference::{ChainOutput, ChainRecord, McmcSettings};

pub const CHAINS_SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8] = b"SLCMCHAINS\n";
const END: &[u8] = b"SLCMEND\n";

#[derive(Debug, Serialize, Deserialize)]
struct ChainMeta {
    seed: u64,
    stream: u64,
    n_draws: usize,
    acceptance: Vec<(String, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    names: Vec<String>,
    boundary_len: usize,
    n_su: usize,
    n_ages: usize,
    settings: McmcSettings,
    config_fingerprint: String,
    chains: Vec<ChainMeta>,
}

/// Encode chains to bytes.
pub fn encode_chains(output: &ChainOutput) -> Vec<u8> {
    let header = Header {
        schema_version: CHAINS_SCHEMA_VERSION,
        names: output.names.clone(),
        boundary_len: output.boundary_len,
        n_su: output.n_su,
        n_ages: output.n_ages,
        settings: output.settings.clone(),
        config_fingerprint: output.config_fingerprint.clone(),
        chains: output
            .chains
            .iter()
            .map(|c| ChainMeta {
                seed: c.seed,
                stream: c.stream,
                n_draws: c.n_draws,
                acceptance: c.acceptance.clone(),
            })
            .collect(),
    };
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header).expect("serializable"));
    out.push(b'\n');
    let start = out.len();
    for c in &output.chains {
        for v in c.draws.iter().chain(&c.boundary) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let len = (out.len() - start) as u64;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(END);
    out
}

/// Decode chains from bytes; `file` names the source in errors.
pub fn decode_chains(file: &str, bytes: &[u8]) -> Result<ChainOutput, DataError> {
    let err = |m: &str| DataError::Chains {
        file: file.to_string(),
        message: m.to_string(),
    };
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| err("not a chains file"))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| err("truncated header"))?;
    let value: serde_json::Value =
        serde_json::from_slice(&rest[..nl]).map_err(|e| err(&format!("bad header: {e}")))?;
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(CHAINS_SCHEMA_VERSION as u64) {
        return Err(DataError::Version {
            file: file.to_string(),
            found: value
                .get("schema_version")
                .map_or("none".to_string(), |v| v.to_string()),
            expected: CHAINS_SCHEMA_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(value).map_err(|e| err(&format!("bad header: {e}")))?;
    let body = &rest[nl + 1..];
    let width = header.names.len() + header.boundary_len;
    let expected_values: usize = header
        .chains
        .iter()
        .map(|c| c.n_draws.checked_mul(width))
        .try_fold(0usize, |acc, x| x.and_then(|x| acc.checked_add(x)))
        .ok_or_else(|| err("header sizes overflow"))?;
    let payload = expected_values
        .checked_mul(8)
        .ok_or_else(|| err("header sizes overflow"))?;
    if body.len() != payload + 8 + END.len() {
        return Err(err(&format!(
            "expected {} payload bytes plus trailer, found {} bytes",
            payload,
            body.len()
        )));
    }
    if &body[payload + 8..] != END {
        return Err(err("missing end marker"));
    }
    let stored = u64::from_le_bytes(body[payload..payload + 8].try_into().expect("8 bytes"));
    if stored != payload as u64 {
        return Err(err("payload length mismatch"));
    }
    let mut values = body[..payload]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
    let chains = header
        .chains
        .into_iter()
        .map(|m| {
            let draws: Vec<f64> = values.by_ref().take(m.n_draws * header.names.len()).collect();
            let boundary: Vec<f64> = values.by_ref().take(m.n_draws * header.boundary_len).collect();
            ChainRecord {
                seed: m.seed,
                stream: m.stream,
                n_draws: m.n_draws,
                draws,
                boundary,
                acceptance: m.acceptance,
            }
        })
        .collect();
    Ok(ChainOutput {
        names: header.names,
        boundary_len: header.boundary_len,
        n_su: header.n_su,
        n_ages: header.n_ages,
        settings: header.settings,
        config_fingerprint: header.config_fingerprint,
        chains,
    })
}

pub fn write_chains(output: &ChainOutput, path: &Path) -> Result<(), DataError> {
    write_atomic(path, &encode_chains(output))
}

pub fn read_chains(path: &Path) -> Result<ChainOutput, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let name = path
        .file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    decode_chains(&name, &bytes)
}

/// Add the chains of `output` to the file at `path`, creating it when
/// absent. Both must come from the same configuration and monitor set.
pub fn append_chains(output: &ChainOutput, path: &Path) -> Result<ChainOutput, DataError> {
    if !path.exists() {
        write_chains(output, path)?;
        return Ok(output.clone());
    }
    let mut existing = read_chains(path)?;
    let file = path.display().to_string();
    if existing.config_fingerprint != output.config_fingerprint {
        return Err(DataError::Chains {
            file,
            message: "chains were fitted to a different configuration".into(),
        });
    }
    if existing.names != output.names || existing.boundary_len != output.boundary_len {
        return Err(DataError::Chains {
            file,
            message: "monitored quantities differ".into(),
        });
    }
    existing.chains.extend(output.chains.iter().cloned());
    write_chains(&existing, path)?;
    Ok(existing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ChainOutput {
        ChainOutput {
            names: vec!["a".into(), "b".into()],
            boundary_len: 3,
            n_su: 1,
            n_ages: 1,
            settings: McmcSettings::default(),
            config_fingerprint: "abc".into(),
            chains: (0..2)
                .map(|c| ChainRecord {
                    seed: 9,
                    stream: c,
                    n_draws: 4,
                    draws: (0..8).map(|i| i as f64 * 0.1 + c as f64 + f64::EPSILON).collect(),
                    boundary: (0..12).map(|i| -(i as f64) / 7.0).collect(),
                    acceptance: vec![("blk".into(), 0.25)],
                })
                .collect(),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let o = sample();
        let back = decode_chains("x", &encode_chains(&o)).unwrap();
        assert_eq!(back, o);
        for (a, b) in back.chains[0].draws.iter().zip(&o.chains[0].draws) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_an_error() {
        let bytes = encode_chains(&sample());
        for cut in [bytes.len() - 1, bytes.len() - 9, bytes.len() / 2, 5] {
            assert!(decode_chains("x", &bytes[..cut]).is_err());
        }
    }

    #[test]
    fn version_mismatch_is_an_error() {
        let bytes = encode_chains(&sample());
        let s = String::from_utf8_lossy(&bytes).replace("\"schema_version\":1", "\"schema_version\":7");
        let e = decode_chains("x", s.as_bytes()).unwrap_err();
        assert!(matches!(e, DataError::Version { .. }));
    }

    #[test]
    fn append_pools_chains() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        append_chains(&sample(), &p).unwrap();
        let pooled = append_chains(&sample(), &p).unwrap();
        assert_eq!(pooled.chains.len(), 4);
        assert_eq!(read_chains(&p).unwrap(), pooled);
        let mut other = sample();
        other.config_fingerprint = "zzz".into();
        assert!(append_chains(&other, &p).is_err());
    }
}
