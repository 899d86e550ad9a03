//! JSON instance files, the trace CSV and instance digests.

use std::fs;
use std::path::{Path, PathBuf};

use robustmdp_core::solvers::IterRecord;
use robustmdp_core::{KernelBasis, TabularMdp, UncertaintySet};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MDP_FILE: &str = "mdp.json";
pub const BASIS_FILE: &str = "basis.json";
pub const SET_FILE: &str = "set.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub const TRACE_HEADER: &str = "iter,F,gap_or_mapping,env_steps,wall_ms";

/// Pretty JSON with a trailing newline. Key order follows field order.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("in-memory serialization");
    out.push(b'\n');
    out
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// A validated instance: MDP, kernel basis and uncertainty set.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub mdp: TabularMdp,
    pub basis: KernelBasis,
    pub set: UncertaintySet,
}

impl Instance {
    pub fn validate(&self) -> Result<()> {
        self.mdp.validate().map_err(Error::Invalid)?;
        self.basis.validate().map_err(Error::Invalid)?;
        if self.basis.n_states != self.mdp.n_states || self.basis.n_actions != self.mdp.n_actions {
            return Err(Error::Spec("basis shape does not match the MDP".into()));
        }
        self.set.validate_against(&self.basis).map_err(Error::Invalid)
    }

    /// File contents in `mdp, basis, set` order.
    pub fn to_files(&self) -> [Vec<u8>; 3] {
        [to_json_bytes(&self.mdp), to_json_bytes(&self.basis), to_json_bytes(&self.set)]
    }

    /// sha256 over the three file encodings.
    pub fn digest(&self) -> String {
        digest(&self.to_files())
    }

    pub fn write(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        let paths = [dir.join(MDP_FILE), dir.join(BASIS_FILE), dir.join(SET_FILE)];
        for (p, bytes) in paths.iter().zip(self.to_files()) {
            write_bytes(p, &bytes)?;
        }
        Ok(paths)
    }

    pub fn read(mdp: &Path, basis: &Path, set: &Path) -> Result<Self> {
        let inst = Instance { mdp: read_json(mdp)?, basis: read_json(basis)?, set: read_json(set)? };
        inst.validate()?;
        Ok(inst)
    }
}

pub fn digest<B: AsRef<[u8]>>(parts: &[B]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_ref());
    }
    hex::encode(h.finalize())
}

/// Trace CSV with a fixed header. `wall_ms` is left empty when `None`.
pub fn trace_csv(records: &[IterRecord], wall_ms: Option<&[f64]>) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for (k, r) in records.iter().enumerate() {
        let wall = wall_ms.and_then(|w| w.get(k)).map(|w| format!("{w:.3}")).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.iter, r.f_value, r.gap, r.env_steps, wall));
    }
    out
}

/// Parsed trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub f_value: f64,
    pub gap: f64,
    pub env_steps: u64,
    pub wall_ms: Option<f64>,
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::Spec("trace header mismatch".into()));
    }
    let bad = |l: &str| Error::Spec(format!("bad trace row `{l}`"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(l));
            }
            Ok(TraceRow {
                iter: f[0].parse().map_err(|_| bad(l))?,
                f_value: f[1].parse().map_err(|_| bad(l))?,
                gap: f[2].parse().map_err(|_| bad(l))?,
                env_steps: f[3].parse().map_err(|_| bad(l))?,
                wall_ms: if f[4].is_empty() { None } else { Some(f[4].parse().map_err(|_| bad(l))?) },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trip() {
        let recs = vec![
            IterRecord { iter: 0, f_value: 1.25, grad_norm: 0.0, gap: 1e-12, env_steps: 0, xi: None },
            IterRecord { iter: 1, f_value: -0.1, grad_norm: 0.0, gap: 0.3, env_steps: 17, xi: None },
        ];
        let text = trace_csv(&recs, None);
        assert!(text.ends_with("1,-0.1,0.3,17,\n"));
        let rows = parse_trace_csv(&text).unwrap();
        assert_eq!(rows[0].gap, 1e-12);
        assert_eq!(rows[1].env_steps, 17);
        assert!(rows.iter().all(|r| r.wall_ms.is_none()));
        let timed = parse_trace_csv(&trace_csv(&recs, Some(&[1.0, 2.5]))).unwrap();
        assert_eq!(timed[1].wall_ms, Some(2.5));
    }

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(digest(&[b"abc"]), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(digest(&[b"a".as_slice(), b"bc"]), digest(&[b"abc"]));
    }
}
