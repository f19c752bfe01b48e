//! Plain-text trace format.
//!
//! ```text
//! # fcs-trace v1
//! # block_size 64
//! # word_size 4
//! # cores CPU CPU GPU GPU
//! 0 0 CPU Ld 0x1000 0x0001 1 none 0
//! ```
//!
//! One access per line: `seq core class kind addr mask pc sync values`, where
//! `values` is a comma-separated list of decimal words.

use std::fmt::Write as _;
use std::path::Path;

use super::{AccessKind, AccessTrace, DeviceClass, MemoryAccess, SyncKind};
use crate::WordMask;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line} (byte {offset}): {message}")]
    Parse { line: usize, offset: usize, message: String },
    #[error("line {line} (byte {offset}): unknown token `{token}`")]
    UnknownToken { line: usize, offset: usize, token: String },
    #[error("missing header field `{0}`")]
    MissingHeader(&'static str),
}

const MAGIC: &str = "fcs-trace v1";

pub fn write_trace(t: &AccessTrace) -> String {
    let mut s = String::with_capacity(t.len() * 40);
    let _ = writeln!(s, "# {MAGIC}");
    let _ = writeln!(s, "# block_size {}", t.block_size_bytes);
    let _ = writeln!(s, "# word_size {}", t.word_size_bytes);
    let cores: Vec<&str> = t.core_table.iter().map(|d| d.token()).collect();
    let _ = writeln!(s, "# cores {}", cores.join(" "));
    for a in &t.accesses {
        let vals: Vec<String> = a.values.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            s,
            "{} {} {} {} {:#x} {} {} {} {}",
            a.seq_id, a.core, a.device, a.kind, a.address, a.word_mask, a.pc, a.sync,
            vals.join(",")
        );
    }
    s
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<AccessTrace, TraceError> {
    parse_trace(&std::fs::read_to_string(path)?)
}

pub fn parse_trace(text: &str) -> Result<AccessTrace, TraceError> {
    let mut block = None;
    let mut word = None;
    let mut cores = None;
    let mut accesses = Vec::new();
    let mut offset = 0usize;
    for (idx, raw) in text.split_inclusive('\n').enumerate() {
        let line_no = idx + 1;
        let line_off = offset;
        offset += raw.len();
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| TraceError::Parse { line: line_no, offset: line_off, message };
        if let Some(h) = line.strip_prefix('#') {
            let h = h.trim();
            let mut it = h.split_whitespace();
            match it.next() {
                Some("block_size") => block = Some(num::<u32>(it.next(), "block_size").map_err(parse_err)?),
                Some("word_size") => word = Some(num::<u32>(it.next(), "word_size").map_err(parse_err)?),
                Some("cores") => {
                    let mut v = Vec::new();
                    for tok in it {
                        v.push(tok.parse::<DeviceClass>().map_err(|token| TraceError::UnknownToken {
                            line: line_no,
                            offset: line_off,
                            token,
                        })?);
                    }
                    cores = Some(v);
                }
                _ => {}
            }
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 9 {
            return Err(parse_err(format!("expected 9 fields, found {}", f.len())));
        }
        let unknown = |token: &str| TraceError::UnknownToken { line: line_no, offset: line_off, token: token.to_string() };
        let values = f[8]
            .split(',')
            .map(|v| v.parse::<u64>().map_err(|e| parse_err(format!("bad value `{v}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        accesses.push(MemoryAccess {
            seq_id: num(Some(f[0]), "seq").map_err(parse_err)?,
            core: num(Some(f[1]), "core").map_err(parse_err)?,
            device: f[2].parse().map_err(|_| unknown(f[2]))?,
            kind: f[3].parse::<AccessKind>().map_err(|_| unknown(f[3]))?,
            address: hex(f[4]).map_err(parse_err)?,
            word_mask: f[5].parse::<WordMask>().map_err(|e| parse_err(format!("bad mask `{}`: {e}", f[5])))?,
            pc: num(Some(f[6]), "pc").map_err(parse_err)?,
            sync: f[7].parse::<SyncKind>().map_err(|_| unknown(f[7]))?,
            values,
        });
    }
    Ok(AccessTrace {
        accesses,
        block_size_bytes: block.ok_or(TraceError::MissingHeader("block_size"))?,
        word_size_bytes: word.ok_or(TraceError::MissingHeader("word_size"))?,
        core_table: cores.ok_or(TraceError::MissingHeader("cores"))?,
    })
}

fn num<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    let tok = tok.ok_or_else(|| format!("missing {what}"))?;
    tok.parse().map_err(|e| format!("bad {what} `{tok}`: {e}"))
}

fn hex(tok: &str) -> Result<u64, String> {
    let digits = tok.strip_prefix("0x").unwrap_or(tok);
    u64::from_str_radix(digits, 16).map_err(|e| format!("bad address `{tok}`: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# fcs-trace v1\n# block_size 64\n# word_size 4\n# cores CPU GPU\n\
0 0 CPU St 0x104 0x0002 3 none 7\n\
1 1 GPU RMW 0x0 0x0001 9 acqrel 1\n";

    #[test]
    fn round_trip() {
        let t = parse_trace(SAMPLE).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.accesses[0].word_mask, WordMask(2));
        assert_eq!(t.accesses[1].sync, SyncKind::AcqRel);
        let again = parse_trace(&write_trace(&t)).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn unknown_kind_names_line() {
        let bad = SAMPLE.replace("RMW", "Xchg");
        match parse_trace(&bad) {
            Err(TraceError::UnknownToken { line, token, .. }) => {
                assert_eq!(line, 6);
                assert_eq!(token, "Xchg");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_line_reports_offset() {
        let cut = &SAMPLE[..SAMPLE.len() - 12];
        match parse_trace(cut) {
            Err(TraceError::Parse { line, offset, .. }) => {
                assert_eq!(line, 6);
                assert_eq!(offset, SAMPLE.find("1 1 GPU").unwrap());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
