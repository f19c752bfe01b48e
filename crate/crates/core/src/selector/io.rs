//! Selection-map file format.
//!
//! ```text
//! # fcs-selection v1
//! # equalized false
//! # pc 10 ReqO+data
//! 0 ReqO+data 0x0001
//! ```

use std::fmt::Write as _;

use super::{RequestType, Selection, SelectionMap};
use crate::WordMask;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SelectionError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown request type `{token}`")]
    UnknownType { line: usize, token: String },
    #[error("entries are not dense: expected seq {expected}, found {found}")]
    Gap { expected: u64, found: u64 },
}

pub fn write_selection(sel: &SelectionMap) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# fcs-selection v1");
    let _ = writeln!(s, "# equalized {}", sel.equalized_criticality);
    for (pc, t) in &sel.instruction_types {
        let _ = writeln!(s, "# pc {pc} {t}");
    }
    for (i, e) in sel.entries.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {}", e.req, e.mask);
    }
    s
}

pub fn parse_selection(text: &str) -> Result<SelectionMap, SelectionError> {
    let mut sel = SelectionMap::default();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| SelectionError::Parse { line: line_no, message };
        let req = |tok: &str| tok.parse::<RequestType>().map_err(|token| SelectionError::UnknownType { line: line_no, token });
        if let Some(h) = line.strip_prefix('#') {
            let f: Vec<&str> = h.split_whitespace().collect();
            match f.as_slice() {
                ["equalized", v] => sel.equalized_criticality = v.parse().map_err(|e| perr(format!("{e}")))?,
                ["pc", pc, t] => {
                    sel.instruction_types.insert(pc.parse().map_err(|e| perr(format!("bad pc: {e}")))?, req(t)?);
                }
                _ => {}
            }
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(perr(format!("expected 3 fields, found {}", f.len())));
        }
        let seq: u64 = f[0].parse().map_err(|e| perr(format!("bad seq: {e}")))?;
        if seq != sel.entries.len() as u64 {
            return Err(SelectionError::Gap { expected: sel.entries.len() as u64, found: seq });
        }
        let mask: WordMask = f[2].parse().map_err(|e| perr(format!("bad mask: {e}")))?;
        sel.entries.push(Selection { req: req(f[1])?, mask });
    }
    Ok(sel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut sel = SelectionMap {
            entries: vec![
                Selection { req: RequestType::ReqOData, mask: WordMask(0xffff) },
                Selection { req: RequestType::ReqWTfwd, mask: WordMask(1) },
            ],
            equalized_criticality: true,
            ..Default::default()
        };
        sel.instruction_types.insert(7, RequestType::ReqWTo);
        let text = write_selection(&sel);
        assert!(text.contains("0 ReqO+data 0xffff"));
        assert_eq!(parse_selection(&text).unwrap(), sel);
    }

    #[test]
    fn errors() {
        assert_eq!(
            parse_selection("0 ReqZ 0x1"),
            Err(SelectionError::UnknownType { line: 1, token: "ReqZ".into() })
        );
        assert_eq!(parse_selection("1 ReqV 0x1"), Err(SelectionError::Gap { expected: 0, found: 1 }));
    }
}
