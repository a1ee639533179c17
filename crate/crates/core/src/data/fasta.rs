use std::fmt::Write as _;
use std::path::Path;

use super::NucleotideSequence;
use crate::error::{Error, Result};

/// Parses FASTA text. Header lines start with `>`; the record id is the
/// first whitespace-separated token. A `label=0|1` token in the header sets
/// the record label. Sequence lines may be wrapped and in any case.
pub fn parse_fasta_str(text: &str) -> Result<Vec<NucleotideSequence>> {
    struct Pending {
        id: String,
        label: Option<u8>,
        bases: String,
        line: usize,
    }

    fn finish(p: Pending) -> Result<NucleotideSequence> {
        NucleotideSequence::new(p.id, &p.bases, p.label).map_err(|e| match e {
            Error::InvalidBase { id, ch, position } => Error::InvalidBase { id, ch, position },
            other => Error::Parse {
                line: p.line,
                msg: other.to_string(),
            },
        })
    }

    let mut records = Vec::new();
    let mut current: Option<Pending> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            if let Some(p) = current.take() {
                records.push(finish(p)?);
            }
            let mut tokens = header.split_whitespace();
            let id = tokens.next().ok_or(Error::Parse {
                line: i + 1,
                msg: "empty record header".into(),
            })?;
            let mut label = None;
            for tok in tokens {
                if let Some(v) = tok.strip_prefix("label=") {
                    label = Some(v.parse::<u8>().ok().filter(|&l| l <= 1).ok_or_else(|| Error::Parse {
                        line: i + 1,
                        msg: format!("bad label '{v}'"),
                    })?);
                }
            }
            current = Some(Pending {
                id: id.to_string(),
                label,
                bases: String::new(),
                line: i + 1,
            });
        } else {
            match current.as_mut() {
                Some(p) => p.bases.push_str(line),
                None => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "sequence data before the first header".into(),
                    })
                }
            }
        }
    }
    if let Some(p) = current {
        records.push(finish(p)?);
    }
    Ok(records)
}

pub fn parse_fasta(path: &Path) -> Result<Vec<NucleotideSequence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fasta_str(&text)
}

/// Writes one unwrapped record per entry; labels go into the header.
pub fn write_fasta(path: &Path, records: &[NucleotideSequence]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        match r.label {
            Some(l) => writeln!(out, ">{} label={l}", r.id),
            None => writeln!(out, ">{}", r.id),
        }
        .expect("write to string");
        out.push_str(r.bases());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
