//! V2000 molfile / SDF subset: counts line, atom block, bond block.
//! Charges, isotopes and bond orders are ignored; only connectivity is kept.

use super::{elements, Atom, Structure};
use crate::{Error, Result};

fn fixed_or_split(line: &str, ranges: &[(usize, usize)]) -> Option<Vec<String>> {
    let fixed: Option<Vec<String>> = ranges
        .iter()
        .map(|&(a, b)| line.get(a..b.min(line.len())).map(|s| s.trim().to_string()))
        .collect();
    match fixed {
        Some(f) if f.iter().all(|s| !s.is_empty() && !s.contains(char::is_whitespace)) => Some(f),
        _ => {
            let toks: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            (toks.len() >= ranges.len()).then(|| toks[..ranges.len()].to_vec())
        }
    }
}

fn parse_counts(line: &str, lineno: usize) -> Result<(usize, usize)> {
    let bad = || Error::parse(lineno, format!("malformed counts line '{}'", line.trim_end()));
    let f = fixed_or_split(line, &[(0, 3), (3, 6)]).ok_or_else(bad)?;
    let atoms = f[0].parse::<usize>().map_err(|_| bad())?;
    let bonds = f[1].parse::<usize>().map_err(|_| bad())?;
    if line.contains("V3000") {
        return Err(Error::parse(lineno, "V3000 molfiles are not supported"));
    }
    Ok((atoms, bonds))
}

/// Parses one molfile record starting at line offset `first_line` (1-based).
fn parse_record(lines: &[&str], first_line: usize) -> Result<Structure> {
    let at = |i: usize| first_line + i;
    if lines.len() < 4 {
        return Err(Error::parse(at(lines.len()), "truncated header: expected counts line"));
    }
    let id = lines[0].trim().to_string();
    let (n_atoms, n_bonds) = parse_counts(lines[3], at(3))?;
    if n_atoms == 0 {
        return Err(Error::parse(at(3), "molfile declares zero atoms"));
    }
    if lines.len() < 4 + n_atoms + n_bonds {
        return Err(Error::parse(
            at(lines.len().saturating_sub(1)),
            format!("truncated record: expected {n_atoms} atoms and {n_bonds} bonds"),
        ));
    }

    let mut atoms = Vec::with_capacity(n_atoms);
    let mut positions = Vec::with_capacity(n_atoms);
    for k in 0..n_atoms {
        let i = 4 + k;
        let line = lines[i];
        let f = fixed_or_split(line, &[(0, 10), (10, 20), (20, 30), (31, 34)])
            .ok_or_else(|| Error::parse(at(i), "malformed atom line"))?;
        let mut p = [0.0; 3];
        for axis in 0..3 {
            p[axis] = f[axis]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::parse(at(i), format!("non-numeric coordinate '{}'", f[axis]))
                })?;
        }
        let z = elements::atomic_number(&f[3])
            .ok_or_else(|| Error::parse(at(i), format!("unknown symbol '{}'", f[3])))?;
        atoms.push(Atom::new(z));
        positions.push(p);
    }

    let mut bonds = Vec::with_capacity(n_bonds);
    for k in 0..n_bonds {
        let i = 4 + n_atoms + k;
        let f = fixed_or_split(lines[i], &[(0, 3), (3, 6)])
            .ok_or_else(|| Error::parse(at(i), "malformed bond line"))?;
        let mut idx = [0usize; 2];
        for (slot, tok) in idx.iter_mut().zip(&f) {
            let v: usize = tok
                .parse()
                .map_err(|_| Error::parse(at(i), format!("invalid bond atom index '{tok}'")))?;
            if v == 0 || v > n_atoms {
                return Err(Error::parse(
                    at(i),
                    format!("bond index {v} out of range for {n_atoms} atoms"),
                ));
            }
            *slot = v - 1;
        }
        if idx[0] == idx[1] {
            return Err(Error::parse(at(i), "self-bond"));
        }
        bonds.push((idx[0].min(idx[1]), idx[0].max(idx[1])));
    }

    let s = Structure {
        id,
        atoms,
        positions,
        bonds: Some(bonds),
        label: None,
    };
    s.validate()
        .map_err(|e| Error::parse(at(3), e.to_string()))?;
    Ok(s)
}

/// Parses the first record of a V2000 molfile/SDF, keeping bond connectivity.
pub fn parse_sdf_bonds(text: &str) -> Result<Structure> {
    let lines: Vec<&str> = text.lines().collect();
    parse_record(&lines, 1)
}

/// Parses every `$$$$`-terminated record of an SDF file. Records with an
/// empty title get the id `mol<index>`.
pub fn parse_sdf_records(text: &str) -> Result<Vec<Structure>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start < lines.len() {
        let end = lines[start..]
            .iter()
            .position(|l| l.trim_end() == "$$$$")
            .map_or(lines.len(), |p| start + p);
        let chunk = &lines[start..end];
        if chunk.iter().any(|l| !l.trim().is_empty()) {
            let mut s = parse_record(chunk, start + 1)?;
            if s.id.is_empty() {
                s.id = format!("mol{}", out.len());
            }
            out.push(s);
        }
        start = end + 1;
    }
    Ok(out)
}
