use super::{elements, Atom, Structure};
use crate::{Error, Result};

/// Parses a single-frame XYZ file: atom count, comment, then `symbol x y z`
/// rows in Å. Extra columns after `z` are ignored. Symbols may also be given
/// as bare atomic numbers.
pub fn parse_xyz(text: &str) -> Result<Structure> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, count_line) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing atom count line"))?;
    let count: usize = count_line
        .trim()
        .parse()
        .map_err(|_| Error::parse(1, format!("invalid atom count '{}'", count_line.trim())))?;
    if count == 0 {
        return Err(Error::parse(1, "atom count must be at least 1"));
    }
    let comment = lines.next().map(|(_, l)| l.trim().to_string()).unwrap_or_default();

    let mut atoms = Vec::with_capacity(count);
    let mut positions = Vec::with_capacity(count);
    for (lineno, line) in lines {
        let mut fields = line.split_whitespace();
        let Some(sym) = fields.next() else {
            continue;
        };
        if atoms.len() == count {
            return Err(Error::parse(
                lineno,
                format!("count mismatch: header declares {count} atoms but more rows follow"),
            ));
        }
        let z = elements::atomic_number(sym)
            .or_else(|| {
                sym.parse::<u8>()
                    .ok()
                    .filter(|z| (1..=elements::MAX_ATOMIC_NUMBER).contains(z))
            })
            .ok_or_else(|| Error::parse(lineno, format!("unknown symbol '{sym}'")))?;
        let mut p = [0.0; 3];
        for (axis, slot) in p.iter_mut().enumerate() {
            let tok = fields.next().ok_or_else(|| {
                Error::parse(lineno, format!("missing coordinate {}", ["x", "y", "z"][axis]))
            })?;
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(lineno, format!("non-numeric coordinate '{tok}'")))?;
        }
        atoms.push(Atom::new(z));
        positions.push(p);
    }
    if atoms.len() != count {
        return Err(Error::parse(
            1,
            format!(
                "count mismatch: header declares {count} atoms, found {}",
                atoms.len()
            ),
        ));
    }
    let s = Structure {
        id: comment,
        atoms,
        positions,
        bonds: None,
        label: None,
    };
    s.validate()?;
    Ok(s)
}

fn round_sig12(x: f64) -> f64 {
    format!("{x:.11e}").parse().expect("formatted float reparses")
}

/// Serializes to XYZ with coordinates rounded to 12 significant digits.
pub fn to_xyz(s: &Structure) -> String {
    let mut out = format!("{}\n{}\n", s.len(), s.id);
    for (a, p) in s.atoms.iter().zip(&s.positions) {
        let sym = elements::symbol(a.atomic_number).unwrap_or("X");
        out.push_str(&format!(
            "{sym} {} {} {}\n",
            round_sig12(p[0]),
            round_sig12(p[1]),
            round_sig12(p[2])
        ));
    }
    out
}
