//! Molecular structure I/O: XYZ and V2000 SDF readers, label sidecars,
//! atom filtering, and deterministic dataset splits.

pub mod elements;
mod labels;
mod sdf;
mod split;
mod xyz;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use labels::{attach_labels, read_labels, read_labels_from};
pub use sdf::{parse_sdf_bonds, parse_sdf_records};
pub use split::{split_dataset, DatasetSplit};
pub use xyz::{parse_xyz, to_xyz};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub atomic_number: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl Atom {
    pub fn new(atomic_number: u8) -> Self {
        Self {
            atomic_number,
            features: None,
        }
    }
}

/// Regression target attached to a structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Scalar(f64),
    Vector([f64; 3]),
}

impl Label {
    pub fn components(&self) -> Vec<f64> {
        match *self {
            Label::Scalar(v) => vec![v],
            Label::Vector(v) => v.to_vec(),
        }
    }
}

/// A molecule: atoms, Cartesian positions in Å, optional bonds and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub id: String,
    pub atoms: Vec<Atom>,
    pub positions: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bonds: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Structure {
    /// Builds a structure from atomic numbers and positions, validating it.
    pub fn from_parts(
        id: impl Into<String>,
        atomic_numbers: &[u8],
        positions: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let s = Structure {
            id: id.into(),
            atoms: atomic_numbers.iter().map(|&z| Atom::new(z)).collect(),
            positions,
            bonds: None,
            label: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_bonds(mut self, bonds: Vec<(usize, usize)>) -> Result<Self> {
        self.bonds = Some(bonds.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect());
        self.validate()?;
        Ok(self)
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atomic_numbers(&self) -> Vec<u8> {
        self.atoms.iter().map(|a| a.atomic_number).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::Structure(format!("{}: no atoms", self.id)));
        }
        if self.atoms.len() != self.positions.len() {
            return Err(Error::Structure(format!(
                "{}: {} atoms but {} positions",
                self.id,
                self.atoms.len(),
                self.positions.len()
            )));
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if a.atomic_number == 0 || a.atomic_number > elements::MAX_ATOMIC_NUMBER {
                return Err(Error::Structure(format!(
                    "{}: atom {i} has atomic number {}",
                    self.id, a.atomic_number
                )));
            }
        }
        if let Some((i, _)) = self
            .positions
            .iter()
            .enumerate()
            .find(|(_, p)| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::Structure(format!(
                "{}: non-finite coordinate for atom {i}",
                self.id
            )));
        }
        if let Some(bonds) = &self.bonds {
            let n = self.atoms.len();
            let mut seen = HashSet::with_capacity(bonds.len());
            for &(a, b) in bonds {
                if a >= n || b >= n {
                    return Err(Error::Structure(format!(
                        "{}: bond ({a},{b}) out of range for {n} atoms",
                        self.id
                    )));
                }
                if a == b {
                    return Err(Error::Structure(format!("{}: self-bond on atom {a}", self.id)));
                }
                if !seen.insert((a.min(b), a.max(b))) {
                    return Err(Error::Structure(format!(
                        "{}: duplicate bond ({a},{b})",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Element-based atom filter applied after parsing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtomFilter {
    pub strip_hydrogens: bool,
    /// When set, only these atomic numbers are kept.
    pub keep_elements: Option<Vec<u8>>,
}

impl AtomFilter {
    pub fn is_identity(&self) -> bool {
        !self.strip_hydrogens && self.keep_elements.is_none()
    }

    fn keeps(&self, z: u8) -> bool {
        if self.strip_hydrogens && z == 1 {
            return false;
        }
        self.keep_elements.as_ref().is_none_or(|k| k.contains(&z))
    }

    /// Drops filtered atoms, re-indexing bonds. Bonds touching a removed atom
    /// are removed with it.
    pub fn apply(&self, s: &Structure) -> Result<Structure> {
        if self.is_identity() {
            return Ok(s.clone());
        }
        let mut remap = vec![usize::MAX; s.len()];
        let mut atoms = Vec::new();
        let mut positions = Vec::new();
        for (i, (a, p)) in s.atoms.iter().zip(&s.positions).enumerate() {
            if self.keeps(a.atomic_number) {
                remap[i] = atoms.len();
                atoms.push(a.clone());
                positions.push(*p);
            }
        }
        let bonds = s.bonds.as_ref().map(|bonds| {
            bonds
                .iter()
                .filter(|&&(a, b)| remap[a] != usize::MAX && remap[b] != usize::MAX)
                .map(|&(a, b)| (remap[a], remap[b]))
                .collect()
        });
        let out = Structure {
            id: s.id.clone(),
            atoms,
            positions,
            bonds,
            label: s.label,
        };
        out.validate()?;
        Ok(out)
    }
}

/// Reads one structure file, dispatching on extension (`.xyz`, `.sdf`, `.mol`).
/// The id is the file stem.
pub fn read_structure(path: &Path) -> Result<Structure> {
    let text = std::fs::read_to_string(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let mut s = match ext.as_str() {
        "xyz" => parse_xyz(&text)?,
        "sdf" | "mol" => parse_sdf_bonds(&text)?,
        other => {
            return Err(Error::Dataset(format!(
                "{}: unsupported extension '{other}'",
                path.display()
            )))
        }
    };
    s.id = stem;
    Ok(s)
}

/// Reads every structure under `path`. A directory yields its `.xyz`/`.sdf`
/// files sorted by name; a multi-record `.sdf` file yields every record.
pub fn read_dataset(path: &Path) -> Result<Vec<Structure>> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                    Some(ref e) if e == "xyz" || e == "sdf" || e == "mol"
                )
            })
            .collect();
        files.sort();
        files.iter().map(|p| read_structure(p)).collect()
    } else if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("sdf"))
    {
        parse_sdf_records(&std::fs::read_to_string(path)?)
    } else {
        Ok(vec![read_structure(path)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rejects_bad_structures() {
        assert!(Structure::from_parts("e", &[], vec![]).is_err());
        assert!(Structure::from_parts("m", &[1, 1], vec![[0.0; 3]]).is_err());
        assert!(Structure::from_parts("nan", &[1], vec![[f64::NAN, 0.0, 0.0]]).is_err());
        let s = Structure::from_parts("ok", &[6, 8], vec![[0.0; 3], [1.2, 0.0, 0.0]]).unwrap();
        assert!(s.clone().with_bonds(vec![(0, 0)]).is_err());
        assert!(s.clone().with_bonds(vec![(0, 2)]).is_err());
        assert!(s.clone().with_bonds(vec![(0, 1), (1, 0)]).is_err());
        assert_eq!(s.with_bonds(vec![(1, 0)]).unwrap().bonds, Some(vec![(0, 1)]));
    }

    #[test]
    fn filter_strips_hydrogens_and_reindexes_bonds() {
        // H-C-O-H
        let s = Structure::from_parts(
            "w",
            &[1, 6, 8, 1],
            vec![[0.0; 3], [1.0, 0.0, 0.0], [2.2, 0.0, 0.0], [3.0, 0.0, 0.0]],
        )
        .unwrap()
        .with_bonds(vec![(0, 1), (1, 2), (2, 3)])
        .unwrap();
        let f = AtomFilter {
            strip_hydrogens: true,
            keep_elements: None,
        };
        let out = f.apply(&s).unwrap();
        assert_eq!(out.atomic_numbers(), vec![6, 8]);
        assert_eq!(out.bonds, Some(vec![(0, 1)]));
        assert_eq!(out.positions[1], [2.2, 0.0, 0.0]);

        let only_o = AtomFilter {
            strip_hydrogens: false,
            keep_elements: Some(vec![8]),
        };
        assert_eq!(only_o.apply(&s).unwrap().atomic_numbers(), vec![8]);
        let none = AtomFilter {
            strip_hydrogens: false,
            keep_elements: Some(vec![7]),
        };
        assert!(none.apply(&s).is_err());
    }

    #[test]
    fn json_dump_round_trips() {
        let s = Structure::from_parts("j", &[8, 8], vec![[0.0; 3], [0.0, 0.0, 1.21]])
            .unwrap()
            .with_bonds(vec![(0, 1)])
            .unwrap()
            .with_label(Label::Vector([1.0, 2.0, 3.0]));
        let back: Structure = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
