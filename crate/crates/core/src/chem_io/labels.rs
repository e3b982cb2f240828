//! Sidecar label files: CSV with header, `id,value` or `id,vx,vy,vz`.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::{Label, Structure};
use crate::{Error, Result};

pub fn read_labels_from<R: Read>(reader: R) -> Result<HashMap<String, Label>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let mut out = HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let line = row + 2;
        let id = rec.get(0).unwrap_or_default().to_string();
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(line, format!("non-numeric label '{t}'")))
            })
            .collect::<Result<_>>()?;
        let label = match vals.as_slice() {
            [v] => Label::Scalar(*v),
            [x, y, z] => Label::Vector([*x, *y, *z]),
            _ => {
                return Err(Error::parse(
                    line,
                    format!("expected 1 or 3 label values, found {}", vals.len()),
                ))
            }
        };
        if out.insert(id.clone(), label).is_some() {
            return Err(Error::parse(line, format!("duplicate id '{id}'")));
        }
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<HashMap<String, Label>> {
    read_labels_from(std::fs::File::open(path)?)
}

/// Attaches labels by id. Returns the ids that had no label.
pub fn attach_labels(structures: &mut [Structure], labels: &HashMap<String, Label>) -> Vec<String> {
    let mut missing = Vec::new();
    for s in structures.iter_mut() {
        match labels.get(&s.id) {
            Some(l) => s.label = Some(*l),
            None => missing.push(s.id.clone()),
        }
    }
    missing
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_and_vector_labels() {
        let csv = "id,value\na,1.5\nb,-2\n";
        let l = read_labels_from(csv.as_bytes()).unwrap();
        assert_eq!(l["a"], Label::Scalar(1.5));
        assert_eq!(l["b"], Label::Scalar(-2.0));

        let csv = "id,vx,vy,vz\nm,1,2,3\n";
        let l = read_labels_from(csv.as_bytes()).unwrap();
        assert_eq!(l["m"], Label::Vector([1.0, 2.0, 3.0]));
    }

    #[test]
    fn bad_rows() {
        assert!(matches!(
            read_labels_from("id,value\na,x\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(read_labels_from("id,a,b\nq,1,2\n".as_bytes()).is_err());
        assert!(read_labels_from("id,value\na,1\na,2\n".as_bytes()).is_err());
    }

    #[test]
    fn attach_reports_missing() {
        let mut s = vec![
            Structure::from_parts("a", &[1], vec![[0.0; 3]]).unwrap(),
            Structure::from_parts("z", &[1], vec![[0.0; 3]]).unwrap(),
        ];
        let l = read_labels_from("id,value\na,3\n".as_bytes()).unwrap();
        assert_eq!(attach_labels(&mut s, &l), vec!["z".to_string()]);
        assert_eq!(s[0].label, Some(Label::Scalar(3.0)));
    }
}
