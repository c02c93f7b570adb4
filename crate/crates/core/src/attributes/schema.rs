use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SubjectMeta;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Biometric {
    Gender,
    Age,
    Weight,
    Height,
    Handedness,
}

impl Biometric {
    fn is_categorical(self) -> bool {
        matches!(self, Biometric::Gender | Biometric::Handedness)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// One bit: 0 when `value <= bound`, 1 above.
    Threshold { bound: f64 },
    /// One-hot over `upper_bounds.len() + 1` levels; level `i` is the first
    /// with `value <= upper_bounds[i]`, the last level takes everything above.
    Levels { upper_bounds: Vec<f64> },
    /// One bit for a categorical value.
    Category { one: String, zero: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeDef {
    pub name: String,
    pub source: Biometric,
    pub encoding: Encoding,
    /// Declared range of the numeric source; values outside it are rejected.
    #[serde(default)]
    pub range: Option<[f64; 2]>,
}

impl AttributeDef {
    pub fn bits(&self) -> usize {
        match &self.encoding {
            Encoding::Threshold { .. } | Encoding::Category { .. } => 1,
            Encoding::Levels { upper_bounds } => upper_bounds.len() + 1,
        }
    }

    /// Human-readable name of every output bit.
    pub fn bit_names(&self) -> Vec<String> {
        let n = &self.name;
        match &self.encoding {
            Encoding::Threshold { bound } => vec![format!("{n}>{bound}")],
            Encoding::Category { one, .. } => vec![format!("{n}={one}")],
            Encoding::Levels { upper_bounds } => {
                let mut names = Vec::with_capacity(upper_bounds.len() + 1);
                let mut lower: Option<f64> = None;
                for &b in upper_bounds {
                    names.push(match lower {
                        None => format!("{n}<={b}"),
                        Some(l) => format!("{n}({l},{b}]"),
                    });
                    lower = Some(b);
                }
                names.push(format!("{n}>{}", lower.expect("levels validated non-empty")));
                names
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let categorical = self.source.is_categorical();
        match &self.encoding {
            Encoding::Category { one, zero } => {
                if !categorical || one == zero {
                    return Err(Error::config(format!(
                        "attribute {}: category encoding needs a categorical source and two distinct values",
                        self.name
                    )));
                }
            }
            Encoding::Threshold { bound } => {
                if categorical || !bound.is_finite() {
                    return Err(Error::config(format!(
                        "attribute {}: threshold encoding needs a numeric source and finite bound",
                        self.name
                    )));
                }
            }
            Encoding::Levels { upper_bounds } => {
                let increasing = upper_bounds.windows(2).all(|p| p[0] < p[1]);
                if categorical
                    || upper_bounds.is_empty()
                    || !increasing
                    || upper_bounds.iter().any(|b| !b.is_finite())
                {
                    return Err(Error::config(format!(
                        "attribute {}: levels need a numeric source and strictly increasing finite bounds",
                        self.name
                    )));
                }
            }
        }
        if let Some([lo, hi]) = self.range {
            if categorical || !(lo < hi) {
                return Err(Error::config(format!("attribute {}: bad range", self.name)));
            }
        }
        Ok(())
    }

    fn encode(&self, meta: &SubjectMeta, out: &mut Vec<u8>) -> Result<()> {
        let numeric = |v: f64| -> Result<f64> {
            let inside = match self.range {
                Some([lo, hi]) => (lo..=hi).contains(&v),
                None => v.is_finite(),
            };
            if !inside {
                return Err(Error::data(format!(
                    "subject {}: {} = {v} outside the declared range of attribute {}",
                    meta.id,
                    source_name(self.source),
                    self.name
                )));
            }
            Ok(v)
        };
        match &self.encoding {
            Encoding::Category { one, zero } => {
                let v = match self.source {
                    Biometric::Gender => &meta.gender,
                    _ => &meta.handedness,
                };
                let v = v.trim();
                if v.eq_ignore_ascii_case(one) {
                    out.push(1);
                } else if v.eq_ignore_ascii_case(zero) {
                    out.push(0);
                } else {
                    return Err(Error::data(format!(
                        "subject {}: {} value {v:?} is neither {one:?} nor {zero:?}",
                        meta.id,
                        source_name(self.source)
                    )));
                }
            }
            Encoding::Threshold { bound } => {
                let v = numeric(numeric_source(meta, self.source))?;
                out.push((v > *bound) as u8);
            }
            Encoding::Levels { upper_bounds } => {
                let v = numeric(numeric_source(meta, self.source))?;
                let level = upper_bounds.iter().position(|&b| v <= b).unwrap_or(upper_bounds.len());
                out.extend((0..=upper_bounds.len()).map(|i| (i == level) as u8));
            }
        }
        Ok(())
    }
}

fn source_name(b: Biometric) -> &'static str {
    match b {
        Biometric::Gender => "gender",
        Biometric::Age => "age",
        Biometric::Weight => "weight",
        Biometric::Height => "height",
        Biometric::Handedness => "handedness",
    }
}

fn numeric_source(meta: &SubjectMeta, b: Biometric) -> f64 {
    match b {
        Biometric::Age => meta.age,
        Biometric::Weight => meta.weight,
        Biometric::Height => meta.height,
        Biometric::Gender | Biometric::Handedness => unreachable!("validated numeric"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSchema {
    pub name: String,
    pub attributes: Vec<AttributeDef>,
}

const PRESETS: [(&str, &str); 3] = [
    ("lara_a1", include_str!("../../presets/lara_a1.json")),
    ("lara_a2", include_str!("../../presets/lara_a2.json")),
    ("pamap2", include_str!("../../presets/pamap2.json")),
];

impl AttributeSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: AttributeSchema = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("attribute schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    /// One of the shipped presets: `lara_a1`, `lara_a2`, `pamap2`.
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::config(format!("unknown attribute schema preset {name:?}")))?;
        Self::from_json(text)
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    /// A preset name or a path to a schema JSON file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if PRESETS.iter().any(|(n, _)| *n == name_or_path) {
            return Self::preset(name_or_path);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::config(format!("schema {} has no attributes", self.name)));
        }
        self.attributes.iter().try_for_each(AttributeDef::validate)
    }

    pub fn bits(&self) -> usize {
        self.attributes.iter().map(AttributeDef::bits).sum()
    }

    pub fn bit_names(&self) -> Vec<String> {
        self.attributes.iter().flat_map(AttributeDef::bit_names).collect()
    }

    /// Range of output bit indices produced by each attribute, in order.
    pub fn bit_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.attributes
            .iter()
            .map(|a| {
                let r = start..start + a.bits();
                start = r.end;
                r
            })
            .collect()
    }
}

pub fn encode_subject(meta: &SubjectMeta, schema: &AttributeSchema) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(schema.bits());
    for def in &schema.attributes {
        def.encode(meta, &mut out)?;
    }
    Ok(out)
}

/// Per-subject attribute vectors, ordered by subject id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeTable {
    pub bit_names: Vec<String>,
    pub rows: Vec<(u32, Vec<u8>)>,
}

impl AttributeTable {
    pub fn width(&self) -> usize {
        self.bit_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, subject_id: u32) -> Option<&[u8]> {
        self.rows
            .iter()
            .find(|(id, _)| *id == subject_id)
            .map(|(_, r)| r.as_slice())
    }
}

/// Encodes every subject. Attributes on which all subjects agree carry no
/// identity information; with `drop_constant` they are removed from the
/// schema (with a warning), otherwise the table is rejected.
pub fn build_table(
    subjects: &[SubjectMeta],
    schema: &AttributeSchema,
    drop_constant: bool,
) -> Result<(AttributeSchema, AttributeTable)> {
    let mut sorted: Vec<&SubjectMeta> = subjects.iter().collect();
    sorted.sort_by_key(|s| s.id);
    let encoded = sorted
        .iter()
        .map(|s| Ok((s.id, encode_subject(s, schema)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut kept = schema.clone();
    if encoded.len() > 1 {
        let ranges = schema.bit_ranges();
        let mut keep = Vec::new();
        for (def, range) in schema.attributes.iter().zip(&ranges) {
            let first = &encoded[0].1[range.clone()];
            let varies = encoded.iter().any(|(_, row)| &row[range.clone()] != first);
            if varies {
                keep.push(range.clone());
            } else if drop_constant {
                log::warn!(
                    "attribute {} has the same value for every subject; dropped from schema {}",
                    def.name,
                    schema.name
                );
            } else {
                return Err(Error::config(format!(
                    "attribute {} has no variation across subjects in schema {}",
                    def.name, schema.name
                )));
            }
        }
        if keep.is_empty() {
            return Err(Error::config(format!(
                "schema {} has no attribute that varies across subjects",
                schema.name
            )));
        }
        kept.attributes = schema
            .attributes
            .iter()
            .zip(&ranges)
            .filter(|(_, r)| keep.contains(r))
            .map(|(d, _)| d.clone())
            .collect();
        let rows = encoded
            .into_iter()
            .map(|(id, row)| (id, keep.iter().flat_map(|r| row[r.clone()].to_vec()).collect()))
            .collect();
        let table = AttributeTable {
            bit_names: kept.bit_names(),
            rows,
        };
        return Ok((kept, table));
    }
    let table = AttributeTable {
        bit_names: kept.bit_names(),
        rows: encoded,
    };
    Ok((kept, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: u32, gender: &str, age: f64, weight: f64, height: f64) -> SubjectMeta {
        SubjectMeta {
            id,
            gender: gender.into(),
            age,
            weight,
            height,
            handedness: "R".into(),
        }
    }

    #[test]
    fn presets_have_expected_widths() {
        assert_eq!(AttributeSchema::preset("lara_a1").unwrap().bits(), 4);
        assert_eq!(AttributeSchema::preset("lara_a2").unwrap().bits(), 10);
        assert_eq!(AttributeSchema::preset("pamap2").unwrap().bits(), 11);
        assert!(AttributeSchema::preset("nope").is_err());
    }

    #[test]
    fn a2_height_levels() {
        let a2 = AttributeSchema::preset("lara_a2").unwrap();
        let row = encode_subject(&meta(1, "F", 23.0, 48.0, 163.0), &a2).unwrap();
        assert_eq!(&row[7..10], &[1, 0, 0]);
        assert_eq!(a2.bit_names()[7..10], ["height<=170", "height(170,180]", "height>180"]);
        // boundary goes to the lower level
        let row = encode_subject(&meta(1, "F", 30.0, 80.0, 170.0), &a2).unwrap();
        assert_eq!(row, vec![0, 1, 0, 0, 0, 1, 0, 1, 0, 0]);
    }

    #[test]
    fn out_of_range_and_unknown_values() {
        let a1 = AttributeSchema::preset("lara_a1").unwrap();
        assert!(encode_subject(&meta(1, "F", 500.0, 60.0, 170.0), &a1).is_err());
        assert!(encode_subject(&meta(1, "X", 30.0, 60.0, 170.0), &a1).is_err());
        assert!(encode_subject(&meta(1, "F", f64::NAN, 60.0, 170.0), &a1).is_err());
    }

    #[test]
    fn constant_attribute_is_dropped_or_rejected() {
        let p = AttributeSchema::preset("pamap2").unwrap();
        let subjects = [meta(2, "F", 20.0, 60.0, 170.0), meta(1, "M", 35.0, 90.0, 190.0)];
        assert!(build_table(&subjects, &p, false).is_err());
        let (kept, table) = build_table(&subjects, &p, true).unwrap();
        assert_eq!(kept.bits(), 10);
        assert_eq!(table.rows[0].0, 1);
        assert!(table.bit_names.iter().all(|n| !n.starts_with("handedness")));
        let (_, empty) = build_table(&[], &p, false).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn bad_schemas_are_rejected() {
        let bad = r#"{"name":"x","attributes":[{"name":"a","source":"age","encoding":{"levels":{"upper_bounds":[40,30]}}}]}"#;
        assert!(AttributeSchema::from_json(bad).is_err());
        let bad = r#"{"name":"x","attributes":[{"name":"g","source":"gender","encoding":{"threshold":{"bound":1}}}]}"#;
        assert!(AttributeSchema::from_json(bad).is_err());
    }
}
