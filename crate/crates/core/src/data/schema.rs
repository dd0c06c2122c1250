use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const NUM_BIOMARKERS: usize = 17;

/// 17 biomarkers, 3 measurement categories and the decision root.
pub const NUM_PARENT_CLASSES: usize = NUM_BIOMARKERS + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "RNFL")]
    Rnfl,
    #[serde(rename = "ONH")]
    Onh,
    #[serde(rename = "GCC")]
    Gcc,
    #[serde(rename = "IOP")]
    Iop,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Rnfl => "RNFL",
            Category::Onh => "ONH",
            Category::Gcc => "GCC",
            Category::Iop => "IOP",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "µm")]
    Micrometre,
    #[serde(rename = "mm²")]
    SquareMillimetre,
    #[serde(rename = "mmHg")]
    MmHg,
    #[serde(rename = "ratio")]
    Ratio,
    #[serde(rename = "dimensionless")]
    Dimensionless,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Micrometre => "µm",
            Unit::SquareMillimetre => "mm²",
            Unit::MmHg => "mmHg",
            Unit::Ratio => "ratio",
            Unit::Dimensionless => "dimensionless",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerDef {
    pub code: String,
    pub name: String,
    pub category: Category,
    pub unit: Unit,
    /// Whether the OD-OS difference column is reported. The two superior
    /// minus inferior measures have no inter-eye difference.
    pub has_ie: bool,
    /// Layer thickness, so values must be strictly positive.
    pub thickness: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerSchema {
    biomarkers: Vec<BiomarkerDef>,
}

/// Parent of a node in the subordination graph. Class indices: biomarkers
/// `0..17`, then RNFL, ONH, GCC, and the decision root at 20.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "id")]
pub enum ParentClass {
    Biomarker(usize),
    Category(Category),
    Root,
}

impl ParentClass {
    pub fn index(self) -> usize {
        match self {
            ParentClass::Biomarker(i) => i,
            ParentClass::Category(Category::Rnfl) => NUM_BIOMARKERS,
            ParentClass::Category(Category::Onh) => NUM_BIOMARKERS + 1,
            ParentClass::Category(Category::Gcc) => NUM_BIOMARKERS + 2,
            // IOP has no category node; its biomarker hangs off the root.
            ParentClass::Category(Category::Iop) | ParentClass::Root => NUM_BIOMARKERS + 3,
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Ok(match index {
            i if i < NUM_BIOMARKERS => ParentClass::Biomarker(i),
            17 => ParentClass::Category(Category::Rnfl),
            18 => ParentClass::Category(Category::Onh),
            19 => ParentClass::Category(Category::Gcc),
            20 => ParentClass::Root,
            _ => {
                return Err(Error::Bounds {
                    index,
                    dim: NUM_PARENT_CLASSES,
                })
            }
        })
    }

    pub fn is_biomarker(self) -> bool {
        matches!(self, ParentClass::Biomarker(_))
    }
}

impl BiomarkerSchema {
    /// The 16 OCT biomarkers in RNFL / ONH / GCC order, followed by IOP.
    pub fn glaucoma() -> Self {
        use Category::*;
        use Unit::*;
        let def = |code: &str, name: &str, category, unit, has_ie, thickness| BiomarkerDef {
            code: code.into(),
            name: name.into(),
            category,
            unit,
            has_ie,
            thickness,
        };
        Self {
            biomarkers: vec![
                def("A-R", "Average RNFL", Rnfl, Micrometre, true, true),
                def("S-R", "Superior RNFL", Rnfl, Micrometre, true, true),
                def("I-R", "Inferior RNFL", Rnfl, Micrometre, true, true),
                def("I-ER", "Intra Eye RNFL (S-I)", Rnfl, Micrometre, false, false),
                def("A-O", "Cup/Disc Area Ratio", Onh, Ratio, true, false),
                def("V-O", "Cup/Disc Vertical Ratio", Onh, Ratio, true, false),
                def("H-O", "Cup/Disc Horizontal Ratio", Onh, Ratio, true, false),
                def("RA", "Rim Area", Onh, SquareMillimetre, true, false),
                def("DA", "Disc Area", Onh, SquareMillimetre, true, false),
                def("CVO", "Cup Volume", Onh, SquareMillimetre, true, false),
                def("A-G", "Average GCC", Gcc, Micrometre, true, true),
                def("S-G", "Superior GCC", Gcc, Micrometre, true, true),
                def("I-F", "Inferior GCC", Gcc, Micrometre, true, true),
                def("I-EG", "Intra Eye GCC (S-I)", Gcc, Micrometre, false, false),
                def("FLV", "Focal Loss Volume", Gcc, Dimensionless, true, false),
                def("GLV", "Global Loss Volume", Gcc, Dimensionless, true, false),
                def("IOP", "Intraocular Pressure", Iop, MmHg, true, false),
            ],
        }
    }

    /// Process-wide instance of [`glaucoma`](Self::glaucoma).
    pub fn shared() -> &'static Self {
        static SCHEMA: std::sync::OnceLock<BiomarkerSchema> = std::sync::OnceLock::new();
        SCHEMA.get_or_init(Self::glaucoma)
    }

    pub fn len(&self) -> usize {
        self.biomarkers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.biomarkers.is_empty()
    }

    pub fn biomarkers(&self) -> &[BiomarkerDef] {
        &self.biomarkers
    }

    pub fn get(&self, index: usize) -> &BiomarkerDef {
        &self.biomarkers[index]
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.biomarkers.iter().position(|b| b.code == code)
    }

    pub fn code(&self, index: usize) -> &str {
        &self.biomarkers[index].code
    }

    /// Ground-truth subordination: each biomarker belongs to its category;
    /// IOP sits directly under the decision root.
    pub fn ground_truth_parent(&self, index: usize) -> ParentClass {
        match self.biomarkers[index].category {
            Category::Iop => ParentClass::Root,
            c => ParentClass::Category(c),
        }
    }

    pub fn parent_label(&self, parent: ParentClass) -> String {
        match parent {
            ParentClass::Biomarker(i) => self.code(i).to_string(),
            ParentClass::Category(c) => c.as_str().to_string(),
            ParentClass::Root => "ROOT".to_string(),
        }
    }

    /// Hex SHA-256 over codes, categories and units in order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.biomarkers {
            h.update(b.code.as_bytes());
            h.update([0]);
            h.update(b.category.as_str().as_bytes());
            h.update([0]);
            h.update(b.unit.as_str().as_bytes());
            h.update([u8::from(b.has_ie)]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal = 0,
    Glaucoma = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Normal),
            1 => Some(Label::Glaucoma),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Glaucoma
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "Normal",
            Label::Glaucoma => "Glaucoma",
        })
    }
}

/// Right eye, left eye, and their difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeValues {
    pub od: f64,
    pub os: f64,
    pub ie: Option<f64>,
}

impl EyeValues {
    pub fn new(od: f64, os: f64, has_ie: bool) -> Self {
        Self {
            od,
            os,
            ie: has_ie.then(|| od - os),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub label: Label,
    /// One entry per schema biomarker, in schema order.
    pub values: Vec<EyeValues>,
}

impl PatientRecord {
    /// Checks the IE column and thickness positivity against `schema`.
    pub fn validate(&self, schema: &BiomarkerSchema) -> std::result::Result<(), String> {
        if self.values.len() != schema.len() {
            return Err(format!(
                "{} biomarker values, schema has {}",
                self.values.len(),
                schema.len()
            ));
        }
        for (def, v) in schema.biomarkers().iter().zip(&self.values) {
            match (def.has_ie, v.ie) {
                (true, Some(ie)) => {
                    if (ie - (v.od - v.os)).abs() > 1e-6 {
                        return Err(format!(
                            "{}: IE {ie} differs from OD - OS = {}",
                            def.code,
                            v.od - v.os
                        ));
                    }
                }
                (true, None) => return Err(format!("{}: missing IE value", def.code)),
                (false, Some(_)) => return Err(format!("{}: IE must be N/A", def.code)),
                (false, None) => {}
            }
            if def.thickness && !(v.od > 0.0 && v.os > 0.0) {
                return Err(format!("{}: thickness must be positive", def.code));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: BiomarkerSchema,
    pub records: Vec<PatientRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label.is_positive()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn schema_taxonomy() {
        let s = BiomarkerSchema::glaucoma();
        assert_eq!(s.len(), NUM_BIOMARKERS);
        let codes: HashSet<_> = s.biomarkers().iter().map(|b| b.code.as_str()).collect();
        assert_eq!(codes.len(), 17);
        for c in [
            "A-R", "S-R", "I-R", "I-ER", "A-O", "V-O", "H-O", "RA", "DA", "CVO", "A-G", "S-G",
            "I-F", "I-EG", "FLV", "GLV", "IOP",
        ] {
            assert!(codes.contains(c), "{c}");
        }
        let count = |c| s.biomarkers().iter().filter(|b| b.category == c).count();
        assert_eq!(count(Category::Rnfl), 4);
        assert_eq!(count(Category::Onh), 6);
        assert_eq!(count(Category::Gcc), 6);
        assert_eq!(count(Category::Iop), 1);
        assert_eq!(s.ground_truth_parent(16), ParentClass::Root);
        assert_eq!(s.ground_truth_parent(2), ParentClass::Category(Category::Rnfl));
    }

    #[test]
    fn parent_class_indices_roundtrip() {
        for k in 0..NUM_PARENT_CLASSES {
            assert_eq!(ParentClass::from_index(k).unwrap().index(), k);
        }
        assert!(ParentClass::from_index(21).is_err());
    }

    #[test]
    fn table_sample_ie_consistency() {
        // A-R: OD 97, OS 91, IE 6
        let v = EyeValues::new(97.0, 91.0, true);
        assert_eq!(v.ie, Some(6.0));
        assert_eq!(EyeValues::new(-5.0, 3.0, false).ie, None);
    }
}
