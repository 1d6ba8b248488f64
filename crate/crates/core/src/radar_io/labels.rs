use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detect::Detection;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Car, ObjectClass::Pedestrian, ObjectClass::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "car" => Ok(ObjectClass::Car),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            "cyclist" => Ok(ObjectClass::Cyclist),
            other => Err(Error::Format(format!("unknown class `{other}`"))),
        }
    }
}

/// Labelled 3D box. `vx, vy` is the BEV velocity, only used by scene synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub class: ObjectClass,
    #[serde(default)]
    pub vx: f64,
    #[serde(default)]
    pub vy: f64,
}

impl GroundTruthBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0 && self.w > 0.0 && self.h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "box sizes must be positive, got l={} w={} h={}",
                self.l, self.w, self.h
            )));
        }
        if !(self.yaw > -PI && self.yaw <= PI) {
            return Err(Error::InvalidArgument(format!("yaw {} outside (-pi, pi]", self.yaw)));
        }
        Ok(())
    }

    pub fn bev(&self) -> crate::detect::BevBox {
        crate::detect::BevBox::new(self.cx, self.cy, self.l, self.w, self.yaw)
    }
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Value {
            row: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        // Plain structs of numbers and enums cannot fail to serialize.
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn parse_labels(text: &str) -> Result<Vec<GroundTruthBox>> {
    let boxes: Vec<GroundTruthBox> = parse_jsonl(text)?;
    for (i, b) in boxes.iter().enumerate() {
        b.validate().map_err(|e| Error::Value { row: i + 1, msg: e.to_string() })?;
    }
    Ok(boxes)
}

pub fn write_labels(boxes: &[GroundTruthBox]) -> String {
    write_jsonl(boxes)
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    parse_jsonl(text)
}

pub fn write_detections(dets: &[Detection]) -> String {
    write_jsonl(dets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_line_uses_flat_keys() {
        let b = GroundTruthBox {
            cx: 1.0,
            cy: 2.0,
            cz: -1.0,
            l: 3.9,
            w: 1.6,
            h: 1.56,
            yaw: 0.5,
            class: ObjectClass::Car,
            vx: 1.5,
            vy: 0.0,
        };
        let text = write_labels(&[b]);
        assert_eq!(
            text,
            "{\"cx\":1.0,\"cy\":2.0,\"cz\":-1.0,\"l\":3.9,\"w\":1.6,\"h\":1.56,\"yaw\":0.5,\"class\":\"car\",\"vx\":1.5,\"vy\":0.0}\n"
        );
        assert_eq!(parse_labels(&text).unwrap(), vec![b]);
    }

    #[test]
    fn rejects_bad_boxes() {
        let bad = "{\"cx\":0,\"cy\":0,\"cz\":0,\"l\":0,\"w\":1,\"h\":1,\"yaw\":0,\"class\":\"car\"}\n";
        assert!(matches!(parse_labels(bad), Err(Error::Value { row: 1, .. })));
        let bad_yaw = "{\"cx\":0,\"cy\":0,\"cz\":0,\"l\":1,\"w\":1,\"h\":1,\"yaw\":-3.2,\"class\":\"car\"}\n";
        assert!(parse_labels(bad_yaw).is_err());
        let bad_class = "{\"cx\":0,\"cy\":0,\"cz\":0,\"l\":1,\"w\":1,\"h\":1,\"yaw\":0,\"class\":\"truck\"}\n";
        assert!(parse_labels(bad_class).is_err());
    }

    #[test]
    fn class_names_roundtrip() {
        for c in ObjectClass::ALL {
            assert_eq!(c.name().parse::<ObjectClass>().unwrap(), c);
            assert_eq!(ObjectClass::from_index(c.index()), Some(c));
        }
    }
}
