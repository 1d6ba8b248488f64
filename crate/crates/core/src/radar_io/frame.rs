use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FRAME_HEADER: &str = "x,y,z,rcs,v_rel,v_r";

/// One radar return in the sensor frame.
///
/// `v_rel` is the Doppler (relative) radial velocity, `v_r` the ego-motion
/// compensated one. Spherical quantities are derived on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rcs: f64,
    pub v_rel: f64,
    pub v_r: f64,
}

impl RadarPoint {
    pub fn new(x: f64, y: f64, z: f64, rcs: f64, v_rel: f64, v_r: f64) -> Self {
        Self { x, y, z, rcs, v_rel, v_r }
    }

    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn azimuth(&self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Elevation angle; 0 for a point at the origin.
    pub fn elevation(&self) -> f64 {
        let r = self.range();
        if r == 0.0 {
            0.0
        } else {
            (self.z / r).asin()
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.rcs, self.v_rel, self.v_r]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Total order used wherever points must be processed independently of
    /// their position in the frame: x, y, z, v_r, then rcs and v_rel.
    pub fn key_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
            .then(self.z.total_cmp(&other.z))
            .then(self.v_r.total_cmp(&other.v_r))
            .then(self.rcs.total_cmp(&other.rcs))
            .then(self.v_rel.total_cmp(&other.v_rel))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RadarFrame {
    pub frame_id: String,
    pub points: Vec<RadarPoint>,
    pub ego_velocity: Option<[f64; 3]>,
}

impl RadarFrame {
    pub fn new(frame_id: impl Into<String>, points: Vec<RadarPoint>) -> Self {
        Self { frame_id: frame_id.into(), points, ego_velocity: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn from_csv(bytes: &[u8], frame_id: impl Into<String>) -> Result<Self> {
        let mut frame = parse_frame(bytes)?;
        frame.frame_id = frame_id.into();
        Ok(frame)
    }

    pub fn to_csv(&self) -> String {
        serialize_frame(self)
    }
}

/// Parses the frame CSV format (`x,y,z,rcs,v_rel,v_r` header, one point per line).
///
/// Rows are numbered from 1 (the first line after the header) in errors.
pub fn parse_frame(bytes: &[u8]) -> Result<RadarFrame> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("not UTF-8: {e}")))?;
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or("").trim_end_matches('\r');
    if header != FRAME_HEADER {
        return Err(Error::Format(format!("expected header `{FRAME_HEADER}`, found `{header}`")));
    }

    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut vals = [0.0f64; 6];
        let mut n = 0;
        for field in line.split(',') {
            if n == 6 {
                return Err(Error::Value { row, msg: "more than 6 fields".into() });
            }
            let v: f64 = field.trim().parse().map_err(|_| Error::Value {
                row,
                msg: format!("non-numeric field `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Value { row, msg: format!("non-finite field `{field}`") });
            }
            vals[n] = v;
            n += 1;
        }
        if n != 6 {
            return Err(Error::Value { row, msg: format!("expected 6 fields, found {n}") });
        }
        points.push(RadarPoint::new(vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]));
    }
    Ok(RadarFrame::new("", points))
}

/// Writes the frame as CSV. `f64`'s `Display` is the shortest decimal that
/// parses back to the same bits, so parse/serialize roundtrips exactly.
pub fn serialize_frame(frame: &RadarFrame) -> String {
    let mut out = String::with_capacity(32 * (frame.points.len() + 1));
    out.push_str(FRAME_HEADER);
    out.push('\n');
    for p in &frame.points {
        let _ = writeln!(out, "{},{},{},{},{},{}", p.x, p.y, p.z, p.rcs, p.v_rel, p.v_r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_row() {
        let f = parse_frame(b"x,y,z,rcs,v_rel,v_r\n1.0,2.0,0.5,-3.2,1.1,0.6\n").unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.points[0].x, 1.0);
        assert_eq!(f.points[0].v_r, 0.6);
        assert_eq!(f.points[0].rcs, -3.2);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse_frame(b"x,y,z,rcs,v_rel,v_r\n").unwrap().is_empty());
        assert!(parse_frame(b"x,y,z,rcs,v_rel,v_r").unwrap().is_empty());
    }

    #[test]
    fn nan_reports_row() {
        let err = parse_frame(b"x,y,z,rcs,v_rel,v_r\n1,2,3,4,5,nan\n").unwrap_err();
        assert!(matches!(err, Error::Value { row: 1, .. }), "{err:?}");
        let err = parse_frame(b"x,y,z,rcs,v_rel,v_r\n1,2,3,4,5,6\n1,2,abc,4,5,6\n").unwrap_err();
        assert!(matches!(err, Error::Value { row: 2, .. }), "{err:?}");
    }

    #[test]
    fn bad_header_and_field_count() {
        assert!(matches!(parse_frame(b"x,y,z\n"), Err(Error::Format(_))));
        assert!(matches!(
            parse_frame(b"x,y,z,rcs,v_rel,v_r\n1,2,3\n"),
            Err(Error::Value { row: 1, .. })
        ));
        assert!(matches!(
            parse_frame(b"x,y,z,rcs,v_rel,v_r\n1,2,3,4,5,6,7\n"),
            Err(Error::Value { row: 1, .. })
        ));
    }

    #[test]
    fn spherical_accessors() {
        let p = RadarPoint::new(3.0, 4.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(p.range(), 5.0);
        assert!((p.azimuth() - (4.0f64).atan2(3.0)).abs() < 1e-15);
        assert_eq!(p.elevation(), 0.0);
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e3..1e3f64]
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_bit_exact(rows in prop::collection::vec(prop::array::uniform6(finite()), 0..20)) {
            let points: Vec<_> = rows
                .iter()
                .map(|r| RadarPoint::new(r[0], r[1], r[2], r[3], r[4], r[5]))
                .collect();
            let frame = RadarFrame::new("", points);
            let back = parse_frame(serialize_frame(&frame).as_bytes()).unwrap();
            prop_assert_eq!(back.points.len(), frame.points.len());
            for (a, b) in frame.points.iter().zip(&back.points) {
                for (u, v) in [(a.x, b.x), (a.y, b.y), (a.z, b.z), (a.rcs, b.rcs), (a.v_rel, b.v_rel), (a.v_r, b.v_r)] {
                    prop_assert_eq!(u.to_bits(), v.to_bits());
                }
            }
        }
    }
}
