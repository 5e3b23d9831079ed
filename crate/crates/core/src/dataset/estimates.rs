//! Pose estimate files.
//!
//! One row per estimate:
//! `scene_id,im_id,obj_id,score,R,t,time` where `R` holds nine
//! space-separated row-major values, `t` three values in millimeters and
//! `time` the runtime in seconds.

use std::path::Path;

use super::text::{fmt_f64, parse_err, parse_f64, parse_sectioned, parse_u32, Sectioned};
use super::{write_atomic, DatasetError, Location};
use crate::geometry::Pose;

pub const ESTIMATES_HEADER: &str = "scene_id,im_id,obj_id,score,R,t,time";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    pub scene_id: u32,
    pub im_id: u32,
    pub obj_id: u32,
    pub score: f64,
    pub pose: Pose,
    pub time_s: f64,
}

fn parse_vec<const N: usize>(
    origin: &str,
    line: usize,
    field: &'static str,
    s: &str,
) -> Result<[f64; N], DatasetError> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != N {
        return Err(parse_err(
            origin,
            line,
            format!("field '{field}': expected {N} values, got {}", parts.len()),
        ));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_f64(origin, line, field, p)?;
    }
    Ok(out)
}

fn parse_row(origin: &str, line: usize, row: &str) -> Result<EstimateRecord, DatasetError> {
    let f: Vec<&str> = row.split(',').collect();
    if f.len() != 7 {
        return Err(parse_err(origin, line, format!("expected 7 fields, got {}", f.len())));
    }
    let r = parse_vec::<9>(origin, line, "R", f[4])?;
    let t = parse_vec::<3>(origin, line, "t", f[5])?;
    let time_s = parse_f64(origin, line, "time", f[6])?;
    if time_s < 0.0 {
        return Err(parse_err(origin, line, format!("field 'time': negative runtime {time_s}")));
    }
    let checked = Pose::from_row_major(&r, &t).map_err(|source| DatasetError::InvalidPose {
        origin: origin.to_string(),
        location: Location::Line(line),
        source,
    })?;
    if checked.repaired {
        log::warn!("{origin}, line {line}: rotation re-orthonormalized");
    }
    Ok(EstimateRecord {
        scene_id: parse_u32(origin, line, "scene_id", f[0])?,
        im_id: parse_u32(origin, line, "im_id", f[1])?,
        obj_id: parse_u32(origin, line, "obj_id", f[2])?,
        score: parse_f64(origin, line, "score", f[3])?,
        pose: checked.pose,
        time_s,
    })
}

/// Parses an estimates file. Rows keep their input order within a section.
pub fn parse_estimates(
    text: &str,
    origin: &str,
) -> Result<Sectioned<EstimateRecord>, DatasetError> {
    parse_sectioned(text, origin, ESTIMATES_HEADER, |line, row| parse_row(origin, line, row))
}

pub fn load_estimates(path: &Path) -> Result<Sectioned<EstimateRecord>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_estimates(&text, &path.display().to_string())
}

pub fn format_estimate(e: &EstimateRecord) -> String {
    let join = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ");
    let t = e.pose.translation();
    format!(
        "{},{},{},{},{},{},{}",
        e.scene_id,
        e.im_id,
        e.obj_id,
        fmt_f64(e.score),
        join(&e.pose.rotation_row_major()),
        join(&[t.x, t.y, t.z]),
        fmt_f64(e.time_s)
    )
}

pub fn format_estimates(sections: &Sectioned<EstimateRecord>) -> String {
    let mut out = String::new();
    for (name, rows) in sections {
        if !name.is_empty() {
            out.push_str(&format!("[{name}]\n"));
        }
        out.push_str(ESTIMATES_HEADER);
        out.push('\n');
        for e in rows {
            out.push_str(&format_estimate(e));
            out.push('\n');
        }
    }
    out
}

/// Writes estimates atomically; values survive a reload bit-for-bit.
pub fn save_estimates(path: &Path, sections: &Sectioned<EstimateRecord>) -> Result<(), DatasetError> {
    write_atomic(path, format_estimates(sections).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DEFAULT_SECTION;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_record(rng: &mut ChaCha8Rng) -> EstimateRecord {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0);
        let pose = Pose::from_axis_angle(axis, rng.gen_range(-3.0..3.0));
        let t = Vector3::new(
            rng.gen_range(-300.0..300.0),
            rng.gen_range(-300.0..300.0),
            rng.gen_range(300.0..2000.0),
        );
        let pose = Pose::from_translation(t).compose(&pose);
        EstimateRecord {
            scene_id: rng.gen_range(0..20),
            im_id: rng.gen_range(0..1000),
            obj_id: rng.gen_range(1..30),
            score: rng.gen(),
            pose,
            time_s: rng.gen_range(0.0..5.0),
        }
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<_> = (0..100).map(|_| random_record(&mut rng)).collect();
        let mut sections = Sectioned::new();
        sections.insert(DEFAULT_SECTION.to_string(), rows.clone());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("est.csv");
        save_estimates(&path, &sections).unwrap();
        let back = load_estimates(&path).unwrap();
        assert_eq!(back[DEFAULT_SECTION].len(), 100);
        for (a, b) in rows.iter().zip(&back[DEFAULT_SECTION]) {
            assert_eq!(a.pose.rotation_row_major(), b.pose.rotation_row_major());
            assert_eq!(a.pose.translation(), b.pose.translation());
            assert_eq!((a.scene_id, a.im_id, a.obj_id), (b.scene_id, b.im_id, b.obj_id));
            assert_eq!(a.score.to_bits(), b.score.to_bits());
            assert_eq!(a.time_s.to_bits(), b.time_s.to_bits());
        }
    }

    #[test]
    fn identity_row_parses() {
        let text = "scene_id,im_id,obj_id,score,R,t,time\n1,0,5,0.9,1 0 0 0 1 0 0 0 1,0 0 500,0.1\n";
        let e = &parse_estimates(text, "e").unwrap()[DEFAULT_SECTION][0];
        assert_eq!(e.pose.rotation_row_major(), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(e.pose.translation().z, 500.0);
        assert_eq!((e.scene_id, e.obj_id), (1, 5));
    }

    #[test]
    fn nan_is_reported_with_its_line() {
        let text = "1,0,5,0.9,1 0 0 0 1 0 0 0 1,0 0 500,0.1\n1,0,5,NaN,1 0 0 0 1 0 0 0 1,0 0 500,0.1\n";
        match parse_estimates(text, "e") {
            Err(DatasetError::NonFiniteValue { line, field, .. }) => {
                assert_eq!((line, field), (2, "score"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_rotation_and_shape_errors() {
        let text = "1,0,5,0.9,2 0 0 0 1 0 0 0 1,0 0 500,0.1\n";
        assert!(matches!(
            parse_estimates(text, "e"),
            Err(DatasetError::InvalidPose { location: Location::Line(1), .. })
        ));
        assert!(parse_estimates("1,0,5,0.9,1 0 0 0 1 0 0 0,0 0 500,0.1\n", "e").is_err());
        assert!(parse_estimates("1,0,5,0.9,1 0 0 0 1 0 0 0 1,0 0 500,-1\n", "e").is_err());
        assert!(parse_estimates("1,0,5\n", "e").is_err());
    }

    #[test]
    fn sections_split_rows() {
        let row = "1,0,5,0.9,1 0 0 0 1 0 0 0 1,0 0 500,0.1";
        let text = format!("[lm]\n{row}\n[tless]\n{row}\n{row}\n");
        let s = parse_estimates(&text, "e").unwrap();
        assert_eq!((s["lm"].len(), s["tless"].len()), (1, 2));
        assert_eq!(parse_estimates(&format_estimates(&s), "e").unwrap(), s);
    }
}
