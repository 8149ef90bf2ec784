//! JSON-lines pose files.
//!
//! Line 1 holds the topology
//! `{"m":13,"joints":[..],"bones":[[p,c],..],"root":1,"colors":[[r,g,b],..]}`,
//! every following line one pose `{"coords":[[x,y],..],"label":".."}`.
//! Coordinates are written with 17 significant digits, which round-trips
//! every `f64` exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Pose, PoseSet, Rgb, SkeletonTopology};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    m: usize,
    joints: Vec<String>,
    bones: Vec<[usize; 2]>,
    root: usize,
    colors: Vec<Rgb>,
}

#[derive(Deserialize)]
struct Record {
    coords: Vec<[f64; 2]>,
    #[serde(default)]
    label: Option<String>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_poses<W: Write>(set: &PoseSet, mut w: W) -> Result<()> {
    let topo = &set.topology;
    let header = Header {
        m: topo.joint_count(),
        joints: topo.joints().to_vec(),
        bones: topo.bones().iter().map(|&(p, c)| [p, c]).collect(),
        root: topo.root(),
        colors: topo.colors().to_vec(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut line = String::new();
    for pose in &set.poses {
        line.clear();
        line.push_str("{\"coords\":[");
        for (i, c) in pose.coords.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push('[');
            line.push_str(&fmt_f64(c[0]));
            line.push(',');
            line.push_str(&fmt_f64(c[1]));
            line.push(']');
        }
        line.push(']');
        if let Some(label) = &pose.label {
            line.push_str(",\"label\":");
            line.push_str(&serde_json::to_string(label)?);
        }
        line.push_str("}\n");
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// `origin` names the source in error messages.
pub fn read_poses<R: Read>(r: R, origin: &Path) -> Result<PoseSet> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = BufReader::new(r).lines();
    let first = lines
        .next()
        .ok_or_else(|| perr(1, "missing topology header".into()))??;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| perr(1, format!("bad header: {e}")))?;
    if header.m != header.joints.len() {
        return Err(perr(
            1,
            format!("header says m={} but lists {} joints", header.m, header.joints.len()),
        ));
    }
    let topology = SkeletonTopology::new(
        header.joints,
        header.bones.iter().map(|b| (b[0], b[1])).collect(),
        header.root,
        header.colors,
    )
    .map_err(|e| perr(1, e.to_string()))?;

    let mut poses = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| perr(lineno, format!("malformed record: {e}")))?;
        let pose = Pose {
            coords: rec.coords,
            label: rec.label,
        };
        super::validate_pose(&pose, &topology).map_err(|v| perr(lineno, v.to_string()))?;
        poses.push(pose);
    }
    Ok(PoseSet { topology, poses })
}

pub fn save_poses(set: &PoseSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path)?;
    write_poses(set, BufWriter::new(f))
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<PoseSet> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(PathBuf::from(path)),
        _ => Error::Io(e),
    })?;
    read_poses(f, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{chain, human13};

    fn sample_set() -> PoseSet {
        let t = chain(3);
        let poses = vec![
            Pose::new(vec![[0.1, 0.2], [0.3, 0.4], [1.0 / 3.0, 0.7]]).with_label("walk \"fast\""),
            Pose::new(vec![[0.0, 1.0], [0.123456789012345678, 5e-324], [0.9, 0.5]]),
        ];
        PoseSet::new(t, poses).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let set = sample_set();
        let mut buf = Vec::new();
        write_poses(&set, &mut buf).unwrap();
        let back = read_poses(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, set);
        for (a, b) in back.poses.iter().zip(&set.poses) {
            for (ca, cb) in a.coords.iter().zip(&b.coords) {
                assert_eq!(ca[0].to_bits(), cb[0].to_bits());
                assert_eq!(ca[1].to_bits(), cb[1].to_bits());
            }
        }
    }

    #[test]
    fn short_record_reports_its_line() {
        let set = PoseSet::new(human13(), vec![Pose::new(vec![[0.5, 0.5]; 13])]).unwrap();
        let mut buf = Vec::new();
        write_poses(&set, &mut buf).unwrap();
        let twelve = vec!["[0.5,0.5]"; 12].join(",");
        buf.extend_from_slice(format!("{{\"coords\":[{twelve}]}}\n").as_bytes());
        match read_poses(&buf[..], Path::new("f.jsonl")) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("length mismatch"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let set = sample_set();
        let mut buf = Vec::new();
        write_poses(&set, &mut buf).unwrap();
        buf.extend_from_slice(b"{\"coords\": oops}\n");
        match read_poses(&buf[..], Path::new("f.jsonl")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_m_must_match_joint_list() {
        let text = "{\"m\":4,\"joints\":[\"a\",\"b\",\"c\"],\"bones\":[[0,1],[1,2]],\"root\":0,\"colors\":[[1,0,0],[0,1,0]]}\n";
        assert!(matches!(
            read_poses(text.as_bytes(), Path::new("h")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_set_loads() {
        let set = PoseSet::new(chain(4), vec![]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        save_poses(&set, &p).unwrap();
        let back = load_poses(&p).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.topology, set.topology);
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_poses("/nonexistent/poses.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/poses.jsonl"));
    }
}
