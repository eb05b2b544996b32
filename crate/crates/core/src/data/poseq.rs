//! POSEQ1: UTF-8 JSON lines. A header object starts each sequence and is
//! followed by one object per frame:
//!
//! ```text
//! {"format":"POSEQ1","topology":"h36m17","fps":50.0,"subject":"S1","action":"Walking",
//!  "camera_id":"C1","camera":{"fx":..,"fy":..,"cx":..,"cy":..,"R":[9 floats],"t":[3 floats]}}
//! {"t":0,"joints3d":[[x,y,z],...],"joints2d":[[u,v],...],"occ":[0,1,...]}
//! ```
//!
//! Frames with any null or non-finite coordinate are dropped, and a
//! sequence is cut wherever a frame is dropped or `t` is not consecutive.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, MotionSequence};
use crate::geometry::{CameraModel, Pose2D, Pose3D, SkeletonTopology};
use crate::occlusion::OcclusionVector;

pub const FORMAT_TAG: &str = "POSEQ1";

#[derive(Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    topology: String,
    fps: f64,
    subject: String,
    action: String,
    camera_id: String,
    camera: CameraJson,
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    t: usize,
    joints3d: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joints2d: Option<Vec<Vec<Option<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    occ: Option<Vec<i64>>,
}

/// What ingestion kept and dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub frames_read: usize,
    pub frames_discarded: usize,
    pub sequences: usize,
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn write_sequences<W: Write>(mut w: W, sequences: &[MotionSequence]) -> Result<(), DataError> {
    for seq in sequences {
        let c = &seq.camera;
        let header = Header {
            format: FORMAT_TAG.into(),
            topology: seq.topology.clone(),
            fps: seq.fps,
            subject: seq.subject.clone(),
            action: seq.action.clone(),
            camera_id: seq.camera_id.clone(),
            camera: CameraJson {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                r: std::array::from_fn(|i| c.rotation[i / 3][i % 3]),
                t: c.translation,
            },
        };
        writeln!(w, "{}", serde_json::to_string(&header).expect("serializable"))?;
        for (i, f) in seq.frames.iter().enumerate() {
            let line = FrameLine {
                t: seq.first_frame + i,
                joints3d: f
                    .joints
                    .iter()
                    .map(|p| p.iter().map(|&v| finite_or_null(v)).collect())
                    .collect(),
                joints2d: seq.joints2d.as_ref().map(|all| {
                    all[i]
                        .joints
                        .iter()
                        .map(|p| p.iter().map(|&v| finite_or_null(v)).collect())
                        .collect()
                }),
                occ: seq
                    .occ
                    .as_ref()
                    .map(|all| all[i].labels().iter().map(|&v| v as i64).collect()),
            };
            writeln!(w, "{}", serde_json::to_string(&line).expect("serializable"))?;
        }
    }
    Ok(())
}

struct Builder {
    template: MotionSequence,
    joints: usize,
    current: Option<MotionSequence>,
    last_t: Option<usize>,
}

impl Builder {
    fn close(&mut self, out: &mut Vec<MotionSequence>) {
        if let Some(seq) = self.current.take() {
            if !seq.frames.is_empty() {
                out.push(seq);
            }
        }
        self.last_t = None;
    }
}

fn coords<const K: usize>(
    rows: &[Vec<Option<f64>>],
    line: usize,
    what: &str,
) -> Result<Vec<[f64; K]>, DataError> {
    rows.iter()
        .map(|r| {
            if r.len() != K {
                return Err(DataError::ParseError {
                    line,
                    reason: format!("{what} entries need {K} coordinates, got {}", r.len()),
                });
            }
            Ok(std::array::from_fn(|k| r[k].unwrap_or(f64::NAN)))
        })
        .collect()
}

/// Reads every sequence from POSEQ1 text. When `expected` is given, each
/// header must name that topology.
pub fn read_sequences<R: BufRead>(
    reader: R,
    expected: Option<&SkeletonTopology>,
) -> Result<(Vec<MotionSequence>, LoadReport), DataError> {
    let mut out = Vec::new();
    let mut report = LoadReport::default();
    let mut builder: Option<Builder> = None;
    for (idx, text) in reader.lines().enumerate() {
        let line = idx + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| DataError::ParseError {
            line,
            reason: e.to_string(),
        })?;
        if value.get("format").is_some() {
            if let Some(b) = builder.as_mut() {
                b.close(&mut out);
            }
            builder = Some(parse_header(value, line, expected)?);
            continue;
        }
        let b = builder.as_mut().ok_or_else(|| DataError::ParseError {
            line,
            reason: "frame before any header".into(),
        })?;
        let frame: FrameLine = serde_json::from_value(value).map_err(|e| DataError::ParseError {
            line,
            reason: e.to_string(),
        })?;
        report.frames_read += 1;
        if frame.joints3d.len() != b.joints {
            return Err(DataError::TopologyMismatch {
                line,
                reason: format!(
                    "frame has {} joints, topology {} has {}",
                    frame.joints3d.len(),
                    b.template.topology,
                    b.joints
                ),
            });
        }
        let j3 = coords::<3>(&frame.joints3d, line, "joints3d")?;
        let j2 = match &frame.joints2d {
            Some(rows) if rows.len() != b.joints => {
                return Err(DataError::TopologyMismatch {
                    line,
                    reason: format!("joints2d has {} joints, expected {}", rows.len(), b.joints),
                })
            }
            Some(rows) => Some(coords::<2>(rows, line, "joints2d")?),
            None => None,
        };
        let occ = match &frame.occ {
            Some(v) if v.len() != b.joints => {
                return Err(DataError::TopologyMismatch {
                    line,
                    reason: format!("occ has {} labels, expected {}", v.len(), b.joints),
                })
            }
            Some(v) => Some(OcclusionVector::from_labels(v.iter().copied()).map_err(|e| {
                DataError::ParseError {
                    line,
                    reason: e.to_string(),
                }
            })?),
            None => None,
        };
        let valid = j3.iter().flatten().all(|v| v.is_finite())
            && j2.iter().flatten().flatten().all(|v| v.is_finite());
        if !valid {
            report.frames_discarded += 1;
            b.close(&mut out);
            continue;
        }
        if b.last_t.is_some_and(|t| frame.t != t + 1) {
            b.close(&mut out);
        }
        let seq = b.current.get_or_insert_with(|| MotionSequence {
            first_frame: frame.t,
            joints2d: j2.as_ref().map(|_| Vec::new()),
            occ: occ.as_ref().map(|_| Vec::new()),
            ..b.template.clone()
        });
        if seq.joints2d.is_some() != j2.is_some() || seq.occ.is_some() != occ.is_some() {
            return Err(DataError::ParseError {
                line,
                reason: "joints2d/occ must be present on every frame of a sequence or on none"
                    .into(),
            });
        }
        seq.frames.push(Pose3D::new(j3));
        if let (Some(all), Some(p)) = (seq.joints2d.as_mut(), j2) {
            all.push(Pose2D::new(p));
        }
        if let (Some(all), Some(o)) = (seq.occ.as_mut(), occ) {
            all.push(o);
        }
        b.last_t = Some(frame.t);
    }
    if let Some(b) = builder.as_mut() {
        b.close(&mut out);
    }
    report.sequences = out.len();
    Ok((out, report))
}

fn parse_header(
    value: serde_json::Value,
    line: usize,
    expected: Option<&SkeletonTopology>,
) -> Result<Builder, DataError> {
    let h: Header = serde_json::from_value(value).map_err(|e| DataError::ParseError {
        line,
        reason: format!("bad header: {e}"),
    })?;
    if h.format != FORMAT_TAG {
        return Err(DataError::ParseError {
            line,
            reason: format!("unsupported format {:?}", h.format),
        });
    }
    let joints = match expected {
        Some(t) if t.name == h.topology => t.joint_count,
        Some(t) => {
            return Err(DataError::TopologyMismatch {
                line,
                reason: format!("file uses {}, expected {}", h.topology, t.name),
            })
        }
        None => SkeletonTopology::preset(&h.topology)
            .map_err(|e| DataError::TopologyMismatch {
                line,
                reason: e.to_string(),
            })?
            .joint_count,
    };
    let c = &h.camera;
    let rotation = [
        [c.r[0], c.r[1], c.r[2]],
        [c.r[3], c.r[4], c.r[5]],
        [c.r[6], c.r[7], c.r[8]],
    ];
    let camera = CameraModel::new((c.fx, c.fy), (c.cx, c.cy), rotation, c.t).map_err(|e| {
        DataError::ParseError {
            line,
            reason: e.to_string(),
        }
    })?;
    if !(h.fps > 0.0) {
        return Err(DataError::ParseError {
            line,
            reason: format!("fps must be positive, got {}", h.fps),
        });
    }
    Ok(Builder {
        template: MotionSequence {
            frames: Vec::new(),
            fps: h.fps,
            subject: h.subject,
            action: h.action,
            camera_id: h.camera_id,
            camera,
            topology: h.topology,
            first_frame: 0,
            joints2d: None,
            occ: None,
        },
        joints,
        current: None,
        last_t: None,
    })
}

pub fn load_sequences(
    path: &Path,
    expected: Option<&SkeletonTopology>,
) -> Result<(Vec<MotionSequence>, LoadReport), DataError> {
    read_sequences(BufReader::new(File::open(path)?), expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_walk, SynthConfig};

    const HEADER: &str = r#"{"format":"POSEQ1","topology":"humaneva15","fps":60.0,"subject":"S1","action":"Walking","camera_id":"C1","camera":{"fx":1000,"fy":1000,"cx":500,"cy":500,"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,5]}}"#;

    fn frame(t: usize, bad: bool) -> String {
        let mut j: Vec<String> = (0..15).map(|i| format!("[{}.5,0.25,1]", i)).collect();
        if bad {
            j[3] = "[null,0,1]".into();
        }
        format!(r#"{{"t":{t},"joints3d":[{}]}}"#, j.join(","))
    }

    fn read(text: &str) -> Result<(Vec<MotionSequence>, LoadReport), DataError> {
        read_sequences(text.as_bytes(), None)
    }

    #[test]
    fn empty_input() {
        let (seqs, rep) = read("").unwrap();
        assert!(seqs.is_empty());
        assert_eq!(rep, LoadReport::default());
    }

    #[test]
    fn single_frame() {
        let (seqs, _) = read(&format!("{HEADER}\n{}\n", frame(0, false))).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].len(), 1);
        assert_eq!(seqs[0].frames[0].joints[2], [2.5, 0.25, 1.0]);
        assert_eq!(seqs[0].camera.translation, [0.0, 0.0, 5.0]);
    }

    #[test]
    fn invalid_frames_split_sequences() {
        let text = [HEADER.to_string(), frame(0, false), frame(1, false), frame(2, true), frame(3, false), frame(7, false), frame(8, false)].join("\n");
        let (seqs, rep) = read(&text).unwrap();
        assert_eq!(rep.frames_read, 6);
        assert_eq!(rep.frames_discarded, 1);
        let spans: Vec<(usize, usize)> = seqs.iter().map(|s| (s.first_frame, s.len())).collect();
        assert_eq!(spans, vec![(0, 2), (3, 1), (7, 2)]);
        assert_eq!(rep.sequences, 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match read(&format!("{HEADER}\n{{nope")) {
            Err(DataError::ParseError { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match read(&frame(0, false)) {
            Err(DataError::ParseError { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let short = r#"{"t":0,"joints3d":[[0,0,1]]}"#;
        assert!(matches!(
            read(&format!("{HEADER}\n{short}")),
            Err(DataError::TopologyMismatch { line: 2, .. })
        ));
        let h36 = SkeletonTopology::preset("h36m17").unwrap();
        assert!(matches!(
            read_sequences(HEADER.as_bytes(), Some(&h36)),
            Err(DataError::TopologyMismatch { line: 1, .. })
        ));
        let bad_occ = r#"{"t":0,"joints3d":[[0,0,1],[0,0,1],[0,0,1],[0,0,1],[0,0,1],[0,0,1],[0,0,1],[0,0,1],[0,0,1],[0,0,1],[0,0,1],[0,0,1],[0,0,1],[0,0,1],[0,0,1]],"occ":[0,0,0,0,0,0,0,0,0,0,0,0,0,0,2]}"#;
        assert!(read(&format!("{HEADER}\n{bad_occ}")).is_err());
    }

    #[test]
    fn synthetic_round_trip() {
        let cfg = SynthConfig {
            seed: 4,
            n_frames: 300,
            ..Default::default()
        };
        let mut seq = synth_walk(&cfg).unwrap();
        seq.first_frame = 12;
        let mut buf = Vec::new();
        write_sequences(&mut buf, &[seq.clone(), seq.clone()]).unwrap();
        let (back, rep) = read_sequences(buf.as_slice(), None).unwrap();
        assert_eq!(rep.frames_discarded, 0);
        assert_eq!(back.len(), 2);
        for b in &back {
            assert_eq!(b.first_frame, 12);
            assert_eq!(b.camera, seq.camera);
            for (f, g) in b.frames.iter().zip(&seq.frames) {
                for (p, q) in f.joints.iter().zip(&g.joints) {
                    for k in 0..3 {
                        assert!((p[k] - q[k]).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn labels_and_keypoints_round_trip() {
        let cfg = SynthConfig {
            seed: 4,
            n_frames: 5,
            topology: "humaneva15".into(),
            ..Default::default()
        };
        let mut seq = synth_walk(&cfg).unwrap();
        seq.joints2d = Some(seq.frames.iter().map(|f| Pose2D::new(f.joints.iter().map(|p| [p[0], p[1]]).collect())).collect());
        let mut o = OcclusionVector::zeros(15);
        o.set_occluded(4);
        seq.occ = Some(vec![o; 5]);
        let mut buf = Vec::new();
        write_sequences(&mut buf, std::slice::from_ref(&seq)).unwrap();
        let (back, _) = read_sequences(buf.as_slice(), None).unwrap();
        assert_eq!(back, vec![seq]);
    }
}
