//! Pose-graph text ingestion and solution serialization.
//!
//! Only the rotational part of a pose graph matters here. `EDGE_SE3:QUAT`
//! lines supply measurements, `VERTEX_SE3:QUAT` lines only size the node
//! set, translations and information matrices are discarded (with a flag
//! recording that nonzero translation data was dropped), and unknown tags
//! are counted rather than silently skipped.
//!
//! Quaternion order differs between formats on purpose, because silently
//! mixing them is the classic integration bug: g2o files carry
//! `qx qy qz qw`, solution files written here carry `qw qx qy qz`.

use crate::graph::{GraphError, MeasurementGraph};
use crate::so3::Rotation;
use nalgebra::{Quaternion, Rotation3, UnitQuaternion};
use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Acceptable deviation of an input quaternion norm from 1; anything within
/// is normalized, anything beyond is rejected as data corruption.
pub const QUATERNION_NORM_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum G2oError {
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: quaternion norm {norm:.6} deviates from 1 by more than {QUATERNION_NORM_TOL:.0e}")]
    BadQuaternion { line: usize, norm: f64 },
    #[error("line {line}")]
    Graph {
        line: usize,
        #[source]
        source: GraphError,
    },
    #[error("no edges found")]
    Empty,
}

/// A parsed pose-graph dataset, reduced to its rotation measurements.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub graph: MeasurementGraph,
    pub source_path: String,
    /// Repeated edges dropped by the first-wins rule.
    pub dropped_duplicate_edges: usize,
    /// True when nonzero translation data was present and discarded.
    pub dropped_translation_fields: bool,
    /// Lines with unrecognized tags, comments, or no content.
    pub ignored_lines: usize,
}

fn io_err(path: &str, source: io::Error) -> G2oError {
    G2oError::Io { path: path.to_string(), source }
}

fn parse_float(token: &str, line: usize, what: &str) -> Result<f64, G2oError> {
    let v: f64 = token.parse().map_err(|_| G2oError::Malformed {
        line,
        reason: format!("{what} `{token}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(G2oError::Malformed {
            line,
            reason: format!("{what} `{token}` is not finite"),
        });
    }
    Ok(v)
}

fn parse_id(token: &str, line: usize) -> Result<u64, G2oError> {
    token.parse().map_err(|_| G2oError::Malformed {
        line,
        reason: format!("node id `{token}` is not a non-negative integer"),
    })
}

/// Converts a `(qx, qy, qz, qw)` quadruple to a rotation, normalizing mild
/// norm drift and rejecting anything beyond [`QUATERNION_NORM_TOL`].
fn rotation_from_xyzw(q: [f64; 4], line: usize) -> Result<Rotation, G2oError> {
    let [x, y, z, w] = q;
    let norm = (x * x + y * y + z * z + w * w).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_NORM_TOL {
        return Err(G2oError::BadQuaternion { line, norm });
    }
    let unit = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
    let m = unit.to_rotation_matrix().into_inner();
    Ok(Rotation::try_from_matrix(m).expect("unit quaternion maps into SO(3)"))
}

/// Parses g2o text from a reader. `name` and `source_path` are recorded in
/// the dataset verbatim.
pub fn parse_g2o_reader<R: BufRead>(
    reader: R,
    name: &str,
    source_path: &str,
) -> Result<Dataset, G2oError> {
    let mut compact: HashMap<u64, usize> = HashMap::new();
    let mut order: Vec<u64> = Vec::new();
    let assign = |raw: u64, compact: &mut HashMap<u64, usize>, order: &mut Vec<u64>| {
        *compact.entry(raw).or_insert_with(|| {
            order.push(raw);
            order.len() - 1
        })
    };
    let mut edges: Vec<(usize, usize, usize, Rotation)> = Vec::new();
    let mut ignored_lines = 0usize;
    let mut dropped_translation_fields = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(source_path, e))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            Some("VERTEX_SE3:QUAT") => {
                if tokens.len() != 9 {
                    return Err(G2oError::Malformed {
                        line: line_no,
                        reason: format!("vertex line has {} fields, expected 9", tokens.len()),
                    });
                }
                let id = parse_id(tokens[1], line_no)?;
                let mut fields = [0.0f64; 7];
                for (k, t) in tokens[2..9].iter().enumerate() {
                    fields[k] = parse_float(t, line_no, "vertex field")?;
                }
                if fields[..3].iter().any(|&t| t != 0.0) {
                    dropped_translation_fields = true;
                }
                assign(id, &mut compact, &mut order);
            }
            Some("EDGE_SE3:QUAT") => {
                if tokens.len() != 31 {
                    return Err(G2oError::Malformed {
                        line: line_no,
                        reason: format!("edge line has {} fields, expected 31", tokens.len()),
                    });
                }
                let i = parse_id(tokens[1], line_no)?;
                let j = parse_id(tokens[2], line_no)?;
                let mut fields = [0.0f64; 28];
                for (k, t) in tokens[3..31].iter().enumerate() {
                    fields[k] = parse_float(t, line_no, "edge field")?;
                }
                if fields[..3].iter().any(|&t| t != 0.0) {
                    dropped_translation_fields = true;
                }
                let rotation =
                    rotation_from_xyzw([fields[3], fields[4], fields[5], fields[6]], line_no)?;
                let ci = assign(i, &mut compact, &mut order);
                let cj = assign(j, &mut compact, &mut order);
                edges.push((line_no, ci, cj, rotation));
            }
            _ => ignored_lines += 1,
        }
    }
    if edges.is_empty() {
        return Err(G2oError::Empty);
    }
    let mut graph = MeasurementGraph::new(order.len());
    let mut dropped_duplicate_edges = 0usize;
    for (line_no, i, j, rotation) in edges {
        if i != j && graph.has_edge(i, j) {
            dropped_duplicate_edges += 1;
            continue;
        }
        graph
            .add_rotation(i, j, rotation)
            .map_err(|source| G2oError::Graph { line: line_no, source })?;
    }
    Ok(Dataset {
        name: name.to_string(),
        graph,
        source_path: source_path.to_string(),
        dropped_duplicate_edges,
        dropped_translation_fields,
        ignored_lines,
    })
}

/// Parses a g2o file; the dataset name is the file stem.
pub fn parse_g2o(path: impl AsRef<Path>) -> Result<Dataset, G2oError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| shown.clone());
    let file = File::open(path).map_err(|e| io_err(&shown, e))?;
    parse_g2o_reader(BufReader::new(file), &name, &shown)
}

/// `(qw, qx, qy, qz)` of a rotation with the sign canonicalized: `qw >= 0`,
/// ties broken by `qx >= 0`, then `qy`, then `qz`.
pub fn canonical_quaternion(r: &Rotation) -> [f64; 4] {
    let unit = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r.matrix()));
    let (w, x, y, z) = (unit.w, unit.i, unit.j, unit.k);
    let flip = w < 0.0
        || (w == 0.0 && (x < 0.0 || (x == 0.0 && (y < 0.0 || (y == 0.0 && z < 0.0)))));
    if flip {
        [-w, -x, -y, -z]
    } else {
        [w, x, y, z]
    }
}

/// Writes a solution: one `id qw qx qy qz` line per node, 17 significant
/// digits, canonical quaternion signs.
pub fn write_solution_to<W: Write + ?Sized>(w: &mut W, rotations: &[Rotation]) -> io::Result<()> {
    for (id, r) in rotations.iter().enumerate() {
        let [qw, qx, qy, qz] = canonical_quaternion(r);
        writeln!(w, "{id} {qw:.16e} {qx:.16e} {qy:.16e} {qz:.16e}")?;
    }
    Ok(())
}

pub fn write_solution(path: impl AsRef<Path>, rotations: &[Rotation]) -> Result<(), G2oError> {
    let shown = path.as_ref().display().to_string();
    let file = File::create(path.as_ref()).map_err(|e| io_err(&shown, e))?;
    let mut w = BufWriter::new(file);
    write_solution_to(&mut w, rotations).map_err(|e| io_err(&shown, e))?;
    w.flush().map_err(|e| io_err(&shown, e))
}

/// Reads a solution written by [`write_solution`]: ids must cover `0..n`
/// exactly (any order), quaternions are `qw qx qy qz`.
pub fn read_solution_from<R: BufRead>(reader: R, source: &str) -> Result<Vec<Rotation>, G2oError> {
    let mut entries: Vec<(usize, Rotation)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(source, e))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 5 {
            return Err(G2oError::Malformed {
                line: line_no,
                reason: format!("solution line has {} fields, expected 5", tokens.len()),
            });
        }
        let id = parse_id(tokens[0], line_no)? as usize;
        let qw = parse_float(tokens[1], line_no, "qw")?;
        let qx = parse_float(tokens[2], line_no, "qx")?;
        let qy = parse_float(tokens[3], line_no, "qy")?;
        let qz = parse_float(tokens[4], line_no, "qz")?;
        entries.push((id, rotation_from_xyzw([qx, qy, qz, qw], line_no)?));
    }
    if entries.is_empty() {
        return Err(G2oError::Empty);
    }
    let n = entries.len();
    let mut out: Vec<Option<Rotation>> = vec![None; n];
    for (id, r) in entries {
        if id >= n || out[id].is_some() {
            return Err(G2oError::Malformed {
                line: 0,
                reason: format!("solution ids must cover 0..{n} exactly; id {id} breaks that"),
            });
        }
        out[id] = Some(r);
    }
    Ok(out.into_iter().map(|r| r.expect("all slots filled")).collect())
}

pub fn read_solution(path: impl AsRef<Path>) -> Result<Vec<Rotation>, G2oError> {
    let shown = path.as_ref().display().to_string();
    let file = File::open(path.as_ref()).map_err(|e| io_err(&shown, e))?;
    read_solution_from(BufReader::new(file), &shown)
}

/// Identity 6x6 information matrix, upper triangle row-major.
const IDENTITY_INFO: &str = "1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1";

/// Writes a measurement graph as g2o text: identity vertices in id order
/// (which keeps id compaction the identity on re-parse), zero translations,
/// identity information matrices, quaternions in `qx qy qz qw` order.
pub fn write_g2o_to<W: Write + ?Sized>(w: &mut W, g: &MeasurementGraph) -> io::Result<()> {
    for id in 0..g.node_count() {
        writeln!(w, "VERTEX_SE3:QUAT {id} 0 0 0 0 0 0 1")?;
    }
    for edge in g.edges() {
        let [qw, qx, qy, qz] = canonical_quaternion(&edge.rotation);
        writeln!(
            w,
            "EDGE_SE3:QUAT {} {} 0 0 0 {qx:.16e} {qy:.16e} {qz:.16e} {qw:.16e} {IDENTITY_INFO}",
            edge.i, edge.j
        )?;
    }
    Ok(())
}

pub fn write_g2o(path: impl AsRef<Path>, g: &MeasurementGraph) -> Result<(), G2oError> {
    let shown = path.as_ref().display().to_string();
    let file = File::create(path.as_ref()).map_err(|e| io_err(&shown, e))?;
    let mut w = BufWriter::new(file);
    write_g2o_to(&mut w, g).map_err(|e| io_err(&shown, e))?;
    w.flush().map_err(|e| io_err(&shown, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{random_graph, random_rotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<Dataset, G2oError> {
        parse_g2o_reader(Cursor::new(text), "test", "test.g2o")
    }

    #[test]
    fn single_identity_edge() {
        let d = parse("EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n")
            .unwrap();
        assert_eq!(d.graph.node_count(), 2);
        assert_eq!(d.graph.edge_count(), 1);
        let m = d.graph.measurement(0, 1).unwrap();
        assert!((m.matrix() - nalgebra::Matrix3::identity()).norm() < 1e-15);
        assert!(!d.dropped_translation_fields);
        assert_eq!(d.ignored_lines, 0);
    }

    #[test]
    fn vertices_size_the_graph_and_ids_compact_in_appearance_order() {
        let text = "VERTEX_SE3:QUAT 100 0 0 0 0 0 0 1\n\
                    VERTEX_SE3:QUAT 7 0 0 0 0 0 0 1\n\
                    EDGE_SE3:QUAT 42 100 1 2 3 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n";
        let d = parse(text).unwrap();
        // Appearance order: 100, 7, 42 -> 0, 1, 2.
        assert_eq!(d.graph.node_count(), 3);
        assert!(d.graph.has_edge(2, 0));
        assert!(!d.graph.has_edge(0, 1));
        assert!(d.dropped_translation_fields);
    }

    #[test]
    fn duplicate_edges_keep_first_and_are_counted() {
        let a = "EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n";
        let halfx = "EDGE_SE3:QUAT 0 1 0 0 0 1 0 0 0 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n";
        let rev = "EDGE_SE3:QUAT 1 0 0 0 0 1 0 0 0 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n";
        let d = parse(&format!("{a}{halfx}{rev}")).unwrap();
        assert_eq!(d.graph.edge_count(), 1);
        assert_eq!(d.dropped_duplicate_edges, 2);
        let m = d.graph.measurement(0, 1).unwrap();
        assert!((m.matrix() - nalgebra::Matrix3::identity()).norm() < 1e-15, "first edge kept");
    }

    #[test]
    fn unknown_tags_comments_and_blanks_are_counted() {
        let text = "# a comment\n\
                    \n\
                    EDGE_SE2 0 1 0 0 0 1 0 0 1 0 1\n\
                    FIX 0\n\
                    EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n";
        let d = parse(text).unwrap();
        assert_eq!(d.ignored_lines, 4);
        assert_eq!(d.graph.edge_count(), 1);
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        let good = "EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n";
        let err = parse(&format!("{good}EDGE_SE3:QUAT 1 2 0 0 0 0 0 1\n")).unwrap_err();
        match err {
            G2oError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        let err = parse("VERTEX_SE3:QUAT x 0 0 0 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, G2oError::Malformed { line: 1, .. }));
        let err = parse(&format!(
            "{good}EDGE_SE3:QUAT 1 2 0 0 nope 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n"
        ))
        .unwrap_err();
        assert!(matches!(err, G2oError::Malformed { line: 2, .. }));
    }

    #[test]
    fn quaternion_norm_gate() {
        // 0.0005 off unit: normalized and accepted.
        let ok = parse(
            "EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1.0005 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n",
        )
        .unwrap();
        let m = ok.graph.measurement(0, 1).unwrap();
        assert!((m.matrix() - nalgebra::Matrix3::identity()).norm() < 1e-12);
        // 1% off unit: rejected.
        let err = parse(
            "EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1.01 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n",
        )
        .unwrap_err();
        assert!(matches!(err, G2oError::BadQuaternion { line: 1, .. }));
    }

    #[test]
    fn empty_and_self_loop_inputs_fail() {
        assert!(matches!(parse("# nothing here\n"), Err(G2oError::Empty)));
        let err = parse(
            "EDGE_SE3:QUAT 3 3 0 0 0 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n",
        )
        .unwrap_err();
        assert!(matches!(err, G2oError::Graph { line: 1, .. }));
    }

    #[test]
    fn solution_round_trip_is_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(200);
        let rotations: Vec<Rotation> = (0..40).map(|_| random_rotation(&mut rng)).collect();
        let mut buf = Vec::new();
        write_solution_to(&mut buf, &rotations).unwrap();
        let back = read_solution_from(Cursor::new(&buf), "mem").unwrap();
        assert_eq!(back.len(), 40);
        for (a, b) in rotations.iter().zip(&back) {
            assert!((a.matrix() - b.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_solution_lines_are_anchored() {
        let mut buf = Vec::new();
        write_solution_to(&mut buf, &[Rotation::identity(); 3]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for (i, line) in text.lines().enumerate() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            assert_eq!(tokens[0], i.to_string());
            assert_eq!(tokens[1].parse::<f64>().unwrap(), 1.0);
            for t in &tokens[2..] {
                assert_eq!(t.parse::<f64>().unwrap(), 0.0);
            }
        }
        assert!(text.lines().next().unwrap().starts_with("0 1"));
    }

    #[test]
    fn canonical_sign_rules() {
        // pi rotation about z: qw = 0, sign fixed by qz > 0 via the cascade.
        let r = Rotation::from_axis_angle(&nalgebra::Vector3::z(), std::f64::consts::PI).unwrap();
        let [qw, qx, qy, qz] = canonical_quaternion(&r);
        assert!(qw.abs() < 1e-12);
        assert!(qx.abs() < 1e-12 && qy.abs() < 1e-12);
        assert!(qz > 0.0);
        let mut buf = Vec::new();
        write_solution_to(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let qw_field: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(qw_field >= 0.0);
    }

    #[test]
    fn graph_round_trip_through_g2o_text() {
        let (g, _) = random_graph(12, 14, 201);
        let mut buf = Vec::new();
        write_g2o_to(&mut buf, &g).unwrap();
        let d = parse_g2o_reader(Cursor::new(&buf), "mem", "mem.g2o").unwrap();
        assert_eq!(d.graph.node_count(), 12);
        assert_eq!(d.graph.edge_count(), g.edge_count());
        assert!(!d.dropped_translation_fields);
        for e in g.edges() {
            let back = d.graph.measurement(e.i, e.j).unwrap();
            assert!((back.matrix() - e.rotation.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn bad_solution_ids_are_rejected() {
        let text = "0 1 0 0 0\n2 1 0 0 0\n";
        assert!(matches!(
            read_solution_from(Cursor::new(text), "mem"),
            Err(G2oError::Malformed { .. })
        ));
    }

    #[test]
    fn parse_g2o_reads_files() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("rotavg-g2o-test-{}.g2o", std::process::id()));
        let (g, _) = random_graph(6, 4, 202);
        write_g2o(&path, &g).unwrap();
        let d = parse_g2o(&path).unwrap();
        assert_eq!(d.name, format!("rotavg-g2o-test-{}", std::process::id()));
        assert_eq!(d.graph.node_count(), 6);
        std::fs::remove_file(&path).unwrap();
        assert!(matches!(parse_g2o(&path), Err(G2oError::Io { .. })));
    }
}
