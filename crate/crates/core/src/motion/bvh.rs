//! BVH reading and writing.
//!
//! Supports one rotation triple per joint in any Tait-Bryan order (ZYX, ZXY,
//! XYZ and the remaining permutations) and position channels on the root.
//! Position channels on non-root joints are accepted and ignored; the joint
//! offset is used instead.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::rotation::{Axis, EulerOrder};
use super::skeleton::{SkeletonMotion, SkeletonTopology};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Channel {
    Position(Axis),
    Rotation(Axis),
}

#[derive(Debug)]
struct JointChannels {
    channels: Vec<Channel>,
    order: EulerOrder,
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate().peekable(),
            last: 0,
        }
    }

    /// Next non-empty line as (1-based line number, tokens).
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if !toks.is_empty() {
                return Some((i + 1, toks));
            }
        }
        None
    }

    fn expect_tokens(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        let last = self.last;
        self.next_tokens()
            .ok_or_else(|| Error::parse(last + 1, format!("unexpected end of file, expected {what}")))
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(line, format!("expected a number, got '{tok}'")))
}

fn parse_offset(toks: &[&str], line: usize) -> Result<[f64; 3]> {
    if toks.len() != 4 || toks[0] != "OFFSET" {
        return Err(Error::parse(line, "expected 'OFFSET x y z'"));
    }
    Ok([
        parse_f64(toks[1], line)?,
        parse_f64(toks[2], line)?,
        parse_f64(toks[3], line)?,
    ])
}

fn parse_channels(toks: &[&str], line: usize) -> Result<JointChannels> {
    if toks.len() < 2 || toks[0] != "CHANNELS" {
        return Err(Error::parse(line, "expected 'CHANNELS n ...'"));
    }
    let n: usize = toks[1]
        .parse()
        .map_err(|_| Error::parse(line, format!("bad channel count '{}'", toks[1])))?;
    if toks.len() != n + 2 {
        return Err(Error::parse(line, format!("declared {n} channels but listed {}", toks.len() - 2)));
    }
    let mut channels = Vec::with_capacity(n);
    for t in &toks[2..] {
        let axis = match t.chars().next().map(|c| c.to_ascii_uppercase()) {
            Some('X') => Axis::X,
            Some('Y') => Axis::Y,
            Some('Z') => Axis::Z,
            _ => return Err(Error::parse(line, format!("unknown channel '{t}'"))),
        };
        let kind = &t[1..].to_ascii_lowercase();
        channels.push(match kind.as_str() {
            "position" => Channel::Position(axis),
            "rotation" => Channel::Rotation(axis),
            _ => return Err(Error::parse(line, format!("unknown channel '{t}'"))),
        });
    }
    let rot: Vec<Axis> = channels
        .iter()
        .filter_map(|c| match c {
            Channel::Rotation(a) => Some(*a),
            _ => None,
        })
        .collect();
    let order = match rot.len() {
        3 => EulerOrder::new([rot[0], rot[1], rot[2]]).map_err(|e| Error::parse(line, e.to_string()))?,
        0 => EulerOrder::ZXY,
        k => return Err(Error::parse(line, format!("expected 3 rotation channels, found {k}"))),
    };
    Ok(JointChannels { channels, order })
}

struct HierarchyBuilder {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    offsets: Vec<[f64; 3]>,
    end_sites: Vec<Option<[f64; 3]>>,
    channels: Vec<JointChannels>,
}

fn parse_joint_body(lines: &mut Lines<'_>, b: &mut HierarchyBuilder, parent: Option<usize>, name: String, open_line: usize) -> Result<()> {
    let (l, toks) = lines.expect_tokens("'{'")?;
    if toks != ["{"] {
        return Err(Error::parse(l, format!("expected '{{' after joint '{name}'")));
    }
    let (l, toks) = lines.expect_tokens("OFFSET")?;
    let offset = parse_offset(&toks, l)?;
    let (l, toks) = lines.expect_tokens("CHANNELS")?;
    let ch = parse_channels(&toks, l)?;
    let idx = b.names.len();
    b.names.push(name);
    b.parents.push(parent);
    b.offsets.push(offset);
    b.end_sites.push(None);
    b.channels.push(ch);
    loop {
        let (l, toks) = lines.expect_tokens("JOINT, End Site or '}'")?;
        match toks.as_slice() {
            ["}"] => return Ok(()),
            ["JOINT", child] => parse_joint_body(lines, b, Some(idx), child.to_string(), l)?,
            ["End", "Site"] | ["End", "Site", ..] => {
                let (l2, t2) = lines.expect_tokens("'{'")?;
                if t2 != ["{"] {
                    return Err(Error::parse(l2, "expected '{' after End Site"));
                }
                let (l3, t3) = lines.expect_tokens("OFFSET")?;
                b.end_sites[idx] = Some(parse_offset(&t3, l3)?);
                let (l4, t4) = lines.expect_tokens("'}'")?;
                if t4 != ["}"] {
                    return Err(Error::parse(l4, "expected '}' closing End Site"));
                }
            }
            _ => {
                return Err(Error::parse(
                    l,
                    format!("unexpected '{}' inside joint opened at line {open_line}", toks.join(" ")),
                ))
            }
        }
    }
}

/// Parse a BVH document. Contact joints are guessed from joint names (see
/// [`SkeletonTopology::guess_contact_joints`]).
pub fn parse_bvh(text: &str) -> Result<SkeletonMotion> {
    let mut lines = Lines::new(text);
    let (l, toks) = lines.expect_tokens("HIERARCHY")?;
    if toks != ["HIERARCHY"] {
        return Err(Error::parse(l, "expected 'HIERARCHY'"));
    }
    let (l, toks) = lines.expect_tokens("ROOT")?;
    let root_name = match toks.as_slice() {
        ["ROOT", name] => name.to_string(),
        _ => return Err(Error::parse(l, "expected 'ROOT <name>'")),
    };
    let mut b = HierarchyBuilder {
        names: Vec::new(),
        parents: Vec::new(),
        offsets: Vec::new(),
        end_sites: Vec::new(),
        channels: Vec::new(),
    };
    parse_joint_body(&mut lines, &mut b, None, root_name, l)?;

    let (l, toks) = lines.expect_tokens("MOTION")?;
    if toks != ["MOTION"] {
        return Err(Error::parse(l, "expected 'MOTION' (only one ROOT is supported)"));
    }
    let (l, toks) = lines.expect_tokens("Frames:")?;
    let frames: usize = match toks.as_slice() {
        ["Frames:", n] => n.parse().map_err(|_| Error::parse(l, format!("bad frame count '{n}'")))?,
        _ => return Err(Error::parse(l, "expected 'Frames: <n>'")),
    };
    let (l, toks) = lines.expect_tokens("Frame Time:")?;
    let frame_time = match toks.as_slice() {
        ["Frame", "Time:", v] => parse_f64(v, l)?,
        _ => return Err(Error::parse(l, "expected 'Frame Time: <seconds>'")),
    };
    if !(frame_time > 0.0) {
        return Err(Error::parse(l, "frame time must be positive"));
    }

    let total_channels: usize = b.channels.iter().map(|c| c.channels.len()).sum();
    let j = b.names.len();
    let mut rotations = Vec::with_capacity(frames);
    let mut root = Vec::with_capacity(frames);
    while let Some((l, toks)) = lines.next_tokens() {
        if toks.len() != total_channels {
            return Err(Error::Structural(format!(
                "line {l}: {} values for {total_channels} channels",
                toks.len()
            )));
        }
        let values: Vec<f64> = toks.iter().map(|t| parse_f64(t, l)).collect::<Result<_>>()?;
        let mut cursor = 0;
        let mut frame = Vec::with_capacity(j);
        let mut root_pos = Vector3::zeros();
        for (ji, ch) in b.channels.iter().enumerate() {
            let mut angles = [0.0; 3];
            let mut ri = 0;
            for c in &ch.channels {
                let v = values[cursor];
                cursor += 1;
                match c {
                    Channel::Position(a) if b.parents[ji].is_none() => root_pos[axis_index(*a)] = v,
                    Channel::Position(_) => {}
                    Channel::Rotation(_) => {
                        angles[ri] = v.to_radians();
                        ri += 1;
                    }
                }
            }
            frame.push(ch.order.to_quaternion(angles));
        }
        rotations.push(frame);
        root.push(root_pos);
    }
    if rotations.len() != frames {
        return Err(Error::Structural(format!(
            "header declares {frames} frames but {} were found",
            rotations.len()
        )));
    }

    let contacts = SkeletonTopology::guess_contact_joints(&b.names, &b.parents, &b.offsets);
    let mut topo = SkeletonTopology::new(b.names, b.parents, b.offsets, contacts)?;
    topo.end_sites = b.end_sites;
    topo.rotation_orders = b.channels.iter().map(|c| c.order).collect();
    SkeletonMotion::new(topo, rotations, root, 1.0 / frame_time)
}

fn axis_index(a: Axis) -> usize {
    match a {
        Axis::X => 0,
        Axis::Y => 1,
        Axis::Z => 2,
    }
}

fn write_joint(out: &mut String, topo: &SkeletonTopology, j: usize, depth: usize) {
    let ind = "  ".repeat(depth);
    let order = topo.rotation_orders.get(j).copied().unwrap_or(EulerOrder::ZXY);
    let rot: Vec<String> = order.0.iter().map(|a| format!("{}rotation", a.letter())).collect();
    let o = topo.offsets[j];
    if topo.parents[j].is_none() {
        let _ = writeln!(out, "{ind}ROOT {}", topo.joint_names[j]);
    } else {
        let _ = writeln!(out, "{ind}JOINT {}", topo.joint_names[j]);
    }
    let _ = writeln!(out, "{ind}{{");
    let _ = writeln!(out, "{ind}  OFFSET {:.6} {:.6} {:.6}", o[0], o[1], o[2]);
    if topo.parents[j].is_none() {
        let _ = writeln!(out, "{ind}  CHANNELS 6 Xposition Yposition Zposition {}", rot.join(" "));
    } else {
        let _ = writeln!(out, "{ind}  CHANNELS 3 {}", rot.join(" "));
    }
    for c in topo.children(j) {
        write_joint(out, topo, c, depth + 1);
    }
    if let Some(Some(e)) = topo.end_sites.get(j) {
        let _ = writeln!(out, "{ind}  End Site");
        let _ = writeln!(out, "{ind}  {{");
        let _ = writeln!(out, "{ind}    OFFSET {:.6} {:.6} {:.6}", e[0], e[1], e[2]);
        let _ = writeln!(out, "{ind}  }}");
    }
    let _ = writeln!(out, "{ind}}}");
}

/// Serialize a motion as BVH. Joints are written depth-first from the root;
/// motion values follow the same order.
pub fn write_bvh(m: &SkeletonMotion) -> String {
    let topo = &m.topology;
    let mut out = String::new();
    out.push_str("HIERARCHY\n");
    write_joint(&mut out, topo, topo.root(), 0);
    let order = depth_first(topo);
    let _ = writeln!(out, "MOTION");
    let _ = writeln!(out, "Frames: {}", m.frames());
    let _ = writeln!(out, "Frame Time: {:.8}", 1.0 / m.frame_rate);
    for (t, frame) in m.local_rotations.iter().enumerate() {
        let mut vals: Vec<String> = Vec::with_capacity(3 + 3 * order.len());
        for &j in &order {
            if topo.parents[j].is_none() {
                let p = m.root_translation[t];
                vals.extend([p.x, p.y, p.z].iter().map(|v| fmt_value(*v)));
            }
            let eo = topo.rotation_orders.get(j).copied().unwrap_or(EulerOrder::ZXY);
            let angles = eo.from_quaternion(&frame[j]);
            vals.extend(angles.iter().map(|a| fmt_value(a.to_degrees())));
        }
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

fn fmt_value(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn depth_first(topo: &SkeletonTopology) -> Vec<usize> {
    fn visit(topo: &SkeletonTopology, j: usize, out: &mut Vec<usize>) {
        out.push(j);
        for c in topo.children(j) {
            visit(topo, c, out);
        }
    }
    let mut out = Vec::new();
    visit(topo, topo.root(), &mut out);
    out
}

/// Rotation channels (degrees) of every joint, in the topology's own orders.
pub fn euler_channels(m: &SkeletonMotion) -> Vec<Vec<[f64; 3]>> {
    m.local_rotations
        .iter()
        .map(|frame| {
            frame
                .iter()
                .enumerate()
                .map(|(j, q)| {
                    let eo = m.topology.rotation_orders.get(j).copied().unwrap_or(EulerOrder::ZXY);
                    eo.from_quaternion(q).map(f64::to_degrees)
                })
                .collect()
        })
        .collect()
}
