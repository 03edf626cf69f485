use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OrientedBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotaObject {
    pub bbox: OrientedBox,
    pub class: String,
    pub difficult: bool,
}

/// A line that could not be parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotaReject {
    /// 1-based line number.
    pub line: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DotaParse {
    pub objects: Vec<DotaObject>,
    pub rejects: Vec<DotaReject>,
}

const HEADER_PREFIXES: [&str; 2] = ["imagesource:", "gsd:"];

/// Rectangle fitted to a quadrilateral: center at the vertex mean, sides
/// from the mean lengths of opposite edges, angle along the longer pair.
fn quad_to_obb(q: &[[f64; 2]; 4]) -> std::result::Result<OrientedBox, String> {
    let edge = |i: usize| {
        let (a, b) = (q[i], q[(i + 1) % 4]);
        [b[0] - a[0], b[1] - a[1]]
    };
    let len = |e: [f64; 2]| e[0].hypot(e[1]);
    let (e0, e1, e2, e3) = (edge(0), edge(1), edge(2), edge(3));
    let a = 0.5 * (len(e0) + len(e2));
    let b = 0.5 * (len(e1) + len(e3));
    if !(a > 0.0 && b > 0.0) {
        return Err("degenerate quadrilateral".into());
    }
    let cx = q.iter().map(|p| p[0]).sum::<f64>() / 4.0;
    let cy = q.iter().map(|p| p[1]).sum::<f64>() / 4.0;
    // opposite edges run in opposite directions
    let (w, h, dir) = if a >= b {
        (a, b, [e0[0] - e2[0], e0[1] - e2[1]])
    } else {
        (b, a, [e1[0] - e3[0], e1[1] - e3[1]])
    };
    Ok(OrientedBox::new(cx, cy, w, h, dir[1].atan2(dir[0])))
}

fn parse_line(line: &str) -> std::result::Result<DotaObject, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 9 || tokens.len() > 10 {
        return Err(format!("expected 9 or 10 fields, found {}", tokens.len()));
    }
    let mut coords = [0.0; 8];
    for (k, t) in tokens[..8].iter().enumerate() {
        coords[k] = t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("field {} `{t}` is not a number", k + 1))?;
    }
    let class = tokens[8].to_string();
    if class.parse::<f64>().is_ok() {
        return Err(format!("category `{class}` is numeric"));
    }
    let difficult = match tokens.get(9) {
        None | Some(&"0") => false,
        Some(&"1") => true,
        Some(other) => return Err(format!("difficult flag `{other}` is not 0 or 1")),
    };
    let quad = [
        [coords[0], coords[1]],
        [coords[2], coords[3]],
        [coords[4], coords[5]],
        [coords[6], coords[7]],
    ];
    Ok(DotaObject {
        bbox: quad_to_obb(&quad)?,
        class,
        difficult,
    })
}

/// Parses DOTA annotation text. Header lines are skipped; malformed lines
/// are collected in `rejects`. A file without any non-blank line is an error.
pub fn parse_dota_annotations(text: &str) -> Result<DotaParse> {
    if text.trim().is_empty() {
        return Err(Error::EmptyFile);
    }
    let mut out = DotaParse::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || HEADER_PREFIXES.iter().any(|p| line.starts_with(p)) {
            continue;
        }
        match parse_line(line) {
            Ok(obj) => out.objects.push(obj),
            Err(reason) => out.rejects.push(DotaReject {
                line: n + 1,
                text: raw.to_string(),
                reason,
            }),
        }
    }
    Ok(out)
}

/// One annotation line: the four corners, category and difficulty flag.
pub fn format_dota_line(b: &OrientedBox, class: &str, difficult: bool) -> String {
    let mut s = String::new();
    for c in b.corners() {
        let _ = write!(s, "{} {} ", c[0], c[1]);
    }
    let _ = write!(s, "{class} {}", u8::from(difficult));
    s
}

pub fn format_dota(objects: &[DotaObject]) -> String {
    objects
        .iter()
        .map(|o| format_dota_line(&o.bbox, &o.class, o.difficult) + "\n")
        .collect()
}
