//! Minimal PLY support: binary little-endian and ASCII bodies, scalar and list
//! properties of any standard type.

use std::io::{BufRead, Read};
use std::path::Path;

use crate::error::{format_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    pub fn encode(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Self::I8 => out.push(v as i8 as u8),
            Self::U8 => out.push(v as u8),
            Self::I16 => out.extend((v as i16).to_le_bytes()),
            Self::U16 => out.extend((v as u16).to_le_bytes()),
            Self::I32 => out.extend((v as i32).to_le_bytes()),
            Self::U32 => out.extend((v as u32).to_le_bytes()),
            Self::F32 => out.extend((v as f32).to_le_bytes()),
            Self::F64 => out.extend(v.to_le_bytes()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

impl Property {
    pub fn name(&self) -> &str {
        match self {
            Self::Scalar(n, _) | Self::List(n, _, _) => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub name: String,
    pub properties: Vec<Property>,
    pub rows: Vec<Vec<Value>>,
}

impl Element {
    pub fn new(name: &str, properties: Vec<Property>) -> Self {
        Self {
            name: name.into(),
            properties,
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name() == name)
    }

    pub fn scalar(row: &[Value], i: usize) -> f64 {
        match &row[i] {
            Value::Scalar(v) => *v,
            Value::List(l) => l.first().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyFile {
    pub comments: Vec<String>,
    pub elements: Vec<Element>,
}

impl PlyFile {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }
}

/// Serialize as a binary little-endian PLY.
pub fn write(path: &Path, file: &PlyFile) -> Result<()> {
    let elements = &file.elements;
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    for c in &file.comments {
        out.extend(format!("comment {c}\n").bytes());
    }
    for e in elements {
        out.extend(format!("element {} {}\n", e.name, e.rows.len()).bytes());
        for p in &e.properties {
            let line = match p {
                Property::Scalar(n, t) => format!("property {} {n}\n", t.name()),
                Property::List(n, c, t) => format!("property list {} {} {n}\n", c.name(), t.name()),
            };
            out.extend(line.bytes());
        }
    }
    out.extend_from_slice(b"end_header\n");
    for e in elements {
        for row in &e.rows {
            for (p, v) in e.properties.iter().zip(row) {
                match (p, v) {
                    (Property::Scalar(_, t), Value::Scalar(x)) => t.encode(*x, &mut out),
                    (Property::List(_, c, t), Value::List(xs)) => {
                        c.encode(xs.len() as f64, &mut out);
                        for x in xs {
                            t.encode(*x, &mut out);
                        }
                    }
                    _ => return Err(format_err(path, "row does not match property kinds")),
                }
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a PLY file (binary little-endian or ASCII).
pub fn read(path: &Path) -> Result<PlyFile> {
    let bytes = std::fs::read(path)?;
    let bad = |m: &str| format_err(path, m.to_string());
    let mut cur = std::io::Cursor::new(&bytes[..]);
    let mut line = String::new();
    let mut next_line = |cur: &mut std::io::Cursor<&[u8]>| -> Result<String> {
        line.clear();
        if cur.read_line(&mut line)? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut cur)? != "ply" {
        return Err(bad("missing ply magic"));
    }
    let mut ascii = false;
    let mut comments = Vec::new();
    let mut elements: Vec<(Element, usize)> = Vec::new();
    loop {
        let l = next_line(&mut cur)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => ascii = false,
            ["format", "ascii", _] => ascii = true,
            ["format", ..] => return Err(bad("unsupported PLY format")),
            ["comment", ..] => comments.push(l.trim_start()["comment".len()..].trim().to_string()),
            ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let n = count.parse().map_err(|_| bad("bad element count"))?;
                elements.push((Element::new(name, Vec::new()), n));
            }
            ["property", "list", c, t, name] => {
                let (c, t) = (Scalar::parse(c), Scalar::parse(t));
                let e = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                e.0.properties
                    .push(Property::List(name.to_string(), c.ok_or_else(|| bad("bad type"))?, t.ok_or_else(|| bad("bad type"))?));
            }
            ["property", t, name] => {
                let t = Scalar::parse(t).ok_or_else(|| bad("bad property type"))?;
                let e = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                e.0.properties.push(Property::Scalar(name.to_string(), t));
            }
            ["end_header"] => break,
            _ => return Err(bad(&format!("unrecognized header line {l:?}"))),
        }
    }
    let mut body = Vec::new();
    cur.read_to_end(&mut body)?;
    let mut out = Vec::with_capacity(elements.len());
    if ascii {
        let text = String::from_utf8(body).map_err(|_| bad("ASCII body is not UTF-8"))?;
        let mut it = text.split_whitespace().map(|t| t.parse::<f64>());
        let mut num = || -> Result<f64> { it.next().ok_or_else(|| bad("truncated body"))?.map_err(|_| bad("bad number")) };
        for (mut e, n) in elements {
            for _ in 0..n {
                let mut row = Vec::with_capacity(e.properties.len());
                for p in &e.properties {
                    row.push(match p {
                        Property::Scalar(..) => Value::Scalar(num()?),
                        Property::List(..) => {
                            let k = num()? as usize;
                            Value::List((0..k).map(|_| num()).collect::<Result<_>>()?)
                        }
                    });
                }
                e.rows.push(row);
            }
            out.push(e);
        }
    } else {
        let mut pos = 0usize;
        let mut take = |size: usize| -> Result<&[u8]> {
            let s = body.get(pos..pos + size).ok_or_else(|| bad("truncated body"))?;
            pos += size;
            Ok(s)
        };
        for (mut e, n) in elements {
            e.rows.reserve(n);
            for _ in 0..n {
                let mut row = Vec::with_capacity(e.properties.len());
                for p in &e.properties {
                    row.push(match p {
                        Property::Scalar(_, t) => Value::Scalar(t.decode(take(t.size())?)),
                        Property::List(_, c, t) => {
                            let k = c.decode(take(c.size())?) as usize;
                            let mut xs = Vec::with_capacity(k);
                            for _ in 0..k {
                                xs.push(t.decode(take(t.size())?));
                            }
                            Value::List(xs)
                        }
                    });
                }
                e.rows.push(row);
            }
            out.push(e);
        }
    }
    Ok(PlyFile { comments, elements: out })
}
