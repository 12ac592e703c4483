//! Minimal PLY reader/writer.
//!
//! Reads `ascii`, `binary_little_endian` and `binary_big_endian` files with
//! arbitrary scalar and list properties. Writes `binary_little_endian` only.
//! Scalar values are surfaced as `f64`, which is exact for every PLY scalar
//! type except 64-bit integers (not part of the format).

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(Error::format("ply", format!("unknown type {other}"))),
        })
    }

    fn name(self) -> &'static str {
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

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:literal) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                f64::from(if little {
                    <$t>::from_le_bytes(arr)
                } else {
                    <$t>::from_be_bytes(arr)
                })
            }};
        }
        match self {
            Self::I8 => f64::from(b[0] as i8),
            Self::U8 => f64::from(b[0]),
            Self::I16 => num!(i16, 2),
            Self::U16 => num!(u16, 2),
            Self::I32 => num!(i32, 4),
            Self::U32 => num!(u32, 4),
            Self::F32 => num!(f32, 4),
            Self::F64 => num!(f64, 8),
        }
    }

    /// Little-endian encoding of `v` (integers are rounded and saturated).
    pub fn encode(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Self::I8 => out.push(v.round() as i8 as u8),
            Self::U8 => out.push(v.round() as u8),
            Self::I16 => out.extend((v.round() as i16).to_le_bytes()),
            Self::U16 => out.extend((v.round() as u16).to_le_bytes()),
            Self::I32 => out.extend((v.round() as i32).to_le_bytes()),
            Self::U32 => out.extend((v.round() as u32).to_le_bytes()),
            Self::F32 => out.extend((v as f32).to_le_bytes()),
            Self::F64 => out.extend(v.to_le_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyDef {
    pub name: String,
    pub kind: PropertyKind,
}

impl PropertyDef {
    pub fn scalar(name: &str, ty: ScalarType) -> Self {
        Self {
            name: name.to_string(),
            kind: PropertyKind::Scalar(ty),
        }
    }

    pub fn list(name: &str, count: ScalarType, item: ScalarType) -> Self {
        Self {
            name: name.to_string(),
            kind: PropertyKind::List { count, item },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementDef {
    pub name: String,
    pub count: usize,
    pub properties: Vec<PropertyDef>,
}

/// Parsed element: one `Vec<f64>` per scalar property, and one flattened
/// list per list property (with per-row offsets).
#[derive(Debug, Clone, Default)]
pub struct ElementData {
    pub scalars: Vec<(String, Vec<f64>)>,
    pub lists: Vec<(String, Vec<Vec<f64>>)>,
}

impl ElementData {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn list(&self, name: &str) -> Option<&[Vec<f64>]> {
        self.lists
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

#[derive(Debug, Clone, Default)]
pub struct PlyData {
    pub elements: Vec<(ElementDef, ElementData)>,
}

impl PlyData {
    pub fn element(&self, name: &str) -> Option<&ElementData> {
        self.elements
            .iter()
            .find(|(d, _)| d.name == name)
            .map(|(_, e)| e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Binary { little: bool },
}

pub fn read<R: BufRead>(mut input: R) -> Result<PlyData> {
    let mut line = String::new();
    let mut next_line = |input: &mut R| -> Result<String> {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(Error::format("ply", "unexpected end of header"));
        }
        Ok(line.trim().to_string())
    };

    if next_line(&mut input)? != "ply" {
        return Err(Error::format("ply", "missing magic"));
    }
    let mut encoding = None;
    let mut defs: Vec<ElementDef> = Vec::new();
    loop {
        let l = next_line(&mut input)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Binary { little: true },
                    "binary_big_endian" => Encoding::Binary { little: false },
                    other => return Err(Error::format("ply", format!("unknown format {other}"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => defs.push(ElementDef {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::format("ply", format!("bad element count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => defs
                .last_mut()
                .ok_or_else(|| Error::format("ply", "property before element"))?
                .properties
                .push(PropertyDef::list(
                    name,
                    ScalarType::parse(count)?,
                    ScalarType::parse(item)?,
                )),
            ["property", ty, name] => defs
                .last_mut()
                .ok_or_else(|| Error::format("ply", "property before element"))?
                .properties
                .push(PropertyDef::scalar(name, ScalarType::parse(ty)?)),
            _ => return Err(Error::format("ply", format!("unrecognized header line '{l}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::format("ply", "missing format line"))?;

    let mut data = PlyData::default();
    let mut ascii_tokens: Option<Vec<String>> = None;
    let mut ascii_pos = 0usize;
    if encoding == Encoding::Ascii {
        let mut body = String::new();
        input.read_to_string(&mut body)?;
        ascii_tokens = Some(body.split_whitespace().map(str::to_string).collect());
    }

    for def in defs {
        let mut el = ElementData {
            scalars: Vec::new(),
            lists: Vec::new(),
        };
        for p in &def.properties {
            match p.kind {
                PropertyKind::Scalar(_) => el
                    .scalars
                    .push((p.name.clone(), Vec::with_capacity(def.count))),
                PropertyKind::List { .. } => el
                    .lists
                    .push((p.name.clone(), Vec::with_capacity(def.count))),
            }
        }
        for _ in 0..def.count {
            let (mut si, mut li) = (0, 0);
            for p in &def.properties {
                let mut read_value = |ty: ScalarType| -> Result<f64> {
                    match encoding {
                        Encoding::Ascii => {
                            let toks = ascii_tokens.as_ref().unwrap();
                            let t = toks
                                .get(ascii_pos)
                                .ok_or_else(|| Error::format("ply", "truncated ascii body"))?;
                            ascii_pos += 1;
                            t.parse::<f64>()
                                .map_err(|_| Error::format("ply", format!("bad number '{t}'")))
                        }
                        Encoding::Binary { little } => {
                            let mut buf = [0u8; 8];
                            input
                                .read_exact(&mut buf[..ty.size()])
                                .map_err(|_| Error::format("ply", "truncated binary body"))?;
                            Ok(ty.decode(&buf, little))
                        }
                    }
                };
                match p.kind {
                    PropertyKind::Scalar(ty) => {
                        let v = read_value(ty)?;
                        el.scalars[si].1.push(v);
                        si += 1;
                    }
                    PropertyKind::List { count, item } => {
                        let n = read_value(count)?;
                        if !(n >= 0.0) {
                            return Err(Error::format("ply", "negative list length"));
                        }
                        let items = (0..n as usize)
                            .map(|_| read_value(item))
                            .collect::<Result<Vec<_>>>()?;
                        el.lists[li].1.push(items);
                        li += 1;
                    }
                }
            }
        }
        data.elements.push((def, el));
    }
    Ok(data)
}

/// Writes a `binary_little_endian` header for the given elements.
pub fn write_header<W: Write>(out: &mut W, comments: &[&str], elements: &[ElementDef]) -> Result<()> {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in comments {
        h.push_str(&format!("comment {c}\n"));
    }
    for e in elements {
        h.push_str(&format!("element {} {}\n", e.name, e.count));
        for p in &e.properties {
            match p.kind {
                PropertyKind::Scalar(t) => h.push_str(&format!("property {} {}\n", t.name(), p.name)),
                PropertyKind::List { count, item } => h.push_str(&format!(
                    "property list {} {} {}\n",
                    count.name(),
                    item.name(),
                    p.name
                )),
            }
        }
    }
    h.push_str("end_header\n");
    out.write_all(h.as_bytes())?;
    Ok(())
}
