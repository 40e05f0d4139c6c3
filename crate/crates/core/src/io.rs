//! On-disk formats: binary fields and Green tables, CSV atoms and paths,
//! excursion JSON lines.
//!
//! Binary layouts are little-endian. Reals in CSV are written with 17
//! significant digits so that they parse back to the same `f64`.

use std::io::Write;
use std::path::Path;

use serde_json::Value;

use crate::dgff::{FieldSample, SamplingMethod};
use crate::error::{parse_err, Error, Result};
use crate::green::{Domain, GreenTable};
use crate::grid::GridPoint;
use crate::kprocess::{Atom, AtomList};
use crate::path::{PathSample, SpatialState};
use crate::walk::ExcursionRecord;

pub const FIELD_MAGIC: [u8; 4] = *b"DGFF";
pub const GREEN_MAGIC: [u8; 4] = *b"GRNT";
pub const FORMAT_VERSION: u32 = 1;

const FIELD_HEADER: usize = 4 + 4 + 4 + 8;

/// Exact decimal form of a real.
pub fn fmt_real(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.16e}")
}

fn parse_real(s: &str, line: u64, what: &str) -> Result<f64> {
    let t = s.trim();
    match t {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => t
            .parse::<f64>()
            .map_err(|e| parse_err(format!("line {line}"), format!("{what}: {e} in {t:?}"))),
    }
}

fn parse_int(s: &str, line: u64, what: &str) -> Result<i32> {
    s.trim()
        .parse::<i32>()
        .map_err(|e| parse_err(format!("line {line}"), format!("{what}: {e} in {:?}", s.trim())))
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(parse_err(
                format!("byte {}", self.pos),
                format!("truncated {what}: expected {len} bytes, {} available", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| parse_err(format!("byte {}", self.pos), format!("{what}: length overflow")))?;
        let raw = self.take(len, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn magic(&mut self, expect: [u8; 4], what: &str) -> Result<()> {
        let at = self.pos;
        let m = self.take(4, what)?;
        if m != expect {
            return Err(parse_err(
                format!("byte {at}"),
                format!("bad magic {m:?}, expected {:?}", std::str::from_utf8(&expect).unwrap()),
            ));
        }
        let at = self.pos;
        let v = self.u32("format version")?;
        if v != FORMAT_VERSION {
            return Err(parse_err(format!("byte {at}"), format!("unsupported version {v}")));
        }
        Ok(())
    }
}

pub fn encode_field(field: &FieldSample) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIELD_HEADER + 8 * field.values.len());
    out.extend_from_slice(&FIELD_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(field.n as u32).to_le_bytes());
    out.extend_from_slice(&field.seed.to_le_bytes());
    for v in &field.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode one or more concatenated field records.
pub fn decode_fields(bytes: &[u8]) -> Result<Vec<FieldSample>> {
    let mut rd = ByteReader::new(bytes);
    let mut out = Vec::new();
    loop {
        let start = rd.pos;
        rd.magic(FIELD_MAGIC, "field header")?;
        let n = rd.u32("field side")? as usize;
        let seed = rd.u64("field seed")?;
        let values = rd.f64s(n * n, "field values")?;
        let field = FieldSample::from_values(n, values, seed, SamplingMethod::auto(n))
            .map_err(|e| parse_err(format!("byte {start}"), e.to_string()))?;
        out.push(field);
        if rd.remaining() == 0 {
            return Ok(out);
        }
    }
}

/// Decode a file holding exactly one field.
pub fn decode_field(bytes: &[u8]) -> Result<FieldSample> {
    let mut all = decode_fields(bytes)?;
    if all.len() != 1 {
        return Err(parse_err("byte 0", format!("expected one field record, found {}", all.len())));
    }
    Ok(all.remove(0))
}

pub fn write_field_csv<W: Write>(w: &mut W, field: &FieldSample) -> Result<()> {
    writeln!(w, "x,y,h")?;
    for y in 0..field.n {
        for x in 0..field.n {
            writeln!(w, "{x},{y},{}", fmt_real(field.values[y * field.n + x]))?;
        }
    }
    Ok(())
}

fn csv_records(text: &str, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let got = rd
        .headers()
        .map_err(|e| parse_err("line 1", e.to_string()))?
        .clone();
    if got.iter().collect::<Vec<_>>() != header {
        return Err(parse_err("line 1", format!("expected header {}, got {}", header.join(","), got.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(format!("line {line}"), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(format!("line {line}"), format!("expected {} columns, got {}", header.len(), rec.len())));
        }
        out.push((line, rec));
    }
    Ok(out)
}

/// Parse an `x,y,h` field; every vertex of the square must appear once.
pub fn read_field_csv(text: &str) -> Result<FieldSample> {
    let rows = csv_records(text, &["x", "y", "h"])?;
    let n = (rows.len() as f64).sqrt().round() as usize;
    if n == 0 || n * n != rows.len() {
        return Err(parse_err("end of input", format!("{} rows do not form a square field", rows.len())));
    }
    let mut values = vec![f64::NAN; n * n];
    for (line, rec) in &rows {
        let x = parse_int(&rec[0], *line, "x")?;
        let y = parse_int(&rec[1], *line, "y")?;
        if !GridPoint::new(x, y).in_box(n) {
            return Err(parse_err(format!("line {line}"), format!("vertex ({x},{y}) outside a box of side {n}")));
        }
        let slot = &mut values[y as usize * n + x as usize];
        if !slot.is_nan() {
            return Err(parse_err(format!("line {line}"), format!("duplicate vertex ({x},{y})")));
        }
        *slot = parse_real(&rec[2], *line, "h")?;
    }
    FieldSample::from_values(n, values, 0, SamplingMethod::auto(n))
}

fn domain_tag(d: Domain) -> (u32, f64) {
    match d {
        Domain::Box { n } => (0, n as f64),
        Domain::Ball { radius } => (1, radius),
    }
}

/// `GRNT` table: magic, version, domain tag and its size parameter, vertex
/// count, vertices as `i32` pairs, then the row-major values.
pub fn encode_green(table: &GreenTable) -> Vec<u8> {
    let mut out = Vec::new();
    let (tag, size) = domain_tag(table.domain);
    out.extend_from_slice(&GREEN_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&size.to_le_bytes());
    out.extend_from_slice(&(table.vertices.len() as u32).to_le_bytes());
    for p in &table.vertices {
        out.extend_from_slice(&p.x.to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
    }
    for v in &table.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_green(bytes: &[u8]) -> Result<GreenTable> {
    let mut rd = ByteReader::new(bytes);
    rd.magic(GREEN_MAGIC, "table header")?;
    let at = rd.pos;
    let tag = rd.u32("domain tag")?;
    let size = rd.f64("domain size")?;
    let domain = match tag {
        0 if size >= 1.0 && size.fract() == 0.0 => Domain::Box { n: size as usize },
        1 if size >= 1.0 => Domain::Ball { radius: size },
        _ => return Err(parse_err(format!("byte {at}"), format!("bad domain tag {tag} with size {size}"))),
    };
    let count = rd.u32("vertex count")? as usize;
    let mut vertices = Vec::with_capacity(count.min(rd.remaining() / 8));
    for _ in 0..count {
        let x = rd.i32("vertex list")?;
        let y = rd.i32("vertex list")?;
        vertices.push(GridPoint::new(x, y));
    }
    let values = rd.f64s(count * count, "table values")?;
    if rd.remaining() != 0 {
        return Err(parse_err(format!("byte {}", rd.pos), format!("{} trailing bytes", rd.remaining())));
    }
    Ok(GreenTable { domain, vertices, values })
}

pub fn write_green_csv<W: Write>(w: &mut W, table: &GreenTable) -> Result<()> {
    writeln!(w, "x1,y1,x2,y2,value")?;
    let n = table.len();
    for (i, a) in table.vertices.iter().enumerate() {
        for (j, b) in table.vertices.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", a.x, a.y, b.x, b.y, fmt_real(table.values[i * n + j]))?;
        }
    }
    Ok(())
}

pub fn write_atoms_csv<W: Write>(w: &mut W, atoms: &AtomList) -> Result<()> {
    writeln!(w, "xi_x,xi_y,tau")?;
    for a in atoms.atoms() {
        writeln!(w, "{},{},{}", fmt_real(a.location[0]), fmt_real(a.location[1]), fmt_real(a.depth))?;
    }
    Ok(())
}

/// Atom list in descending depth order; the loaded list is treated as exhaustive.
pub fn read_atoms_csv(text: &str) -> Result<AtomList> {
    let rows = csv_records(text, &["xi_x", "xi_y", "tau"])?;
    let mut atoms = Vec::with_capacity(rows.len());
    let mut prev = f64::INFINITY;
    for (line, rec) in &rows {
        let depth = parse_real(&rec[2], *line, "tau")?;
        if depth > prev {
            return Err(parse_err(format!("line {line}"), format!("depth {depth} exceeds the previous {prev}; atoms must be in descending order")));
        }
        prev = depth;
        atoms.push(Atom {
            location: [parse_real(&rec[0], *line, "xi_x")?, parse_real(&rec[1], *line, "xi_y")?],
            depth,
        });
    }
    AtomList::new(atoms, 0.0)
}

/// Path CSV: a `# horizon=` line, the `time,x,y` header, one row per jump.
/// The point at infinity is written as `inf,inf`.
pub fn write_spatial_path_csv<W: Write>(w: &mut W, path: &PathSample<SpatialState>) -> Result<()> {
    writeln!(w, "# horizon={}", fmt_real(path.horizon()))?;
    writeln!(w, "time,x,y")?;
    for &(t, s) in path.jumps() {
        match s {
            SpatialState::Point([x, y]) => writeln!(w, "{},{},{}", fmt_real(t), fmt_real(x), fmt_real(y))?,
            SpatialState::Infinity => writeln!(w, "{},inf,inf", fmt_real(t))?,
        }
    }
    Ok(())
}

pub fn write_grid_path_csv<W: Write>(w: &mut W, path: &PathSample<GridPoint>) -> Result<()> {
    writeln!(w, "# horizon={}", fmt_real(path.horizon()))?;
    writeln!(w, "time,x,y")?;
    for (t, p) in path.jumps() {
        writeln!(w, "{},{},{}", fmt_real(*t), p.x, p.y)?;
    }
    Ok(())
}

fn path_horizon(text: &str) -> Result<f64> {
    let first = text.lines().next().unwrap_or("");
    let v = first
        .strip_prefix("# horizon=")
        .ok_or_else(|| parse_err("line 1", "missing '# horizon=' line"))?;
    parse_real(v, 1, "horizon")
}

fn body_after_first_line(text: &str) -> &str {
    text.split_once('\n').map_or("", |(_, rest)| rest)
}

fn shift_line(e: Error) -> Error {
    match e {
        Error::Parse { location, message } => match location.strip_prefix("line ").and_then(|l| l.parse::<u64>().ok()) {
            Some(l) => parse_err(format!("line {}", l + 1), message),
            None => Error::Parse { location, message },
        },
        other => other,
    }
}

pub fn read_spatial_path_csv(text: &str) -> Result<PathSample<SpatialState>> {
    let horizon = path_horizon(text)?;
    let rows = csv_records(body_after_first_line(text), &["time", "x", "y"]).map_err(shift_line)?;
    let mut jumps = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let l = line + 1;
        let t = parse_real(&rec[0], l, "time")?;
        let x = parse_real(&rec[1], l, "x")?;
        let y = parse_real(&rec[2], l, "y")?;
        let s = if x.is_infinite() && y.is_infinite() {
            SpatialState::Infinity
        } else {
            SpatialState::Point([x, y])
        };
        jumps.push((t, s));
    }
    PathSample::from_jumps(jumps, horizon)
}

pub fn read_grid_path_csv(text: &str) -> Result<PathSample<GridPoint>> {
    let horizon = path_horizon(text)?;
    let rows = csv_records(body_after_first_line(text), &["time", "x", "y"]).map_err(shift_line)?;
    let mut jumps = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let l = line + 1;
        jumps.push((parse_real(&rec[0], l, "time")?, GridPoint::new(parse_int(&rec[1], l, "x")?, parse_int(&rec[2], l, "y")?)));
    }
    PathSample::from_jumps(jumps, horizon)
}

pub fn write_excursions_jsonl<W: Write>(w: &mut W, records: &[ExcursionRecord], offsets: &[GridPoint]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(&r.to_json(offsets)).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<Value>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(format!("line {}", i + 1), e.to_string())))
        .collect()
}

/// `x,y` per line (blank lines and `#` comments ignored).
pub fn parse_points(text: &str) -> Result<Vec<GridPoint>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        out.push(parse_point(l).map_err(|m| parse_err(format!("line {}", i + 1), m))?);
    }
    Ok(out)
}

/// A single `x,y` pair.
pub fn parse_point(s: &str) -> std::result::Result<GridPoint, String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let x = a.trim().parse::<i32>().map_err(|e| format!("x: {e}"))?;
    let y = b.trim().parse::<i32>().map_err(|e| format!("y: {e}"))?;
    Ok(GridPoint::new(x, y))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Write through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgff::sample_field;
    use crate::green::green_ball;

    #[test]
    fn field_binary_layout() {
        let f = FieldSample::from_values(2, vec![1.0, -2.5, 0.0, 3.25], 7, SamplingMethod::Cholesky).unwrap();
        let b = encode_field(&f);
        assert_eq!(b.len(), 20 + 32);
        assert_eq!(&b[..4], b"DGFF");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..20], &7u64.to_le_bytes());
        assert_eq!(&b[20..28], &1.0f64.to_le_bytes());
        let g = decode_field(&b).unwrap();
        assert_eq!(g.values, f.values);
        assert_eq!(g.seed, 7);
    }

    #[test]
    fn concatenated_fields() {
        let a = sample_field(5, 1).unwrap();
        let b = sample_field(5, 2).unwrap();
        let mut bytes = encode_field(&a);
        bytes.extend(encode_field(&b));
        let all = decode_fields(&bytes).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[1].values, b.values);
        assert!(decode_field(&bytes).is_err());
    }

    #[test]
    fn truncation_reports_counts() {
        let f = sample_field(4, 3).unwrap();
        let b = encode_field(&f);
        let err = decode_fields(&b[..b.len() - 5]).unwrap_err().to_string();
        assert!(err.contains("expected 128 bytes, 123 available"), "{err}");
        assert!(err.contains("byte 20"), "{err}");
        let err = decode_fields(&b[..6]).unwrap_err().to_string();
        assert!(err.contains("format version"), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let f = sample_field(3, 3).unwrap();
        let mut b = encode_field(&f);
        b[0] = b'X';
        assert!(decode_fields(&b).unwrap_err().to_string().contains("bad magic"));
        let mut b = encode_field(&f);
        b[4] = 2;
        assert!(decode_fields(&b).unwrap_err().to_string().contains("unsupported version 2"));
    }

    #[test]
    fn field_csv_round_trip() {
        let f = sample_field(6, 9).unwrap();
        let mut out = Vec::new();
        write_field_csv(&mut out, &f).unwrap();
        let g = read_field_csv(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(g.values, f.values);
        assert!(read_field_csv("x,y,h\n0,0,1\n0,1,2\n").is_err());
        let err = read_field_csv("x,y,h\n0,0,1\n0,0,2\n1,0,1\n1,1,1\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn green_round_trip() {
        let t = green_ball(3.0).unwrap();
        let b = encode_green(&t);
        assert_eq!(&b[..4], b"GRNT");
        assert_eq!(decode_green(&b).unwrap(), t);
        assert!(decode_green(&b[..b.len() - 1]).unwrap_err().to_string().contains("truncated table values"));
        let mut csv = Vec::new();
        write_green_csv(&mut csv, &t).unwrap();
        let s = String::from_utf8(csv).unwrap();
        assert!(s.starts_with("x1,y1,x2,y2,value\n"));
        assert_eq!(s.lines().count(), 1 + t.len() * t.len());
    }

    #[test]
    fn atoms_csv() {
        let atoms = AtomList::from_depths(&[3.0, 1.0 / 3.0, 0.1]).unwrap();
        let mut out = Vec::new();
        write_atoms_csv(&mut out, &atoms).unwrap();
        let back = read_atoms_csv(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(back.depths(), atoms.depths());
        let err = read_atoms_csv("xi_x,xi_y,tau\n0.1,0.1,1\n0.2,0.2,2\n").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("descending"), "{err}");
        assert!(read_atoms_csv("a,b,c\n").is_err());
        assert!(read_atoms_csv("xi_x,xi_y,tau\n0.1,x,1\n").unwrap_err().to_string().contains("line 2"));
    }

    #[test]
    fn path_csv_round_trips() {
        let p = PathSample::from_jumps(
            vec![(0.0, SpatialState::Point([0.1, 0.7])), (0.3, SpatialState::Infinity), (1.0 / 3.0, SpatialState::Point([0.25, 1.0]))],
            2.0,
        )
        .unwrap();
        let mut out = Vec::new();
        write_spatial_path_csv(&mut out, &p).unwrap();
        assert_eq!(read_spatial_path_csv(std::str::from_utf8(&out).unwrap()).unwrap(), p);

        let g = PathSample::from_jumps(vec![(0.0, GridPoint::new(1, 2)), (0.1 + 0.2, GridPoint::new(2, 2))], 1.5).unwrap();
        let mut out = Vec::new();
        write_grid_path_csv(&mut out, &g).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().nth(1) == Some("time,x,y"));
        assert_eq!(read_grid_path_csv(&text).unwrap(), g);
        let err = read_grid_path_csv("# horizon=1\ntime,x,y\n0,0,0\n0.5,1,q\n").unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn points() {
        let p = parse_points("# centers\n1,2\n\n 3 , -4\n").unwrap();
        assert_eq!(p, vec![GridPoint::new(1, 2), GridPoint::new(3, -4)]);
        assert!(parse_points("1;2").unwrap_err().to_string().contains("line 1"));
    }
}
