//! Event file formats.
//!
//! Canonical binary layout (all little-endian):
//!
//! ```text
//! "EVT1" | u16 width | u16 height | u32 label (0xFFFFFFFF = none) | u64 count
//! count * ( u16 x | u16 y | u64 t_us | i8 polarity )
//! ```
//!
//! The CSV layout is a `x,y,t,p` header followed by one event per line;
//! geometry and label are not stored and must be supplied by the caller.

use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Event, EventSample, Polarity, SensorGeometry};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EVT1";
const UNLABELED: u32 = u32::MAX;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 8;
const RECORD_LEN: usize = 2 + 2 + 8 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventFormat {
    Binary,
    Csv {
        geometry: SensorGeometry,
        label: Option<u32>,
    },
}

/// Reads a sample; the sample id is the file stem.
pub fn load_events(path: impl AsRef<Path>, format: EventFormat) -> Result<EventSample> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match format {
        EventFormat::Binary => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes, id)
        }
        EventFormat::Csv { geometry, label } => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let events = read_csv(file)?;
            EventSample::new(events, geometry, label, id)
        }
    }
}

pub fn save_events(sample: &EventSample, path: impl AsRef<Path>, format: EventFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        EventFormat::Binary => write_binary(sample, &mut w),
        EventFormat::Csv { .. } => write_csv(sample, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) fn encode_binary(sample: &EventSample) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * sample.len());
    write_binary(sample, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn write_binary<W: Write>(sample: &EventSample, w: &mut W) -> std::io::Result<()> {
    let g = sample.geometry();
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(g.width)?;
    w.write_u16::<LittleEndian>(g.height)?;
    w.write_u32::<LittleEndian>(sample.label().unwrap_or(UNLABELED))?;
    w.write_u64::<LittleEndian>(sample.len() as u64)?;
    for e in sample.events() {
        w.write_u16::<LittleEndian>(e.x)?;
        w.write_u16::<LittleEndian>(e.y)?;
        w.write_u64::<LittleEndian>(e.t)?;
        w.write_i8(e.p.sign())?;
    }
    Ok(())
}

pub(crate) fn decode_binary(bytes: &[u8], id: String) -> Result<EventSample> {
    let mut cur = Cursor::new(bytes);
    let truncated = |cur: &Cursor<&[u8]>, what: &str| Error::parse_at_byte(cur.position(), format!("truncated file while reading {what}"));

    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| truncated(&cur, "magic"))?;
    if &magic != MAGIC {
        return Err(Error::parse_at_byte(0, format!("bad magic {magic:?}, expected \"EVT1\"")));
    }
    let width = cur.read_u16::<LittleEndian>().map_err(|_| truncated(&cur, "width"))?;
    let height = cur.read_u16::<LittleEndian>().map_err(|_| truncated(&cur, "height"))?;
    let label = cur.read_u32::<LittleEndian>().map_err(|_| truncated(&cur, "label"))?;
    let count = cur.read_u64::<LittleEndian>().map_err(|_| truncated(&cur, "event count"))?;
    let geometry = SensorGeometry::new(width, height)?;

    let remaining = (bytes.len() - HEADER_LEN) as u64;
    let needed = count.checked_mul(RECORD_LEN as u64);
    if needed.is_none_or(|n| n > remaining) {
        return Err(Error::parse_at_byte(
            bytes.len() as u64,
            format!("header declares {count} events but only {remaining} payload bytes follow"),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    for i in 0..count {
        let start = cur.position();
        let x = cur.read_u16::<LittleEndian>().map_err(|_| truncated(&cur, "event"))?;
        let y = cur.read_u16::<LittleEndian>().map_err(|_| truncated(&cur, "event"))?;
        let t = cur.read_u64::<LittleEndian>().map_err(|_| truncated(&cur, "event"))?;
        let p = cur.read_i8().map_err(|_| truncated(&cur, "event"))?;
        let p = Polarity::from_sign(p as i64)
            .ok_or_else(|| Error::parse_at_byte(start + 12, format!("event {i}: polarity {p} is not -1 or +1")))?;
        events.push(Event { x, y, t, p });
    }
    if cur.position() as usize != bytes.len() {
        return Err(Error::parse_at_byte(cur.position(), "trailing bytes after last event"));
    }
    let label = (label != UNLABELED).then_some(label);
    EventSample::new(events, geometry, label, id)
}

fn write_csv<W: Write>(sample: &EventSample, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "x,y,t,p")?;
    for e in sample.events() {
        writeln!(w, "{},{},{},{}", e.x, e.y, e.t, e.p.sign())?;
    }
    Ok(())
}

fn read_csv<R: Read>(reader: R) -> Result<Vec<Event>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse_at_line(1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != ["x", "y", "t", "p"] {
        return Err(Error::parse_at_line(1, format!("expected header x,y,t,p, found {}", cols.join(","))));
    }
    let mut events = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse_at_line(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::parse_at_line(line, format!("expected 4 fields, found {}", record.len())));
        }
        let field = |i: usize, name: &str| -> Result<i64> {
            record[i]
                .parse::<i64>()
                .map_err(|e| Error::parse_at_line(line, format!("field {name}={:?}: {e}", &record[i])))
        };
        let (x, y, t, p) = (field(0, "x")?, field(1, "y")?, field(2, "t")?, field(3, "p")?);
        let x = u16::try_from(x).map_err(|_| Error::parse_at_line(line, format!("x={x} out of range")))?;
        let y = u16::try_from(y).map_err(|_| Error::parse_at_line(line, format!("y={y} out of range")))?;
        let t = u64::try_from(t).map_err(|_| Error::parse_at_line(line, format!("t={t} is negative")))?;
        let p = Polarity::from_sign(p).ok_or_else(|| Error::parse_at_line(line, format!("polarity {p} is not -1 or +1")))?;
        events.push(Event { x, y, t, p });
    }
    Ok(events)
}
