//! Portable float maps, little-endian, rows stored bottom to top.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::buffer::Plane;
use crate::error::{Error, Result};

pub fn write_pfm(path: &Path, plane: &Plane) -> Result<()> {
    super::create_parent(path)?;
    let mut buf = Vec::with_capacity(plane.len() * 4 + 32);
    write!(buf, "Pf\n{} {}\n-1.0\n", plane.width, plane.height).expect("vec write");
    for y in (0..plane.height).rev() {
        for x in 0..plane.width {
            buf.write_f32::<LittleEndian>(plane.get(x, y) as f32)
                .expect("vec write");
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Plane> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        Ok(line.trim().to_string())
    };
    let magic = next_line(&mut r)?;
    if magic != "Pf" {
        return Err(Error::format(path, format!("expected single-channel PFM, got {magic:?}")));
    }
    let dims = next_line(&mut r)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (Some(Ok(width)), Some(Ok(height))) = (it.next(), it.next()) else {
        return Err(Error::format(path, format!("bad PFM dimensions {dims:?}")));
    };
    let scale: f64 = next_line(&mut r)?
        .parse()
        .map_err(|_| Error::format(path, "bad PFM scale"))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.len() != width * height * 4 {
        return Err(Error::format(
            path,
            format!("expected {} bytes of data, found {}", width * height * 4, raw.len()),
        ));
    }
    let mut cur = std::io::Cursor::new(raw);
    let mut plane = Plane::new(width, height);
    for y in (0..height).rev() {
        for x in 0..width {
            let v = if scale < 0.0 {
                cur.read_f32::<LittleEndian>()
            } else {
                cur.read_f32::<byteorder::BigEndian>()
            }
            .map_err(|e| Error::io(path, e))?;
            plane.set(x, y, v as f64);
        }
    }
    Ok(plane)
}
