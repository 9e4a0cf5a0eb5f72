//! Versioned binary model files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "TRIBEFLW" | version u32 | flags u32 (bit 0: timestamped)
//! k, b, n_users, n_items: u64
//! alpha_mass, beta: f64
//! users, items: count u64, then per name a u64 byte length and UTF-8 bytes
//! pi (n_users * k), phi (n_items * k), env_weights (k), phi_floor (k): f64
//! user_windows (n_users): u32
//! per environment: gap count u64, then the sorted gaps as f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::Dictionary;
use crate::error::{Error, Result};
use crate::residence::EccdfTable;
use crate::state::{Hyperparams, Model};

pub const MAGIC: &[u8; 8] = b"TRIBEFLW";
pub const VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &Model, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&u32::from(model.timestamped).to_le_bytes())?;
    for n in [model.k, model.b, model.n_users, model.n_items] {
        put_u64(&mut out, n as u64)?;
    }
    put_f64s(&mut out, &[model.hyper.alpha_mass, model.hyper.beta])?;
    for dict in [&model.users, &model.items] {
        put_u64(&mut out, dict.len() as u64)?;
        for name in dict.iter() {
            put_u64(&mut out, name.len() as u64)?;
            out.write_all(name.as_bytes())?;
        }
    }
    put_f64s(&mut out, &model.pi)?;
    put_f64s(&mut out, &model.phi)?;
    put_f64s(&mut out, &model.env_weights)?;
    put_f64s(&mut out, &model.phi_floor)?;
    for &w in &model.user_windows {
        out.write_all(&w.to_le_bytes())?;
    }
    for t in model.eccdf.tables() {
        put_u64(&mut out, t.len() as u64)?;
        put_f64s(&mut out, t)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(input: R) -> Result<Model> {
    let mut r = Reader { inner: BufReader::new(input) };
    let mut magic = [0u8; 8];
    r.fill(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let flags = r.u32()?;
    if flags > 1 {
        return Err(Error::Format(format!("unknown flags {flags:#x}")));
    }
    let k = r.len()?;
    let b = r.len()?;
    let n_users = r.len()?;
    let n_items = r.len()?;
    if k == 0 {
        return Err(Error::Format("model has no environments".into()));
    }
    let hyper = Hyperparams { alpha_mass: r.f64()?, beta: r.f64()? };
    let users = r.dictionary(n_users)?;
    let items = r.dictionary(n_items)?;
    let pi = r.f64s(checked_mul(n_users, k)?)?;
    let phi = r.f64s(checked_mul(n_items, k)?)?;
    let env_weights = r.f64s(k)?;
    let phi_floor = r.f64s(k)?;
    let mut user_windows = Vec::with_capacity(n_users.min(1 << 20));
    for _ in 0..n_users {
        user_windows.push(r.u32()?);
    }
    let mut tables = Vec::with_capacity(k);
    for _ in 0..k {
        let n = r.len()?;
        let t = r.f64s(n)?;
        if t.windows(2).any(|p| p[0] > p[1]) {
            return Err(Error::Format("gap table not sorted".into()));
        }
        tables.push(t);
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes".into()));
    }
    Ok(Model {
        k,
        b,
        n_users,
        n_items,
        timestamped: flags & 1 == 1,
        hyper,
        users,
        items,
        pi,
        phi,
        env_weights,
        phi_floor,
        user_windows,
        eccdf: EccdfTable::from_tables(tables),
    })
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    write_model(model, File::create(path)?)
}

pub fn load(path: &Path) -> Result<Model> {
    read_model(File::open(path)?)
}

/// Readable dump for debugging.
pub fn to_json(model: &Model) -> Result<String> {
    serde_json::to_string_pretty(model).map_err(|e| Error::Format(e.to_string()))
}

fn checked_mul(a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b).ok_or_else(|| Error::Format("matrix size overflows".into()))
}

fn put_u64<W: Write>(out: &mut W, v: u64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s<W: Write>(out: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated".into()),
            _ => Error::Io(e),
        })
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length out of range".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        // grow as data arrives so a corrupt length cannot allocate unbounded memory
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn dictionary(&mut self, expected: usize) -> Result<Dictionary> {
        let n = self.len()?;
        if n != expected {
            return Err(Error::Format(format!("dictionary has {n} names, expected {expected}")));
        }
        let mut names = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = self.len()?;
            if len > 1 << 20 {
                return Err(Error::Format("name too long".into()));
            }
            let mut buf = vec![0u8; len];
            self.fill(&mut buf)?;
            names.push(String::from_utf8(buf).map_err(|_| Error::Format("name is not UTF-8".into()))?);
        }
        let dict = Dictionary::from(names);
        if dict.len() != n {
            return Err(Error::Format("duplicate names in dictionary".into()));
        }
        Ok(dict)
    }
}
