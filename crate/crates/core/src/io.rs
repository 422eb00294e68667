//! Binary containers for coefficient grids ("LSCG") and field slabs ("LSSB"),
//! their JSON sidecars, and the replicate-variance CSV.
//!
//! Container layout, all little-endian: 4 magic bytes, `u16` version, two `u32`
//! extents, `q1` and `q2` as `f64`, the family tag as `u8`, a `u32` count
//! followed by that many `f64` parameters, then the row-major `f64` values.
//! Grids store the radii `(R1, R2)` as extents, slabs the window `(T1, T2)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coeff_families::{CoefficientGrid, Decay, Family};
use crate::error::{Error, Result};
use crate::lattice_sim::{CoeffMeta, FieldSlab, InnovationFamily, VarianceEstimate};

pub const GRID_MAGIC: [u8; 4] = *b"LSCG";
pub const SLAB_MAGIC: [u8; 4] = *b"LSSB";
pub const FORMAT_VERSION: u16 = 1;

/// Container contents independent of the kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub version: u16,
    pub extents: (usize, usize),
    pub q1: f64,
    pub q2: f64,
    pub family: Family,
    pub params: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn write_container<W: Write>(c: &Container, mut w: W) -> Result<()> {
    let ext = |x: usize| -> Result<u32> {
        u32::try_from(x).map_err(|_| Error::Format(format!("extent {x} does not fit in u32")))
    };
    w.write_all(&c.magic)?;
    w.write_all(&c.version.to_le_bytes())?;
    w.write_all(&ext(c.extents.0)?.to_le_bytes())?;
    w.write_all(&ext(c.extents.1)?.to_le_bytes())?;
    w.write_all(&c.q1.to_le_bytes())?;
    w.write_all(&c.q2.to_le_bytes())?;
    w.write_all(&[c.family.tag()])?;
    w.write_all(&ext(c.params.len())?.to_le_bytes())?;
    for p in &c.params {
        w.write_all(&p.to_le_bytes())?;
    }
    for v in &c.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated container".into()),
        _ => Error::Io(e),
    })?;
    Ok(b)
}

fn f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| take::<8, R>(r).map(f64::from_le_bytes))
        .collect()
}

/// Read a container and check its magic; `values_len` maps the extents to the value count.
pub fn read_container<R: Read>(
    mut r: R,
    magic: [u8; 4],
    values_len: impl Fn(usize, usize) -> Option<usize>,
) -> Result<Container> {
    let m = take::<4, R>(&mut r)?;
    if m != magic {
        return Err(Error::Format(format!(
            "magic {:?} does not match {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = u16::from_le_bytes(take::<2, R>(&mut r)?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version}"
        )));
    }
    let e1 = u32::from_le_bytes(take::<4, R>(&mut r)?) as usize;
    let e2 = u32::from_le_bytes(take::<4, R>(&mut r)?) as usize;
    let q1 = f64::from_le_bytes(take::<8, R>(&mut r)?);
    let q2 = f64::from_le_bytes(take::<8, R>(&mut r)?);
    let family =
        Family::from_tag(take::<1, R>(&mut r)?[0]).map_err(|e| Error::Format(e.to_string()))?;
    let np = u32::from_le_bytes(take::<4, R>(&mut r)?) as usize;
    let params = f64s(&mut r, np)?;
    let n =
        values_len(e1, e2).ok_or_else(|| Error::Format(format!("extents {e1} x {e2} overflow")))?;
    let values = f64s(&mut r, n)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after values".into()));
    }
    Ok(Container {
        magic: m,
        version,
        extents: (e1, e2),
        q1,
        q2,
        family,
        params,
        values,
    })
}

fn decay_of(family: Family) -> Decay {
    match family {
        Family::PairDifference => Decay::Compact,
        Family::Separable => Decay::Product,
        _ => Decay::Power,
    }
}

pub fn write_grid<W: Write>(g: &CoefficientGrid, w: W) -> Result<()> {
    let c = Container {
        magic: GRID_MAGIC,
        version: FORMAT_VERSION,
        extents: g.radii(),
        q1: g.q1,
        q2: g.q2,
        family: g.family,
        params: g.params.clone(),
        values: g.values().to_vec(),
    };
    write_container(&c, w)
}

pub fn read_grid<R: Read>(r: R) -> Result<CoefficientGrid> {
    let c = read_container(r, GRID_MAGIC, |a, b| {
        a.checked_mul(2)?
            .checked_add(1)?
            .checked_mul(b.checked_mul(2)?.checked_add(1)?)
    })?;
    CoefficientGrid::new(
        c.family,
        decay_of(c.family),
        c.q1,
        c.q2,
        c.params,
        c.extents.0,
        c.extents.1,
        c.values,
    )
    .map_err(|e| Error::Format(e.to_string()))
}

/// JSON form of a real that may be infinite (JSON has no literal for it).
pub fn json_real(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x.is_nan() {
        Value::from("nan")
    } else if x > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub format: String,
    pub version: u16,
    pub family: Family,
    pub decay: Decay,
    pub radii: (usize, usize),
    pub q1: Value,
    pub q2: Value,
    pub params: Vec<f64>,
    pub zero_sum_residual: f64,
    pub sum_sq: f64,
}

pub fn grid_sidecar(g: &CoefficientGrid) -> GridSidecar {
    GridSidecar {
        format: "LSCG".into(),
        version: FORMAT_VERSION,
        family: g.family,
        decay: g.decay,
        radii: g.radii(),
        q1: json_real(g.q1),
        q2: json_real(g.q2),
        params: g.params.clone(),
        zero_sum_residual: g.zero_sum_residual,
        sum_sq: g.sum_sq(),
    }
}

/// `<path>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Write the binary grid and its sidecar; returns both paths.
pub fn save_grid(path: &Path, g: &CoefficientGrid) -> Result<(PathBuf, PathBuf)> {
    write_grid(g, BufWriter::new(File::create(path)?))?;
    let side = sidecar_path(path);
    write_json(&side, &grid_sidecar(g))?;
    Ok((path.to_path_buf(), side))
}

pub fn load_grid(path: &Path) -> Result<CoefficientGrid> {
    read_grid(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabSidecar {
    pub format: String,
    pub version: u16,
    pub window: (usize, usize),
    pub coeff_radii: (usize, usize),
    pub coeff_decay: Decay,
    pub family: Family,
    pub q1: Value,
    pub q2: Value,
    pub params: Vec<f64>,
    pub base_seed: u64,
    pub replicate: u64,
    pub innovation: InnovationFamily,
}

pub fn write_slab<W: Write>(s: &FieldSlab, w: W) -> Result<()> {
    let c = Container {
        magic: SLAB_MAGIC,
        version: FORMAT_VERSION,
        extents: (s.t1, s.t2),
        q1: s.coeff_meta.q1,
        q2: s.coeff_meta.q2,
        family: s.coeff_meta.family,
        params: s.coeff_meta.params.clone(),
        values: s.values.clone(),
    };
    write_container(&c, w)
}

pub fn slab_sidecar(s: &FieldSlab) -> SlabSidecar {
    SlabSidecar {
        format: "LSSB".into(),
        version: FORMAT_VERSION,
        window: (s.t1, s.t2),
        coeff_radii: s.coeff_meta.radii,
        coeff_decay: s.coeff_meta.decay,
        family: s.coeff_meta.family,
        q1: json_real(s.coeff_meta.q1),
        q2: json_real(s.coeff_meta.q2),
        params: s.coeff_meta.params.clone(),
        base_seed: s.seed_info.0,
        replicate: s.seed_info.1,
        innovation: s.innovation,
    }
}

pub fn save_slab(path: &Path, s: &FieldSlab) -> Result<(PathBuf, PathBuf)> {
    write_slab(s, BufWriter::new(File::create(path)?))?;
    let side = sidecar_path(path);
    write_json(&side, &slab_sidecar(s))?;
    Ok((path.to_path_buf(), side))
}

/// Read a slab and restore the seed and coefficient identity from its sidecar.
pub fn load_slab(path: &Path) -> Result<FieldSlab> {
    let c = read_container(BufReader::new(File::open(path)?), SLAB_MAGIC, |a, b| {
        a.checked_mul(b)
    })?;
    let side: SlabSidecar =
        serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
    if side.window != c.extents || side.family != c.family {
        return Err(Error::Format("sidecar does not describe this slab".into()));
    }
    Ok(FieldSlab {
        t1: c.extents.0,
        t2: c.extents.1,
        values: c.values,
        coeff_meta: CoeffMeta {
            family: c.family,
            decay: side.coeff_decay,
            radii: side.coeff_radii,
            q1: c.q1,
            q2: c.q2,
            params: c.params,
        },
        seed_info: (side.base_seed, side.replicate),
        innovation: side.innovation,
    })
}

/// Shortest text that still carries 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn write_variance_csv<W: Write>(rows: &[VarianceEstimate], seed: u64, mut w: W) -> Result<()> {
    writeln!(w, "lambda,gamma,x,y,var,stderr,reps,seed")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt17(r.lambda),
            fmt17(r.gamma),
            fmt17(r.x),
            fmt17(r.y),
            fmt17(r.var),
            fmt17(r.stderr),
            r.reps,
            seed
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff_families::pair_difference_coeffs;

    #[test]
    fn grid_roundtrip_in_memory() {
        let g = pair_difference_coeffs();
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"LSCG");
        assert_eq!(buf.len(), 4 + 2 + 8 + 16 + 1 + 4 + 9 * 8);
        let back = read_grid(&buf[..]).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_bad_bytes() {
        let g = pair_difference_coeffs();
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        assert!(matches!(
            read_grid(&buf[..buf.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_grid(&bad[..]), Err(Error::Format(_))));
        let mut long = buf;
        long.push(0);
        assert!(matches!(read_grid(&long[..]), Err(Error::Format(_))));
    }

    #[test]
    fn seventeen_digits_roundtrip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt() * 1e300, -5e-324, 1.0] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(json_real(f64::INFINITY), Value::from("inf"));
    }
}
