//! Field containers for the triangular arrays and the P2 operator weights.

use std::io::{Read, Write};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{self, ArrayId, Orientation};
use crate::kernels::KernelKind;
use crate::{Error, Result};

/// Initial contents of a freshly allocated field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Zeros,
    Constant(f64),
    /// Deterministic values in [-1, 1]. Every array draws from its own
    /// ChaCha8 stream (stream id = array tag), so the result depends only on
    /// (seed, level, array), not on allocation order.
    PseudoRandom(u64),
}

fn array_tag(array: ArrayId) -> u32 {
    match array {
        ArrayId::Vertex => 0,
        ArrayId::Edge(Orientation::X) => 1,
        ArrayId::Edge(Orientation::Y) => 2,
        ArrayId::Edge(Orientation::Xy) => 3,
    }
}

fn tag_array(tag: u32) -> Option<ArrayId> {
    ArrayId::ALL.into_iter().find(|&a| array_tag(a) == tag)
}

/// Maps a raw 53-bit draw onto [-1, 1]; keeps the generator independent of
/// float distribution internals.
#[inline]
fn unit_from_bits(bits: u64) -> f64 {
    (bits >> 11) as f64 * (2.0 / (1u64 << 53) as f64) - 1.0
}

fn fill_values(len: usize, fill: Fill, array: ArrayId) -> Vec<f64> {
    match fill {
        Fill::Zeros => vec![0.0; len],
        Fill::Constant(c) => vec![c; len],
        Fill::PseudoRandom(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(array_tag(array) as u64);
            (0..len).map(|_| unit_from_bits(rng.next_u64())).collect()
        }
    }
}

/// Values on the vertex array of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexField {
    level: u32,
    values: Vec<f64>,
}

impl VertexField {
    pub fn new(level: u32, fill: Fill) -> Result<Self> {
        grid::check_level(level)?;
        let len = grid::vertex_count(level) as usize;
        Ok(Self {
            level,
            values: fill_values(len, fill, ArrayId::Vertex),
        })
    }

    pub fn from_values(level: u32, values: Vec<f64>) -> Result<Self> {
        grid::check_level(level)?;
        let expected = grid::vertex_count(level);
        if values.len() as u64 != expected {
            return Err(Error::FieldLength {
                level,
                expected,
                actual: values.len() as u64,
            });
        }
        Ok(Self { level, values })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn get(&self, x: u32, y: u32) -> Result<f64> {
        Ok(self.values[grid::vertex_index(x, y, self.level)? as usize])
    }

    pub fn set(&mut self, x: u32, y: u32, value: f64) -> Result<()> {
        let i = grid::vertex_index(x, y, self.level)? as usize;
        self.values[i] = value;
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Values on one edge orientation of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    level: u32,
    orientation: Orientation,
    values: Vec<f64>,
}

impl EdgeField {
    pub fn new(level: u32, orientation: Orientation, fill: Fill) -> Result<Self> {
        grid::check_level(level)?;
        let len = grid::edge_count(level) as usize;
        Ok(Self {
            level,
            orientation,
            values: fill_values(len, fill, ArrayId::Edge(orientation)),
        })
    }

    pub fn from_values(level: u32, orientation: Orientation, values: Vec<f64>) -> Result<Self> {
        grid::check_level(level)?;
        let expected = grid::edge_count(level);
        if values.len() as u64 != expected {
            return Err(Error::FieldLength {
                level,
                expected,
                actual: values.len() as u64,
            });
        }
        Ok(Self {
            level,
            orientation,
            values,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn get(&self, x: u32, y: u32) -> Result<f64> {
        Ok(self.values[grid::edge_index(x, y, self.level)? as usize])
    }

    pub fn set(&mut self, x: u32, y: u32, value: f64) -> Result<()> {
        let i = grid::edge_index(x, y, self.level)? as usize;
        self.values[i] = value;
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// A full P2 function: one vertex array plus the three edge arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct P2Function {
    pub vertex: VertexField,
    pub edge_x: EdgeField,
    pub edge_y: EdgeField,
    pub edge_xy: EdgeField,
}

impl P2Function {
    pub fn new(level: u32, fill: Fill) -> Result<Self> {
        Ok(Self {
            vertex: VertexField::new(level, fill)?,
            edge_x: EdgeField::new(level, Orientation::X, fill)?,
            edge_y: EdgeField::new(level, Orientation::Y, fill)?,
            edge_xy: EdgeField::new(level, Orientation::Xy, fill)?,
        })
    }

    pub fn level(&self) -> u32 {
        self.vertex.level
    }

    pub fn total_len(&self) -> u64 {
        grid::dof_counts(self.level()).expect("level validated at construction").total
    }

    pub fn edge(&self, orientation: Orientation) -> &EdgeField {
        match orientation {
            Orientation::X => &self.edge_x,
            Orientation::Y => &self.edge_y,
            Orientation::Xy => &self.edge_xy,
        }
    }

    pub fn edge_mut(&mut self, orientation: Orientation) -> &mut EdgeField {
        match orientation {
            Orientation::X => &mut self.edge_x,
            Orientation::Y => &mut self.edge_y,
            Orientation::Xy => &mut self.edge_xy,
        }
    }

    pub fn component(&self, array: ArrayId) -> &[f64] {
        match array {
            ArrayId::Vertex => self.vertex.as_slice(),
            ArrayId::Edge(o) => self.edge(o).as_slice(),
        }
    }

    pub fn component_mut(&mut self, array: ArrayId) -> &mut [f64] {
        match array {
            ArrayId::Vertex => self.vertex.as_mut_slice(),
            ArrayId::Edge(o) => self.edge_mut(o).as_mut_slice(),
        }
    }

    /// Largest absolute entry difference over all four arrays.
    pub fn max_abs_diff(&self, other: &P2Function) -> Result<f64> {
        if self.level() != other.level() {
            return Err(Error::LevelMismatch(self.level(), other.level()));
        }
        let mut max = 0.0f64;
        for array in ArrayId::ALL {
            for (a, b) in self.component(array).iter().zip(other.component(array)) {
                max = max.max((a - b).abs());
            }
        }
        Ok(max)
    }

    /// Writes the four arrays as consecutive sections, each with an
    /// 8-byte header (level, array tag as little-endian u32) followed by the
    /// entries as little-endian f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for array in ArrayId::ALL {
            write_array_section(&mut w, self.level(), array, self.component(array))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let (level, array, values) = read_array_section(&mut r)?;
        if array != ArrayId::Vertex {
            return Err(Error::BadDump(format!(
                "expected vertex section first, found {}",
                array.name()
            )));
        }
        let vertex = VertexField::from_values(level, values)?;
        let mut edges = Vec::new();
        for expected in [Orientation::X, Orientation::Y, Orientation::Xy] {
            let (lvl, array, values) = read_array_section(&mut r)?;
            if lvl != level || array != ArrayId::Edge(expected) {
                return Err(Error::BadDump(format!(
                    "expected {} section at level {level}, found {} at level {lvl}",
                    expected.name(),
                    array.name()
                )));
            }
            edges.push(EdgeField::from_values(level, expected, values)?);
        }
        let edge_xy = edges.pop().unwrap();
        let edge_y = edges.pop().unwrap();
        let edge_x = edges.pop().unwrap();
        Ok(Self {
            vertex,
            edge_x,
            edge_y,
            edge_xy,
        })
    }
}

/// Single-array dump: `[level: u32 le][tag: u32 le][f64 le ...]` with the
/// entry count implied by level and tag (0 vertex, 1/2/3 edge X/Y/XY).
pub fn write_array_section<W: Write>(
    w: &mut W,
    level: u32,
    array: ArrayId,
    values: &[f64],
) -> Result<()> {
    w.write_all(&level.to_le_bytes())?;
    w.write_all(&array_tag(array).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_array_section<R: Read>(r: &mut R) -> Result<(u32, ArrayId, Vec<f64>)> {
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let level = u32::from_le_bytes(word);
    grid::check_level(level)?;
    r.read_exact(&mut word)?;
    let tag = u32::from_le_bytes(word);
    let array =
        tag_array(tag).ok_or_else(|| Error::BadDump(format!("unknown array tag {tag}")))?;
    let len = grid::array_len(array, level) as usize;
    let mut values = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok((level, array, values))
}

/// The 46 stencil weights of a constant-coefficient P2 operator, grouped by
/// kernel in source order.
#[derive(Debug, Clone, PartialEq)]
pub struct P2Operator {
    pub vtv: [f64; 7],
    pub etv: [f64; 12],
    pub vte: [f64; 12],
    pub ete: [f64; 15],
}

impl P2Operator {
    pub fn zeros() -> Self {
        Self {
            vtv: [0.0; 7],
            etv: [0.0; 12],
            vte: [0.0; 12],
            ete: [0.0; 15],
        }
    }

    /// Every weight set to 1; handy for counting couplings.
    pub fn unit() -> Self {
        Self {
            vtv: [1.0; 7],
            etv: [1.0; 12],
            vte: [1.0; 12],
            ete: [1.0; 15],
        }
    }

    /// Deterministic weights in [-1, 1] from a dedicated ChaCha8 stream.
    pub fn pseudo_random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(u32::MAX));
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| unit_from_bits(rng.next_u64())).collect()
        };
        Self {
            vtv: draw(7).try_into().unwrap(),
            etv: draw(12).try_into().unwrap(),
            vte: draw(12).try_into().unwrap(),
            ete: draw(15).try_into().unwrap(),
        }
    }

    pub fn weights(&self, kernel: KernelKind) -> &[f64] {
        match kernel {
            KernelKind::VertexToVertex => &self.vtv,
            KernelKind::EdgeToVertex => &self.etv,
            KernelKind::VertexToEdge => &self.vte,
            KernelKind::EdgeToEdge => &self.ete,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_random_is_reproducible_and_bounded() {
        let a = P2Function::new(4, Fill::PseudoRandom(7)).unwrap();
        let b = P2Function::new(4, Fill::PseudoRandom(7)).unwrap();
        let c = P2Function::new(4, Fill::PseudoRandom(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for array in ArrayId::ALL {
            assert!(a.component(array).iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn component_streams_are_independent_of_order() {
        // The edge_y values must not depend on how many draws vertex made.
        let f = P2Function::new(3, Fill::PseudoRandom(42)).unwrap();
        let lone = EdgeField::new(3, Orientation::Y, Fill::PseudoRandom(42)).unwrap();
        assert_eq!(f.edge_y, lone);
    }

    #[test]
    fn get_set_roundtrip() {
        let mut f = VertexField::new(3, Fill::Zeros).unwrap();
        f.set(2, 1, 3.5).unwrap();
        assert_eq!(f.get(2, 1).unwrap(), 3.5);
        assert_eq!(f.get(2, 2).unwrap(), 0.0);
        assert!(f.get(8, 1).is_err());

        let mut e = EdgeField::new(3, Orientation::Xy, Fill::Constant(1.0)).unwrap();
        e.set(0, 0, -2.0).unwrap();
        assert_eq!(e.get(0, 0).unwrap(), -2.0);
        assert!(e.set(7, 1, 0.0).is_err());
    }

    #[test]
    fn dump_roundtrip_is_bit_exact() {
        let f = P2Function::new(3, Fill::PseudoRandom(11)).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let g = P2Function::read_from(buf.as_slice()).unwrap();
        assert_eq!(f, g);

        // header corruption is detected
        buf[4] = 9;
        assert!(P2Function::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn length_checks() {
        assert!(VertexField::from_values(2, vec![0.0; 14]).is_err());
        assert!(VertexField::from_values(2, vec![0.0; 15]).is_ok());
        assert!(EdgeField::from_values(2, Orientation::X, vec![0.0; 10]).is_ok());
    }
}
