//! Point clouds, Euclidean geometry and one-sided Hausdorff distance.
//!
//! Points are stored contiguously in a single buffer; a point is borrowed as
//! a `&[f64]` slice of length [`PointCloud::dim`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Finite sample of points in `R^N`, indexed in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    /// Builds a cloud from a flat row-major coordinate buffer.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(crate::error::invalid("dim", "ambient dimension must be >= 1"));
        }
        if coords.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: coords.len() % dim,
            });
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                point: pos / dim,
                axis: pos % dim,
            });
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyCloud)?;
        let dim = first.as_ref().len();
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords)
    }

    /// Ambient dimension `N`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Always false for a constructed cloud; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    /// Returns a new cloud with `extra` appended after the existing points.
    pub fn with_appended(&self, extra: &[&[f64]]) -> Result<Self> {
        let mut coords = self.coords.clone();
        for p in extra {
            self.check_dim(p)?;
            coords.extend_from_slice(p);
        }
        Self::from_flat(self.dim, coords)
    }

    /// Index of the first point bitwise equal to `p`, if any.
    pub fn position_of(&self, p: &[f64]) -> Option<usize> {
        self.points().position(|q| q == p)
    }

    pub(crate) fn check_dim(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: p.len(),
            });
        }
        Ok(())
    }

    /// Parses CSV: one point per line, no header, dimension taken from the
    /// first row.
    pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut dim = None;
        let mut coords = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let line = row as u64 + 1;
            let parse_err = |reason: String| Error::Parse {
                path: origin.to_path_buf(),
                line,
                reason,
            };
            let record = record.map_err(|e| parse_err(e.to_string()))?;
            let expected = *dim.get_or_insert(record.len());
            if record.len() != expected {
                return Err(parse_err(format!("expected {expected} fields, found {}", record.len())));
            }
            for field in record.iter() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(format!("invalid number `{field}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(format!("non-finite value `{field}`")));
                }
                coords.push(v);
            }
        }
        let dim = dim.ok_or(Error::EmptyCloud)?;
        Self::from_flat(dim, coords)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(BufReader::new(file), path)
    }

    /// Writes the cloud as CSV using shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        for p in self.points() {
            for (axis, c) in p.iter().enumerate() {
                if axis > 0 {
                    w.write_all(b",")?;
                }
                let text = format!("{c:?}");
                w.write_all(text.strip_suffix(".0").unwrap_or(&text).as_bytes())?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        self.write_csv(file).map_err(io_err)
    }
}

#[inline]
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

/// Euclidean distance `||a - b||`.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dist(a, b))
}

/// Largest distance from a reference-net point to its nearest sample point.
///
/// The net stands in for the continuous domain; with a sample drawn from the
/// domain this is the Hausdorff distance up to the net's own covering radius.
pub fn hausdorff_distance(reference_net: &PointCloud, sample: &PointCloud) -> Result<f64> {
    if reference_net.dim() != sample.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference_net.dim(),
            found: sample.dim(),
        });
    }
    let worst_sq = reference_net
        .as_flat()
        .par_chunks_exact(reference_net.dim())
        .map(|p| sample.points().map(|s| dist_sq(p, s)).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max);
    Ok(worst_sq.sqrt())
}
