//! Point sets, entries (signals on point sets) and homogenized batches.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};

use crate::error::{GconvError, Result};

/// A location in the 2-D embedding space, in units where one cell of the
/// receptive grid has side `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// An ordered list of points, each carrying a stable integer identifier.
///
/// Identity is by id, never by coordinates: two distinct ids may sit at the
/// same location.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    ids: Vec<u64>,
    coords: Vec<Point>,
}

impl PointSet {
    pub fn new(ids: Vec<u64>, coords: Vec<Point>) -> Result<Self> {
        if ids.len() != coords.len() {
            return Err(GconvError::LengthMismatch {
                what: "point ids vs coordinates",
                expected: coords.len(),
                actual: ids.len(),
            });
        }
        if coords.iter().any(|p| !p.is_finite()) {
            return Err(GconvError::NonFinite("point coordinates"));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for &id in &ids {
            if !seen.insert(id) {
                return Err(GconvError::DuplicateId(id));
            }
        }
        Ok(Self { ids, coords })
    }

    /// Points with ids `0..n` in order.
    pub fn sequential(coords: Vec<Point>) -> Result<Self> {
        let ids = (0..coords.len() as u64).collect();
        Self::new(ids, coords)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    fn ids_ascending(&self) -> bool {
        self.ids.windows(2).all(|w| w[0] < w[1])
    }
}

/// A signal on an irregular domain: one row of channel values per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    points: Arc<PointSet>,
    values: Array2<f64>,
}

impl Entry {
    pub fn new(points: Arc<PointSet>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != points.len() {
            return Err(GconvError::LengthMismatch {
                what: "value rows vs points",
                expected: points.len(),
                actual: values.nrows(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GconvError::NonFinite("entry values"));
        }
        Ok(Self { points, values })
    }

    pub fn points(&self) -> &Arc<PointSet> {
        &self.points
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }
}

/// Builds an entry whose points get ids `0..N` in order.
pub fn make_entry(points: Vec<Point>, values: Array2<f64>) -> Result<Entry> {
    Entry::new(Arc::new(PointSet::sequential(points)?), values)
}

/// Integer lattice `(col, row)` in row-major order.
pub fn regular_grid_points(width: usize, height: usize) -> Vec<Point> {
    (0..height)
        .flat_map(|row| (0..width).map(move |col| Point::new(col as f64, row as f64)))
        .collect()
}

/// A single-channel image placed on the integer lattice, pixel pitch 1.
pub fn regular_grid_entry(width: usize, height: usize, pixels: &[f64]) -> Result<Entry> {
    if width * height != pixels.len() {
        return Err(GconvError::LengthMismatch {
            what: "image pixels vs width*height",
            expected: width * height,
            actual: pixels.len(),
        });
    }
    let values = Array2::from_shape_vec((pixels.len(), 1), pixels.to_vec())
        .expect("shape checked above");
    make_entry(regular_grid_points(width, height), values)
}

/// A stack of entries made homogeneous: one shared point list, values zero
/// wherever an entry did not activate a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    points: Arc<PointSet>,
    values: Array3<f64>,
    mask: Array2<bool>,
}

impl Batch {
    /// A batch over a single shared domain where every entry activates every
    /// point. `values` is entry × point × channel.
    pub fn from_shared(points: Arc<PointSet>, values: Array3<f64>) -> Result<Self> {
        if values.len_of(Axis(1)) != points.len() {
            return Err(GconvError::LengthMismatch {
                what: "batch points",
                expected: points.len(),
                actual: values.len_of(Axis(1)),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GconvError::NonFinite("batch values"));
        }
        let mask = Array2::from_elem((values.len_of(Axis(0)), points.len()), true);
        Ok(Self {
            points,
            values,
            mask,
        })
    }

    pub fn points(&self) -> &Arc<PointSet> {
        &self.points
    }

    /// entry × point × channel
    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn size(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn channels(&self) -> usize {
        self.values.len_of(Axis(2))
    }

    /// Recovers the original entries, each restricted to the points it
    /// activated.
    pub fn split(&self) -> Vec<Entry> {
        let channels = self.channels();
        (0..self.size())
            .map(|b| {
                let mask = self.mask.row(b);
                if mask.iter().all(|&m| m) {
                    let values = self.values.index_axis(Axis(0), b).to_owned();
                    return Entry {
                        points: Arc::clone(&self.points),
                        values,
                    };
                }
                let keep: Vec<usize> = (0..self.point_count()).filter(|&i| mask[i]).collect();
                let ids = keep.iter().map(|&i| self.points.ids[i]).collect();
                let coords = keep.iter().map(|&i| self.points.coords[i]).collect();
                let mut values = Array2::zeros((keep.len(), channels));
                for (row, &i) in keep.iter().enumerate() {
                    for c in 0..channels {
                        values[[row, c]] = self.values[[b, i, c]];
                    }
                }
                Entry {
                    points: Arc::new(PointSet { ids, coords }),
                    values,
                }
            })
            .collect()
    }
}

/// Aligns entries on the union of their points (ascending id), zero-filling
/// the points an entry does not activate.
pub fn homogenize(entries: &[Entry]) -> Result<Batch> {
    let refs: Vec<&Entry> = entries.iter().collect();
    homogenize_refs(&refs)
}

/// [`homogenize`] over borrowed entries.
pub fn homogenize_refs(entries: &[&Entry]) -> Result<Batch> {
    let first = entries
        .first()
        .ok_or_else(|| GconvError::InvalidParameter("homogenize needs at least one entry".into()))?;
    let channels = first.channels();
    for e in entries {
        if e.channels() != channels {
            return Err(GconvError::ChannelMismatch {
                expected: channels,
                actual: e.channels(),
            });
        }
    }

    let shared = entries
        .iter()
        .all(|e| Arc::ptr_eq(&e.points, &first.points));
    if shared && first.points.ids_ascending() {
        let p = first.len();
        let mut values = Array3::zeros((entries.len(), p, channels));
        for (b, e) in entries.iter().enumerate() {
            values.index_axis_mut(Axis(0), b).assign(&e.values);
        }
        return Ok(Batch {
            points: Arc::clone(&first.points),
            values,
            mask: Array2::from_elem((entries.len(), p), true),
        });
    }

    let mut union: BTreeMap<u64, Point> = BTreeMap::new();
    for e in entries {
        for (&id, &pt) in e.points.ids.iter().zip(&e.points.coords) {
            match union.get(&id) {
                Some(existing) if *existing != pt => {
                    return Err(GconvError::ConflictingCoordinates { id });
                }
                Some(_) => {}
                None => {
                    union.insert(id, pt);
                }
            }
        }
    }
    let position: BTreeMap<u64, usize> = union.keys().enumerate().map(|(i, &id)| (id, i)).collect();
    let p = union.len();
    let mut values = Array3::zeros((entries.len(), p, channels));
    let mut mask = Array2::from_elem((entries.len(), p), false);
    for (b, e) in entries.iter().enumerate() {
        for (row, id) in e.points.ids.iter().enumerate() {
            let col = position[id];
            mask[[b, col]] = true;
            for c in 0..channels {
                values[[b, col, c]] = e.values[[row, c]];
            }
        }
    }
    let (ids, coords) = union.into_iter().unzip();
    Ok(Batch {
        points: Arc::new(PointSet { ids, coords }),
        values,
        mask,
    })
}

/// Writes entries in the `gce v1` text format, one block per entry.
pub fn write_entries<W: Write>(mut out: W, entries: &[Entry]) -> Result<()> {
    for e in entries {
        writeln!(out, "gce v1 {} {}", e.len(), e.channels())?;
        for (row, (id, pt)) in e.points.ids.iter().zip(&e.points.coords).enumerate() {
            write!(out, "{} {:.16e} {:.16e}", id, pt.x, pt.y)?;
            for v in e.values.row(row) {
                write!(out, " {:.16e}", v)?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Reads every `gce v1` block from `input`.
pub fn read_entries<R: BufRead>(input: R) -> Result<Vec<Entry>> {
    let mut lines = input
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let mut entries = Vec::new();
    while let Some((lineno, header)) = lines.next() {
        let header = header?;
        let line = lineno + 1;
        let parse_err = |msg: &str| GconvError::Parse {
            line,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "gce" || fields[1] != "v1" {
            return Err(parse_err("expected header `gce v1 <N> <C>`"));
        }
        let n: usize = fields[2].parse().map_err(|_| parse_err("bad point count"))?;
        let c: usize = fields[3].parse().map_err(|_| parse_err("bad channel count"))?;

        let mut ids = Vec::with_capacity(n);
        let mut coords = Vec::with_capacity(n);
        let mut values = Array2::zeros((n, c));
        for row in 0..n {
            let (lineno, text) = lines
                .next()
                .ok_or_else(|| GconvError::Truncated(format!("entry block at line {line}")))?;
            let text = text?;
            let line = lineno + 1;
            let toks: Vec<&str> = text.split_whitespace().collect();
            if toks.len() != 3 + c {
                return Err(GconvError::Parse {
                    line,
                    msg: format!("expected {} fields, got {}", 3 + c, toks.len()),
                });
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| GconvError::Parse {
                    line,
                    msg: format!("bad number `{s}`"),
                })
            };
            ids.push(toks[0].parse().map_err(|_| GconvError::Parse {
                line,
                msg: format!("bad id `{}`", toks[0]),
            })?);
            coords.push(Point::new(num(toks[1])?, num(toks[2])?));
            for ch in 0..c {
                values[[row, ch]] = num(toks[3 + ch])?;
            }
        }
        entries.push(Entry::new(Arc::new(PointSet::new(ids, coords)?), values)?);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn entry_with_ids(ids: &[u64], xs: &[f64], vals: &[f64]) -> Entry {
        let coords = xs.iter().map(|&x| Point::new(x, 0.0)).collect();
        let set = PointSet::new(ids.to_vec(), coords).unwrap();
        let values = Array2::from_shape_vec((vals.len(), 1), vals.to_vec()).unwrap();
        Entry::new(Arc::new(set), values).unwrap()
    }

    #[test]
    fn make_entry_shapes() {
        let e = make_entry(vec![Point::new(0.0, 0.0)], array![[1.0]]).unwrap();
        assert_eq!((e.len(), e.channels()), (1, 1));

        let e = make_entry(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)],
            Array2::zeros((2, 3)),
        )
        .unwrap();
        assert_eq!((e.len(), e.channels()), (2, 3));
        assert_eq!(e.points().ids(), &[0, 1]);
    }

    #[test]
    fn coincident_points_are_accepted() {
        let e = make_entry(
            vec![Point::new(0.0, 0.0), Point::new(0.0, 0.0)],
            array![[1.0], [2.0]],
        )
        .unwrap();
        assert_eq!(e.len(), 2);
    }

    #[test]
    fn make_entry_errors() {
        assert!(matches!(
            make_entry(vec![Point::new(0.0, 0.0)], Array2::zeros((2, 1))),
            Err(GconvError::LengthMismatch { .. })
        ));
        assert!(matches!(
            make_entry(vec![Point::new(0.0, 0.0)], array![[f64::NAN]]),
            Err(GconvError::NonFinite(_))
        ));
        assert!(matches!(
            PointSet::new(vec![3, 3], vec![Point::new(0.0, 0.0); 2]),
            Err(GconvError::DuplicateId(3))
        ));
        assert!(PointSet::sequential(vec![Point::new(f64::INFINITY, 0.0)]).is_err());
    }

    #[test]
    fn grid_entry_layout() {
        let e = regular_grid_entry(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let expect = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
        for (p, &(x, y)) in e.points().coords().iter().zip(&expect) {
            assert_eq!((p.x, p.y), (x, y));
        }
        assert_eq!(e.values().column(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);

        let e = regular_grid_entry(28, 28, &[0.0; 784]).unwrap();
        assert_eq!(e.len(), 784);

        let e = regular_grid_entry(1, 1, &[5.0]).unwrap();
        assert_eq!(e.points().coords()[0], Point::new(0.0, 0.0));

        assert!(regular_grid_entry(3, 2, &[0.0; 5]).is_err());
    }

    #[test]
    fn homogenize_identical_domains() {
        let e = regular_grid_entry(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let batch = homogenize(&[e.clone(), e.clone()]).unwrap();
        assert_eq!((batch.size(), batch.point_count()), (2, 4));
        assert!(batch.mask().iter().all(|&m| m));
    }

    #[test]
    fn homogenize_zero_fills_missing_points() {
        let a = entry_with_ids(&[0, 1], &[0.0, 1.0], &[5.0, 6.0]);
        let b = entry_with_ids(&[1, 2], &[1.0, 2.0], &[7.0, 8.0]);
        let batch = homogenize(&[a, b]).unwrap();
        assert_eq!(batch.points().ids(), &[0, 1, 2]);
        assert_eq!(batch.values()[[0, 2, 0]], 0.0);
        assert!(!batch.mask()[[0, 2]]);
        assert_eq!(batch.values()[[1, 0, 0]], 0.0);
        assert_eq!(batch.values()[[1, 1, 0]], 7.0);
        assert_eq!(batch.values()[[0, 1, 0]], 6.0);
    }

    #[test]
    fn homogenize_single_entry_is_identity() {
        let e = make_entry(
            vec![Point::new(0.5, 0.0), Point::new(1.0, 2.0)],
            array![[1.0, -1.0], [2.0, 3.0]],
        )
        .unwrap();
        let batch = homogenize(std::slice::from_ref(&e)).unwrap();
        assert_eq!(batch.size(), 1);
        assert_eq!(batch.values().index_axis(Axis(0), 0), e.values().view());
    }

    #[test]
    fn homogenize_rejects_bad_inputs() {
        let a = make_entry(vec![Point::new(0.0, 0.0)], array![[1.0]]).unwrap();
        let b = make_entry(vec![Point::new(0.0, 0.0)], array![[1.0, 2.0]]).unwrap();
        assert!(matches!(
            homogenize(&[a, b]),
            Err(GconvError::ChannelMismatch { .. })
        ));

        let a = entry_with_ids(&[4], &[0.0], &[1.0]);
        let b = entry_with_ids(&[4], &[0.5], &[1.0]);
        assert!(matches!(
            homogenize(&[a, b]),
            Err(GconvError::ConflictingCoordinates { id: 4 })
        ));
        assert!(homogenize(&[]).is_err());
    }

    #[test]
    fn unsorted_shared_domain_goes_through_union() {
        let a = entry_with_ids(&[2, 0], &[2.0, 0.0], &[1.0, 3.0]);
        let batch = homogenize(&[a.clone(), a]).unwrap();
        assert_eq!(batch.points().ids(), &[0, 2]);
        assert_eq!(batch.values()[[1, 0, 0]], 3.0);
    }

    #[test]
    fn gce_round_trip_is_exact() {
        let e = make_entry(
            vec![Point::new(0.1, -2.5e-7), Point::new(1.0 / 3.0, 7.0)],
            array![[std::f64::consts::PI, -0.0], [1e300, 2.0]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_entries(&mut buf, &[e.clone(), e.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("gce v1 2 2\n"));
        let back = read_entries(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].values(), e.values());
        assert_eq!(back[1].points().coords(), e.points().coords());
    }

    #[test]
    fn gce_reader_errors() {
        assert!(read_entries("gce v2 1 1\n0 0 0 1\n".as_bytes()).is_err());
        assert!(matches!(
            read_entries("gce v1 2 1\n0 0 0 1\n".as_bytes()),
            Err(GconvError::Truncated(_))
        ));
        assert!(read_entries("gce v1 1 1\n0 0 0\n".as_bytes()).is_err());
        let ok = read_entries("gce v1 1 1\n7 1 2.5 3\n".as_bytes()).unwrap();
        assert_eq!(ok[0].points().ids(), &[7]);
    }

    fn arb_entry(channels: usize) -> impl Strategy<Value = Entry> {
        proptest::collection::btree_set(0u64..30, 1..12).prop_flat_map(move |ids| {
            let n = ids.len();
            proptest::collection::vec(-5.0f64..5.0, n * channels).prop_map(move |vals| {
                let ids: Vec<u64> = ids.iter().copied().collect();
                // coordinates are a function of id so batches never conflict
                let coords = ids.iter().map(|&i| Point::new(i as f64 * 0.7, -(i as f64))).collect();
                let values = Array2::from_shape_vec((n, channels), vals).unwrap();
                Entry::new(Arc::new(PointSet::new(ids, coords).unwrap()), values).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn homogenize_is_idempotent(entries in proptest::collection::vec(arb_entry(2), 1..5)) {
            let batch = homogenize(&entries).unwrap();
            let again = homogenize(&batch.split()).unwrap();
            prop_assert_eq!(batch.values(), again.values());
            prop_assert_eq!(batch.mask(), again.mask());
            prop_assert_eq!(batch.points().ids(), again.points().ids());
        }

        #[test]
        fn masked_positions_are_zero(entries in proptest::collection::vec(arb_entry(1), 1..5)) {
            let batch = homogenize(&entries).unwrap();
            let mut total = 0.0;
            for ((b, p, _), v) in batch.values().indexed_iter() {
                if !batch.mask()[[b, p]] {
                    total += v.abs();
                }
            }
            prop_assert_eq!(total, 0.0);
        }

        #[test]
        fn copies_give_identical_slices(e in arb_entry(3), k in 1usize..5) {
            let entries = vec![e; k];
            let batch = homogenize(&entries).unwrap();
            for b in 1..k {
                prop_assert_eq!(
                    batch.values().index_axis(Axis(0), b),
                    batch.values().index_axis(Axis(0), 0)
                );
            }
        }
    }
}
