//! Sparse count matrices: TSV triplet ingestion, identifier dictionaries and
//! held-out splits for perplexity evaluation.
//!
//! The text format is one `row<TAB>col<TAB>count` triplet per line. Lines
//! starting with `#` are comments, except `# shape <rows> <cols>`, which
//! declares the matrix dimensions (needed for empty matrices and trailing
//! all-zero rows or columns).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index;

use crate::error::{Error, Result};
use crate::mathfn::sample::{binomial, stream_rng};

/// Counts matrix stored as nonzero triplets in row-major (CSR) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseCountMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    counts: Vec<u32>,
}

/// The nonzero cells of one row.
#[derive(Debug, Clone, Copy)]
pub struct Row<'a> {
    pub cols: &'a [u32],
    pub counts: &'a [u32],
}

impl Row<'_> {
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }
}

impl SparseCountMatrix {
    /// Builds a matrix from `(row, col, count)` triplets in any order.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut entries: Vec<(usize, usize, u32)>,
    ) -> Result<Self> {
        if n_cols > u32::MAX as usize {
            return Err(Error::invalid("too many columns"));
        }
        for &(r, c, y) in &entries {
            if r >= n_rows || c >= n_cols {
                return Err(Error::invalid(format!(
                    "cell ({r}, {c}) outside a {n_rows} x {n_cols} matrix"
                )));
            }
            if y == 0 {
                return Err(Error::invalid(format!("cell ({r}, {c}) has count 0")));
            }
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::invalid(format!("duplicate cell ({}, {})", w[0].0, w[0].1)));
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseCountMatrix {
            n_rows,
            n_cols,
            row_ptr,
            cols: entries.iter().map(|e| e.1 as u32).collect(),
            counts: entries.iter().map(|e| e.2).collect(),
        })
    }

    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        SparseCountMatrix {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            cols: Vec::new(),
            counts: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, u: usize) -> Row<'_> {
        let (lo, hi) = (self.row_ptr[u], self.row_ptr[u + 1]);
        Row {
            cols: &self.cols[lo..hi],
            counts: &self.counts[lo..hi],
        }
    }

    /// Offset of row `u`'s first nonzero among all nonzeros.
    pub fn row_offset(&self, u: usize) -> usize {
        self.row_ptr[u]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// All nonzero cells as `(row, col, count)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let row = self.row(r);
            row.cols
                .iter()
                .zip(row.counts)
                .map(move |(&c, &y)| (r, c as usize, y))
        })
    }

    /// The given rows, in the given order, as a new matrix with the same columns.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut counts = Vec::new();
        for &r in rows {
            if r >= self.n_rows {
                return Err(Error::invalid(format!("row {r} out of range")));
            }
            let row = self.row(r);
            cols.extend_from_slice(row.cols);
            counts.extend_from_slice(row.counts);
            row_ptr.push(cols.len());
        }
        Ok(SparseCountMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            row_ptr,
            cols,
            counts,
        })
    }

    /// Canonical TSV text with a shape header; parses back to an equal matrix.
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(16 * self.nnz() + 32);
        let _ = writeln!(out, "# shape\t{}\t{}", self.n_rows, self.n_cols);
        for (r, c, y) in self.triplets() {
            let _ = writeln!(out, "{r}\t{c}\t{y}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// How row and column identifiers in a triplet file are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdMode {
    /// Identifiers are already dense 0-based integers.
    #[default]
    Dense,
    /// Identifiers are arbitrary strings, numbered by first appearance.
    Dictionary,
}

/// A parsed matrix plus the identifier dictionaries in [`IdMode::Dictionary`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMatrix {
    pub matrix: SparseCountMatrix,
    pub row_ids: Option<Vec<String>>,
    pub col_ids: Option<Vec<String>>,
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_shape_hint(comment: &str, line_no: usize) -> Result<Option<(usize, usize)>> {
    let fields: Vec<&str> = comment.split_whitespace().collect();
    if fields.first() != Some(&"shape") {
        return Ok(None);
    }
    if fields.len() != 3 {
        return Err(Error::parse(
            line_no,
            "shape header needs `# shape <rows> <cols>`",
        ));
    }
    let rows = fields[1]
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad row count `{}`", fields[1])))?;
    let cols = fields[2]
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad column count `{}`", fields[2])))?;
    Ok(Some((rows, cols)))
}

#[derive(Default)]
struct Interner {
    index: HashMap<String, usize>,
    ids: Vec<String>,
}

impl Interner {
    fn get(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.index.insert(id.to_owned(), i);
        self.ids.push(id.to_owned());
        i
    }
}

/// Parses TSV triplet text. Errors name the 1-based line number.
///
/// `shape_hint` fixes the dimensions when given; otherwise a `# shape`
/// header or the largest indices seen determine them. An empty matrix
/// without either is an error.
pub fn parse_triplets(text: &str, mode: IdMode, shape_hint: Option<(usize, usize)>) -> Result<ParsedMatrix> {
    let mut header_shape = None;
    let mut entries = Vec::new();
    let mut seen = HashMap::new();
    let mut rows = Interner::default();
    let mut cols = Interner::default();
    let mut max_row = None::<usize>;
    let mut max_col = None::<usize>;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.trim_start().strip_prefix('#') {
            if let Some(shape) = parse_shape_hint(comment, line_no)? {
                header_shape = Some(shape);
            }
            continue;
        }
        let fields = split_fields(line);
        if fields.len() != 3 {
            return Err(Error::parse(
                line_no,
                format!("expected 3 fields (row, col, count), found {}", fields.len()),
            ));
        }
        let count: i64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("count `{}` is not an integer", fields[2])))?;
        if count <= 0 {
            return Err(Error::parse(
                line_no,
                format!("count must be positive, got {count}"),
            ));
        }
        let count =
            u32::try_from(count).map_err(|_| Error::parse(line_no, format!("count {count} too large")))?;
        let (r, c) = match mode {
            IdMode::Dense => {
                let r: usize = fields[0].parse().map_err(|_| {
                    Error::parse(
                        line_no,
                        format!("row `{}` is not a nonnegative integer", fields[0]),
                    )
                })?;
                let c: usize = fields[1].parse().map_err(|_| {
                    Error::parse(
                        line_no,
                        format!("column `{}` is not a nonnegative integer", fields[1]),
                    )
                })?;
                if c >= u32::MAX as usize {
                    return Err(Error::parse(line_no, "column index too large"));
                }
                (r, c)
            }
            IdMode::Dictionary => {
                if fields[0].is_empty() || fields[1].is_empty() {
                    return Err(Error::parse(line_no, "empty identifier"));
                }
                (rows.get(fields[0]), cols.get(fields[1]))
            }
        };
        if let Some(first) = seen.insert((r, c), line_no) {
            return Err(Error::parse(
                line_no,
                format!(
                    "duplicate cell ({}, {}), first seen on line {first}",
                    fields[0], fields[1]
                ),
            ));
        }
        max_row = Some(max_row.map_or(r, |m: usize| m.max(r)));
        max_col = Some(max_col.map_or(c, |m: usize| m.max(c)));
        entries.push((r, c, count));
    }

    let observed = match (max_row, max_col) {
        (Some(r), Some(c)) => Some((r + 1, c + 1)),
        _ => None,
    };
    let (n_rows, n_cols) = match (shape_hint.or(header_shape), observed) {
        (Some((hr, hc)), Some((or, oc))) => {
            if hr < or || hc < oc {
                return Err(Error::invalid(format!(
                    "declared shape {hr} x {hc} is smaller than the data ({or} x {oc})"
                )));
            }
            (hr, hc)
        }
        (Some(shape), None) => shape,
        (None, Some(shape)) => shape,
        (None, None) => return Err(Error::invalid("empty matrix: no entries and no shape hint")),
    };
    let matrix = SparseCountMatrix::from_triplets(n_rows, n_cols, entries)?;
    let (row_ids, col_ids) = match mode {
        IdMode::Dense => (None, None),
        IdMode::Dictionary => (Some(rows.ids), Some(cols.ids)),
    };
    Ok(ParsedMatrix {
        matrix,
        row_ids,
        col_ids,
    })
}

/// Paths of the row and column dictionaries written next to `path`.
pub fn dictionary_paths(path: &Path) -> (PathBuf, PathBuf) {
    let mut rows = path.as_os_str().to_owned();
    rows.push(".rows.tsv");
    let mut cols = path.as_os_str().to_owned();
    cols.push(".cols.tsv");
    (rows.into(), cols.into())
}

/// Reads a triplet file. In dictionary mode the row and column dictionaries
/// are also written alongside it (see [`dictionary_paths`]).
pub fn load_matrix(path: &Path, mode: IdMode, shape_hint: Option<(usize, usize)>) -> Result<ParsedMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_triplets(&text, mode, shape_hint)?;
    if let (Some(row_ids), Some(col_ids)) = (&parsed.row_ids, &parsed.col_ids) {
        let (row_path, col_path) = dictionary_paths(path);
        save_dictionary(&row_path, row_ids)?;
        save_dictionary(&col_path, col_ids)?;
    }
    Ok(parsed)
}

/// Dictionary text: `index<TAB>original_id` per line.
pub fn dictionary_to_tsv(ids: &[String]) -> String {
    let mut out = String::new();
    for (i, id) in ids.iter().enumerate() {
        let _ = writeln!(out, "{i}\t{id}");
    }
    out
}

pub fn save_dictionary(path: &Path, ids: &[String]) -> Result<()> {
    std::fs::write(path, dictionary_to_tsv(ids)).map_err(|e| Error::io(path, e))
}

/// Parses dictionary text. Indices must cover `0..n` exactly once.
pub fn parse_dictionary(text: &str) -> Result<Vec<String>> {
    let mut slots: Vec<Option<String>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (idx, id) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(line_no, "expected `index<TAB>id`"))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad index `{idx}`")))?;
        // an index far beyond the number of lines cannot be dense
        if idx > text.len() {
            return Err(Error::parse(line_no, format!("index {idx} out of range")));
        }
        if slots.len() <= idx {
            slots.resize(idx + 1, None);
        }
        if slots[idx].is_some() {
            return Err(Error::parse(line_no, format!("duplicate index {idx}")));
        }
        slots[idx] = Some(id.to_owned());
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::invalid(format!("dictionary is missing index {i}"))))
        .collect()
}

pub fn load_dictionary(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dictionary(&text)
}

/// Training rows plus held-out rows whose counts are split into an observed
/// part (used to fit the row) and a test part (scored).
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutSplit {
    pub train: SparseCountMatrix,
    /// Original indices of the training rows, in `train` order.
    pub train_row_ids: Vec<usize>,
    pub heldout_obs: SparseCountMatrix,
    pub heldout_test: SparseCountMatrix,
    /// Original indices of the held-out rows, in `heldout_*` order.
    pub heldout_row_ids: Vec<usize>,
}

const SPLIT_RETRIES: usize = 100;

/// Holds out `n_heldout_rows` rows chosen uniformly without replacement
/// among rows with at least one event, then thins each held-out row event
/// by event: every event lands in the observed part with probability
/// `obs_fraction`, otherwise in the test part.
///
/// A row whose test part comes out empty is re-split up to 100 times; if it
/// is still empty, one observed event is moved to the test part. A row with a
/// single event therefore always ends up with an empty observed part.
pub fn make_heldout_split(
    m: &SparseCountMatrix,
    n_heldout_rows: usize,
    obs_fraction: f64,
    seed: u64,
) -> Result<HeldOutSplit> {
    if !(obs_fraction > 0.0 && obs_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "obs_fraction must lie in (0, 1), got {obs_fraction}"
        )));
    }
    if n_heldout_rows >= m.n_rows() {
        return Err(Error::invalid(format!(
            "cannot hold out {n_heldout_rows} of {} rows",
            m.n_rows()
        )));
    }
    let candidates: Vec<usize> = (0..m.n_rows()).filter(|&u| !m.row(u).is_empty()).collect();
    if n_heldout_rows > candidates.len() {
        return Err(Error::invalid(format!(
            "only {} rows have events; cannot hold out {n_heldout_rows}",
            candidates.len()
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), n_heldout_rows)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();

    let mut is_heldout = vec![false; m.n_rows()];
    for &u in &picked {
        is_heldout[u] = true;
    }
    let train_row_ids: Vec<usize> = (0..m.n_rows()).filter(|&u| !is_heldout[u]).collect();
    let train = m.select_rows(&train_row_ids)?;

    let mut obs = Vec::new();
    let mut test = Vec::new();
    for (h, &u) in picked.iter().enumerate() {
        let row = m.row(u);
        let mut row_rng = stream_rng(seed, 1 + u as u64);
        let total = row.total();
        let mut obs_counts = vec![0u32; row.nnz()];
        if total > 1 {
            for _ in 0..SPLIT_RETRIES {
                for (slot, &y) in obs_counts.iter_mut().zip(row.counts) {
                    *slot = binomial(u64::from(y), obs_fraction, &mut row_rng)? as u32;
                }
                let obs_total: u64 = obs_counts.iter().map(|&c| u64::from(c)).sum();
                if obs_total < total {
                    break;
                }
            }
            let obs_total: u64 = obs_counts.iter().map(|&c| u64::from(c)).sum();
            if obs_total == total {
                obs_counts[0] -= 1;
            }
        }
        for ((&c, &y), &o) in row.cols.iter().zip(row.counts).zip(&obs_counts) {
            if o > 0 {
                obs.push((h, c as usize, o));
            }
            if y > o {
                test.push((h, c as usize, y - o));
            }
        }
    }
    Ok(HeldOutSplit {
        train,
        train_row_ids,
        heldout_obs: SparseCountMatrix::from_triplets(picked.len(), m.n_cols(), obs)?,
        heldout_test: SparseCountMatrix::from_triplets(picked.len(), m.n_cols(), test)?,
        heldout_row_ids: picked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_simple_file() {
        let p = parse_triplets("0\t0\t3\n0\t1\t1\n", IdMode::Dense, None).unwrap();
        assert_eq!(p.matrix.n_rows(), 1);
        assert_eq!(p.matrix.n_cols(), 2);
        assert_eq!(
            p.matrix.triplets().collect::<Vec<_>>(),
            vec![(0, 0, 3), (0, 1, 1)]
        );
    }

    #[test]
    fn whitespace_separated_lines_accepted() {
        let p = parse_triplets("0 0 3\n0 1 1\n", IdMode::Dense, None).unwrap();
        assert_eq!(p.matrix.nnz(), 2);
    }

    #[test]
    fn empty_file_needs_shape() {
        assert!(parse_triplets("", IdMode::Dense, None).is_err());
        let p = parse_triplets("", IdMode::Dense, Some((3, 4))).unwrap();
        assert_eq!((p.matrix.n_rows(), p.matrix.n_cols(), p.matrix.nnz()), (3, 4, 0));
        let p = parse_triplets("# shape\t2\t5\n", IdMode::Dense, None).unwrap();
        assert_eq!((p.matrix.n_rows(), p.matrix.n_cols()), (2, 5));
    }

    #[test]
    fn negative_count_reports_line() {
        match parse_triplets("0\t0\t-1\n", IdMode::Dense, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_triplets("# c\n0\t0\t1\n1\t1\t0\n", IdMode::Dense, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_duplicate_lines() {
        assert!(matches!(
            parse_triplets("0\t0\n", IdMode::Dense, None),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_triplets("0\tx\t2\n", IdMode::Dense, None),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_triplets("0\t1\t2\n0\t1\t5\n", IdMode::Dense, None),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn dictionary_mode_numbers_by_first_appearance() {
        let p = parse_triplets(
            "doc7\tapple\t2\ndoc3\tpear\t1\ndoc7\tpear\t4\n",
            IdMode::Dictionary,
            None,
        )
        .unwrap();
        assert_eq!(p.row_ids.as_deref().unwrap(), ["doc7", "doc3"]);
        assert_eq!(p.col_ids.as_deref().unwrap(), ["apple", "pear"]);
        assert_eq!(
            p.matrix.triplets().collect::<Vec<_>>(),
            vec![(0, 0, 2), (0, 1, 4), (1, 1, 1)]
        );
        let ids = p.col_ids.unwrap();
        assert_eq!(parse_dictionary(&dictionary_to_tsv(&ids)).unwrap(), ids);
    }

    #[test]
    fn dictionary_rejects_gaps() {
        assert!(parse_dictionary("0\ta\n2\tb\n").is_err());
        assert!(parse_dictionary("0\ta\n0\tb\n").is_err());
        assert!(parse_dictionary("0 a\n").is_err());
    }

    #[test]
    fn load_writes_dictionaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(&path, "u1\tc9\t1\n").unwrap();
        load_matrix(&path, IdMode::Dictionary, None).unwrap();
        let (rows, cols) = dictionary_paths(&path);
        assert_eq!(load_dictionary(&rows).unwrap(), vec!["u1".to_string()]);
        assert_eq!(load_dictionary(&cols).unwrap(), vec!["c9".to_string()]);
    }

    fn dense_matrix(rows: &[&[u32]]) -> SparseCountMatrix {
        let n_cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut entries = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            for (c, &y) in row.iter().enumerate() {
                if y > 0 {
                    entries.push((r, c, y));
                }
            }
        }
        SparseCountMatrix::from_triplets(rows.len(), n_cols, entries).unwrap()
    }

    #[test]
    fn split_conserves_counts_and_is_deterministic() {
        let m = dense_matrix(&[&[10, 0, 1], &[3, 3, 3], &[0, 1, 0], &[5, 0, 0]]);
        let s = make_heldout_split(&m, 2, 0.1, 42).unwrap();
        assert_eq!(s, make_heldout_split(&m, 2, 0.1, 42).unwrap());
        assert_eq!(s.train.n_rows(), 2);
        for (h, &u) in s.heldout_row_ids.iter().enumerate() {
            let mut sum = vec![0u32; 3];
            for (&c, &y) in s.heldout_obs.row(h).cols.iter().zip(s.heldout_obs.row(h).counts) {
                sum[c as usize] += y;
            }
            for (&c, &y) in s
                .heldout_test
                .row(h)
                .cols
                .iter()
                .zip(s.heldout_test.row(h).counts)
            {
                sum[c as usize] += y;
            }
            let mut orig = vec![0u32; 3];
            for (&c, &y) in m.row(u).cols.iter().zip(m.row(u).counts) {
                orig[c as usize] = y;
            }
            assert_eq!(sum, orig);
            assert!(!s.heldout_test.row(h).is_empty());
            assert!(!s.train_row_ids.contains(&u));
        }
    }

    #[test]
    fn single_event_row_goes_to_test() {
        let m = dense_matrix(&[&[0, 1], &[2, 2]]);
        for seed in 0..20 {
            let s = make_heldout_split(&m, 1, 0.9, seed).unwrap();
            if s.heldout_row_ids == [0] {
                assert!(s.heldout_obs.row(0).is_empty());
                assert_eq!(s.heldout_test.row(0).total(), 1);
            }
        }
    }

    #[test]
    fn tiny_fraction_puts_everything_in_test() {
        let m = dense_matrix(&[&[7, 2], &[1, 1]]);
        let s = make_heldout_split(&m, 1, 1e-12, 3).unwrap();
        assert_eq!(s.heldout_obs.nnz(), 0);
    }

    #[test]
    fn split_proportion_matches_binomial() {
        // one row with 10,000 events; obs count ~ Binomial(10000, 0.1)
        let m = dense_matrix(&[&[10_000], &[10_000]]);
        let s = make_heldout_split(&m, 1, 0.1, 9).unwrap();
        let obs = s.heldout_obs.total() as f64;
        let se = (10_000.0f64 * 0.1 * 0.9).sqrt();
        assert!((obs - 1000.0).abs() < 3.0 * se, "obs {obs}");
    }

    #[test]
    fn split_argument_errors() {
        let m = dense_matrix(&[&[1], &[1]]);
        assert!(make_heldout_split(&m, 2, 0.1, 0).is_err());
        assert!(make_heldout_split(&m, 1, 0.0, 0).is_err());
        assert!(make_heldout_split(&m, 1, 1.0, 0).is_err());
    }

    fn arb_matrix() -> impl Strategy<Value = SparseCountMatrix> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0u32..5, r * c).prop_map(move |vals| {
                let entries = vals
                    .iter()
                    .enumerate()
                    .filter(|(_, &y)| y > 0)
                    .map(|(i, &y)| (i / c, i % c, y))
                    .collect();
                SparseCountMatrix::from_triplets(r, c, entries).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn tsv_roundtrip(m in arb_matrix()) {
            let text = m.to_tsv();
            let back = parse_triplets(&text, IdMode::Dense, None).unwrap().matrix;
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_tsv(), text);
        }
    }
}
