//! Dataset ingestion: clip inventory, tag annotations, triplet constraints,
//! fold assignments and feature files.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClipId(String);

impl ClipId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClipId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClipId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for ClipId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl std::borrow::Borrow<str> for ClipId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipRecord {
    pub id: ClipId,
    pub audio_path: Option<PathBuf>,
    pub tags: BTreeSet<String>,
}

impl ClipRecord {
    pub fn new<I, S>(id: impl Into<ClipId>, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            id: id.into(),
            audio_path: None,
            tags: tags
                .into_iter()
                .filter_map(|t| normalize_tag(t.as_ref()))
                .collect(),
        }
    }
}

fn normalize_tag(raw: &str) -> Option<String> {
    let t = raw.trim().to_lowercase();
    (!t.is_empty()).then_some(t)
}

/// `(a, b, c)` asserts that `a` is closer to `b` than to the outlier `c`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletConstraint {
    pub a: ClipId,
    pub b: ClipId,
    pub c: ClipId,
}

impl TripletConstraint {
    pub fn new(a: impl Into<ClipId>, b: impl Into<ClipId>, c: impl Into<ClipId>) -> Result<Self> {
        let (a, b, c) = (a.into(), b.into(), c.into());
        if a == b || a == c || b == c {
            return Err(Error::Validation(format!(
                "constraint ({a}, {b}, {c}) must name three distinct clips"
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn clips(&self) -> [&ClipId; 3] {
        [&self.a, &self.b, &self.c]
    }
}

impl fmt::Display for TripletConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.a, self.b, self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    pub index: usize,
    pub train: Vec<TripletConstraint>,
    pub test: Vec<TripletConstraint>,
}

impl FoldAssignment {
    pub fn new(
        index: usize,
        train: Vec<TripletConstraint>,
        test: Vec<TripletConstraint>,
    ) -> Result<Self> {
        let test_set: HashSet<&TripletConstraint> = test.iter().collect();
        if let Some(shared) = train.iter().find(|c| test_set.contains(c)) {
            return Err(Error::Validation(format!(
                "fold {index}: constraint ({shared}) is in both train and test"
            )));
        }
        Ok(Self { index, train, test })
    }

    /// Clips referenced by the test constraints.
    pub fn test_clips(&self) -> BTreeSet<ClipId> {
        self.test
            .iter()
            .flat_map(|c| c.clips().into_iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationFormat {
    /// `clip_id<TAB>tag1,tag2,...`
    Tsv,
    /// Header row of tag names, one 0/1 column per tag. The delimiter is a
    /// tab when the header contains one, otherwise a comma. A trailing
    /// `mp3_path` column becomes the clip's audio path.
    BinaryMatrix,
}

/// An immutable dataset. Clips keep file order; the tag vocabulary is the
/// sorted union of all clip tags.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    clips: Vec<ClipRecord>,
    index: HashMap<ClipId, usize>,
    tag_vocabulary: Vec<String>,
    constraints: Vec<TripletConstraint>,
    folds: Vec<FoldAssignment>,
}

impl Corpus {
    pub fn new(
        clips: Vec<ClipRecord>,
        constraints: Vec<TripletConstraint>,
        folds: Vec<FoldAssignment>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(clips.len());
        for (i, clip) in clips.iter().enumerate() {
            if index.insert(clip.id.clone(), i).is_some() {
                return Err(Error::DuplicateClip(clip.id.clone()));
            }
        }
        let tag_vocabulary = clips
            .iter()
            .flat_map(|c| c.tags.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let corpus = Self {
            clips,
            index,
            tag_vocabulary,
            constraints,
            folds,
        };
        let all = corpus.constraints.iter().chain(
            corpus
                .folds
                .iter()
                .flat_map(|f| f.train.iter().chain(&f.test)),
        );
        for c in all {
            for id in c.clips() {
                if !corpus.contains(id.as_str()) {
                    return Err(Error::Validation(format!(
                        "constraint ({c}) references unknown clip `{id}`"
                    )));
                }
            }
        }
        Ok(corpus)
    }

    /// Loads `annotations.tsv` (or `annotations.csv` as a binary matrix),
    /// optional `constraints.txt`, and `folds/fold<i>.{train,test}` from a
    /// directory. Clips with an `audio/<id>.wav` file get that path.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let tsv = dir.join("annotations.tsv");
        let mut clips = if tsv.exists() {
            load_annotations(&tsv, AnnotationFormat::Tsv)?
        } else {
            load_annotations(&dir.join("annotations.csv"), AnnotationFormat::BinaryMatrix)?
        };
        let audio = dir.join("audio");
        for clip in &mut clips {
            let wav = audio.join(format!("{}.wav", clip.id));
            if clip.audio_path.is_none() && wav.exists() {
                clip.audio_path = Some(wav);
            }
        }
        let known: HashSet<ClipId> = clips.iter().map(|c| c.id.clone()).collect();
        let constraints_path = dir.join("constraints.txt");
        let constraints = if constraints_path.exists() {
            load_constraints(&constraints_path, &known)?
        } else {
            Vec::new()
        };
        let folds_dir = dir.join("folds");
        let folds = if folds_dir.is_dir() {
            load_folds(&folds_dir, &known)?
        } else {
            Vec::new()
        };
        Self::new(clips, constraints, folds)
    }

    pub fn clips(&self) -> &[ClipRecord] {
        &self.clips
    }

    pub fn clip(&self, id: &str) -> Option<&ClipRecord> {
        self.index.get(id).map(|&i| &self.clips[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn clip_ids(&self) -> impl Iterator<Item = &ClipId> {
        self.clips.iter().map(|c| &c.id)
    }

    pub fn tag_vocabulary(&self) -> &[String] {
        &self.tag_vocabulary
    }

    pub fn constraints(&self) -> &[TripletConstraint] {
        &self.constraints
    }

    pub fn folds(&self) -> &[FoldAssignment] {
        &self.folds
    }

    /// Clips available for training in a fold: every clip not referenced by
    /// one of its test constraints.
    pub fn training_clips(&self, fold: &FoldAssignment) -> Vec<ClipId> {
        let test = fold.test_clips();
        self.clips
            .iter()
            .filter(|c| !test.contains(&c.id))
            .map(|c| c.id.clone())
            .collect()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_annotations(path: &Path, format: AnnotationFormat) -> Result<Vec<ClipRecord>> {
    let text = read_text(path)?;
    let name = path.display().to_string();
    match format {
        AnnotationFormat::Tsv => parse_annotations_tsv(&text, &name),
        AnnotationFormat::BinaryMatrix => parse_annotations_matrix(&text, &name),
    }
}

pub fn parse_annotations_tsv(text: &str, source_name: &str) -> Result<Vec<ClipRecord>> {
    let mut seen = HashSet::new();
    let mut clips = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, tags) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source_name, lineno, "expected `<clip_id>\\t<tags>`"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::parse(source_name, lineno, "empty clip id"));
        }
        if tags.contains('\t') {
            return Err(Error::parse(
                source_name,
                lineno,
                "more than two tab-separated fields",
            ));
        }
        let record = ClipRecord::new(id, tags.split(','));
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateClip(record.id));
        }
        clips.push(record);
    }
    Ok(clips)
}

pub fn parse_annotations_matrix(text: &str, source_name: &str) -> Result<Vec<ClipRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source_name, 1, "missing header row"))?;
    let delim = if header.contains('\t') { '\t' } else { ',' };
    let unquote = |s: &str| s.trim().trim_matches('"').to_owned();
    let columns: Vec<String> = header.split(delim).map(unquote).collect();
    if columns.len() < 2 {
        return Err(Error::parse(
            source_name,
            1,
            "header needs a clip id column and tag columns",
        ));
    }
    let path_col =
        (columns.last().map(String::as_str) == Some("mp3_path")).then(|| columns.len() - 1);
    let tag_cols = 1..path_col.unwrap_or(columns.len());

    let mut seen = HashSet::new();
    let mut clips = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<String> = line.split(delim).map(unquote).collect();
        if fields.len() != columns.len() {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected {} fields, found {}", columns.len(), fields.len()),
            ));
        }
        let mut tags = Vec::new();
        for col in tag_cols.clone() {
            match fields[col].as_str() {
                "0" => {}
                "1" => tags.push(columns[col].as_str()),
                other => {
                    return Err(Error::parse(
                        source_name,
                        lineno,
                        format!(
                            "tag column `{}` holds `{other}`, expected 0 or 1",
                            columns[col]
                        ),
                    ))
                }
            }
        }
        if fields[0].is_empty() {
            return Err(Error::parse(source_name, lineno, "empty clip id"));
        }
        let mut record = ClipRecord::new(fields[0].as_str(), tags);
        record.audio_path = path_col
            .map(|c| PathBuf::from(&fields[c]))
            .filter(|p| !p.as_os_str().is_empty());
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateClip(record.id));
        }
        clips.push(record);
    }
    Ok(clips)
}

pub fn load_constraints(path: &Path, known: &HashSet<ClipId>) -> Result<Vec<TripletConstraint>> {
    parse_constraints(&read_text(path)?, &path.display().to_string(), known)
}

/// One triplet per non-blank line, ids separated by whitespace or commas.
/// File order and duplicates are preserved.
pub fn parse_constraints(
    text: &str,
    source_name: &str,
    known: &HashSet<ClipId>,
) -> Result<Vec<TripletConstraint>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let ids: Vec<&str> = line
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if ids.len() != 3 {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected 3 clip ids, found {}", ids.len()),
            ));
        }
        for id in &ids {
            if !known.contains(*id) {
                return Err(Error::UnknownClip {
                    source_name: source_name.to_owned(),
                    line: lineno,
                    id: (*id).to_owned(),
                });
            }
        }
        let c = TripletConstraint::new(ids[0], ids[1], ids[2])
            .map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        out.push(c);
    }
    Ok(out)
}

/// Reads every `fold<i>.train` / `fold<i>.test` pair in a directory, in
/// ascending numeric order of `i`.
pub fn load_folds(dir: &Path, known: &HashSet<ClipId>) -> Result<Vec<FoldAssignment>> {
    let mut pairs: BTreeMap<usize, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(rest) = name.strip_prefix("fold") else {
            continue;
        };
        let Some((num, ext)) = rest.split_once('.') else {
            continue;
        };
        let Ok(i) = num.parse::<usize>() else {
            continue;
        };
        let slot = pairs.entry(i).or_default();
        match ext {
            "train" => slot.0 = Some(path),
            "test" => slot.1 = Some(path),
            _ => {}
        }
    }
    if pairs.is_empty() {
        return Err(Error::Validation(format!(
            "no fold files in {}",
            dir.display()
        )));
    }
    pairs
        .into_iter()
        .enumerate()
        .map(|(index, (i, (train, test)))| {
            let train = train.ok_or_else(|| Error::Validation(format!("fold{i}.train missing")))?;
            let test = test.ok_or_else(|| Error::Validation(format!("fold{i}.test missing")))?;
            FoldAssignment::new(
                index,
                load_constraints(&train, known)?,
                load_constraints(&test, known)?,
            )
        })
        .collect()
}

pub fn write_constraints(path: &Path, constraints: &[TripletConstraint]) -> Result<()> {
    let mut text = String::new();
    for c in constraints {
        text.push_str(&format!("{c}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_annotations_tsv(path: &Path, clips: &[ClipRecord]) -> Result<()> {
    let mut text = String::new();
    for c in clips {
        let tags: Vec<&str> = c.tags.iter().map(String::as_str).collect();
        text.push_str(&format!("{}\t{}\n", c.id, tags.join(",")));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

const FEATURE_MAGIC: &str = "ADSMFV1";

/// Serializes a matrix as `ADSMFV1 <d> <rows>\n` followed by little-endian
/// f64 rows.
pub fn encode_features(m: &FeatureMatrix) -> Result<Vec<u8>> {
    if m.is_empty() {
        return Err(Error::Empty("feature matrix"));
    }
    let mut out = format!("{FEATURE_MAGIC} {} {}\n", m.dim(), m.rows()).into_bytes();
    out.reserve(m.as_slice().len() * 8);
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    let nl = bytes
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("feature file has no header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format("feature header is not UTF-8".into()))?;
    let mut parts = header.split(' ');
    if parts.next() != Some(FEATURE_MAGIC) {
        return Err(Error::Format(format!(
            "bad feature magic in header `{header}`"
        )));
    }
    let mut num = |what: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("feature header `{header}` lacks {what}")))
    };
    let dim = num("dimension")?;
    let rows = num("row count")?;
    let payload = &bytes[nl + 1..];
    let expected = dim
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("feature header sizes overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "header declares {rows}x{dim} ({expected} bytes), payload has {} bytes",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    FeatureMatrix::new(dim, data).map_err(|e| Error::Format(e.to_string()))
}

/// Comma-separated rows, no header; every row must have the same width.
pub fn parse_features_csv(text: &str, source_name: &str) -> Result<FeatureMatrix> {
    let mut dim = None;
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::Format(format!(
                    "{source_name}:{}: row has {} columns, expected {d}",
                    i + 1,
                    row.len()
                )))
            }
            Some(_) => {}
        }
        data.extend(row);
    }
    let dim = dim.ok_or(Error::Empty("feature CSV"))?;
    FeatureMatrix::new(dim, data)
}

/// Writes the binary `.fv` format.
pub fn export_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let bytes = encode_features(m)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a `.fv` file, or a `.csv` file through the CSV fallback.
pub fn import_features(path: &Path) -> Result<FeatureMatrix> {
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        return parse_features_csv(&read_text(path)?, &path.display().to_string());
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

/// Per-clip feature matrices keyed by clip id.
pub type FeatureStore = BTreeMap<ClipId, FeatureMatrix>;

/// Loads every `<clip_id>.fv` (or `.csv`) file in a directory.
pub fn load_feature_dir(dir: &Path) -> Result<FeatureStore> {
    let mut store = FeatureStore::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        let ext = path.extension().and_then(|e| e.to_str());
        if !matches!(ext, Some("fv") | Some("csv")) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let id = ClipId::from(stem);
        if store.contains_key(&id) {
            return Err(Error::DuplicateClip(id));
        }
        store.insert(id, import_features(&path)?);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn known(ids: &[&str]) -> HashSet<ClipId> {
        ids.iter().map(|s| ClipId::from(*s)).collect()
    }

    #[test]
    fn untagged_clip_is_retained() {
        let clips = parse_annotations_tsv("19920\t\n", "t").unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].id.as_str(), "19920");
        assert!(clips[0].tags.is_empty());
    }

    #[test]
    fn tags_are_split_trimmed_lowercased_deduplicated() {
        let clips = parse_annotations_tsv("3843\tindian,sitar\nx\ta,a,A \n", "t").unwrap();
        assert_eq!(
            clips[0].tags,
            BTreeSet::from(["indian".to_owned(), "sitar".to_owned()])
        );
        assert_eq!(clips[1].tags, BTreeSet::from(["a".to_owned()]));
    }

    #[test]
    fn annotation_errors() {
        match parse_annotations_tsv("a\tx\nbroken line\n", "ann") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_annotations_tsv("a\tx\na\ty\n", "ann"),
            Err(Error::DuplicateClip(_))
        ));
    }

    #[test]
    fn binary_matrix_annotations() {
        let text = "clip_id\tguitar\tHeavy Metal\tmp3_path\n2\t1\t0\tf/a.mp3\n6\t0\t0\tf/b.mp3\n";
        let clips = parse_annotations_matrix(text, "m").unwrap();
        assert_eq!(clips[0].tags, BTreeSet::from(["guitar".to_owned()]));
        assert_eq!(clips[0].audio_path.as_deref(), Some(Path::new("f/a.mp3")));
        assert!(clips[1].tags.is_empty());
        let csv = "clip_id,rock,pop\n1,1,1\n";
        let clips = parse_annotations_matrix(csv, "m").unwrap();
        assert_eq!(clips[0].tags.len(), 2);
        assert!(parse_annotations_matrix("clip_id,rock\n1,2\n", "m").is_err());
        assert!(parse_annotations_matrix("clip_id,rock\n1\n", "m").is_err());
    }

    #[test]
    fn tag_vocabulary_sorted_regardless_of_clip_order() {
        let a = vec![
            ClipRecord::new("1", ["rock", "pop"]),
            ClipRecord::new("2", ["ambient"]),
        ];
        let b = vec![a[1].clone(), a[0].clone()];
        let ca = Corpus::new(a, vec![], vec![]).unwrap();
        let cb = Corpus::new(b, vec![], vec![]).unwrap();
        assert_eq!(ca.tag_vocabulary(), ["ambient", "pop", "rock"]);
        assert_eq!(ca.tag_vocabulary(), cb.tag_vocabulary());
    }

    #[test]
    fn constraint_parsing() {
        let k = known(&["a", "b", "c", "d"]);
        let cs = parse_constraints("a b c\nb,a,c\n\na  d\tc\na b c\n", "c", &k).unwrap();
        assert_eq!(cs.len(), 4);
        assert_eq!(cs[0], TripletConstraint::new("a", "b", "c").unwrap());
        assert_eq!(cs[1].a.as_str(), "b");
        assert_eq!(cs[0], cs[3]);
        assert!(matches!(
            parse_constraints("a b a\n", "c", &k),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_constraints("a b\n", "c", &k),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_constraints("a b c d\n", "c", &k),
            Err(Error::Parse { .. })
        ));
        match parse_constraints("a b c\na b zz\n", "c", &k) {
            Err(Error::UnknownClip { id, line, .. }) => assert_eq!((id.as_str(), line), ("zz", 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn folds_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let k = known(&["a", "b", "c", "d"]);
        fs::write(dir.path().join("fold0.train"), "a b c\nb a c\n").unwrap();
        fs::write(dir.path().join("fold0.test"), "a d c\n").unwrap();
        let folds = load_folds(dir.path(), &k).unwrap();
        assert_eq!(folds.len(), 1);
        assert_eq!((folds[0].train.len(), folds[0].test.len()), (2, 1));

        fs::write(dir.path().join("fold1.train"), "a b c\n").unwrap();
        fs::write(dir.path().join("fold1.test"), "a b c\n").unwrap();
        assert!(matches!(
            load_folds(dir.path(), &k),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn corpus_rejects_unknown_constraint_clip() {
        let clips = vec![
            ClipRecord::new("a", ["x"]),
            ClipRecord::new("b", ["x"]),
            ClipRecord::new("c", ["y"]),
        ];
        let bad = TripletConstraint::new("a", "b", "z").unwrap();
        assert!(Corpus::new(clips, vec![bad], vec![]).is_err());
    }

    #[test]
    fn feature_round_trip_and_csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..39).map(|c| (r * 39 + c) as f64 * 0.1 - 2.0).collect())
            .collect();
        let m = FeatureMatrix::from_rows(&rows).unwrap();
        let path = dir.path().join("x.fv");
        export_features(&path, &m).unwrap();
        assert_eq!(import_features(&path).unwrap(), m);

        let csv: String = (0..4)
            .map(|r| {
                (0..24)
                    .map(|c| format!("{}", r + c))
                    .collect::<Vec<_>>()
                    .join(",")
                    + "\n"
            })
            .collect();
        let csv_path = dir.path().join("echo.csv");
        fs::write(&csv_path, csv).unwrap();
        let imported = import_features(&csv_path).unwrap();
        assert_eq!((imported.rows(), imported.dim()), (4, 24));
    }

    #[test]
    fn feature_format_errors() {
        let m = FeatureMatrix::from_rows(&vec![vec![1.0; 38]; 2]).unwrap();
        let mut bytes = encode_features(&m).unwrap();
        // claim 39 columns for a 38-column payload
        let body = bytes.split_off(bytes.iter().position(|&b| b == b'\n').unwrap() + 1);
        let mut lying = b"ADSMFV1 39 2\n".to_vec();
        lying.extend_from_slice(&body);
        assert!(matches!(decode_features(&lying), Err(Error::Format(_))));

        let good = encode_features(&m).unwrap();
        assert!(matches!(
            decode_features(&good[..good.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_features(b"NOPE 1 1\n"),
            Err(Error::Format(_))
        ));
        assert!(parse_features_csv("1,2,3\n4,5\n", "f").is_err());
        let empty = FeatureMatrix::new(3, vec![]).unwrap();
        assert!(encode_features(&empty).is_err());
    }

    proptest! {
        #[test]
        fn feature_encoding_is_bit_exact(dim in 1usize..40, rows in 1usize..20, seed in any::<u64>()) {
            let mut state = seed;
            let data: Vec<f64> = (0..dim * rows)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f64::from_bits(state >> 2) // finite: top two bits clear
                })
                .collect();
            let m = FeatureMatrix::new(dim, data).unwrap();
            let back = decode_features(&encode_features(&m).unwrap()).unwrap();
            prop_assert_eq!(
                back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn constraint_loading_is_total_and_ordered(n in 0usize..50, seed in any::<u64>()) {
            let ids = ["p", "q", "r", "s"];
            let k = known(&ids);
            let mut state = seed;
            let mut lines = Vec::new();
            for _ in 0..n {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                let rot = (state >> 33) as usize % 4;
                lines.push(format!("{} {} {}", ids[rot], ids[(rot + 1) % 4], ids[(rot + 2) % 4]));
            }
            let cs = parse_constraints(&lines.join("\n"), "p", &k).unwrap();
            prop_assert_eq!(cs.len(), n);
            for (c, l) in cs.iter().zip(&lines) {
                prop_assert_eq!(&c.to_string(), l);
            }
        }
    }
}
