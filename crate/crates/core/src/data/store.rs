use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::annotation::{consolidate_labels, AnnotationDoc};
use super::records::FrameRecord;
use super::{DataError, Result};
use crate::au::AuId;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsertOutcome {
    Created,
    Updated,
    /// The stored document was already identical; nothing was written.
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub per_annotator: BTreeMap<String, usize>,
    pub total_frames: usize,
    pub consolidated_frames: usize,
}

/// Consolidated labels for a list of frames. Rows of unannotated frames are
/// zero with a clear mask bit and must be excluded from any loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub frame_ids: Vec<String>,
    pub au_ids: Vec<AuId>,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl LabelMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        let a = self.au_ids.len();
        &self.values[i * a..(i + 1) * a]
    }

    /// `[n_frames, n_aus]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frame_ids.len(), self.au_ids.len()], self.values.clone()).expect("label shape")
    }

    pub fn annotated(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

type DocIndex = BTreeMap<String, BTreeMap<String, AnnotationDoc>>;

/// Annotation documents keyed by `(frame_id, annotator_id)`, optionally
/// backed by an append-only JSON-lines journal. Writers are serialized;
/// readers take a shared lock and see a document either before or after an
/// upsert.
#[derive(Debug)]
pub struct AnnotationStore {
    frames: BTreeMap<String, FrameRecord>,
    docs: RwLock<DocIndex>,
    journal: Mutex<Option<(PathBuf, File)>>,
}

impl AnnotationStore {
    pub fn in_memory(frames: Vec<FrameRecord>) -> Result<Self> {
        Ok(Self {
            frames: index_frames(frames)?,
            docs: RwLock::new(BTreeMap::new()),
            journal: Mutex::new(None),
        })
    }

    /// Opens the journal at `path`, creating it if needed, and replays it.
    /// A final line without a newline that fails to parse is treated as a
    /// torn write and cut off.
    pub fn open(path: impl AsRef<Path>, frames: Vec<FrameRecord>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let frames = index_frames(frames)?;
        let mut docs = DocIndex::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            let mut good_len = 0;
            for (n, line) in text.split_inclusive('\n').enumerate() {
                let terminated = line.ends_with('\n');
                if line.trim().is_empty() {
                    good_len += line.len();
                    continue;
                }
                let doc: AnnotationDoc = match serde_json::from_str(line.trim_end()) {
                    Ok(d) => d,
                    Err(_) if !terminated => break,
                    Err(source) => return Err(DataError::Journal { line: n + 1, source }),
                };
                doc.validate()?;
                if !frames.contains_key(&doc.frame_id) {
                    return Err(DataError::UnknownFrame(doc.frame_id));
                }
                insert(&mut docs, doc);
                good_len += line.len();
                if !terminated {
                    // complete record missing only its newline
                    std::fs::OpenOptions::new().append(true).open(&path)?.write_all(b"\n")?;
                    good_len += 1;
                }
            }
            let file = OpenOptions::new().write(true).open(&path)?;
            if (file.metadata()?.len() as usize) > good_len {
                file.set_len(good_len as u64)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            frames,
            docs: RwLock::new(docs),
            journal: Mutex::new(Some((path, file))),
        })
    }

    pub fn journal_path(&self) -> Option<PathBuf> {
        self.journal
            .lock()
            .expect("journal lock")
            .as_ref()
            .map(|(p, _)| p.clone())
    }

    pub fn frame(&self, frame_id: &str) -> Option<&FrameRecord> {
        self.frames.get(frame_id)
    }

    /// Frames in ascending id order.
    pub fn frames(&self) -> impl Iterator<Item = &FrameRecord> {
        self.frames.values()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn upsert(&self, doc: AnnotationDoc) -> Result<UpsertOutcome> {
        doc.validate()?;
        if !self.frames.contains_key(&doc.frame_id) {
            return Err(DataError::UnknownFrame(doc.frame_id));
        }
        let mut journal = self.journal.lock().expect("journal lock");
        let outcome = match self.get(&doc.frame_id, &doc.annotator_id) {
            Some(old) if old == doc => return Ok(UpsertOutcome::Unchanged),
            Some(_) => UpsertOutcome::Updated,
            None => UpsertOutcome::Created,
        };
        if let Some((_, file)) = journal.as_mut() {
            let mut line = serde_json::to_vec(&doc)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        insert(&mut self.docs.write().expect("store lock"), doc);
        Ok(outcome)
    }

    pub fn get(&self, frame_id: &str, annotator_id: &str) -> Option<AnnotationDoc> {
        self.docs
            .read()
            .expect("store lock")
            .get(frame_id)?
            .get(annotator_id)
            .cloned()
    }

    /// Documents for one frame, ordered by annotator id.
    pub fn docs_for(&self, frame_id: &str) -> Vec<AnnotationDoc> {
        self.docs
            .read()
            .expect("store lock")
            .get(frame_id)
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default()
    }

    /// Every document ordered by `(frame_id, annotator_id)`.
    pub fn all_docs(&self) -> Vec<AnnotationDoc> {
        self.docs
            .read()
            .expect("store lock")
            .values()
            .flat_map(|m| m.values().cloned())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.docs.read().expect("store lock").values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lowest-id frame this annotator has not labelled.
    pub fn next_frame(&self, annotator_id: &str) -> Option<&FrameRecord> {
        let docs = self.docs.read().expect("store lock");
        self.frames
            .values()
            .find(|f| !docs.get(&f.frame_id).is_some_and(|m| m.contains_key(annotator_id)))
    }

    pub fn progress(&self) -> Progress {
        let docs = self.docs.read().expect("store lock");
        let mut per_annotator = BTreeMap::new();
        for doc in docs.values().flat_map(BTreeMap::values) {
            *per_annotator.entry(doc.annotator_id.clone()).or_insert(0) += 1;
        }
        Progress {
            per_annotator,
            total_frames: self.frames.len(),
            consolidated_frames: docs.values().filter(|m| !m.is_empty()).count(),
        }
    }

    /// Majority-vote labels, or `None` if nobody has annotated the frame.
    pub fn consolidated(&self, frame_id: &str) -> Result<Option<BTreeMap<AuId, bool>>> {
        if !self.frames.contains_key(frame_id) {
            return Err(DataError::UnknownFrame(frame_id.to_string()));
        }
        let docs = self.docs_for(frame_id);
        if docs.is_empty() {
            return Ok(None);
        }
        consolidate_labels(&docs).map(Some)
    }

    /// Consolidated presence for `aus`, one row per requested frame in order.
    pub fn query_labels<S: AsRef<str>>(&self, frame_ids: &[S], aus: &[AuId]) -> Result<LabelMatrix> {
        let mut values = Vec::with_capacity(frame_ids.len() * aus.len());
        let mut mask = Vec::with_capacity(frame_ids.len());
        for id in frame_ids {
            match self.consolidated(id.as_ref())? {
                Some(labels) => {
                    values.extend(aus.iter().map(|a| if labels.get(a) == Some(&true) { 1.0 } else { 0.0 }));
                    mask.push(true);
                }
                None => {
                    values.extend(std::iter::repeat_n(0.0, aus.len()));
                    mask.push(false);
                }
            }
        }
        Ok(LabelMatrix {
            frame_ids: frame_ids.iter().map(|s| s.as_ref().to_string()).collect(),
            au_ids: aus.to_vec(),
            values,
            mask,
        })
    }

    /// Rewrites the journal with one line per live document and swaps it in
    /// atomically. No-op for in-memory stores.
    pub fn compact(&self) -> Result<()> {
        let mut journal = self.journal.lock().expect("journal lock");
        let Some((path, _)) = journal.as_ref() else {
            return Ok(());
        };
        let path = path.clone();
        let tmp = path.with_extension("compact.tmp");
        {
            let mut f = File::create(&tmp)?;
            for doc in self.all_docs() {
                let mut line = serde_json::to_vec(&doc)?;
                line.push(b'\n');
                f.write_all(&line)?;
            }
            f.sync_all()?;
        }
        std::fs::rename(&tmp, &path)?;
        let file = OpenOptions::new().append(true).open(&path)?;
        *journal = Some((path, file));
        Ok(())
    }
}

fn index_frames(frames: Vec<FrameRecord>) -> Result<BTreeMap<String, FrameRecord>> {
    let mut out = BTreeMap::new();
    for f in frames {
        if f.frame_id.is_empty() {
            return Err(DataError::Empty("frame_id"));
        }
        if out.contains_key(&f.frame_id) {
            return Err(DataError::DuplicateFrame(f.frame_id));
        }
        out.insert(f.frame_id.clone(), f);
    }
    Ok(out)
}

fn insert(docs: &mut DocIndex, doc: AnnotationDoc) {
    docs.entry(doc.frame_id.clone())
        .or_default()
        .insert(doc.annotator_id.clone(), doc);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AuLabel;
    use chrono::{DateTime, Utc};

    fn frames(n: usize) -> Vec<FrameRecord> {
        (0..n)
            .map(|i| {
                FrameRecord::new(
                    format!("f{i:02}"),
                    "p",
                    DateTime::<Utc>::UNIX_EPOCH,
                    format!("f{i}.png"),
                )
            })
            .collect()
    }

    fn doc(frame: &str, who: &str, present: &[AuId]) -> AnnotationDoc {
        let labels = present.iter().map(|&a| (a, AuLabel::present())).collect();
        AnnotationDoc::new(frame, who, labels, DateTime::UNIX_EPOCH).unwrap()
    }

    #[test]
    fn upsert_outcomes() {
        let s = AnnotationStore::in_memory(frames(2)).unwrap();
        assert_eq!(s.upsert(doc("f00", "a", &[25])).unwrap(), UpsertOutcome::Created);
        assert_eq!(s.upsert(doc("f00", "a", &[25])).unwrap(), UpsertOutcome::Unchanged);
        assert_eq!(s.upsert(doc("f00", "a", &[26])).unwrap(), UpsertOutcome::Updated);
        assert_eq!(s.len(), 1);
        assert!(s.get("f00", "a").unwrap().is_present(26));
        assert!(matches!(s.upsert(doc("zz", "a", &[])), Err(DataError::UnknownFrame(_))));
    }

    #[test]
    fn queues_are_per_annotator() {
        let s = AnnotationStore::in_memory(frames(2)).unwrap();
        assert_eq!(s.next_frame("a").unwrap().frame_id, "f00");
        s.upsert(doc("f00", "a", &[])).unwrap();
        assert_eq!(s.next_frame("a").unwrap().frame_id, "f01");
        assert_eq!(s.next_frame("b").unwrap().frame_id, "f00");
        s.upsert(doc("f01", "a", &[])).unwrap();
        assert!(s.next_frame("a").is_none());
    }

    #[test]
    fn query_masks_unannotated_frames() {
        let s = AnnotationStore::in_memory(frames(3)).unwrap();
        s.upsert(doc("f00", "a", &[25, 43])).unwrap();
        s.upsert(doc("f02", "a", &[26])).unwrap();
        let m = s.query_labels(&["f00", "f01", "f02"], &[25, 26, 43]).unwrap();
        assert_eq!(m.mask, vec![true, false, true]);
        assert_eq!(m.values, vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(m.to_tensor().shape(), &[3, 3]);
        assert!(matches!(
            s.query_labels(&["nope"], &[25]),
            Err(DataError::UnknownFrame(_))
        ));
    }

    #[test]
    fn progress_counts() {
        let s = AnnotationStore::in_memory(frames(3)).unwrap();
        assert_eq!(
            s.progress(),
            Progress {
                per_annotator: BTreeMap::new(),
                total_frames: 3,
                consolidated_frames: 0
            }
        );
        s.upsert(doc("f00", "a", &[])).unwrap();
        s.upsert(doc("f00", "b", &[])).unwrap();
        s.upsert(doc("f01", "a", &[])).unwrap();
        let p = s.progress();
        assert_eq!(p.per_annotator["a"], 2);
        assert_eq!(p.per_annotator["b"], 1);
        assert_eq!(p.consolidated_frames, 2);
    }

    #[test]
    fn torn_tail_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        {
            let s = AnnotationStore::open(&path, frames(2)).unwrap();
            s.upsert(doc("f00", "a", &[25])).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"frame_id":"f01","annot"#).unwrap();
        drop(f);
        let s = AnnotationStore::open(&path, frames(2)).unwrap();
        assert_eq!(s.len(), 1);
        s.upsert(doc("f01", "a", &[])).unwrap();
        drop(s);
        let s = AnnotationStore::open(&path, frames(2)).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(
            AnnotationStore::open(&path, frames(1)),
            Err(DataError::Journal { line: 1, .. })
        ));
    }
}
