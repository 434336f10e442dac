//! Scoring boundary for tubelets. A trained multi-label classifier would
//! sit here; the sources below replace it with a score table, a
//! ground-truth oracle or a fixed vector.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::bce_term;
use crate::model::{box_iou, ScoreVector, Track, Tubelet};
use crate::scorer::GroundTruthInstance;

/// Activity class names; class `k` (1-based) is `names[k - 1]`, index 0 is
/// background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Config("class catalog needs at least one class".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Config(format!("duplicate class name {dup:?}")));
        }
        Ok(ClassCatalog { names })
    }

    /// `C`, not counting background.
    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, class_id: usize) -> Option<&str> {
        class_id
            .checked_sub(1)
            .and_then(|i| self.names.get(i))
            .map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name).map(|i| i + 1)
    }

    pub fn class_ids(&self) -> impl Iterator<Item = usize> {
        1..=self.names.len()
    }
}

impl TryFrom<Vec<String>> for ClassCatalog {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        ClassCatalog::new(v)
    }
}

impl From<ClassCatalog> for Vec<String> {
    fn from(c: ClassCatalog) -> Self {
        c.names
    }
}

#[derive(Debug, Clone)]
pub enum ScoreSource {
    /// Clip-level vectors keyed by tubelet id.
    FileBacked(BTreeMap<String, ScoreVector>),
    /// Per-frame scores from ground truth: class `c` is 1 on frames where
    /// the tubelet box overlaps a class-`c` ground-truth box with IoU at
    /// least `iou_threshold`.
    Oracle {
        ground_truth: Vec<GroundTruthInstance>,
        iou_threshold: f64,
    },
    Constant(ScoreVector),
}

impl ScoreSource {
    pub fn oracle(ground_truth: Vec<GroundTruthInstance>) -> Self {
        ScoreSource::Oracle {
            ground_truth,
            iou_threshold: 0.5,
        }
    }

    /// Reads `tubelet_id,score_0,...,score_C`.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("tubelet_id") || headers.len() < 3 {
            return Err(Error::Parse(
                "score table header must be tubelet_id,score_0,...,score_C".into(),
            ));
        }
        let mut table = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            let id = record.get(0).unwrap_or_default().to_string();
            let scores = record
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{id}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            table.insert(id, ScoreVector::new(scores)?);
        }
        Ok(ScoreSource::FileBacked(table))
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }
}

/// Writes a file-backed table in the same CSV layout it is read from.
pub fn write_score_table(table: &BTreeMap<String, ScoreVector>, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let width = table.values().next().map(ScoreVector::len).unwrap_or(2);
    let mut header = vec!["tubelet_id".to_string()];
    header.extend((0..width).map(|c| format!("score_{c}")));
    w.write_record(&header)?;
    for (id, v) in table {
        let mut row = vec![id.clone()];
        row.extend(v.as_slice().iter().map(|s| s.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<score table>", e))?;
    Ok(())
}

/// Attach per-frame scores to a tubelet. Span and boxes are unchanged.
pub fn score_tubelet(t: &Tubelet, src: &ScoreSource, catalog: &ClassCatalog) -> Result<Tubelet> {
    let width = catalog.num_classes() + 1;
    let check = |v: &ScoreVector| {
        if v.len() == width {
            Ok(())
        } else {
            Err(Error::ScoreLength {
                expected: width,
                got: v.len(),
            })
        }
    };
    let frame_scores = match src {
        ScoreSource::Constant(v) => {
            check(v)?;
            vec![v.clone(); t.len()]
        }
        ScoreSource::FileBacked(table) => {
            let id = t.id.to_string();
            let v = table.get(&id).ok_or(Error::UnknownTubelet(id))?;
            check(v)?;
            vec![v.clone(); t.len()]
        }
        ScoreSource::Oracle {
            ground_truth,
            iou_threshold,
        } => oracle_scores(t, ground_truth, *iou_threshold, catalog.num_classes()),
    };
    t.with_scores(frame_scores)
}

fn oracle_scores(
    t: &Tubelet,
    ground_truth: &[GroundTruthInstance],
    iou_threshold: f64,
    num_classes: usize,
) -> Vec<ScoreVector> {
    let relevant: Vec<&GroundTruthInstance> = ground_truth
        .iter()
        .filter(|g| {
            g.video_id == t.id.video
                && g.start_frame <= t.end_frame()
                && g.end_frame >= t.start_frame()
                && (1..=num_classes).contains(&g.class_id)
        })
        .collect();
    t.boxes()
        .iter()
        .map(|b| {
            let mut v = vec![0.0; num_classes + 1];
            for g in &relevant {
                if let Some(gb) = g.box_at(b.frame) {
                    if box_iou(b, gb) >= iou_threshold {
                        v[g.class_id] = 1.0;
                    }
                }
            }
            let fg = v[1..].iter().cloned().fold(0.0, f64::max);
            v[0] = 1.0 - fg;
            ScoreVector::from_unchecked(v)
        })
        .collect()
}

/// Summed BCE over the `C + 1` outputs of a multi-label classifier.
pub fn multilabel_bce(target: &ScoreVector, predicted: &ScoreVector) -> Result<f64> {
    if target.len() != predicted.len() {
        return Err(Error::ScoreLength {
            expected: target.len(),
            got: predicted.len(),
        });
    }
    Ok(target
        .as_slice()
        .iter()
        .zip(predicted.as_slice())
        .map(|(&t, &p)| bce_term(t, p))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FrameBox, TubeletId};

    fn catalog() -> ClassCatalog {
        ClassCatalog::new(["walking", "standing"]).unwrap()
    }

    fn tubelet(start: u32, end: u32) -> Tubelet {
        let boxes = (start..=end)
            .map(|f| FrameBox::new(f, 10, 10, 30, 40).unwrap())
            .collect();
        Tubelet::with_constant_scores(TubeletId::new("v1", 0, 0), boxes, ScoreVector::zeros(3)).unwrap()
    }

    fn gt(class_id: usize, start: u32, end: u32) -> GroundTruthInstance {
        GroundTruthInstance {
            video_id: "v1".into(),
            class_id,
            start_frame: start,
            end_frame: end,
            boxes: Some(
                (start..=end)
                    .map(|f| FrameBox::new(f, 10, 10, 30, 40).unwrap())
                    .collect(),
            ),
        }
    }

    #[test]
    fn catalog_rules() {
        assert!(ClassCatalog::new(Vec::<String>::new()).is_err());
        assert!(ClassCatalog::new(["a", "a"]).is_err());
        let c = catalog();
        assert_eq!(c.num_classes(), 2);
        assert_eq!(c.name(1), Some("walking"));
        assert_eq!(c.name(0), None);
        assert_eq!(c.id_of("standing"), Some(2));
    }

    #[test]
    fn constant_source_broadcasts() {
        let v = ScoreVector::new(vec![0.1, 0.7, 0.3]).unwrap();
        let t = tubelet(0, 15);
        let s = score_tubelet(&t, &ScoreSource::Constant(v.clone()), &catalog()).unwrap();
        assert!(s.frame_scores().iter().all(|f| *f == v));
        assert_eq!(s.boxes(), t.boxes());
        let short = ScoreVector::new(vec![0.1, 0.7]).unwrap();
        assert!(score_tubelet(&t, &ScoreSource::Constant(short), &catalog()).is_err());
    }

    #[test]
    fn oracle_full_match() {
        let src = ScoreSource::oracle(vec![gt(1, 0, 15)]);
        let s = score_tubelet(&tubelet(0, 15), &src, &catalog()).unwrap();
        for f in s.frame_scores() {
            assert_eq!(f.as_slice(), &[0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn oracle_partial_match() {
        let src = ScoreSource::oracle(vec![gt(1, 0, 9)]);
        let s = score_tubelet(&tubelet(0, 15), &src, &catalog()).unwrap();
        for (k, f) in s.frame_scores().iter().enumerate() {
            if k <= 9 {
                assert_eq!(f.as_slice(), &[0.0, 1.0, 0.0]);
            } else {
                assert_eq!(f.as_slice(), &[1.0, 0.0, 0.0]);
            }
        }
        // idempotent
        let again = score_tubelet(&s, &src, &catalog()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn oracle_ignores_low_overlap_and_other_videos() {
        let mut far = gt(2, 0, 15);
        far.boxes = Some((0..=15).map(|f| FrameBox::new(f, 25, 10, 60, 40).unwrap()).collect());
        let mut other = gt(1, 0, 15);
        other.video_id = "v2".into();
        let src = ScoreSource::oracle(vec![far, other]);
        let s = score_tubelet(&tubelet(0, 15), &src, &catalog()).unwrap();
        assert!(s.frame_scores().iter().all(|f| f.as_slice() == [1.0, 0.0, 0.0]));
    }

    #[test]
    fn file_backed_lookup_and_unknown_id() {
        let csv = "tubelet_id,score_0,score_1,score_2\nv1/0/0,0.2,0.9,0.1\n";
        let src = ScoreSource::from_csv_reader(csv.as_bytes()).unwrap();
        let s = score_tubelet(&tubelet(0, 3), &src, &catalog()).unwrap();
        assert_eq!(s.frame_scores()[3].as_slice(), &[0.2, 0.9, 0.1]);
        let mut t = tubelet(0, 3);
        t.id = TubeletId::new("v1", 4, 2);
        match score_tubelet(&t, &src, &catalog()) {
            Err(Error::UnknownTubelet(id)) => assert_eq!(id, "v1/4/2"),
            other => panic!("{other:?}"),
        }
        assert!(ScoreSource::from_csv_reader("id,a\nx,0.1\n".as_bytes()).is_err());
    }

    #[test]
    fn score_table_round_trip() {
        let mut table = BTreeMap::new();
        table.insert("v/0/1".to_string(), ScoreVector::new(vec![0.25, 0.5, 1.0]).unwrap());
        let mut buf = Vec::new();
        write_score_table(&table, &mut buf).unwrap();
        match ScoreSource::from_csv_reader(buf.as_slice()).unwrap() {
            ScoreSource::FileBacked(t) => assert_eq!(t, table),
            _ => unreachable!(),
        }
    }

    #[test]
    fn multilabel_bce_examples() {
        let one_hot = ScoreVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        let l = multilabel_bce(&one_hot, &one_hot).unwrap();
        assert!(l > 0.0 && l < 3.0 * 1.0001e-7, "{l}");
        let half = ScoreVector::new(vec![0.5; 3]).unwrap();
        assert!((multilabel_bce(&one_hot, &half).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);
        let t = ScoreVector::new(vec![0.0, 1.0]).unwrap();
        let p = ScoreVector::new(vec![0.2, 0.8]).unwrap();
        let l = multilabel_bce(&t, &p).unwrap();
        assert!((l - (-2.0 * 0.8f64.ln())).abs() < 1e-12);
        assert!((l - 0.4463).abs() < 1e-4);
        assert!(multilabel_bce(&t, &half).is_err());
    }
}
