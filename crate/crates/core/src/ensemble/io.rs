//! Model file (`CVMD`).
//!
//! ```text
//! magic "CVMD" | u32 version | u8 kind tag | u32 feature_dim
//! u32 hyperparameter block length | hyperparameter block
//! f64 base score | u32 k | k x f64 loss curve
//! u32 members | members x (f64 weight, u32 root offset, u32 node count)
//! u32 pool size | pool nodes
//! u32 CRC32 of everything before it
//! ```
//!
//! Pool nodes are `u8 0, u32 feature, f64 threshold, u32 left, u32 right`
//! (children as absolute pool offsets), `u8 1, f64 p0, f64 p1` (class leaf)
//! or `u8 2, f64 score`. Little-endian throughout. Training time is not
//! stored, so identical training runs produce identical files.

use std::path::Path;

use super::{ClassifierKind, EnsembleConfig, Member, TrainedModel};
use crate::error::{Error, Result};
use crate::tree::{FeatureSubsample, LeafValue, Tree, TreeNode};

pub const MODEL_FILE_MAGIC: &[u8; 4] = b"CVMD";
pub const MODEL_FILE_VERSION: u32 = 1;

const WHAT: &str = "model file";

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }
}

fn write_config(w: &mut Writer, c: &EnsembleConfig) -> Result<()> {
    w.len32(c.n_estimators)?;
    w.f64(c.learning_rate);
    match c.max_depth {
        Some(d) => {
            w.u8(1);
            w.len32(d)?;
        }
        None => {
            w.u8(0);
            w.u32(0);
        }
    }
    w.len32(c.num_leaves)?;
    w.len32(c.n_bins)?;
    w.f64(c.subsample_ratio);
    w.u8(c.bootstrap as u8);
    let (tag, count) = match c.feature_subsample {
        FeatureSubsample::All => (0, 0),
        FeatureSubsample::Sqrt => (1, 0),
        FeatureSubsample::Count(k) => (2, k),
    };
    w.u8(tag);
    w.len32(count)?;
    w.u64(c.rng_seed);
    w.f64(c.l2_leaf_penalty);
    w.len32(c.min_leaf)?;
    w.f64(c.min_child_weight);
    Ok(())
}

pub fn model_write(m: &TrainedModel) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MODEL_FILE_MAGIC);
    w.u32(MODEL_FILE_VERSION);
    w.u8(m.kind.tag());
    w.len32(m.feature_dim)?;

    let mut block = Writer::default();
    write_config(&mut block, &m.config)?;
    w.len32(block.0.len())?;
    w.0.extend_from_slice(&block.0);

    w.f64(m.base_score);
    w.len32(m.loss_curve.len())?;
    for &l in &m.loss_curve {
        w.f64(l);
    }

    w.len32(m.members.len())?;
    let mut offset = 0usize;
    for member in &m.members {
        w.f64(member.weight);
        w.len32(offset)?;
        w.len32(member.tree.nodes().len())?;
        offset += member.tree.nodes().len();
    }
    w.len32(offset)?;
    let mut base = 0usize;
    for member in &m.members {
        for node in member.tree.nodes() {
            match *node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    w.u8(0);
                    w.len32(feature)?;
                    w.f64(threshold);
                    w.len32(base + left as usize)?;
                    w.len32(base + right as usize)?;
                }
                TreeNode::Leaf(LeafValue::Class(p)) => {
                    w.u8(1);
                    w.f64(p[0]);
                    w.f64(p[1]);
                }
                TreeNode::Leaf(LeafValue::Score(s)) => {
                    w.u8(2);
                    w.f64(s);
                }
            }
        }
        base += member.tree.nodes().len();
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    Ok(w.0)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::Format {
                what: WHAT,
                message: format!("truncated at offset {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn malformed(&self, message: impl Into<String>) -> Error {
        Error::Format {
            what: WHAT,
            message: format!("{} (offset {})", message.into(), self.pos),
        }
    }
}

fn read_config(r: &mut Reader<'_>) -> Result<EnsembleConfig> {
    let n_estimators = r.usize()?;
    let learning_rate = r.f64()?;
    let has_depth = r.u8()?;
    let depth = r.usize()?;
    let max_depth = match has_depth {
        0 => None,
        1 => Some(depth),
        t => return Err(r.malformed(format!("max_depth flag {t}"))),
    };
    let num_leaves = r.usize()?;
    let n_bins = r.usize()?;
    let subsample_ratio = r.f64()?;
    let bootstrap = match r.u8()? {
        0 => false,
        1 => true,
        t => return Err(r.malformed(format!("bootstrap flag {t}"))),
    };
    let fs_tag = r.u8()?;
    let fs_count = r.usize()?;
    let feature_subsample = match fs_tag {
        0 => FeatureSubsample::All,
        1 => FeatureSubsample::Sqrt,
        2 => FeatureSubsample::Count(fs_count),
        t => return Err(r.malformed(format!("feature subsample tag {t}"))),
    };
    Ok(EnsembleConfig {
        n_estimators,
        learning_rate,
        max_depth,
        num_leaves,
        n_bins,
        subsample_ratio,
        bootstrap,
        feature_subsample,
        rng_seed: r.u64()?,
        l2_leaf_penalty: r.f64()?,
        min_leaf: r.usize()?,
        min_child_weight: r.f64()?,
    })
}

pub fn model_read(buf: &[u8]) -> Result<TrainedModel> {
    if buf.len() < 8 || &buf[..4] != MODEL_FILE_MAGIC {
        return Err(Error::Format {
            what: WHAT,
            message: "bad magic (expected CVMD)".into(),
        });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != MODEL_FILE_VERSION {
        return Err(Error::Version {
            what: "model-file",
            found: version,
            expected: MODEL_FILE_VERSION,
        });
    }
    if buf.len() < 12 {
        return Err(Error::Format {
            what: WHAT,
            message: format!("truncated at offset {}", buf.len()),
        });
    }
    let crc_at = buf.len() - 4;
    let stored = u32::from_le_bytes(buf[crc_at..].try_into().unwrap());
    let computed = crc32fast::hash(&buf[..crc_at]);
    if stored != computed {
        return Err(Error::Checksum {
            offset: crc_at,
            stored,
            computed,
        });
    }

    let mut r = Reader {
        buf: &buf[..crc_at],
        pos: 8,
    };
    let tag = r.u8()?;
    let kind = ClassifierKind::from_tag(tag)
        .ok_or_else(|| Error::Format {
            what: WHAT,
            message: format!("unknown kind tag {tag} at offset 8"),
        })?;
    let feature_dim = r.usize()?;
    let block_len = r.usize()?;
    let block_start = r.pos;
    let config = read_config(&mut r)?;
    if r.pos - block_start != block_len {
        return Err(r.malformed("hyperparameter block length mismatch"));
    }
    let base_score = r.f64()?;
    let curve_len = r.usize()?;
    let loss_curve = (0..curve_len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;

    let n_members = r.usize()?;
    let mut layout = Vec::with_capacity(n_members.min(buf.len()));
    for _ in 0..n_members {
        layout.push((r.f64()?, r.usize()?, r.usize()?));
    }
    let pool_len = r.usize()?;
    let mut pool = Vec::with_capacity(pool_len.min(buf.len()));
    for _ in 0..pool_len {
        let node = match r.u8()? {
            0 => {
                let feature = r.usize()?;
                let threshold = r.f64()?;
                let (left, right) = (r.u32()?, r.u32()?);
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                }
            }
            1 => TreeNode::Leaf(LeafValue::Class([r.f64()?, r.f64()?])),
            2 => TreeNode::Leaf(LeafValue::Score(r.f64()?)),
            t => return Err(r.malformed(format!("node tag {t}"))),
        };
        pool.push(node);
    }
    if r.pos != r.buf.len() {
        return Err(r.malformed("trailing bytes before checksum"));
    }

    let mut members = Vec::with_capacity(layout.len());
    for (i, (weight, root, count)) in layout.into_iter().enumerate() {
        let end = root
            .checked_add(count)
            .filter(|&e| e <= pool.len())
            .ok_or_else(|| r.malformed(format!("member {i} exceeds the node pool")))?;
        let mut nodes = pool[root..end].to_vec();
        for node in &mut nodes {
            if let TreeNode::Split { left, right, .. } = node {
                let rel = |c: u32| {
                    (c as usize)
                        .checked_sub(root)
                        .filter(|&v| v < count)
                        .map(|v| v as u32)
                };
                match (rel(*left), rel(*right)) {
                    (Some(l), Some(rr)) => {
                        *left = l;
                        *right = rr;
                    }
                    _ => return Err(r.malformed(format!("member {i} child offset out of range"))),
                }
            }
        }
        let tree = Tree::from_nodes(nodes, feature_dim)
            .map_err(|e| r.malformed(format!("member {i}: {e}")))?;
        members.push(Member { tree, weight });
    }

    Ok(TrainedModel {
        kind,
        feature_dim,
        config,
        members,
        base_score,
        loss_curve,
        train_time_s: 0.0,
    })
}

pub fn model_save(m: &TrainedModel, path: &Path) -> Result<()> {
    let bytes = model_write(m)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn model_load(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_read(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::train;
    use crate::synthetic::reference_dataset;

    fn small(kind: ClassifierKind) -> TrainedModel {
        let cfg = EnsembleConfig {
            n_estimators: 5,
            ..EnsembleConfig::for_kind(kind)
        };
        train(kind, &reference_dataset(42), &cfg).unwrap()
    }

    #[test]
    fn every_kind_round_trips() {
        for kind in ClassifierKind::ALL {
            let m = small(kind);
            let back = model_read(&model_write(&m).unwrap()).unwrap();
            assert_eq!(back.members, m.members, "{kind}");
            assert_eq!(back.config, m.config);
            assert_eq!(back.kind, kind);
            assert_eq!(back.base_score.to_bits(), m.base_score.to_bits());
            assert_eq!(back.loss_curve, m.loss_curve);
        }
    }

    #[test]
    fn corrupted_byte_fails_checksum_with_offset() {
        let mut bytes = model_write(&small(ClassifierKind::RandomForest)).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = model_read(&bytes).unwrap_err();
        let at = bytes.len() - 4;
        assert!(matches!(err, Error::Checksum { offset, .. } if offset == at));
        assert!(err.to_string().contains(&format!("offset {at}")), "{err}");
    }

    #[test]
    fn unknown_kind_tag_is_rejected() {
        let mut bytes = model_write(&small(ClassifierKind::DecisionTree)).unwrap();
        bytes[8] = 77;
        let at = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..at]);
        bytes[at..].copy_from_slice(&crc.to_le_bytes());
        let err = model_read(&bytes).unwrap_err();
        assert!(err.to_string().contains("unknown kind tag 77"), "{err}");
    }

    #[test]
    fn version_and_truncation() {
        let bytes = model_write(&small(ClassifierKind::AdaBoost)).unwrap();
        let mut v2 = bytes.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(model_read(&v2), Err(Error::Version { found: 2, .. })));
        for cut in [0, 5, 11, bytes.len() / 3, bytes.len() - 1] {
            assert!(model_read(&bytes[..cut]).is_err());
        }
    }
}
