//! Deterministic train/validation/test partitioning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SPLIT_ITEMS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}` (expected train, val or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    /// Id of the original image; augmented variants share it.
    pub source: String,
    pub annotation: String,
    pub image: String,
    pub augmentation: String,
}

impl DatasetItem {
    pub fn original(id: &str) -> Self {
        Self {
            id: id.to_string(),
            source: id.to_string(),
            annotation: format!("annotations/{id}.json"),
            image: format!("images/{id}.png"),
            augmentation: "none".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    #[serde(flatten)]
    pub item: DatasetItem,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> impl Iterator<Item = &DatasetItem> {
        self.items.iter().filter(move |m| m.split == split).map(|m| &m.item)
    }

    pub fn count(&self, split: Split) -> usize {
        self.ids(split).count()
    }
}

/// Split sizes for `n` sources: floor, floor, remainder.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let train = n * 70 / 100;
    let val = n * 20 / 100;
    [train, val, n - train - val]
}

/// Shuffles sources with `seed` and assigns 70/20/10. Input order does not
/// matter: sources are sorted before shuffling.
pub fn split_dataset(items: &[DatasetItem], seed: u64) -> Result<DatasetManifest> {
    let mut sources: Vec<&str> = items.iter().map(|i| i.source.as_str()).collect();
    sources.sort_unstable();
    sources.dedup();
    if sources.len() < MIN_SPLIT_ITEMS {
        return Err(Error::TooFewItems {
            needed: MIN_SPLIT_ITEMS,
            found: sources.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sources.shuffle(&mut rng);
    let [train, val, _] = split_sizes(sources.len());
    let tag: BTreeMap<&str, Split> = sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (*s, split)
        })
        .collect();
    let mut out: Vec<ManifestItem> = items
        .iter()
        .map(|i| ManifestItem {
            item: i.clone(),
            split: tag[i.source.as_str()],
        })
        .collect();
    out.sort_by(|a, b| a.item.id.cmp(&b.item.id));
    Ok(DatasetManifest {
        seed,
        fractions: [0.7, 0.2, 0.1],
        items: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<DatasetItem> {
        (0..n).map(|i| DatasetItem::original(&format!("img{i:04}"))).collect()
    }

    #[test]
    fn sizes_follow_floor_floor_remainder() {
        assert_eq!(split_sizes(100), [70, 20, 10]);
        assert_eq!(split_sizes(101), [70, 20, 11]);
        let m = split_dataset(&items(101), 3).unwrap();
        assert_eq!(
            [m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)],
            [70, 20, 11]
        );
    }

    #[test]
    fn too_few_items() {
        assert!(matches!(
            split_dataset(&items(9), 0),
            Err(Error::TooFewItems { found: 9, .. })
        ));
    }

    #[test]
    fn variants_share_their_source_split() {
        let mut all = items(20);
        for i in 0..20 {
            let mut v = DatasetItem::original(&format!("img{i:04}_r90"));
            v.source = format!("img{i:04}");
            v.augmentation = "rot90".into();
            all.push(v);
        }
        let m = split_dataset(&all, 11).unwrap();
        let split_of = |id: &str| m.items.iter().find(|x| x.item.id == id).unwrap().split;
        for i in 0..20 {
            assert_eq!(split_of(&format!("img{i:04}")), split_of(&format!("img{i:04}_r90")));
        }
        assert_eq!(m.count(Split::Train), 28);
    }
}
