use std::collections::{BTreeMap, BTreeSet};

use super::IngestError;

pub type Rgb = [u8; 3];

/// Label index to outline color; colors must be pairwise distinct.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct Palette(BTreeMap<u32, Rgb>);

impl Palette {
    pub fn new(colors: BTreeMap<u32, Rgb>) -> Result<Self, IngestError> {
        let p = Palette(colors);
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let mut seen = BTreeSet::new();
        for (label, c) in &self.0 {
            if !seen.insert(*c) {
                return Err(IngestError::DuplicatePaletteColor { label: *label, color: *c });
            }
        }
        Ok(())
    }

    pub fn get(&self, label: u32) -> Option<Rgb> {
        self.0.get(&label).copied()
    }

    pub fn color(&self, label: u32) -> Result<Rgb, IngestError> {
        self.get(label).ok_or(IngestError::UnknownLabel(label))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, Rgb)> + '_ {
        self.0.iter().map(|(l, c)| (*l, *c))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The fixed table colors are named from, in tie-breaking order.
pub const NAMED_COLORS: [(&str, Rgb); 16] = [
    ("black", [0, 0, 0]),
    ("white", [255, 255, 255]),
    ("gray", [128, 128, 128]),
    ("red", [255, 0, 0]),
    ("maroon", [128, 0, 0]),
    ("green", [0, 255, 0]),
    ("dark green", [0, 128, 0]),
    ("blue", [0, 0, 255]),
    ("navy", [0, 0, 128]),
    ("yellow", [255, 255, 0]),
    ("olive", [128, 128, 0]),
    ("cyan", [0, 255, 255]),
    ("teal", [0, 128, 128]),
    ("magenta", [255, 0, 255]),
    ("purple", [128, 0, 128]),
    ("orange", [255, 165, 0]),
];

/// Nearest entry of [`NAMED_COLORS`] in squared RGB distance.
pub fn nearest_color_name(c: Rgb) -> &'static str {
    let d2 = |n: &Rgb| -> i32 {
        (0..3)
            .map(|i| {
                let d = i32::from(c[i]) - i32::from(n[i]);
                d * d
            })
            .sum()
    };
    NAMED_COLORS
        .iter()
        .min_by_key(|(_, rgb)| d2(rgb))
        .map(|(name, _)| *name)
        .expect("table is non-empty")
}

/// Outline color of a label and its human-readable name.
pub fn label_color(label: u32, palette: &Palette) -> Result<(Rgb, &'static str), IngestError> {
    let c = palette.color(label)?;
    Ok((c, nearest_color_name(c)))
}
