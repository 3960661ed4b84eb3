use serde::{Deserialize, Serialize};

use super::IngestError;

/// Axis-aligned pixel box: `x0, y0` inclusive, `x1, y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct Box2 {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl From<[u32; 4]> for Box2 {
    fn from(v: [u32; 4]) -> Self {
        Box2 {
            x0: v[0],
            y0: v[1],
            x1: v[2],
            y1: v[3],
        }
    }
}

impl From<Box2> for [u32; 4] {
    fn from(b: Box2) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl Box2 {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1 && self.x1 <= width && self.y1 <= height
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn union(&self, other: &Box2) -> Box2 {
        Box2 {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (f64::from(self.x0) + f64::from(self.x1)) / 2.0,
            (f64::from(self.y0) + f64::from(self.y1)) / 2.0,
        )
    }
}

/// Binary image mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, f(x, y));
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Tight bounding box of the set pixels; `None` for an empty mask.
    pub fn tight_box(&self) -> Option<Box2> {
        let mut b: Option<Box2> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    b = Some(match b {
                        None => Box2::new(x, y, x + 1, y + 1),
                        Some(b) => Box2::new(b.x0.min(x), b.y0.min(y), b.x1.max(x + 1), b.y1.max(y + 1)),
                    });
                }
            }
        }
        b
    }

    /// Row-major run lengths alternating background/foreground, starting
    /// with a (possibly zero) background run.
    pub fn to_rle(&self) -> String {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u64;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
    }

    pub fn from_rle(width: u32, height: u32, rle: &str) -> Result<Mask, IngestError> {
        let total = (width as usize) * (height as usize);
        let mut bits = Vec::with_capacity(total);
        let mut value = false;
        for tok in rle.split_whitespace() {
            let n: usize = tok
                .parse()
                .map_err(|_| IngestError::Rle(format!("bad run length {tok:?}")))?;
            if bits.len() + n > total {
                return Err(IngestError::Rle(format!(
                    "runs exceed {width}x{height} pixels"
                )));
            }
            bits.extend(std::iter::repeat_n(value, n));
            value = !value;
        }
        if bits.len() != total {
            return Err(IngestError::Rle(format!(
                "runs cover {} of {total} pixels",
                bits.len()
            )));
        }
        Ok(Mask {
            width,
            height,
            bits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rle_starts_with_background_run() {
        let m = Mask::from_fn(3, 2, |x, y| x == 0 && y == 0);
        assert_eq!(m.to_rle(), "0 1 5");
        let m = Mask::from_fn(3, 2, |x, _| x == 2);
        assert_eq!(m.to_rle(), "2 1 2 1");
        assert_eq!(Mask::from_rle(3, 2, "2 1 2 1").unwrap(), m);
    }

    #[test]
    fn rle_rejects_wrong_totals() {
        assert!(Mask::from_rle(2, 2, "1 1").is_err());
        assert!(Mask::from_rle(2, 2, "3 3").is_err());
        assert!(Mask::from_rle(2, 2, "x").is_err());
    }

    #[test]
    fn tight_box_covers_set_pixels() {
        let m = Mask::from_fn(6, 5, |x, y| (x == 1 && y == 3) || (x == 4 && y == 1));
        assert_eq!(m.tight_box(), Some(Box2::new(1, 1, 5, 4)));
        assert_eq!(Mask::new(3, 3).tight_box(), None);
    }

    proptest! {
        #[test]
        fn rle_round_trips(w in 1u32..12, h in 1u32..12, seed in any::<u64>()) {
            let m = Mask::from_fn(w, h, |x, y| (seed >> ((x * 7 + y * 13) % 64)) & 1 == 1);
            prop_assert_eq!(Mask::from_rle(w, h, &m.to_rle()).unwrap(), m);
        }
    }
}
