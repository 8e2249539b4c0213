use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, ScdError};

/// Dense binary grid stored row-major, 64 pixels per word.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bitmap {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bitmap")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl Bitmap {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |_, _| true)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut b = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    b.set(x, y, true);
                }
            }
        }
        b
    }

    /// Axis-aligned rectangle `[x0, x0+w) x [y0, y0+h)`, clipped to the grid.
    pub fn rect(width: usize, height: usize, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self::from_fn(width, height, |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h)
    }

    pub fn from_bools(width: usize, height: usize, values: &[bool]) -> Result<Self> {
        if values.len() != width * height {
            return Err(ScdError::Shape(format!(
                "{} values for a {width}x{height} bitmap",
                values.len()
            )));
        }
        Ok(Self::from_fn(width, height, |x, y| values[y * width + x]))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.get_index(y * self.width + x)
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let i = y * self.width + x;
        self.set_index(i, value);
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, value: bool) {
        let bit = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ensure_same_dims(&self, other: &Bitmap) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(ScdError::Shape(format!(
                "bitmap {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &Bitmap) -> Result<usize> {
        self.ensure_same_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    pub fn union(&self, other: &Bitmap) -> Result<Bitmap> {
        self.zip_words(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &Bitmap) -> Result<Bitmap> {
        self.zip_words(other, |a, b| a & b)
    }

    /// Pixels set in `self` but not in `other`.
    pub fn difference(&self, other: &Bitmap) -> Result<Bitmap> {
        self.zip_words(other, |a, b| a & !b)
    }

    pub fn union_in_place(&mut self, other: &Bitmap) -> Result<()> {
        self.ensure_same_dims(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    fn zip_words(&self, other: &Bitmap, op: impl Fn(u64, u64) -> u64) -> Result<Bitmap> {
        self.ensure_same_dims(other)?;
        Ok(Bitmap {
            width: self.width,
            height: self.height,
            words: self.words.iter().zip(&other.words).map(|(a, b)| op(*a, *b)).collect(),
        })
    }

    /// Row-major indices of set pixels.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut word = w;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let tz = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    pub fn flip_horizontal(&self) -> Bitmap {
        Bitmap::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Run-length form: alternating (start, length) pairs of set runs.
    pub fn to_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start: Option<usize> = None;
        for i in 0..self.len() {
            match (self.get_index(i), start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.len() - s));
        }
        runs
    }

    pub fn from_runs(width: usize, height: usize, runs: &[(usize, usize)]) -> Result<Self> {
        let mut b = Bitmap::new(width, height);
        for &(start, len) in runs {
            if start + len > b.len() {
                return Err(ScdError::Shape(format!("run {start}+{len} exceeds {width}x{height}")));
            }
            for i in start..start + len {
                b.set_index(i, true);
            }
        }
        Ok(b)
    }
}

#[derive(Serialize, Deserialize)]
struct RleRepr {
    width: usize,
    height: usize,
    runs: Vec<(usize, usize)>,
}

impl Serialize for Bitmap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RleRepr {
            width: self.width,
            height: self.height,
            runs: self.to_runs(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Bitmap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = RleRepr::deserialize(d)?;
        Bitmap::from_runs(r.width, r.height, &r.runs).map_err(serde::de::Error::custom)
    }
}
