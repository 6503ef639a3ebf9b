use crate::data::{Interval, ItemId, SequenceSample};

/// Borrowed view of one prefix and its intervals.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    pub items: &'a [ItemId],
    pub before: &'a [Interval],
    pub after: &'a [Interval],
}

impl<'a> From<&'a SequenceSample> for SampleView<'a> {
    fn from(s: &'a SequenceSample) -> Self {
        SampleView {
            items: &s.prefix,
            before: &s.before,
            after: &s.after,
        }
    }
}

/// Samples padded to a common length, with per-row valid lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub width: usize,
    pub items: Vec<ItemId>,
    pub before: Vec<Interval>,
    pub after: Vec<Interval>,
    pub lengths: Vec<usize>,
    pub targets: Vec<ItemId>,
}

impl Batch {
    pub fn new<'a, I>(samples: I) -> Self
    where
        I: IntoIterator<Item = &'a SequenceSample>,
        I::IntoIter: Clone,
    {
        let it = samples.into_iter();
        let width = it.clone().map(SequenceSample::len).max().unwrap_or(0);
        Self::padded(it, width)
    }

    /// Pads every row to `width` (at least the longest prefix).
    pub fn padded<'a, I>(samples: I, width: usize) -> Self
    where
        I: IntoIterator<Item = &'a SequenceSample>,
    {
        let mut b = Batch {
            width,
            items: Vec::new(),
            before: Vec::new(),
            after: Vec::new(),
            lengths: Vec::new(),
            targets: Vec::new(),
        };
        for s in samples {
            assert!(s.len() <= width, "prefix longer than batch width");
            let pad = width - s.len();
            b.items
                .extend(s.prefix.iter().copied().chain(std::iter::repeat_n(0, pad)));
            b.before
                .extend(s.before.iter().copied().chain(std::iter::repeat_n(None, pad)));
            b.after
                .extend(s.after.iter().copied().chain(std::iter::repeat_n(None, pad)));
            b.lengths.push(s.len());
            b.targets.push(s.target);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Whether position `k` of row `row` holds a real event.
    pub fn is_valid(&self, row: usize, k: usize) -> bool {
        k < self.lengths[row]
    }

    /// The unpadded part of row `row`.
    pub fn row(&self, row: usize) -> SampleView<'_> {
        let start = row * self.width;
        let end = start + self.lengths[row];
        SampleView {
            items: &self.items[start..end],
            before: &self.before[start..end],
            after: &self.after[start..end],
        }
    }
}
