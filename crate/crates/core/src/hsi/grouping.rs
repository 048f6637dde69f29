use std::ops::Range;

use crate::error::{Error, Result};

/// Overlapping band grouping: `group_size` bands per group, `overlap` bands shared by
/// neighbouring groups. When the regular stride leaves the last band
/// uncovered, one extra group is anchored at the end of the spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandGroupingSpec {
    pub group_size: usize,
    pub overlap: usize,
}

impl BandGroupingSpec {
    pub fn new(group_size: usize, overlap: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::invalid("k", "bands per group must be positive"));
        }
        if overlap >= group_size {
            return Err(Error::invalid("overlap", format!("{overlap} must be below k = {group_size}")));
        }
        Ok(Self { group_size, overlap })
    }

    pub fn stride(&self) -> usize {
        self.group_size - self.overlap
    }
}

/// Ordered band-index ranges, one per group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandGroups {
    groups: Vec<Range<usize>>,
    regular: usize,
}

impl BandGroups {
    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Number of groups placed by the regular stride; the remainder (zero or
    /// one) is the anchored tail group.
    pub fn regular_count(&self) -> usize {
        self.regular
    }

    pub fn has_anchored_tail(&self) -> bool {
        self.groups.len() > self.regular
    }
}

pub fn make_band_groups(bands: usize, spec: BandGroupingSpec) -> Result<BandGroups> {
    let spec = BandGroupingSpec::new(spec.group_size, spec.overlap)?;
    if bands < spec.group_size {
        return Err(Error::invalid(
            "bands",
            format!("{bands} bands cannot fill a group of {}", spec.group_size),
        ));
    }
    let mut groups: Vec<Range<usize>> = (0..)
        .map(|i| i * spec.stride())
        .take_while(|start| start + spec.group_size <= bands)
        .map(|start| start..start + spec.group_size)
        .collect();
    let regular = groups.len();
    if groups.last().is_none_or(|g| g.end < bands) {
        groups.push(bands - spec.group_size..bands);
    }
    Ok(BandGroups { groups, regular })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranges(bands: usize, k: usize, o: usize) -> Vec<Range<usize>> {
        make_band_groups(bands, BandGroupingSpec::new(k, o).unwrap())
            .unwrap()
            .groups()
            .to_vec()
    }

    #[test]
    fn hand_enumerated() {
        assert_eq!(ranges(6, 4, 2), vec![0..4, 2..6]);
        assert_eq!(ranges(4, 4, 2), vec![0..4]);
        assert_eq!(ranges(8, 4, 2), vec![0..4, 2..6, 4..8]);
        assert_eq!(ranges(7, 4, 2), vec![0..4, 2..6, 3..7]);
    }

    #[test]
    fn rejects_invalid() {
        assert!(make_band_groups(3, BandGroupingSpec { group_size: 4, overlap: 2 }).is_err());
        assert!(make_band_groups(8, BandGroupingSpec { group_size: 4, overlap: 4 }).is_err());
        assert!(make_band_groups(8, BandGroupingSpec { group_size: 0, overlap: 0 }).is_err());
    }

    #[test]
    fn full_spectrum_grouping() {
        let g = make_band_groups(191, BandGroupingSpec { group_size: 4, overlap: 2 }).unwrap();
        assert_eq!(g.n_groups(), 95);
        assert_eq!(g.regular_count(), 94);
        assert_eq!(g.groups()[93], 186..190);
        assert_eq!(g.groups()[94], 187..191);
    }
}
