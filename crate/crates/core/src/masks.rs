//! L2 cloud-mask decoding, static land/water map, coastline band, and label
//! screening.

use ndarray::{Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{Grid, LandmarkChip};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("bad mask code {value} at pixel ({row},{col})")]
    BadMaskCode { row: usize, col: usize, value: f64 },
    #[error("no cloud-free chips to vote a land-cover map")]
    NoCloudFreeChips,
    #[error("pixel ({row},{col}) has no land or water votes")]
    UnresolvedPixel { row: usize, col: usize },
    #[error("mask dimensions {found:?} do not match {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

/// L2 cloud-mask class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PixelLabel {
    NoData,
    Water,
    Land,
    Cloud,
}

impl PixelLabel {
    pub const ALL: [PixelLabel; 4] = [
        PixelLabel::NoData,
        PixelLabel::Water,
        PixelLabel::Land,
        PixelLabel::Cloud,
    ];

    pub fn code(self) -> u8 {
        match self {
            PixelLabel::NoData => 0,
            PixelLabel::Water => 50,
            PixelLabel::Land => 100,
            PixelLabel::Cloud => 200,
        }
    }

    pub fn from_code(v: f64) -> Option<Self> {
        // exact comparison: codes are stored as integral doubles
        match v {
            x if x == 0.0 => Some(PixelLabel::NoData),
            x if x == 50.0 => Some(PixelLabel::Water),
            x if x == 100.0 => Some(PixelLabel::Land),
            x if x == 200.0 => Some(PixelLabel::Cloud),
            _ => None,
        }
    }

    /// `Some(true)` for cloud, `Some(false)` for clear, `None` for no-data.
    pub fn is_cloud(self) -> Option<bool> {
        match self {
            PixelLabel::NoData => None,
            PixelLabel::Cloud => Some(true),
            PixelLabel::Water | PixelLabel::Land => Some(false),
        }
    }
}

pub fn decode_mask(raw: &Array2<f64>) -> Result<Array2<PixelLabel>, MaskError> {
    let mut out = Array2::from_elem(raw.dim(), PixelLabel::NoData);
    for ((row, col), &v) in raw.indexed_iter() {
        out[(row, col)] =
            PixelLabel::from_code(v).ok_or(MaskError::BadMaskCode { row, col, value: v })?;
    }
    Ok(out)
}

pub fn encode_mask(labels: &Array2<PixelLabel>) -> Array2<f64> {
    labels.mapv(|l| l.code() as f64)
}

/// Labels of a chip whose mask was validated on read.
pub fn chip_labels(chip: &LandmarkChip) -> Array2<PixelLabel> {
    chip.l2mask
        .mapv(|v| PixelLabel::from_code(v as f64).expect("chip mask validated on read"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cover {
    Water,
    Land,
}

/// Evaluation/sampling stratum combining land cover and the coastline band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoverStratum {
    Water,
    Land,
    CoastWater,
    CoastLand,
}

impl CoverStratum {
    pub const ALL: [CoverStratum; 4] = [
        CoverStratum::Water,
        CoverStratum::Land,
        CoverStratum::CoastWater,
        CoverStratum::CoastLand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoverStratum::Water => "water",
            CoverStratum::Land => "land",
            CoverStratum::CoastWater => "coast-water",
            CoverStratum::CoastLand => "coast-land",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn is_coast(self) -> bool {
        matches!(self, CoverStratum::CoastWater | CoverStratum::CoastLand)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandCoverMask {
    pub grid: Array2<Cover>,
    /// Number of cloud-free chips that voted.
    pub votes: usize,
}

impl LandCoverMask {
    pub fn to_grid(&self) -> Grid {
        Grid {
            label: format!("landcover votes={}", self.votes),
            data: self.grid.mapv(|c| if c == Cover::Land { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoastlineMask {
    pub grid: Array2<bool>,
}

impl CoastlineMask {
    pub fn to_grid(&self) -> Grid {
        Grid {
            label: "coastline".into(),
            data: self.grid.mapv(|b| if b { 1.0 } else { 0.0 }),
        }
    }

    pub fn stratum(&self, lc: &LandCoverMask, row: usize, col: usize) -> CoverStratum {
        match (self.grid[(row, col)], lc.grid[(row, col)]) {
            (false, Cover::Water) => CoverStratum::Water,
            (false, Cover::Land) => CoverStratum::Land,
            (true, Cover::Water) => CoverStratum::CoastWater,
            (true, Cover::Land) => CoverStratum::CoastLand,
        }
    }
}

fn is_cloud_free(chip: &LandmarkChip) -> bool {
    !chip.l2mask.iter().any(|&v| v == PixelLabel::Cloud.code())
}

/// Per-pixel majority of land/water labels over all cloud-free chips.
/// No-data votes are ignored; ties go to land.
pub fn landcover_from_votes(chips: &[LandmarkChip]) -> Result<LandCoverMask, MaskError> {
    let free: Vec<&LandmarkChip> = chips.iter().filter(|c| is_cloud_free(c)).collect();
    let Some(first) = free.first() else {
        return Err(MaskError::NoCloudFreeChips);
    };
    let dim = first.dims();
    if let Some(bad) = free.iter().find(|c| c.dims() != dim) {
        return Err(MaskError::DimensionMismatch { expected: dim, found: bad.dims() });
    }
    let zero = || (Array2::<u32>::zeros(dim), Array2::<u32>::zeros(dim));
    let (water, land) = free
        .par_iter()
        .fold(zero, |(mut w, mut l), c| {
            Zip::from(&mut w).and(&mut l).and(&c.l2mask).for_each(|w, l, &m| {
                if m == PixelLabel::Water.code() {
                    *w += 1;
                } else if m == PixelLabel::Land.code() {
                    *l += 1;
                }
            });
            (w, l)
        })
        .reduce(zero, |(w1, l1), (w2, l2)| (w1 + w2, l1 + l2));

    let mut grid = Array2::from_elem(dim, Cover::Land);
    for ((row, col), g) in grid.indexed_iter_mut() {
        let (w, l) = (water[(row, col)], land[(row, col)]);
        if w + l == 0 {
            return Err(MaskError::UnresolvedPixel { row, col });
        }
        *g = if w > l { Cover::Water } else { Cover::Land };
    }
    Ok(LandCoverMask { grid, votes: free.len() })
}

/// A pixel is coastline iff its (border-truncated) 3x3 neighbourhood holds
/// both land and water.
pub fn coastline_from_landcover(lc: &LandCoverMask) -> CoastlineMask {
    let (rows, cols) = lc.grid.dim();
    let grid = Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (mut land, mut water) = (false, false);
        for rr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
            for cc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                match lc.grid[(rr, cc)] {
                    Cover::Land => land = true,
                    Cover::Water => water = true,
                }
            }
        }
        land && water
    });
    CoastlineMask { grid }
}

/// Per-pixel screening result for one chip.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenFlags {
    /// No-data pixels: never used for training or testing.
    pub drop: Array2<bool>,
    /// Cloud labels on the coastline band: kept, but excluded from training.
    pub suspect: Array2<bool>,
}

impl ScreenFlags {
    pub fn n_dropped(&self) -> usize {
        self.drop.iter().filter(|&&b| b).count()
    }

    pub fn n_suspect(&self) -> usize {
        self.suspect.iter().filter(|&&b| b).count()
    }
}

pub fn screen_labels(chip: &LandmarkChip, coast: &CoastlineMask) -> Result<ScreenFlags, MaskError> {
    if chip.dims() != coast.grid.dim() {
        return Err(MaskError::DimensionMismatch {
            expected: coast.grid.dim(),
            found: chip.dims(),
        });
    }
    let drop = chip.l2mask.mapv(|m| m == PixelLabel::NoData.code());
    let mut suspect = Array2::from_elem(chip.dims(), false);
    Zip::from(&mut suspect)
        .and(&chip.l2mask)
        .and(&coast.grid)
        .for_each(|s, &m, &on_coast| *s = on_coast && m == PixelLabel::Cloud.code());
    Ok(ScreenFlags { drop, suspect })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::{AcqTime, LatLon, SEVIRI_CHANNELS};
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn chip_with_mask(mask: Array2<u8>) -> LandmarkChip {
        let dim = mask.dim();
        LandmarkChip {
            id: 1,
            num: 1,
            name: "t".into(),
            centre: [0.0, 0.0],
            latlon: LatLon::new(0.0, 0.0),
            time: AcqTime::parse("20100101000000").unwrap(),
            channels: SEVIRI_CHANNELS.to_vec(),
            cube: Array3::zeros((dim.0, dim.1, 11)),
            l2mask: mask,
            hrv: None,
            sza: None,
            calibrated: false,
        }
    }

    fn lc(grid: Array2<Cover>) -> LandCoverMask {
        LandCoverMask { grid, votes: 1 }
    }

    #[test]
    fn decodes_the_four_codes() {
        let raw = array![[50.0, 100.0], [200.0, 0.0]];
        let d = decode_mask(&raw).unwrap();
        assert_eq!(
            d,
            array![[PixelLabel::Water, PixelLabel::Land], [PixelLabel::Cloud, PixelLabel::NoData]]
        );
        assert!(decode_mask(&Array2::from_elem((3, 3), 200.0))
            .unwrap()
            .iter()
            .all(|&l| l == PixelLabel::Cloud));
        let mut bad = Array2::from_elem((3, 3), 50.0);
        bad[(2, 1)] = 150.0;
        assert_eq!(
            decode_mask(&bad),
            Err(MaskError::BadMaskCode { row: 2, col: 1, value: 150.0 })
        );
    }

    #[test]
    fn majority_vote_and_land_tie_break() {
        let mut chips: Vec<_> = (0..6).map(|_| chip_with_mask(array![[50, 50]])).collect();
        chips.extend((0..4).map(|_| chip_with_mask(array![[100, 100]])));
        // second pixel: one extra land vote from a chip with no-data elsewhere
        chips.push(chip_with_mask(array![[0, 100]]));
        chips.push(chip_with_mask(array![[0, 100]]));
        // a cloudy chip never votes
        chips.push(chip_with_mask(array![[100, 200]]));
        let m = landcover_from_votes(&chips).unwrap();
        assert_eq!(m.grid, array![[Cover::Water, Cover::Land]]);
        assert_eq!(m.votes, 12);

        let tie: Vec<_> = (0..10)
            .map(|k| chip_with_mask(array![[if k < 5 { 50 } else { 100 }]]))
            .collect();
        assert_eq!(landcover_from_votes(&tie).unwrap().grid, array![[Cover::Land]]);
    }

    #[test]
    fn vote_guards() {
        let cloudy = vec![chip_with_mask(array![[200, 50]])];
        assert_eq!(landcover_from_votes(&cloudy), Err(MaskError::NoCloudFreeChips));
        let nodata = vec![chip_with_mask(array![[0, 50]])];
        assert_eq!(
            landcover_from_votes(&nodata),
            Err(MaskError::UnresolvedPixel { row: 0, col: 0 })
        );
    }

    #[test]
    fn single_island_pixel_grows_a_3x3_coast() {
        let mut g = Array2::from_elem((5, 5), Cover::Water);
        g[(2, 2)] = Cover::Land;
        let coast = coastline_from_landcover(&lc(g));
        for ((r, c), &v) in coast.grid.indexed_iter() {
            assert_eq!(v, (1..=3).contains(&r) && (1..=3).contains(&c));
        }
    }

    #[test]
    fn uniform_grid_has_no_coast_and_two_column_grid_is_all_coast() {
        let coast = coastline_from_landcover(&lc(Array2::from_elem((4, 4), Cover::Land)));
        assert!(coast.grid.iter().all(|&b| !b));
        let g = Array2::from_shape_fn((6, 2), |(_, c)| if c == 0 { Cover::Water } else { Cover::Land });
        assert!(coastline_from_landcover(&lc(g)).grid.iter().all(|&b| b));
    }

    #[test]
    fn screening_drops_nodata_and_flags_coastal_cloud() {
        let coast = CoastlineMask { grid: array![[true, false], [false, false]] };
        let c = chip_with_mask(array![[200, 0], [0, 0]]);
        let s = screen_labels(&c, &coast).unwrap();
        assert_eq!(s.n_dropped(), 3);
        assert_eq!(s.suspect, array![[true, false], [false, false]]);
        assert!(!s.drop[(0, 0)]);

        let clean = chip_with_mask(array![[50, 100], [200, 100]]);
        let s = screen_labels(&clean, &coast).unwrap();
        assert_eq!((s.n_dropped(), s.n_suspect()), (0, 0));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(codes in proptest::collection::vec(0usize..4, 1..64), cols in 1usize..8) {
            let rows = codes.len().div_ceil(cols);
            let labels = Array2::from_shape_fn((rows, cols), |(r, c)| {
                PixelLabel::ALL[codes.get(r * cols + c).copied().unwrap_or(0)]
            });
            prop_assert_eq!(decode_mask(&encode_mask(&labels)).unwrap(), labels);
        }

        #[test]
        fn votes_are_order_invariant_and_stable_under_duplicates(
            masks in proptest::collection::vec(proptest::collection::vec(prop_oneof![Just(50u8), Just(100u8)], 6), 1..8),
            rot in 0usize..8,
        ) {
            let chips: Vec<_> = masks
                .iter()
                .map(|m| chip_with_mask(Array2::from_shape_vec((2, 3), m.clone()).unwrap()))
                .collect();
            let base = landcover_from_votes(&chips).unwrap();
            let mut perm = chips.clone();
            perm.rotate_left(rot % chips.len());
            perm.reverse();
            prop_assert_eq!(&landcover_from_votes(&perm).unwrap().grid, &base.grid);

            // duplicating a chip never flips a land majority; a water majority
            // survives unless its margin is one vote (the tie goes to land)
            let mut dup = chips.clone();
            dup.push(chips[rot % chips.len()].clone());
            let after = landcover_from_votes(&dup).unwrap();
            for ((r, c), &cover) in base.grid.indexed_iter() {
                let w = chips.iter().filter(|ch| ch.l2mask[(r, c)] == 50).count();
                let l = chips.len() - w;
                if l > w || w > l + 1 {
                    prop_assert_eq!(after.grid[(r, c)], cover);
                }
            }
        }
    }
}
