//! Slice-level feasibility on a single 7-slice MIG GPU.
//!
//! A GPU has compute slices 0..=6 and memory slices 0..=7. Memory slice `i`
//! sits under GPU slice `i` for `i < 7`; the extra memory slice (`m7`) can only
//! be reached by a profile whose footprint ends at slice 6. Occupancy is kept
//! as a `u8` bit mask with bits 0..=6 for GPU slices and bit 7 for `m7`.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::{Mutex, OnceLock};

use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::{profile_lookup, GpuId, ProfileId, ProfileSpec, CATALOG};

pub const GPU_SLICES: u8 = 7;
pub const EXTRA_MEMORY_BIT: u8 = 1 << 7;
pub const ALL_SLICES: u8 = (1 << GPU_SLICES) - 1;

/// Where a profile lands when started at a given index, and what it wastes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub start: u8,
    /// Number of GPU slices covered, starting at `start`.
    pub width: u8,
    pub uses_extra_memory: bool,
    pub wasted_compute_slices: u8,
    /// Slice 6 is taken by a profile that cannot use `m7`, so `m7` is lost.
    pub wasted_extra_memory: bool,
}

impl Footprint {
    pub fn occupied_slices(&self) -> Range<u8> {
        self.start..self.start + self.width
    }

    /// Bit mask including [`EXTRA_MEMORY_BIT`] when `m7` is used.
    pub fn mask(&self) -> u8 {
        let slices = ((1u16 << self.width) - 1) as u8;
        let mut mask = slices << self.start;
        if self.uses_extra_memory {
            mask |= EXTRA_MEMORY_BIT;
        }
        mask
    }

    pub fn slice_mask(&self) -> u8 {
        self.mask() & ALL_SLICES
    }
}

/// Footprint of `spec` at `index`, without checking the index is allowed.
fn raw_footprint(spec: &ProfileSpec, index: u8) -> Footprint {
    // Memory positions index..index+mem; position 7 is m7.
    let end = index + spec.memory_slices;
    let uses_extra_memory = end > GPU_SLICES;
    let width = end.min(GPU_SLICES) - index;
    let wasted_extra_memory = !uses_extra_memory && end == GPU_SLICES;
    Footprint {
        start: index,
        width,
        uses_extra_memory,
        wasted_compute_slices: width.saturating_sub(spec.compute_slices),
        wasted_extra_memory,
    }
}

pub fn footprint(profile: ProfileId, start_index: u8) -> Result<Footprint> {
    let spec = profile_lookup(profile)?;
    if spec.preference_rank(start_index).is_none() {
        return Err(Error::InfeasibleIndex {
            profile,
            index: start_index,
        });
    }
    Ok(raw_footprint(spec, start_index))
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LayoutViolation {
    #[error("unknown profile {0}")]
    UnknownProfile(u8),

    #[error("profile {profile} is not allowed at index {index}")]
    DisallowedIndex { profile: ProfileId, index: u8 },

    #[error("placements {first:?} and {second:?} overlap")]
    Overlap {
        first: (ProfileId, u8),
        second: (ProfileId, u8),
    },

    #[error("placements {first:?} and {second:?} both claim the extra memory slice")]
    ExtraMemoryConflict {
        first: (ProfileId, u8),
        second: (ProfileId, u8),
    },

    #[error("more than one media-extension profile")]
    MultipleMediaExtensions,

    #[error("{0} compute slices exceed the GPU")]
    ComputeExceeded(u32),

    #[error("{0} memory slices exceed the GPU")]
    MemoryExceeded(u32),
}

/// Checks one GPU's `(profile, start_index)` list against the slicing rules.
/// Rules are checked in a fixed order and the first failing one is reported.
pub fn validate_layout(placements: &[(ProfileId, u8)]) -> std::result::Result<(), LayoutViolation> {
    let mut specs = Vec::with_capacity(placements.len());
    for &(p, _) in placements {
        specs.push(profile_lookup(p).map_err(|_| LayoutViolation::UnknownProfile(p.0))?);
    }
    for (&(profile, index), spec) in placements.iter().zip(&specs) {
        if spec.preference_rank(index).is_none() {
            return Err(LayoutViolation::DisallowedIndex { profile, index });
        }
    }
    let prints: Vec<Footprint> = placements
        .iter()
        .zip(&specs)
        .map(|(&(_, k), s)| raw_footprint(s, k))
        .collect();
    for i in 0..prints.len() {
        for j in i + 1..prints.len() {
            if prints[i].slice_mask() & prints[j].slice_mask() != 0 {
                return Err(LayoutViolation::Overlap {
                    first: placements[i],
                    second: placements[j],
                });
            }
        }
    }
    for i in 0..prints.len() {
        for j in i + 1..prints.len() {
            if prints[i].uses_extra_memory && prints[j].uses_extra_memory {
                return Err(LayoutViolation::ExtraMemoryConflict {
                    first: placements[i],
                    second: placements[j],
                });
            }
        }
    }
    if specs.iter().filter(|s| s.has_media_ext).count() > 1 {
        return Err(LayoutViolation::MultipleMediaExtensions);
    }
    let compute: u32 = specs.iter().map(|s| u32::from(s.compute_slices)).sum();
    if compute > u32::from(GPU_SLICES) {
        return Err(LayoutViolation::ComputeExceeded(compute));
    }
    let memory: u32 = specs.iter().map(|s| u32::from(s.memory_slices)).sum();
    if memory > u32::from(GPU_SLICES) + 1 {
        return Err(LayoutViolation::MemoryExceeded(memory));
    }
    Ok(())
}

/// Running occupancy of one GPU.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Occupancy {
    /// GPU slices in bits 0..=6, `m7` in bit 7.
    pub mask: u8,
    pub compute: u8,
    pub memory: u8,
    pub media: u8,
}

impl Occupancy {
    /// Builds the occupancy of a layout that is assumed valid.
    pub fn from_layout(layout: &[(ProfileId, u8)]) -> Self {
        let mut occ = Occupancy::default();
        for &(p, k) in layout {
            occ.place(p.spec(), k);
        }
        occ
    }

    pub fn fits(&self, spec: &ProfileSpec, index: u8) -> bool {
        spec.preference_rank(index).is_some() && self.fits_unchecked(spec, index)
    }

    fn fits_unchecked(&self, spec: &ProfileSpec, index: u8) -> bool {
        self.mask & raw_footprint(spec, index).mask() == 0
            && self.compute + spec.compute_slices <= GPU_SLICES
            && self.memory + spec.memory_slices <= GPU_SLICES + 1
            && (!spec.has_media_ext || self.media == 0)
    }

    pub fn place(&mut self, spec: &ProfileSpec, index: u8) {
        self.mask |= raw_footprint(spec, index).mask();
        self.compute += spec.compute_slices;
        self.memory += spec.memory_slices;
        self.media += u8::from(spec.has_media_ext);
    }

    /// First allowed index in preference order where `spec` fits.
    pub fn preferred_index(&self, spec: &ProfileSpec) -> Option<u8> {
        spec.allowed_indexes
            .iter()
            .copied()
            .find(|&k| self.fits_unchecked(spec, k))
    }

    /// Lowest-numbered allowed index where `spec` fits.
    pub fn lowest_index(&self, spec: &ProfileSpec) -> Option<u8> {
        (0..GPU_SLICES).find(|&k| spec.preference_rank(k).is_some() && self.fits_unchecked(spec, k))
    }
}

/// Searches start indexes for `profiles` so that together with `fixed` the
/// GPU layout validates. The result is aligned with `profiles`.
pub fn find_layout(profiles: &[ProfileId], fixed: &[(ProfileId, u8)]) -> Option<Vec<u8>> {
    validate_layout(fixed).ok()?;
    find_layout_in(profiles, Occupancy::from_layout(fixed), ALL_SLICES)
}

/// Like [`find_layout`] but starting from an occupancy and only using GPU
/// slices inside `region` (bits 0..=6).
pub fn find_layout_in(profiles: &[ProfileId], base: Occupancy, region: u8) -> Option<Vec<u8>> {
    let mut specs = Vec::with_capacity(profiles.len());
    for &p in profiles {
        specs.push(profile_lookup(p).ok()?);
    }
    let (c, m, me) = specs.iter().fold((base.compute, base.memory, base.media), |(c, m, me), s| {
        (c + s.compute_slices, m + s.memory_slices, me + u8::from(s.has_media_ext))
    });
    if c > GPU_SLICES || m > GPU_SLICES + 1 || me > 1 {
        return None;
    }
    // Largest first; the sort is stable so equal profiles keep input order.
    let mut order: Vec<usize> = (0..specs.len()).collect();
    order.sort_by_key(|&i| specs[i].profile_id);
    let blocked = !region & ALL_SLICES;
    let mut chosen = vec![0u8; specs.len()];
    let mut ranks = vec![0usize; specs.len()];
    if search(&specs, &order, 0, base.mask | blocked, &mut chosen, &mut ranks) {
        Some(chosen)
    } else {
        None
    }
}

fn search(
    specs: &[&ProfileSpec],
    order: &[usize],
    depth: usize,
    mask: u8,
    chosen: &mut [u8],
    ranks: &mut [usize],
) -> bool {
    let Some(&i) = order.get(depth) else {
        return true;
    };
    let spec = specs[i];
    // Identical profiles are interchangeable, so only try them in increasing
    // preference rank; this keeps the first solution found unchanged.
    let min_rank = match depth.checked_sub(1).map(|d| order[d]) {
        Some(prev) if specs[prev].profile_id == spec.profile_id => ranks[prev] + 1,
        _ => 0,
    };
    for (rank, &k) in spec.allowed_indexes.iter().enumerate().skip(min_rank) {
        let fp = raw_footprint(spec, k).mask();
        if mask & fp != 0 {
            continue;
        }
        chosen[i] = k;
        ranks[i] = rank;
        if search(specs, order, depth + 1, mask | fp, chosen, ranks) {
            return true;
        }
    }
    false
}

/// A contiguous unallocated range of a partially partitioned GPU that the
/// optimizer treats as its own bin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreePartition {
    pub gpu_id: GpuId,
    pub start_index: u8,
    pub compute_capacity: u8,
    pub memory_capacity: u8,
    pub merged: bool,
    /// GPU slices covered (bits 0..=6).
    pub slice_mask: u8,
}

/// Largest feasible free partitions of a partially used GPU, in slice order.
///
/// Slices are scanned from 0 to 6; at each free slice the largest profile
/// that fits is placed hypothetically and its capacities recorded. Each
/// maximal run of adjacent partitions is then merged into one if every
/// profile mix fitting the merged capacity can still be laid out inside it.
pub fn free_partitions(gpu: &GpuId, layout: &[(ProfileId, u8)]) -> Vec<FreePartition> {
    let fixed = Occupancy::from_layout(layout);
    let mut occ = fixed;
    let mut raw: Vec<(u8, u8, u8, u8)> = Vec::new(); // (start, compute, memory, slice mask)
    for k in 0..GPU_SLICES {
        if occ.mask & (1 << k) != 0 {
            continue;
        }
        let found = CATALOG.iter().find(|s| {
            s.preference_rank(k).is_some()
                && (!s.has_media_ext || occ.media == 0)
                && occ.mask & raw_footprint(s, k).mask() == 0
        });
        if let Some(spec) = found {
            let fp = raw_footprint(spec, k);
            occ.mask |= fp.mask();
            raw.push((k, spec.compute_slices, spec.memory_slices, fp.slice_mask()));
        }
    }

    let mut out = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let mut j = i + 1;
        while j < raw.len() && raw[j].0 == raw[j - 1].0 + raw[j - 1].3.count_ones() as u8 {
            j += 1;
        }
        let run = &raw[i..j];
        let (c, m, region) = run
            .iter()
            .fold((0u8, 0u8, 0u8), |(c, m, r), p| (c + p.1, m + p.2, r | p.3));
        if run.len() > 1 && merge_is_valid(fixed, region, c, m) {
            out.push(FreePartition {
                gpu_id: gpu.clone(),
                start_index: run[0].0,
                compute_capacity: c,
                memory_capacity: m,
                merged: true,
                slice_mask: region,
            });
        } else {
            out.extend(run.iter().map(|&(k, c, m, mask)| FreePartition {
                gpu_id: gpu.clone(),
                start_index: k,
                compute_capacity: c,
                memory_capacity: m,
                merged: false,
                slice_mask: mask,
            }));
        }
        i = j;
    }
    out
}

fn merge_is_valid(fixed: Occupancy, region: u8, compute: u8, memory: u8) -> bool {
    type MergeCache = Mutex<HashMap<(u8, u8, u8), bool>>;
    static CACHE: OnceLock<MergeCache> = OnceLock::new();
    let key = (fixed.mask, fixed.media, region);
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&v) = cache.lock().expect("merge cache poisoned").get(&key) {
        return v;
    }
    // Only slices and media matter for a region that is disjoint from `fixed`.
    let base = Occupancy {
        mask: fixed.mask,
        media: fixed.media,
        ..Occupancy::default()
    };
    let max_media = 1 - fixed.media.min(1);
    let valid = profile_mixes(compute, memory, max_media)
        .iter()
        .all(|mix| find_layout_in(mix, base, region).is_some());
    cache.lock().expect("merge cache poisoned").insert(key, valid);
    valid
}

/// Every multiset of catalog profiles within the given capacities.
pub(crate) fn profile_mixes(compute: u8, memory: u8, media: u8) -> Vec<Vec<ProfileId>> {
    fn rec(
        from: usize,
        compute: u8,
        memory: u8,
        media: u8,
        current: &mut Vec<ProfileId>,
        out: &mut Vec<Vec<ProfileId>>,
    ) {
        out.push(current.clone());
        for (i, s) in CATALOG.iter().enumerate().skip(from) {
            if s.compute_slices <= compute
                && s.memory_slices <= memory
                && (!s.has_media_ext || media > 0)
            {
                current.push(s.profile_id);
                rec(
                    i,
                    compute - s.compute_slices,
                    memory - s.memory_slices,
                    media - u8::from(s.has_media_ext),
                    current,
                    out,
                );
                current.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(0, compute, memory, media, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: u8) -> ProfileId {
        ProfileId(id)
    }

    fn slices(fp: &Footprint) -> Vec<u8> {
        fp.occupied_slices().collect()
    }

    #[test]
    fn footprint_examples() {
        let f = footprint(p(9), 0).unwrap();
        assert_eq!(slices(&f), vec![0, 1, 2, 3]);
        assert_eq!(f.wasted_compute_slices, 1);
        assert!(!f.uses_extra_memory);

        let f = footprint(p(15), 4).unwrap();
        assert_eq!(slices(&f), vec![4, 5]);
        assert_eq!(f.wasted_compute_slices, 1);

        let f = footprint(p(19), 6).unwrap();
        assert_eq!(slices(&f), vec![6]);
        assert!(f.wasted_extra_memory);

        let f = footprint(p(14), 2).unwrap();
        assert_eq!(slices(&f), vec![2, 3]);
        assert_eq!((f.wasted_compute_slices, f.wasted_extra_memory), (0, false));

        let f = footprint(p(9), 4).unwrap();
        assert_eq!(slices(&f), vec![4, 5, 6]);
        assert!(f.uses_extra_memory);
        assert_eq!(f.wasted_compute_slices, 0);

        let f = footprint(p(15), 6).unwrap();
        assert_eq!(slices(&f), vec![6]);
        assert!(f.uses_extra_memory);
        assert_eq!(f.wasted_compute_slices, 0);
    }

    #[test]
    fn footprint_rejects_disallowed_index() {
        assert!(matches!(
            footprint(p(9), 2),
            Err(Error::InfeasibleIndex { index: 2, .. })
        ));
        assert!(matches!(footprint(p(3), 0), Err(Error::UnknownProfile(3))));
    }

    #[test]
    fn validate_examples() {
        assert_eq!(validate_layout(&[(p(5), 0), (p(9), 4)]), Ok(()));
        assert!(matches!(
            validate_layout(&[(p(9), 4), (p(15), 6)]),
            Err(LayoutViolation::Overlap { .. })
        ));
        assert_eq!(validate_layout(&[]), Ok(()));
        assert_eq!(
            validate_layout(&[(p(20), 0), (p(20), 1)]),
            Err(LayoutViolation::MultipleMediaExtensions)
        );
        assert_eq!(
            validate_layout(&[(p(14), 1)]),
            Err(LayoutViolation::DisallowedIndex { profile: p(14), index: 1 })
        );
    }

    #[test]
    fn find_layout_examples() {
        assert_eq!(find_layout(&[p(9)], &[]), Some(vec![4]));
        assert_eq!(find_layout(&[p(5), p(14), p(15)], &[]), Some(vec![0, 4, 6]));
        assert_eq!(find_layout(&[p(5)], &[(p(19), 1)]), None);
        assert_eq!(find_layout(&[p(5), p(9)], &[]), Some(vec![0, 4]));
    }

    #[test]
    fn free_partitions_examples() {
        let g = GpuId::new("g1");
        let parts = free_partitions(&g, &[(p(19), 0), (p(19), 5), (p(19), 6)]);
        let summary: Vec<_> = parts
            .iter()
            .map(|f| (f.start_index, f.compute_capacity, f.memory_capacity, f.merged))
            .collect();
        assert_eq!(summary, vec![(1, 1, 1, false), (2, 2, 2, false), (4, 1, 1, false)]);

        let parts = free_partitions(&g, &[(p(15), 6)]);
        let summary: Vec<_> = parts
            .iter()
            .map(|f| (f.start_index, f.compute_capacity, f.memory_capacity, f.merged))
            .collect();
        assert_eq!(summary, vec![(0, 6, 6, true)]);

        let parts = free_partitions(&g, &[]);
        assert_eq!(parts.len(), 1);
        assert_eq!((parts[0].compute_capacity, parts[0].memory_capacity), (7, 8));
    }

    #[test]
    fn profile_mixes_counts_small_capacity() {
        // 1c1m: empty, {19}, {20}.
        assert_eq!(profile_mixes(1, 1, 1).len(), 3);
        assert_eq!(profile_mixes(1, 1, 0).len(), 2);
    }
}
