//! Landmark topology: how many points, which belong to which region, and
//! which ordered chains form the salient contours.
//!
//! Point ids follow the layout: oval ring, left eye ring, right eye ring,
//! outer lip ring, inner lip ring, then interior filler points. Iris points
//! are not part of the base mesh; the unified mesh appends the left then the
//! right iris after the base points.
//!
//! Rings start at a corner and run along the upper curve first. The left eye
//! and lips start at their left corner; the right eye starts at its right
//! corner and runs right to left, so a horizontally mirrored right eye has
//! the left eye's ordering.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{RegionName, RegionSpec};

/// Points per iris: center, then four extremes.
pub const IRIS_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Layout {
    pub oval: usize,
    pub eye_ring: usize,
    pub lips_outer: usize,
    pub lips_inner: usize,
    pub filler: usize,
    pub iris: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Chain {
    pub name: String,
    pub ids: Vec<usize>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Topology {
    pub name: String,
    pub layout: Layout,
    pub base_count: usize,
    pub iris_count: usize,
    /// Lips, left eye, right eye.
    pub regions: Vec<RegionSpec>,
    /// Contour chains in base-mesh ids.
    pub chains: Vec<Chain>,
    /// Outer corners of the left and right eye.
    pub interocular: [usize; 2],
}

fn ring(start: usize, len: usize) -> Vec<usize> {
    (start..start + len).collect()
}

impl Topology {
    /// 68 base points, 16-point eyes, 20-point lips.
    pub fn desk() -> Topology {
        let layout = Layout { oval: 16, eye_ring: 16, lips_outer: 12, lips_inner: 8, filler: 0, iris: IRIS_POINTS };
        Topology::from_layout("desk", layout).expect("desk layout is valid")
    }

    /// 468 base points, 32-point eyes, 40-point lips.
    pub fn full() -> Topology {
        let layout = Layout { oval: 36, eye_ring: 32, lips_outer: 20, lips_inner: 20, filler: 328, iris: IRIS_POINTS };
        Topology::from_layout("full", layout).expect("full layout is valid")
    }

    pub fn from_layout(name: &str, layout: Layout) -> Result<Topology> {
        let Layout { oval, eye_ring, lips_outer, lips_inner, iris, .. } = layout;
        if oval < 4 {
            return Err(Error::Topology(format!("oval needs at least 4 points, got {oval}")));
        }
        for (what, n) in [("eye_ring", eye_ring), ("lips_outer", lips_outer), ("lips_inner", lips_inner)] {
            if n < 4 || n % 2 != 0 {
                return Err(Error::Topology(format!("{what} must be even and at least 4, got {n}")));
            }
        }
        if iris != IRIS_POINTS {
            return Err(Error::Topology(format!("iris must have {IRIS_POINTS} points, got {iris}")));
        }
        let topo = Topology::from_layout_unchecked(name, layout);
        topo.validate()?;
        Ok(topo)
    }

    /// Structural checks, plus agreement with the lists implied by `layout`.
    pub fn validate(&self) -> Result<()> {
        let n = self.base_count;
        let names: Vec<RegionName> = self.regions.iter().map(|r| r.name).collect();
        if names != RegionName::ALL {
            return Err(Error::Topology(format!("regions must be lips, left_eye, right_eye in order, got {names:?}")));
        }
        let mut owner = alloc::vec![None::<RegionName>; n];
        for r in &self.regions {
            if r.output_count != r.indices.len() {
                return Err(Error::Topology(format!(
                    "region {} outputs {} points but owns {}",
                    r.name.as_str(),
                    r.output_count,
                    r.indices.len()
                )));
            }
            for &i in &r.indices {
                if i >= n {
                    return Err(Error::Topology(format!("region {} id {i} >= base count {n}", r.name.as_str())));
                }
                if let Some(prev) = owner[i] {
                    return Err(Error::Topology(format!(
                        "id {i} claimed by both {} and {}",
                        prev.as_str(),
                        r.name.as_str()
                    )));
                }
                owner[i] = Some(r.name);
            }
            if !r.indices.contains(&r.left_corner) || !r.indices.contains(&r.right_corner) {
                return Err(Error::Topology(format!("region {} corners must be region members", r.name.as_str())));
            }
            if r.left_corner == r.right_corner {
                return Err(Error::Topology(format!("region {} corners coincide", r.name.as_str())));
            }
        }
        for c in &self.chains {
            if c.ids.len() < 2 || c.ids.iter().any(|&i| i >= n) {
                return Err(Error::Topology(format!("chain {} is too short or out of range", c.name)));
            }
        }
        if self.interocular.iter().any(|&i| i >= n) || self.interocular[0] == self.interocular[1] {
            return Err(Error::Topology(String::from("invalid interocular pair")));
        }
        if self.iris_count != self.layout.iris {
            return Err(Error::Topology(format!("iris count {} disagrees with layout", self.iris_count)));
        }
        let expect = Topology::from_layout_unchecked(&self.name, self.layout);
        if expect.base_count != self.base_count
            || expect.regions != self.regions
            || expect.chains != self.chains
            || expect.interocular != self.interocular
        {
            return Err(Error::Topology(String::from("index lists disagree with the layout")));
        }
        Ok(())
    }

    // Same lists as `from_layout` without validating (used by `validate`).
    fn from_layout_unchecked(name: &str, layout: Layout) -> Topology {
        let Layout { oval, eye_ring, lips_outer, lips_inner, filler, iris } = layout;
        let le = oval;
        let re = le + eye_ring;
        let lo = re + eye_ring;
        let li = lo + lips_outer;
        let mut lips: Vec<usize> = ring(lo, lips_outer);
        lips.extend(ring(li, lips_inner));
        let chain = |name: &str, ids| Chain { name: String::from(name), ids, closed: true };
        Topology {
            name: String::from(name),
            layout,
            base_count: li + lips_inner + filler,
            iris_count: iris,
            regions: alloc::vec![
                RegionSpec {
                    name: RegionName::Lips,
                    output_count: lips.len(),
                    indices: lips,
                    left_corner: lo,
                    right_corner: lo + lips_outer / 2,
                },
                RegionSpec {
                    name: RegionName::LeftEye,
                    indices: ring(le, eye_ring),
                    left_corner: le,
                    right_corner: le + eye_ring / 2,
                    output_count: eye_ring,
                },
                RegionSpec {
                    name: RegionName::RightEye,
                    indices: ring(re, eye_ring),
                    left_corner: re + eye_ring / 2,
                    right_corner: re,
                    output_count: eye_ring,
                },
            ],
            chains: alloc::vec![
                chain("oval", ring(0, oval)),
                chain("left_eye", ring(le, eye_ring)),
                chain("right_eye", ring(re, eye_ring)),
                chain("lips_outer", ring(lo, lips_outer)),
                chain("lips_inner", ring(li, lips_inner)),
            ],
            interocular: [le, re],
        }
    }

    /// Base points plus both irises.
    pub fn unified_count(&self) -> usize {
        self.base_count + 2 * self.iris_count
    }

    pub fn region(&self, name: RegionName) -> &RegionSpec {
        &self.regions[RegionName::ALL.iter().position(|&r| r == name).unwrap_or(0)]
    }

    /// Unified-mesh ids of an eye's iris.
    pub fn iris_ids(&self, eye: RegionName) -> Vec<usize> {
        let start = match eye {
            RegionName::RightEye => self.base_count + self.iris_count,
            _ => self.base_count,
        };
        (start..start + self.iris_count).collect()
    }

    /// Chains lying entirely inside a region, in region-local positions.
    pub fn region_chains(&self, name: RegionName) -> Vec<Chain> {
        let spec = self.region(name);
        self.chains
            .iter()
            .filter_map(|c| {
                let ids: Option<Vec<usize>> =
                    c.ids.iter().map(|id| spec.indices.iter().position(|x| x == id)).collect();
                ids.map(|ids| Chain { name: c.name.clone(), ids, closed: c.closed })
            })
            .collect()
    }

    /// Ids of both eye regions.
    pub fn eye_ids(&self) -> Vec<usize> {
        let mut v = self.region(RegionName::LeftEye).indices.clone();
        v.extend_from_slice(&self.region(RegionName::RightEye).indices);
        v
    }

    pub fn oval_ids(&self) -> Vec<usize> {
        ring(0, self.layout.oval)
    }
}
