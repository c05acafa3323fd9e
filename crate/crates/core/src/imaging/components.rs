use serde::{Deserialize, Serialize};

use super::{BinaryMask, Grid, InstanceLabeling};

/// Pixel adjacency used for component analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            4 => Some(Connectivity::Four),
            8 => Some(Connectivity::Eight),
            _ => None,
        }
    }

    /// Neighbour offsets already visited in a raster scan.
    fn backward_offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, 0), (-1, -1), (0, -1), (1, -1)],
        }
    }
}

struct DisjointSets {
    parent: Vec<u32>,
}

impl DisjointSets {
    fn new() -> Self {
        Self { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling. Labels are assigned `1..=K` in the order
/// each component is first met in a row-major scan.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> InstanceLabeling {
    let (w, h) = mask.dims();
    const NONE: u32 = u32::MAX;
    let mut provisional = vec![NONE; w * h];
    let mut sets = DisjointSets::new();

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut current = NONE;
            for &(dx, dy) in connectivity.backward_offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize {
                    continue;
                }
                let n = provisional[ny as usize * w + nx as usize];
                if n == NONE {
                    continue;
                }
                if current == NONE {
                    current = n;
                } else {
                    sets.union(current, n);
                }
            }
            if current == NONE {
                current = sets.make();
            }
            provisional[y * w + x] = current;
        }
    }

    let mut final_label = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let labels = provisional
        .iter()
        .map(|&p| {
            if p == NONE {
                return 0;
            }
            let root = sets.find(p) as usize;
            if final_label[root] == 0 {
                next += 1;
                final_label[root] = next;
            }
            final_label[root]
        })
        .collect();
    InstanceLabeling::from_parts(Grid::from_vec(w, h, labels).expect("dims"), next)
}

/// Zeroes components with fewer than `min_size` pixels and renumbers the
/// survivors contiguously, keeping their relative order.
pub fn filter_small_components(lab: &InstanceLabeling, min_size: usize) -> InstanceLabeling {
    let sizes = lab.sizes();
    let mut remap = vec![0u32; sizes.len()];
    let mut next = 0;
    for (label, &size) in sizes.iter().enumerate().skip(1) {
        if size >= min_size {
            next += 1;
            remap[label] = next;
        }
    }
    let labels = lab.labels().map(|&l| remap[l as usize]);
    InstanceLabeling::from_parts(labels, next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_has_no_components() {
        let lab = connected_components(&BinaryMask::empty(5, 4), Connectivity::Eight);
        assert_eq!(lab.count(), 0);
        assert!(lab.labels().as_slice().iter().all(|&l| l == 0));
    }

    #[test]
    fn diagonal_pair_depends_on_connectivity() {
        let mut m = BinaryMask::empty(4, 4);
        m.set(1, 1, true);
        m.set(2, 2, true);
        assert_eq!(connected_components(&m, Connectivity::Eight).count(), 1);
        assert_eq!(connected_components(&m, Connectivity::Four).count(), 2);
    }

    #[test]
    fn u_shape_merges_into_one_label() {
        // Two arms joined only at the bottom row; exercises label equivalence.
        let m = BinaryMask::from_fn(5, 4, |x, y| x == 0 || x == 4 || y == 3);
        let lab = connected_components(&m, Connectivity::Four);
        assert_eq!(lab.count(), 1);
    }

    #[test]
    fn labels_follow_first_encounter_order() {
        let mut m = BinaryMask::empty(6, 3);
        m.set(4, 0, true);
        m.set(0, 2, true);
        m.set(1, 2, true);
        let lab = connected_components(&m, Connectivity::Eight);
        assert_eq!(*lab.labels().get(4, 0), 1);
        assert_eq!(*lab.labels().get(0, 2), 2);
    }

    #[test]
    fn filter_keeps_seven_drops_three() {
        let mut m = BinaryMask::empty(12, 4);
        for x in 0..3 {
            m.set(x, 0, true);
        }
        for x in 5..12 {
            m.set(x, 2, true);
        }
        let lab = connected_components(&m, Connectivity::Eight);
        assert_eq!(lab.sizes()[1..], [3, 7]);
        let f = filter_small_components(&lab, 5);
        assert_eq!(f.count(), 1);
        assert_eq!(*f.labels().get(6, 2), 1);
        assert_eq!(*f.labels().get(0, 0), 0);
    }

    #[test]
    fn filter_min_one_is_identity() {
        let m = BinaryMask::from_fn(7, 7, |x, y| (x * 3 + y * 5) % 4 == 0);
        let lab = connected_components(&m, Connectivity::Four);
        assert_eq!(filter_small_components(&lab, 1), lab);
    }
}
